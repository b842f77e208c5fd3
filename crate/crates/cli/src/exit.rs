//! Process exit codes and the error type that carries them.

use fedvis_net::{ErrorKind, NetError};

pub const OTHER: i32 = 1;
pub const USAGE: i32 = 2;
pub const CONFIG: i32 = 3;
pub const BIND: i32 = 4;
pub const HANDSHAKE: i32 = 5;
pub const TOO_FEW: i32 = 6;
pub const ABORTED: i32 = 7;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self::new(OTHER, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        let code = match &e {
            NetError::Config(_) => CONFIG,
            NetError::Handshake(_) => HANDSHAKE,
            NetError::Disconnected => ABORTED,
            _ => match e.kind() {
                ErrorKind::Invalid => USAGE,
                ErrorKind::TooFewClients => TOO_FEW,
                ErrorKind::Aborted => ABORTED,
                ErrorKind::Internal => OTHER,
            },
        };
        Self::new(code, e.to_string())
    }
}
