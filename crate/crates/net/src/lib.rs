//! Networked federation: wire format, sealed peer channels, transports, the
//! client node, the coordinator service and its HTTP API.

pub mod cache;
pub mod client;
pub mod config;
pub mod coordinator;
pub mod frame;
pub mod http;
pub mod message;
pub mod operator;
pub mod progress;
pub mod seal;
pub mod sim;
pub mod transport;

use fedvis_core::compose::ComposeError;
use fedvis_core::model::ModelError;
use fedvis_core::pipeline::PipelineError;
use fedvis_core::secagg::SecAggError;

pub use client::ClientNode;
pub use config::Config;
pub use coordinator::{ClientInfo, Coordinator, CoordinatorOptions};
pub use frame::{frame, unframe, Envelope, FrameError};
pub use message::{ErrorKind, Message, MsgTag, QueryRequest, QueryResult};
pub use progress::{ProgressEvent, ProgressHub};
pub use sim::SimFleet;
pub use transport::Link;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Decode(#[from] message::DecodeError),
    #[error(transparent)]
    Seal(#[from] seal::SealError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("too few clients: {got} connected, at least {min} required")]
    TooFewClients { got: usize, min: usize },
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("unknown peer {0}")]
    UnknownPeer(u16),
    #[error("connection closed")]
    Disconnected,
    #[error("config: {0}")]
    Config(String),
    /// Error reported by the coordinator to an operator.
    #[error("{1}")]
    Remote(ErrorKind, String),
}

impl NetError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            NetError::TooFewClients { .. }
            | NetError::SecAgg(SecAggError::TooFewClients { .. }) => ErrorKind::TooFewClients,
            NetError::Aborted(_) | NetError::UnknownPeer(_) | NetError::Disconnected => {
                ErrorKind::Aborted
            }
            NetError::Invalid(_)
            | NetError::Pipeline(_)
            | NetError::Compose(_)
            | NetError::Model(ModelError::InvalidConfig(_)) => ErrorKind::Invalid,
            NetError::Remote(k, _) => *k,
            _ => ErrorKind::Internal,
        }
    }
}
