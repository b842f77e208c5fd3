//! Query-based scheme: exact secure summation with pairwise additive masks.
//!
//! Each client `i` samples a random vector `R_{i,j}` for every peer `j`,
//! exchanges them over sealed peer channels, and uploads
//! `VF_i + Σ_j (R_{i,j} − R_{j,i})`. Over Z_{2^64} the perturbations cancel
//! pairwise, so the coordinator's sum of uploads equals the sum of the
//! encoded feature vectors exactly while each single upload is uniformly
//! distributed.

mod mask;
mod ring;
mod session;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use mask::{
    aggregate_uploads, expand_mask, masked_upload, sample_masks, MaskedUpload, PairwiseMask,
};
pub use ring::{decode_fixed, encode_fixed, encode_values, RingVector, COUNT_SCALE, PARAM_SCALE};
pub use session::{AggSession, ClientPhase, MIN_CLIENTS};

/// Client node id. `0` is reserved for the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId(pub u16);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client#{}", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SecAggError {
    #[error("value {value} at index {index} exceeds the fixed-point range")]
    OverflowRisk { index: usize, value: f64 },
    #[error("fixed-point scale must be positive")]
    InvalidScale,
    #[error("peer set mismatch: {0}")]
    PeerSetMismatch(String),
    #[error("session incomplete, missing uploads from {missing:?}")]
    IncompleteSession { missing: Vec<ClientId> },
    #[error("too few clients: {got} connected, need at least {min}")]
    TooFewClients { got: usize, min: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fixed-point scales differ between uploads")]
    ScaleMismatch,
    #[error("{0} is not a session participant")]
    UnknownClient(ClientId),
    #[error("duplicate upload from {0}")]
    DuplicateUpload(ClientId),
    #[error("{0} listed among its own peers")]
    SelfInPeers(ClientId),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}
