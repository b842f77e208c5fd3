//! Protocol messages and their payload encoding.
//!
//! Each message travels as one [`Envelope`] whose tag names the variant and
//! whose payload is the JSON encoding of the variant's body. Byte blobs
//! (public keys, sealed masks) are hex strings inside the JSON.

use fedvis_core::compose::{ChartData, ChartSpec, Scheme};
use fedvis_core::model::{AccuracyPreset, RoundReport, TrainConfig};
use fedvis_core::pipeline::{PartitionSpec, ScopeFilter};
use fedvis_core::secagg::{RingVector, SessionId};
use serde::{Deserialize, Serialize};

use crate::frame::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgTag {
    Hello = 1,
    Welcome = 2,
    SessionStart = 3,
    MaskExchange = 4,
    MaskedUpload = 5,
    ParamsBroadcast = 6,
    ParamsUpload = 7,
    RoundReport = 8,
    ChartRequest = 9,
    ChartReply = 10,
    Abort = 11,
    SessionEnd = 12,
    Heartbeat = 13,
}

impl MsgTag {
    pub const ALL: [MsgTag; 13] = [
        MsgTag::Hello,
        MsgTag::Welcome,
        MsgTag::SessionStart,
        MsgTag::MaskExchange,
        MsgTag::MaskedUpload,
        MsgTag::ParamsBroadcast,
        MsgTag::ParamsUpload,
        MsgTag::RoundReport,
        MsgTag::ChartRequest,
        MsgTag::ChartReply,
        MsgTag::Abort,
        MsgTag::SessionEnd,
        MsgTag::Heartbeat,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: AsRef<[u8]>>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: TryFrom<Vec<u8>>>(
        d: D,
    ) -> Result<T, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        T::try_from(bytes).map_err(|_| serde::de::Error::custom("wrong byte length"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub client: u16,
    /// Number of records the client holds. Shown in the roster.
    pub records: u64,
    #[serde(with = "hex_bytes")]
    pub public_key: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub heartbeat_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: u16,
    #[serde(with = "hex_bytes")]
    pub public_key: [u8; 32],
}

/// How pairwise masks travel between peers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// The whole random vector is sealed and sent.
    #[default]
    Vector,
    /// Only the 32-byte expansion seed is sent; peers expand it locally.
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStart {
    pub scheme: Scheme,
    pub partition: PartitionSpec,
    pub scope: ScopeFilter,
    /// Expected feature vector length; clients abort on disagreement.
    pub bins: usize,
    pub participants: Vec<Participant>,
    pub mask_mode: MaskMode,
    /// Prediction scheme only.
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskExchange {
    pub round: u32,
    #[serde(with = "hex_bytes")]
    pub sealed: Vec<u8>,
}

/// Masked feature vector for the query scheme, or the masked label maximum
/// (round 0) of the prediction scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedUploadMsg {
    pub round: u32,
    pub payload: RingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsBroadcast {
    pub round: u32,
    pub label_scale: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsUpload {
    pub round: u32,
    /// Local training loss in label units.
    pub loss: f64,
    pub masked: RingVector,
}

/// A visualization query as submitted by an analyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub chart: ChartSpec,
    #[serde(default)]
    pub scope: ScopeFilter,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub preset: AccuracyPreset,
    /// Overrides the preset's training parameters.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Caller-chosen session id (hex) so progress can be watched while the
    /// query runs.
    #[serde(default)]
    pub session: Option<String>,
}

impl QueryRequest {
    pub fn new(chart: ChartSpec, scheme: Scheme) -> Self {
        Self {
            chart,
            scope: ScopeFilter::default(),
            scheme,
            preset: AccuracyPreset::default(),
            train: None,
            seed: 0,
            session: None,
        }
    }

    /// Training configuration in effect for the prediction scheme.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self
            .train
            .clone()
            .unwrap_or_else(|| TrainConfig::preset(self.preset));
        t.seed = self.seed;
        t
    }
}

/// Wall-clock phases of one session as observed by the coordinator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Session start until the first relayed mask: local stages and mask generation.
    pub local_ms: f64,
    /// Relaying all sealed masks.
    pub exchange_ms: f64,
    /// Masked uploads and decoding of the sum.
    pub aggregate_ms: f64,
    /// Federated training rounds, prediction scheme only.
    pub train_ms: f64,
    /// Composition into chart data.
    pub compose_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub session: String,
    pub scheme: Scheme,
    pub exact: bool,
    pub participants: Vec<u16>,
    pub chart: ChartData,
    #[serde(default)]
    pub rounds: Vec<RoundReport>,
    pub timings: Timings,
    /// Served from the model cache without retraining.
    #[serde(default)]
    pub cached: bool,
}

/// Error classes reported back to operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Invalid,
    TooFewClients,
    Aborted,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartReply {
    #[serde(default)]
    pub result: Option<QueryResult>,
    #[serde(default)]
    pub error: Option<(ErrorKind, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    Welcome(Welcome),
    SessionStart(SessionStart),
    MaskExchange(MaskExchange),
    MaskedUpload(MaskedUploadMsg),
    ParamsBroadcast(ParamsBroadcast),
    ParamsUpload(ParamsUpload),
    RoundReport(RoundReport),
    ChartRequest(QueryRequest),
    ChartReply(ChartReply),
    Abort(Abort),
    SessionEnd,
    Heartbeat,
}

#[derive(Debug, thiserror::Error)]
#[error("malformed {tag:?} payload: {source}")]
pub struct DecodeError {
    pub tag: MsgTag,
    #[source]
    pub source: serde_json::Error,
}

impl Message {
    pub fn tag(&self) -> MsgTag {
        match self {
            Message::Hello(_) => MsgTag::Hello,
            Message::Welcome(_) => MsgTag::Welcome,
            Message::SessionStart(_) => MsgTag::SessionStart,
            Message::MaskExchange(_) => MsgTag::MaskExchange,
            Message::MaskedUpload(_) => MsgTag::MaskedUpload,
            Message::ParamsBroadcast(_) => MsgTag::ParamsBroadcast,
            Message::ParamsUpload(_) => MsgTag::ParamsUpload,
            Message::RoundReport(_) => MsgTag::RoundReport,
            Message::ChartRequest(_) => MsgTag::ChartRequest,
            Message::ChartReply(_) => MsgTag::ChartReply,
            Message::Abort(_) => MsgTag::Abort,
            Message::SessionEnd => MsgTag::SessionEnd,
            Message::Heartbeat => MsgTag::Heartbeat,
        }
    }

    /// Round number carried by round-scoped messages.
    pub fn round(&self) -> Option<u32> {
        match self {
            Message::MaskExchange(m) => Some(m.round),
            Message::MaskedUpload(m) => Some(m.round),
            Message::ParamsBroadcast(m) => Some(m.round),
            Message::ParamsUpload(m) => Some(m.round),
            Message::RoundReport(r) => Some(r.round),
            _ => None,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let r = match self {
            Message::Hello(m) => serde_json::to_vec(m),
            Message::Welcome(m) => serde_json::to_vec(m),
            Message::SessionStart(m) => serde_json::to_vec(m),
            Message::MaskExchange(m) => serde_json::to_vec(m),
            Message::MaskedUpload(m) => serde_json::to_vec(m),
            Message::ParamsBroadcast(m) => serde_json::to_vec(m),
            Message::ParamsUpload(m) => serde_json::to_vec(m),
            Message::RoundReport(m) => serde_json::to_vec(m),
            Message::ChartRequest(m) => serde_json::to_vec(m),
            Message::ChartReply(m) => serde_json::to_vec(m),
            Message::Abort(m) => serde_json::to_vec(m),
            Message::SessionEnd | Message::Heartbeat => return Vec::new(),
        };
        r.expect("message types serialize")
    }

    pub fn envelope(&self, session: SessionId, sender: u16, recipient: u16) -> Envelope {
        Envelope {
            tag: self.tag(),
            session,
            sender,
            recipient,
            payload: self.payload(),
        }
    }

    pub fn decode(env: &Envelope) -> Result<Message, DecodeError> {
        fn de<T: serde::de::DeserializeOwned>(env: &Envelope) -> Result<T, DecodeError> {
            serde_json::from_slice(&env.payload).map_err(|source| DecodeError {
                tag: env.tag,
                source,
            })
        }
        Ok(match env.tag {
            MsgTag::Hello => Message::Hello(de(env)?),
            MsgTag::Welcome => Message::Welcome(de(env)?),
            MsgTag::SessionStart => Message::SessionStart(de(env)?),
            MsgTag::MaskExchange => Message::MaskExchange(de(env)?),
            MsgTag::MaskedUpload => Message::MaskedUpload(de(env)?),
            MsgTag::ParamsBroadcast => Message::ParamsBroadcast(de(env)?),
            MsgTag::ParamsUpload => Message::ParamsUpload(de(env)?),
            MsgTag::RoundReport => Message::RoundReport(de(env)?),
            MsgTag::ChartRequest => Message::ChartRequest(de(env)?),
            MsgTag::ChartReply => Message::ChartReply(de(env)?),
            MsgTag::Abort => Message::Abort(de(env)?),
            MsgTag::SessionEnd => Message::SessionEnd,
            MsgTag::Heartbeat => Message::Heartbeat,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedvis_core::compose::ChartKind;

    #[test]
    fn tags_round_trip_through_u8() {
        for t in MsgTag::ALL {
            assert_eq!(MsgTag::from_u8(t as u8), Some(t));
        }
        assert_eq!(MsgTag::from_u8(0), None);
        assert_eq!(MsgTag::from_u8(14), None);
    }

    #[test]
    fn messages_round_trip() {
        let spec = ChartSpec::new(ChartKind::Histogram, PartitionSpec::time(0, 700, 7));
        let msgs = vec![
            Message::Hello(Hello {
                client: 3,
                records: 99,
                public_key: [7; 32],
            }),
            Message::MaskExchange(MaskExchange {
                round: 2,
                sealed: vec![1, 2, 255],
            }),
            Message::MaskedUpload(MaskedUploadMsg {
                round: 0,
                payload: RingVector {
                    elems: vec![u64::MAX, 0, 5],
                    scale: 1,
                },
            }),
            Message::ParamsBroadcast(ParamsBroadcast {
                round: 4,
                label_scale: 12.5,
                params: vec![0.1, -1e-9, 3.0],
            }),
            Message::ChartRequest(QueryRequest::new(spec, Scheme::QueryBased)),
            Message::Abort(Abort { reason: "x".into() }),
            Message::SessionEnd,
            Message::Heartbeat,
        ];
        for m in msgs {
            let env = m.envelope(SessionId([1; 16]), 2, 0);
            let back = Message::decode(&crate::frame::unframe(&crate::frame::frame(&env)).unwrap())
                .unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn garbage_payload_is_a_decode_error() {
        let env = Envelope {
            tag: MsgTag::Hello,
            session: SessionId::default(),
            sender: 1,
            recipient: 0,
            payload: b"{not json".to_vec(),
        };
        assert!(Message::decode(&env).is_err());
    }
}
