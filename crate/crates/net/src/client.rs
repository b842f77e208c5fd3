//! Client node: holds raw records, computes feature vectors locally, and takes
//! part in secure aggregation and federated training. Raw records never leave
//! this module.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use fedvis_core::compose::Scheme;
use fedvis_core::model::{
    client_round_seed, derive_seed, local_max, local_train, ModelConfig, ModelParams, TrainConfig,
};
use fedvis_core::pipeline::{aggregate, apply_scope, DataRecord, FeatureVector};
use fedvis_core::secagg::{
    encode_fixed, encode_values, expand_mask, masked_upload, ClientId, PairwiseMask, RingVector,
    SessionId, COUNT_SCALE, PARAM_SCALE,
};
use rand::RngCore;
use tokio::time::{interval, timeout, MissedTickBehavior};

use crate::frame::{Envelope, COORDINATOR, OPERATOR};
use crate::message::{
    Abort, Hello, MaskExchange, MaskMode, MaskedUploadMsg, Message, ParamsBroadcast, ParamsUpload,
    SessionStart,
};
use crate::seal::{Channel, KeyPair, SealError};
use crate::transport::Link;
use crate::NetError;

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

/// Per-client base training seed. Matches the in-memory trainer's seeds for
/// clients numbered from 1.
pub fn client_seed(seed: u64, id: u16) -> u64 {
    derive_seed(seed, id.saturating_sub(1) as u64, 0x636c_6965_6e74)
}

pub struct ClientNode {
    id: u16,
    records: Arc<Vec<DataRecord>>,
    keys: KeyPair,
}

#[derive(Default)]
struct RoundState {
    plain: Option<RingVector>,
    loss: Option<f64>,
    sent: Vec<PairwiseMask>,
    received: BTreeMap<u16, PairwiseMask>,
    uploaded: bool,
}

struct ClientSession {
    start: SessionStart,
    data: FeatureVector,
    peers: Vec<u16>,
    channels: HashMap<u16, Channel>,
    rounds: BTreeMap<u32, RoundState>,
}

impl ClientNode {
    pub fn new(id: u16, records: Vec<DataRecord>) -> Result<Self, NetError> {
        if id == COORDINATOR || id == OPERATOR {
            return Err(NetError::Invalid(format!("client id {id} is reserved")));
        }
        Ok(Self {
            id,
            records: Arc::new(records),
            keys: KeyPair::generate(),
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    /// Connects through `link` and serves sessions until the coordinator
    /// closes the connection.
    pub async fn run(self, mut link: Link) -> Result<(), NetError> {
        let hello = Message::Hello(Hello {
            client: self.id,
            records: self.records.len() as u64,
            public_key: self.keys.public_bytes(),
        });
        self.send(&link, &hello, SessionId::default(), COORDINATOR)
            .await?;
        let welcome = match timeout(HANDSHAKE_TIMEOUT, link.rx.recv()).await {
            Ok(Some(env)) => Message::decode(&env)?,
            Ok(None) => {
                return Err(NetError::Handshake(
                    "connection closed during handshake".into(),
                ))
            }
            Err(_) => return Err(NetError::Handshake("no welcome from coordinator".into())),
        };
        let heartbeat_ms = match welcome {
            Message::Welcome(w) => w.heartbeat_ms.max(10),
            Message::Abort(a) => return Err(NetError::Handshake(a.reason)),
            other => return Err(NetError::Handshake(format!("unexpected {:?}", other.tag()))),
        };
        tracing::info!(client = self.id, records = self.records.len(), "joined");

        let mut beat = interval(Duration::from_millis(heartbeat_ms));
        beat.set_missed_tick_behavior(MissedTickBehavior::Delay);
        let mut sessions: HashMap<SessionId, ClientSession> = HashMap::new();
        loop {
            tokio::select! {
                env = link.rx.recv() => {
                    let Some(env) = env else { break };
                    let session = env.session;
                    if let Err(e) = self.handle(&link, &mut sessions, env).await {
                        tracing::warn!(client = self.id, %session, error = %e, "session failed");
                        sessions.remove(&session);
                        let abort = Message::Abort(Abort { reason: e.to_string() });
                        self.send(&link, &abort, session, COORDINATOR).await?;
                    }
                }
                _ = beat.tick() => {
                    self.send(&link, &Message::Heartbeat, SessionId::default(), COORDINATOR).await?;
                }
            }
        }
        tracing::info!(client = self.id, "coordinator closed the connection");
        Ok(())
    }

    async fn send(
        &self,
        link: &Link,
        msg: &Message,
        session: SessionId,
        to: u16,
    ) -> Result<(), NetError> {
        link.tx
            .send(msg.envelope(session, self.id, to))
            .await
            .map_err(|_| NetError::Disconnected)
    }

    async fn handle(
        &self,
        link: &Link,
        sessions: &mut HashMap<SessionId, ClientSession>,
        env: Envelope,
    ) -> Result<(), NetError> {
        let sid = env.session;
        match Message::decode(&env)? {
            Message::SessionStart(start) => {
                let s = self.open_session(sid, start)?;
                let first = match s.start.scheme {
                    Scheme::QueryBased => encode_fixed(&s.data, COUNT_SCALE)?,
                    Scheme::PredictionBased => encode_values(&[local_max(&s.data)], PARAM_SCALE)?,
                };
                sessions.insert(sid, s);
                let s = sessions.get_mut(&sid).expect("inserted");
                self.begin_round(link, sid, s, 0, first, None).await?;
            }
            Message::MaskExchange(m) => {
                let Some(s) = sessions.get_mut(&sid) else {
                    return Ok(());
                };
                let from = env.sender;
                let ch = s.channels.get(&from).ok_or(SealError::UnknownPeer(from))?;
                let plain = ch.open(m.round, from, self.id, &m.sealed)?;
                let len = s
                    .rounds
                    .get(&m.round)
                    .and_then(|r| r.plain.as_ref())
                    .map(|p| p.len());
                let mask = self.decode_mask(s, m.round, from, &plain, len)?;
                s.rounds
                    .entry(m.round)
                    .or_default()
                    .received
                    .insert(from, mask);
                self.try_upload(link, sid, s, m.round).await?;
            }
            Message::ParamsBroadcast(b) => {
                let Some(s) = sessions.get_mut(&sid) else {
                    return Ok(());
                };
                let (plain, loss) = self.train_round(s, b).await?;
                let round = plain.0;
                self.begin_round(link, sid, s, round, plain.1, Some(loss))
                    .await?;
            }
            Message::RoundReport(r) => {
                tracing::debug!(
                    client = self.id,
                    round = r.round,
                    global_loss = r.global_loss,
                    "round done"
                );
            }
            Message::SessionEnd => {
                sessions.remove(&sid);
            }
            Message::Abort(a) => {
                tracing::warn!(client = self.id, session = %sid, reason = %a.reason, "session aborted");
                sessions.remove(&sid);
            }
            other => tracing::debug!(client = self.id, tag = ?other.tag(), "ignored"),
        }
        Ok(())
    }

    fn open_session(&self, sid: SessionId, start: SessionStart) -> Result<ClientSession, NetError> {
        start.partition.validate()?;
        if start.partition.len() != start.bins {
            return Err(NetError::Invalid(format!(
                "partition has {} bins, session expects {}",
                start.partition.len(),
                start.bins
            )));
        }
        if !start.participants.iter().any(|p| p.id == self.id) {
            return Err(NetError::Invalid("not a participant".into()));
        }
        let scoped = apply_scope(&self.records, &start.scope);
        let data = aggregate(&scoped, &start.partition);
        if data.len() != start.bins {
            return Err(NetError::Invalid(format!(
                "feature vector has {} bins, session expects {}",
                data.len(),
                start.bins
            )));
        }
        let mut channels = HashMap::new();
        let mut peers = Vec::new();
        for p in start.participants.iter().filter(|p| p.id != self.id) {
            channels.insert(p.id, self.keys.channel(p.public_key, sid, self.id, p.id));
            peers.push(p.id);
        }
        Ok(ClientSession {
            start,
            data,
            peers,
            channels,
            rounds: BTreeMap::new(),
        })
    }

    fn decode_mask(
        &self,
        s: &ClientSession,
        round: u32,
        from: u16,
        plain: &[u8],
        len: Option<usize>,
    ) -> Result<PairwiseMask, NetError> {
        let scale = round_scale(s);
        let bad = || NetError::Invalid(format!("malformed mask from client {from}"));
        let (&kind, body) = plain.split_first().ok_or_else(bad)?;
        let (seed, r) = match kind {
            0 => {
                let seed: [u8; 32] = body.try_into().map_err(|_| bad())?;
                let len = len.unwrap_or_else(|| round_len(s, round));
                (seed, expand_mask(seed, len, scale))
            }
            1 => (
                [0; 32],
                RingVector::from_le_bytes(body, scale).ok_or_else(bad)?,
            ),
            _ => return Err(bad()),
        };
        Ok(PairwiseMask {
            from: ClientId(from),
            to: ClientId(self.id),
            seed,
            r,
        })
    }

    async fn train_round(
        &self,
        s: &ClientSession,
        b: ParamsBroadcast,
    ) -> Result<((u32, RingVector), f64), NetError> {
        let train = s.start.train.clone().ok_or_else(|| {
            NetError::Invalid("params broadcast outside a prediction session".into())
        })?;
        let mcfg = ModelConfig::new(s.start.bins).with_label_scale(b.label_scale);
        let mut template = ModelParams::zeros(&mcfg);
        template.label_scale = b.label_scale;
        let global = template.with_flat(&b.params)?;
        let cfg = TrainConfig {
            seed: client_round_seed(client_seed(train.seed, self.id), b.round),
            ..train
        };
        let data = s.data.clone();
        let (trained, loss) =
            tokio::task::spawn_blocking(move || local_train(&global, &data, &cfg))
                .await
                .map_err(|e| NetError::Invalid(format!("training task failed: {e}")))??;
        Ok((
            (b.round, encode_values(&trained.flatten(), PARAM_SCALE)?),
            loss,
        ))
    }

    /// Samples fresh masks for `round`, sends them sealed, and uploads once
    /// every peer's mask has arrived.
    async fn begin_round(
        &self,
        link: &Link,
        sid: SessionId,
        s: &mut ClientSession,
        round: u32,
        plain: RingVector,
        loss: Option<f64>,
    ) -> Result<(), NetError> {
        let seeds: Vec<[u8; 32]> = {
            let mut rng = rand::rng();
            s.peers
                .iter()
                .map(|_| {
                    let mut seed = [0u8; 32];
                    rng.fill_bytes(&mut seed);
                    seed
                })
                .collect()
        };
        let mut sent = Vec::with_capacity(s.peers.len());
        for (&peer, seed) in s.peers.iter().zip(seeds) {
            let r = expand_mask(seed, plain.len(), plain.scale);
            let mut body = Vec::with_capacity(1 + 8 * plain.len());
            match s.start.mask_mode {
                MaskMode::Seed => {
                    body.push(0);
                    body.extend_from_slice(&seed);
                }
                MaskMode::Vector => {
                    body.push(1);
                    body.extend_from_slice(&r.to_le_bytes());
                }
            }
            let sealed = s.channels[&peer].seal(round, self.id, peer, &body);
            let msg = Message::MaskExchange(MaskExchange { round, sealed });
            self.send(link, &msg, sid, peer).await?;
            sent.push(PairwiseMask {
                from: ClientId(self.id),
                to: ClientId(peer),
                seed,
                r,
            });
        }
        let st = s.rounds.entry(round).or_default();
        st.plain = Some(plain);
        st.loss = loss;
        st.sent = sent;
        self.try_upload(link, sid, s, round).await
    }

    async fn try_upload(
        &self,
        link: &Link,
        sid: SessionId,
        s: &mut ClientSession,
        round: u32,
    ) -> Result<(), NetError> {
        let peers = s.peers.len();
        let Some(st) = s.rounds.get_mut(&round) else {
            return Ok(());
        };
        let Some(plain) = &st.plain else {
            return Ok(());
        };
        if st.uploaded || st.received.len() < peers {
            return Ok(());
        }
        let received: Vec<PairwiseMask> = st.received.values().cloned().collect();
        let up = masked_upload(ClientId(self.id), sid, plain, &st.sent, &received)?;
        let msg = match st.loss {
            Some(loss) => Message::ParamsUpload(ParamsUpload {
                round,
                loss,
                masked: up.payload,
            }),
            None => Message::MaskedUpload(MaskedUploadMsg {
                round,
                payload: up.payload,
            }),
        };
        st.uploaded = true;
        // Masks for this round are spent.
        st.sent.clear();
        st.received.clear();
        self.send(link, &msg, sid, COORDINATOR).await
    }
}

fn round_scale(s: &ClientSession) -> u64 {
    match s.start.scheme {
        Scheme::QueryBased => COUNT_SCALE,
        Scheme::PredictionBased => PARAM_SCALE,
    }
}

/// Vector length of a round before this client has produced its own
/// plaintext for it.
fn round_len(s: &ClientSession, round: u32) -> usize {
    match (s.start.scheme, round) {
        (Scheme::QueryBased, _) => s.start.bins,
        (Scheme::PredictionBased, 0) => 1,
        (Scheme::PredictionBased, _) => {
            ModelParams::zeros(&ModelConfig::new(s.start.bins)).num_params()
        }
    }
}
