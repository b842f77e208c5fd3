//! Coordinator: keeps the client roster, relays sealed masks between clients
//! without opening them, sums masked uploads, and drives federated training.
//!
//! The coordinator never receives raw records or any single client's
//! feature vector or model parameters in the clear.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use fedvis_core::compose::{compose_prediction, compose_query, ChartData, Scheme};
use fedvis_core::model::{
    init_global, predict_all, Convergence, ModelConfig, ModelParams, RoundReport, TrainConfig,
};
use fedvis_core::secagg::{
    decode_fixed, AggSession, ClientId, MaskedUpload, RingVector, SessionId, COUNT_SCALE,
    MIN_CLIENTS, PARAM_SCALE,
};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::timeout;

use crate::cache::{cache_key, CachedModel, ModelCache};
use crate::client::HANDSHAKE_TIMEOUT;
use crate::frame::{Envelope, COORDINATOR, OPERATOR};
use crate::message::{
    Abort, ChartReply, Hello, MaskMode, Message, MsgTag, ParamsBroadcast, Participant,
    QueryRequest, QueryResult, SessionStart, Timings, Welcome,
};
use crate::progress::{ProgressEvent, ProgressHub};
use crate::transport::{tcp_link, Link};
use crate::NetError;

#[derive(Debug, Clone)]
pub struct CoordinatorOptions {
    pub heartbeat_ms: u64,
    /// Longest wait for any single expected message within a session.
    pub session_timeout: Duration,
    pub cache_dir: Option<PathBuf>,
    pub query_mask_mode: MaskMode,
    pub prediction_mask_mode: MaskMode,
}

impl Default for CoordinatorOptions {
    fn default() -> Self {
        Self {
            heartbeat_ms: 1000,
            session_timeout: Duration::from_secs(120),
            cache_dir: None,
            query_mask_mode: MaskMode::Vector,
            prediction_mask_mode: MaskMode::Seed,
        }
    }
}

/// Roster entry as exposed to the UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub id: u16,
    pub records: u64,
    /// Milliseconds since the client was last heard from.
    pub last_seen_ms: u64,
}

struct Peer {
    records: u64,
    public_key: [u8; 32],
    tx: mpsc::Sender<Envelope>,
    last_seen: Instant,
    conn: u64,
}

enum SessionEvent {
    Msg(Envelope),
    Gone(u16),
}

struct Inner {
    opts: CoordinatorOptions,
    roster: Mutex<BTreeMap<u16, Peer>>,
    sessions: Mutex<HashMap<SessionId, mpsc::UnboundedSender<SessionEvent>>>,
    progress: ProgressHub,
    cache: ModelCache,
    tap: Mutex<Option<mpsc::UnboundedSender<Envelope>>>,
    next_conn: AtomicU64,
}

#[derive(Clone)]
pub struct Coordinator {
    inner: Arc<Inner>,
}

impl Coordinator {
    /// Must be called inside a Tokio runtime; starts the stale-client sweeper.
    pub fn new(opts: CoordinatorOptions) -> Self {
        let inner = Arc::new(Inner {
            cache: ModelCache::new(opts.cache_dir.clone()),
            opts,
            roster: Mutex::default(),
            sessions: Mutex::default(),
            progress: ProgressHub::default(),
            tap: Mutex::default(),
            next_conn: AtomicU64::new(1),
        });
        tokio::spawn(sweep_stale(Arc::downgrade(&inner)));
        Self { inner }
    }

    pub fn options(&self) -> &CoordinatorOptions {
        &self.inner.opts
    }

    pub fn progress(&self) -> &ProgressHub {
        &self.inner.progress
    }

    /// Connected clients ordered by id.
    pub fn clients(&self) -> Vec<ClientInfo> {
        let roster = self.inner.roster.lock().expect("roster lock");
        roster
            .iter()
            .map(|(&id, p)| ClientInfo {
                id,
                records: p.records,
                last_seen_ms: p.last_seen.elapsed().as_millis() as u64,
            })
            .collect()
    }

    /// Polls until at least `n` clients are connected.
    pub async fn wait_for_clients(&self, n: usize, within: Duration) -> bool {
        let deadline = Instant::now() + within;
        loop {
            if self.clients().len() >= n {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Copies every inbound envelope to the returned receiver. For audits.
    pub fn tap(&self) -> mpsc::UnboundedReceiver<Envelope> {
        let (tx, rx) = mpsc::unbounded_channel();
        *self.inner.tap.lock().expect("tap lock") = Some(tx);
        rx
    }

    fn record_tap(&self, env: &Envelope) {
        if let Some(tap) = self.inner.tap.lock().expect("tap lock").as_ref() {
            let _ = tap.send(env.clone());
        }
    }

    /// Accepts TCP connections until the listener fails.
    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        loop {
            let (stream, addr) = listener.accept().await?;
            tracing::debug!(%addr, "connection");
            self.attach(tcp_link(stream));
        }
    }

    /// Serves one connection in the background.
    pub fn attach(&self, link: Link) {
        let me = self.clone();
        tokio::spawn(async move { me.serve_conn(link).await });
    }

    async fn serve_conn(self, mut link: Link) {
        let first = match timeout(HANDSHAKE_TIMEOUT, link.rx.recv()).await {
            Ok(Some(env)) => env,
            _ => {
                tracing::warn!(peer = %link.peer, "no hello");
                return;
            }
        };
        self.record_tap(&first);
        match Message::decode(&first) {
            Ok(Message::Hello(h)) if h.client == first.sender => self.serve_client(h, link).await,
            Ok(Message::ChartRequest(req)) if first.sender == OPERATOR => {
                self.serve_operator(first.session, req, link).await
            }
            _ => {
                tracing::warn!(peer = %link.peer, tag = ?first.tag, "bad handshake");
                let abort = Message::Abort(Abort {
                    reason: "expected hello".into(),
                });
                let _ = link
                    .tx
                    .send(abort.envelope(SessionId::default(), COORDINATOR, first.sender))
                    .await;
            }
        }
    }

    async fn serve_client(&self, hello: Hello, mut link: Link) {
        let id = hello.client;
        let reject = |reason: &str| {
            Message::Abort(Abort {
                reason: reason.to_string(),
            })
            .envelope(SessionId::default(), COORDINATOR, id)
        };
        if id == COORDINATOR || id == OPERATOR {
            let _ = link.tx.send(reject("reserved client id")).await;
            return;
        }
        let conn = self.inner.next_conn.fetch_add(1, Ordering::Relaxed);
        let duplicate = {
            let mut roster = self.inner.roster.lock().expect("roster lock");
            let dup = roster.contains_key(&id);
            if !dup {
                roster.insert(
                    id,
                    Peer {
                        records: hello.records,
                        public_key: hello.public_key,
                        tx: link.tx.clone(),
                        last_seen: Instant::now(),
                        conn,
                    },
                );
            }
            dup
        };
        if duplicate {
            tracing::warn!(client = id, "duplicate client id rejected");
            let _ = link.tx.send(reject("client id already connected")).await;
            return;
        }
        let welcome = Message::Welcome(Welcome {
            heartbeat_ms: self.inner.opts.heartbeat_ms,
        });
        let _ = link
            .tx
            .send(welcome.envelope(SessionId::default(), COORDINATOR, id))
            .await;
        tracing::info!(client = id, "client joined");

        while let Some(env) = link.rx.recv().await {
            self.record_tap(&env);
            if env.sender != id {
                tracing::warn!(client = id, claimed = env.sender, "spoofed sender dropped");
                continue;
            }
            if let Some(p) = self.inner.roster.lock().expect("roster lock").get_mut(&id) {
                p.last_seen = Instant::now();
            }
            match env.tag {
                MsgTag::Heartbeat => {}
                MsgTag::MaskExchange
                | MsgTag::MaskedUpload
                | MsgTag::ParamsUpload
                | MsgTag::Abort => {
                    let route = self
                        .inner
                        .sessions
                        .lock()
                        .expect("sessions lock")
                        .get(&env.session)
                        .cloned();
                    match route {
                        Some(tx) => {
                            let _ = tx.send(SessionEvent::Msg(env));
                        }
                        None => {
                            tracing::debug!(client = id, tag = ?env.tag, "message for no active session")
                        }
                    }
                }
                other => {
                    tracing::warn!(client = id, tag = ?other, "unexpected message from client")
                }
            }
        }

        let removed = {
            let mut roster = self.inner.roster.lock().expect("roster lock");
            if roster.get(&id).is_some_and(|p| p.conn == conn) {
                roster.remove(&id);
                true
            } else {
                false
            }
        };
        if removed {
            tracing::info!(client = id, "client left");
            self.notify_gone(id);
        }
    }

    fn notify_gone(&self, id: u16) {
        for tx in self.inner.sessions.lock().expect("sessions lock").values() {
            let _ = tx.send(SessionEvent::Gone(id));
        }
    }

    async fn serve_operator(&self, session: SessionId, first: QueryRequest, mut link: Link) {
        let mut next = Some((session, first));
        while let Some((session, req)) = next.take() {
            let reply = match self.query(req).await {
                Ok(result) => ChartReply {
                    result: Some(result),
                    error: None,
                },
                Err(e) => ChartReply {
                    result: None,
                    error: Some((e.kind(), e.to_string())),
                },
            };
            let env = Message::ChartReply(reply).envelope(session, COORDINATOR, OPERATOR);
            if link.tx.send(env).await.is_err() {
                return;
            }
            while let Some(env) = link.rx.recv().await {
                self.record_tap(&env);
                if let Ok(Message::ChartRequest(req)) = Message::decode(&env) {
                    next = Some((env.session, req));
                    break;
                }
            }
        }
    }

    /// Runs one visualization query over every currently connected client.
    pub async fn query(&self, req: QueryRequest) -> Result<QueryResult, NetError> {
        let started = Instant::now();
        req.chart.validate()?;
        req.scope.validate()?;
        let train = req.train_config();
        if req.scheme == Scheme::PredictionBased {
            train.validate()?;
        }
        let sid = match &req.session {
            Some(h) => SessionId::from_hex(h)
                .ok_or_else(|| NetError::Invalid(format!("bad session id {h:?}")))?,
            None => {
                let mut b = [0u8; 16];
                rand::rng().fill_bytes(&mut b);
                SessionId(b)
            }
        };
        if self
            .inner
            .sessions
            .lock()
            .expect("sessions lock")
            .contains_key(&sid)
        {
            return Err(NetError::Invalid(format!("session {sid} already running")));
        }
        let members: Vec<Member> = {
            let roster = self.inner.roster.lock().expect("roster lock");
            roster
                .iter()
                .map(|(&id, p)| Member {
                    id,
                    public_key: p.public_key,
                    tx: p.tx.clone(),
                })
                .collect()
        };
        let progress = &self.inner.progress;
        if members.len() < MIN_CLIENTS {
            let e = NetError::TooFewClients {
                got: members.len(),
                min: MIN_CLIENTS,
            };
            progress.publish(
                sid,
                ProgressEvent::Aborted {
                    reason: e.to_string(),
                },
            );
            return Err(e);
        }
        let ids: Vec<u16> = members.iter().map(|m| m.id).collect();
        let rounds = if req.scheme == Scheme::PredictionBased {
            train.rounds
        } else {
            0
        };
        progress.publish(
            sid,
            ProgressEvent::Started {
                participants: members.len(),
                rounds,
            },
        );
        tracing::info!(session = %sid, scheme = req.scheme.name(), participants = members.len(), "session start");

        let spec_id = req.chart.partition.id();
        let key = cache_key(&req.chart.partition, &req.scope, &train, &ids);
        if req.scheme == Scheme::PredictionBased {
            if let Some(hit) = self.inner.cache.get(&key) {
                let t = Instant::now();
                let out = predict_all(&hit.params, &spec_id);
                let chart = compose_prediction(&out, members.len(), &req.chart)?;
                progress.publish(sid, ProgressEvent::Done { cached: true });
                tracing::info!(session = %sid, "served from model cache");
                return Ok(QueryResult {
                    session: sid.to_hex(),
                    scheme: req.scheme,
                    exact: false,
                    participants: ids,
                    chart,
                    rounds: hit.rounds,
                    timings: Timings {
                        compose_ms: ms(t.elapsed()),
                        total_ms: ms(started.elapsed()),
                        ..Timings::default()
                    },
                    cached: true,
                });
            }
        }

        let (tx, rx) = mpsc::unbounded_channel();
        self.inner
            .sessions
            .lock()
            .expect("sessions lock")
            .insert(sid, tx);
        let mut run = SessionRun {
            coord: self.clone(),
            sid,
            members,
            rx,
            seen: HashSet::new(),
            started,
            first_mask: None,
            last_mask: None,
        };
        let result = run.drive(&req, train, key).await;
        self.inner
            .sessions
            .lock()
            .expect("sessions lock")
            .remove(&sid);
        match result {
            Ok(r) => {
                run.broadcast(&Message::SessionEnd).await;
                progress.publish(sid, ProgressEvent::Done { cached: false });
                tracing::info!(session = %sid, total_ms = r.timings.total_ms, "session done");
                Ok(r)
            }
            Err(e) => {
                tracing::warn!(session = %sid, error = %e, "session aborted");
                let abort = Message::Abort(Abort {
                    reason: e.to_string(),
                });
                run.broadcast(&abort).await;
                progress.publish(
                    sid,
                    ProgressEvent::Aborted {
                        reason: e.to_string(),
                    },
                );
                Err(e)
            }
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

async fn sweep_stale(inner: Weak<Inner>) {
    loop {
        let Some(strong) = inner.upgrade() else {
            return;
        };
        let period = Duration::from_millis(strong.opts.heartbeat_ms.max(10));
        let stale: Vec<u16> = {
            let mut roster = strong.roster.lock().expect("roster lock");
            let dead: Vec<u16> = roster
                .iter()
                .filter(|(_, p)| p.last_seen.elapsed() > period * 3)
                .map(|(&id, _)| id)
                .collect();
            for id in &dead {
                roster.remove(id);
            }
            dead
        };
        for id in stale {
            tracing::warn!(client = id, "client missed heartbeats");
            Coordinator {
                inner: strong.clone(),
            }
            .notify_gone(id);
        }
        drop(strong);
        tokio::time::sleep(period).await;
    }
}

struct Member {
    id: u16,
    public_key: [u8; 32],
    tx: mpsc::Sender<Envelope>,
}

struct SessionRun {
    coord: Coordinator,
    sid: SessionId,
    members: Vec<Member>,
    rx: mpsc::UnboundedReceiver<SessionEvent>,
    seen: HashSet<(u16, u16, MsgTag, Option<u32>)>,
    started: Instant,
    first_mask: Option<Instant>,
    last_mask: Option<Instant>,
}

impl SessionRun {
    fn ids(&self) -> Vec<u16> {
        self.members.iter().map(|m| m.id).collect()
    }

    async fn send_to(&self, id: u16, env: Envelope) -> Result<(), NetError> {
        let m = self
            .members
            .iter()
            .find(|m| m.id == id)
            .ok_or(NetError::UnknownPeer(id))?;
        m.tx.send(env)
            .await
            .map_err(|_| NetError::Aborted(format!("client {id} unreachable")))
    }

    async fn broadcast(&self, msg: &Message) {
        for m in &self.members {
            let _ = m.tx.send(msg.envelope(self.sid, COORDINATOR, m.id)).await;
        }
    }

    async fn broadcast_checked(&self, msg: &Message) -> Result<(), NetError> {
        for m in &self.members {
            self.send_to(m.id, msg.envelope(self.sid, COORDINATOR, m.id))
                .await?;
        }
        Ok(())
    }

    async fn drive(
        &mut self,
        req: &QueryRequest,
        train: TrainConfig,
        key: String,
    ) -> Result<QueryResult, NetError> {
        let bins = req.chart.partition.len();
        let spec_id = req.chart.partition.id();
        let opts = &self.coord.inner.opts;
        let prediction = req.scheme == Scheme::PredictionBased;
        let start = SessionStart {
            scheme: req.scheme,
            partition: req.chart.partition.clone(),
            scope: req.scope.clone(),
            bins,
            participants: self
                .members
                .iter()
                .map(|m| Participant {
                    id: m.id,
                    public_key: m.public_key,
                })
                .collect(),
            mask_mode: if prediction {
                opts.prediction_mask_mode
            } else {
                opts.query_mask_mode
            },
            train: prediction.then(|| train.clone()),
        };
        self.broadcast_checked(&Message::SessionStart(start))
            .await?;
        let n = self.members.len();

        if !prediction {
            let (sum, _) = self
                .secure_round(0, bins, COUNT_SCALE, MsgTag::MaskedUpload)
                .await?;
            let agg_done = Instant::now();
            let chart = compose_query(&decode_fixed(&sum, &spec_id), &req.chart)?;
            let timings = self.timings(agg_done, Duration::ZERO);
            return Ok(self.result(req, chart, Vec::new(), timings));
        }

        // Round 0: secure mean of the clients' maxima fixes the label scale.
        let (sum, _) = self
            .secure_round(0, 1, PARAM_SCALE, MsgTag::MaskedUpload)
            .await?;
        let agg_done = Instant::now();
        let mean_max = sum.decode_values()[0] / n as f64;
        let label_scale = if mean_max.is_finite() && mean_max > 0.0 {
            mean_max
        } else {
            1.0
        };
        let mcfg = ModelConfig::new(bins).with_label_scale(label_scale);
        let mut global = init_global(&mcfg, train.seed)?;
        let num_params = global.num_params();
        let mut stop = Convergence::new(train.tolerance, label_scale);
        let mut reports = Vec::new();
        for round in 1..=train.rounds {
            let bcast = Message::ParamsBroadcast(ParamsBroadcast {
                round,
                label_scale,
                params: global.flatten(),
            });
            self.broadcast_checked(&bcast).await?;
            let (sum, losses) = self
                .secure_round(round, num_params, PARAM_SCALE, MsgTag::ParamsUpload)
                .await?;
            let flat: Vec<f64> = sum.decode_values().iter().map(|v| v / n as f64).collect();
            global = global.with_flat(&flat)?;
            global.version = round as u64;
            if !global.is_finite() {
                return Err(NetError::Aborted("global model diverged".into()));
            }
            let report = RoundReport::new(round, losses.into_values().collect());
            tracing::info!(session = %self.sid, round, global_loss = report.global_loss, "round");
            self.coord
                .inner
                .progress
                .publish(self.sid, ProgressEvent::Round(report.clone()));
            self.broadcast(&Message::RoundReport(report.clone())).await;
            let done = stop.observe(report.global_loss);
            reports.push(report);
            if done {
                break;
            }
        }
        let train_time = agg_done.elapsed();
        let model: ModelParams = global.quantize_f32();
        self.coord.inner.cache.put(
            &key,
            CachedModel {
                params: model.clone(),
                rounds: reports.clone(),
            },
        );
        let compose_start = Instant::now();
        let chart = compose_prediction(&predict_all(&model, &spec_id), n, &req.chart)?;
        let mut timings = self.timings(agg_done, train_time);
        timings.compose_ms = ms(compose_start.elapsed());
        Ok(self.result(req, chart, reports, timings))
    }

    fn timings(&self, agg_done: Instant, train: Duration) -> Timings {
        let first = self.first_mask.unwrap_or(self.started);
        let last = self.last_mask.unwrap_or(first);
        let composed = Instant::now();
        Timings {
            local_ms: ms(first - self.started),
            exchange_ms: ms(last - first),
            aggregate_ms: ms(agg_done.saturating_duration_since(last)),
            train_ms: ms(train),
            compose_ms: ms(composed.saturating_duration_since(agg_done + train)),
            total_ms: ms(composed - self.started),
        }
    }

    fn result(
        &self,
        req: &QueryRequest,
        chart: ChartData,
        rounds: Vec<RoundReport>,
        timings: Timings,
    ) -> QueryResult {
        QueryResult {
            session: self.sid.to_hex(),
            scheme: req.scheme,
            exact: req.scheme.is_exact(),
            participants: self.ids(),
            chart,
            rounds,
            timings,
            cached: false,
        }
    }

    /// One secure summation: relays every sealed mask, then collects one
    /// masked upload per participant. Returns the ring sum and, for
    /// training rounds, each client's reported loss.
    async fn secure_round(
        &mut self,
        round: u32,
        len: usize,
        scale: u64,
        upload_tag: MsgTag,
    ) -> Result<(RingVector, BTreeMap<u16, f64>), NetError> {
        let ids: Vec<ClientId> = self.ids().into_iter().map(ClientId).collect();
        let mut agg = AggSession::new(self.sid, ids, "", len)?;
        let mut losses = BTreeMap::new();
        let wait = self.coord.inner.opts.session_timeout;
        while !agg.is_complete() {
            let ev = match timeout(wait, self.rx.recv()).await {
                Ok(Some(ev)) => ev,
                Ok(None) => return Err(NetError::Aborted("session channel closed".into())),
                Err(_) => {
                    let missing: Vec<u16> = agg.missing().iter().map(|c| c.0).collect();
                    return Err(NetError::Aborted(format!(
                        "timed out in round {round} waiting for clients {missing:?}"
                    )));
                }
            };
            let env = match ev {
                SessionEvent::Gone(id) if self.members.iter().any(|m| m.id == id) => {
                    return Err(NetError::Aborted(format!("client {id} disconnected")));
                }
                SessionEvent::Gone(_) => continue,
                SessionEvent::Msg(env) => env,
            };
            let from = env.sender;
            let msg = Message::decode(&env)?;
            let dedup = (from, env.recipient, env.tag, msg.round());
            if !self.seen.insert(dedup) {
                tracing::warn!(session = %self.sid, client = from, tag = ?env.tag, "duplicate dropped");
                continue;
            }
            if let Some(r) = msg.round() {
                if r != round {
                    return Err(NetError::Aborted(format!(
                        "client {from} sent {:?} for round {r} during round {round}",
                        env.tag
                    )));
                }
            }
            match msg {
                Message::Abort(a) => {
                    return Err(NetError::Aborted(format!(
                        "client {from} aborted: {}",
                        a.reason
                    )));
                }
                Message::MaskExchange(_) => {
                    let to = env.recipient;
                    if !self.members.iter().any(|m| m.id == to) {
                        return Err(NetError::UnknownPeer(to));
                    }
                    agg.record_mask(ClientId(from), ClientId(to))
                        .map_err(|e| NetError::Aborted(e.to_string()))?;
                    let now = Instant::now();
                    if round == 0 {
                        self.first_mask.get_or_insert(now);
                        self.last_mask = Some(now);
                    }
                    // Relayed verbatim; the payload stays sealed.
                    self.send_to(to, env).await?;
                }
                Message::MaskedUpload(m) if upload_tag == MsgTag::MaskedUpload => {
                    self.record_upload(&mut agg, from, m.payload, scale)?;
                }
                Message::ParamsUpload(p) if upload_tag == MsgTag::ParamsUpload => {
                    self.record_upload(&mut agg, from, p.masked, scale)?;
                    losses.insert(from, p.loss);
                }
                other => {
                    return Err(NetError::Aborted(format!(
                        "client {from} sent unexpected {:?} in round {round}",
                        other.tag()
                    )));
                }
            }
        }
        let sum = agg.finalize()?;
        Ok((sum, losses))
    }

    fn record_upload(
        &self,
        agg: &mut AggSession,
        from: u16,
        payload: RingVector,
        scale: u64,
    ) -> Result<(), NetError> {
        if payload.scale != scale {
            return Err(NetError::Aborted(format!(
                "client {from} used the wrong fixed-point scale"
            )));
        }
        agg.record_upload(MaskedUpload {
            client: ClientId(from),
            session: self.sid,
            payload,
        })
        .map_err(|e| NetError::Aborted(e.to_string()))
    }
}
