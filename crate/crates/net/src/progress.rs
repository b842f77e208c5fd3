//! Per-session progress fan-out. Late subscribers get the history first.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use fedvis_core::model::RoundReport;
use fedvis_core::secagg::SessionId;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProgressEvent {
    Started { participants: usize, rounds: u32 },
    Round(RoundReport),
    Done { cached: bool },
    Aborted { reason: String },
}

impl ProgressEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            ProgressEvent::Done { .. } | ProgressEvent::Aborted { .. }
        )
    }

    /// SSE event name.
    pub fn name(&self) -> &'static str {
        match self {
            ProgressEvent::Started { .. } => "started",
            ProgressEvent::Round(_) => "round",
            ProgressEvent::Done { .. } => "done",
            ProgressEvent::Aborted { .. } => "aborted",
        }
    }
}

struct Channel {
    history: Vec<ProgressEvent>,
    tx: broadcast::Sender<ProgressEvent>,
}

/// Finished sessions kept for replay before the oldest are dropped.
const RETAINED: usize = 256;

#[derive(Clone, Default)]
pub struct ProgressHub {
    inner: Arc<Mutex<Hub>>,
}

#[derive(Default)]
struct Hub {
    channels: HashMap<SessionId, Channel>,
    finished: std::collections::VecDeque<SessionId>,
}

impl Hub {
    fn channel(&mut self, id: SessionId) -> &mut Channel {
        self.channels.entry(id).or_insert_with(|| Channel {
            history: Vec::new(),
            tx: broadcast::channel(1024).0,
        })
    }
}

impl ProgressHub {
    pub fn publish(&self, id: SessionId, ev: ProgressEvent) {
        let mut hub = self.inner.lock().expect("progress lock");
        let terminal = ev.is_terminal();
        let ch = hub.channel(id);
        ch.history.push(ev.clone());
        let _ = ch.tx.send(ev);
        if terminal {
            hub.finished.push_back(id);
            while hub.finished.len() > RETAINED {
                if let Some(old) = hub.finished.pop_front() {
                    hub.channels.remove(&old);
                }
            }
        }
    }

    /// History so far plus a receiver for everything after it. Subscribing to
    /// a session that has not started yet is allowed.
    pub fn subscribe(
        &self,
        id: SessionId,
    ) -> (Vec<ProgressEvent>, broadcast::Receiver<ProgressEvent>) {
        let mut hub = self.inner.lock().expect("progress lock");
        let ch = hub.channel(id);
        (ch.history.clone(), ch.tx.subscribe())
    }

    pub fn history(&self, id: SessionId) -> Vec<ProgressEvent> {
        let hub = self.inner.lock().expect("progress lock");
        hub.channels
            .get(&id)
            .map(|c| c.history.clone())
            .unwrap_or_default()
    }
}
