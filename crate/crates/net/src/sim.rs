//! In-process fleet: one coordinator and N client nodes on in-proc links.

use std::path::Path;
use std::time::Duration;

use fedvis_core::datasim::Manifest;
use fedvis_core::pipeline::{read_records, DataRecord};
use tokio::task::JoinHandle;

use crate::client::ClientNode;
use crate::coordinator::Coordinator;
use crate::transport::inproc_pair;
use crate::NetError;

pub struct SimFleet {
    pub coordinator: Coordinator,
    clients: Vec<(u16, JoinHandle<Result<(), NetError>>)>,
}

impl SimFleet {
    /// Starts one client per shard and waits until all have joined.
    pub async fn start(
        coordinator: Coordinator,
        shards: Vec<(u16, Vec<DataRecord>)>,
    ) -> Result<Self, NetError> {
        let before = coordinator.clients().len();
        let mut clients = Vec::with_capacity(shards.len());
        for (id, records) in shards {
            let node = ClientNode::new(id, records)?;
            let (client_end, coord_end) = inproc_pair(&format!("client-{id}"));
            coordinator.attach(coord_end);
            clients.push((id, tokio::spawn(node.run(client_end))));
        }
        let want = before + clients.len();
        if !coordinator
            .wait_for_clients(want, Duration::from_secs(10))
            .await
        {
            return Err(NetError::Handshake(format!(
                "only {} of {want} clients joined",
                coordinator.clients().len()
            )));
        }
        Ok(Self {
            coordinator,
            clients,
        })
    }

    /// Loads every shard listed in a manifest.
    pub fn load_manifest(path: &Path) -> Result<Vec<(u16, Vec<DataRecord>)>, NetError> {
        let manifest = Manifest::load(path).map_err(|e| NetError::Config(e.to_string()))?;
        manifest
            .clients
            .iter()
            .map(|e| {
                let f = std::fs::File::open(&e.path)?;
                let ing = read_records(std::io::BufReader::new(f))?;
                if ing.malformed > 0 {
                    tracing::warn!(
                        client = e.id,
                        skipped = ing.malformed,
                        "malformed rows skipped"
                    );
                }
                Ok((e.id, ing.records))
            })
            .collect()
    }

    pub fn client_ids(&self) -> Vec<u16> {
        self.clients.iter().map(|(id, _)| *id).collect()
    }

    /// Simulates a client crash: its task is dropped and its link closes.
    pub fn kill(&mut self, id: u16) -> bool {
        match self.clients.iter().position(|(c, _)| *c == id) {
            Some(i) => {
                self.clients.remove(i).1.abort();
                true
            }
            None => false,
        }
    }

    pub fn shutdown(self) {
        for (_, h) in self.clients {
            h.abort();
        }
    }
}
