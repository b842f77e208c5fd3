use std::collections::{BTreeMap, BTreeSet};

use super::mask::{aggregate_uploads, MaskedUpload};
use super::ring::RingVector;
use super::{ClientId, SecAggError, SessionId};

/// Minimum live participants. With three or fewer, a colluding pair can
/// solve for the remaining client's vector.
pub const MIN_CLIENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientPhase {
    Init,
    MasksExchanged,
    Uploaded,
}

/// Coordinator-side bookkeeping for one secure-sum round.
///
/// The coordinator only observes which sealed masks it relayed; it never sees
/// their contents. A client may upload once every mask it owes and every mask
/// owed to it has gone through.
#[derive(Debug)]
pub struct AggSession {
    id: SessionId,
    participants: Vec<ClientId>,
    spec_id: String,
    len: usize,
    sent: BTreeMap<ClientId, BTreeSet<ClientId>>,
    received: BTreeMap<ClientId, BTreeSet<ClientId>>,
    phase: BTreeMap<ClientId, ClientPhase>,
    uploads: Vec<MaskedUpload>,
}

impl AggSession {
    pub fn new(
        id: SessionId,
        participants: Vec<ClientId>,
        spec_id: impl Into<String>,
        len: usize,
    ) -> Result<Self, SecAggError> {
        if participants.len() < MIN_CLIENTS {
            return Err(SecAggError::TooFewClients {
                got: participants.len(),
                min: MIN_CLIENTS,
            });
        }
        Self::new_unchecked(id, participants, spec_id, len)
    }

    /// Skips the participant-count gate. For unit tests of small rings only.
    #[doc(hidden)]
    pub fn new_unchecked(
        id: SessionId,
        participants: Vec<ClientId>,
        spec_id: impl Into<String>,
        len: usize,
    ) -> Result<Self, SecAggError> {
        let unique: BTreeSet<_> = participants.iter().collect();
        if unique.len() != participants.len() {
            return Err(SecAggError::ProtocolViolation(
                "duplicate participant".into(),
            ));
        }
        Ok(Self {
            id,
            phase: participants
                .iter()
                .map(|&c| (c, ClientPhase::Init))
                .collect(),
            sent: participants.iter().map(|&c| (c, BTreeSet::new())).collect(),
            received: participants.iter().map(|&c| (c, BTreeSet::new())).collect(),
            participants,
            spec_id: spec_id.into(),
            len,
            uploads: Vec::new(),
        })
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn participants(&self) -> &[ClientId] {
        &self.participants
    }

    pub fn spec_id(&self) -> &str {
        &self.spec_id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn phase(&self, c: ClientId) -> Option<ClientPhase> {
        self.phase.get(&c).copied()
    }

    fn check_member(&self, c: ClientId) -> Result<(), SecAggError> {
        if self.phase.contains_key(&c) {
            Ok(())
        } else {
            Err(SecAggError::UnknownClient(c))
        }
    }

    fn refresh(&mut self, c: ClientId) {
        let n = self.participants.len() - 1;
        if self.phase[&c] == ClientPhase::Init
            && self.sent[&c].len() == n
            && self.received[&c].len() == n
        {
            self.phase.insert(c, ClientPhase::MasksExchanged);
        }
    }

    /// Notes that a sealed mask from `from` to `to` was relayed.
    pub fn record_mask(&mut self, from: ClientId, to: ClientId) -> Result<(), SecAggError> {
        self.check_member(from)?;
        self.check_member(to)?;
        if from == to {
            return Err(SecAggError::ProtocolViolation(format!(
                "{from} masked to itself"
            )));
        }
        if self.phase[&from] == ClientPhase::Uploaded || self.phase[&to] == ClientPhase::Uploaded {
            return Err(SecAggError::ProtocolViolation(format!(
                "mask {from}->{to} after upload"
            )));
        }
        if !self.sent.get_mut(&from).expect("member").insert(to) {
            return Err(SecAggError::ProtocolViolation(format!(
                "duplicate mask {from}->{to}"
            )));
        }
        self.received.get_mut(&to).expect("member").insert(from);
        self.refresh(from);
        self.refresh(to);
        Ok(())
    }

    pub fn record_upload(&mut self, upload: MaskedUpload) -> Result<(), SecAggError> {
        let c = upload.client;
        self.check_member(c)?;
        if upload.session != self.id {
            return Err(SecAggError::ProtocolViolation(
                "upload for another session".into(),
            ));
        }
        match self.phase[&c] {
            ClientPhase::Init => {
                return Err(SecAggError::ProtocolViolation(format!(
                    "{c} uploaded before mask exchange completed"
                )))
            }
            ClientPhase::Uploaded => return Err(SecAggError::DuplicateUpload(c)),
            ClientPhase::MasksExchanged => {}
        }
        if upload.payload.len() != self.len {
            return Err(SecAggError::LengthMismatch {
                expected: self.len,
                got: upload.payload.len(),
            });
        }
        self.phase.insert(c, ClientPhase::Uploaded);
        self.uploads.push(upload);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.uploads.len() == self.participants.len()
    }

    pub fn missing(&self) -> Vec<ClientId> {
        self.phase
            .iter()
            .filter(|(_, p)| **p != ClientPhase::Uploaded)
            .map(|(c, _)| *c)
            .collect()
    }

    /// Sums the uploads; fails with `IncompleteSession` if anyone is missing.
    pub fn finalize(&self) -> Result<RingVector, SecAggError> {
        aggregate_uploads(&self.participants, &self.uploads)
    }
}
