//! Sealed client-to-client channel for pairwise masks.
//!
//! Each client holds a static X25519 key pair. Two clients derive a shared
//! key per session from their Diffie-Hellman secret and seal masks with
//! ChaCha20-Poly1305. The coordinator only ever sees public keys and the
//! ciphertext it relays.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use fedvis_core::secagg::SessionId;
use rand::RngCore;
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SealError {
    #[error("authentication failed")]
    Auth,
    #[error("unknown peer {0}")]
    UnknownPeer(u16),
}

pub struct KeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate() -> Self {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        Self::from_secret(bytes)
    }

    pub fn from_secret(bytes: [u8; 32]) -> Self {
        let secret = StaticSecret::from(bytes);
        let public = PublicKey::from(&secret);
        Self { secret, public }
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.public.to_bytes()
    }

    /// Channel key shared with `peer` for one session.
    pub fn channel(
        &self,
        peer_public: [u8; 32],
        session: SessionId,
        me: u16,
        peer: u16,
    ) -> Channel {
        let shared = self.secret.diffie_hellman(&PublicKey::from(peer_public));
        let (lo, hi) = if me < peer { (me, peer) } else { (peer, me) };
        let mut h = Sha256::new();
        h.update(b"fedvis/seal/v1");
        h.update(shared.as_bytes());
        h.update(session.0);
        h.update(lo.to_le_bytes());
        h.update(hi.to_le_bytes());
        let key: [u8; 32] = h.finalize().into();
        Channel {
            cipher: ChaCha20Poly1305::new(Key::from_slice(&key)),
            session,
        }
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &hex::encode(self.public.as_bytes()))
            .finish()
    }
}

/// Symmetric channel between two clients within one session.
pub struct Channel {
    cipher: ChaCha20Poly1305,
    session: SessionId,
}

/// The key is unique per session and pair, so (round, direction) is a
/// unique nonce under it.
fn nonce(round: u32, from: u16, to: u16) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[0..4].copy_from_slice(&round.to_le_bytes());
    n[4..6].copy_from_slice(&from.to_le_bytes());
    n[6..8].copy_from_slice(&to.to_le_bytes());
    n
}

fn aad(session: SessionId, round: u32, from: u16, to: u16) -> Vec<u8> {
    let mut a = session.0.to_vec();
    a.extend_from_slice(&round.to_le_bytes());
    a.extend_from_slice(&from.to_le_bytes());
    a.extend_from_slice(&to.to_le_bytes());
    a
}

impl Channel {
    pub fn seal(&self, round: u32, from: u16, to: u16, plaintext: &[u8]) -> Vec<u8> {
        let aad = aad(self.session, round, from, to);
        self.cipher
            .encrypt(
                Nonce::from_slice(&nonce(round, from, to)),
                Payload {
                    msg: plaintext,
                    aad: &aad,
                },
            )
            .expect("in-memory encryption does not fail")
    }

    pub fn open(
        &self,
        round: u32,
        from: u16,
        to: u16,
        sealed: &[u8],
    ) -> Result<Vec<u8>, SealError> {
        let aad = aad(self.session, round, from, to);
        self.cipher
            .decrypt(
                Nonce::from_slice(&nonce(round, from, to)),
                Payload {
                    msg: sealed,
                    aad: &aad,
                },
            )
            .map_err(|_| SealError::Auth)
    }
}
