use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ring::RingVector;
use super::{ClientId, SecAggError, SessionId};

/// Random vector `R_{from,to}` that client `from` prepares for peer `to`.
///
/// The vector is the ChaCha20 expansion of `seed`, so a peer can receive
/// either the full vector or just the seed and reconstruct the same mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseMask {
    pub from: ClientId,
    pub to: ClientId,
    pub seed: [u8; 32],
    pub r: RingVector,
}

/// Vector a client uploads: its encoded features plus summed perturbations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedUpload {
    pub client: ClientId,
    pub session: SessionId,
    pub payload: RingVector,
}

/// Expands a 32-byte seed into `len` uniform ring elements.
pub fn expand_mask(seed: [u8; 32], len: usize, scale: u64) -> RingVector {
    let mut rng = ChaCha20Rng::from_seed(seed);
    RingVector {
        elems: (0..len).map(|_| rng.next_u64()).collect(),
        scale,
    }
}

fn peer_seed(rng_seed: u64, me: ClientId, peer: ClientId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fedvis/pairwise-mask/v1");
    h.update(rng_seed.to_le_bytes());
    h.update(me.0.to_le_bytes());
    h.update(peer.0.to_le_bytes());
    h.finalize().into()
}

/// Samples one uniform mask of length `len` per peer. Deterministic in
/// `rng_seed`; masks for different peers come from independent streams.
pub fn sample_masks(
    me: ClientId,
    peers: &[ClientId],
    len: usize,
    scale: u64,
    rng_seed: u64,
) -> Result<Vec<PairwiseMask>, SecAggError> {
    if peers.contains(&me) {
        return Err(SecAggError::SelfInPeers(me));
    }
    Ok(peers
        .iter()
        .map(|&to| {
            let seed = peer_seed(rng_seed, me, to);
            PairwiseMask {
                from: me,
                to,
                seed,
                r: expand_mask(seed, len, scale),
            }
        })
        .collect())
}

/// `vf + Σ_j (R_{i,j} − R_{j,i})` in ring arithmetic.
///
/// `sent` are the masks this client prepared (`from == client`); `received`
/// are the peers' masks addressed to it (`to == client`). Both must cover
/// the same peer set.
pub fn masked_upload(
    client: ClientId,
    session: SessionId,
    vf: &RingVector,
    sent: &[PairwiseMask],
    received: &[PairwiseMask],
) -> Result<MaskedUpload, SecAggError> {
    let mut sent_by_peer = BTreeMap::new();
    for m in sent {
        if m.from != client || sent_by_peer.insert(m.to, m).is_some() {
            return Err(SecAggError::PeerSetMismatch(format!(
                "bad sent mask {}->{}",
                m.from, m.to
            )));
        }
    }
    let mut recv_by_peer = BTreeMap::new();
    for m in received {
        if m.to != client || recv_by_peer.insert(m.from, m).is_some() {
            return Err(SecAggError::PeerSetMismatch(format!(
                "bad received mask {}->{}",
                m.from, m.to
            )));
        }
    }
    if !sent_by_peer.keys().eq(recv_by_peer.keys()) {
        return Err(SecAggError::PeerSetMismatch(format!(
            "sent to {:?}, received from {:?}",
            sent_by_peer.keys().collect::<Vec<_>>(),
            recv_by_peer.keys().collect::<Vec<_>>()
        )));
    }
    let mut payload = vf.clone();
    for (peer, s) in &sent_by_peer {
        let r = recv_by_peer[peer];
        for m in [*s, r] {
            if m.r.len() != vf.len() {
                return Err(SecAggError::LengthMismatch {
                    expected: vf.len(),
                    got: m.r.len(),
                });
            }
        }
        payload.add_assign(&s.r);
        payload.sub_assign(&r.r);
    }
    Ok(MaskedUpload {
        client,
        session,
        payload,
    })
}

/// Elementwise ring sum of one upload per participant. Pairwise perturbations
/// cancel, leaving the sum of the encoded feature vectors.
pub fn aggregate_uploads(
    participants: &[ClientId],
    uploads: &[MaskedUpload],
) -> Result<RingVector, SecAggError> {
    let mut by_client = BTreeMap::new();
    for u in uploads {
        if !participants.contains(&u.client) {
            return Err(SecAggError::UnknownClient(u.client));
        }
        if by_client.insert(u.client, u).is_some() {
            return Err(SecAggError::DuplicateUpload(u.client));
        }
    }
    let missing: Vec<ClientId> = participants
        .iter()
        .filter(|c| !by_client.contains_key(c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(SecAggError::IncompleteSession { missing });
    }
    let first = &uploads
        .first()
        .ok_or(SecAggError::IncompleteSession { missing: vec![] })?
        .payload;
    let mut sum = RingVector::zeros(first.len(), first.scale);
    for u in by_client.values() {
        if u.payload.len() != sum.len() {
            return Err(SecAggError::LengthMismatch {
                expected: sum.len(),
                got: u.payload.len(),
            });
        }
        if u.payload.scale != sum.scale {
            return Err(SecAggError::ScaleMismatch);
        }
        sum.add_assign(&u.payload);
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secagg::ring::encode_values;

    fn ids(n: u16) -> Vec<ClientId> {
        (1..=n).map(ClientId).collect()
    }

    fn peers_of(all: &[ClientId], me: ClientId) -> Vec<ClientId> {
        all.iter().copied().filter(|&c| c != me).collect()
    }

    /// Runs the full three-step protocol in memory.
    fn protocol(values: &[Vec<f64>], seed: u64) -> Vec<MaskedUpload> {
        let all = ids(values.len() as u16);
        let m = values[0].len();
        let masks: Vec<Vec<PairwiseMask>> = all
            .iter()
            .map(|&c| sample_masks(c, &peers_of(&all, c), m, 1, seed ^ c.0 as u64).unwrap())
            .collect();
        all.iter()
            .zip(values)
            .map(|(&c, v)| {
                let sent = &masks[(c.0 - 1) as usize];
                let received: Vec<_> = masks
                    .iter()
                    .flatten()
                    .filter(|mk| mk.to == c)
                    .cloned()
                    .collect();
                let vf = encode_values(v, 1).unwrap();
                masked_upload(c, SessionId::default(), &vf, sent, &received).unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_peers_give_no_masks() {
        assert!(sample_masks(ClientId(1), &[], 10, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn shape_and_determinism() {
        let peers = ids(5)[1..].to_vec();
        let a = sample_masks(ClientId(1), &peers, 10, 1, 42).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|m| m.r.len() == 10));
        assert_eq!(a, sample_masks(ClientId(1), &peers, 10, 1, 42).unwrap());
        assert_ne!(a[0].r, a[1].r);
        assert_ne!(a, sample_masks(ClientId(1), &peers, 10, 1, 43).unwrap());
        assert_eq!(a[2].r, expand_mask(a[2].seed, 10, 1));
    }

    #[test]
    fn self_in_peers_rejected() {
        assert!(sample_masks(ClientId(1), &[ClientId(1)], 3, 1, 0).is_err());
    }

    #[test]
    fn zero_masks_leave_payload_unchanged() {
        let vf = encode_values(&[1.0, 2.0], 1).unwrap();
        let zero = |from, to| PairwiseMask {
            from: ClientId(from),
            to: ClientId(to),
            seed: [0; 32],
            r: RingVector::zeros(2, 1),
        };
        let up = masked_upload(
            ClientId(1),
            SessionId::default(),
            &vf,
            &[zero(1, 2)],
            &[zero(2, 1)],
        )
        .unwrap();
        assert_eq!(up.payload, vf);
    }

    #[test]
    fn symmetric_masks_cancel_locally() {
        let vf = encode_values(&[5.0, -3.0, 9.0], 1).unwrap();
        let r = expand_mask([7; 32], 3, 1);
        let sent = PairwiseMask {
            from: ClientId(1),
            to: ClientId(2),
            seed: [7; 32],
            r: r.clone(),
        };
        let recv = PairwiseMask {
            from: ClientId(2),
            to: ClientId(1),
            seed: [7; 32],
            r,
        };
        let up = masked_upload(ClientId(1), SessionId::default(), &vf, &[sent], &[recv]).unwrap();
        assert_eq!(up.payload, vf);
    }

    #[test]
    fn peer_set_mismatch() {
        let vf = RingVector::zeros(2, 1);
        let sent = sample_masks(ClientId(1), &[ClientId(2), ClientId(3)], 2, 1, 0).unwrap();
        let recv = sample_masks(ClientId(2), &[ClientId(1)], 2, 1, 0).unwrap();
        assert!(matches!(
            masked_upload(ClientId(1), SessionId::default(), &vf, &sent, &recv),
            Err(SecAggError::PeerSetMismatch(_))
        ));
    }

    #[test]
    fn three_clients_sum_to_plaintext() {
        let vals = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let uploads = protocol(&vals, 9);
        // each upload is masked
        assert_ne!(uploads[0].payload.elems, vec![1, 2]);
        let sum = aggregate_uploads(&ids(3), &uploads).unwrap();
        assert_eq!(sum.decode_values(), vec![9.0, 12.0]);
    }

    #[test]
    fn single_upload_is_its_payload() {
        let up = MaskedUpload {
            client: ClientId(1),
            session: SessionId::default(),
            payload: RingVector {
                elems: vec![4, 5],
                scale: 1,
            },
        };
        assert_eq!(
            aggregate_uploads(&ids(1), &[up.clone()]).unwrap(),
            up.payload
        );
    }

    #[test]
    fn missing_upload_is_incomplete() {
        let vals = vec![vec![1.0]; 4];
        let uploads = protocol(&vals, 1);
        let err = aggregate_uploads(&ids(4), &uploads[..3]).unwrap_err();
        assert!(
            matches!(err, SecAggError::IncompleteSession { ref missing } if missing == &[ClientId(4)])
        );
        let mut dup = uploads.clone();
        dup.push(uploads[0].clone());
        assert!(matches!(
            aggregate_uploads(&ids(4), &dup),
            Err(SecAggError::DuplicateUpload(_))
        ));
    }
}
