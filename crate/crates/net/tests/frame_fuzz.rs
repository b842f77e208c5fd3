use fedvis_core::secagg::SessionId;
use fedvis_net::frame::{frame, unframe, Envelope, HEADER_LEN};
use fedvis_net::{Message, MsgTag};
use proptest::prelude::*;

fn tag() -> impl Strategy<Value = MsgTag> {
    proptest::sample::select(MsgTag::ALL.to_vec())
}

prop_compose! {
    fn envelope()(tag in tag(), session in any::<[u8; 16]>(), sender in any::<u16>(),
                  recipient in any::<u16>(), payload in proptest::collection::vec(any::<u8>(), 0..300)) -> Envelope {
        Envelope { tag, session: SessionId(session), sender, recipient, payload }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(env in envelope()) {
        prop_assert_eq!(unframe(&frame(&env)).unwrap(), env);
    }

    /// Random byte flips, truncations and extensions never panic. Anything
    /// that still decodes must re-encode to the same bytes.
    #[test]
    fn mutations_are_rejected_or_consistent(
        env in envelope(),
        flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 0..6),
        cut in any::<usize>(),
        extra in proptest::collection::vec(any::<u8>(), 0..4),
        mode in 0u8..3,
    ) {
        let mut bytes = frame(&env);
        for (pos, x) in flips {
            let i = pos % bytes.len();
            bytes[i] ^= x;
        }
        match mode {
            0 => bytes.truncate(cut % (bytes.len() + 1)),
            1 => bytes.extend(extra),
            _ => {}
        }
        if let Ok(decoded) = unframe(&bytes) {
            prop_assert_eq!(frame(&decoded), bytes);
            prop_assert!(decoded.payload.len() + HEADER_LEN == frame(&decoded).len());
            // Payload decoding may fail but must not panic.
            let _ = Message::decode(&decoded);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
        if let Ok(env) = unframe(&bytes) {
            let _ = Message::decode(&env);
        }
    }
}

proptest! {
    /// Parameters cross the wire as text; every finite f64 must come back
    /// with the same bits or in-process and TCP fleets would drift apart.
    #[test]
    fn params_survive_encoding_bit_exactly(
        bits in proptest::collection::vec(any::<u64>(), 1..64),
        label_scale in 1e-3f64..1e6,
    ) {
        let params: Vec<f64> = bits.into_iter().map(f64::from_bits).filter(|v| v.is_finite()).collect();
        let msg = Message::ParamsBroadcast(fedvis_net::message::ParamsBroadcast { round: 3, label_scale, params: params.clone() });
        let env = unframe(&frame(&msg.envelope(SessionId([2; 16]), 0, 1))).unwrap();
        match Message::decode(&env).unwrap() {
            Message::ParamsBroadcast(p) => {
                let got: Vec<u64> = p.params.iter().map(|v| v.to_bits()).collect();
                let want: Vec<u64> = params.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(got, want);
                prop_assert_eq!(p.label_scale.to_bits(), label_scale.to_bits());
            }
            other => prop_assert!(false, "decoded {:?}", other.tag()),
        }
    }
}
