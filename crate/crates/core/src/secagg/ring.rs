use serde::{Deserialize, Serialize};

use super::SecAggError;
use crate::pipeline::FeatureVector;

/// Fixed-point scale used for count features. Counts are integers, so they
/// encode exactly.
pub const COUNT_SCALE: u64 = 1;
/// Fixed-point scale for model parameters and other real-valued payloads.
pub const PARAM_SCALE: u64 = 1 << 24;

/// Encoded magnitudes must stay below this so N-way sums keep headroom.
const ENCODE_LIMIT: f64 = (1u64 << 52) as f64;

/// Vector over Z_{2^64} carrying two's-complement fixed-point values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingVector {
    pub elems: Vec<u64>,
    pub scale: u64,
}

impl RingVector {
    pub fn zeros(len: usize, scale: u64) -> Self {
        Self {
            elems: vec![0; len],
            scale,
        }
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn add_assign(&mut self, other: &RingVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.elems.iter_mut().zip(&other.elems) {
            *a = a.wrapping_add(*b);
        }
    }

    pub fn sub_assign(&mut self, other: &RingVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.elems.iter_mut().zip(&other.elems) {
            *a = a.wrapping_sub(*b);
        }
    }

    /// Two's-complement interpretation divided by the scale.
    pub fn decode_values(&self) -> Vec<f64> {
        let s = self.scale as f64;
        self.elems.iter().map(|&e| e as i64 as f64 / s).collect()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.elems.iter().flat_map(|e| e.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8], scale: u64) -> Option<Self> {
        if !bytes.len().is_multiple_of(8) {
            return None;
        }
        let elems = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Some(Self { elems, scale })
    }
}

/// Encodes raw values as `round(v * scale)` ring elements.
pub fn encode_values(values: &[f64], scale: u64) -> Result<RingVector, SecAggError> {
    if scale == 0 {
        return Err(SecAggError::InvalidScale);
    }
    let s = scale as f64;
    let elems = values
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            let scaled = v * s;
            if !scaled.is_finite() || scaled.abs() >= ENCODE_LIMIT {
                return Err(SecAggError::OverflowRisk { index, value: v });
            }
            Ok(scaled.round() as i64 as u64)
        })
        .collect::<Result<_, _>>()?;
    Ok(RingVector { elems, scale })
}

pub fn encode_fixed(v: &FeatureVector, scale: u64) -> Result<RingVector, SecAggError> {
    encode_values(&v.values, scale)
}

pub fn decode_fixed(rv: &RingVector, spec_id: &str) -> FeatureVector {
    FeatureVector::from_values(spec_id, rv.decode_values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_encodes_to_zero() {
        for s in [1, 7, PARAM_SCALE] {
            assert_eq!(
                encode_values(&[0.0, 0.0, 0.0], s).unwrap().elems,
                vec![0, 0, 0]
            );
        }
    }

    #[test]
    fn negative_is_twos_complement() {
        let rv = encode_values(&[3.0, -1.0], 1).unwrap();
        assert_eq!(rv.elems, vec![3, u64::MAX]);
        assert_eq!(rv.decode_values(), vec![3.0, -1.0]);
    }

    #[test]
    fn fractional_scale() {
        let rv = encode_values(&[1.5], 1 << 16).unwrap();
        assert_eq!(rv.elems, vec![98_304]);
        assert_eq!(rv.decode_values(), vec![1.5]);
    }

    #[test]
    fn overflow_rejected() {
        let big = 2f64.powi(52);
        assert!(matches!(
            encode_values(&[1.0, big], 1),
            Err(SecAggError::OverflowRisk { index: 1, .. })
        ));
        assert!(encode_values(&[2f64.powi(28)], PARAM_SCALE).is_err());
        assert!(encode_values(&[f64::NAN], 1).is_err());
        assert!(matches!(
            encode_values(&[1.0], 0),
            Err(SecAggError::InvalidScale)
        ));
    }

    proptest! {
        #[test]
        fn integer_counts_round_trip(v in proptest::collection::vec(-(1i64 << 50)..(1i64 << 50), 0..64)) {
            let vals: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let rv = encode_values(&vals, COUNT_SCALE).unwrap();
            prop_assert_eq!(rv.decode_values(), vals);
        }

        #[test]
        fn param_round_trip_within_half_ulp(v in proptest::collection::vec(-1000.0f64..1000.0, 1..64)) {
            let rv = encode_values(&v, PARAM_SCALE).unwrap();
            for (a, b) in rv.decode_values().iter().zip(&v) {
                prop_assert!((a - b).abs() <= 0.5 / PARAM_SCALE as f64);
            }
        }
    }
}
