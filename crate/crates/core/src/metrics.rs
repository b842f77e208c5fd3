//! Accuracy measures between an exact and an approximate feature vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("exact vector has zero total magnitude")]
    DegenerateExact,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// `Σ|y − ŷ| / Σ|y|` with `y` the exact values.
pub fn relative_error(exact: &[f64], approx: &[f64]) -> Result<f64, MetricsError> {
    if exact.len() != approx.len() {
        return Err(MetricsError::LengthMismatch(exact.len(), approx.len()));
    }
    let denom: f64 = exact.iter().map(|y| y.abs()).sum();
    if denom == 0.0 {
        return Err(MetricsError::DegenerateExact);
    }
    let num: f64 = exact.iter().zip(approx).map(|(y, z)| (y - z).abs()).sum();
    Ok(num / denom)
}

fn normalize(v: &[f64], which: &str) -> Result<Vec<f64>, MetricsError> {
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(MetricsError::InvalidDistribution(format!(
            "{which} has entry {bad}"
        )));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(MetricsError::InvalidDistribution(format!(
            "{which} sums to zero"
        )));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

/// Σ p·log2(p/q), skipping `p = 0` terms.
fn kl2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).log2())
        .sum()
}

/// Jensen–Shannon divergence with base-2 logarithms, so the result lies in
/// `[0, 1]`. Both inputs are normalized by their sums first.
pub fn jsd(exact: &[f64], approx: &[f64]) -> Result<f64, MetricsError> {
    if exact.len() != approx.len() {
        return Err(MetricsError::LengthMismatch(exact.len(), approx.len()));
    }
    let p = normalize(exact, "exact")?;
    let q = normalize(approx, "approx")?;
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = 0.5 * kl2(&p, &m) + 0.5 * kl2(&q, &m);
    Ok(d.clamp(0.0, 1.0))
}

/// Negative predictions are clipped to zero before JSD, since a chart cannot
/// show negative counts.
pub fn jsd_clipped(exact: &[f64], approx: &[f64]) -> Result<f64, MetricsError> {
    let clipped: Vec<f64> = approx.iter().map(|v| v.max(0.0)).collect();
    jsd(exact, &clipped)
}

/// Accuracy of one experiment point plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub jsd: f64,
    pub re: f64,
    pub n_features: usize,
    pub rounds: u32,
    pub epochs: u32,
    pub clients: usize,
    pub granularity: String,
    pub distribution: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn re_examples() {
        assert_eq!(relative_error(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((relative_error(&[10.0], &[9.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((relative_error(&[0.0, 10.0], &[1.0, 10.0]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(
            relative_error(&[0.0], &[1.0]),
            Err(MetricsError::DegenerateExact)
        );
        assert!(relative_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        // direct summation: p = (1/2, 1/2), q = (3/4, 1/4), m = (5/8, 3/8)
        let p = [0.5f64, 0.5];
        let q = [0.75, 0.25];
        let m = [0.625, 0.375];
        let mut oracle = 0.0f64;
        for i in 0..2 {
            oracle += 0.5 * p[i] * (p[i] / m[i]).log2() + 0.5 * q[i] * (q[i] / m[i]).log2();
        }
        assert!((jsd(&[1.0, 1.0], &[3.0, 1.0]).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn jsd_rejects_bad_distributions() {
        assert!(matches!(
            jsd(&[1.0, -1.0], &[1.0, 1.0]),
            Err(MetricsError::InvalidDistribution(_))
        ));
        assert!(matches!(
            jsd(&[0.0, 0.0], &[1.0, 1.0]),
            Err(MetricsError::InvalidDistribution(_))
        ));
        assert!(jsd_clipped(&[1.0, 1.0], &[1.0, -0.5]).is_ok());
    }

    fn positive_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..100.0, 4)
            .prop_filter("positive sum", |v| v.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn jsd_symmetric_bounded(p in positive_vec(), q in positive_vec()) {
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn jsd_scale_invariant(p in positive_vec(), q in positive_vec(), k in 0.01f64..100.0) {
            let kp: Vec<f64> = p.iter().map(|x| x * k).collect();
            prop_assert!((jsd(&kp, &q).unwrap() - jsd(&p, &q).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn re_triangle_bound(y in positive_vec(), z in proptest::collection::vec(-50.0f64..50.0, 4), w in proptest::collection::vec(-50.0f64..50.0, 4)) {
            let denom: f64 = y.iter().map(|v| v.abs()).sum();
            let direct = relative_error(&y, &w).unwrap();
            let via: f64 = y.iter().zip(&z).map(|(a, b)| (a - b).abs()).sum::<f64>()
                + z.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum::<f64>();
            prop_assert!(direct <= via / denom + 1e-12);
            prop_assert_eq!(relative_error(&y, &y).unwrap(), 0.0);
        }
    }
}
