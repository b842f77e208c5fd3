use fedvis_core::model::{fed_average, init_global, ModelConfig, ModelParams};
use fedvis_core::pipeline::FeatureVector;
use fedvis_core::secagg::{
    aggregate_uploads, decode_fixed, encode_fixed, encode_values, expand_mask, masked_upload,
    sample_masks, ClientId, MaskedUpload, PairwiseMask, RingVector, SessionId, COUNT_SCALE,
    PARAM_SCALE,
};
use fedvis_core::sweep::secure_sum;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn ids(n: usize) -> Vec<ClientId> {
    (1..=n as u16).map(ClientId).collect()
}

fn all_masks(n: usize, m: usize, scale: u64, seed: u64) -> Vec<Vec<PairwiseMask>> {
    let all = ids(n);
    all.iter()
        .map(|&c| {
            let peers: Vec<_> = all.iter().copied().filter(|&p| p != c).collect();
            sample_masks(c, &peers, m, scale, seed.wrapping_add(c.0 as u64)).unwrap()
        })
        .collect()
}

fn run_protocol(encoded: &[RingVector], seed: u64) -> RingVector {
    let n = encoded.len();
    let masks = all_masks(n, encoded[0].len(), encoded[0].scale, seed);
    let session = SessionId([7; 16]);
    let uploads: Vec<MaskedUpload> = ids(n)
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let received: Vec<_> = masks
                .iter()
                .flatten()
                .filter(|mk| mk.to == c)
                .cloned()
                .collect();
            masked_upload(c, session, &encoded[i], &masks[i], &received).unwrap()
        })
        .collect();
    aggregate_uploads(&ids(n), &uploads).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pairwise_perturbations_cancel(n in 2usize..10, m in 1usize..48, seed in any::<u64>()) {
        // With zero plaintexts each upload is exactly P_i = sum_j (R_ij - R_ji).
        let zeros = vec![RingVector::zeros(m, COUNT_SCALE); n];
        let masks = all_masks(n, m, COUNT_SCALE, seed);
        let mut total = RingVector::zeros(m, COUNT_SCALE);
        let mut any_nonzero = false;
        for (i, c) in ids(n).into_iter().enumerate() {
            let received: Vec<_> = masks.iter().flatten().filter(|mk| mk.to == c).cloned().collect();
            let up = masked_upload(c, SessionId::default(), &zeros[i], &masks[i], &received).unwrap();
            any_nonzero |= up.payload.elems.iter().any(|&e| e != 0);
            total.add_assign(&up.payload);
        }
        prop_assert!(any_nonzero);
        prop_assert!(total.elems.iter().all(|&e| e == 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn masked_fed_average_matches_plaintext(n in 4usize..7, seed in any::<u64>()) {
        let cfg = ModelConfig {
            num_bins: 5,
            embed_dim: 3,
            hidden_dims: vec![4, 4, 3, 1],
            label_scale: 1.0,
        };
        let uploads: Vec<ModelParams> = (0..n)
            .map(|i| init_global(&cfg, seed.wrapping_add(i as u64)).unwrap())
            .collect();
        let plain = fed_average(&uploads).unwrap().flatten();
        let encoded: Vec<RingVector> = uploads
            .iter()
            .map(|p| encode_values(&p.flatten(), PARAM_SCALE).unwrap())
            .collect();
        let sum = run_protocol(&encoded, seed).decode_values();
        for (s, p) in sum.iter().zip(&plain) {
            let masked = s / n as f64;
            prop_assert!((masked - p).abs() <= 1.0 / PARAM_SCALE as f64, "{masked} vs {p}");
        }
    }
}

#[test]
fn masks_from_seed_equal_sent_vectors() {
    let masks = all_masks(4, 32, COUNT_SCALE, 99);
    for mk in masks.iter().flatten() {
        assert_eq!(expand_mask(mk.seed, 32, COUNT_SCALE), mk.r);
    }
}

/// Exactness over the full grid of client and bin counts.
#[test]
fn secure_sum_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid: Vec<(usize, usize)> = [4usize, 8, 16, 27]
        .iter()
        .flat_map(|&n| [49usize, 168, 4096].map(|m| (n, m)))
        .collect();
    for trial in 0..100 {
        let (n, m) = grid[trial % grid.len()];
        let vectors: Vec<FeatureVector> = (0..n)
            .map(|_| {
                FeatureVector::from_values(
                    "t",
                    (0..m).map(|_| rng.random_range(0..5000) as f64).collect(),
                )
            })
            .collect();
        let mut oracle = vec![0u64; m];
        for v in &vectors {
            for (o, x) in oracle.iter_mut().zip(&v.values) {
                *o += *x as u64;
            }
        }
        let (sum, _) = secure_sum(&vectors, COUNT_SCALE, trial as u64).unwrap();
        let expect: Vec<f64> = oracle.iter().map(|&x| x as f64).collect();
        assert_eq!(sum.values, expect, "trial {trial} n={n} m={m}");
    }
}

#[test]
fn fine_heatmap_eight_clients_exact() {
    let m = 190 * 84;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vectors: Vec<FeatureVector> = (0..8)
        .map(|_| {
            FeatureVector::from_values(
                "h",
                (0..m).map(|_| rng.random_range(0..40) as f64).collect(),
            )
        })
        .collect();
    let encoded: Vec<RingVector> = vectors
        .iter()
        .map(|v| encode_fixed(v, COUNT_SCALE).unwrap())
        .collect();
    let got = decode_fixed(&run_protocol(&encoded, 5), "h");
    let oracle: Vec<f64> = (0..m)
        .map(|j| vectors.iter().map(|v| v.values[j]).sum())
        .collect();
    assert_eq!(got.values, oracle);
}

/// Each resampling draws fresh masks for the same plaintext; the first
/// masked element's bytes should be indistinguishable from uniform.
#[test]
fn masked_upload_bytes_are_uniform() {
    let n = 4;
    let plain = encode_values(&[12345.0, 0.0, 7.0], COUNT_SCALE).unwrap();
    let mut counts = [0u64; 256];
    for s in 0..10_000u64 {
        let masks = all_masks(n, plain.len(), COUNT_SCALE, s.wrapping_mul(0x9E37_79B9));
        let c = ClientId(1);
        let received: Vec<_> = masks
            .iter()
            .flatten()
            .filter(|mk| mk.to == c)
            .cloned()
            .collect();
        let up = masked_upload(c, SessionId::default(), &plain, &masks[0], &received).unwrap();
        for b in up.payload.elems[0].to_le_bytes() {
            counts[b as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / 256.0;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat:.1}, p = {p:.5}");
}
