use fedvis_core::compose::{find_preset, Scheme};
use fedvis_core::datasim::GenSpec;
use fedvis_core::model::{
    init_global, local_max, loss_and_grad, run_federated_training, shared_label_scale, ModelConfig,
    ModelParams, TrainConfig,
};
use fedvis_core::sweep::{AffinityKind, PointConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line forward pass written against the raw tensors, independent
/// of the library's traced implementation.
fn naive_forward(p: &ModelParams, j: usize) -> f64 {
    let emb = &p.tensors[0];
    let mut x: Vec<f64> = emb.data[j * emb.cols..(j + 1) * emb.cols].to_vec();
    for l in 0..4 {
        let w = &p.tensors[1 + 2 * l];
        let b = &p.tensors[2 + 2 * l];
        let mut y = vec![0.0; w.cols];
        for o in 0..w.cols {
            let mut acc = b.data[o];
            for i in 0..w.rows {
                acc += x[i] * w.data[i * w.cols + o];
            }
            y[o] = if l < 3 { acc.max(0.0) } else { acc };
        }
        x = y;
    }
    x[0]
}

fn naive_loss(p: &ModelParams, batch: &[(usize, f64)]) -> f64 {
    batch
        .iter()
        .map(|&(j, t)| (naive_forward(p, j) - t).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

#[test]
fn gradients_match_central_differences() {
    let cfg = ModelConfig {
        num_bins: 5,
        embed_dim: 4,
        hidden_dims: vec![6, 5, 4, 1],
        label_scale: 1.0,
    };
    let mut params = init_global(&cfg, 11).unwrap();
    // Non-zero biases keep the ReLUs away from their kinks.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in params.tensors.iter_mut().skip(2).step_by(2) {
        t.data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.05..0.3));
    }
    let batch: Vec<(usize, f64)> = (0..5).map(|j| (j, 0.2 * j as f64 - 0.3)).collect();
    let (loss, grads) = loss_and_grad(&params, &batch).unwrap();
    assert!((loss - naive_loss(&params, &batch)).abs() < 1e-12);
    let analytic = grads.to_params(&params);

    let h = 1e-4;
    for (ti, t) in params.tensors.iter().enumerate() {
        let mut diff_sq = 0.0;
        let mut norm_sq = 0.0;
        for k in 0..t.data.len() {
            let mut plus = params.clone();
            plus.tensors[ti].data[k] += h;
            let mut minus = params.clone();
            minus.tensors[ti].data[k] -= h;
            let numeric = (naive_loss(&plus, &batch) - naive_loss(&minus, &batch)) / (2.0 * h);
            let a = analytic.tensors[ti].data[k];
            diff_sq += (a - numeric).powi(2);
            norm_sq += a.powi(2).max(numeric.powi(2));
        }
        let rel = diff_sq.sqrt() / norm_sq.sqrt().max(1e-12);
        assert!(rel < 1e-4, "tensor {ti}: relative error {rel:e}");
    }
}

/// Global loss after round t+5 is no higher than after round t, for t in the
/// first 30 rounds, taking the median over five seeds.
#[test]
fn global_loss_trends_down() {
    let gen = GenSpec::default();
    let base = PointConfig {
        chart: find_preset(&gen, "week-histogram").unwrap().chart,
        scheme: Scheme::PredictionBased,
        gen,
        clients: 5,
        alpha: 0.0,
        affinity: AffinityKind::Hotspots,
        train: TrainConfig::default(),
    };
    let rounds = 35;
    let mut curves = Vec::new();
    for s in 0..5u64 {
        let vectors = base.client_vectors(100 + s).unwrap();
        let maxima: Vec<f64> = vectors.iter().map(local_max).collect();
        let mcfg = ModelConfig::new(7).with_label_scale(shared_label_scale(&maxima));
        let tcfg = TrainConfig {
            rounds,
            tolerance: 0.0,
            seed: 100 + s,
            ..TrainConfig::default()
        };
        let (_, reports) = run_federated_training(&vectors, &mcfg, &tcfg).unwrap();
        assert_eq!(reports.len(), rounds as usize);
        curves.push(reports.iter().map(|r| r.global_loss).collect::<Vec<_>>());
    }
    let median_at = |t: usize| {
        let mut v: Vec<f64> = curves.iter().map(|c| c[t]).collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    for t in 0..30 {
        assert!(
            median_at(t + 5) <= median_at(t),
            "round {} loss {} above round {} loss {}",
            t + 6,
            median_at(t + 5),
            t + 1,
            median_at(t)
        );
    }
}
