use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ModelConfig, RoundReport, TrainConfig};
use super::net::{forward, forward_normalized, loss_and_grad};
use super::params::{fed_average, init_global, ModelParams};
use super::ModelError;
use crate::pipeline::FeatureVector;

/// Mixes a base seed with two stream coordinates (splitmix64 finalizer).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z =
        base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Label scale shared by all clients: the mean of the clients' maximum bin
/// values. In live sessions the maxima are combined through the secure sum,
/// so no single client's maximum is revealed.
pub fn shared_label_scale(maxima: &[f64]) -> f64 {
    if maxima.is_empty() {
        return 1.0;
    }
    let mean = maxima.iter().sum::<f64>() / maxima.len() as f64;
    if mean > 0.0 && mean.is_finite() {
        mean
    } else {
        1.0
    }
}

pub fn local_max(data: &FeatureVector) -> f64 {
    (0..data.len())
        .filter(|&j| data.is_present(j))
        .map(|j| data.values[j].abs())
        .fold(0.0, f64::max)
}

/// Mean squared error in label units over the bins this client holds.
pub fn evaluate_loss(params: &ModelParams, data: &FeatureVector) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in (0..data.len()).filter(|&j| data.is_present(j)) {
        let e = forward(params, j)? - data.values[j];
        sum += e * e;
        n += 1;
    }
    let loss = if n == 0 { 0.0 } else { sum / n as f64 };
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(ModelError::NonFiniteLoss)
    }
}

/// Runs `cfg.epochs` epochs of mini-batch SGD on `(j, values[j] / label_scale)`
/// for every present bin, starting from `params`. Returns the trained
/// parameters and the final mean squared error in label units.
pub fn local_train(
    params: &ModelParams,
    data: &FeatureVector,
    cfg: &TrainConfig,
) -> Result<(ModelParams, f64), ModelError> {
    cfg.validate()?;
    if data.len() != params.num_bins() {
        return Err(ModelError::ShapeMismatch(format!(
            "feature vector of length {} for a model over {} bins",
            data.len(),
            params.num_bins()
        )));
    }
    let scale = params.label_scale;
    let mut pairs: Vec<(usize, f64)> = (0..data.len())
        .filter(|&j| data.is_present(j))
        .map(|j| (j, data.values[j] / scale))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = params.clone();
    for _ in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_grad(&p, batch)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss);
            }
            grads.apply(&mut p, cfg.learning_rate);
        }
    }
    if !p.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    let loss = evaluate_loss(&p, data)?;
    Ok((p, loss))
}

/// Per-client training seed for a round.
pub fn client_round_seed(client_seed: u64, round: u32) -> u64 {
    derive_seed(client_seed, round as u64, 0x006c_6f63_616c)
}

/// Default per-client base seeds derived from the run seed.
pub fn default_client_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|i| derive_seed(seed, i as u64, 0x636c_6965_6e74))
        .collect()
}

/// Consecutive rounds whose global-loss change must stay under the tolerance
/// before training stops early. A single quiet round is common under SGD noise.
pub const CONVERGENCE_PATIENCE: u32 = 3;

/// Early-stopping rule on the per-round global loss.
#[derive(Debug, Clone)]
pub struct Convergence {
    tolerance: f64,
    norm: f64,
    prev: Option<f64>,
    calm: u32,
}

impl Convergence {
    /// `label_scale` converts losses back to normalized units.
    pub fn new(tolerance: f64, label_scale: f64) -> Self {
        Self {
            tolerance,
            norm: label_scale * label_scale,
            prev: None,
            calm: 0,
        }
    }

    /// Records one round's global loss; true once training should stop.
    pub fn observe(&mut self, global_loss: f64) -> bool {
        let calm = self
            .prev
            .is_some_and(|p| ((global_loss - p) / self.norm).abs() < self.tolerance);
        self.calm = if calm { self.calm + 1 } else { 0 };
        self.prev = Some(global_loss);
        self.calm >= CONVERGENCE_PATIENCE
    }
}

/// In-memory federated training: each round broadcasts the global model,
/// trains every client locally, then averages. Stops after `rounds` or once
/// the global loss has moved by less than `tolerance` (normalized units) for
/// [`CONVERGENCE_PATIENCE`] rounds in a row.
pub fn run_federated_training(
    clients: &[FeatureVector],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelParams, Vec<RoundReport>), ModelError> {
    let seeds = default_client_seeds(tcfg.seed, clients.len());
    run_federated_training_seeded(clients, &seeds, mcfg, tcfg)
}

/// As [`run_federated_training`] with explicit per-client base seeds.
pub fn run_federated_training_seeded(
    clients: &[FeatureVector],
    client_seeds: &[u64],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ModelParams, Vec<RoundReport>), ModelError> {
    mcfg.validate()?;
    tcfg.validate()?;
    if clients.is_empty() {
        return Err(ModelError::NoUploads);
    }
    if client_seeds.len() != clients.len() {
        return Err(ModelError::InvalidConfig(
            "one seed per client required".into(),
        ));
    }
    if let Some(bad) = clients.iter().find(|c| c.len() != mcfg.num_bins) {
        return Err(ModelError::ShapeMismatch(format!(
            "client vector of length {} for {} bins",
            bad.len(),
            mcfg.num_bins
        )));
    }
    let mut global = init_global(mcfg, tcfg.seed)?;
    let mut reports: Vec<RoundReport> = Vec::new();
    let mut stop = Convergence::new(tcfg.tolerance, mcfg.label_scale);
    for round in 1..=tcfg.rounds {
        let results: Vec<(ModelParams, f64)> = clients
            .par_iter()
            .zip(client_seeds)
            .map(|(data, &seed)| {
                let cfg = TrainConfig {
                    seed: client_round_seed(seed, round),
                    ..tcfg.clone()
                };
                local_train(&global, data, &cfg)
            })
            .collect::<Result<_, _>>()?;
        let (uploads, losses): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        global = fed_average(&uploads)?;
        let report = RoundReport::new(round, losses);
        let done = stop.observe(report.global_loss);
        reports.push(report);
        if done {
            break;
        }
    }
    Ok((global, reports))
}

/// Feeds every index through the model. Values are per-client averages in
/// label units.
pub fn predict_all(params: &ModelParams, spec_id: &str) -> FeatureVector {
    let values = (0..params.num_bins())
        .map(|j| forward_normalized(params, j).expect("index in range") * params.label_scale)
        .collect();
    FeatureVector::from_values(spec_id, values)
}
