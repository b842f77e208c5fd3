//! Experiment harness: in-memory runs of both schemes and parameter sweeps.
//!
//! Every grid point generates data, shards it, bins it on each client, then
//! recovers the global vector either by secure summation or by federated
//! training. Accuracy is measured against the centralized sum. Points are
//! repeated over seeds and the median is reported.

use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compose::{ChartSpec, ComposeError, Scheme};
use crate::datasim::{generate, shard, Affinity, GenSpec, ShardPolicy};
use crate::metrics::{jsd_clipped, relative_error, AccuracyReport, MetricsError};
use crate::model::{
    default_client_seeds, local_max, predict_all, run_federated_training_seeded,
    shared_label_scale, ModelConfig, ModelError, RoundReport, TrainConfig,
};
use crate::pipeline::{aggregate, FeatureVector, PartitionKind, PipelineError};
use crate::secagg::{
    decode_fixed, encode_fixed, masked_upload, sample_masks, AggSession, ClientId, PairwiseMask,
    RingVector, SecAggError, SessionId, COUNT_SCALE,
};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("invalid sweep: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wall-clock milliseconds per phase. Phases a scheme does not use stay 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    /// Stages 1 and 2 on every client.
    pub local_ms: f64,
    /// Sampling the pairwise random vectors.
    pub mask_gen_ms: f64,
    /// Moving the random vectors between peers.
    pub mask_exchange_ms: f64,
    /// Masking, uploading, summing and decoding.
    pub encrypt_decrypt_ms: f64,
    pub train_ms: f64,
    pub total_ms: f64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn session_for(seed: u64) -> SessionId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id = [0u8; 16];
    rng.fill_bytes(&mut id);
    SessionId(id)
}

/// Runs the masking protocol in memory over `vectors` (one per client, ids
/// 1..=N) and returns the decoded sum. Requires at least four clients.
pub fn secure_sum(
    vectors: &[FeatureVector],
    scale: u64,
    seed: u64,
) -> Result<(FeatureVector, PhaseTimings), SweepError> {
    let first = vectors
        .first()
        .ok_or_else(|| SweepError::InvalidGrid("no client vectors".into()))?;
    let m = first.len();
    let ids: Vec<ClientId> = (1..=vectors.len() as u16).map(ClientId).collect();
    let mut session = AggSession::new(session_for(seed), ids.clone(), first.spec_id.clone(), m)?;
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let sent: Vec<Vec<PairwiseMask>> = ids
        .iter()
        .map(|&c| {
            let peers: Vec<ClientId> = ids.iter().copied().filter(|&p| p != c).collect();
            sample_masks(c, &peers, m, scale, seed ^ ((c.0 as u64) << 48))
        })
        .collect::<Result<_, _>>()?;
    timings.mask_gen_ms = ms_since(t);

    // Each vector crosses the wire as bytes, as it would between processes.
    let t = Instant::now();
    let mut received: Vec<Vec<PairwiseMask>> = vec![Vec::new(); ids.len()];
    for masks in &sent {
        for mk in masks {
            let bytes = mk.r.to_le_bytes();
            let r = RingVector::from_le_bytes(&bytes, scale).expect("whole words");
            session.record_mask(mk.from, mk.to)?;
            received[(mk.to.0 - 1) as usize].push(PairwiseMask { r, ..mk.clone() });
        }
    }
    timings.mask_exchange_ms = ms_since(t);

    let t = Instant::now();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != m {
            return Err(SecAggError::LengthMismatch {
                expected: m,
                got: v.len(),
            }
            .into());
        }
        let enc = encode_fixed(v, scale)?;
        session.record_upload(masked_upload(
            ids[i],
            session.id(),
            &enc,
            &sent[i],
            &received[i],
        )?)?;
    }
    let sum = decode_fixed(&session.finalize()?, &first.spec_id);
    timings.encrypt_decrypt_ms = ms_since(t);
    Ok((sum, timings))
}

/// Trains the federated model on `vectors` and returns the composed-scale
/// estimate of the global vector (`N` times the per-client prediction).
pub fn federated_estimate(
    vectors: &[FeatureVector],
    tcfg: &TrainConfig,
) -> Result<(FeatureVector, Vec<RoundReport>), SweepError> {
    let first = vectors
        .first()
        .ok_or_else(|| SweepError::InvalidGrid("no client vectors".into()))?;
    let maxima: Vec<f64> = vectors.iter().map(local_max).collect();
    let mcfg = ModelConfig::new(first.len()).with_label_scale(shared_label_scale(&maxima));
    let seeds = default_client_seeds(tcfg.seed, vectors.len());
    let (params, reports) = run_federated_training_seeded(vectors, &seeds, &mcfg, tcfg)?;
    let mut out = predict_all(&params, &first.spec_id);
    let n = vectors.len() as f64;
    out.values.iter_mut().for_each(|v| *v *= n);
    Ok((out, reports))
}

/// Elementwise sum of plaintext vectors: the centralized oracle.
pub fn plain_sum(vectors: &[FeatureVector]) -> Vec<f64> {
    let m = vectors.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; m];
    for v in vectors {
        for (a, b) in out.iter_mut().zip(&v.values) {
            *a += b;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityKind {
    /// Clients attract origin hotspots round-robin.
    #[default]
    Hotspots,
    /// Clients attract weekdays round-robin.
    Weekdays,
}

/// One experiment configuration. Sweeps vary a single field of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfig {
    pub chart: ChartSpec,
    pub scheme: Scheme,
    pub gen: GenSpec,
    pub clients: usize,
    /// Non-i.i.d. strength; 0 shards uniformly.
    pub alpha: f64,
    pub affinity: AffinityKind,
    pub train: TrainConfig,
}

impl PointConfig {
    pub fn policy(&self, seed: u64) -> ShardPolicy {
        if self.alpha <= 0.0 {
            return ShardPolicy::Iid { seed };
        }
        let affinity = match self.affinity {
            AffinityKind::Hotspots => Affinity::round_robin(&self.gen, self.clients),
            AffinityKind::Weekdays => {
                let mut days = vec![Vec::new(); self.clients];
                for d in 0..7u8 {
                    days[d as usize % self.clients].push(d);
                }
                Affinity::Weekdays {
                    t0: self.gen.t0,
                    days,
                }
            }
        };
        ShardPolicy::NonIid {
            alpha: self.alpha,
            affinity,
            seed,
        }
    }

    pub fn distribution_tag(&self) -> String {
        if self.alpha <= 0.0 {
            "iid".into()
        } else {
            let a = match self.affinity {
                AffinityKind::Hotspots => "hotspots",
                AffinityKind::Weekdays => "weekdays",
            };
            format!("noniid-{a}-{}", self.alpha)
        }
    }

    /// Bins each shard of the generated data set. Generator, shard and
    /// training seeds all derive from `seed`.
    pub fn client_vectors(&self, seed: u64) -> Result<Vec<FeatureVector>, SweepError> {
        self.chart.validate()?;
        let gen = GenSpec {
            seed,
            ..self.gen.clone()
        };
        let records = generate(&gen);
        Ok(shard(&records, &self.policy(seed), self.clients)
            .iter()
            .map(|s| aggregate(s, &self.chart.partition))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointOutcome {
    pub report: AccuracyReport,
    pub timings: PhaseTimings,
    pub exact: Vec<f64>,
    pub approx: Vec<f64>,
    pub rounds_run: u32,
}

fn granularity_label(kind: &PartitionKind) -> String {
    match kind {
        PartitionKind::Time1D(t) => t.bins.to_string(),
        PartitionKind::Grid2D { rows, cols, .. } => format!("{rows}x{cols}"),
        PartitionKind::OD4D {
            origin_rows,
            origin_cols,
            dest_rows,
            dest_cols,
            ..
        } => format!("{origin_rows}x{origin_cols}x{dest_rows}x{dest_cols}"),
        PartitionKind::TreeLeaves { leaves, .. } => leaves.len().to_string(),
        PartitionKind::Category1D { categories, .. } => categories.len().to_string(),
        PartitionKind::TimeCategory {
            time, categories, ..
        } => format!("{}x{}", time.bins, categories.len()),
    }
}

/// Runs one configuration end to end with `seed`.
pub fn run_point(cfg: &PointConfig, seed: u64) -> Result<PointOutcome, SweepError> {
    let start = Instant::now();
    let t = Instant::now();
    let vectors = cfg.client_vectors(seed)?;
    let mut timings = PhaseTimings {
        local_ms: ms_since(t),
        ..Default::default()
    };
    let exact = plain_sum(&vectors);
    let (approx, rounds_run) = match cfg.scheme {
        Scheme::QueryBased => {
            let (sum, t) = secure_sum(&vectors, COUNT_SCALE, seed)?;
            timings.mask_gen_ms = t.mask_gen_ms;
            timings.mask_exchange_ms = t.mask_exchange_ms;
            timings.encrypt_decrypt_ms = t.encrypt_decrypt_ms;
            (sum.values, 0)
        }
        Scheme::PredictionBased => {
            let t = Instant::now();
            let tcfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let (est, reports) = federated_estimate(&vectors, &tcfg)?;
            timings.train_ms = ms_since(t);
            (est.values, reports.len() as u32)
        }
    };
    timings.total_ms = ms_since(start);
    let report = AccuracyReport {
        jsd: jsd_clipped(&exact, &approx)?,
        re: relative_error(&exact, &approx)?,
        n_features: exact.len(),
        rounds: if cfg.scheme.is_exact() {
            0
        } else {
            cfg.train.rounds
        },
        epochs: if cfg.scheme.is_exact() {
            0
        } else {
            cfg.train.epochs
        },
        clients: cfg.clients,
        granularity: granularity_label(&cfg.chart.partition.partition),
        distribution: cfg.distribution_tag(),
    };
    Ok(PointOutcome {
        report,
        timings,
        exact,
        approx,
        rounds_run,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rounds,
    Epochs,
    Clients,
    /// Bins per partition axis (rows and cols for grids).
    Granularity,
    /// Non-i.i.d. strength alpha.
    Distribution,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rounds" => Ok(Self::Rounds),
            "epochs" => Ok(Self::Epochs),
            "clients" => Ok(Self::Clients),
            "granularity" => Ok(Self::Granularity),
            "distribution" => Ok(Self::Distribution),
            _ => Err(format!(
                "unknown axis {s:?} (rounds|epochs|clients|granularity|distribution)"
            )),
        }
    }
}

fn positive_int(v: f64) -> Result<usize, SweepError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(SweepError::InvalidGrid(format!(
            "{v} is not a positive integer"
        )))
    }
}

/// `base` with the swept field set to `value`.
pub fn apply_axis(
    base: &PointConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<PointConfig, SweepError> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Rounds => cfg.train.rounds = positive_int(value)? as u32,
        SweepAxis::Epochs => cfg.train.epochs = positive_int(value)? as u32,
        SweepAxis::Clients => cfg.clients = positive_int(value)?,
        SweepAxis::Distribution => {
            if !(0.0..=1.0).contains(&value) {
                return Err(SweepError::InvalidGrid(format!(
                    "alpha {value} outside [0, 1]"
                )));
            }
            cfg.alpha = value;
        }
        SweepAxis::Granularity => {
            let g = positive_int(value)?;
            match &mut cfg.chart.partition.partition {
                PartitionKind::Time1D(t) => t.bins = g,
                PartitionKind::TimeCategory { time, .. } => time.bins = g,
                PartitionKind::Grid2D { rows, cols, .. } => {
                    *rows = g;
                    *cols = g;
                }
                PartitionKind::OD4D {
                    origin_rows,
                    origin_cols,
                    dest_rows,
                    dest_cols,
                    ..
                } => {
                    *origin_rows = g;
                    *origin_cols = g;
                    *dest_rows = g;
                    *dest_cols = g;
                }
                other => {
                    return Err(SweepError::InvalidGrid(format!(
                        "granularity is fixed by the key list of {other:?}"
                    )))
                }
            }
        }
    }
    Ok(cfg)
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One CSV row. Field order is the column order and must stay stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub clients: usize,
    pub rounds: u32,
    pub epochs: u32,
    pub granularity: String,
    pub distribution: String,
    pub n_features: usize,
    pub seeds: usize,
    pub re_median: f64,
    pub jsd_median: f64,
    pub local_ms: f64,
    pub mask_gen_ms: f64,
    pub mask_exchange_ms: f64,
    pub encrypt_decrypt_ms: f64,
    pub train_ms: f64,
    pub total_ms: f64,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "axis",
    "value",
    "scheme",
    "clients",
    "rounds",
    "epochs",
    "granularity",
    "distribution",
    "n_features",
    "seeds",
    "re_median",
    "jsd_median",
    "local_ms",
    "mask_gen_ms",
    "mask_exchange_ms",
    "encrypt_decrypt_ms",
    "train_ms",
    "total_ms",
];

/// Runs every grid value over every seed, sequentially so that timings are
/// not distorted by sibling points.
pub fn sweep(
    axis: SweepAxis,
    grid: &[f64],
    base: &PointConfig,
    seeds: &[u64],
) -> Result<Vec<SweepRow>, SweepError> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(SweepError::InvalidGrid("empty grid or seed list".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let cfg = apply_axis(base, axis, value)?;
        let outcomes: Vec<PointOutcome> = seeds
            .iter()
            .map(|&s| run_point(&cfg, s))
            .collect::<Result<_, _>>()?;
        let col =
            |f: &dyn Fn(&PointOutcome) -> f64| median(&outcomes.iter().map(f).collect::<Vec<_>>());
        let r = &outcomes[0].report;
        rows.push(SweepRow {
            axis: format!("{axis:?}").to_lowercase(),
            value,
            scheme: cfg.scheme.name().to_string(),
            clients: r.clients,
            rounds: r.rounds,
            epochs: r.epochs,
            granularity: r.granularity.clone(),
            distribution: r.distribution.clone(),
            n_features: r.n_features,
            seeds: seeds.len(),
            re_median: col(&|o| o.report.re),
            jsd_median: col(&|o| o.report.jsd),
            local_ms: col(&|o| o.timings.local_ms),
            mask_gen_ms: col(&|o| o.timings.mask_gen_ms),
            mask_exchange_ms: col(&|o| o.timings.mask_exchange_ms),
            encrypt_decrypt_ms: col(&|o| o.timings.encrypt_decrypt_ms),
            train_ms: col(&|o| o.timings.train_ms),
            total_ms: col(&|o| o.timings.total_ms),
        });
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
