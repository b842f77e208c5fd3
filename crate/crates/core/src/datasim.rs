//! Synthetic taxi-order generator and client sharding.
//!
//! Records cluster around weighted spatial hotspots and follow weekly and
//! diurnal intensity profiles. Sharding splits a record set across clients
//! either uniformly (i.i.d.) or biased toward per-client affinities.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::pipeline::{write_records, BBox, DataRecord, PipelineError};

/// 2017-05-01T00:00:00Z, a Monday.
pub const DEFAULT_T0: i64 = 1_493_596_800;
pub const DAY: i64 = 86_400;
pub const SERVICES: [&str; 3] = ["express", "premier", "taxi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub name: String,
    /// Parent path in the region hierarchy, e.g. `west/high-tech`.
    pub region: String,
    pub lat: f64,
    pub lon: f64,
    /// Standard deviation of the scatter, in degrees.
    pub spread: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub count: usize,
    pub t0: i64,
    pub days: u32,
    pub hotspots: Vec<Hotspot>,
    /// Relative intensity per weekday, index 0 = the weekday of `t0`.
    pub weekly: [f64; 7],
    pub diurnal: [f64; 24],
    pub mean_trip_secs: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        let h = |name: &str, region: &str, lat, lon, spread, weight| Hotspot {
            name: name.into(),
            region: region.into(),
            lat,
            lon,
            spread,
            weight,
        };
        Self {
            count: 20_000,
            t0: DEFAULT_T0,
            days: 28,
            hotspots: vec![
                h("center", "inner/core", 30.66, 104.07, 0.02, 4.0),
                h("station", "inner/north", 30.70, 104.08, 0.012, 2.0),
                h("hightech", "outer/south", 30.56, 104.06, 0.025, 3.0),
                h("airport", "outer/west", 30.58, 103.96, 0.01, 1.0),
                h("campus", "outer/east", 30.63, 104.17, 0.015, 1.5),
                h("oldtown", "inner/west", 30.67, 104.02, 0.015, 1.5),
            ],
            weekly: [1.0, 0.95, 0.95, 1.0, 1.25, 1.4, 1.15],
            diurnal: [
                0.3, 0.2, 0.12, 0.1, 0.1, 0.15, 0.35, 0.8, 1.3, 1.2, 0.9, 0.95, 1.0, 0.95, 0.9,
                0.95, 1.05, 1.3, 1.4, 1.2, 1.0, 0.9, 0.7, 0.5,
            ],
            mean_trip_secs: 900.0,
            seed: 7,
        }
    }
}

impl GenSpec {
    /// Bounding box of the default city, used by chart presets.
    pub fn default_bbox() -> BBox {
        BBox {
            lat_lo: 30.45,
            lat_hi: 30.80,
            lon_lo: 103.88,
            lon_hi: 104.26,
        }
    }

    /// Leaf paths (`region/name`) of the hotspot hierarchy, in hotspot order.
    pub fn region_leaves(&self) -> Vec<String> {
        self.hotspots
            .iter()
            .map(|h| format!("{}/{}", h.region, h.name))
            .collect()
    }

    /// Every ordered `origin->destination` pair of hotspot names.
    pub fn flow_pairs(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in &self.hotspots {
            for b in &self.hotspots {
                out.push(format!("{}->{}", a.name, b.name));
            }
        }
        out
    }
}

fn scatter(rng: &mut ChaCha8Rng, center: f64, spread: f64, lo: f64, hi: f64) -> f64 {
    let v = if spread > 0.0 {
        center
            + Normal::new(0.0, spread)
                .expect("positive spread")
                .sample(rng)
    } else {
        center
    };
    v.clamp(lo, hi)
}

/// Generates `spec.count` records. Deterministic in `spec.seed`.
pub fn generate(spec: &GenSpec) -> Vec<DataRecord> {
    if spec.count == 0 || spec.hotspots.is_empty() || spec.days == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spots =
        WeightedIndex::new(spec.hotspots.iter().map(|h| h.weight)).expect("positive weights");
    let days = WeightedIndex::new((0..spec.days).map(|d| spec.weekly[d as usize % 7]))
        .expect("positive weekly profile");
    let hours = WeightedIndex::new(spec.diurnal).expect("positive diurnal profile");
    let trip = Exp::new(1.0 / spec.mean_trip_secs.max(1.0)).expect("positive mean");
    (0..spec.count)
        .map(|id| {
            let o = &spec.hotspots[spots.sample(&mut rng)];
            let d = &spec.hotspots[spots.sample(&mut rng)];
            let lat_o = scatter(&mut rng, o.lat, o.spread, -90.0, 90.0);
            let lon_o = scatter(&mut rng, o.lon, o.spread, -180.0, 180.0);
            let lat_d = scatter(&mut rng, d.lat, d.spread, -90.0, 90.0);
            let lon_d = scatter(&mut rng, d.lon, d.spread, -180.0, 180.0);
            let day = days.sample(&mut rng) as i64;
            let hour = hours.sample(&mut rng) as i64;
            let t_start = spec.t0 + day * DAY + hour * 3600 + rng.random_range(0..3600);
            let t_end = t_start + 120 + trip.sample(&mut rng) as i64;
            let service = SERVICES[rng.random_range(0..SERVICES.len())];
            let tags = vec![
                ("origin_zone".to_string(), o.name.clone()),
                ("dest_zone".to_string(), d.name.clone()),
                ("flow".to_string(), format!("{}->{}", o.name, d.name)),
                ("region".to_string(), format!("{}/{}", o.region, o.name)),
                ("service".to_string(), service.to_string()),
            ];
            DataRecord {
                id: id as u64,
                t_start,
                t_end,
                lat_o,
                lon_o,
                lat_d,
                lon_d,
                tags,
            }
        })
        .collect()
}

/// What a client is biased toward under non-i.i.d. sharding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Affinity {
    /// Per client: origin hotspot names it attracts.
    Hotspots(Vec<Vec<String>>),
    /// Per client: weekdays (0..7, relative to `t0`) it attracts.
    Weekdays { t0: i64, days: Vec<Vec<u8>> },
}

impl Affinity {
    /// Hotspot `k` goes to client `k % n`.
    pub fn round_robin(spec: &GenSpec, n: usize) -> Self {
        let mut per = vec![Vec::new(); n];
        for (k, h) in spec.hotspots.iter().enumerate() {
            per[k % n].push(h.name.clone());
        }
        Affinity::Hotspots(per)
    }

    fn matching(&self, rec: &DataRecord) -> Vec<usize> {
        match self {
            Affinity::Hotspots(per) => {
                let zone = rec.tag("origin_zone");
                per.iter()
                    .enumerate()
                    .filter(|(_, zs)| zone.is_some_and(|z| zs.iter().any(|s| s == z)))
                    .map(|(i, _)| i)
                    .collect()
            }
            Affinity::Weekdays { t0, days } => {
                let wd = ((rec.t_start - t0).div_euclid(DAY)).rem_euclid(7) as u8;
                days.iter()
                    .enumerate()
                    .filter(|(_, ds)| ds.contains(&wd))
                    .map(|(i, _)| i)
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShardPolicy {
    Iid {
        seed: u64,
    },
    /// With probability `alpha` a record goes to a client whose affinity it
    /// matches (uniform among matches); otherwise to a uniform client.
    /// `alpha = 0` is i.i.d., `alpha = 1` hard assignment.
    NonIid {
        alpha: f64,
        affinity: Affinity,
        seed: u64,
    },
}

impl ShardPolicy {
    pub fn tag(&self) -> String {
        match self {
            ShardPolicy::Iid { .. } => "iid".into(),
            ShardPolicy::NonIid { alpha, .. } => format!("noniid-{alpha}"),
        }
    }
}

/// Splits `records` into `n` disjoint shards whose union is the input.
pub fn shard(records: &[DataRecord], policy: &ShardPolicy, n: usize) -> Vec<Vec<DataRecord>> {
    let n = n.max(1);
    let mut out = vec![Vec::new(); n];
    match policy {
        ShardPolicy::Iid { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for r in records {
                out[rng.random_range(0..n)].push(r.clone());
            }
        }
        ShardPolicy::NonIid {
            alpha,
            affinity,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for r in records {
                let biased = rng.random::<f64>() < *alpha;
                let uniform = rng.random_range(0..n);
                let matches: Vec<usize> = affinity
                    .matching(r)
                    .into_iter()
                    .filter(|&i| i < n)
                    .collect();
                let pick = rng.random_range(0..matches.len().max(1));
                let dest = if biased && !matches.is_empty() {
                    matches[pick]
                } else {
                    uniform
                };
                out[dest].push(r.clone());
            }
        }
    }
    out
}

/// Shard file listing, one entry per client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clients: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u16,
    pub path: PathBuf,
    pub records: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DataSimError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self, DataSimError> {
        let m: Manifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        // relative shard paths are resolved against the manifest's directory
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Manifest {
            clients: m
                .clients
                .into_iter()
                .map(|mut e| {
                    if e.path.is_relative() {
                        e.path = base.join(&e.path);
                    }
                    e
                })
                .collect(),
        })
    }
}

/// Writes `client_<id>.csv` per shard plus `manifest.json` into `dir`.
/// Client ids start at 1.
pub fn write_shards(dir: &Path, shards: &[Vec<DataRecord>]) -> Result<Manifest, DataSimError> {
    std::fs::create_dir_all(dir)?;
    let mut clients = Vec::with_capacity(shards.len());
    for (i, s) in shards.iter().enumerate() {
        let id = (i + 1) as u16;
        let name = format!("client_{id}.csv");
        write_records(BufWriter::new(File::create(dir.join(&name))?), s)?;
        clients.push(ManifestEntry {
            id,
            path: PathBuf::from(name),
            records: s.len(),
        });
    }
    let manifest = Manifest { clients };
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(dir.join(Manifest::FILE_NAME))?),
        &manifest,
    )?;
    Ok(manifest)
}
