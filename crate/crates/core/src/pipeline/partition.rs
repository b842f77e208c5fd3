use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::{BBox, DataRecord};
use super::PipelineError;

/// Which endpoint of a trip drives spatial binning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialAnchor {
    #[default]
    Origin,
    Destination,
}

/// Which timestamp drives temporal binning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeAnchor {
    #[default]
    Start,
    End,
}

/// Numeric field summed by [`AggregateFn::Sum`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SumField {
    /// `t_end - t_start` in seconds.
    Duration,
    /// A tag whose value parses as a number. Records without it are skipped.
    Tag(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregateFn {
    #[default]
    Count,
    Sum(SumField),
}

/// Uniform half-open time bins over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBins {
    pub start: i64,
    pub end: i64,
    pub bins: usize,
}

impl TimeBins {
    fn index(&self, t: i64) -> Option<usize> {
        if t < self.start || t >= self.end {
            return None;
        }
        // floor((t - start) / width) with width = (end - start) / bins, in exact integers
        let idx = (t - self.start) as i128 * self.bins as i128 / (self.end - self.start) as i128;
        Some(idx as usize)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.bins == 0 || self.start >= self.end {
            return Err(PipelineError::InvalidSpec(format!("time bins {self:?}")));
        }
        if (self.end - self.start) < self.bins as i64 {
            return Err(PipelineError::InvalidSpec(
                "time bins narrower than one second".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PartitionKind {
    Time1D(TimeBins),
    Grid2D {
        bbox: BBox,
        rows: usize,
        cols: usize,
    },
    /// Origin grid crossed with destination grid, both over the same bbox.
    OD4D {
        bbox: BBox,
        origin_rows: usize,
        origin_cols: usize,
        dest_rows: usize,
        dest_cols: usize,
    },
    /// Ordered leaf paths (`a/b/c`) matched against the value of tag `key`.
    TreeLeaves {
        key: String,
        leaves: Vec<String>,
    },
    /// Ordered category values matched against the value of tag `key`.
    Category1D {
        key: String,
        categories: Vec<String>,
    },
    /// Time bins refined by a category, flattened `time * categories + category`.
    /// Backs stacked histograms.
    TimeCategory {
        time: TimeBins,
        key: String,
        categories: Vec<String>,
    },
}

/// Declarative binning rule that defines the index space shared by all clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub partition: PartitionKind,
    #[serde(default)]
    pub aggregate: AggregateFn,
    #[serde(default)]
    pub spatial_anchor: SpatialAnchor,
    #[serde(default)]
    pub time_anchor: TimeAnchor,
}

fn grid_cell(lo: f64, hi: f64, n: usize, x: f64) -> usize {
    let width = (hi - lo) / n as f64;
    (((x - lo) / width).floor() as usize).min(n - 1)
}

fn unique(items: &[String]) -> bool {
    let mut seen = std::collections::HashSet::new();
    items.iter().all(|s| seen.insert(s))
}

impl PartitionSpec {
    pub fn new(partition: PartitionKind) -> Self {
        Self {
            partition,
            aggregate: AggregateFn::Count,
            spatial_anchor: SpatialAnchor::Origin,
            time_anchor: TimeAnchor::Start,
        }
    }

    pub fn time(start: i64, end: i64, bins: usize) -> Self {
        Self::new(PartitionKind::Time1D(TimeBins { start, end, bins }))
    }

    pub fn grid(bbox: BBox, rows: usize, cols: usize) -> Self {
        Self::new(PartitionKind::Grid2D { bbox, rows, cols })
    }

    pub fn with_aggregate(mut self, aggregate: AggregateFn) -> Self {
        self.aggregate = aggregate;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match &self.partition {
            PartitionKind::Time1D(t) => t.validate()?,
            PartitionKind::Grid2D { bbox, rows, cols } => {
                bbox.validate()?;
                if *rows == 0 || *cols == 0 {
                    return Err(PipelineError::InvalidSpec("empty grid".into()));
                }
            }
            PartitionKind::OD4D {
                bbox,
                origin_rows,
                origin_cols,
                dest_rows,
                dest_cols,
            } => {
                bbox.validate()?;
                if [origin_rows, origin_cols, dest_rows, dest_cols].contains(&&0) {
                    return Err(PipelineError::InvalidSpec("empty OD grid".into()));
                }
            }
            PartitionKind::TreeLeaves { leaves: items, .. }
            | PartitionKind::Category1D {
                categories: items, ..
            } => {
                if items.is_empty() || !unique(items) {
                    return Err(PipelineError::InvalidSpec(
                        "keys must be non-empty and unique".into(),
                    ));
                }
            }
            PartitionKind::TimeCategory {
                time, categories, ..
            } => {
                time.validate()?;
                if categories.is_empty() || !unique(categories) {
                    return Err(PipelineError::InvalidSpec(
                        "categories must be non-empty and unique".into(),
                    ));
                }
            }
        }
        self.checked_len().map(|_| ())
    }

    fn checked_len(&self) -> Result<usize, PipelineError> {
        let dims: Vec<usize> = match &self.partition {
            PartitionKind::Time1D(t) => vec![t.bins],
            PartitionKind::Grid2D { rows, cols, .. } => vec![*rows, *cols],
            PartitionKind::OD4D {
                origin_rows,
                origin_cols,
                dest_rows,
                dest_cols,
                ..
            } => vec![*origin_rows, *origin_cols, *dest_rows, *dest_cols],
            PartitionKind::TreeLeaves { leaves, .. } => vec![leaves.len()],
            PartitionKind::Category1D { categories, .. } => vec![categories.len()],
            PartitionKind::TimeCategory {
                time, categories, ..
            } => vec![time.bins, categories.len()],
        };
        dims.iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|m| *m >= 1)
            .ok_or_else(|| PipelineError::InvalidSpec("bin count overflows or is zero".into()))
    }

    /// Total bin count M.
    pub fn len(&self) -> usize {
        self.checked_len().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stable identifier: truncated SHA-256 of the canonical JSON form.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("partition spec serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    fn anchor_point(&self, rec: &DataRecord) -> (f64, f64) {
        match self.spatial_anchor {
            SpatialAnchor::Origin => (rec.lat_o, rec.lon_o),
            SpatialAnchor::Destination => (rec.lat_d, rec.lon_d),
        }
    }

    fn anchor_time(&self, rec: &DataRecord) -> i64 {
        match self.time_anchor {
            TimeAnchor::Start => rec.t_start,
            TimeAnchor::End => rec.t_end,
        }
    }

    /// Flat bin index of `rec`, or `None` when it falls outside the partition.
    pub fn bin_index(&self, rec: &DataRecord) -> Option<usize> {
        match &self.partition {
            PartitionKind::Time1D(t) => t.index(self.anchor_time(rec)),
            PartitionKind::Grid2D { bbox, rows, cols } => {
                let (lat, lon) = self.anchor_point(rec);
                if !bbox.contains(lat, lon) {
                    return None;
                }
                let r = grid_cell(bbox.lat_lo, bbox.lat_hi, *rows, lat);
                let c = grid_cell(bbox.lon_lo, bbox.lon_hi, *cols, lon);
                Some(r * cols + c)
            }
            PartitionKind::OD4D {
                bbox,
                origin_rows,
                origin_cols,
                dest_rows,
                dest_cols,
            } => {
                if !bbox.contains(rec.lat_o, rec.lon_o) || !bbox.contains(rec.lat_d, rec.lon_d) {
                    return None;
                }
                let or = grid_cell(bbox.lat_lo, bbox.lat_hi, *origin_rows, rec.lat_o);
                let oc = grid_cell(bbox.lon_lo, bbox.lon_hi, *origin_cols, rec.lon_o);
                let dr = grid_cell(bbox.lat_lo, bbox.lat_hi, *dest_rows, rec.lat_d);
                let dc = grid_cell(bbox.lon_lo, bbox.lon_hi, *dest_cols, rec.lon_d);
                Some(((or * origin_cols + oc) * dest_rows + dr) * dest_cols + dc)
            }
            PartitionKind::TreeLeaves { key, leaves: items }
            | PartitionKind::Category1D {
                key,
                categories: items,
            } => {
                let v = rec.tag(key)?;
                items.iter().position(|s| s == v)
            }
            PartitionKind::TimeCategory {
                time,
                key,
                categories,
            } => {
                let t = time.index(self.anchor_time(rec))?;
                let v = rec.tag(key)?;
                let c = categories.iter().position(|s| s == v)?;
                Some(t * categories.len() + c)
            }
        }
    }

    fn weight(&self, rec: &DataRecord) -> Option<f64> {
        match &self.aggregate {
            AggregateFn::Count => Some(1.0),
            AggregateFn::Sum(SumField::Duration) => Some(rec.duration() as f64),
            AggregateFn::Sum(SumField::Tag(k)) => rec.tag(k)?.parse::<f64>().ok(),
        }
    }
}

/// Dense per-bin aggregates; position `j` holds the value for flat index `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub spec_id: String,
    pub values: Vec<f64>,
    /// Bins this client has no attribute data for. `None` means every bin is
    /// present. Absent bins hold zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub present: Option<Vec<bool>>,
}

impl FeatureVector {
    pub fn zeros(spec_id: impl Into<String>, len: usize) -> Self {
        Self {
            spec_id: spec_id.into(),
            values: vec![0.0; len],
            present: None,
        }
    }

    pub fn from_values(spec_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            spec_id: spec_id.into(),
            values,
            present: None,
        }
    }

    /// Densifies sparse `(index, value)` pairs, zero-filling the rest. Missing
    /// keys are marked absent.
    pub fn densify(
        spec_id: impl Into<String>,
        len: usize,
        pairs: &[(usize, f64)],
    ) -> Result<Self, PipelineError> {
        let mut values = vec![0.0; len];
        let mut present = vec![false; len];
        for &(j, v) in pairs {
            if j >= len {
                return Err(PipelineError::IndexOutOfRange { index: j, len });
            }
            values[j] += v;
            present[j] = true;
        }
        Ok(Self {
            spec_id: spec_id.into(),
            values,
            present: Some(present),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_present(&self, j: usize) -> bool {
        self.present.as_ref().is_none_or(|p| p[j])
    }

    /// Elementwise sum of vectors over the same index space.
    pub fn sum<'a>(vs: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self, PipelineError> {
        let mut iter = vs.into_iter();
        let first = iter.next().ok_or(PipelineError::EmptyInput)?;
        let mut out = Self::from_values(first.spec_id.clone(), first.values.clone());
        for v in iter {
            if v.spec_id != out.spec_id || v.len() != out.len() {
                return Err(PipelineError::LengthMismatch {
                    expected: out.len(),
                    got: v.len(),
                });
            }
            for (a, b) in out.values.iter_mut().zip(&v.values) {
                *a += b;
            }
        }
        Ok(out)
    }
}

/// Bins every record and accumulates count or field sum per bin. Records outside
/// the partition are dropped.
pub fn aggregate(records: &[DataRecord], spec: &PartitionSpec) -> FeatureVector {
    let mut out = FeatureVector::zeros(spec.id(), spec.len());
    for rec in records {
        if let (Some(j), Some(w)) = (spec.bin_index(rec), spec.weight(rec)) {
            out.values[j] += w;
        }
    }
    out
}
