use serde::{Deserialize, Serialize};

use super::PipelineError;

/// One raw event held by a client. Never serialized into any protocol payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    /// Bookkeeping id (row number or generator counter). Local only.
    pub id: u64,
    pub t_start: i64,
    pub t_end: i64,
    pub lat_o: f64,
    pub lon_o: f64,
    pub lat_d: f64,
    pub lon_d: f64,
    pub tags: Vec<(String, String)>,
}

impl DataRecord {
    /// Builds a record, rejecting anything that violates the coordinate or
    /// time-ordering invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u64,
        t_start: i64,
        t_end: i64,
        lat_o: f64,
        lon_o: f64,
        lat_d: f64,
        lon_d: f64,
        tags: Vec<(String, String)>,
    ) -> Result<Self, PipelineError> {
        let rec = Self {
            id,
            t_start,
            t_end,
            lat_o,
            lon_o,
            lat_d,
            lon_d,
            tags,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.t_start > self.t_end {
            return Err(PipelineError::InvalidRecord(format!(
                "t_start {} after t_end {}",
                self.t_start, self.t_end
            )));
        }
        for lat in [self.lat_o, self.lat_d] {
            if !(-90.0..=90.0).contains(&lat) {
                return Err(PipelineError::InvalidRecord(format!(
                    "latitude {lat} out of range"
                )));
            }
        }
        for lon in [self.lon_o, self.lon_d] {
            if !(-180.0..=180.0).contains(&lon) {
                return Err(PipelineError::InvalidRecord(format!(
                    "longitude {lon} out of range"
                )));
            }
        }
        Ok(())
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn duration(&self) -> i64 {
        self.t_end - self.t_start
    }
}

/// Axis-aligned lat/lon rectangle, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_lo: f64,
    pub lat_hi: f64,
    pub lon_lo: f64,
    pub lon_hi: f64,
}

impl BBox {
    pub fn new(lat_lo: f64, lat_hi: f64, lon_lo: f64, lon_hi: f64) -> Result<Self, PipelineError> {
        let b = Self {
            lat_lo,
            lat_hi,
            lon_lo,
            lon_hi,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let finite = [self.lat_lo, self.lat_hi, self.lon_lo, self.lon_hi]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lat_lo >= self.lat_hi || self.lon_lo >= self.lon_hi {
            return Err(PipelineError::EmptyRange(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_lo && lat < self.lat_hi && lon >= self.lon_lo && lon < self.lon_hi
    }
}

/// Stage-1 data scope. Absent predicates match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScopeFilter {
    /// Half-open `[lo, hi)` on `t_start`.
    #[serde(default)]
    pub time_range: Option<(i64, i64)>,
    /// Applied to the origin point.
    #[serde(default)]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub tag_predicates: Vec<(String, String)>,
}

impl ScopeFilter {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if let Some((lo, hi)) = self.time_range {
            if lo >= hi {
                return Err(PipelineError::EmptyRange(format!(
                    "time range [{lo}, {hi})"
                )));
            }
        }
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        Ok(())
    }

    pub fn matches(&self, rec: &DataRecord) -> bool {
        if let Some((lo, hi)) = self.time_range {
            if rec.t_start < lo || rec.t_start >= hi {
                return false;
            }
        }
        if let Some(b) = &self.bbox {
            if !b.contains(rec.lat_o, rec.lon_o) {
                return false;
            }
        }
        self.tag_predicates
            .iter()
            .all(|(k, v)| rec.tag(k) == Some(v.as_str()))
    }
}

/// Returns the records satisfying every present predicate, in input order.
pub fn apply_scope(records: &[DataRecord], filter: &ScopeFilter) -> Vec<DataRecord> {
    records
        .iter()
        .filter(|r| filter.matches(r))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, t: i64) -> DataRecord {
        DataRecord::new(
            id,
            t,
            t + 5,
            1.0,
            1.0,
            2.0,
            2.0,
            vec![("kind".into(), "a".into())],
        )
        .unwrap()
    }

    #[test]
    fn empty_filter_is_identity() {
        let rs = vec![rec(0, 10), rec(1, 20), rec(2, 30)];
        assert_eq!(apply_scope(&rs, &ScopeFilter::default()), rs);
    }

    #[test]
    fn time_range_keeps_only_inside() {
        let rs = vec![rec(0, 10), rec(1, 20), rec(2, 30)];
        let f = ScopeFilter {
            time_range: Some((15, 25)),
            ..Default::default()
        };
        // linear scan oracle
        let expect: Vec<_> = rs
            .iter()
            .filter(|r| r.t_start >= 15 && r.t_start < 25)
            .cloned()
            .collect();
        let got = apply_scope(&rs, &f);
        assert_eq!(got, expect);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].t_start, 20);
    }

    #[test]
    fn out_of_range_latitude_rejected_at_ingestion() {
        let r = DataRecord::new(0, 0, 1, 91.0, 0.0, 0.0, 0.0, vec![]);
        assert!(matches!(r, Err(PipelineError::InvalidRecord(_))));
        let r = DataRecord::new(0, 5, 1, 0.0, 0.0, 0.0, 0.0, vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn tag_and_bbox_predicates() {
        let mut a = rec(0, 10);
        a.lat_o = 5.0;
        let b = rec(1, 10);
        let f = ScopeFilter {
            bbox: Some(BBox::new(0.0, 2.0, 0.0, 2.0).unwrap()),
            tag_predicates: vec![("kind".into(), "a".into())],
            ..Default::default()
        };
        assert_eq!(apply_scope(&[a, b.clone()], &f), vec![b]);
    }

    #[test]
    fn empty_ranges_invalid() {
        let f = ScopeFilter {
            time_range: Some((5, 5)),
            ..Default::default()
        };
        assert!(f.validate().is_err());
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
    }
}
