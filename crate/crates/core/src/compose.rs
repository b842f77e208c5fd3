//! Stage 4: reshape a global feature vector into chart-ready data.
//!
//! Composition never changes values on the query path. On the prediction path
//! it multiplies the model's per-client averages by the client count first.
//! Everything else (colors, scales, layout) belongs to the renderer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasim::{GenSpec, DAY, SERVICES};
use crate::pipeline::{FeatureVector, PartitionKind, PartitionSpec, PipelineError, TimeBins};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComposeError {
    #[error("{kind:?} charts cannot be built from a {partition} partition")]
    Incompatible { kind: ChartKind, partition: String },
    #[error("vector does not match chart spec: {0}")]
    SpecMismatch(String),
    #[error("chart shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("unknown chart preset {0:?}")]
    UnknownPreset(String),
}

impl From<PipelineError> for ComposeError {
    fn from(e: PipelineError) -> Self {
        ComposeError::InvalidPartition(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Histogram,
    StackedHistogram,
    Heatmap,
    #[serde(rename = "odmap")]
    ODMap,
    Calendar,
    Treemap,
    Sankey,
    Pie,
    Line,
}

impl ChartKind {
    pub const ALL: [ChartKind; 9] = [
        ChartKind::Histogram,
        ChartKind::StackedHistogram,
        ChartKind::Heatmap,
        ChartKind::ODMap,
        ChartKind::Calendar,
        ChartKind::Treemap,
        ChartKind::Sankey,
        ChartKind::Pie,
        ChartKind::Line,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChartKind::Histogram => "histogram",
            ChartKind::StackedHistogram => "stacked_histogram",
            ChartKind::Heatmap => "heatmap",
            ChartKind::ODMap => "odmap",
            ChartKind::Calendar => "calendar",
            ChartKind::Treemap => "treemap",
            ChartKind::Sankey => "sankey",
            ChartKind::Pie => "pie",
            ChartKind::Line => "line",
        }
    }
}

impl std::str::FromStr for ChartKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        ChartKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown chart kind {s:?}"))
    }
}

/// How the coordinator recovers global feature values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exact secure summation.
    #[default]
    QueryBased,
    /// Federated model trained on per-client features.
    PredictionBased,
}

impl Scheme {
    pub fn is_exact(self) -> bool {
        self == Scheme::QueryBased
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::QueryBased => "query",
            Scheme::PredictionBased => "prediction",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "query" | "query_based" | "query-based" => Ok(Scheme::QueryBased),
            "prediction" | "prediction_based" | "prediction-based" => Ok(Scheme::PredictionBased),
            _ => Err(format!("unknown scheme {s:?} (query|prediction)")),
        }
    }
}

/// Free-form annotations carried through to the renderer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChartLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_axis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_axis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub labels: ChartLabels,
}

fn kind_name(p: &PartitionKind) -> &'static str {
    match p {
        PartitionKind::Time1D(_) => "Time1D",
        PartitionKind::Grid2D { .. } => "Grid2D",
        PartitionKind::OD4D { .. } => "OD4D",
        PartitionKind::TreeLeaves { .. } => "TreeLeaves",
        PartitionKind::Category1D { .. } => "Category1D",
        PartitionKind::TimeCategory { .. } => "TimeCategory",
    }
}

fn split_link(s: &str) -> Option<(&str, &str)> {
    let (a, b) = s.split_once("->")?;
    (!a.is_empty() && !b.is_empty()).then_some((a, b))
}

impl ChartSpec {
    pub fn new(kind: ChartKind, partition: PartitionSpec) -> Self {
        Self {
            kind,
            partition,
            labels: ChartLabels::default(),
        }
    }

    pub fn titled(mut self, title: &str) -> Self {
        self.labels.title = Some(title.to_string());
        self
    }

    /// Checks the partition and that the chart kind can be drawn from it.
    pub fn validate(&self) -> Result<(), ComposeError> {
        self.partition.validate()?;
        let p = &self.partition.partition;
        let ok = match (self.kind, p) {
            (ChartKind::Histogram | ChartKind::Pie, PartitionKind::Time1D(_))
            | (ChartKind::Histogram | ChartKind::Pie, PartitionKind::Category1D { .. })
            | (ChartKind::Line, PartitionKind::Time1D(_))
            | (ChartKind::StackedHistogram, PartitionKind::TimeCategory { .. })
            | (ChartKind::Heatmap, PartitionKind::Grid2D { .. })
            | (ChartKind::ODMap, PartitionKind::OD4D { .. })
            | (ChartKind::Treemap, PartitionKind::TreeLeaves { .. }) => true,
            (ChartKind::Calendar, PartitionKind::Time1D(t)) => t.bins % 7 == 0,
            (ChartKind::Sankey, PartitionKind::Category1D { categories, .. }) => {
                categories.iter().all(|c| split_link(c).is_some())
            }
            _ => false,
        };
        if !ok {
            return Err(ComposeError::Incompatible {
                kind: self.kind,
                partition: kind_name(p).to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Slash-separated path; the root is the empty string.
    pub path: String,
    pub value: f64,
    /// Position in the partition's leaf list, for leaves only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: String,
    pub target: String,
    pub value: f64,
}

/// Chart payload. The variant fixes how values map back to flat indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum ChartBody {
    Bars {
        keys: Vec<String>,
        values: Vec<f64>,
    },
    /// One row per time bin, one column per series.
    Stacked {
        keys: Vec<String>,
        series: Vec<String>,
        values: Vec<Vec<f64>>,
    },
    /// Row-major; row 0 is the southernmost latitude band.
    Grid {
        values: Vec<Vec<f64>>,
    },
    /// `cells[or][oc]` is the destination grid for origin cell `(or, oc)`.
    OdMap {
        cells: Vec<Vec<Vec<Vec<f64>>>>,
    },
    /// One row per week, seven day columns.
    Calendar {
        week_starts: Vec<i64>,
        values: Vec<Vec<f64>>,
    },
    Tree {
        root: TreeNode,
    },
    Sankey {
        nodes: Vec<String>,
        links: Vec<SankeyLink>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartData {
    pub kind: ChartKind,
    pub spec_id: String,
    /// Dimensions of the index space, outermost first.
    pub shape: Vec<usize>,
    #[serde(default)]
    pub labels: ChartLabels,
    pub body: ChartBody,
}

fn time_keys(t: &TimeBins) -> Vec<String> {
    (0..t.bins)
        .map(|i| {
            (t.start + ((t.end - t.start) as i128 * i as i128 / t.bins as i128) as i64).to_string()
        })
        .collect()
}

fn rows_of(values: &[f64], cols: usize) -> Vec<Vec<f64>> {
    values.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn build_tree(leaves: &[String], values: &[f64]) -> TreeNode {
    let mut root = TreeNode {
        path: String::new(),
        value: 0.0,
        leaf: None,
        children: Vec::new(),
    };
    for (i, (leaf, &v)) in leaves.iter().zip(values).enumerate() {
        let mut node = &mut root;
        let mut path = String::new();
        let parts: Vec<&str> = leaf.split('/').collect();
        for (depth, part) in parts.iter().enumerate() {
            if !path.is_empty() {
                path.push('/');
            }
            path.push_str(part);
            let pos = match node.children.iter().position(|c| c.path == path) {
                Some(p) => p,
                None => {
                    node.children.push(TreeNode {
                        path: path.clone(),
                        value: 0.0,
                        leaf: None,
                        children: Vec::new(),
                    });
                    node.children.len() - 1
                }
            };
            node = &mut node.children[pos];
            if depth + 1 == parts.len() {
                node.leaf = Some(i);
                node.value = v;
            }
        }
    }
    sum_internal(&mut root);
    root
}

fn sum_internal(node: &mut TreeNode) -> f64 {
    if node.children.is_empty() {
        return node.value;
    }
    let mut total = if node.leaf.is_some() { node.value } else { 0.0 };
    for c in &mut node.children {
        total += sum_internal(c);
    }
    if node.leaf.is_none() {
        node.value = total;
    }
    total
}

fn collect_leaves(node: &TreeNode, out: &mut BTreeMap<usize, f64>) {
    if let Some(i) = node.leaf {
        out.insert(i, node.value);
    }
    for c in &node.children {
        collect_leaves(c, out);
    }
}

fn shape_of(p: &PartitionKind) -> Vec<usize> {
    match p {
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
    }
}

fn reshape(values: &[f64], spec: &ChartSpec) -> Result<ChartData, ComposeError> {
    spec.validate()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ComposeError::NonFinite(i));
    }
    let body = match (&spec.partition.partition, spec.kind) {
        (PartitionKind::Time1D(t), ChartKind::Calendar) => {
            let width = (t.end - t.start) / t.bins as i64;
            ChartBody::Calendar {
                week_starts: (0..t.bins / 7)
                    .map(|w| t.start + width * 7 * w as i64)
                    .collect(),
                values: rows_of(values, 7),
            }
        }
        (PartitionKind::Time1D(t), _) => ChartBody::Bars {
            keys: time_keys(t),
            values: values.to_vec(),
        },
        (PartitionKind::Category1D { categories, .. }, ChartKind::Sankey) => {
            let mut nodes: Vec<String> = Vec::new();
            let mut links = Vec::with_capacity(categories.len());
            for (c, &v) in categories.iter().zip(values) {
                let (a, b) = split_link(c).expect("validated link");
                for n in [a, b] {
                    if !nodes.iter().any(|x| x == n) {
                        nodes.push(n.to_string());
                    }
                }
                links.push(SankeyLink {
                    source: a.to_string(),
                    target: b.to_string(),
                    value: v,
                });
            }
            ChartBody::Sankey { nodes, links }
        }
        (PartitionKind::Category1D { categories, .. }, _) => ChartBody::Bars {
            keys: categories.clone(),
            values: values.to_vec(),
        },
        (
            PartitionKind::TimeCategory {
                time, categories, ..
            },
            _,
        ) => ChartBody::Stacked {
            keys: time_keys(time),
            series: categories.clone(),
            values: rows_of(values, categories.len()),
        },
        (PartitionKind::Grid2D { cols, .. }, _) => ChartBody::Grid {
            values: rows_of(values, *cols),
        },
        (
            PartitionKind::OD4D {
                origin_cols,
                dest_rows,
                dest_cols,
                ..
            },
            _,
        ) => {
            let inner = dest_rows * dest_cols;
            let cells = values
                .chunks(inner * origin_cols)
                .map(|orow| orow.chunks(inner).map(|g| rows_of(g, *dest_cols)).collect())
                .collect();
            ChartBody::OdMap { cells }
        }
        (PartitionKind::TreeLeaves { leaves, .. }, _) => ChartBody::Tree {
            root: build_tree(leaves, values),
        },
    };
    Ok(ChartData {
        kind: spec.kind,
        spec_id: spec.partition.id(),
        shape: shape_of(&spec.partition.partition),
        labels: spec.labels.clone(),
        body,
    })
}

fn check_vector(v: &FeatureVector, spec: &ChartSpec) -> Result<(), ComposeError> {
    let id = spec.partition.id();
    if v.spec_id != id {
        return Err(ComposeError::SpecMismatch(format!(
            "vector built for {}, chart expects {id}",
            v.spec_id
        )));
    }
    if v.len() != spec.partition.len() {
        return Err(ComposeError::SpecMismatch(format!(
            "vector has {} bins, partition has {}",
            v.len(),
            spec.partition.len()
        )));
    }
    Ok(())
}

/// Reshapes an exact secure-aggregation sum. Values pass through untouched.
pub fn compose_query(sum: &FeatureVector, spec: &ChartSpec) -> Result<ChartData, ComposeError> {
    check_vector(sum, spec)?;
    reshape(&sum.values, spec)
}

/// Scales per-client model averages by `n` and reshapes them.
pub fn compose_prediction(
    output: &FeatureVector,
    n: usize,
    spec: &ChartSpec,
) -> Result<ChartData, ComposeError> {
    check_vector(output, spec)?;
    let k = n as f64;
    let scaled: Vec<f64> = output.values.iter().map(|v| v * k).collect();
    reshape(&scaled, spec)
}

impl ChartData {
    /// Values in flat index order. Inverse of composition.
    pub fn flatten(&self) -> Vec<f64> {
        match &self.body {
            ChartBody::Bars { values, .. } => values.clone(),
            ChartBody::Stacked { values, .. }
            | ChartBody::Grid { values }
            | ChartBody::Calendar { values, .. } => values.concat(),
            ChartBody::OdMap { cells } => cells
                .iter()
                .flatten()
                .flatten()
                .flatten()
                .copied()
                .collect(),
            ChartBody::Tree { root } => {
                let mut out = BTreeMap::new();
                collect_leaves(root, &mut out);
                out.into_values().collect()
            }
            ChartBody::Sankey { links, .. } => links.iter().map(|l| l.value).collect(),
        }
    }

    /// Copy of this chart with its values replaced, keeping the structure.
    pub fn with_values(&self, values: &[f64]) -> Result<ChartData, ComposeError> {
        let n = self.flatten().len();
        if values.len() != n {
            return Err(ComposeError::ShapeMismatch(format!(
                "{} values for a chart of {n}",
                values.len()
            )));
        }
        let mut out = self.clone();
        let mut it = values.iter().copied();
        let mut fill = |row: &mut Vec<f64>| {
            row.iter_mut()
                .for_each(|v| *v = it.next().expect("length checked"))
        };
        match &mut out.body {
            ChartBody::Bars { values, .. } => fill(values),
            ChartBody::Stacked { values, .. }
            | ChartBody::Grid { values }
            | ChartBody::Calendar { values, .. } => values.iter_mut().for_each(fill),
            ChartBody::OdMap { cells } => cells.iter_mut().flatten().flatten().for_each(fill),
            ChartBody::Tree { root } => {
                set_leaves(root, values);
                sum_internal(root);
            }
            ChartBody::Sankey { links, .. } => {
                for (l, v) in links.iter_mut().zip(values) {
                    l.value = *v;
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chart data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn set_leaves(node: &mut TreeNode, values: &[f64]) {
    if let Some(i) = node.leaf {
        node.value = values[i];
    }
    for c in &mut node.children {
        set_leaves(c, values);
    }
}

/// Elementwise `|approx - exact| * amplify`, in the shape of `exact`.
pub fn diff_map(
    approx: &ChartData,
    exact: &ChartData,
    amplify: f64,
) -> Result<ChartData, ComposeError> {
    if approx.kind != exact.kind || approx.shape != exact.shape {
        return Err(ComposeError::ShapeMismatch(format!(
            "{:?}{:?} vs {:?}{:?}",
            approx.kind, approx.shape, exact.kind, exact.shape
        )));
    }
    let a = approx.flatten();
    let e = exact.flatten();
    if a.len() != e.len() {
        return Err(ComposeError::ShapeMismatch(format!(
            "{} vs {} values",
            a.len(),
            e.len()
        )));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(&e)
        .map(|(x, y)| (x - y).abs() * amplify)
        .collect();
    exact.with_values(&d)
}

/// Named chart configuration offered to clients of the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPreset {
    pub name: String,
    pub description: String,
    pub chart: ChartSpec,
}

/// Built-in presets over the simulated city's extent and tags.
pub fn presets(gen: &GenSpec) -> Vec<ChartPreset> {
    let bbox = GenSpec::default_bbox();
    let t0 = gen.t0;
    let week = |bins| PartitionSpec::time(t0, t0 + 7 * DAY, bins);
    let days = gen.days.max(7) as i64 / 7 * 7;
    let p = |name: &str, description: &str, kind, partition: PartitionSpec| ChartPreset {
        name: name.to_string(),
        description: description.to_string(),
        chart: ChartSpec::new(kind, partition).titled(description),
    };
    vec![
        p(
            "week-histogram",
            "Trips per day over the first week",
            ChartKind::Histogram,
            week(7),
        ),
        p(
            "hourly-line",
            "Trips per hour over the first week",
            ChartKind::Line,
            week(168),
        ),
        p(
            "stacked-week",
            "Trips per day by service",
            ChartKind::StackedHistogram,
            PartitionSpec::new(PartitionKind::TimeCategory {
                time: TimeBins {
                    start: t0,
                    end: t0 + 7 * DAY,
                    bins: 7,
                },
                key: "service".into(),
                categories: SERVICES.iter().map(|s| s.to_string()).collect(),
            }),
        ),
        p(
            "heatmap-16",
            "Pickup density, 16 x 16 grid",
            ChartKind::Heatmap,
            PartitionSpec::grid(bbox, 16, 16),
        ),
        p(
            "heatmap-fine",
            "Pickup density, 190 x 84 grid",
            ChartKind::Heatmap,
            PartitionSpec::grid(bbox, 190, 84),
        ),
        p(
            "odmap",
            "Origin-destination flows, 8 x 8 outer by 8 x 8 inner",
            ChartKind::ODMap,
            PartitionSpec::new(PartitionKind::OD4D {
                bbox,
                origin_rows: 8,
                origin_cols: 8,
                dest_rows: 8,
                dest_cols: 8,
            }),
        ),
        p(
            "calendar",
            "Trips per day, by week",
            ChartKind::Calendar,
            PartitionSpec::time(t0, t0 + days * DAY, days as usize),
        ),
        p(
            "treemap",
            "Trips by pickup region",
            ChartKind::Treemap,
            PartitionSpec::new(PartitionKind::TreeLeaves {
                key: "region".into(),
                leaves: gen.region_leaves(),
            }),
        ),
        p(
            "sankey",
            "Flows between zones",
            ChartKind::Sankey,
            PartitionSpec::new(PartitionKind::Category1D {
                key: "flow".into(),
                categories: gen.flow_pairs(),
            }),
        ),
        p(
            "service-pie",
            "Share of trips by service",
            ChartKind::Pie,
            PartitionSpec::new(PartitionKind::Category1D {
                key: "service".into(),
                categories: SERVICES.iter().map(|s| s.to_string()).collect(),
            }),
        ),
    ]
}

/// Looks up a preset by name, falling back to the first preset of `kind`.
pub fn find_preset(gen: &GenSpec, name_or_kind: &str) -> Result<ChartPreset, ComposeError> {
    let all = presets(gen);
    if let Some(p) = all.iter().find(|p| p.name == name_or_kind) {
        return Ok(p.clone());
    }
    let kind: ChartKind = name_or_kind
        .parse()
        .map_err(|_| ComposeError::UnknownPreset(name_or_kind.to_string()))?;
    all.into_iter()
        .find(|p| p.chart.kind == kind)
        .ok_or_else(|| ComposeError::UnknownPreset(name_or_kind.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasim::generate;
    use crate::pipeline::{aggregate, BBox};
    use proptest::prelude::*;

    fn fv(spec: &ChartSpec, values: Vec<f64>) -> FeatureVector {
        FeatureVector::from_values(spec.partition.id(), values)
    }

    fn preset(name: &str) -> ChartSpec {
        find_preset(&GenSpec::default(), name).unwrap().chart
    }

    #[test]
    fn histogram_pass_through() {
        let spec = preset("week-histogram");
        let v = vec![9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0];
        let c = compose_query(&fv(&spec, v.clone()), &spec).unwrap();
        match &c.body {
            ChartBody::Bars { keys, values } => {
                assert_eq!(values, &v);
                assert_eq!(keys.len(), 7);
                assert_eq!(keys[1], (crate::datasim::DEFAULT_T0 + DAY).to_string());
            }
            other => panic!("unexpected body {other:?}"),
        }
    }

    #[test]
    fn grid_reshape() {
        let spec = ChartSpec::new(
            ChartKind::Heatmap,
            PartitionSpec::grid(BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(), 2, 2),
        );
        let c = compose_query(&fv(&spec, vec![1.0, 2.0, 3.0, 4.0]), &spec).unwrap();
        assert_eq!(
            c.body,
            ChartBody::Grid {
                values: vec![vec![1.0, 2.0], vec![3.0, 4.0]]
            }
        );
        assert_eq!(c.shape, vec![2, 2]);
    }

    #[test]
    fn odmap_nesting_matches_flat_index() {
        let spec = ChartSpec::new(
            ChartKind::ODMap,
            PartitionSpec::new(PartitionKind::OD4D {
                bbox: BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(),
                origin_rows: 2,
                origin_cols: 3,
                dest_rows: 2,
                dest_cols: 2,
            }),
        );
        let v: Vec<f64> = (0..24).map(f64::from).collect();
        let c = compose_query(&fv(&spec, v), &spec).unwrap();
        let ChartBody::OdMap { cells } = &c.body else {
            panic!("not an odmap")
        };
        for or in 0..2 {
            for oc in 0..3 {
                for dr in 0..2 {
                    for dc in 0..2 {
                        let flat = ((or * 3 + oc) * 2 + dr) * 2 + dc;
                        assert_eq!(cells[or][oc][dr][dc], flat as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn treemap_matches_centralized_leaf_counts() {
        let gen = GenSpec {
            count: 2000,
            ..GenSpec::default()
        };
        let recs = generate(&gen);
        let spec = preset("treemap");
        let shards: Vec<_> = recs.chunks(500).collect();
        let mut sum = vec![0.0; spec.partition.len()];
        for s in &shards {
            for (acc, v) in sum.iter_mut().zip(aggregate(s, &spec.partition).values) {
                *acc += v;
            }
        }
        let c = compose_query(&fv(&spec, sum), &spec).unwrap();
        // direct count of each leaf path
        for (i, leaf) in gen.region_leaves().iter().enumerate() {
            let n = recs
                .iter()
                .filter(|r| r.tag("region") == Some(leaf))
                .count();
            assert_eq!(c.flatten()[i], n as f64);
        }
        let ChartBody::Tree { root } = &c.body else {
            panic!("not a tree")
        };
        assert_eq!(root.value, recs.len() as f64);
        let inner = root.children.iter().find(|n| n.path == "inner").unwrap();
        let expect = recs
            .iter()
            .filter(|r| r.tag("region").is_some_and(|v| v.starts_with("inner/")))
            .count();
        assert_eq!(inner.value, expect as f64);
    }

    #[test]
    fn sankey_links() {
        let spec = preset("sankey");
        let n = spec.partition.len();
        let v: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let c = compose_query(&fv(&spec, v.clone()), &spec).unwrap();
        let ChartBody::Sankey { nodes, links } = &c.body else {
            panic!("not sankey")
        };
        assert_eq!(nodes.len(), 6);
        assert_eq!(links[1].source, "center");
        assert_eq!(links[1].target, "station");
        assert_eq!(c.flatten(), v);
    }

    #[test]
    fn prediction_scales_by_n() {
        let spec = ChartSpec::new(ChartKind::Histogram, PartitionSpec::time(0, 10, 1));
        let c = compose_prediction(&fv(&spec, vec![2.0]), 5, &spec).unwrap();
        assert_eq!(c.flatten(), vec![10.0]);
    }

    #[test]
    fn spec_mismatch_detected() {
        let spec = preset("week-histogram");
        let wrong = FeatureVector::from_values("deadbeef", vec![0.0; 7]);
        assert!(matches!(
            compose_query(&wrong, &spec),
            Err(ComposeError::SpecMismatch(_))
        ));
        let short = fv(&spec, vec![0.0; 6]);
        assert!(matches!(
            compose_query(&short, &spec),
            Err(ComposeError::SpecMismatch(_))
        ));
    }

    #[test]
    fn incompatible_kinds_rejected() {
        let spec = ChartSpec::new(ChartKind::Heatmap, PartitionSpec::time(0, 10, 2));
        assert!(matches!(
            spec.validate(),
            Err(ComposeError::Incompatible { .. })
        ));
        let spec = ChartSpec::new(ChartKind::Calendar, PartitionSpec::time(0, 100, 10));
        assert!(spec.validate().is_err());
        let spec = ChartSpec::new(
            ChartKind::Sankey,
            PartitionSpec::new(PartitionKind::Category1D {
                key: "k".into(),
                categories: vec!["a".into()],
            }),
        );
        assert!(spec.validate().is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let spec = preset("week-histogram");
        let mut v = vec![0.0; 7];
        v[3] = f64::NAN;
        assert_eq!(
            compose_query(&fv(&spec, v), &spec),
            Err(ComposeError::NonFinite(3))
        );
    }

    #[test]
    fn diff_map_single_cell() {
        let spec = preset("heatmap-16");
        let exact = vec![1.0; 256];
        let mut approx = exact.clone();
        approx[17] += 0.1;
        let e = compose_query(&fv(&spec, exact), &spec).unwrap();
        let a = compose_query(&fv(&spec, approx), &spec).unwrap();
        let d = diff_map(&a, &e, 50.0).unwrap().flatten();
        assert!((d[17] - 5.0).abs() < 1e-9);
        assert!(d.iter().enumerate().all(|(i, v)| i == 17 || *v == 0.0));
    }

    #[test]
    fn diff_map_shape_mismatch() {
        let a = preset("week-histogram");
        let b = preset("heatmap-16");
        let ca = compose_query(&fv(&a, vec![0.0; 7]), &a).unwrap();
        let cb = compose_query(&fv(&b, vec![0.0; 256]), &b).unwrap();
        assert!(matches!(
            diff_map(&ca, &cb, 1.0),
            Err(ComposeError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn every_preset_is_valid_and_round_trips() {
        for p in presets(&GenSpec::default()) {
            p.chart.validate().unwrap();
            let n = p.chart.partition.len();
            let v: Vec<f64> = (0..n).map(|i| (i * 7 % 13) as f64).collect();
            let c = compose_query(&fv(&p.chart, v.clone()), &p.chart).unwrap();
            assert_eq!(c.flatten(), v, "{}", p.name);
            let back = ChartData::from_json(&c.to_json()).unwrap();
            assert_eq!(back, c, "{}", p.name);
        }
        let odmap = preset("odmap");
        assert_eq!(odmap.partition.len(), 4096);
        assert_eq!(preset("heatmap-fine").partition.len(), 15960);
    }

    #[test]
    fn kind_names_parse() {
        for k in ChartKind::ALL {
            assert_eq!(k.name().parse::<ChartKind>().unwrap(), k);
        }
        assert!("radar".parse::<ChartKind>().is_err());
        assert_eq!(
            find_preset(&GenSpec::default(), "heatmap").unwrap().name,
            "heatmap-16"
        );
    }

    fn arb_chart() -> impl Strategy<Value = (ChartSpec, Vec<f64>)> {
        let gen = GenSpec::default();
        let all = presets(&gen);
        let small: Vec<ChartSpec> = all
            .into_iter()
            .map(|p| p.chart)
            .filter(|c| c.partition.len() <= 4096)
            .collect();
        (0..small.len()).prop_flat_map(move |i| {
            let spec = small[i].clone();
            let n = spec.partition.len();
            (Just(spec), proptest::collection::vec(-1e9f64..1e9, n))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn compose_is_bijective_reshape((spec, v) in arb_chart()) {
            let c = compose_query(&fv(&spec, v.clone()), &spec).unwrap();
            prop_assert_eq!(c.flatten(), v);
        }

        #[test]
        fn prediction_with_one_client_is_query((spec, v) in arb_chart()) {
            let q = compose_query(&fv(&spec, v.clone()), &spec).unwrap();
            let p = compose_prediction(&fv(&spec, v), 1, &spec).unwrap();
            prop_assert_eq!(q, p);
        }

        #[test]
        fn diff_with_self_is_zero((spec, v) in arb_chart(), k in 0.0f64..100.0) {
            let c = compose_query(&fv(&spec, v), &spec).unwrap();
            let d = diff_map(&c, &c, k).unwrap();
            prop_assert!(d.flatten().iter().all(|x| *x == 0.0));
        }

        #[test]
        fn diff_amplify_one_matches_oracle(
            (spec, a) in arb_chart(),
            seed in any::<u64>(),
        ) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * 0.5 + ((seed ^ i as u64) % 97) as f64).collect();
            let ca = compose_query(&fv(&spec, a.clone()), &spec).unwrap();
            let cb = compose_query(&fv(&spec, b.clone()), &spec).unwrap();
            let d = diff_map(&ca, &cb, 1.0).unwrap().flatten();
            for i in 0..a.len() {
                prop_assert_eq!(d[i], (a[i] - b[i]).abs());
            }
        }
    }
}
