use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, FC_LAYERS};
use super::ModelError;

/// Row-major dense matrix. Bias vectors are stored as `1 × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// All trainable tensors of the prediction model, in declaration order
/// (embedding, then weight and bias for each dense layer), plus the round
/// counter and the label scale used to decode outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
    pub version: u64,
    pub label_scale: f64,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            tensors: config
                .tensor_shapes()
                .into_iter()
                .map(|(r, c)| Tensor::zeros(r, c))
                .collect(),
            version: 0,
            label_scale: config.label_scale,
        }
    }

    pub fn embedding(&self) -> &Tensor {
        &self.tensors[0]
    }

    /// Weight of dense layer `l` (0-based), shaped `fan_in × fan_out`.
    pub fn weight(&self, l: usize) -> &Tensor {
        &self.tensors[1 + 2 * l]
    }

    pub fn bias(&self, l: usize) -> &Tensor {
        &self.tensors[2 + 2 * l]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut Tensor {
        &mut self.tensors[1 + 2 * l]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut Tensor {
        &mut self.tensors[2 + 2 * l]
    }

    pub fn num_bins(&self) -> usize {
        self.embedding().rows
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(Tensor::shape).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Concatenation of every tensor in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten) against this model's shapes.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != self.num_params() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut out = self.clone();
        let mut off = 0;
        for t in &mut out.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(out)
    }

    /// Rounds every value through `f32`, matching what persistence stores.
    pub fn quantize_f32(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
        out.label_scale = self.label_scale as f32 as f64;
        out
    }
}

/// Fresh global model: every weight tensor uniform in `±sqrt(6 / (fan_in +
/// fan_out))`, biases zero. Deterministic in `seed`.
pub fn init_global(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    for (i, t) in params.tensors.iter_mut().enumerate() {
        let is_bias = i > 0 && i % 2 == 0;
        if is_bias {
            continue;
        }
        let a = (6.0 / (t.rows + t.cols) as f64).sqrt();
        for v in &mut t.data {
            *v = rng.random_range(-a..a);
        }
    }
    debug_assert_eq!(params.tensors.len(), 1 + 2 * FC_LAYERS);
    Ok(params)
}

/// Unweighted elementwise mean of client parameters; the result's version is
/// one past the inputs'.
///
/// Computed as `x_0 + Σ(x_i − x_0) / N`, which equals the arithmetic mean and
/// returns identical inputs bit-for-bit.
pub fn fed_average(uploads: &[ModelParams]) -> Result<ModelParams, ModelError> {
    let first = uploads.first().ok_or(ModelError::NoUploads)?;
    for p in &uploads[1..] {
        if p.shapes() != first.shapes() {
            return Err(ModelError::ShapeMismatch("tensor shapes differ".into()));
        }
        if p.version != first.version {
            return Err(ModelError::ShapeMismatch(format!(
                "version {} vs {}",
                p.version, first.version
            )));
        }
        if p.label_scale != first.label_scale {
            return Err(ModelError::ShapeMismatch("label scales differ".into()));
        }
    }
    let n = uploads.len() as f64;
    let mut out = first.clone();
    for (ti, t) in out.tensors.iter_mut().enumerate() {
        for (k, v) in t.data.iter_mut().enumerate() {
            let base = *v;
            let delta: f64 = uploads[1..]
                .iter()
                .map(|p| p.tensors[ti].data[k] - base)
                .sum();
            *v = base + delta / n;
        }
    }
    out.version = first.version + 1;
    Ok(out)
}

const MAGIC: &[u8; 4] = b"FVMP";
const FORMAT_VERSION: u16 = 1;

impl ModelParams {
    /// Binary form: magic `FVMP`, u16 format version, u64 round version,
    /// f64 label scale, u32 tensor count, `(u32 rows, u32 cols)` per tensor,
    /// then every value as an f32, tensors in declaration order. All
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(26 + 8 * self.tensors.len() + 4 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.label_scale.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Decode("bad magic".into()));
        }
        let fmt = u16::from_le_bytes(r.array()?);
        if fmt != FORMAT_VERSION {
            return Err(ModelError::Decode(format!("unsupported format {fmt}")));
        }
        let version = u64::from_le_bytes(r.array()?);
        let label_scale = f64::from_le_bytes(r.array()?);
        let count = u32::from_le_bytes(r.array()?) as usize;
        if count > 1024 {
            return Err(ModelError::Decode("implausible tensor count".into()));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = u32::from_le_bytes(r.array()?) as usize;
            let cols = u32::from_le_bytes(r.array()?) as usize;
            shapes.push((rows, cols));
        }
        let mut tensors = Vec::with_capacity(count);
        for (rows, cols) in shapes {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| ModelError::Decode("shape overflow".into()))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| ModelError::Decode("shape overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push(Tensor { rows, cols, data });
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Decode("trailing bytes".into()));
        }
        Ok(Self {
            tensors,
            version,
            label_scale,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Decode("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}
