use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture of the prediction network: an embedding table indexed by bin,
/// followed by four dense layers (ReLU on the hidden ones, identity on the
/// output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Index-space size M.
    pub num_bins: usize,
    pub embed_dim: usize,
    /// Output widths of the four dense layers; the last must be 1.
    pub hidden_dims: Vec<usize>,
    /// Labels are divided by this before training and predictions multiplied
    /// by it on the way out.
    pub label_scale: f64,
}

pub const FC_LAYERS: usize = 4;

impl ModelConfig {
    pub fn new(num_bins: usize) -> Self {
        Self {
            num_bins,
            embed_dim: 16,
            hidden_dims: vec![64, 64, 32, 1],
            label_scale: 1.0,
        }
    }

    pub fn with_label_scale(mut self, label_scale: f64) -> Self {
        self.label_scale = label_scale;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.num_bins == 0 {
            return bad("num_bins must be positive");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if self.hidden_dims.len() != FC_LAYERS {
            return bad("exactly four dense layers required");
        }
        if self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.hidden_dims[FC_LAYERS - 1] != 1 {
            return bad("last layer width must be 1");
        }
        if !(self.label_scale.is_finite() && self.label_scale > 0.0) {
            return bad("label_scale must be positive and finite");
        }
        Ok(())
    }

    /// `(rows, cols)` of every tensor in declaration order: embedding, then
    /// weight and bias of each dense layer.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.num_bins, self.embed_dim)];
        let mut fan_in = self.embed_dim;
        for &w in &self.hidden_dims {
            shapes.push((fan_in, w));
            shapes.push((1, w));
            fan_in = w;
        }
        shapes
    }
}

/// UI accuracy presets. The mapping to rounds and local epochs is a local
/// convention; rounds follow 10/30/100, epochs grow so that large grids get
/// enough updates per embedding row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyPreset {
    Low,
    #[default]
    Medium,
    High,
}

impl AccuracyPreset {
    pub fn rounds(self) -> u32 {
        match self {
            AccuracyPreset::Low => 10,
            AccuracyPreset::Medium => 30,
            AccuracyPreset::High => 100,
        }
    }

    pub fn epochs(self) -> u32 {
        match self {
            AccuracyPreset::Low => 1,
            AccuracyPreset::Medium => 4,
            AccuracyPreset::High => 16,
        }
    }
}

impl std::str::FromStr for AccuracyPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown preset {other:?} (low|medium|high)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: u32,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Training stops once the global loss (in normalized units) moves by
    /// less than this between consecutive rounds.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: AccuracyPreset::Medium.rounds(),
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 4,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn preset(preset: AccuracyPreset) -> Self {
        Self {
            rounds: preset.rounds(),
            epochs: preset.epochs(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }
}

/// Losses observed after one federated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub client_losses: Vec<f64>,
    /// Mean of `client_losses`.
    pub global_loss: f64,
}

impl RoundReport {
    pub fn new(round: u32, client_losses: Vec<f64>) -> Self {
        let global_loss = if client_losses.is_empty() {
            0.0
        } else {
            client_losses.iter().sum::<f64>() / client_losses.len() as f64
        };
        Self {
            round,
            client_losses,
            global_loss,
        }
    }
}
