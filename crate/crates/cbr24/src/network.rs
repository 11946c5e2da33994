//! From-scratch feedforward network (44 -> 64 -> 20): ReLU hidden layer,
//! sigmoid outputs, binary cross-entropy loss, full-batch gradient descent
//! with momentum. The 64 hidden activations double as the latent retrieval
//! vector.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const INPUT_DIM: usize = 44;
pub const HIDDEN_DIM: usize = 64;
pub const OUTPUT_DIM: usize = 20;

/// Network parameters. Weights are stored flat and row-major
/// (w1[i * HIDDEN_DIM + j] connects input i to hidden j).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentModel {
    pub seed: u64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 2000,
            seed: 0,
        }
    }
}

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("example {index} has {got} inputs, expected 44")]
    DimensionMismatch { index: usize, got: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: u32 },
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainStats {
    pub epochs: u32,
    pub final_loss: f64,
}

/// One training example: scaled model input and 20 label bits.
pub type Example = (Vec<f64>, [f64; OUTPUT_DIM]);

impl LatentModel {
    /// All parameters drawn uniformly from +-1/sqrt(fan_in), in a fixed
    /// order (w1 row-major, b1, w2 row-major, b2) so a seed pins the model.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |count: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| rng.random_range(-bound..bound)).collect()
        };
        LatentModel {
            seed,
            w1: draw(INPUT_DIM * HIDDEN_DIM, INPUT_DIM),
            b1: draw(HIDDEN_DIM, INPUT_DIM),
            w2: draw(HIDDEN_DIM * OUTPUT_DIM, HIDDEN_DIM),
            b2: draw(OUTPUT_DIM, HIDDEN_DIM),
        }
    }

    fn hidden_pre(&self, input: &[f64]) -> [f64; HIDDEN_DIM] {
        let mut z1 = [0.0; HIDDEN_DIM];
        z1.copy_from_slice(&self.b1);
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w1[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
            for (z, &w) in z1.iter_mut().zip(row) {
                *z += x * w;
            }
        }
        z1
    }

    /// Latent retrieval vector: the 64 post-ReLU hidden activations.
    pub fn latent(&self, input: &[f64]) -> Vec<f64> {
        self.hidden_pre(input).iter().map(|&z| z.max(0.0)).collect()
    }

    fn output_pre(&self, hidden: &[f64; HIDDEN_DIM]) -> [f64; OUTPUT_DIM] {
        let mut z2 = [0.0; OUTPUT_DIM];
        z2.copy_from_slice(&self.b2);
        for (j, &h) in hidden.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let row = &self.w2[j * OUTPUT_DIM..(j + 1) * OUTPUT_DIM];
            for (z, &w) in z2.iter_mut().zip(row) {
                *z += h * w;
            }
        }
        z2
    }

    /// Sigmoid probabilities for the 20 label bits.
    pub fn predict(&self, input: &[f64]) -> [f64; OUTPUT_DIM] {
        let mut hidden = self.hidden_pre(input);
        hidden.iter_mut().for_each(|z| *z = z.max(0.0));
        let z2 = self.output_pre(&hidden);
        z2.map(sigmoid)
    }

    /// Fraction of label bits predicted correctly at a 0.5 threshold.
    pub fn bit_accuracy(&self, data: &[Example]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut hits = 0usize;
        for (input, labels) in data {
            let probs = self.predict(input);
            for (p, &y) in probs.iter().zip(labels.iter()) {
                if (*p > 0.5) == (y > 0.5) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (data.len() * OUTPUT_DIM) as f64
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable BCE from the logit: max(z,0) - z*y + ln(1 + e^-|z|).
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros() -> Self {
        Gradients {
            w1: vec![0.0; INPUT_DIM * HIDDEN_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; HIDDEN_DIM * OUTPUT_DIM],
            b2: vec![0.0; OUTPUT_DIM],
        }
    }
}

fn check_dims(data: &[Example]) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, (input, _)) in data.iter().enumerate() {
        if input.len() != INPUT_DIM {
            return Err(TrainError::DimensionMismatch {
                index,
                got: input.len(),
            });
        }
    }
    Ok(())
}

/// Mean (over examples) of the summed BCE across the 20 output bits.
pub fn loss(model: &LatentModel, data: &[Example]) -> f64 {
    let mut total = 0.0;
    for (input, labels) in data {
        let mut hidden = model.hidden_pre(input);
        hidden.iter_mut().for_each(|z| *z = z.max(0.0));
        let z2 = model.output_pre(&hidden);
        for (z, &y) in z2.iter().zip(labels.iter()) {
            total += bce_from_logit(*z, y);
        }
    }
    total / data.len() as f64
}

/// Loss and analytic gradients for the full batch.
pub fn backprop(model: &LatentModel, data: &[Example]) -> (f64, Gradients) {
    let mut grads = Gradients::zeros();
    let mut total = 0.0;
    let scale = 1.0 / data.len() as f64;
    for (input, labels) in data {
        let z1 = model.hidden_pre(input);
        let hidden = z1.map(|z| z.max(0.0));
        let z2 = model.output_pre(&hidden);

        let mut dz2 = [0.0; OUTPUT_DIM];
        for c in 0..OUTPUT_DIM {
            total += bce_from_logit(z2[c], labels[c]);
            dz2[c] = (sigmoid(z2[c]) - labels[c]) * scale;
        }

        for (g, &d) in grads.b2.iter_mut().zip(&dz2) {
            *g += d;
        }
        let mut dh = [0.0; HIDDEN_DIM];
        for j in 0..HIDDEN_DIM {
            let h = hidden[j];
            let grow = &mut grads.w2[j * OUTPUT_DIM..(j + 1) * OUTPUT_DIM];
            let wrow = &model.w2[j * OUTPUT_DIM..(j + 1) * OUTPUT_DIM];
            let mut acc = 0.0;
            for c in 0..OUTPUT_DIM {
                grow[c] += h * dz2[c];
                acc += wrow[c] * dz2[c];
            }
            dh[j] = if z1[j] > 0.0 { acc } else { 0.0 };
        }

        for (g, &d) in grads.b1.iter_mut().zip(&dh) {
            *g += d;
        }
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let grow = &mut grads.w1[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
            for (g, &d) in grow.iter_mut().zip(&dh) {
                *g += x * d;
            }
        }
    }
    (total * scale, grads)
}

/// Full-batch gradient descent with momentum.
pub fn train(data: &[Example], cfg: &TrainConfig) -> Result<(LatentModel, TrainStats), TrainError> {
    check_dims(data)?;
    let mut model = LatentModel::init(cfg.seed);
    let mut vel = Gradients::zeros();
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let (loss, grads) = backprop(&model, data);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        final_loss = loss;
        let step = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
        };
        step(&mut model.w1, &mut vel.w1, &grads.w1);
        step(&mut model.b1, &mut vel.b1, &grads.b1);
        step(&mut model.w2, &mut vel.w2, &grads.w2);
        step(&mut model.b2, &mut vel.b2, &grads.b2);
    }
    Ok((
        model,
        TrainStats {
            epochs: cfg.epochs,
            final_loss,
        },
    ))
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    model: LatentModel,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint dimensions {0}x{1}x{2} do not match this build")]
    DimensionMismatch(usize, usize, usize),
}

pub fn save_checkpoint(model: &LatentModel, path: &Path) -> Result<(), CheckpointError> {
    let ck = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        input_dim: INPUT_DIM,
        hidden_dim: HIDDEN_DIM,
        output_dim: OUTPUT_DIM,
        model: model.clone(),
    };
    let json = serde_json::to_string(&ck)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LatentModel, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(ck.format_version));
    }
    if ck.input_dim != INPUT_DIM || ck.hidden_dim != HIDDEN_DIM || ck.output_dim != OUTPUT_DIM {
        return Err(CheckpointError::DimensionMismatch(
            ck.input_dim,
            ck.hidden_dim,
            ck.output_dim,
        ));
    }
    let m = &ck.model;
    if m.w1.len() != INPUT_DIM * HIDDEN_DIM
        || m.b1.len() != HIDDEN_DIM
        || m.w2.len() != HIDDEN_DIM * OUTPUT_DIM
        || m.b2.len() != OUTPUT_DIM
    {
        return Err(CheckpointError::DimensionMismatch(
            m.w1.len(),
            m.w2.len(),
            m.b2.len(),
        ));
    }
    Ok(ck.model)
}
