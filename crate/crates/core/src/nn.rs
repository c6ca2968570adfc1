//! Dense multilayer perceptrons with ReLU hidden layers, MSE loss and Adam.
//!
//! Batches are stored column-wise: a batch of `n` inputs of width `d` is a
//! `d x n` matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid widths {0:?}: need at least two positive widths")]
    InvalidWidths(Vec<usize>),
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1` and is `out x in`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Parameter-shaped buffers: gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: mlp.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }
}

/// Layer activations from a batched forward pass, input first, output last.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Fan-in scaled uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self, NnError> {
        Self::with_rng(widths, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NnError::InvalidWidths(widths.to_vec()));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound)));
            biases.push(DVector::zeros(fan_out));
        }
        Ok(Self { widths: widths.to_vec(), weights, biases })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("widths are non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn forward(&self, input: &[f64]) -> Result<DVector<f64>, NnError> {
        if input.len() != self.input_width() {
            return Err(NnError::ShapeMismatch { expected: self.input_width(), found: input.len() });
        }
        let mut a = DVector::from_column_slice(input);
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            if l < last {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(a)
    }

    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
        Ok(self.forward_cached(inputs)?.activations.pop().expect("output present"))
    }

    pub fn forward_cached(&self, inputs: &DMatrix<f64>) -> Result<ForwardCache, NnError> {
        if inputs.nrows() != self.input_width() {
            return Err(NnError::ShapeMismatch { expected: self.input_width(), found: inputs.nrows() });
        }
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(inputs.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * activations.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Backpropagates `grad_output` (same shape as the cached output) and
    /// returns parameter gradients plus the gradient with respect to the
    /// inputs.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &DMatrix<f64>) -> (Grads, DMatrix<f64>) {
        let n = self.num_layers();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_output.clone();
        for l in (0..n).rev() {
            let a_prev = &cache.activations[l];
            gw.push(&delta * a_prev.transpose());
            gb.push(delta.column_sum());
            let mut back = self.weights[l].transpose() * &delta;
            if l > 0 {
                back.zip_apply(a_prev, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        gw.reverse();
        gb.reverse();
        (Grads { weights: gw, biases: gb }, delta)
    }

    /// Parameters in layer order, each weight matrix column-major followed by
    /// its bias.
    pub fn params_flat(&self) -> Vec<f64> {
        Grads { weights: self.weights.clone(), biases: self.biases.clone() }.flat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::ShapeMismatch { expected: self.num_params(), found: flat.len() });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            b.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn copy_from(&mut self, other: &Mlp) {
        assert_eq!(self.widths, other.widths, "copy between differently shaped networks");
        self.weights.clone_from(&other.weights);
        self.biases.clone_from(&other.biases);
    }

    /// `self <- (1 - rate) self + rate other`.
    pub fn soft_update(&mut self, other: &Mlp, rate: f64) {
        assert_eq!(self.widths, other.widths, "update between differently shaped networks");
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.zip_apply(o, |a, b| *a += rate * (b - *a));
        }
        for (w, o) in self.biases.iter_mut().zip(&other.biases) {
            w.zip_apply(o, |a, b| *a += rate * (b - *a));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Grads,
    pub v: Grads,
}

impl OptimState {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        Self { config, step: 0, m: Grads::zeros_like(mlp), v: Grads::zeros_like(mlp) }
    }

    /// One bias-corrected Adam update.
    pub fn apply(&mut self, mlp: &mut Mlp, grads: &Grads) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for l in 0..mlp.num_layers() {
            let (w, gw, mw, vw) = (&mut mlp.weights[l], &grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            for k in 0..w.len() {
                update(&mut w[k], gw[k], &mut mw[k], &mut vw[k]);
            }
            let (b, gb, mb, vb) = (&mut mlp.biases[l], &grads.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]);
            for k in 0..b.len() {
                update(&mut b[k], gb[k], &mut mb[k], &mut vb[k]);
            }
        }
    }
}

/// Mean squared error over all entries and its gradient with respect to the
/// predictions.
pub fn mse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let diff = pred - target;
    let n = diff.len() as f64;
    (diff.norm_squared() / n, diff * (2.0 / n))
}

/// One MSE regression step; returns the loss before the update.
pub fn mlp_train_step(
    mlp: &mut Mlp,
    optim: &mut OptimState,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<f64, NnError> {
    if inputs.ncols() == 0 {
        return Err(NnError::EmptyBatch);
    }
    if targets.nrows() != mlp.output_width() || targets.ncols() != inputs.ncols() {
        return Err(NnError::ShapeMismatch { expected: mlp.output_width() * inputs.ncols(), found: targets.len() });
    }
    let cache = mlp.forward_cached(inputs)?;
    let (loss, grad) = mse(cache.output(), targets);
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let (grads, _) = mlp.backward(&cache, &grad);
    optim.apply(mlp, &grads);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub version: u32,
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<ChaCha8Rng>,
}

impl MlpCheckpoint {
    pub fn new(mlp: &Mlp, optim: Option<&OptimState>, rng: Option<&ChaCha8Rng>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            widths: mlp.widths.clone(),
            params: mlp.params_flat(),
            optim: optim.cloned(),
            rng: rng.cloned(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp, NnError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut mlp = Mlp::new(&self.widths, 0)?;
        mlp.set_params_flat(&self.params)?;
        Ok(mlp)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
