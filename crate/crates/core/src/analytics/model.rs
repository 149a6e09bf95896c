//! Engagement classifier over hashed bag-of-words title features.
//!
//! Two layouts share one flat weight vector:
//!
//! * logistic regression: `[w_0 .. w_{d-1}, b]`
//! * one hidden tanh layer of width `h`:
//!   `[W1 (h x d, row-major), b1 (h), w2 (h), b2]`
//!
//! Training is full-batch gradient descent on mean binary cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::types::content_hash;

use super::text::tokenize;
use super::EvalError;

pub const FEATURE_DIM: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelLayout {
    pub feature_dim: u32,
    pub hidden_dim: Option<u32>,
}

impl ModelLayout {
    pub const fn logistic(feature_dim: u32) -> Self {
        Self {
            feature_dim,
            hidden_dim: None,
        }
    }

    pub const fn mlp(feature_dim: u32, hidden_dim: u32) -> Self {
        Self {
            feature_dim,
            hidden_dim: Some(hidden_dim),
        }
    }

    pub fn param_count(&self) -> usize {
        let d = self.feature_dim as usize;
        match self.hidden_dim {
            None => d + 1,
            Some(h) => {
                let h = h as usize;
                h * d + h + h + 1
            }
        }
    }
}

impl Canonical for ModelLayout {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u32(self.feature_dim).value(&self.hidden_dim);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let l = Self {
            feature_dim: dec.u32()?,
            hidden_dim: dec.value()?,
        };
        if l.feature_dim == 0 || l.hidden_dim == Some(0) {
            return Err(DecodeError::Invalid("model dimensions must be >= 1".into()));
        }
        Ok(l)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layout: ModelLayout,
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: ModelLayout) -> Self {
        Self {
            layout,
            weights: vec![0.0; layout.param_count()],
        }
    }

    /// Seeded initialization: zeros for logistic regression, small uniform
    /// weights for the hidden layer (zero init would never break symmetry).
    pub fn initial(layout: ModelLayout, seed: u64) -> Self {
        let mut p = Self::zeros(layout);
        if let Some(h) = layout.hidden_dim {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / f64::from(layout.feature_dim).sqrt();
            let n_w1 = h as usize * layout.feature_dim as usize;
            for w in &mut p.weights[..n_w1] {
                *w = rng.gen_range(-scale..scale);
            }
            let off = n_w1 + h as usize;
            let scale2 = 1.0 / f64::from(h).sqrt();
            for w in &mut p.weights[off..off + h as usize] {
                *w = rng.gen_range(-scale2..scale2);
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.weights.len() != self.layout.param_count() {
            return Err(EvalError::LayoutMismatch);
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Probability of engagement.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let d = self.layout.feature_dim as usize;
        match self.layout.hidden_dim {
            None => dot(&self.weights[..d], x) + self.weights[d],
            Some(h) => {
                let h = h as usize;
                let (w1, rest) = self.weights.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut z = b2[0];
                for j in 0..h {
                    z += w2[j] * (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh();
                }
                z
            }
        }
    }
}

impl Canonical for ModelParams {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.layout).value(&self.weights);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let p = Self {
            layout: dec.value()?,
            weights: dec.value()?,
        };
        p.validate()
            .map_err(|e| DecodeError::Invalid(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

impl Canonical for TrainHyper {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u32(self.epochs).f64(self.learning_rate).u64(self.seed);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let h = Self {
            epochs: dec.u32()?,
            learning_rate: dec.f64()?,
            seed: dec.u64()?,
        };
        if !(h.learning_rate.is_finite() && h.learning_rate > 0.0) {
            return Err(DecodeError::Invalid(
                "learning rate must be positive and finite".into(),
            ));
        }
        Ok(h)
    }
}

/// A featurized training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: bool,
}

fn feature_index(token: &str, dim: u32) -> usize {
    let h = content_hash(token.as_bytes());
    let mut first = [0u8; 8];
    first.copy_from_slice(&h.0[..8]);
    (u64::from_be_bytes(first) % u64::from(dim)) as usize
}

/// Hashed bag-of-words counts: each token adds 1 at
/// `u64_be(sha256(token)[..8]) mod dim`.
pub fn featurize(text: &str, dim: u32) -> Vec<f64> {
    let mut x = vec![0.0; dim as usize];
    for tok in tokenize(text) {
        x[feature_index(&tok, dim)] += 1.0;
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_batch(params: &ModelParams, batch: &[Example]) -> Result<(), EvalError> {
    params.validate()?;
    if batch.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let d = params.layout.feature_dim as usize;
    if batch.iter().any(|e| e.features.len() != d) {
        return Err(EvalError::LayoutMismatch);
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn loss(params: &ModelParams, batch: &[Example]) -> Result<f64, EvalError> {
    check_batch(params, batch)?;
    let total: f64 = batch
        .iter()
        .map(|e| {
            let z = params.logit(&e.features);
            softplus(z) - if e.label { z } else { 0.0 }
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Mean binary cross-entropy and its gradient with respect to every weight.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[Example],
) -> Result<(f64, Vec<f64>), EvalError> {
    check_batch(params, batch)?;
    let d = params.layout.feature_dim as usize;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.weights.len()];
    let mut total = 0.0;

    match params.layout.hidden_dim {
        None => {
            for e in batch {
                let z = dot(&params.weights[..d], &e.features) + params.weights[d];
                let y = if e.label { 1.0 } else { 0.0 };
                total += softplus(z) - y * z;
                let r = (sigmoid(z) - y) / n;
                for (g, x) in grad[..d].iter_mut().zip(&e.features) {
                    *g += r * x;
                }
                grad[d] += r;
            }
        }
        Some(h) => {
            let h = h as usize;
            let (w1, rest) = params.weights.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h);
            let (o_w1, o_b1, o_w2, o_b2) = (0, h * d, h * d + h, h * d + 2 * h);
            let mut act = vec![0.0; h];
            for e in batch {
                let mut z = b2[0];
                for j in 0..h {
                    act[j] = (dot(&w1[j * d..(j + 1) * d], &e.features) + b1[j]).tanh();
                    z += w2[j] * act[j];
                }
                let y = if e.label { 1.0 } else { 0.0 };
                total += softplus(z) - y * z;
                let r = (sigmoid(z) - y) / n;
                grad[o_b2] += r;
                for j in 0..h {
                    grad[o_w2 + j] += r * act[j];
                    let back = r * w2[j] * (1.0 - act[j] * act[j]);
                    grad[o_b1 + j] += back;
                    let row = &mut grad[o_w1 + j * d..o_w1 + (j + 1) * d];
                    for (g, x) in row.iter_mut().zip(&e.features) {
                        *g += back * x;
                    }
                }
            }
        }
    }
    Ok((total / n, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model_out: ModelParams,
    pub n_samples: u64,
    /// Loss of `model_out` on the training batch.
    pub loss_final: f64,
}

impl Canonical for TrainOutcome {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.value(&self.model_out)
            .u64(self.n_samples)
            .f64(self.loss_final);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            model_out: dec.value()?,
            n_samples: dec.u64()?,
            loss_final: dec.f64()?,
        })
    }
}

/// Full-batch gradient descent for `hyper.epochs` steps.
pub fn local_train(
    batch: &[Example],
    model_in: &ModelParams,
    hyper: &TrainHyper,
) -> Result<TrainOutcome, EvalError> {
    check_batch(model_in, batch)?;
    let mut params = model_in.clone();
    for _ in 0..hyper.epochs {
        let (_, grad) = loss_and_grad(&params, batch)?;
        for (w, g) in params.weights.iter_mut().zip(&grad) {
            *w -= hyper.learning_rate * g;
        }
        if !params.is_finite() {
            return Err(EvalError::NonFinite);
        }
    }
    let loss_final = loss(&params, batch)?;
    Ok(TrainOutcome {
        model_out: params,
        n_samples: batch.len() as u64,
        loss_final,
    })
}

/// Fraction of examples whose thresholded prediction matches the label.
pub fn accuracy(params: &ModelParams, batch: &[Example]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let correct = batch
        .iter()
        .filter(|e| (params.predict(&e.features) >= 0.5) == e.label)
        .count();
    correct as f64 / batch.len() as f64
}
