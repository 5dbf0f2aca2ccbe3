//! Multinomial logistic regression on flat parameter vectors.
//!
//! The model is linear with a folded-in bias: for feature dimension D
//! and C classes the parameter vector has length K = (D + 1) * C,
//! stored class-major (`weights[c * (D+1) + j]`, bias at j = D).
//! The local loss is the mean cross-entropy over a client's samples;
//! training runs full-batch gradient descent, so a local update is an
//! exact, deterministic function of the global model and the slice.

use crate::learning::dataset::Dataset;

/// A flat model vector (local or global).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> ModelParams {
        ModelParams { weights: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Flat parameter count for a dataset shape.
pub fn model_dim(n_features: usize, n_classes: usize) -> usize {
    (n_features + 1) * n_classes
}

/// Dot product of a model row with an f32 feature row plus bias.
/// Four accumulators keep the loop vectorizable with a fixed,
/// reproducible summation order.
#[inline]
fn row_dot(row: &[f64], x: &[f32]) -> f64 {
    let d = x.len();
    let mut acc = [0.0f64; 4];
    let chunks = d / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += row[i] * x[i] as f64;
        acc[1] += row[i + 1] * x[i + 1] as f64;
        acc[2] += row[i + 2] * x[i + 2] as f64;
        acc[3] += row[i + 3] * x[i + 3] as f64;
    }
    let mut tail = 0.0;
    for i in chunks * 4..d {
        tail += row[i] * x[i] as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail + row[d]
}

/// Softmax probabilities for one sample; returns the log-normalizer
/// offset so the caller can form the log-likelihood stably.
#[inline]
fn sample_probs(w: &[f64], x: &[f32], n_features: usize, probs: &mut [f64]) {
    let stride = n_features + 1;
    let mut max_logit = f64::NEG_INFINITY;
    for (c, p) in probs.iter_mut().enumerate() {
        let z = row_dot(&w[c * stride..c * stride + stride], x);
        *p = z;
        if z > max_logit {
            max_logit = z;
        }
    }
    let mut total = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max_logit).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
}

fn check_model(w: &ModelParams, ds: &Dataset) -> (usize, usize) {
    let (d, c) = (ds.n_features, ds.n_classes);
    assert_eq!(w.dim(), model_dim(d, c), "model dimension mismatch");
    (d, c)
}

/// Mean cross-entropy of the model over a slice of the dataset.
pub fn local_loss(w: &ModelParams, ds: &Dataset, indices: &[u32]) -> f64 {
    assert!(!indices.is_empty(), "loss over an empty slice");
    let (d, c) = check_model(w, ds);
    let mut probs = vec![0.0; c];
    let mut total = 0.0;
    for &i in indices {
        let x = ds.feature_row(i as usize);
        sample_probs(&w.weights, x, d, &mut probs);
        let p = probs[ds.labels[i as usize] as usize].max(1e-300);
        total -= p.ln();
    }
    total / indices.len() as f64
}

/// Exact full-batch gradient of [`local_loss`].
pub fn local_gradient(w: &ModelParams, ds: &Dataset, indices: &[u32]) -> Vec<f64> {
    assert!(!indices.is_empty(), "gradient over an empty slice");
    let (d, c) = check_model(w, ds);
    let stride = d + 1;
    let mut grad = vec![0.0; w.dim()];
    let mut probs = vec![0.0; c];
    let inv_n = 1.0 / indices.len() as f64;
    for &i in indices {
        let x = ds.feature_row(i as usize);
        sample_probs(&w.weights, x, d, &mut probs);
        let label = ds.labels[i as usize] as usize;
        for (cls, &p) in probs.iter().enumerate() {
            let err = (p - f64::from(u8::from(cls == label))) * inv_n;
            if err == 0.0 {
                continue;
            }
            let row = &mut grad[cls * stride..cls * stride + stride];
            for (g, &xv) in row[..d].iter_mut().zip(x) {
                *g += err * xv as f64;
            }
            row[d] += err;
        }
    }
    grad
}

/// Full-batch gradient descent from the global model:
/// `epochs` steps of `w <- w - lambda * grad(local_loss)(w)`.
pub fn local_update(
    w_global: &ModelParams,
    ds: &Dataset,
    indices: &[u32],
    learning_rate: f64,
    epochs: usize,
) -> ModelParams {
    assert!(learning_rate > 0.0, "learning rate must be positive");
    assert!(epochs >= 1, "need at least one epoch");
    let mut w = w_global.clone();
    for _ in 0..epochs {
        let grad = local_gradient(&w, ds, indices);
        for (wi, gi) in w.weights.iter_mut().zip(&grad) {
            *wi -= learning_rate * gi;
        }
    }
    w
}

/// Argmax-class accuracy and mean cross-entropy over a whole dataset.
pub fn evaluate(w: &ModelParams, ds: &Dataset) -> (f64, f64) {
    assert!(ds.n_samples > 0, "evaluation set must be nonempty");
    let (d, c) = check_model(w, ds);
    let mut probs = vec![0.0; c];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..ds.n_samples {
        let x = ds.feature_row(i);
        sample_probs(&w.weights, x, d, &mut probs);
        let label = ds.labels[i] as usize;
        loss -= probs[label].max(1e-300).ln();
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(k, _)| k)
            .unwrap_or(0);
        if pred == label {
            correct += 1;
        }
    }
    (correct as f64 / ds.n_samples as f64, loss / ds.n_samples as f64)
}
