//! Datasets, local training, aggregation and convergence diagnostics.

pub mod dataset;
pub mod diagnostics;
pub mod model;

pub use dataset::{load_mnist, partition, synth_dataset, Dataset, Partition, PartitionMode};
pub use diagnostics::{
    bound_terms, estimate_lipschitz, estimate_rho, expected_participation,
    full_participation_gradient, BoundTerms, DiagnosticsReport,
};
pub use model::{evaluate, local_gradient, local_loss, local_update, model_dim, ModelParams};

use crate::error::{Error, Result};

/// Age-weighted model aggregation over the selected set:
///
/// `w = sum_n a_n S_n beta_n w_n / sum_n a_n S_n beta_n`.
///
/// Errors when no client is selected; the caller keeps the previous
/// global model in that case.
pub fn aggregate(
    models: &[Option<ModelParams>],
    weights: &[f64],
    selected: &[bool],
    sample_counts: &[usize],
) -> Result<ModelParams> {
    check_aligned(models.len(), weights, selected, sample_counts)?;
    let mut acc: Option<Vec<f64>> = None;
    let mut normalizer = 0.0;
    for n in 0..models.len() {
        if !selected[n] {
            continue;
        }
        let model = models[n].as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("client {n} is selected but has no model"))
        })?;
        let coef = weights[n] * sample_counts[n] as f64;
        accumulate(&mut acc, model, coef)?;
        normalizer += coef;
    }
    finish(acc, normalizer)
}

/// Aggregation with gated ANN predictions standing in for unselected
/// clients: selected clients contribute their true local models,
/// unselected clients contribute their predicted models when the
/// prediction error passes the gate `E_n <= omega`. Falls back to
/// plain aggregation when no prediction passes.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_with_prediction(
    models: &[Option<ModelParams>],
    predictions: &[Option<ModelParams>],
    prediction_errors: &[f64],
    omega: f64,
    weights: &[f64],
    selected: &[bool],
    sample_counts: &[usize],
) -> Result<ModelParams> {
    check_aligned(models.len(), weights, selected, sample_counts)?;
    if predictions.len() != models.len() || prediction_errors.len() != models.len() {
        return Err(Error::Dimension("predictions not aligned with clients".into()));
    }
    let mut acc: Option<Vec<f64>> = None;
    let mut normalizer = 0.0;
    for n in 0..models.len() {
        let coef = weights[n] * sample_counts[n] as f64;
        if selected[n] {
            let model = models[n].as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("client {n} is selected but has no model"))
            })?;
            accumulate(&mut acc, model, coef)?;
            normalizer += coef;
        } else if let Some(pred) = predictions[n].as_ref() {
            if prediction_errors[n] <= omega {
                accumulate(&mut acc, pred, coef)?;
                normalizer += coef;
            }
        }
    }
    finish(acc, normalizer)
}

fn check_aligned(
    n: usize,
    weights: &[f64],
    selected: &[bool],
    sample_counts: &[usize],
) -> Result<()> {
    if weights.len() != n || selected.len() != n || sample_counts.len() != n {
        return Err(Error::Dimension("aggregation inputs not aligned".into()));
    }
    Ok(())
}

fn accumulate(acc: &mut Option<Vec<f64>>, model: &ModelParams, coef: f64) -> Result<()> {
    match acc {
        None => {
            *acc = Some(model.weights.iter().map(|w| coef * w).collect());
        }
        Some(sum) => {
            if sum.len() != model.dim() {
                return Err(Error::Dimension("models have mixed dimensions".into()));
            }
            for (s, w) in sum.iter_mut().zip(&model.weights) {
                *s += coef * w;
            }
        }
    }
    Ok(())
}

fn finish(acc: Option<Vec<f64>>, normalizer: f64) -> Result<ModelParams> {
    let mut weights = acc.ok_or(Error::EmptyAggregation)?;
    if normalizer <= 0.0 {
        return Err(Error::EmptyAggregation);
    }
    for w in &mut weights {
        *w /= normalizer;
    }
    Ok(ModelParams { weights })
}
