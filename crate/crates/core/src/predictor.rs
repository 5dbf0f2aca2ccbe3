//! Server-side ANN predicting unselected clients' local models.
//!
//! One single-hidden-layer network per target client maps the
//! reference client's uploaded model to the difference between the two
//! models: the network output `o` approximates `F_ref - F_n`, so the
//! predicted model is `F_ref - o`. Each network trains by full-batch
//! gradient descent on a small replay buffer of (reference, target)
//! pairs harvested from rounds where the target client actually
//! uploaded. A prediction only enters aggregation when its error
//! passes the accuracy gate.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::learning::model::ModelParams;

/// Magic prefix of the serialized ANN snapshot format.
const SNAPSHOT_MAGIC: &[u8; 4] = b"ANN1";

/// Single-hidden-layer network: K -> M -> K.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub hidden_units: usize,
    pub model_dim: usize,
    /// M x K input weights, row-major.
    pub input_weights: Vec<f64>,
    /// M input biases.
    pub input_bias: Vec<f64>,
    /// K x M output weights, row-major.
    pub output_weights: Vec<f64>,
    /// K output biases.
    pub output_bias: Vec<f64>,
}

impl AnnModel {
    /// Fresh network: weights uniform in [-scale, scale], biases zero.
    pub fn init(hidden_units: usize, model_dim: usize, scale: f64, rng: &mut impl Rng) -> AnnModel {
        assert!(hidden_units > 0 && model_dim > 0, "degenerate ANN shape");
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
        };
        AnnModel {
            hidden_units,
            model_dim,
            input_weights: draw(hidden_units * model_dim),
            input_bias: vec![0.0; hidden_units],
            output_weights: draw(model_dim * hidden_units),
            output_bias: vec![0.0; model_dim],
        }
    }

    /// Serialize as `"ANN1"`, little-endian u32 M and K, then the four
    /// parameter arrays as little-endian f64 in row-major order
    /// (input weights, input bias, output weights, output bias).
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(self.hidden_units as u32).to_le_bytes())?;
        out.write_all(&(self.model_dim as u32).to_le_bytes())?;
        for block in [
            &self.input_weights,
            &self.input_bias,
            &self.output_weights,
            &self.output_bias,
        ] {
            for v in block {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Inverse of [`AnnModel::write_to`].
    pub fn read_from(mut input: impl Read) -> Result<AnnModel> {
        let io_err = |e: std::io::Error| Error::Io { path: "<ann snapshot>".into(), source: e };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io_err)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Dataset("not an ANN snapshot (bad magic)".into()));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf).map_err(io_err)?;
        let m = u32::from_le_bytes(u32buf) as usize;
        input.read_exact(&mut u32buf).map_err(io_err)?;
        let k = u32::from_le_bytes(u32buf) as usize;
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            let mut f64buf = [0u8; 8];
            for _ in 0..len {
                input.read_exact(&mut f64buf).map_err(io_err)?;
                out.push(f64::from_le_bytes(f64buf));
            }
            Ok(out)
        };
        Ok(AnnModel {
            hidden_units: m,
            model_dim: k,
            input_weights: read_block(m * k)?,
            input_bias: read_block(m)?,
            output_weights: read_block(k * m)?,
            output_bias: read_block(k)?,
        })
    }
}

/// A gated prediction for one unselected client.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub target_client: usize,
    pub predicted: ModelParams,
    pub error: f64,
    pub passed_gate: bool,
}

/// Reference-client choice: the client with the largest aggregation
/// weight, scored by `a_n * || sum_i grad l_(n,i) ||` (the norm of the
/// weight-scaled gradient sum). `gradient_sums` entries are `None` for
/// clients that are not candidates; ties prefer the lower index.
pub fn select_reference_client(
    weights: &[f64],
    gradient_sums: &[Option<Vec<f64>>],
) -> Result<usize> {
    if weights.len() != gradient_sums.len() {
        return Err(Error::Dimension("weights/gradients not aligned".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (n, grad) in gradient_sums.iter().enumerate() {
        let Some(g) = grad else { continue };
        let score = weights[n] * g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let better = match best {
            None => true,
            Some((_, s)) => score > s,
        };
        if better {
            best = Some((n, score));
        }
    }
    best.map(|(n, _)| n)
        .ok_or_else(|| Error::InvalidArgument("no candidate for reference client".into()))
}

/// Hidden-layer activation `2 / (1 + exp(-2x)) - 1` (equals tanh).
#[inline]
pub fn activation(x: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * x).exp()) - 1.0
}

#[inline]
fn activation_derivative_from_output(v: f64) -> f64 {
    1.0 - v * v
}

fn hidden_states(model: &AnnModel, input: &[f64]) -> Vec<f64> {
    let k = model.model_dim;
    (0..model.hidden_units)
        .map(|m| {
            let row = &model.input_weights[m * k..(m + 1) * k];
            let mut z = model.input_bias[m];
            for (w, x) in row.iter().zip(input) {
                z += w * x;
            }
            activation(z)
        })
        .collect()
}

/// Forward pass: `V = act(v_in x + b_in)`, `o = v_out V + b_out`,
/// prediction `= reference - o`.
pub fn ann_forward(model: &AnnModel, reference: &ModelParams) -> Result<ModelParams> {
    if reference.dim() != model.model_dim {
        return Err(Error::Dimension(format!(
            "ANN expects dimension {}, reference has {}",
            model.model_dim,
            reference.dim()
        )));
    }
    let hidden = hidden_states(model, &reference.weights);
    let m = model.hidden_units;
    let weights = reference
        .weights
        .iter()
        .enumerate()
        .map(|(kk, &r)| {
            let row = &model.output_weights[kk * m..(kk + 1) * m];
            let mut o = model.output_bias[kk];
            for (w, v) in row.iter().zip(&hidden) {
                o += w * v;
            }
            r - o
        })
        .collect();
    Ok(ModelParams { weights })
}

/// Training loss over the example pairs:
/// `(1 / 2E) * sum_e || predict(ref_e) - target_e ||^2`.
pub fn ann_training_loss(model: &AnnModel, examples: &[(ModelParams, ModelParams)]) -> f64 {
    let mut total = 0.0;
    for (reference, target) in examples {
        let pred = ann_forward(model, reference).expect("dimension checked by caller");
        total += pred
            .weights
            .iter()
            .zip(&target.weights)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    total / (2.0 * examples.len() as f64)
}

/// Gradient of [`ann_training_loss`] with respect to every parameter
/// block, in the same layout as the model's own arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnGradients {
    pub input_weights: Vec<f64>,
    pub input_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

/// Backpropagated full-batch gradient of the training loss.
pub fn ann_gradients(model: &AnnModel, examples: &[(ModelParams, ModelParams)]) -> AnnGradients {
    assert!(!examples.is_empty(), "gradient needs at least one example");
    let (m, k) = (model.hidden_units, model.model_dim);
    let inv_examples = 1.0 / examples.len() as f64;
    let mut grads = AnnGradients {
        input_weights: vec![0.0; m * k],
        input_bias: vec![0.0; m],
        output_weights: vec![0.0; k * m],
        output_bias: vec![0.0; k],
    };

    for (reference, target) in examples {
        let x = &reference.weights;
        let hidden = hidden_states(model, x);
        // residual of the prediction; d loss / d output = -residual/E
        let mut d_hidden = vec![0.0; m];
        for kk in 0..k {
            let row = &model.output_weights[kk * m..(kk + 1) * m];
            let mut o = model.output_bias[kk];
            for (w, v) in row.iter().zip(&hidden) {
                o += w * v;
            }
            let residual = (x[kk] - o) - target.weights[kk];
            let d_out = -residual * inv_examples;
            let g_row = &mut grads.output_weights[kk * m..(kk + 1) * m];
            for (g, v) in g_row.iter_mut().zip(&hidden) {
                *g += d_out * v;
            }
            grads.output_bias[kk] += d_out;
            for (dh, w) in d_hidden.iter_mut().zip(row) {
                *dh += w * d_out;
            }
        }
        for mm in 0..m {
            let dz = d_hidden[mm] * activation_derivative_from_output(hidden[mm]);
            let g_row = &mut grads.input_weights[mm * k..(mm + 1) * k];
            for (g, xv) in g_row.iter_mut().zip(x) {
                *g += dz * xv;
            }
            grads.input_bias[mm] += dz;
        }
    }
    grads
}

/// `steps` full-batch gradient-descent steps on the training loss.
/// Deterministic; a zero-step call returns the model unchanged.
pub fn ann_train(
    mut model: AnnModel,
    examples: &[(ModelParams, ModelParams)],
    steps: usize,
    rate: f64,
) -> AnnModel {
    assert!(!examples.is_empty(), "training needs at least one example");
    for _ in 0..steps {
        let grads = ann_gradients(&model, examples);
        for (w, g) in model.input_weights.iter_mut().zip(&grads.input_weights) {
            *w -= rate * g;
        }
        for (w, g) in model.input_bias.iter_mut().zip(&grads.input_bias) {
            *w -= rate * g;
        }
        for (w, g) in model.output_weights.iter_mut().zip(&grads.output_weights) {
            *w -= rate * g;
        }
        for (w, g) in model.output_bias.iter_mut().zip(&grads.output_bias) {
            *w -= rate * g;
        }
    }
    model
}

/// Prediction error `E = (1/2K) || predicted - actual ||^2`.
pub fn prediction_error(predicted: &ModelParams, actual: &ModelParams) -> Result<f64> {
    if predicted.dim() != actual.dim() {
        return Err(Error::Dimension(format!(
            "prediction dim {} vs actual dim {}",
            predicted.dim(),
            actual.dim()
        )));
    }
    let k = predicted.dim() as f64;
    let sq: f64 = predicted
        .weights
        .iter()
        .zip(&actual.weights)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(sq / (2.0 * k))
}

/// Accuracy gate: the prediction enters aggregation iff `error <= omega`
/// (inclusive). A negative omega therefore always fails.
pub fn gate(error: f64, omega: f64) -> bool {
    error <= omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;

    fn mp(v: Vec<f64>) -> ModelParams {
        ModelParams { weights: v }
    }

    #[test]
    fn activation_is_tanh() {
        assert_eq!(activation(0.0), 0.0);
        assert!((activation(0.5) - 0.5f64.tanh()).abs() < 1e-15);
        assert!((activation(0.5) - 0.462_117).abs() < 1e-6);
        assert!((activation(50.0) - 1.0).abs() < 1e-12);
        assert!((activation(-50.0) + 1.0).abs() < 1e-12);
        for x in [-3.0, -0.7, 0.2, 2.4] {
            assert!((activation(x) - x.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_network_is_identity_on_reference() {
        let model = AnnModel {
            hidden_units: 4,
            model_dim: 3,
            input_weights: vec![0.0; 12],
            input_bias: vec![0.0; 4],
            output_weights: vec![0.0; 12],
            output_bias: vec![0.0; 3],
        };
        let reference = mp(vec![1.5, -2.0, 0.25]);
        let pred = ann_forward(&model, &reference).unwrap();
        assert_eq!(pred, reference);
    }

    #[test]
    fn bias_only_network_shifts_reference() {
        let mut model = AnnModel {
            hidden_units: 2,
            model_dim: 3,
            input_weights: vec![0.3; 6],
            input_bias: vec![0.1; 2],
            output_weights: vec![0.0; 6],
            output_bias: vec![0.7; 3],
        };
        model.output_weights.iter_mut().for_each(|w| *w = 0.0);
        let reference = mp(vec![1.0, 2.0, 3.0]);
        let pred = ann_forward(&model, &reference).unwrap();
        for (p, r) in pred.weights.iter().zip(&reference.weights) {
            assert!((p - (r - 0.7)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mut rng = substream(31, Stream::AnnInit);
        let (m, k) = (3, 5);
        let model = AnnModel::init(m, k, 0.1, &mut rng);
        let reference = mp((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let pred = ann_forward(&model, &reference).unwrap();
        // independent scalar evaluation
        for kk in 0..k {
            let mut o = model.output_bias[kk];
            for mm in 0..m {
                let mut z = model.input_bias[mm];
                for jj in 0..k {
                    z += model.input_weights[mm * k + jj] * reference.weights[jj];
                }
                o += model.output_weights[kk * m + mm] * z.tanh();
            }
            let expect = reference.weights[kk] - o;
            assert!((pred.weights[kk] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let mut rng = substream(32, Stream::AnnInit);
        let model = AnnModel::init(2, 4, 0.1, &mut rng);
        assert!(ann_forward(&model, &mp(vec![0.0; 3])).is_err());
    }

    #[test]
    fn training_gradient_matches_central_differences() {
        let mut rng = substream(33, Stream::AnnInit);
        let (m, k) = (2, 3);
        let model = AnnModel::init(m, k, 0.1, &mut rng);
        let examples: Vec<(ModelParams, ModelParams)> = (0..4)
            .map(|_| {
                (
                    mp((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                    mp((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                )
            })
            .collect();
        let grads = ann_gradients(&model, &examples);

        let h = 1e-5;
        let check = |analytic: f64, set: &dyn Fn(&mut AnnModel, f64), get: f64| {
            let mut plus = model.clone();
            set(&mut plus, get + h);
            let mut minus = model.clone();
            set(&mut minus, get - h);
            let fd = (ann_training_loss(&plus, &examples) - ann_training_loss(&minus, &examples))
                / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (analytic - fd).abs() / denom < 1e-5,
                "analytic {analytic} vs fd {fd}"
            );
        };
        for idx in [0usize, 2, 5] {
            check(grads.input_weights[idx], &|mo, v| mo.input_weights[idx] = v, model.input_weights[idx]);
            check(grads.output_weights[idx], &|mo, v| mo.output_weights[idx] = v, model.output_weights[idx]);
        }
        check(grads.input_bias[1], &|mo, v| mo.input_bias[1] = v, model.input_bias[1]);
        check(grads.output_bias[2], &|mo, v| mo.output_bias[2] = v, model.output_bias[2]);
    }

    #[test]
    fn training_reduces_error_on_repeated_pair() {
        let mut rng = substream(34, Stream::AnnInit);
        let (m, k) = (4, 6);
        let model = AnnModel::init(m, k, 0.1, &mut rng);
        let reference = mp((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let target = mp((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let examples = vec![(reference.clone(), target.clone())];
        let initial = prediction_error(&ann_forward(&model, &reference).unwrap(), &target).unwrap();
        let trained = ann_train(model, &examples, 200, 0.05);
        let fin = prediction_error(&ann_forward(&trained, &reference).unwrap(), &target).unwrap();
        assert!(fin < initial, "final {fin} >= initial {initial}");
        assert!(fin < 1e-3, "final error {fin}");
        assert_eq!(trained.hidden_units, m);
        assert_eq!(trained.model_dim, k);
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let mut rng = substream(35, Stream::AnnInit);
        let model = AnnModel::init(2, 3, 0.1, &mut rng);
        let examples = vec![(mp(vec![1.0, 0.0, 0.0]), mp(vec![0.0, 1.0, 0.0]))];
        let same = ann_train(model.clone(), &examples, 0, 0.1);
        assert_eq!(model, same);
    }

    #[test]
    fn training_loss_never_increases_over_steps() {
        let mut rng = substream(36, Stream::AnnInit);
        let model = AnnModel::init(3, 4, 0.1, &mut rng);
        let examples: Vec<_> = (0..3)
            .map(|_| {
                (
                    mp((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect()),
                    mp((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect()),
                )
            })
            .collect();
        let before = ann_training_loss(&model, &examples);
        let after = ann_training_loss(&ann_train(model, &examples, 20, 0.02), &examples);
        assert!(after <= before + 1e-12);
    }

    #[test]
    fn prediction_error_quadratic_and_symmetric() {
        let a = mp(vec![1.0, 2.0, 3.0, 4.0]);
        let b = mp(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(prediction_error(&a, &b).unwrap(), 0.0);

        // unit difference in one of K = 4 coordinates: E = 1/(2K)
        let c = mp(vec![2.0, 2.0, 3.0, 4.0]);
        assert!((prediction_error(&a, &c).unwrap() - 1.0 / 8.0).abs() < 1e-15);
        assert_eq!(
            prediction_error(&a, &c).unwrap(),
            prediction_error(&c, &a).unwrap()
        );

        // doubling the difference quadruples the error
        let d = mp(vec![3.0, 2.0, 3.0, 4.0]);
        let e1 = prediction_error(&a, &c).unwrap();
        let e2 = prediction_error(&a, &d).unwrap();
        assert!((e2 - 4.0 * e1).abs() < 1e-12);
    }

    #[test]
    fn gate_is_inclusive() {
        assert!(gate(0.0, 0.0));
        assert!(gate(0.3, 0.3));
        assert!(!gate(0.3 + 1e-12, 0.3));
        assert!(!gate(0.0, -1.0)); // always-fail sentinel
    }

    #[test]
    fn reference_selection_scores_weight_times_gradient_norm() {
        // single candidate
        let g = vec![Some(vec![1.0, 0.0])];
        assert_eq!(select_reference_client(&[1.0], &g).unwrap(), 0);
        // equal gradients: larger weight wins
        let g = vec![Some(vec![3.0, 4.0]), Some(vec![3.0, 4.0])];
        assert_eq!(select_reference_client(&[0.75, 0.25], &g).unwrap(), 0);
        assert_eq!(select_reference_client(&[0.25, 0.75], &g).unwrap(), 1);
        // brute-force comparison on a random instance
        let mut rng = substream(37, Stream::AnnInit);
        let weights: Vec<f64> = (0..6).map(|_| rng.gen_range(0.01..1.0)).collect();
        let grads: Vec<Option<Vec<f64>>> = (0..6)
            .map(|_| Some((0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()))
            .collect();
        let best = select_reference_client(&weights, &grads).unwrap();
        let oracle = (0..6)
            .max_by(|&a, &b| {
                let sa = weights[a]
                    * grads[a].as_ref().unwrap().iter().map(|x| x * x).sum::<f64>().sqrt();
                let sb = weights[b]
                    * grads[b].as_ref().unwrap().iter().map(|x| x * x).sum::<f64>().sqrt();
                sa.partial_cmp(&sb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(best, oracle);
        // no candidates: error
        assert!(select_reference_client(&[0.5], &[None]).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut rng = substream(38, Stream::AnnInit);
        let model = AnnModel::init(3, 5, 0.1, &mut rng);
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let back = AnnModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(model, back);
        assert!(AnnModel::read_from(&buf[1..]).is_err());
    }
}
