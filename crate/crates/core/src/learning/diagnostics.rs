//! Empirical convergence diagnostics.
//!
//! These estimate the constants of the smoothness/bound assumptions
//! (Lipschitz constant of the full gradient, per-sample gradient bound
//! ratio rho) and evaluate the per-round convergence-gap bound terms,
//! so a run can check the bound as an empirical inequality.

use crate::error::{Error, Result};
use crate::learning::dataset::{Dataset, Partition};
use crate::learning::model::{local_gradient, ModelParams};

/// Snapshot of the diagnostic quantities at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub full_grad_norm: f64,
    pub rho_estimate: f64,
    pub lipschitz_estimate: f64,
    /// `[ ||grad G||^2, -(1/2L)||grad G||^2, selection term ]`.
    pub bound_terms: [f64; 3],
    /// Sample mass participating in aggregation (true or gated-predicted).
    pub expected_participation: f64,
}

/// Gradient of the global loss under full client participation:
/// the sample-count-weighted mean of the per-client mean gradients.
pub fn full_participation_gradient(
    w: &ModelParams,
    partition: &Partition,
    dataset: &Dataset,
) -> Vec<f64> {
    let mut total = vec![0.0; w.dim()];
    let mut total_samples = 0.0;
    for indices in &partition.client_indices {
        if indices.is_empty() {
            continue;
        }
        let g = local_gradient(w, dataset, indices);
        let beta = indices.len() as f64;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += beta * gi;
        }
        total_samples += beta;
    }
    for t in &mut total {
        *t /= total_samples;
    }
    total
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Tightest empirical rho at the current model: the max over clients
/// and samples of `||grad l_(n,i)||^2 / ||grad G||^2`.
///
/// For the linear model the per-sample gradient is the outer product
/// of the (bias-extended) feature vector with the probability error,
/// so its norm factorizes and no per-sample vector is materialized.
pub fn estimate_rho(w: &ModelParams, partition: &Partition, dataset: &Dataset) -> Result<f64> {
    let full = full_participation_gradient(w, partition, dataset);
    let denom = norm_sq(&full);
    if denom < 1e-300 {
        return Err(Error::Domain(format!(
            "rho is degenerate: full-participation gradient norm is {:.3e}",
            denom.sqrt()
        )));
    }

    let (d, c) = (dataset.n_features, dataset.n_classes);
    let stride = d + 1;
    let mut probs = vec![0.0; c];
    let mut max_sample_norm_sq = 0.0f64;
    for indices in &partition.client_indices {
        for &i in indices {
            let x = dataset.feature_row(i as usize);
            // probability vector for this sample
            let mut max_logit = f64::NEG_INFINITY;
            for (cls, p) in probs.iter_mut().enumerate() {
                let row = &w.weights[cls * stride..cls * stride + stride];
                let mut z = row[d];
                for (wi, &xv) in row[..d].iter().zip(x) {
                    z += wi * xv as f64;
                }
                *p = z;
                max_logit = max_logit.max(z);
            }
            let mut total = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max_logit).exp();
                total += *p;
            }
            let label = dataset.labels[i as usize] as usize;
            let mut err_norm_sq = 0.0;
            for (cls, p) in probs.iter().enumerate() {
                let e = p / total - f64::from(u8::from(cls == label));
                err_norm_sq += e * e;
            }
            let x_norm_sq =
                1.0 + x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            max_sample_norm_sq = max_sample_norm_sq.max(x_norm_sq * err_norm_sq);
        }
    }
    Ok(max_sample_norm_sq / denom)
}

/// Empirical Lipschitz constant of the full gradient: the max of
/// `||grad G(w') - grad G(w)|| / ||w' - w||` over consecutive
/// trajectory points. Identical consecutive points are skipped;
/// errors when fewer than two distinct points remain.
pub fn estimate_lipschitz(trajectory: &[(ModelParams, Vec<f64>)]) -> Result<f64> {
    if trajectory.len() < 2 {
        return Err(Error::InvalidArgument(
            "lipschitz estimate needs at least two trajectory points".into(),
        ));
    }
    let mut best: Option<f64> = None;
    for pair in trajectory.windows(2) {
        let (wa, ga) = &pair[0];
        let (wb, gb) = &pair[1];
        let dw: f64 = wa
            .weights
            .iter()
            .zip(&wb.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dw == 0.0 {
            continue;
        }
        let dg: f64 =
            ga.iter().zip(gb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let ratio = dg / dw;
        best = Some(best.map_or(ratio, |b| b.max(ratio)));
    }
    best.ok_or_else(|| {
        Error::InvalidArgument("all trajectory points coincide; no Lipschitz ratio".into())
    })
}

/// The convergence-gap bound terms at the current round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// `||grad G(w)||^2`.
    pub grad_norm_sq: f64,
    /// `-(1/2L) ||grad G||^2` — guaranteed descent under full participation.
    pub descent_term: f64,
    /// `(2 rho ||grad G||^2 / (L sum beta)) * sum_n beta_n (1 - a_n S_n)`
    /// — the selection-induced slack.
    pub selection_term: f64,
}

/// Evaluate the bound terms for a selection decision.
pub fn bound_terms(
    w: &ModelParams,
    partition: &Partition,
    dataset: &Dataset,
    weights: &[f64],
    selected: &[bool],
    lipschitz: f64,
    rho: f64,
) -> BoundTerms {
    assert!(lipschitz > 0.0, "lipschitz constant must be positive");
    let grad_norm_sq = norm_sq(&full_participation_gradient(w, partition, dataset));
    let total_samples: f64 = partition.sample_counts.iter().map(|&b| b as f64).sum();
    let mut missing_mass = 0.0;
    for n in 0..partition.sample_counts.len() {
        let a_s = if selected[n] { weights[n] } else { 0.0 };
        missing_mass += partition.sample_counts[n] as f64 * (1.0 - a_s);
    }
    BoundTerms {
        grad_norm_sq,
        descent_term: -grad_norm_sq / (2.0 * lipschitz),
        selection_term: 2.0 * rho * grad_norm_sq / (lipschitz * total_samples) * missing_mass,
    }
}

/// Aggregate participation mass: selected clients count fully,
/// unselected ones count when their prediction passed the gate.
pub fn expected_participation(
    sample_counts: &[usize],
    selected: &[bool],
    gate_passed: &[bool],
) -> f64 {
    sample_counts
        .iter()
        .enumerate()
        .map(|(n, &b)| {
            if selected[n] || gate_passed[n] {
                b as f64
            } else {
                0.0
            }
        })
        .sum()
}

/// Assemble the full diagnostics snapshot for one round: the empirical
/// constants, the bound terms for the given selection, and the
/// participation mass. `trajectory` supplies the Lipschitz estimate;
/// `gate_passed` marks unselected clients whose predictions entered
/// aggregation (all-false when the predictor is off).
pub fn report(
    w: &ModelParams,
    partition: &Partition,
    dataset: &Dataset,
    weights: &[f64],
    selected: &[bool],
    trajectory: &[(ModelParams, Vec<f64>)],
    gate_passed: &[bool],
) -> Result<DiagnosticsReport> {
    let lipschitz = estimate_lipschitz(trajectory)?;
    let rho = estimate_rho(w, partition, dataset)?;
    let terms = bound_terms(w, partition, dataset, weights, selected, lipschitz, rho);
    Ok(DiagnosticsReport {
        full_grad_norm: terms.grad_norm_sq.sqrt(),
        rho_estimate: rho,
        lipschitz_estimate: lipschitz,
        bound_terms: [terms.grad_norm_sq, terms.descent_term, terms.selection_term],
        expected_participation: expected_participation(
            &partition.sample_counts,
            selected,
            gate_passed,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::dataset::{partition, synth_dataset, PartitionMode};
    use crate::learning::model::{local_gradient, model_dim};
    use crate::rng::{substream, Stream};
    use rand::Rng;

    fn setup(n_clients: usize) -> (Dataset, Partition) {
        let mut rng = substream(21, Stream::Partition);
        let ds = synth_dataset(&mut rng, 120, 3, 2).unwrap();
        let p = partition(&ds, n_clients, PartitionMode::Iid, &mut rng).unwrap();
        (ds, p)
    }

    #[test]
    fn full_gradient_of_single_client_is_local_gradient() {
        let (ds, p) = setup(1);
        let w = ModelParams::zeros(model_dim(3, 2));
        let full = full_participation_gradient(&w, &p, &ds);
        let local = local_gradient(&w, &ds, &p.client_indices[0]);
        for (a, b) in full.iter().zip(&local) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn full_gradient_is_weighted_recombination() {
        let (ds, p) = setup(5);
        let mut rng = substream(22, Stream::Partition);
        let w = ModelParams {
            weights: (0..model_dim(3, 2)).map(|_| rng.gen_range(-0.4..0.4)).collect(),
        };
        let full = full_participation_gradient(&w, &p, &ds);
        // oracle: combine per-client gradients by sample count
        let mut oracle = vec![0.0; w.dim()];
        let total: f64 = p.sample_counts.iter().map(|&b| b as f64).sum();
        for indices in &p.client_indices {
            let g = local_gradient(&w, &ds, indices);
            for (o, gi) in oracle.iter_mut().zip(&g) {
                *o += indices.len() as f64 * gi / total;
            }
        }
        for (a, b) in full.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_gradient_is_permutation_invariant() {
        let (ds, p) = setup(4);
        let w = ModelParams::zeros(model_dim(3, 2));
        let mut relabeled = p.clone();
        relabeled.client_indices.rotate_left(1);
        relabeled.sample_counts.rotate_left(1);
        let a = full_participation_gradient(&w, &p, &ds);
        let b = full_participation_gradient(&w, &relabeled, &ds);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_is_one_for_single_sample() {
        let mut rng = substream(23, Stream::Partition);
        let ds = synth_dataset(&mut rng, 1, 2, 2).unwrap();
        let p = Partition { client_indices: vec![vec![0]], sample_counts: vec![1] };
        let w = ModelParams::zeros(model_dim(2, 2));
        let rho = estimate_rho(&w, &p, &ds).unwrap();
        assert!((rho - 1.0).abs() < 1e-9, "rho = {rho}");
    }

    #[test]
    fn rho_matches_brute_force_double_loop() {
        let (ds, p) = setup(3);
        let mut rng = substream(24, Stream::Partition);
        let w = ModelParams {
            weights: (0..model_dim(3, 2)).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        };
        let rho = estimate_rho(&w, &p, &ds).unwrap();
        // oracle: per-sample gradients via local_gradient on singletons
        let full = full_participation_gradient(&w, &p, &ds);
        let denom: f64 = full.iter().map(|x| x * x).sum();
        let mut best = 0.0f64;
        for indices in &p.client_indices {
            for &i in indices {
                let g = local_gradient(&w, &ds, &[i]);
                best = best.max(g.iter().map(|x| x * x).sum::<f64>());
            }
        }
        let oracle = best / denom;
        assert!((rho - oracle).abs() / oracle < 1e-10, "rho {rho} oracle {oracle}");
        assert!(rho >= 1.0 - 1e-12); // max over samples >= the mean's ratio here
    }

    #[test]
    fn lipschitz_bounded_by_quadratic_hessian_eigenvalue() {
        // loss G(w) = 0.5 w^T H w with H = diag(3, 1): gradient Hw,
        // largest eigenvalue 3; the estimate can never exceed it
        let h = [3.0, 1.0];
        let mut traj = Vec::new();
        let mut rng = substream(25, Stream::Partition);
        for _ in 0..20 {
            let w = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let g = vec![h[0] * w[0], h[1] * w[1]];
            traj.push((ModelParams { weights: w }, g));
        }
        let est = estimate_lipschitz(&traj).unwrap();
        assert!(est <= 3.0 + 1e-9, "estimate {est}");
        // scaling w by c leaves the linear-gradient estimate unchanged
        let scaled: Vec<_> = traj
            .iter()
            .map(|(w, g)| {
                (
                    ModelParams { weights: w.weights.iter().map(|x| 5.0 * x).collect() },
                    g.iter().map(|x| 5.0 * x).collect::<Vec<_>>(),
                )
            })
            .collect();
        let est2 = estimate_lipschitz(&scaled).unwrap();
        assert!((est - est2).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_skips_repeats_and_errors_when_empty() {
        let w = ModelParams { weights: vec![1.0, 2.0] };
        let traj = vec![(w.clone(), vec![0.5, 0.5]), (w.clone(), vec![0.5, 0.5])];
        assert!(estimate_lipschitz(&traj).is_err());
        assert!(estimate_lipschitz(&traj[..1]).is_err());
    }

    #[test]
    fn bound_terms_vanish_under_total_weight() {
        // single client selected with weight 1: missing mass is zero
        let (ds, p) = setup(1);
        let w = ModelParams::zeros(model_dim(3, 2));
        let t = bound_terms(&w, &p, &ds, &[1.0], &[true], 2.0, 1.5);
        assert!(t.selection_term.abs() < 1e-12);
        assert!(t.descent_term <= 0.0);
    }

    #[test]
    fn bound_terms_all_unselected_hits_maximum() {
        let (ds, p) = setup(4);
        let w = ModelParams::zeros(model_dim(3, 2));
        let weights = [0.25; 4];
        let t = bound_terms(&w, &p, &ds, &weights, &[false; 4], 2.0, 3.0);
        // S = 0: term = 2 rho ||g||^2 / L
        let expect = 2.0 * 3.0 * t.grad_norm_sq / 2.0;
        assert!((t.selection_term - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn selection_term_decreases_with_more_weight_on_selected() {
        let (ds, p) = setup(4);
        let w = ModelParams::zeros(model_dim(3, 2));
        let low = bound_terms(&w, &p, &ds, &[0.1, 0.3, 0.3, 0.3], &[true, false, false, false], 2.0, 2.0);
        let high = bound_terms(&w, &p, &ds, &[0.4, 0.2, 0.2, 0.2], &[true, false, false, false], 2.0, 2.0);
        assert!(high.selection_term < low.selection_term);
    }

    #[test]
    fn participation_counts_selected_and_gated() {
        let counts = [10usize, 20, 30, 40];
        let selected = [true, false, false, true];
        let gated = [false, true, false, false];
        assert_eq!(expected_participation(&counts, &selected, &gated), 70.0);
    }

    #[test]
    fn report_assembles_all_fields() {
        let (ds, p) = setup(4);
        let mut w = ModelParams::zeros(model_dim(3, 2));
        let mut traj = Vec::new();
        for _ in 0..5 {
            let g = full_participation_gradient(&w, &p, &ds);
            traj.push((w.clone(), g.clone()));
            for (wi, gi) in w.weights.iter_mut().zip(&g) {
                *wi -= 0.1 * gi;
            }
        }
        let weights = [0.25; 4];
        let selected = [true, true, false, false];
        let gated = [false, false, true, false];
        let r = report(&w, &p, &ds, &weights, &selected, &traj, &gated).unwrap();
        assert!(r.full_grad_norm > 0.0);
        assert!(r.rho_estimate >= 1.0);
        assert!(r.lipschitz_estimate > 0.0);
        assert!((r.bound_terms[0] - r.full_grad_norm * r.full_grad_norm).abs() < 1e-12);
        assert!(r.bound_terms[1] < 0.0 && r.bound_terms[2] > 0.0);
        let expect_mass: f64 = [0, 1, 2]
            .iter()
            .map(|&n| p.sample_counts[n] as f64)
            .sum();
        assert_eq!(r.expected_participation, expect_mass);
    }
}
