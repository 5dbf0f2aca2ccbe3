//! Computational-resource and transmit-power allocation.
//!
//! The per-round min-max time problem separates: compute time is
//! monotone decreasing in the CPU coefficient, so `tau = 1` is always
//! optimal; transmit powers maximize each client's log rate margin
//! `ln(R_n - R_s)` subject to the power cap. The stationarity
//! condition of the Lagrangian has a closed-form solution through the
//! Lambert-W function, evaluated in reverse SIC order (the last
//! decoded client sees no interference), with the dual multipliers
//! updated by projected subgradient steps until the power vector
//! stops moving.
//!
//! Baselines: uniform random powers, and serialized single-channel OMA
//! at full power.

pub mod lambert;

pub use lambert::{lambert_w0, lambert_w0_dd};

use rand::Rng;

use crate::channel::{self, ChannelState, RadioParams};
use crate::error::{Error, Result};

/// Client-side compute constants plus per-client frequencies/sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeParams {
    /// CPU cycles to train one sample (mu).
    pub cycles_per_sample: f64,
    /// Per-client CPU frequency (Hz).
    pub cpu_freq_hz: Vec<f64>,
    /// Per-client sample count (beta_n).
    pub sample_counts: Vec<usize>,
    /// Local model size (bits), identical across clients.
    pub model_size_bits: f64,
}

/// Dual (subgradient) iteration knobs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    /// Subgradient step size eta.
    pub step_size: f64,
    /// Iteration cap before reporting non-convergence.
    pub max_iterations: usize,
    /// Convergence threshold on the max per-client power change (W).
    pub power_tolerance_w: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig { step_size: 1e-2, max_iterations: 500, power_tolerance_w: 1e-9 }
    }
}

/// Multiplier state of the dual iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// One nonnegative multiplier per selected client (power cap).
    pub multipliers: Vec<f64>,
    pub step_size: f64,
    pub iteration: usize,
}

/// Whether uploads share the channel simultaneously (NOMA) or are
/// serialized into per-client time slots (OMA).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadDiscipline {
    Simultaneous,
    Serialized,
}

/// Allocation for one round's selected set. All vectors are parallel
/// to `clients`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Selected client indices this allocation covers.
    pub clients: Vec<usize>,
    /// CPU coefficients (always 1.0 at the optimum).
    pub tau: Vec<f64>,
    /// Transmit powers (W), within [0, p_max].
    pub powers_w: Vec<f64>,
    /// Achievable rates (bit/s) under the final decoding order.
    pub rates_bps: Vec<f64>,
    /// Local training times (s).
    pub compute_times_s: Vec<f64>,
    /// Upload times d/R (s); infinity when the rate is zero.
    pub upload_times_s: Vec<f64>,
    /// Round time under this allocation's upload discipline.
    pub round_time_s: f64,
    /// Rate-requirement flags: `rates_bps >= R_s` (within 1e-9).
    pub feasible: Vec<bool>,
    pub discipline: UploadDiscipline,
    /// Dual iterations used (diagnostics; 0 for baselines).
    pub dual_iterations: usize,
    /// Final max power change of the dual loop (W).
    pub dual_residual_w: f64,
}

/// Local training time `mu * beta / (tau * f)`.
pub fn local_compute_time(
    cycles_per_sample: f64,
    samples: usize,
    tau: f64,
    cpu_freq_hz: f64,
) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 1], got {tau}")));
    }
    if samples == 0 {
        return Ok(0.0);
    }
    Ok(cycles_per_sample * samples as f64 / (tau * cpu_freq_hz))
}

/// Upload time `d / R`.
pub fn upload_time(model_size_bits: f64, rate_bps: f64) -> Result<f64> {
    if rate_bps <= 0.0 {
        return Err(Error::Domain(format!(
            "transmission infeasible: rate {rate_bps} bit/s is not positive"
        )));
    }
    Ok(model_size_bits / rate_bps)
}

/// Optimal CPU coefficients: compute time is strictly decreasing in
/// tau, so every selected client runs at full frequency.
pub fn optimal_tau(n_selected: usize) -> Vec<f64> {
    vec![1.0; n_selected]
}

/// Closed-form stationary power for one client:
///
/// `p* = (I + sigma^2)/|h|^2 * (Gamma exp(W(chi ln 2)) - 1)`
///
/// with `Gamma = 2^(R_s/B)` and
/// `chi = |h|^2 / (ln2 (I + sigma^2) v Gamma)`. The caller clips the
/// result to `[0, p_max]`; the closed form alone does not enforce the
/// power cap.
pub fn closed_form_power(
    gain: f64,
    interference_w: f64,
    noise_w: f64,
    min_rate_bps: f64,
    bandwidth_hz: f64,
    multiplier: f64,
) -> Result<f64> {
    if !(gain > 0.0) {
        return Err(Error::Domain(format!("gain must be positive, got {gain}")));
    }
    if !(multiplier > 0.0) {
        return Err(Error::Domain(format!("multiplier must be positive, got {multiplier}")));
    }
    if interference_w < 0.0 || !(noise_w > 0.0) {
        return Err(Error::Domain("interference must be >= 0 and noise > 0".into()));
    }
    let denom_w = interference_w + noise_w;
    let gamma = (min_rate_bps / bandwidth_hz).exp2();
    let chi = gain / (std::f64::consts::LN_2 * denom_w * multiplier * gamma);
    let arg = chi * std::f64::consts::LN_2;
    if !arg.is_finite() {
        // multiplier underflowed the product; the cap constraint is
        // inactive and the unconstrained optimum is unbounded
        return Ok(f64::INFINITY);
    }
    let w = lambert_w0(arg)?;
    // exp(W(x)) = x / W(x) for x > 0 avoids overflow and one exp call
    let exp_w = if arg > 0.0 { arg / w } else { 1.0 };
    Ok(denom_w / gain * (gamma * exp_w - 1.0))
}

/// Left-hand side of the stationarity condition at power `p`:
///
/// `dL/dp = B |h|^2 / (ln2 (I + sigma^2)) * (1/phi) / (B log2(phi) - R_s) - v`
///
/// with `phi = 1 + p |h|^2 / (I + sigma^2)`. Zero at the closed-form
/// power; used by tests and the acceptance suite as the KKT residual.
pub fn stationarity_residual(
    gain: f64,
    interference_w: f64,
    noise_w: f64,
    min_rate_bps: f64,
    bandwidth_hz: f64,
    multiplier: f64,
    power_w: f64,
) -> f64 {
    let denom_w = interference_w + noise_w;
    let phi = 1.0 + power_w * gain / denom_w;
    let margin = bandwidth_hz * phi.log2() - min_rate_bps;
    bandwidth_hz * gain / (std::f64::consts::LN_2 * denom_w) / (phi * margin) - multiplier
}

struct AllocationSweep {
    powers: Vec<f64>,
    dual: DualState,
    residual: f64,
    converged: bool,
}

/// Run the dual iteration for a fixed decoding order (positions into
/// `selected`), Gauss-Seidel style: each sweep evaluates powers from
/// the last decoded client backwards, then takes one projected
/// subgradient step on every multiplier.
fn dual_sweeps(
    selected: &[usize],
    order: &[usize],
    channel: &ChannelState,
    radio: &RadioParams,
    min_rate_bps: f64,
    dual: &DualConfig,
) -> AllocationSweep {
    let k = selected.len();
    let p_max = radio.max_power_w;
    let mut powers = vec![0.0; k];
    let mut state =
        DualState { multipliers: vec![1.0; k], step_size: dual.step_size, iteration: 0 };
    let mut residual = f64::INFINITY;
    let mut converged = false;

    while state.iteration < dual.max_iterations {
        state.iteration += 1;
        let v = &mut state.multipliers;
        let mut max_delta: f64 = 0.0;
        for pos in (0..k).rev() {
            let slot = order[pos];
            let interference: f64 = order[pos + 1..]
                .iter()
                .map(|&later| powers[later] * channel.gains[selected[later]])
                .sum();
            let p_new = if v[slot] > 0.0 {
                closed_form_power(
                    channel.gains[selected[slot]],
                    interference,
                    channel.noise_power_w,
                    min_rate_bps,
                    radio.bandwidth_hz,
                    v[slot],
                )
                .unwrap_or(f64::INFINITY)
            } else {
                // projected multiplier hit zero: cap constraint slack
                // vanished from the Lagrangian, optimum is the cap
                f64::INFINITY
            }
            .clamp(0.0, p_max);
            max_delta = max_delta.max((p_new - powers[slot]).abs());
            powers[slot] = p_new;
        }
        for slot in 0..k {
            v[slot] = (v[slot] - dual.step_size * (p_max - powers[slot])).max(0.0);
        }
        residual = max_delta;
        if max_delta <= dual.power_tolerance_w {
            converged = true;
            break;
        }
    }

    AllocationSweep { powers, dual: state, residual, converged }
}

fn fill_times(
    clients: &[usize],
    rates: &[f64],
    compute: &ComputeParams,
    discipline: UploadDiscipline,
) -> (Vec<f64>, Vec<f64>, f64) {
    let compute_times: Vec<f64> = clients
        .iter()
        .map(|&n| {
            compute.cycles_per_sample * compute.sample_counts[n] as f64 / compute.cpu_freq_hz[n]
        })
        .collect();
    let upload_times: Vec<f64> = rates
        .iter()
        .map(|&r| if r > 0.0 { compute.model_size_bits / r } else { f64::INFINITY })
        .collect();
    let round = match discipline {
        UploadDiscipline::Simultaneous => compute_times
            .iter()
            .zip(&upload_times)
            .map(|(c, u)| c + u)
            .fold(0.0f64, f64::max),
        UploadDiscipline::Serialized => {
            let max_compute = compute_times.iter().copied().fold(0.0f64, f64::max);
            max_compute + upload_times.iter().sum::<f64>()
        }
    };
    (compute_times, upload_times, round)
}

fn build_result(
    selected: &[usize],
    powers: &[f64],
    channel: &ChannelState,
    radio: &RadioParams,
    min_rate_bps: f64,
    compute: &ComputeParams,
    discipline: UploadDiscipline,
    dual_iterations: usize,
    dual_residual_w: f64,
) -> Result<AllocationResult> {
    // rates under the decoding order implied by the actual powers
    let mut full_powers = vec![0.0; channel.gains.len()];
    for (slot, &n) in selected.iter().enumerate() {
        full_powers[n] = powers[slot];
    }
    let order: Vec<usize> = channel::decoding_order(channel, &full_powers)
        .into_iter()
        .filter(|n| selected.contains(n))
        .collect();
    let all_rates = channel::noma_rates(channel, &full_powers, &order, radio)?;
    let rates: Vec<f64> = selected.iter().map(|&n| all_rates[n]).collect();
    let feasible: Vec<bool> = rates.iter().map(|&r| r >= min_rate_bps - 1e-9).collect();
    let (compute_times, upload_times, round) =
        fill_times(selected, &rates, compute, discipline);
    Ok(AllocationResult {
        clients: selected.to_vec(),
        tau: optimal_tau(selected.len()),
        powers_w: powers.to_vec(),
        rates_bps: rates,
        compute_times_s: compute_times,
        upload_times_s: upload_times,
        round_time_s: round,
        feasible,
        discipline,
        dual_iterations,
        dual_residual_w,
    })
}

/// Optimal NOMA power allocation for the selected set.
///
/// First pass uses the decoding order given by gains descending (the
/// powers are still unknown); after the dual loop converges the order
/// is re-derived from the received powers `p |h|^2` and the loop is
/// re-run once if it changed.
pub fn allocate_powers_noma(
    selected: &[usize],
    channel: &ChannelState,
    radio: &RadioParams,
    min_rate_bps: f64,
    compute: &ComputeParams,
    dual: &DualConfig,
) -> Result<AllocationResult> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("allocate_powers_noma: empty selection".into()));
    }

    // order[i] = slot index (into `selected`) decoded at position i
    let gain_order = |keys: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..keys.len()).collect();
        idx.sort_by(|&a, &b| {
            keys[b]
                .partial_cmp(&keys[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(selected[a].cmp(&selected[b]))
        });
        idx
    };

    let gains: Vec<f64> = selected.iter().map(|&n| channel.gains[n]).collect();
    let order = gain_order(&gains);
    let mut sweep = dual_sweeps(selected, &order, channel, radio, min_rate_bps, dual);

    // one re-pass if the converged powers imply a different SIC order
    let received: Vec<f64> =
        sweep.powers.iter().zip(&gains).map(|(p, g)| p * g).collect();
    let reorder = gain_order(&received);
    if reorder != order {
        sweep = dual_sweeps(selected, &reorder, channel, radio, min_rate_bps, dual);
    }

    let result = build_result(
        selected,
        &sweep.powers,
        channel,
        radio,
        min_rate_bps,
        compute,
        UploadDiscipline::Simultaneous,
        sweep.dual.iteration,
        sweep.residual,
    )?;
    if !sweep.converged {
        return Err(Error::NonConvergence {
            iterations: sweep.dual.iteration,
            residual_w: sweep.residual,
            last: Box::new(result),
        });
    }
    Ok(result)
}

/// Baseline: powers drawn uniformly on (0, p_max], rates and times as
/// in the NOMA path.
pub fn allocate_powers_random(
    selected: &[usize],
    channel: &ChannelState,
    radio: &RadioParams,
    min_rate_bps: f64,
    compute: &ComputeParams,
    rng: &mut impl Rng,
) -> Result<AllocationResult> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("allocate_powers_random: empty selection".into()));
    }
    let powers: Vec<f64> = selected
        .iter()
        .map(|_| {
            let u: f64 = rng.gen::<f64>();
            (1.0 - u) * radio.max_power_w // maps [0,1) to (0, p_max]
        })
        .collect();
    build_result(
        selected,
        &powers,
        channel,
        radio,
        min_rate_bps,
        compute,
        UploadDiscipline::Simultaneous,
        0,
        0.0,
    )
}

/// Baseline: serialized single-channel OMA. Each client transmits
/// alone at full power (its interference-free rate is increasing in
/// power, so `p = p_max`); the round upload phase is the sum of the
/// individual upload times.
pub fn allocate_oma(
    selected: &[usize],
    channel: &ChannelState,
    radio: &RadioParams,
    min_rate_bps: f64,
    compute: &ComputeParams,
) -> Result<AllocationResult> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("allocate_oma: empty selection".into()));
    }
    let powers = vec![radio.max_power_w; selected.len()];
    let rates: Vec<f64> = selected
        .iter()
        .map(|&n| channel::oma_rate(channel, n, radio.max_power_w, radio))
        .collect();
    let feasible: Vec<bool> = rates.iter().map(|&r| r >= min_rate_bps - 1e-9).collect();
    let (compute_times, upload_times, round) =
        fill_times(selected, &rates, compute, UploadDiscipline::Serialized);
    Ok(AllocationResult {
        clients: selected.to_vec(),
        tau: optimal_tau(selected.len()),
        powers_w: powers,
        rates_bps: rates,
        compute_times_s: compute_times,
        upload_times_s: upload_times,
        round_time_s: round,
        feasible,
        discipline: UploadDiscipline::Serialized,
        dual_iterations: 0,
        dual_residual_w: 0.0,
    })
}

/// Round time implied by an allocation: synchronous aggregation waits
/// for the slowest client, so NOMA takes the max of compute + upload;
/// serialized OMA takes max compute plus the sum of uploads. Empty
/// allocations take zero time.
pub fn round_time(alloc: &AllocationResult) -> f64 {
    if alloc.clients.is_empty() {
        return 0.0;
    }
    match alloc.discipline {
        UploadDiscipline::Simultaneous => alloc
            .compute_times_s
            .iter()
            .zip(&alloc.upload_times_s)
            .map(|(c, u)| c + u)
            .fold(0.0f64, f64::max),
        UploadDiscipline::Serialized => {
            alloc.compute_times_s.iter().copied().fold(0.0f64, f64::max)
                + alloc.upload_times_s.iter().sum::<f64>()
        }
    }
}
