//! Built-in verification suite behind `nomafl selftest`.
//!
//! Each check pairs an implementation path with an independent oracle
//! (bisection, exhaustive enumeration, algebraic identities) and
//! reports a pass/fail line. The acceptance test suite runs the same
//! checks at full scale.

use std::path::{Path, PathBuf};

use anyhow::Result;
use rand::Rng;

use nomafl_core::channel::{decoding_order, noma_rates, ChannelState, RadioParams};
use nomafl_core::dd::Dd;
use nomafl_core::resource::{closed_form_power, lambert_w0_dd, stationarity_residual};
use nomafl_core::rng::{substream, Stream};
use nomafl_core::scheduler::{update_aou, weights, AouState};
use nomafl_core::sim::{DataMode, ExperimentConfig, Scheme};

use crate::csvout;

/// Result of one self-check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest offset-from-branch-point residual `|W e^W - x|`, evaluated
/// in double-double arithmetic over `n` log-spaced offsets covering
/// `x` from `-1/e + 1e-6` up to `1e6`.
pub fn lambert_residual_max(n: usize) -> f64 {
    let branch = -(-1.0f64).exp();
    let lo: f64 = 1e-6;
    let hi: f64 = 1e6 - branch;
    let mut worst = 0.0f64;
    for i in 0..=n {
        let delta = lo * (hi / lo).powf(i as f64 / n as f64);
        let x = branch + delta;
        let w = lambert_w0_dd(x).expect("domain covered");
        let resid = w.mul(w.exp()).sub(Dd::from_f64(x)).to_f64().abs();
        worst = worst.max(resid);
    }
    worst
}

/// Bisection oracle for the stationarity condition (power allocation).
pub fn bisect_stationary_power(
    gain: f64,
    interference_w: f64,
    noise_w: f64,
    min_rate_bps: f64,
    bandwidth_hz: f64,
    multiplier: f64,
) -> f64 {
    let denom = interference_w + noise_w;
    let p_min = denom / gain * ((min_rate_bps / bandwidth_hz).exp2() - 1.0);
    let mut lo = p_min * (1.0 + 1e-12) + 1e-300;
    let mut hi = (p_min + 1.0) * 2.0;
    let f = |p: f64| {
        stationarity_residual(gain, interference_w, noise_w, min_rate_bps, bandwidth_hz, multiplier, p)
    };
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// KKT check over random tuples: returns the largest absolute
/// stationarity residual of the closed form and its largest relative
/// deviation from the bisection oracle.
pub fn kkt_check(n_tuples: usize, seed: u64) -> (f64, f64) {
    let mut rng = substream(seed, Stream::Power);
    let mut max_resid = 0.0f64;
    let mut max_rel = 0.0f64;
    for _ in 0..n_tuples {
        let gain = 10f64.powf(rng.gen_range(-13.0..-6.0));
        let noise = 10f64.powf(rng.gen_range(-16.0..-12.0));
        let interference =
            if rng.gen_bool(0.4) { 0.0 } else { noise * rng.gen_range(0.1..200.0) };
        let r_s = rng.gen_range(1e3..2e6);
        let v = 10f64.powf(rng.gen_range(-2.0..2.0));
        let b = 1e6;
        let p = closed_form_power(gain, interference, noise, r_s, b, v).expect("valid domain");
        let resid = stationarity_residual(gain, interference, noise, r_s, b, v, p).abs();
        max_resid = max_resid.max(resid);
        let oracle = bisect_stationary_power(gain, interference, noise, r_s, b, v);
        max_rel = max_rel.max((p - oracle).abs() / oracle);
    }
    (max_resid, max_rel)
}

/// SIC telescoping check over random power/gain vectors: largest
/// relative deviation of the rate sum from the sum capacity.
pub fn telescoping_max_rel(n_vectors: usize, seed: u64) -> f64 {
    let radio = RadioParams::default();
    let mut rng = substream(seed, Stream::Fading);
    let mut worst = 0.0f64;
    for _ in 0..n_vectors {
        let k = rng.gen_range(2..=8usize);
        let gains: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.gen_range(-13.0..-8.0))).collect();
        let powers: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-8..0.01)).collect();
        let ch = ChannelState {
            round_index: 0,
            gains: gains.clone(),
            noise_power_w: radio.noise_power_w(),
        };
        let order = decoding_order(&ch, &powers);
        let rates = noma_rates(&ch, &powers, &order, &radio).expect("nonempty");
        let sum: f64 = rates.iter().sum();
        let received: f64 = powers.iter().zip(&gains).map(|(p, g)| p * g).sum();
        let capacity = radio.bandwidth_hz * (1.0 + received / ch.noise_power_w).log2();
        worst = worst.max(((sum - capacity) / capacity).abs());
    }
    worst
}

/// Exhaustive age-state check: every selection sequence of `rounds`
/// rounds over 4 clients (all 16 subsets per round), comparing the
/// scheduler against a plain recurrence and checking weight
/// normalization. Returns the number of sequences on success.
pub fn aou_exhaustive(rounds: usize) -> Result<u64> {
    let n = 4usize;
    let subsets: Vec<Vec<usize>> =
        (0u32..16).map(|mask| (0..n).filter(|&c| mask & (1 << c) != 0).collect()).collect();
    let mut sequences = 0u64;
    let mut stack: Vec<(usize, AouState, [u64; 4])> =
        vec![(0, AouState::new(n), [1, 1, 1, 1])];
    while let Some((depth, state, oracle)) = stack.pop() {
        // weight normalization at every reachable state
        let w = weights(&state);
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            anyhow::bail!("weights sum {sum} at depth {depth}");
        }
        if state.ages() != oracle {
            anyhow::bail!("scheduler ages {:?} differ from recurrence {:?}", state.ages(), oracle);
        }
        if depth == rounds {
            sequences += 1;
            continue;
        }
        for subset in &subsets {
            // oracle recurrence: reset on selection, else increment
            let mut next = [0u64; 4];
            for c in 0..n {
                next[c] = if subset.contains(&c) { 1 } else { oracle[c] + 1 };
            }
            stack.push((depth + 1, update_aou(&state, subset), next));
        }
    }
    Ok(sequences)
}

/// The MNIST-iid experiment preset used by the acceptance suite
/// (64 clients, 8 per round, 300 rounds, 8 local epochs).
pub fn mnist_iid_preset(scheme: Scheme, seed: u64, data_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        scheme,
        data_mode: DataMode::MnistIid,
        data_dir: Some(data_dir.to_path_buf()),
        local_epochs: 8,
        seed,
        ..ExperimentConfig::default()
    }
}

/// The MNIST-non-iid preset for the prediction experiments: 200
/// rounds (the convergence phase, where predicting absent clients
/// actually pays), one local epoch, predictor settings from defaults.
pub fn mnist_noniid_preset(ann: bool, seed: u64, data_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        scheme: Scheme::AcsOpaNoma,
        data_mode: DataMode::MnistNonIid,
        data_dir: Some(data_dir.to_path_buf()),
        rounds: 200,
        local_epochs: 1,
        ann_enabled: ann,
        seed,
        ..ExperimentConfig::default()
    }
}

/// Determinism check: run a config twice and byte-compare the CSVs.
pub fn determinism_csv_equal(config: &ExperimentConfig) -> Result<bool> {
    let a = nomafl_core::sim::run_experiment(config)?;
    let b = nomafl_core::sim::run_experiment(config)?;
    let csv_a = csvout::rounds_csv(config.scheme.name(), &a);
    let csv_b = csvout::rounds_csv(config.scheme.name(), &b);
    Ok(csv_a.as_bytes() == csv_b.as_bytes())
}

/// Locate the MNIST directory for the self-test: the explicit flag,
/// the environment variable, or a `data/mnist` directory near the
/// binary's working directory.
pub fn find_mnist_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    let candidates = [
        flag,
        std::env::var_os(crate::DATA_DIR_ENV).map(PathBuf::from),
        Some(PathBuf::from("data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|dir| dir.join("train-images-idx3-ubyte").exists())
}

/// Run the quick self-test suite; returns the individual checks.
pub fn run_all(data_dir: Option<PathBuf>) -> Vec<Check> {
    let mut checks = Vec::new();

    let worst = lambert_residual_max(1000);
    checks.push(Check {
        name: "lambert-w residual <= 1e-12".into(),
        passed: worst <= 1e-12,
        detail: format!("max |W e^W - x| = {worst:.3e} over 1000 points"),
    });

    let (resid, rel) = kkt_check(200, 12);
    checks.push(Check {
        name: "power stationarity residual <= 1e-6".into(),
        passed: resid <= 1e-6,
        detail: format!("max |dL/dp| = {resid:.3e} over 200 tuples"),
    });
    checks.push(Check {
        name: "closed form vs bisection <= 1e-3 relative".into(),
        passed: rel <= 1e-3,
        detail: format!("max relative gap = {rel:.3e}"),
    });

    let tel = telescoping_max_rel(200, 12);
    checks.push(Check {
        name: "sic rates telescope <= 1e-9 relative".into(),
        passed: tel <= 1e-9,
        detail: format!("max relative gap = {tel:.3e} over 200 vectors"),
    });

    match aou_exhaustive(5) {
        Ok(n) => checks.push(Check {
            name: "aou state machine (exhaustive, 5 rounds)".into(),
            passed: true,
            detail: format!("{n} selection sequences verified"),
        }),
        Err(e) => checks.push(Check {
            name: "aou state machine (exhaustive, 5 rounds)".into(),
            passed: false,
            detail: e.to_string(),
        }),
    }

    let (config, label) = match find_mnist_dir(data_dir) {
        Some(dir) => {
            let mut c = mnist_iid_preset(Scheme::AcsOpaNoma, 1, &dir);
            c.rounds = 10;
            (c, "mnist-iid preset, 10 rounds")
        }
        None => {
            let c = ExperimentConfig { rounds: 10, ..ExperimentConfig::default() };
            (c, "synthetic fallback (mnist not found), 10 rounds")
        }
    };
    match determinism_csv_equal(&config) {
        Ok(equal) => checks.push(Check {
            name: "determinism: identical CSV bytes on re-run".into(),
            passed: equal,
            detail: label.to_string(),
        }),
        Err(e) => checks.push(Check {
            name: "determinism: identical CSV bytes on re-run".into(),
            passed: false,
            detail: e.to_string(),
        }),
    }

    checks
}
