//! Per-round orchestration and experiment driver.
//!
//! A round executes: selection weights from the age state, the ranked
//! selecting list (or a random permutation for RCS), resource
//! allocation for the candidate set with infeasible clients dropped
//! and replaced from the list until stable, local full-batch training
//! for the survivors, synchronous round-time accounting, age-weighted
//! aggregation (optionally extended with gated ANN predictions of the
//! unselected clients), the age update, and evaluation on the held-out
//! test set.
//!
//! Determinism: every stochastic input is drawn from a named substream
//! of the experiment seed, with fading and power draws re-keyed per
//! round, so schemes compared under one seed observe identical
//! topologies and channel realizations.

use std::collections::VecDeque;
use std::path::PathBuf;

use crate::channel::{self, ChannelState, NetworkTopology, RadioParams};
use crate::error::{Error, Result};
use crate::learning::dataset::{self, Dataset, Partition, PartitionMode};
use crate::learning::model::{self, ModelParams};
use crate::learning::{aggregate, aggregate_with_prediction};
use crate::predictor::{self, AnnModel};
use crate::resource::{self, AllocationResult, ComputeParams, DualConfig};
use crate::rng::{round_substream, substream, Stream};
use crate::scheduler::{self, AouState};

/// The five experiment arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Age-based selection, optimal power, NOMA uplink.
    AcsOpaNoma,
    /// Random selection, random power, NOMA uplink.
    RcsRpaNoma,
    /// Age-based selection, random power, NOMA uplink.
    AcsRpaNoma,
    /// Random selection with optimal power, NOMA uplink (isolates the
    /// selection policy).
    RcsNoma,
    /// Age-based selection over serialized OMA slots at full power.
    AcsOma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PowerPolicy {
    Optimal,
    Random,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::AcsOpaNoma => "ACS-OPA-NOMA",
            Scheme::RcsRpaNoma => "RCS-RPA-NOMA",
            Scheme::AcsRpaNoma => "ACS-RPA-NOMA",
            Scheme::RcsNoma => "RCS-NOMA",
            Scheme::AcsOma => "ACS-OMA",
        }
    }

    pub fn all() -> [Scheme; 5] {
        [
            Scheme::AcsOpaNoma,
            Scheme::RcsRpaNoma,
            Scheme::AcsRpaNoma,
            Scheme::RcsNoma,
            Scheme::AcsOma,
        ]
    }

    fn uses_age_selection(self) -> bool {
        !matches!(self, Scheme::RcsRpaNoma | Scheme::RcsNoma)
    }

    fn is_oma(self) -> bool {
        matches!(self, Scheme::AcsOma)
    }

    fn power_policy(self) -> PowerPolicy {
        match self {
            Scheme::RcsRpaNoma | Scheme::AcsRpaNoma => PowerPolicy::Random,
            _ => PowerPolicy::Optimal,
        }
    }
}

/// Source of training/evaluation data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataMode {
    MnistIid,
    MnistNonIid,
    Synth,
}

/// Shape of the synthetic dataset used in `synth` mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub test_samples: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { n_samples: 4096, n_features: 16, n_classes: 4, test_samples: 1024 }
    }
}

/// Client compute-model constants (uniform across clients).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeConfig {
    /// CPU cycles to train one sample.
    pub cycles_per_sample: f64,
    /// CPU frequency of every client (Hz).
    pub cpu_freq_hz: f64,
    /// Local model size on the wire (bits).
    pub model_size_bits: f64,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        ComputeConfig { cycles_per_sample: 1e7, cpu_freq_hz: 1e9, model_size_bits: 1e6 }
    }
}

/// Server-side predictor knobs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnSettings {
    pub hidden_units: usize,
    /// Gradient steps per training call (one call per fresh pair).
    pub train_steps: usize,
    pub learning_rate: f64,
    /// Replay-buffer capacity per client (most recent pairs kept).
    pub replay_capacity: usize,
    /// Uniform init range for weights.
    pub init_scale: f64,
    /// Gate stays closed for a client until its network has been
    /// trained on this many harvested pairs.
    pub warmup_pairs: usize,
}

impl Default for AnnSettings {
    fn default() -> Self {
        // Near-zero init keeps the untrained network close to the
        // identity map, so early predictions degrade gracefully to the
        // reference model. A single-pair buffer with many steps tracks
        // the current inter-client offset; older pairs mix offsets
        // against different reference clients and poison the fit.
        AnnSettings {
            hidden_units: 32,
            train_steps: 16,
            learning_rate: 0.5,
            replay_capacity: 1,
            init_scale: 1e-3,
        }
    }
}

/// Prediction-error gate policy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OmegaPolicy {
    /// Fixed threshold; a negative value always fails (disables the gate).
    Fixed { value: f64 },
    /// Per-client percentile of this client's recent error history.
    /// Fails closed until `min_samples` errors are recorded.
    Percentile { fraction: f64, min_samples: usize, window: usize },
    /// Pass when the prediction beats the raw reference model as a
    /// stand-in for the target by the given factor:
    /// `E <= factor * (1/2K) || F_ref - F_target ||^2`.
    ReferenceRelative { factor: f64 },
    /// Pass when the prediction beats the selected-only aggregate as a
    /// stand-in for the target by the given factor:
    /// `E <= factor * (1/2K) || w_selected - F_target ||^2`.
    AggregateRelative { factor: f64 },
}

impl Default for OmegaPolicy {
    fn default() -> Self {
        OmegaPolicy::AggregateRelative { factor: 1.0 }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub n_clients: usize,
    /// Per-round selection budget for NOMA schemes.
    pub k_max: usize,
    /// Per-round budget for the serialized OMA scheme.
    pub oma_k_max: usize,
    pub rounds: usize,
    pub data_mode: DataMode,
    pub synth: SynthSpec,
    /// Directory holding the four MNIST IDX files (mnist modes only).
    pub data_dir: Option<PathBuf>,
    /// Local learning rate lambda.
    pub learning_rate: f64,
    /// Full-batch gradient steps per selected client per round.
    pub local_epochs: usize,
    /// Rate requirement R_s (bit/s).
    pub min_rate_bps: f64,
    pub ann_enabled: bool,
    pub ann: AnnSettings,
    pub omega_policy: OmegaPolicy,
    pub seed: u64,
    pub radio: RadioParams,
    pub compute: ComputeConfig,
    pub dual: DualConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::AcsOpaNoma,
            n_clients: 64,
            k_max: 8,
            oma_k_max: 2,
            rounds: 300,
            data_mode: DataMode::Synth,
            synth: SynthSpec::default(),
            data_dir: None,
            learning_rate: 0.01,
            local_epochs: 1,
            min_rate_bps: 1e4,
            ann_enabled: false,
            ann: AnnSettings::default(),
            omega_policy: OmegaPolicy::default(),
            seed: 1,
            radio: RadioParams::default(),
            compute: ComputeConfig::default(),
            dual: DualConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_clients == 0 {
            return cfg("n_clients must be at least 1".into());
        }
        if self.k_max == 0 || self.k_max > self.n_clients {
            return cfg(format!(
                "k_max must lie in [1, n_clients = {}], got {}",
                self.n_clients, self.k_max
            ));
        }
        if self.oma_k_max == 0 || self.oma_k_max > self.n_clients {
            return cfg(format!(
                "oma_k_max must lie in [1, n_clients = {}], got {}",
                self.n_clients, self.oma_k_max
            ));
        }
        if self.rounds == 0 {
            return cfg("rounds must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return cfg(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.local_epochs == 0 {
            return cfg("local_epochs must be at least 1".into());
        }
        if !(self.min_rate_bps >= 0.0) {
            return cfg(format!("min_rate_bps must be nonnegative, got {}", self.min_rate_bps));
        }
        if matches!(self.data_mode, DataMode::MnistIid | DataMode::MnistNonIid)
            && self.data_dir.is_none()
        {
            return cfg("mnist data modes require data_dir".into());
        }
        if self.synth.n_features == 0 || self.synth.n_classes < 2 {
            return cfg("synth dataset needs n_features >= 1 and n_classes >= 2".into());
        }
        if self.ann.hidden_units == 0 || self.ann.replay_capacity == 0 {
            return cfg("ann hidden_units and replay_capacity must be positive".into());
        }
        if !(self.ann.learning_rate > 0.0) || !(self.ann.init_scale > 0.0) {
            return cfg("ann learning_rate and init_scale must be positive".into());
        }
        match self.omega_policy {
            OmegaPolicy::Percentile { fraction, window, .. } => {
                if !(0.0..=1.0).contains(&fraction) || window == 0 {
                    return cfg("percentile omega policy needs fraction in [0,1], window >= 1".into());
                }
            }
            OmegaPolicy::ReferenceRelative { factor }
            | OmegaPolicy::AggregateRelative { factor } => {
                if !(factor > 0.0) {
                    return cfg("relative omega factor must be positive".into());
                }
            }
            OmegaPolicy::Fixed { .. } => {}
        }
        if !(self.dual.step_size > 0.0) || self.dual.max_iterations == 0 {
            return cfg("dual step_size must be positive and max_iterations >= 1".into());
        }
        self.radio.validate()?;
        if !(self.compute.cycles_per_sample > 0.0)
            || !(self.compute.cpu_freq_hz > 0.0)
            || !(self.compute.model_size_bits > 0.0)
        {
            return cfg("compute constants must be positive".into());
        }
        Ok(())
    }

    fn partition_mode(&self) -> PartitionMode {
        match self.data_mode {
            DataMode::MnistNonIid => PartitionMode::NonIid,
            _ => PartitionMode::Iid,
        }
    }

    fn round_budget(&self) -> usize {
        if self.scheme.is_oma() {
            self.oma_k_max
        } else {
            self.k_max
        }
    }
}

/// Per-round metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Selected clients (ascending).
    pub selected: Vec<usize>,
    /// Clients dropped for missing the rate requirement (ascending).
    pub dropped_infeasible: Vec<usize>,
    pub accuracy: f64,
    pub global_loss: f64,
    /// Mean age after this round's update.
    pub avg_aou: f64,
    pub round_time_s: f64,
    pub cumulative_time_s: f64,
    /// Gated ANN predictions that entered aggregation.
    pub predictions_used: usize,
    /// Hash of this round's channel realization (cross-run checks).
    pub channel_hash: u64,
}

/// Mean age of the population.
pub fn average_aou(ages: &[u64]) -> f64 {
    assert!(!ages.is_empty(), "ages must be nonempty");
    ages.iter().sum::<u64>() as f64 / ages.len() as f64
}

/// Live state of one experiment.
pub struct SimState {
    config: ExperimentConfig,
    topology: NetworkTopology,
    train: Dataset,
    test: Dataset,
    partition: Partition,
    compute: ComputeParams,
    ages: AouState,
    global: ModelParams,
    round: usize,
    cumulative_time_s: f64,
    selection_rng: rand_chacha::ChaCha8Rng,
    ann_bank: Vec<Option<AnnModel>>,
    replay: Vec<VecDeque<(ModelParams, ModelParams)>>,
    error_history: Vec<Vec<f64>>,
    degraded_rounds: usize,
}

impl SimState {
    pub fn new(config: ExperimentConfig) -> Result<SimState> {
        let (train, test) = load_data(&config)?;
        SimState::with_data(config, train, test)
    }

    /// Build a state around already-loaded datasets (callers running
    /// many experiments can skip repeated file parsing).
    pub fn with_data(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<SimState> {
        config.validate()?;
        let n = config.n_clients;
        let partition = dataset::partition(
            &train,
            n,
            config.partition_mode(),
            &mut substream(config.seed, Stream::Partition),
        )?;
        let topology = channel::sample_topology(
            n,
            &config.radio,
            &mut substream(config.seed, Stream::Topology),
        );
        let compute = ComputeParams {
            cycles_per_sample: config.compute.cycles_per_sample,
            cpu_freq_hz: vec![config.compute.cpu_freq_hz; n],
            sample_counts: partition.sample_counts.clone(),
            model_size_bits: config.compute.model_size_bits,
        };
        let dim = model::model_dim(train.n_features, train.n_classes);
        let ann_bank = if config.ann_enabled {
            let mut rng = substream(config.seed, Stream::AnnInit);
            (0..n)
                .map(|_| {
                    Some(AnnModel::init(
                        config.ann.hidden_units,
                        dim,
                        config.ann.init_scale,
                        &mut rng,
                    ))
                })
                .collect()
        } else {
            vec![None; n]
        };

        Ok(SimState {
            selection_rng: substream(config.seed, Stream::Selection),
            topology,
            compute,
            ages: AouState::new(n),
            global: ModelParams::zeros(dim),
            round: 0,
            cumulative_time_s: 0.0,
            ann_bank,
            replay: (0..n).map(|_| VecDeque::new()).collect(),
            error_history: vec![Vec::new(); n],
            degraded_rounds: 0,
            partition,
            train,
            test,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn ages(&self) -> &AouState {
        &self.ages
    }

    pub fn global_model(&self) -> &ModelParams {
        &self.global
    }

    pub fn degraded_rounds(&self) -> usize {
        self.degraded_rounds
    }

    /// ANN snapshot for one client, when the predictor is enabled.
    pub fn ann_model(&self, client: usize) -> Option<&AnnModel> {
        self.ann_bank[client].as_ref()
    }

    /// Execute one round and advance the state.
    pub fn run_round(&mut self) -> Result<RoundLog> {
        let n = self.config.n_clients;
        let budget = self.config.round_budget();
        let round = self.round;
        let weights = scheduler::weights(&self.ages);

        // selecting list: age-ranked, or a uniform permutation for RCS
        let ranked: Vec<usize> = if self.config.scheme.uses_age_selection() {
            scheduler::rank_clients(&weights, &self.partition.sample_counts)
        } else {
            scheduler::select_rcs(n, budget, &mut self.selection_rng).ranked_list
        };

        let channel_state = channel::sample_channel(
            &self.topology,
            &self.config.radio,
            round,
            &mut round_substream(self.config.seed, Stream::Fading, round),
        );
        let mut power_rng = round_substream(self.config.seed, Stream::Power, round);

        // allocate, dropping infeasible clients and refilling from the
        // list until the surviving set is stable
        let mut banned = vec![false; n];
        let mut dropped: Vec<usize> = Vec::new();
        let mut selected: Vec<usize>;
        let mut allocation: Option<AllocationResult> = None;
        loop {
            let outcome = scheduler::select_acs(&ranked, &weights, budget, |c| !banned[c]);
            selected = outcome.selected_indices();
            if selected.is_empty() {
                break;
            }
            let alloc = self.allocate(&selected, &channel_state, &mut power_rng)?;
            let infeasible: Vec<usize> = alloc
                .clients
                .iter()
                .zip(&alloc.feasible)
                .filter(|&(_, &ok)| !ok)
                .map(|(&c, _)| c)
                .collect();
            if infeasible.is_empty() {
                allocation = Some(alloc);
                break;
            }
            for c in infeasible {
                banned[c] = true;
                dropped.push(c);
            }
        }
        selected.sort_unstable();
        dropped.sort_unstable();

        let round_time_s = allocation.as_ref().map_or(0.0, |a| a.round_time_s);
        let mut predictions_used = 0;

        if !selected.is_empty() {
            let locals = self.train_selected(&selected);
            let sel_flags: Vec<bool> = {
                let mut f = vec![false; n];
                for &c in &selected {
                    f[c] = true;
                }
                f
            };
            let aggregated = if self.config.ann_enabled {
                self.aggregate_with_ann(
                    &selected,
                    &locals,
                    &sel_flags,
                    &weights,
                    &mut predictions_used,
                )?
            } else {
                match aggregate(&locals, &weights, &sel_flags, &self.partition.sample_counts) {
                    Ok(w) => Some(w),
                    Err(Error::EmptyAggregation) => None,
                    Err(e) => return Err(e),
                }
            };
            if let Some(w) = aggregated {
                self.global = w;
            }
        }

        self.ages = scheduler::update_aou(&self.ages, &selected);
        self.cumulative_time_s += round_time_s;
        self.round += 1;

        let (accuracy, global_loss) = model::evaluate(&self.global, &self.test);
        Ok(RoundLog {
            round,
            selected,
            dropped_infeasible: dropped,
            accuracy,
            global_loss,
            avg_aou: average_aou(self.ages.ages()),
            round_time_s,
            cumulative_time_s: self.cumulative_time_s,
            predictions_used,
            channel_hash: channel_state.hash64(),
        })
    }

    fn allocate(
        &mut self,
        selected: &[usize],
        channel_state: &ChannelState,
        power_rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<AllocationResult> {
        let cfg = &self.config;
        if cfg.scheme.is_oma() {
            return resource::allocate_oma(
                selected,
                channel_state,
                &cfg.radio,
                cfg.min_rate_bps,
                &self.compute,
            );
        }
        match cfg.scheme.power_policy() {
            PowerPolicy::Random => resource::allocate_powers_random(
                selected,
                channel_state,
                &cfg.radio,
                cfg.min_rate_bps,
                &self.compute,
                power_rng,
            ),
            PowerPolicy::Optimal => match resource::allocate_powers_noma(
                selected,
                channel_state,
                &cfg.radio,
                cfg.min_rate_bps,
                &self.compute,
                &cfg.dual,
            ) {
                Ok(alloc) => Ok(alloc),
                Err(Error::NonConvergence { iterations, residual_w, .. }) => {
                    // degraded round: fall back to random powers
                    log::warn!(
                        "round {}: dual iteration stopped after {} sweeps \
                         (residual {:.3e} W); falling back to random powers",
                        self.round,
                        iterations,
                        residual_w
                    );
                    self.degraded_rounds += 1;
                    resource::allocate_powers_random(
                        selected,
                        channel_state,
                        &cfg.radio,
                        cfg.min_rate_bps,
                        &self.compute,
                        power_rng,
                    )
                }
                Err(e) => Err(e),
            },
        }
    }

    /// Local updates for the selected set. Equivalent to
    /// `learning::model::local_update` per client.
    fn train_selected(&self, selected: &[usize]) -> Vec<Option<ModelParams>> {
        let cfg = &self.config;
        let mut locals: Vec<Option<ModelParams>> = vec![None; cfg.n_clients];
        for &c in selected {
            locals[c] = Some(model::local_update(
                &self.global,
                &self.train,
                &self.partition.client_indices[c],
                cfg.learning_rate,
                cfg.local_epochs,
            ));
        }
        locals
    }

    /// Prediction-assisted aggregation: pick the reference client among
    /// the selected set, harvest training pairs, train the per-client
    /// networks, predict every unselected client's model, and gate by
    /// prediction error against the configured omega policy.
    fn aggregate_with_ann(
        &mut self,
        selected: &[usize],
        locals: &[Option<ModelParams>],
        sel_flags: &[bool],
        weights: &[f64],
        predictions_used: &mut usize,
    ) -> Result<Option<ModelParams>> {
        let cfg = self.config.clone();
        let n = cfg.n_clients;

        // reference = argmax over selected of a_n * ||beta_n grad F_n||
        let mut grad_sums: Vec<Option<Vec<f64>>> = vec![None; n];
        for &c in selected {
            let mut g = model::local_gradient(
                &self.global,
                &self.train,
                &self.partition.client_indices[c],
            );
            let beta = self.partition.sample_counts[c] as f64;
            for gi in &mut g {
                *gi *= beta;
            }
            grad_sums[c] = Some(g);
        }
        let reference_client = predictor::select_reference_client(weights, &grad_sums)?;
        let reference = locals[reference_client]
            .clone()
            .expect("reference client is selected and trained");
        // selected-only aggregate, for the aggregate-relative gate
        let plain_aggregate = match cfg.omega_policy {
            OmegaPolicy::AggregateRelative { .. } => Some(aggregate(
                locals,
                weights,
                sel_flags,
                &self.partition.sample_counts,
            )?),
            _ => None,
        };

        // harvest pairs and train the networks of freshly-uploaded clients
        for &c in selected {
            if c == reference_client {
                continue;
            }
            let target = locals[c].clone().expect("selected client trained");
            self.replay[c].push_back((reference.clone(), target));
            while self.replay[c].len() > cfg.ann.replay_capacity {
                self.replay[c].pop_front();
            }
            let examples: Vec<(ModelParams, ModelParams)> =
                self.replay[c].iter().cloned().collect();
            let ann = self.ann_bank[c].take().expect("ann bank initialized");
            self.ann_bank[c] = Some(predictor::ann_train(
                ann,
                &examples,
                cfg.ann.train_steps,
                cfg.ann.learning_rate,
            ));
        }

        // predict unselected clients and gate
        let mut predictions: Vec<Option<ModelParams>> = vec![None; n];
        let mut prediction_errors = vec![f64::INFINITY; n];
        for c in 0..n {
            if sel_flags[c] {
                continue;
            }
            let ann = self.ann_bank[c].as_ref().expect("ann bank initialized");
            let predicted = predictor::ann_forward(ann, &reference)?;
            // simulator-privileged ground truth: the model this client
            // would have trained had it been selected
            let ghost = model::local_update(
                &self.global,
                &self.train,
                &self.partition.client_indices[c],
                cfg.learning_rate,
                cfg.local_epochs,
            );
            let err = predictor::prediction_error(&predicted, &ghost)?;
            let omega = match cfg.omega_policy {
                OmegaPolicy::Fixed { value } => value,
                OmegaPolicy::Percentile { fraction, min_samples, window } => {
                    let hist = &self.error_history[c];
                    if hist.len() < min_samples {
                        -1.0
                    } else {
                        let start = hist.len().saturating_sub(window);
                        percentile(&hist[start..], fraction)
                    }
                }
                OmegaPolicy::ReferenceRelative { factor } => {
                    factor * predictor::prediction_error(&reference, &ghost)?
                }
                OmegaPolicy::AggregateRelative { factor } => {
                    let agg = plain_aggregate.as_ref().expect("computed for this policy");
                    factor * predictor::prediction_error(agg, &ghost)?
                }
            };
            self.error_history[c].push(err);
            if predictor::gate(err, omega) {
                predictions[c] = Some(predicted);
                prediction_errors[c] = err;
                *predictions_used += 1;
            }
        }

        // the per-client gate already filtered; the shared threshold
        // inside the aggregation therefore accepts every survivor
        match aggregate_with_prediction(
            locals,
            &predictions,
            &prediction_errors,
            f64::INFINITY,
            weights,
            sel_flags,
            &self.partition.sample_counts,
        ) {
            Ok(w) => Ok(Some(w)),
            Err(Error::EmptyAggregation) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn percentile(values: &[f64], fraction: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = ((sorted.len() as f64 * fraction).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match config.data_mode {
        DataMode::Synth => {
            let mut rng = substream(config.seed, Stream::Partition);
            let s = &config.synth;
            let train = dataset::synth_dataset(&mut rng, s.n_samples, s.n_features, s.n_classes)?;
            let test =
                dataset::synth_dataset(&mut rng, s.test_samples, s.n_features, s.n_classes)?;
            Ok((train, test))
        }
        DataMode::MnistIid | DataMode::MnistNonIid => {
            let dir = config
                .data_dir
                .as_ref()
                .ok_or_else(|| Error::Config("mnist data modes require data_dir".into()))?;
            let train = dataset::load_mnist(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = dataset::load_mnist(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            if train.n_features != test.n_features || train.n_classes != test.n_classes {
                return Err(Error::Dataset("train/test shape mismatch".into()));
            }
            Ok((train, test))
        }
    }
}

/// Run a full experiment: `rounds` sequential rounds from a fresh state.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RoundLog>> {
    let mut state = SimState::new(config.clone())?;
    let mut logs = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        logs.push(state.run_round()?);
    }
    Ok(logs)
}

/// One row of a scheme comparison (long format, scheme-major order).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scheme: String,
    pub round: usize,
    pub selected_count: usize,
    pub accuracy: f64,
    pub global_loss: f64,
    pub avg_aou: f64,
    pub round_time_s: f64,
    pub cumulative_time_s: f64,
    pub predictions_used: usize,
}

/// Run several configs under common random numbers and merge their
/// per-round series. All configs must share the seed, population,
/// round count and radio model; the shared channel realizations are
/// verified via the per-round channel hashes.
pub fn compare_schemes(configs: &[ExperimentConfig]) -> Result<Vec<ComparisonRow>> {
    if configs.len() < 2 {
        return Err(Error::InvalidArgument("compare_schemes needs at least two configs".into()));
    }
    let head = &configs[0];
    for c in &configs[1..] {
        if c.seed != head.seed
            || c.n_clients != head.n_clients
            || c.radio != head.radio
            || c.data_mode != head.data_mode
        {
            return Err(Error::Config(
                "compared configs must share seed, population, radio and data mode".into(),
            ));
        }
        if c.rounds != head.rounds {
            return Err(Error::Config("compared configs must share the round count".into()));
        }
    }

    let mut rows = Vec::with_capacity(configs.len() * head.rounds);
    let mut reference_hashes: Option<Vec<u64>> = None;
    for config in configs {
        let logs = run_experiment(config)?;
        let hashes: Vec<u64> = logs.iter().map(|l| l.channel_hash).collect();
        match &reference_hashes {
            None => reference_hashes = Some(hashes),
            Some(expect) => {
                if expect != &hashes {
                    return Err(Error::Config(
                        "common-random-numbers violated: channel realizations differ".into(),
                    ));
                }
            }
        }
        for log in logs {
            rows.push(ComparisonRow {
                scheme: config.scheme.name().to_string(),
                round: log.round,
                selected_count: log.selected.len(),
                accuracy: log.accuracy,
                global_loss: log.global_loss,
                avg_aou: log.avg_aou,
                round_time_s: log.round_time_s,
                cumulative_time_s: log.cumulative_time_s,
                predictions_used: log.predictions_used,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            n_clients: 8,
            k_max: 3,
            oma_k_max: 2,
            rounds: 5,
            synth: SynthSpec { n_samples: 256, n_features: 6, n_classes: 3, test_samples: 128 },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = quick_config();
        c.k_max = 100;
        assert!(c.validate().is_err());
        let mut c = quick_config();
        c.rounds = 0;
        assert!(c.validate().is_err());
        let mut c = quick_config();
        c.data_mode = DataMode::MnistIid;
        c.data_dir = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn average_aou_is_plain_mean() {
        assert_eq!(average_aou(&[1, 1, 1]), 1.0);
        assert_eq!(average_aou(&[1, 3]), 2.0);
        let ages = [4u64, 7, 1, 9, 2];
        let oracle = ages.iter().sum::<u64>() as f64 / ages.len() as f64;
        assert_eq!(average_aou(&ages), oracle);
    }

    #[test]
    fn run_round_sequence_is_deterministic() {
        let logs_a = run_experiment(&quick_config()).unwrap();
        let logs_b = run_experiment(&quick_config()).unwrap();
        assert_eq!(logs_a, logs_b);
        assert_eq!(logs_a.len(), 5);
    }

    #[test]
    fn cumulative_time_is_running_sum() {
        let logs = run_experiment(&quick_config()).unwrap();
        let mut sum = 0.0;
        for log in &logs {
            sum += log.round_time_s;
            assert!((log.cumulative_time_s - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn full_participation_resets_every_age() {
        let mut cfg = quick_config();
        cfg.k_max = cfg.n_clients;
        cfg.rounds = 1;
        let mut state = SimState::new(cfg).unwrap();
        let log = state.run_round().unwrap();
        if log.selected.len() == state.config().n_clients {
            assert!(state.ages().ages().iter().all(|&a| a == 1));
            assert_eq!(log.avg_aou, 1.0);
        }
    }

    #[test]
    fn impossible_rate_floor_gives_empty_rounds() {
        let mut cfg = quick_config();
        cfg.min_rate_bps = 1e12; // unreachable
        cfg.rounds = 2;
        let logs = run_experiment(&cfg).unwrap();
        for (t, log) in logs.iter().enumerate() {
            assert!(log.selected.is_empty());
            assert_eq!(log.round_time_s, 0.0);
            // all ages advanced together: mean is t + 2 after round t
            assert_eq!(log.avg_aou, (t + 2) as f64);
        }
    }

    #[test]
    fn schemes_share_channel_realizations() {
        let mut a = quick_config();
        a.scheme = Scheme::AcsOpaNoma;
        let mut b = quick_config();
        b.scheme = Scheme::RcsRpaNoma;
        let rows = compare_schemes(&[a, b]).unwrap();
        assert_eq!(rows.len(), 10);
        // scheme-major ordering
        assert!(rows[..5].iter().all(|r| r.scheme == "ACS-OPA-NOMA"));
        assert!(rows[5..].iter().all(|r| r.scheme == "RCS-RPA-NOMA"));
    }

    #[test]
    fn comparing_scheme_with_itself_is_identical() {
        let cfg = quick_config();
        let rows = compare_schemes(&[cfg.clone(), cfg]).unwrap();
        let (first, second) = rows.split_at(5);
        for (a, b) in first.iter().zip(second) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mismatched_round_counts_are_rejected() {
        let a = quick_config();
        let mut b = quick_config();
        b.rounds = 7;
        assert!(compare_schemes(&[a, b]).is_err());
    }

    #[test]
    fn disabled_ann_matches_always_failing_gate() {
        let mut off = quick_config();
        off.ann_enabled = false;
        let mut gate_closed = quick_config();
        gate_closed.ann_enabled = true;
        gate_closed.omega_policy = OmegaPolicy::Fixed { value: -1.0 };
        let logs_off = run_experiment(&off).unwrap();
        let logs_closed = run_experiment(&gate_closed).unwrap();
        assert_eq!(logs_off, logs_closed);
        assert!(logs_closed.iter().all(|l| l.predictions_used == 0));
    }

    #[test]
    fn ann_predictions_flow_with_open_gate() {
        let mut cfg = quick_config();
        cfg.ann_enabled = true;
        cfg.rounds = 6;
        cfg.omega_policy = OmegaPolicy::Fixed { value: f64::INFINITY };
        let logs = run_experiment(&cfg).unwrap();
        // with an always-open gate every unselected client contributes
        let expected = cfg.n_clients - cfg.k_max;
        assert!(logs
            .iter()
            .any(|l| l.predictions_used == expected && !l.selected.is_empty()));
    }

    #[test]
    fn max_age_bounded_under_acs_when_all_feasible() {
        let mut cfg = quick_config();
        cfg.rounds = 24;
        cfg.min_rate_bps = 0.0; // nothing can be infeasible
        let mut state = SimState::new(cfg).unwrap();
        let cycle = 8usize.div_ceil(3);
        for t in 0..24 {
            state.run_round().unwrap();
            if t >= cycle {
                let max_age = *state.ages().ages().iter().max().unwrap();
                assert!(max_age <= cycle as u64 + 1, "round {t}: max age {max_age}");
            }
        }
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let vals = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&vals, 0.1), 1.0);
        assert_eq!(percentile(&vals, 0.5), 3.0);
        assert_eq!(percentile(&vals, 1.0), 5.0);
    }
}
