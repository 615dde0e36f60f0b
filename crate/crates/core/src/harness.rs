//! Configured experiments: single runs, Monte Carlo aggregation over trials,
//! convergence times, node-count sweeps, and CSV/JSON export.
//!
//! Seeding: trial `k` of master seed `s` uses `mix_seed(s, k)`. From that
//! trial seed the noise stream is `mix_seed(trial_seed, 0)` and the initial
//! state is drawn from `mix_seed(trial_seed, 1)`. A shared initial state is
//! drawn from `mix_seed(s, u64::MAX)` instead. A random graph sequence uses
//! its own `graph.seed` or, when absent, the master seed, so every trial
//! sees the same graphs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{hitting_times, AnalysisError};
use crate::bounds::BoundParams;
use crate::graph::{generate, Family, GraphError, GraphSequence, GraphSnapshot, RandomSequence};
use crate::protocol::{
    max_error, normalize_measuring, variance, NoiseDistribution, NoiseModel, NoiseSource, ProtocolError,
    ProtocolState, StepsizeSchedule, Stepper, Target,
};
use crate::seed::mix_seed;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: u64 },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, HarnessError> {
    Err(HarnessError::Config(msg.into()))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// A named topology held fixed over time.
    #[default]
    Family,
    /// A fixed graph read from a text file.
    File,
    /// A random B-connected sequence.
    RandomSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub family: Family,
    pub n: Option<usize>,
    pub path: Option<PathBuf>,
    /// Connectivity window B of a random sequence.
    pub window: usize,
    /// Edges per window of a random sequence; defaults to `2(n - 1)`.
    pub edge_budget: Option<usize>,
    /// Seed of a random sequence; defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self {
            kind: GraphKind::Family,
            family: Family::Complete,
            n: None,
            path: None,
            window: 1,
            edge_budget: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementMode {
    /// The listed `nodes` measure at every measurement time.
    #[default]
    Nodes,
    /// The family's canonical sampling node (node 0 for files and sequences).
    Sampling,
    /// Node `k mod n` measures at the k-th measurement time.
    RoundRobin,
    /// Every node measures.
    All,
}

/// Who measures, and when: times `1, 1 + period, 1 + 2 period, ...`, so the
/// largest gap between measurement times is `period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementSpec {
    pub mode: MeasurementMode,
    pub nodes: Vec<usize>,
    pub period: u64,
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        Self {
            mode: MeasurementMode::Nodes,
            nodes: vec![0],
            period: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub sigma_prime: f64,
    pub distribution: NoiseDistribution,
    pub symmetric_offset_noise: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            sigma_prime: 0.0,
            distribution: NoiseDistribution::Gaussian,
            symmetric_offset_noise: false,
        }
    }
}

impl NoiseSpec {
    pub fn model(&self) -> Result<NoiseModel, ProtocolError> {
        let mut m = NoiseModel::new(self.sigma, self.sigma_prime, self.distribution)?;
        m.symmetric_offset_noise = self.symmetric_offset_noise;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepsizeSpec {
    pub epsilon: f64,
    pub offset: f64,
}

impl Default for StepsizeSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.75,
            offset: 0.0,
        }
    }
}

/// μ as an explicit vector, or zeros of dimension `dim` when `values` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub values: Option<Vec<f64>>,
    pub dim: usize,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self { values: None, dim: 1 }
    }
}

impl TargetSpec {
    pub fn target(&self) -> Result<Target, ProtocolError> {
        match &self.values {
            Some(v) => Target::new(v.clone()),
            None => Target::zeros(self.dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Every entry uniform on `[lo, hi]`.
    #[default]
    Box,
    Zeros,
    /// The n×l matrix in `rows`.
    Explicit,
    /// Every agent starts at μ.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub kind: InitKind,
    pub lo: f64,
    pub hi: f64,
    pub rows: Option<Vec<Vec<f64>>>,
    /// Draw one random initial state and reuse it in every trial.
    pub shared: bool,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            kind: InitKind::Box,
            lo: 0.0,
            hi: 5.0,
            rows: None,
            shared: false,
        }
    }
}

/// Everything a run needs. Loaded from TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub measurement: MeasurementSpec,
    pub noise: NoiseSpec,
    pub stepsize: StepsizeSpec,
    pub target: TargetSpec,
    pub init: InitSpec,
    /// Last time index; a run takes `horizon - 1` steps.
    pub horizon: u64,
    /// Trajectory sampling stride; defaults to `max(1, horizon / 10^4)`.
    pub stride: Option<u64>,
    /// Convergence threshold on the ∞-error.
    pub threshold: Option<f64>,
    pub stop_at_threshold: bool,
    pub seed: u64,
    pub trials: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphSpec::default(),
            measurement: MeasurementSpec::default(),
            noise: NoiseSpec::default(),
            stepsize: StepsizeSpec::default(),
            target: TargetSpec::default(),
            init: InitSpec::default(),
            horizon: 10_000,
            stride: None,
            threshold: None,
            stop_at_threshold: false,
            seed: 0,
            trials: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.resolved()).expect("config serializes to TOML")
    }

    pub fn effective_stride(&self) -> u64 {
        self.stride.unwrap_or((self.horizon / 10_000).max(1))
    }

    /// The config with every implicit default written out.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.stride = Some(self.effective_stride());
        if c.graph.kind == GraphKind::RandomSequence {
            c.graph.seed = Some(self.graph.seed.unwrap_or(self.seed));
            if let (None, Some(n)) = (c.graph.edge_budget, c.graph.n) {
                c.graph.edge_budget = Some(2 * n.saturating_sub(1));
            }
        }
        c
    }

    /// Hex SHA-256 of the resolved config's canonical JSON.
    pub fn digest(&self) -> String {
        digest_of(&self.resolved())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        Prepared::new(self).map(|_| ())
    }
}

/// Hex SHA-256 of a value's compact JSON form.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("value serializes to JSON");
    Sha256::digest(json.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Graph source with a cache of the current window for random sequences.
#[derive(Debug, Clone)]
enum GraphSource {
    Fixed(GraphSnapshot),
    Random(RandomSequence),
}

struct Cursor<'a> {
    source: &'a GraphSource,
    window: Option<u64>,
    snaps: Vec<GraphSnapshot>,
}

impl<'a> Cursor<'a> {
    fn new(source: &'a GraphSource) -> Self {
        Self {
            source,
            window: None,
            snaps: Vec::new(),
        }
    }

    fn at(&mut self, t: u64) -> &GraphSnapshot {
        match self.source {
            GraphSource::Fixed(g) => g,
            GraphSource::Random(seq) => {
                let b = seq.window() as u64;
                let k = (t - 1) / b;
                if self.window != Some(k) {
                    self.snaps = seq.window_snapshots(k);
                    self.window = Some(k);
                }
                &self.snaps[((t - 1) % b) as usize]
            }
        }
    }
}

/// A validated config with its graph, measurement plan and noise resolved,
/// shared read-only by every trial.
#[derive(Debug, Clone)]
pub struct Prepared {
    config: ExperimentConfig,
    digest: String,
    source: GraphSource,
    n: usize,
    plan: Vec<Vec<usize>>,
    period: u64,
    model: NoiseModel,
    sched: StepsizeSchedule,
    target: Target,
    initial: Option<ProtocolState>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let config = config.resolved();
        if config.horizon < 1 {
            return config_err("horizon must be >= 1");
        }
        if config.trials < 1 {
            return config_err("trials must be >= 1");
        }
        if config.stride == Some(0) {
            return config_err("stride must be >= 1");
        }
        if let Some(th) = config.threshold {
            if !(th > 0.0) {
                return config_err(format!("threshold must be > 0, got {th}"));
            }
        }
        let spec = &config.graph;
        let need_n = || spec.n.ok_or_else(|| HarnessError::Config("graph.n is required".into()));
        let source = match spec.kind {
            GraphKind::Family => GraphSource::Fixed(generate(spec.family, need_n()?)?),
            GraphKind::File => {
                let path = spec
                    .path
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("graph.path is required for kind = \"file\"".into()))?;
                GraphSource::Fixed(GraphSnapshot::read(path)?)
            }
            GraphKind::RandomSequence => GraphSource::Random(RandomSequence::new(
                need_n()?,
                spec.window,
                spec.edge_budget.expect("resolved"),
                spec.seed.expect("resolved"),
            )?),
        };
        let n = match &source {
            GraphSource::Fixed(g) => g.node_count(),
            GraphSource::Random(s) => s.node_count(),
        };

        let m = &config.measurement;
        if m.period < 1 {
            return config_err("measurement.period must be >= 1");
        }
        let plan = match m.mode {
            MeasurementMode::Nodes => {
                if m.nodes.is_empty() {
                    return config_err("measurement.nodes is empty");
                }
                vec![normalize_measuring(&m.nodes, n)?]
            }
            MeasurementMode::Sampling => {
                let node = match spec.kind {
                    GraphKind::Family => spec.family.sampling_node(n),
                    _ => 0,
                };
                vec![vec![node]]
            }
            MeasurementMode::RoundRobin => (0..n).map(|i| vec![i]).collect(),
            MeasurementMode::All => vec![(0..n).collect()],
        };

        let model = config.noise.model()?;
        let sched = StepsizeSchedule::new(config.stepsize.epsilon, config.stepsize.offset)?;
        let target = config.target.target()?;
        let period = m.period;

        let mut prepared = Self {
            digest: config.digest(),
            config,
            source,
            n,
            plan,
            period,
            model,
            sched,
            target,
            initial: None,
        };
        prepared.check_init()?;
        if prepared.config.init.shared {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(prepared.config.seed, u64::MAX));
            prepared.initial = Some(prepared.draw_init(&mut rng)?);
        }
        Ok(prepared)
    }

    fn check_init(&self) -> Result<(), HarnessError> {
        let init = &self.config.init;
        match init.kind {
            InitKind::Box if !(init.lo <= init.hi && init.lo.is_finite() && init.hi.is_finite()) => {
                config_err(format!("init box [{}, {}] is empty or unbounded", init.lo, init.hi))
            }
            InitKind::Explicit => {
                let rows = init
                    .rows
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("init.rows is required for kind = \"explicit\"".into()))?;
                if rows.len() != self.n || rows.iter().any(|r| r.len() != self.target.dim()) {
                    return config_err(format!("init.rows must be {}x{}", self.n, self.target.dim()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn draw_init(&self, rng: &mut ChaCha8Rng) -> Result<ProtocolState, HarnessError> {
        let init = &self.config.init;
        let (n, l) = (self.n, self.target.dim());
        Ok(match init.kind {
            InitKind::Box => {
                let v = (0..n * l)
                    .map(|_| if init.lo == init.hi { init.lo } else { rng.gen_range(init.lo..=init.hi) })
                    .collect();
                ProtocolState::new(n, l, v)?
            }
            InitKind::Zeros => ProtocolState::new(n, l, vec![0.0; n * l])?,
            InitKind::Explicit => ProtocolState::from_rows(init.rows.as_deref().unwrap_or_default())?,
            InitKind::Target => ProtocolState::at_target(n, &self.target),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn schedule(&self) -> &StepsizeSchedule {
        &self.sched
    }

    pub fn noise_model(&self) -> &NoiseModel {
        &self.model
    }

    /// Measuring set at time `t` (sorted; empty between measurement times).
    pub fn measuring_at(&self, t: u64) -> &[usize] {
        let k = t - 1;
        if k % self.period != 0 {
            return &[];
        }
        &self.plan[((k / self.period) % self.plan.len() as u64) as usize]
    }

    /// Largest gap T between measurement times.
    pub fn measurement_gap(&self) -> u64 {
        self.period
    }

    /// Largest number of agents measuring at one time.
    pub fn max_measuring(&self) -> usize {
        self.plan.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// G(t).
    pub fn snapshot(&self, t: u64) -> GraphSnapshot {
        Cursor::new(&self.source).at(t).clone()
    }

    /// The initial state of trial `trial`.
    pub fn initial_state(&self, trial: u64) -> Result<ProtocolState, HarnessError> {
        if let Some(s) = &self.initial {
            return Ok(s.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.config.seed, trial), 1));
        self.draw_init(&mut rng)
    }

    /// Bound parameters matching this experiment, with `Z(1)` from trial 0.
    /// The hitting time is filled in for a fixed connected graph, `d_max`
    /// over `1..=horizon`.
    pub fn bound_params(&self) -> Result<BoundParams, HarnessError> {
        let z1 = variance(&self.initial_state(0)?, &self.target);
        let (hitting_time, d_max, window) = match &self.source {
            GraphSource::Fixed(g) => {
                let h = if g.is_connected() && g.node_count() >= 2 {
                    Some(hitting_times(g)?.max_value)
                } else {
                    None
                };
                (h, g.max_degree(), 1)
            }
            GraphSource::Random(s) => (None, s.max_degree(self.config.horizon), s.window() as u64),
        };
        Ok(BoundParams {
            n: self.n,
            l: self.target.dim(),
            t_gap: self.period,
            b_window: window,
            m: self.max_measuring().max(1),
            sigma: self.model.sigma,
            sigma_prime: self.model.sigma_prime,
            epsilon: self.sched.epsilon,
            hitting_time,
            d_max: (d_max > 0).then_some(d_max),
            z1,
        })
    }

    /// Runs trial `trial` (seed `mix_seed(master, trial)`).
    pub fn run_trial(&self, trial: u64) -> Result<RunResult, HarnessError> {
        let cfg = &self.config;
        let seed = mix_seed(cfg.seed, trial);
        let mut noise = NoiseSource::new(self.model, mix_seed(seed, 0));
        let mut state = self.initial_state(trial)?;
        let stride = cfg.effective_stride();
        let mut cursor = Cursor::new(&self.source);
        let mut stepper = Stepper::new();
        let mut trajectory = Vec::with_capacity((cfg.horizon / stride + 2).min(1 << 20) as usize);
        let mut convergence_time = None;
        let mut unit_stepsize_at = None;
        let mut t = 1;
        loop {
            let z = variance(&state, &self.target);
            if !z.is_finite() {
                return Err(HarnessError::NonFinite { t });
            }
            let err = max_error(&state, &self.target);
            if let (Some(th), None) = (cfg.threshold, convergence_time) {
                if err < th {
                    convergence_time = Some(t);
                }
            }
            let last = t == cfg.horizon || (cfg.stop_at_threshold && convergence_time.is_some());
            if (t - 1) % stride == 0 || last {
                trajectory.push(TrajectoryPoint { t, z, max_err: err });
            }
            if last {
                return Ok(RunResult {
                    trial,
                    seed,
                    digest: self.digest.clone(),
                    trajectory,
                    final_t: t,
                    final_z: z,
                    final_max_err: err,
                    convergence_time,
                    unit_stepsize_at,
                    final_state: state,
                });
            }
            let g = cursor.at(t);
            let delta = stepper.advance(&mut state, g, self.measuring_at(t), &self.sched, &mut noise, &self.target)?;
            if delta >= 1.0 && unit_stepsize_at.is_none() {
                unit_stepsize_at = Some(t);
            }
            t += 1;
        }
    }

    /// Trials `first..first + count`, in trial order.
    pub fn run_trials(&self, first: u64, count: u64) -> Result<Vec<RunResult>, HarnessError> {
        (first..first + count).into_par_iter().map(|k| self.run_trial(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub z: f64,
    pub max_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub trial: u64,
    pub seed: u64,
    pub digest: String,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_t: u64,
    pub final_z: f64,
    pub final_max_err: f64,
    /// First t with ∞-error below the threshold, checked at every step.
    pub convergence_time: Option<u64>,
    /// First t at which Δ(t) = 1. The one-step decrease estimate assumes
    /// Δ(t) < 1, so such steps fall outside it.
    pub unit_stepsize_at: Option<u64>,
    pub final_state: ProtocolState,
}

/// Trial 0 of `config`.
pub fn run(config: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    Prepared::new(config)?.run_trial(0)
}

/// First t with ∞-error below `threshold` in trial 0, or `None` if the
/// horizon runs out first.
pub fn convergence_time(config: &ExperimentConfig, threshold: f64) -> Result<Option<u64>, HarnessError> {
    let mut c = config.clone();
    c.threshold = Some(threshold);
    c.stop_at_threshold = true;
    Ok(run(&c)?.convergence_time)
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let d = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * nb / count as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / count as f64,
        }
    }

    /// Standard error of the mean; 0 with fewer than two samples.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2.max(0.0) / (n - 1.0) / n).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: u64,
    pub z: Moments,
    pub err: Moments,
}

impl AggregateRow {
    pub fn trials(&self) -> u64 {
        self.z.count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAggregate {
    pub seed: u64,
    pub digest: String,
    pub first_trial: u64,
    pub trials: u64,
    /// One row per sampled t; runs that stopped early contribute to fewer rows.
    pub rows: Vec<AggregateRow>,
    /// Per-trial convergence times, in trial order.
    pub convergence_times: Vec<Option<u64>>,
}

impl TrialAggregate {
    /// Aggregates runs already produced by `prepared`, starting at `first_trial`.
    pub fn from_runs(prepared: &Prepared, first_trial: u64, runs: &[RunResult]) -> Self {
        let mut rows: BTreeMap<u64, AggregateRow> = BTreeMap::new();
        for r in runs {
            for p in &r.trajectory {
                let row = rows.entry(p.t).or_insert(AggregateRow {
                    t: p.t,
                    z: Moments::default(),
                    err: Moments::default(),
                });
                row.z.push(p.z);
                row.err.push(p.max_err);
            }
        }
        Self {
            seed: prepared.config.seed,
            digest: prepared.digest.clone(),
            first_trial,
            trials: runs.len() as u64,
            rows: rows.into_values().collect(),
            convergence_times: runs.iter().map(|r| r.convergence_time).collect(),
        }
    }

    /// Combines aggregates over adjacent trial ranges of the same config.
    pub fn merge(&self, other: &TrialAggregate) -> Result<TrialAggregate, HarnessError> {
        if self.digest != other.digest {
            return config_err("cannot merge aggregates of different configs");
        }
        let (a, b) = if self.first_trial <= other.first_trial {
            (self, other)
        } else {
            (other, self)
        };
        if a.first_trial + a.trials != b.first_trial {
            return config_err("trial ranges are not adjacent");
        }
        let mut rows: BTreeMap<u64, AggregateRow> = a.rows.iter().map(|r| (r.t, *r)).collect();
        for r in &b.rows {
            rows.entry(r.t)
                .and_modify(|x| {
                    x.z = x.z.merge(&r.z);
                    x.err = x.err.merge(&r.err);
                })
                .or_insert(*r);
        }
        Ok(TrialAggregate {
            seed: a.seed,
            digest: a.digest.clone(),
            first_trial: a.first_trial,
            trials: a.trials + b.trials,
            rows: rows.into_values().collect(),
            convergence_times: a.convergence_times.iter().chain(&b.convergence_times).copied().collect(),
        })
    }

    pub fn row_at(&self, t: u64) -> Option<&AggregateRow> {
        self.rows.binary_search_by_key(&t, |r| r.t).ok().map(|i| &self.rows[i])
    }

    /// Median convergence time, counting unreached trials as +∞; `None` when
    /// the median itself is unreached.
    pub fn median_convergence_time(&self) -> Option<f64> {
        let mut times: Vec<f64> = self
            .convergence_times
            .iter()
            .map(|c| c.map_or(f64::INFINITY, |t| t as f64))
            .collect();
        if times.is_empty() {
            return None;
        }
        times.sort_by(f64::total_cmp);
        let k = times.len();
        let med = if k % 2 == 1 {
            times[k / 2]
        } else {
            0.5 * (times[k / 2 - 1] + times[k / 2])
        };
        med.is_finite().then_some(med)
    }
}

/// Aggregates `config.trials` independent trials (at least two).
pub fn monte_carlo(config: &ExperimentConfig) -> Result<TrialAggregate, HarnessError> {
    if config.trials < 2 {
        return config_err("monte_carlo needs trials >= 2");
    }
    monte_carlo_range(config, 0, config.trials as u64)
}

/// Aggregates trials `first..first + count`.
pub fn monte_carlo_range(config: &ExperimentConfig, first: u64, count: u64) -> Result<TrialAggregate, HarnessError> {
    let prepared = Prepared::new(config)?;
    let runs = prepared.run_trials(first, count)?;
    Ok(TrialAggregate::from_runs(&prepared, first, &runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    /// Median over trials; `None` if unreached within the horizon.
    pub convergence_time: Option<f64>,
}

/// Median convergence time for each node count in `ns`. Requires a
/// threshold and a family or random-sequence graph.
pub fn sweep(config: &ExperimentConfig, ns: &[usize]) -> Result<Vec<SweepRow>, HarnessError> {
    if ns.is_empty() {
        return config_err("sweep needs at least one node count");
    }
    if config.threshold.is_none() {
        return config_err("sweep needs a threshold");
    }
    if config.graph.kind == GraphKind::File {
        return config_err("sweep cannot vary the size of a file graph");
    }
    ns.iter()
        .map(|&n| {
            let mut c = config.clone();
            c.graph.n = Some(n);
            c.graph.edge_budget = config.graph.edge_budget;
            c.stop_at_threshold = true;
            let prepared = Prepared::new(&c)?;
            let runs = prepared.run_trials(0, c.trials as u64)?;
            let agg = TrialAggregate::from_runs(&prepared, 0, &runs);
            Ok(SweepRow {
                n,
                convergence_time: agg.median_convergence_time(),
            })
        })
        .collect()
}

/// Monte Carlo estimate of `E[Z(t+1) | v(t)]` from `draws` independent noise
/// draws at a fixed state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneStepEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: u64,
}

pub fn one_step_monte_carlo(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    sched: &StepsizeSchedule,
    model: &NoiseModel,
    target: &Target,
    draws: u64,
    seed: u64,
) -> Result<OneStepEstimate, HarnessError> {
    let measuring = normalize_measuring(measuring, state.agents())?;
    let mut noise = NoiseSource::new(*model, seed);
    let mut stepper = Stepper::new();
    let mut stats = Moments::default();
    let mut next = state.clone();
    for _ in 0..draws {
        next.clone_from(state);
        stepper.advance(&mut next, g, &measuring, sched, &mut noise, target)?;
        stats.push(variance(&next, target));
    }
    Ok(OneStepEstimate {
        mean: stats.mean,
        std_error: stats.std_error(),
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

pub const RUN_CSV_HEADER: &str = "t,Z,max_err";
pub const AGGREGATE_CSV_HEADER: &str = "t,Z_mean,Z_se,err_mean,err_se,trials";
const DIGEST_PREFIX: &str = "# config-digest: ";

/// Results that can be written as CSV or JSON.
pub trait Export {
    fn digest(&self) -> &str;
    fn csv_header(&self) -> &'static str;
    fn csv_rows(&self, out: &mut String);
    fn json_body(&self) -> serde_json::Value;

    /// A `# config-digest:` line, the header, then one row per sample.
    fn to_csv(&self) -> String {
        let mut out = format!("{DIGEST_PREFIX}{}\n{}\n", self.digest(), self.csv_header());
        self.csv_rows(&mut out);
        out
    }

    /// `{ "digest", "config", "result" }`, the config fully resolved.
    fn to_json(&self, config: &ExperimentConfig) -> serde_json::Value {
        serde_json::json!({
            "digest": self.digest(),
            "config": config.resolved(),
            "result": self.json_body(),
        })
    }
}

impl Export for RunResult {
    fn digest(&self) -> &str {
        &self.digest
    }

    fn csv_header(&self) -> &'static str {
        RUN_CSV_HEADER
    }

    fn csv_rows(&self, out: &mut String) {
        for p in &self.trajectory {
            let _ = writeln!(out, "{},{:.16e},{:.16e}", p.t, p.z, p.max_err);
        }
    }

    fn json_body(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run result serializes")
    }
}

impl Export for TrialAggregate {
    fn digest(&self) -> &str {
        &self.digest
    }

    fn csv_header(&self) -> &'static str {
        AGGREGATE_CSV_HEADER
    }

    fn csv_rows(&self, out: &mut String) {
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.t,
                r.z.mean,
                r.z.std_error(),
                r.err.mean,
                r.err.std_error(),
                r.trials()
            );
        }
    }

    fn json_body(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "t": r.t,
                    "Z_mean": r.z.mean,
                    "Z_se": r.z.std_error(),
                    "err_mean": r.err.mean,
                    "err_se": r.err.std_error(),
                    "trials": r.trials(),
                })
            })
            .collect();
        serde_json::json!({
            "seed": self.seed,
            "first_trial": self.first_trial,
            "trials": self.trials,
            "rows": rows,
            "convergence_times": self.convergence_times,
            "median_convergence_time": self.median_convergence_time(),
        })
    }
}

/// Writes `item` to `path` in `format`.
pub fn export<E: Export>(item: &E, config: &ExperimentConfig, format: ExportFormat, path: &Path) -> Result<(), HarnessError> {
    let text = match format {
        ExportFormat::Csv => item.to_csv(),
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&item.to_json(config)).expect("JSON value serializes");
            s.push('\n');
            s
        }
    };
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Parses a per-run CSV back into trajectory points.
pub fn parse_run_csv(text: &str) -> Result<Vec<TrajectoryPoint>, HarnessError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == RUN_CSV_HEADER => {}
        Some((i, h)) => {
            return Err(HarnessError::Parse {
                line: i + 1,
                msg: format!("expected header {RUN_CSV_HEADER:?}, found {h:?}"),
            })
        }
        None => {
            return Err(HarnessError::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |msg: String| HarnessError::Parse { line: i + 1, msg };
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            Ok(TrajectoryPoint {
                t: fields[0].parse().map_err(|e| bad(format!("{:?}: {e}", fields[0])))?,
                z: float(fields[1])?,
                max_err: float(fields[2])?,
            })
        })
        .collect()
}

pub fn read_run_csv(path: &Path) -> Result<Vec<TrajectoryPoint>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_run_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_k2() -> ExperimentConfig {
        ExperimentConfig {
            graph: GraphSpec {
                n: Some(2),
                ..GraphSpec::default()
            },
            noise: NoiseSpec {
                sigma: 0.0,
                sigma_prime: 0.0,
                ..NoiseSpec::default()
            },
            stepsize: StepsizeSpec {
                epsilon: 0.5,
                offset: 1.0,
            },
            target: TargetSpec {
                values: Some(vec![1.0]),
                dim: 1,
            },
            init: InitSpec {
                kind: InitKind::Zeros,
                ..InitSpec::default()
            },
            horizon: 10_000,
            stride: Some(1),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn noiseless_k2_decreases_to_zero() {
        let r = run(&noiseless_k2()).unwrap();
        assert!(r.trajectory.windows(2).all(|w| w[1].z < w[0].z));
        assert!(r.final_z < 1e-6, "final Z = {}", r.final_z);
        assert_eq!(r.unit_stepsize_at, None);
    }

    #[test]
    fn fixed_point_start_stays_put() {
        let mut c = noiseless_k2();
        c.init.kind = InitKind::Target;
        c.horizon = 50;
        let r = run(&c).unwrap();
        assert!(r.trajectory.iter().all(|p| p.z == 0.0));
        assert_eq!(convergence_time(&c, 1e-3).unwrap(), Some(1));
    }

    #[test]
    fn convergence_time_noiseless_k2_is_pinned() {
        let c = noiseless_k2();
        let t = convergence_time(&c, 1e-3).unwrap();
        assert_eq!(t, convergence_time(&c, 1e-3).unwrap());
        // regression value from the first implementation run
        assert_eq!(t, Some(CONVERGENCE_K2));
        assert_eq!(convergence_time(&c, 10.0).unwrap(), Some(1));
    }

    const CONVERGENCE_K2: u64 = 1449;

    #[test]
    fn runs_are_deterministic() {
        let mut c = noiseless_k2();
        c.noise.sigma = 1.0;
        c.noise.sigma_prime = 0.3;
        c.init.kind = InitKind::Box;
        c.horizon = 2_000;
        assert_eq!(run(&c).unwrap(), run(&c).unwrap());
    }

    #[test]
    fn unit_stepsize_is_flagged() {
        let mut c = noiseless_k2();
        c.stepsize.offset = 0.0;
        c.horizon = 5;
        assert_eq!(run(&c).unwrap().unit_stepsize_at, Some(1));
    }

    #[test]
    fn stride_sampling_includes_last_point() {
        let mut c = noiseless_k2();
        c.horizon = 25;
        c.stride = Some(10);
        let ts: Vec<u64> = run(&c).unwrap().trajectory.iter().map(|p| p.t).collect();
        assert_eq!(ts, vec![1, 11, 21, 25]);
        c.stride = None;
        c.horizon = 1_000_000;
        assert_eq!(c.effective_stride(), 100);
    }

    #[test]
    fn noiseless_monte_carlo_has_zero_spread() {
        let mut c = noiseless_k2();
        c.init.shared = true;
        c.init.kind = InitKind::Box;
        c.trials = 4;
        c.horizon = 200;
        let agg = monte_carlo(&c).unwrap();
        assert!(agg.rows.iter().all(|r| r.z.std_error() == 0.0 && r.err.std_error() == 0.0));
        assert!(agg.rows.iter().all(|r| r.trials() == 4));
        c.trials = 1;
        assert!(monte_carlo(&c).is_err());
    }

    #[test]
    fn aggregate_merge_matches_full_run() {
        let mut c = noiseless_k2();
        c.noise.sigma = 1.0;
        c.init.kind = InitKind::Box;
        c.horizon = 300;
        c.stride = Some(7);
        c.trials = 6;
        let full = monte_carlo(&c).unwrap();
        let a = monte_carlo_range(&c, 0, 3).unwrap();
        let b = monte_carlo_range(&c, 3, 3).unwrap();
        let merged = b.merge(&a).unwrap();
        assert_eq!(merged.trials, 6);
        assert_eq!(merged.convergence_times, full.convergence_times);
        for (x, y) in merged.rows.iter().zip(&full.rows) {
            assert_eq!(x.t, y.t);
            assert!((x.z.mean - y.z.mean).abs() <= 1e-12 * y.z.mean.abs().max(1.0));
            assert!((x.z.std_error() - y.z.std_error()).abs() <= 1e-10 * y.z.std_error().max(1.0));
        }
        assert!(a.merge(&a).is_err());
    }

    #[test]
    fn adjacent_trial_streams_are_uncorrelated() {
        use rand_distr::StandardNormal;
        let draws = |trial: u64| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(42, trial), 0));
            (0..10_000).map(|_| rng.sample(StandardNormal)).collect()
        };
        for k in 0..5 {
            let (a, b) = (draws(k), draws(k + 1));
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            assert!((cov / (va * vb).sqrt()).abs() < 0.05);
        }
    }

    #[test]
    fn one_step_estimate_matches_exact_expectation() {
        let g = generate(Family::Star, 4).unwrap();
        let state = ProtocolState::at_time(4, 1, vec![1.0, -2.0, 0.5, 3.0], 5).unwrap();
        let sched = StepsizeSchedule::new(0.5, 1.0).unwrap();
        let model = NoiseModel::new(1.0, 0.7, NoiseDistribution::Gaussian).unwrap();
        let target = Target::new(vec![0.25]).unwrap();
        let est = one_step_monte_carlo(&state, &g, &[0, 2], &sched, &model, &target, 100_000, 9).unwrap();
        let exact = crate::protocol::expected_next_variance(&state, &g, &[0, 2], &sched, &model, &target).unwrap();
        assert!((est.mean - exact).abs() <= 3.0 * est.std_error, "{} vs {exact}", est.mean);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut c = noiseless_k2();
        c.noise.sigma = 0.8;
        c.init.kind = InitKind::Box;
        c.horizon = 500;
        c.stride = Some(13);
        let r = run(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        export(&r, &c, ExportFormat::Csv, &path).unwrap();
        assert_eq!(read_run_csv(&path).unwrap(), r.trajectory);
    }

    #[test]
    fn empty_trajectory_exports_header_only() {
        let mut r = run(&noiseless_k2()).unwrap();
        r.trajectory.clear();
        let csv = r.to_csv();
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec![RUN_CSV_HEADER]);
        assert!(parse_run_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn json_echo_carries_defaulted_noise() {
        let c = ExperimentConfig::from_toml_str("horizon = 10\n[graph]\nn = 3\n").unwrap();
        let r = run(&c).unwrap();
        let v = r.to_json(&c);
        assert_eq!(v["config"]["noise"]["sigma"], 1.0);
        assert_eq!(v["config"]["noise"]["sigma_prime"], 0.0);
        assert_eq!(v["digest"], c.digest());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let c = ExperimentConfig::default();
        assert!(c.validate().is_err(), "n is required");
        let mut c = noiseless_k2();
        c.measurement.nodes = vec![5];
        assert!(c.validate().is_err());
        let mut c = noiseless_k2();
        c.horizon = 0;
        assert!(c.validate().is_err());
        let mut c = noiseless_k2();
        c.init.kind = InitKind::Explicit;
        c.init.rows = Some(vec![vec![1.0]]);
        assert!(c.validate().is_err());
        c.init.rows = Some(vec![vec![1.0], vec![2.0]]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn digest_tracks_resolved_values() {
        let a = noiseless_k2();
        let mut b = a.clone();
        b.stride = None;
        b.horizon = 10_000;
        assert_eq!(a.digest(), b.digest(), "stride 1 is the resolved default here");
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn measurement_plans() {
        let mut c = noiseless_k2();
        c.graph.n = Some(4);
        c.graph.family = Family::Line;
        c.measurement.mode = MeasurementMode::Sampling;
        let p = Prepared::new(&c).unwrap();
        assert_eq!(p.measuring_at(1), &[3]);
        c.measurement.mode = MeasurementMode::RoundRobin;
        c.measurement.period = 2;
        let p = Prepared::new(&c).unwrap();
        let sets: Vec<&[usize]> = (1..=6).map(|t| p.measuring_at(t)).collect();
        assert_eq!(sets, vec![&[0][..], &[], &[1], &[], &[2], &[]]);
        assert_eq!(p.measurement_gap(), 2);
    }

    #[test]
    fn random_sequence_cursor_matches_sequence() {
        let c = ExperimentConfig::from_toml_str(
            "seed = 3\n[graph]\nkind = \"random-sequence\"\nn = 6\nwindow = 3\n",
        )
        .unwrap();
        let p = Prepared::new(&c).unwrap();
        let seq = RandomSequence::new(6, 3, 10, 3).unwrap();
        for t in 1..20 {
            assert_eq!(p.snapshot(t), *seq.snapshot(t));
        }
    }
}
