//! Command-line front end: `simulate`, `sweep`, `analyze`, `bound`, `verify`.
//!
//! Experiment flags mirror the config keys; a flag overrides the value from
//! `--config`, which overrides the built-in default. Every command prints the
//! digest of the parameters it actually used.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::graph_report;
use crate::bounds::{
    connected_bound_unchecked, general_bound_unchecked, transient_connected, transient_general, BoundParams,
};
use crate::checks::{find_suite, run_all, CheckReport, VerifyOptions, SUITES};
use crate::graph::{generate, Family, GraphSnapshot};
use crate::harness::{
    digest_of, export, sweep, ExperimentConfig, ExportFormat, Moments, GraphKind, InitKind, MeasurementMode, Prepared,
    TrialAggregate,
};
use crate::protocol::NoiseDistribution;

#[derive(Debug, Parser)]
#[command(name = "coop-learn", version, about = "Cooperative learning over time-varying graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment (or a Monte Carlo batch when trials > 1).
    Simulate(SimulateArgs),
    /// Median convergence time as a function of the node count.
    Sweep(SweepArgs),
    /// Sieve constant, hitting time, λ_max and diameter of a graph.
    Analyze(AnalyzeArgs),
    /// Transient thresholds and variance bounds.
    Bound(BoundArgs),
    /// Run the numerical verification suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitChoice {
    Box,
    Zeros,
    Target,
}

/// Experiment flags; each overrides the config key of the same name.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Graph family, or `random-sequence`.
    #[arg(long)]
    pub graph: Option<String>,
    /// Fixed graph from a text file (`n`, then one `i j` per line).
    #[arg(long, conflicts_with = "graph")]
    pub graph_file: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Connectivity window B of a random sequence.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub edge_budget: Option<usize>,
    #[arg(long)]
    pub graph_seed: Option<u64>,
    /// Comma-separated node list, or `sampling`, `round-robin`, `all`.
    #[arg(long)]
    pub measuring: Option<String>,
    /// Steps between measurement times.
    #[arg(long)]
    pub period: Option<u64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_prime: Option<f64>,
    #[arg(long, value_parser = parse_distribution)]
    pub distribution: Option<NoiseDistribution>,
    #[arg(long)]
    pub symmetric_offset_noise: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub offset: Option<f64>,
    /// Comma-separated target vector μ.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    /// Dimension of a zero target when `--mu` is absent.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    /// Uniform initial entries on [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub init_box: Option<Vec<f64>>,
    /// Reuse one random initial state across trials.
    #[arg(long)]
    pub shared_init: bool,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub stride: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub stop_at_threshold: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

fn parse_distribution(s: &str) -> Result<NoiseDistribution, String> {
    match s {
        "gaussian" => Ok(NoiseDistribution::Gaussian),
        "uniform" => Ok(NoiseDistribution::Uniform),
        "rademacher" => Ok(NoiseDistribution::Rademacher),
        other => Err(format!("unknown distribution {other:?} (gaussian, uniform, rademacher)")),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("bad {what} entry {x:?}: {e}")))
        .collect()
}

impl ExperimentArgs {
    /// Default, then `--config`, then flags.
    pub fn resolve(&self) -> Result<ExperimentConfig, String> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        if let Some(g) = &self.graph {
            if g == "random-sequence" {
                c.graph.kind = GraphKind::RandomSequence;
            } else {
                c.graph.kind = GraphKind::Family;
                c.graph.family = g.parse::<Family>().map_err(|e| e.to_string())?;
            }
        }
        if let Some(p) = &self.graph_file {
            c.graph.kind = GraphKind::File;
            c.graph.path = Some(p.clone());
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            n => graph.n,
            edge_budget => graph.edge_budget,
            graph_seed => graph.seed,
            stride => stride,
            threshold => threshold,
        );
        set!(
            window => graph.window,
            period => measurement.period,
            sigma => noise.sigma,
            sigma_prime => noise.sigma_prime,
            distribution => noise.distribution,
            epsilon => stepsize.epsilon,
            offset => stepsize.offset,
            dim => target.dim,
            horizon => horizon,
            seed => seed,
            trials => trials,
        );
        if let Some(m) = &self.measuring {
            match m.as_str() {
                "sampling" => c.measurement.mode = MeasurementMode::Sampling,
                "round-robin" => c.measurement.mode = MeasurementMode::RoundRobin,
                "all" => c.measurement.mode = MeasurementMode::All,
                list => {
                    c.measurement.mode = MeasurementMode::Nodes;
                    c.measurement.nodes = parse_list(list, "measuring")?;
                }
            }
        }
        if let Some(mu) = &self.mu {
            c.target.values = Some(parse_list(mu, "mu")?);
        }
        if let Some(init) = self.init {
            c.init.kind = match init {
                InitChoice::Box => InitKind::Box,
                InitChoice::Zeros => InitKind::Zeros,
                InitChoice::Target => InitKind::Target,
            };
        }
        if let Some(b) = &self.init_box {
            c.init.kind = InitKind::Box;
            c.init.lo = b[0];
            c.init.hi = b[1];
        }
        c.noise.symmetric_offset_noise |= self.symmetric_offset_noise;
        c.init.shared |= self.shared_init;
        c.stop_at_threshold |= self.stop_at_threshold;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Directory for the exported results and the resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated node counts.
    #[arg(long)]
    pub ns: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub graph: Option<Family>,
    #[arg(long, conflicts_with = "graph")]
    pub graph_file: Option<PathBuf>,
    #[arg(long, required_unless_present = "graph_file")]
    pub n: Option<usize>,
    /// Comma-separated measuring set for λ_max; defaults to the family's sampling node.
    #[arg(long)]
    pub measuring: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: TableFormat,
}

/// Bound parameters; flags override `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    pub n: Option<usize>,
    pub l: Option<usize>,
    pub t_gap: Option<u64>,
    pub b_window: Option<u64>,
    pub m: Option<usize>,
    pub sigma: Option<f64>,
    pub sigma_prime: Option<f64>,
    pub epsilon: Option<f64>,
    pub hitting_time: Option<f64>,
    pub d_max: Option<usize>,
    pub z1: Option<f64>,
    pub t: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// TOML file with any of the bound keys and a `t` list.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Derive the parameters from an experiment config instead.
    #[arg(long, conflicts_with = "config")]
    pub experiment: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub t_gap: Option<u64>,
    #[arg(long)]
    pub b_window: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_prime: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub hitting_time: Option<f64>,
    #[arg(long)]
    pub d_max: Option<usize>,
    #[arg(long)]
    pub z1: Option<f64>,
    /// Comma-separated times at which to evaluate the bounds.
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite name or alias; repeatable. All suites when absent.
    #[arg(long)]
    pub check: Vec<String>,
    #[arg(long)]
    pub max_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub graphs: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub draws: Option<u64>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: TableFormat,
}

/// Runtime failure: message for stderr and the exit code.
struct Failure(String, i32);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string(), 1)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure(msg.into(), 2)
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out`. Returns the process exit code: 0 on success,
/// 1 on a runtime failure or a failed check, 2 on a usage error.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(Failure(msg, code)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Analyze(a) => analyze(a, out),
        Command::Bound(a) => bound(a, out),
        Command::Verify(a) => verify(a, out),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure(format!("{}: {e}", path.display()), 1))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure(format!("{}: {e}", dir.display()), 1))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "not-reached".to_string(), |v| format!("{v}"))
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let config = a.experiment.resolve().map_err(usage)?;
    let prepared = Prepared::new(&config).map_err(|e| usage(e.to_string()))?;
    writeln!(out, "config-digest: {}", prepared.digest())?;
    let format = match a.format {
        Format::Csv => ExportFormat::Csv,
        Format::Json => ExportFormat::Json,
    };
    let ext = match a.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    if config.trials == 1 {
        let r = prepared.run_trial(0)?;
        writeln!(out, "final t: {}", r.final_t)?;
        writeln!(out, "final Z: {:.6e}", r.final_z)?;
        writeln!(out, "final max error: {:.6e}", r.final_max_err)?;
        writeln!(out, "convergence time: {}", fmt_opt(r.convergence_time.map(|t| t as f64)))?;
        if let Some(t) = r.unit_stepsize_at {
            writeln!(out, "warning: stepsize reached 1 at t = {t}")?;
        }
        if let Some(dir) = &a.out {
            prepare_out(dir)?;
            export(&r, &config, format, &dir.join(format!("run.{ext}")))?;
            write_file(&dir.join("config.toml"), &config.to_toml_string())?;
        }
    } else {
        let runs = prepared.run_trials(0, config.trials as u64)?;
        let agg = aggregate(&prepared, &runs);
        let mut final_z = Moments::default();
        runs.iter().for_each(|r| final_z.push(r.final_z));
        writeln!(out, "trials: {}", agg.trials)?;
        writeln!(out, "last t: {}", runs.iter().map(|r| r.final_t).max().unwrap_or(1))?;
        writeln!(out, "mean final Z: {:.6e} ± {:.2e}", final_z.mean, final_z.std_error())?;
        let reached = agg.convergence_times.iter().filter(|c| c.is_some()).count();
        writeln!(out, "median convergence time: {}", fmt_opt(agg.median_convergence_time()))?;
        writeln!(out, "trials reaching threshold: {reached}/{}", agg.trials)?;
        if let Some(t) = runs.iter().filter_map(|r| r.unit_stepsize_at).min() {
            writeln!(out, "warning: stepsize reached 1 at t = {t}")?;
        }
        if let Some(dir) = &a.out {
            prepare_out(dir)?;
            export(&agg, &config, format, &dir.join(format!("aggregate.{ext}")))?;
            write_file(&dir.join("config.toml"), &config.to_toml_string())?;
        }
    }
    Ok(0)
}

fn aggregate(prepared: &Prepared, runs: &[crate::harness::RunResult]) -> TrialAggregate {
    TrialAggregate::from_runs(prepared, 0, runs)
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let ns: Vec<usize> = if a.ns.trim().is_empty() {
        return Err(usage("--ns is empty"));
    } else {
        parse_list(&a.ns, "ns").map_err(usage)?
    };
    let mut config = a.experiment.resolve().map_err(usage)?;
    if config.threshold.is_none() {
        config.threshold = Some(0.5);
    }
    writeln!(out, "config-digest: {}", config.digest())?;
    let rows = sweep(&config, &ns)?;
    let mut csv = String::from("n,convergence_time\n");
    for r in &rows {
        csv.push_str(&format!("{},{}\n", r.n, r.convergence_time.map_or("NA".into(), |t| t.to_string())));
    }
    out.write_all(csv.as_bytes())?;
    if let Some(dir) = &a.out {
        prepare_out(dir)?;
        write_file(
            &dir.join("sweep.csv"),
            &format!("# config-digest: {}\n{csv}", config.digest()),
        )?;
        write_file(&dir.join("config.toml"), &config.to_toml_string())?;
    }
    Ok(0)
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (g, family): (GraphSnapshot, Option<Family>) = match (&a.graph_file, a.graph) {
        (Some(p), _) => (GraphSnapshot::read(p)?, None),
        (None, fam) => {
            let fam = fam.unwrap_or(Family::Complete);
            let n = a.n.ok_or_else(|| usage("--n is required"))?;
            (generate(fam, n).map_err(|e| usage(e.to_string()))?, Some(fam))
        }
    };
    let measuring = match &a.measuring {
        Some(list) => parse_list(list, "measuring").map_err(usage)?,
        None => vec![family.map_or(0, |f| f.sampling_node(g.node_count()))],
    };
    let report = graph_report(&g, &measuring)?;
    writeln!(out, "config-digest: {}", digest_of(&(g.to_text(), &measuring)))?;
    match a.format {
        TableFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
        TableFormat::Table => {
            writeln!(out, "n                  {}", report.n)?;
            writeln!(out, "edges              {}", report.edges)?;
            writeln!(out, "diameter           {}", report.diameter)?;
            writeln!(out, "hitting_time       {}", report.max_hitting_time)?;
            writeln!(out, "kappa              {}", report.sieve_constant)?;
            writeln!(out, "kappa_unordered    {}", report.sieve_constant_unordered)?;
            writeln!(out, "kappa_lower_bound  {}", report.sieve_lower_bound)?;
            writeln!(out, "lambda_max         {}", report.lambda_max)?;
            writeln!(out, "measuring          {:?}", report.measuring)?;
        }
    }
    Ok(0)
}

impl BoundArgs {
    fn resolve(&self) -> Result<(BoundParams, Vec<f64>), Failure> {
        let mut spec = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure(format!("{}: {e}", p.display()), 1))?;
                toml::from_str::<BoundSpec>(&text).map_err(|e| usage(e.to_string()))?
            }
            None => BoundSpec::default(),
        };
        let mut base = match &self.experiment {
            Some(p) => {
                let c = ExperimentConfig::load(p).map_err(|e| usage(e.to_string()))?;
                Some(Prepared::new(&c).map_err(|e| usage(e.to_string()))?.bound_params()?)
            }
            None => None,
        };
        macro_rules! merge {
            ($($f:ident),*) => { $(if self.$f.is_some() { spec.$f = self.$f; })* };
        }
        merge!(n, l, t_gap, b_window, m, sigma, sigma_prime, epsilon, hitting_time, d_max, z1);
        if let Some(t) = &self.t {
            spec.t = parse_list(t, "t").map_err(usage)?;
        }
        let p = match base.take() {
            Some(b) => BoundParams {
                n: spec.n.unwrap_or(b.n),
                l: spec.l.unwrap_or(b.l),
                t_gap: spec.t_gap.unwrap_or(b.t_gap),
                b_window: spec.b_window.unwrap_or(b.b_window),
                m: spec.m.unwrap_or(b.m),
                sigma: spec.sigma.unwrap_or(b.sigma),
                sigma_prime: spec.sigma_prime.unwrap_or(b.sigma_prime),
                epsilon: spec.epsilon.unwrap_or(b.epsilon),
                hitting_time: spec.hitting_time.or(b.hitting_time),
                d_max: spec.d_max.or(b.d_max),
                z1: spec.z1.unwrap_or(b.z1),
            },
            None => BoundParams {
                n: spec.n.ok_or_else(|| usage("--n is required"))?,
                l: spec.l.unwrap_or(1),
                t_gap: spec.t_gap.unwrap_or(1),
                b_window: spec.b_window.unwrap_or(1),
                m: spec.m.unwrap_or(1),
                sigma: spec.sigma.unwrap_or(1.0),
                sigma_prime: spec.sigma_prime.unwrap_or(0.0),
                epsilon: spec.epsilon.ok_or_else(|| usage("--epsilon is required"))?,
                hitting_time: spec.hitting_time,
                d_max: spec.d_max,
                z1: spec.z1.unwrap_or(0.0),
            },
        };
        p.validate().map_err(|e| usage(e.to_string()))?;
        Ok((p, spec.t))
    }
}

#[derive(Debug, Serialize)]
struct BoundRow {
    t: f64,
    connected: Option<f64>,
    connected_past_transient: Option<bool>,
    general: Option<f64>,
    general_past_transient: Option<bool>,
}

fn bound(a: BoundArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let (p, ts) = a.resolve()?;
    if p.hitting_time.is_none() && p.d_max.is_none() {
        return Err(usage("need --hitting-time (connected case) or --d-max (general case)"));
    }
    let connected = p.hitting_time.map(|_| transient_connected(&p)).transpose()?;
    let general = p.d_max.map(|_| transient_general(&p)).transpose()?;
    let rows: Vec<BoundRow> = ts
        .iter()
        .map(|&t| BoundRow {
            t,
            connected: connected.and_then(|_| connected_bound_unchecked(t, &p).ok()),
            connected_past_transient: connected.map(|tr| t >= tr.value),
            general: general.and_then(|_| general_bound_unchecked(t, &p).ok()),
            general_past_transient: general.map(|tr| t >= tr.value),
        })
        .collect();
    writeln!(out, "config-digest: {}", digest_of(&(&p, &ts)))?;
    match a.format {
        TableFormat::Json => {
            let v = serde_json::json!({
                "params": p,
                "transient_connected": connected,
                "transient_general": general,
                "rows": rows,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        TableFormat::Table => {
            if let Some(tr) = connected {
                writeln!(out, "transient_connected {:.10e} (ln {:.6})", tr.value, tr.ln_value)?;
            }
            if let Some(tr) = general {
                writeln!(out, "transient_general   {:.10e} (ln {:.6})", tr.value, tr.ln_value)?;
            }
            if !rows.is_empty() {
                writeln!(out, "t,connected_bound,past_transient,general_bound,past_transient")?;
            }
            let cell = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |v| format!("{v:.10e}"));
            let flag = |x: Option<bool>| x.map_or_else(|| "NA".to_string(), |v| v.to_string());
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.t,
                    cell(r.connected),
                    flag(r.connected_past_transient),
                    cell(r.general),
                    flag(r.general_past_transient)
                )?;
            }
        }
    }
    Ok(0)
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut opts = VerifyOptions::default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { opts.$f = v; })* };
    }
    set!(max_n, seed, horizon, cases, graphs, instances, draws);
    for name in &a.check {
        if find_suite(name).is_none() {
            let known: Vec<String> = SUITES.iter().map(|(n, al, _)| format!("{n} ({al})")).collect();
            return Err(usage(format!("unknown check {name:?}; known: {}", known.join(", "))));
        }
    }
    writeln!(out, "config-digest: {}", digest_of(&(&opts, &a.check)))?;
    let reports: Vec<CheckReport> = if a.check.is_empty() {
        run_all(&opts)
    } else {
        a.check.iter().map(|n| find_suite(n).expect("checked above")(&opts)).collect()
    };
    match a.format {
        TableFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&reports)?)?,
        TableFormat::Table => {
            for r in &reports {
                writeln!(out, "{r}")?;
            }
        }
    }
    Ok(if reports.iter().all(CheckReport::passed) { 0 } else { 1 })
}
