//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the lines print in order and are
//! never swallowed by output capture.

use std::process::ExitCode;
use std::time::Instant;

use coop_learn::analysis::hitting_times;
use coop_learn::bounds::{connected_bound, transient_connected};
use coop_learn::checks::{run_suite, CheckReport, VerifyOptions};
use coop_learn::graph::{generate, Family};
use coop_learn::harness::{monte_carlo, ExperimentConfig, Prepared};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn suites(names: &[&str], opts: &VerifyOptions) -> Outcome {
    let reports: Vec<CheckReport> = names.iter().map(|n| run_suite(n, opts).expect("known suite")).collect();
    let pass = reports.iter().all(CheckReport::passed);
    let detail = reports
        .iter()
        .map(|r| format!("{} {}/{}", r.name, r.violations, r.points))
        .collect::<Vec<_>>()
        .join(", ");
    for r in &reports {
        for n in &r.notes {
            println!("    {}: {n}", r.name);
        }
        if let Some(c) = &r.first_counterexample {
            println!("    {}: first counterexample {c}", r.name);
        }
    }
    outcome(pass, format!("violations/points: {detail}"))
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).expect("acceptance config parses")
}

/// Line vs complete vs star, n = 40, median time to max error < 1/2.
fn figure_ratios() -> Outcome {
    let median = |family: &str| {
        let c = config(&format!(
            r#"
            horizon = 5000000
            threshold = 0.5
            stop_at_threshold = true
            seed = 11
            trials = 20
            [graph]
            family = "{family}"
            n = 40
            [measurement]
            mode = "sampling"
            [noise]
            sigma = 1.0
            sigma_prime = 0.0
            [stepsize]
            epsilon = 0.75
            offset = 0.0
            [init]
            kind = "box"
            lo = 0.0
            hi = 5.0
            "#
        ));
        monte_carlo(&c).expect("run").median_convergence_time()
    };
    let (Some(complete), Some(star), Some(line)) = (median("complete"), median("star"), median("line")) else {
        return outcome(false, "a median convergence time was not reached within the horizon");
    };
    let pass = line >= 10.0 * complete && line >= 10.0 * star && complete / star <= 3.0 && star / complete <= 3.0;
    outcome(
        pass,
        format!(
            "medians complete {complete}, star {star}, line {line}; line/complete {:.1}, line/star {:.1}, complete/star {:.2}",
            line / complete,
            line / star,
            complete / star
        ),
    )
}

/// Simulated mean variance on K3 against the connected-case bound.
fn connected_bound_k3() -> Outcome {
    let stride = 1000u64;
    let mut c = config(
        r#"
        seed = 5
        trials = 200
        [graph]
        family = "complete"
        n = 3
        [measurement]
        mode = "nodes"
        nodes = [0]
        period = 1
        [noise]
        sigma = 1.0
        sigma_prime = 0.0
        [stepsize]
        epsilon = 0.9
        offset = 0.0
        [init]
        kind = "box"
        lo = 0.0
        hi = 5.0
        shared = true
        "#,
    );
    let params = Prepared::new(&c).and_then(|p| p.bound_params()).expect("bound params");
    let transient = transient_connected(&params).expect("transient").value;
    // sampled points sit at t ≡ 1 (mod stride)
    let ts: Vec<u64> = [1.0, 1.5, 2.0, 3.0, 4.0]
        .iter()
        .map(|m| 1 + stride * ((m * transient - 1.0) / stride as f64).ceil() as u64)
        .collect();
    c.horizon = *ts.last().unwrap();
    c.stride = Some(stride);
    let agg = monte_carlo(&c).expect("run");
    let mut pass = true;
    let mut parts = vec![format!("H {} Z1 {:.3} transient {transient:.0}", params.hitting_time.unwrap(), params.z1)];
    for &t in &ts {
        let row = agg.row_at(t).expect("sampled row");
        let bound = connected_bound(t as f64, &params).expect("past transient");
        let ok = row.z.mean <= bound + 3.0 * row.z.std_error();
        pass &= ok && row.trials() == 200;
        parts.push(format!("t {t}: {:.3e} ± {:.1e} vs {bound:.4}", row.z.mean, row.z.std_error()));
    }
    outcome(pass, parts.join("; "))
}

/// Random 3-connected sequence with gapped round-robin measurements.
fn long_run_decay() -> Outcome {
    let c = config(
        r#"
        horizon = 1000000
        stride = 1
        seed = 8
        [graph]
        kind = "random-sequence"
        n = 10
        window = 3
        [measurement]
        mode = "round-robin"
        period = 4
        [noise]
        sigma = 0.5
        sigma_prime = 0.5
        [stepsize]
        epsilon = 0.5
        offset = 1.0
        [init]
        kind = "box"
        lo = 0.0
        hi = 5.0
        "#,
    );
    let r = coop_learn::run(&c).expect("run");
    let z1 = r.trajectory[0].z;
    let tail = r.trajectory.iter().filter(|p| p.t > 900_000).map(|p| p.z).fold(0.0, f64::max);
    let pass = r.final_t == 1_000_000 && r.final_z < 0.1 * z1 && tail < 0.1 * z1;
    outcome(pass, format!("Z(1) {z1:.4}, Z(1e6) {:.3e}, tail max {tail:.3e}", r.final_z))
}

fn hitting_time_scaling() -> Outcome {
    let h = |f: Family, n: usize| hitting_times(&generate(f, n).unwrap()).unwrap().max_value;
    let ratios: Vec<f64> = [8usize, 16, 32, 64]
        .iter()
        .map(|&n| h(Family::Line, n) / (n * n) as f64)
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let k2 = h(Family::Complete, 2);
    let l3 = h(Family::Line, 3);
    let pass = hi / lo < 3.0 && (k2 - 4.0).abs() <= 1e-9 && (l3 - 24.0).abs() <= 1e-9;
    outcome(
        pass,
        format!("H/n^2 {ratios:.3?} (bracket ratio {:.3}); H(K2) {k2}, H(L3) {l3}", hi / lo),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let criteria: Vec<Criterion> = vec![
        ("1 figure ratios (n = 40)", Box::new(figure_ratios)),
        (
            "2 eigenvalue gap, all graphs n <= 6",
            Box::new(|| suites(&["eigenvalue-gap"], &VerifyOptions { max_n: 6, ..VerifyOptions::default() })),
        ),
        (
            "3 one-step decrease, 50 instances x 1e5 draws",
            Box::new(|| {
                suites(
                    &["one-step-decrease"],
                    &VerifyOptions { instances: 50, draws: 100_000, ..VerifyOptions::default() },
                )
            }),
        ),
        ("4 connected bound on K3, 200 trials", Box::new(connected_bound_k3)),
        (
            "5 decay machinery grids to 1e6",
            Box::new(|| {
                suites(
                    &["phi-product", "log-threshold", "power-concavity", "phi-small", "half-gap", "unit-decay", "gapped-decay"],
                    &VerifyOptions { horizon: 1_000_000, ..VerifyOptions::default() },
                )
            }),
        ),
        ("6 step vs matrix form, 1e3 cases", Box::new(|| suites(&["equivalence"], &opts))),
        (
            "7 norm identity and sieve lower bound",
            Box::new(|| suites(&["norm-identity", "sieve-lower-bound"], &opts)),
        ),
        ("8 long-run decay, random sequence", Box::new(long_run_decay)),
        ("9 hitting-time scaling", Box::new(hitting_time_scaling)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let start = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {name} [{:.1}s]: {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
