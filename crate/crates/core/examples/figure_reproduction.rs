//! Median time until every agent is within 1/2 of μ, on the complete graph,
//! the star and the line with the same number of agents. The line is an
//! order of magnitude slower.
//!
//! `cargo run --release --example figure_reproduction -- 40 20`

use coop_learn::graph::Family;
use coop_learn::harness::{monte_carlo, ExperimentConfig, GraphKind, InitKind, MeasurementMode};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(40);
    let trials = args.next().unwrap_or(20);

    let mut config = ExperimentConfig::default();
    config.graph.kind = GraphKind::Family;
    config.graph.n = Some(n);
    config.measurement.mode = MeasurementMode::Sampling;
    config.noise.sigma = 1.0;
    config.noise.sigma_prime = 0.0;
    config.stepsize.epsilon = 0.75;
    config.init.kind = InitKind::Box;
    (config.init.lo, config.init.hi) = (0.0, 5.0);
    config.threshold = Some(0.5);
    config.stop_at_threshold = true;
    config.horizon = 20_000_000;
    config.trials = trials;
    config.seed = 1;

    for family in [Family::Complete, Family::Star, Family::Line] {
        config.graph.family = family;
        let agg = monte_carlo(&config).unwrap();
        let median = agg.median_convergence_time();
        println!("{:<9} median convergence time {}", family.name(), median.map_or("not reached".into(), |m| m.to_string()));
    }
}
