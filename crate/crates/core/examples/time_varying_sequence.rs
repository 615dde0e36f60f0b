//! Learning over a random B-connected sequence: no single snapshot is
//! connected, yet Z still goes to zero. Measurements rotate through the
//! agents every fourth step.

use coop_learn::graph::{verify_b_connectivity, GraphSequence, RandomSequence};
use coop_learn::harness::{run, ExperimentConfig};

fn main() {
    let seq = RandomSequence::new(10, 3, 18, 8).unwrap();
    let connected_snapshots = (1..=300).filter(|&t| seq.snapshot(t).is_connected()).count();
    println!("3-connected over 3000 steps: {}", verify_b_connectivity(&seq, 3, 3000));
    println!("connected snapshots among the first 300: {connected_snapshots}");

    let config = ExperimentConfig::from_toml_str(
        r#"
        horizon = 200000
        stride = 20000
        seed = 8
        [graph]
        kind = "random-sequence"
        n = 10
        window = 3
        edge_budget = 18
        [measurement]
        mode = "round-robin"
        period = 4
        [noise]
        sigma = 0.5
        sigma_prime = 0.5
        [stepsize]
        epsilon = 0.5
        offset = 1.0
        "#,
    )
    .unwrap();
    for p in &run(&config).unwrap().trajectory {
        println!("t {:>6}  Z {:.5e}", p.t, p.z);
    }
}
