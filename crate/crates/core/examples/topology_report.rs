//! Headline constants of every built-in topology at a fixed size.
//!
//! `cargo run --example topology_report -- 16`

use coop_learn::analysis::graph_report;
use coop_learn::graph::{generate, Family};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(16);
    println!("{:<10} {:>6} {:>4} {:>12} {:>10} {:>10}", "family", "edges", "D", "H", "kappa", "lambda_max");
    for f in Family::ALL {
        let Ok(g) = generate(f, n) else {
            println!("{f:<10} (no {f} graph on {n} nodes)");
            continue;
        };
        let r = graph_report(&g, &[f.sampling_node(n)]).expect("built-in families are connected");
        println!(
            "{:<10} {:>6} {:>4} {:>12.2} {:>10.5} {:>10.6}",
            f.name(),
            r.edges,
            r.diameter,
            r.max_hitting_time,
            r.sieve_constant,
            r.lambda_max
        );
    }
}
