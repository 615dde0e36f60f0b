//! One noisy run on a star, printing the variance and the worst agent error
//! at a few checkpoints.

use coop_learn::harness::{run, ExperimentConfig};

fn main() {
    let config = ExperimentConfig::from_toml_str(
        r#"
        horizon = 20000
        stride = 2000
        seed = 3
        threshold = 0.1
        [graph]
        family = "star"
        n = 12
        [measurement]
        mode = "sampling"
        [target]
        values = [1.0, -2.0]
        "#,
    )
    .unwrap();
    let r = run(&config).unwrap();
    println!("digest {}", r.digest);
    for p in &r.trajectory {
        println!("t {:>6}  Z {:>12.5e}  max error {:>10.5}", p.t, p.z, p.max_err);
    }
    match r.convergence_time {
        Some(t) => println!("max error first below 0.1 at t = {t}"),
        None => println!("max error never dropped below 0.1"),
    }
}
