//! Monte Carlo over a lollipop graph, exported as CSV and JSON, then read back.

use coop_learn::harness::{export, monte_carlo, read_run_csv, run, ExperimentConfig, ExportFormat};

fn main() {
    let mut config = ExperimentConfig::from_toml_str(
        r#"
        horizon = 5000
        stride = 500
        trials = 50
        seed = 99
        [graph]
        family = "lollipop"
        n = 10
        [noise]
        sigma = 0.5
        sigma_prime = 0.2
        distribution = "uniform"
        "#,
    )
    .unwrap();
    let dir = std::env::temp_dir().join("coop-learn-monte-carlo");
    std::fs::create_dir_all(&dir).unwrap();

    let agg = monte_carlo(&config).unwrap();
    export(&agg, &config, ExportFormat::Csv, &dir.join("aggregate.csv")).unwrap();
    export(&agg, &config, ExportFormat::Json, &dir.join("aggregate.json")).unwrap();
    for row in &agg.rows {
        println!("t {:>5}  E[Z] {:>10.4e} ± {:.1e}", row.t, row.z.mean, row.z.std_error());
    }

    config.trials = 1;
    let single = run(&config).unwrap();
    let path = dir.join("run.csv");
    export(&single, &config, ExportFormat::Csv, &path).unwrap();
    let back = read_run_csv(&path).unwrap();
    assert_eq!(back, single.trajectory);
    println!("wrote {} (round trip exact)", dir.display());
}
