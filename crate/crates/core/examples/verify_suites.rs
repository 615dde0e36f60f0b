//! A reduced pass over every verification suite, at sizes that run in a few
//! seconds. `coop-learn verify` runs them at full scale.

use coop_learn::checks::{run_all, VerifyOptions};

fn main() {
    let opts = VerifyOptions {
        max_n: 5,
        horizon: 20_000,
        cases: 200,
        graphs: 30,
        instances: 10,
        draws: 20_000,
        ..VerifyOptions::default()
    };
    let reports = run_all(&opts);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} suites, {failed} failed", reports.len());
}
