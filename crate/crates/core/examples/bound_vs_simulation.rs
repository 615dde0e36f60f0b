//! Simulated E[Z(t)] on the triangle against the connected-case bound past
//! its transient. The bound holds with a wide margin.

use coop_learn::bounds::{connected_bound, transient_connected};
use coop_learn::harness::{monte_carlo, ExperimentConfig, Prepared};

fn main() {
    let mut config = ExperimentConfig::from_toml_str(
        r#"
        trials = 40
        seed = 5
        [graph]
        family = "complete"
        n = 3
        [stepsize]
        epsilon = 0.9
        [init]
        kind = "box"
        shared = true
        "#,
    )
    .unwrap();
    let params = Prepared::new(&config).unwrap().bound_params().unwrap();
    let transient = transient_connected(&params).unwrap().value;
    let stride = 1000;
    let t = 1 + stride * (transient / stride as f64).ceil() as u64;
    config.horizon = t;
    config.stride = Some(stride);

    let agg = monte_carlo(&config).unwrap();
    let row = agg.row_at(t).unwrap();
    println!("H = {}, Z(1) = {:.3}, transient = {transient:.0}", params.hitting_time.unwrap(), params.z1);
    println!("t = {t}: simulated {:.4e} ± {:.1e}, bound {:.4}", row.z.mean, row.z.std_error(), connected_bound(t as f64, &params).unwrap());
}
