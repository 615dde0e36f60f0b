//! Experiment configs as TOML: defaults, resolution and the digest that tags
//! every exported file.

use coop_learn::harness::ExperimentConfig;

fn main() {
    let minimal = ExperimentConfig::from_toml_str("[graph]\nfamily = \"line\"\nn = 8\n").unwrap();
    println!("# fully resolved\n{}", minimal.resolved().to_toml_string());
    println!("digest {}", minimal.digest());

    // unknown keys are rejected rather than ignored
    let err = ExperimentConfig::from_toml_str("horizn = 10\n").unwrap_err();
    println!("typo rejected: {err}");

    // defaults spelled out explicitly give the same digest
    let spelled = ExperimentConfig::from_toml_str(&minimal.resolved().to_toml_string()).unwrap();
    assert_eq!(spelled.digest(), minimal.digest());
}
