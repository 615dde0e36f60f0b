//! The scalar recursion behind the convergence proofs, iterated directly and
//! compared with its closed-form bound once past the threshold.

use coop_learn::bounds::{decay_bound, decay_recursion, decay_threshold, phi, phi_upper, ThresholdVariant};

fn main() {
    let (q, d, eps, gap, a1) = (1.0, 1.0, 0.9, 2u64, 10.0);
    let times: Vec<u64> = (0..400_000u64).map(|k| 1 + gap * k).collect();
    let a = decay_recursion(a1, q, d, eps, &times, gap).unwrap();
    let start = decay_threshold(q, eps, gap, ThresholdVariant::Proof);
    println!("threshold on k: {start:.0}");
    for k in [1_000usize, 10_000, 100_000, 400_000] {
        let bound = decay_bound(k as u64, a1, q, d, eps, gap);
        let note = if (k as f64) < start { " (before threshold)" } else { "" };
        println!("k {k:>7}  a(t_k) {:.5e}  bound {bound:.5e}{note}", a[k - 1]);
    }
    println!("product over [2, 1000): {:.6e} <= {:.6e}", phi(0.5, 2, 1000, 0.5).unwrap(), phi_upper(0.5, 2.0, 1000.0, 0.5));
}
