//! Hitting times of the lazy Metropolis walk grow like n² on the line and
//! stay linear on the complete graph.

use coop_learn::analysis::hitting_times;
use coop_learn::graph::{generate, Family};

fn main() {
    println!("{:>4} {:>14} {:>10} {:>14} {:>10}", "n", "H(line)", "/n^2", "H(complete)", "/n");
    for n in [4usize, 8, 16, 32, 64, 128] {
        let line = hitting_times(&generate(Family::Line, n).unwrap()).unwrap().max_value;
        let complete = hitting_times(&generate(Family::Complete, n).unwrap()).unwrap().max_value;
        println!(
            "{n:>4} {line:>14.1} {:>10.4} {complete:>14.1} {:>10.4}",
            line / (n * n) as f64,
            complete / n as f64
        );
    }
}
