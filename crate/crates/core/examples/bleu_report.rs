//! Scores candidate lines against references and compares two BLEU
//! schedule reports side by side.
//!
//! `cargo run --example bleu_report`

use cuelm::eval::{bleu, compare_models, BleuConfig, BleuReport};

pub fn run_example() -> String {
    let pairs = [
        ("der hut kostet nichts, so ist der krieg.", "der hut kostet nichts, so ist der krieg."),
        ("der hut kostet zwei groschen.", "der hut kostet nichts, so ist der krieg."),
        ("der hut liegt im keller.", "der hut kostet nichts, so ist der krieg."),
    ];
    for (c, r) in pairs {
        println!("{:.4}  {c}", bleu(c, r, &BleuConfig::default()));
    }
    let report = |means: [f64; 4]| {
        BleuReport::from_trials([100, 300, 500, 1000].iter().zip(means).map(|(&n, m)| (n, n, vec![m; 3])).collect())
    };
    let base = report([0.25, 0.27, 0.26, 0.26]);
    let tuned = report([0.66, 0.67, 0.665, 0.665]);
    let table = compare_models("general", &base, "tuned", &tuned).expect("same schedule").to_string();
    println!("{table}");
    table
}

#[allow(dead_code)]
fn main() {
    run_example();
}
