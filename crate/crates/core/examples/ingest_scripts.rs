//! Writes a few generated play scripts to a directory, ingests them into
//! USER/AGENT samples, and splits them 80/20.
//!
//! `cargo run --example ingest_scripts`

use cuelm::corpus::synthetic::{generate_corpus, Style};
use cuelm::corpus::{ingest_dir, read_samples, split, write_samples, SplitSpec, DEFAULT_MAX_CONTEXT_TURNS};

pub fn run_example(dir: &std::path::Path) -> (usize, usize, usize) {
    for (id, doc) in generate_corpus(Style::Household, 4, 6, 7) {
        std::fs::write(dir.join(format!("{id}.txt")), doc).expect("write script");
    }
    let (samples, plays) = ingest_dir(dir, DEFAULT_MAX_CONTEXT_TURNS).expect("ingest");
    let out = dir.join("samples.jsonl");
    write_samples(&out, &samples).expect("write samples");
    assert_eq!(read_samples(&out).expect("read samples"), samples);
    let (train, val) = split(&samples, SplitSpec { train_fraction: 0.8, seed: 0 }).expect("split");
    let s = &samples[samples.len() - 1];
    println!("{plays} plays -> {} samples ({} train / {} validation)", samples.len(), train.len(), val.len());
    for t in &s.context {
        println!("  {:?}: {}", t.role, t.text);
    }
    println!("  target: {}", s.target);
    (plays, train.len(), val.len())
}

#[allow(dead_code)]
fn main() {
    let dir = std::env::temp_dir().join("cuelm-ingest-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    run_example(&dir);
}
