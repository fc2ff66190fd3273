//! Saves a quantized model with adapters to a checkpoint file, loads it
//! back, and checks that the logits are unchanged.
//!
//! `cargo run --example checkpoint_round_trip`

use cuelm::checkpoint::Checkpoint;
use cuelm::model::{forward, names, ModelConfig, ModelState};
use cuelm::tokenizer::Vocabulary;

pub fn run_example(path: &std::path::Path) -> f64 {
    let vocab = Vocabulary::bytes_only();
    let config = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        context_len: 64,
        ..ModelConfig::desk(vocab.len())
    };
    let mut state = ModelState::<f32>::init(config, 3).expect("config");
    state.quantize_base(64).expect("quantize");
    state.attach_adapters(&names::ATTENTION_PROJECTIONS, 4, 8.0, 1).expect("adapters");
    let ids = vocab.encode("was kostet der hut?").into_ids();
    let before = forward(&state, &ids).expect("forward");
    Checkpoint::new(state, vocab, Vec::new()).save(path).expect("save");
    let loaded = Checkpoint::<f32>::load(path).expect("load");
    let diff = before.max_abs_diff(&forward(&loaded.state, &ids).expect("forward"));
    let size = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    println!(
        "{} bytes on disk, {} base + {} adapter parameters, max logit change {diff}",
        size,
        loaded.state.parameter_count(),
        loaded.state.adapter_parameter_count()
    );
    diff
}

#[allow(dead_code)]
fn main() {
    run_example(&std::env::temp_dir().join("cuelm-example.ckpt"));
}
