//! Shows the top-k distribution behind one sampling step and runs a short
//! chat session against an untrained model.
//!
//! `cargo run --example sample_reply`

use cuelm::generate::{generate_reply, top_k_distribution, ChatSession, SamplerConfig};
use cuelm::model::{InferenceModel, ModelConfig, ModelState};
use cuelm::tokenizer::Vocabulary;

pub fn run_example() -> ChatSession {
    let logits = [2.0, 1.0, 0.5, 3.0, -1.0, 0.0];
    for temperature in [0.1, 0.7, 1.5] {
        let dist = top_k_distribution(&logits, 3, temperature, None);
        let shown: Vec<String> = dist.iter().map(|(id, p)| format!("{id}:{p:.3}")).collect();
        println!("k=3 T={temperature}: {}", shown.join(" "));
    }

    let vocab = Vocabulary::bytes_only();
    let config = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 128,
        ..ModelConfig::desk(vocab.len())
    };
    let model = InferenceModel::new(&ModelState::<f32>::init(config, 0).expect("config")).expect("model");
    let sampler = SamplerConfig {
        max_new_tokens: 12,
        seed: 5,
        ..SamplerConfig::default()
    };
    let mut session = ChatSession::new("example", sampler);
    for line in ["Guten Abend.", "Wer da?"] {
        let reply = generate_reply(&model, &vocab, &mut session, line).expect("reply");
        println!("USER: {line}\nAGENT: {reply:?}");
    }
    session
}

#[allow(dead_code)]
fn main() {
    run_example();
}
