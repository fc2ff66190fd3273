//! Differentiates a tiny model's next-token loss with the tape and checks
//! one weight's gradient against a finite difference.
//!
//! `cargo run --example autograd`

use cuelm::model::{forward_taped, ModelConfig, ModelState, Trainable};
use cuelm::numerics::Tape;

fn loss(state: &ModelState<f64>, ids: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let out = forward_taped(state, &mut tape, &ids[..ids.len() - 1], None).expect("forward");
    let l = tape.cross_entropy(out.logits, &ids[1..]).expect("loss");
    tape.value(l).data()[0]
}

pub fn run_example() -> (f64, f64) {
    let config = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        context_len: 16,
        ..ModelConfig::desk(32)
    };
    let state = ModelState::<f64>::init(config, 2).expect("config");
    let ids = [1, 4, 9, 16, 25, 3];
    let mut tape = Tape::new();
    let out = forward_taped(&state, &mut tape, &ids[..5], Some(Trainable::Full)).expect("forward");
    let l = tape.cross_entropy(out.logits, &ids[1..]).expect("loss");
    let grads = tape.backward(l).expect("backward");
    let (key, var) = out.params.iter().find(|(k, _)| k == "layers.0.wv").expect("wv is tracked");
    let analytic = grads.get(*var).expect("gradient").data()[3];
    let h = 1e-5;
    let mut plus = state.clone();
    plus.tensor_mut(key).expect("dense").data_mut()[3] += h;
    let mut minus = state.clone();
    minus.tensor_mut(key).expect("dense").data_mut()[3] -= h;
    let numeric = (loss(&plus, &ids) - loss(&minus, &ids)) / (2.0 * h);
    println!("loss {:.6}; d/d{key}[3]: analytic {analytic:.9}, numeric {numeric:.9}", tape.value(l).data()[0]);
    println!("{} parameter tensors tracked", out.params.len());
    (analytic, numeric)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
