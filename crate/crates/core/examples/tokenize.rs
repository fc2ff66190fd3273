//! Learns a byte-pair vocabulary from a little text and renders a dialogue
//! sample as the token sequence the model trains on.
//!
//! `cargo run --example tokenize`

use cuelm::corpus::{DialogueSample, Turn};
use cuelm::tokenizer::{build_vocab, Vocabulary};

pub fn run_example() -> Vocabulary {
    let text = "wo ist der hut? der hut liegt im keller.\nhast du den korb gesehen? ja, den korb habe ich gesehen.\n".repeat(5);
    let vocab = build_vocab(&text, 300).expect("vocab");
    let sample = DialogueSample {
        context: vec![Turn::user("wo ist der korb?")],
        target: "der korb liegt im keller.".into(),
        source_play: "example".into(),
    };
    let ids = vocab.render_prompt(&sample, true).into_ids();
    let pieces: Vec<String> = ids.iter().map(|&i| vocab.id_to_token(i).unwrap_or_default()).collect();
    println!("{} merges learned, vocabulary of {}", vocab.merge_count(), vocab.len());
    println!("{} tokens: {}", ids.len(), pieces.join("|"));
    let round = vocab.decode_text(&vocab.encode(&sample.target).into_ids()).expect("decode");
    assert_eq!(round, sample.target);
    vocab
}

#[allow(dead_code)]
fn main() {
    run_example();
}
