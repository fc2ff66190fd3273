//! Trains a small model on one synthetic play style, then adapts it to a
//! second style with adapters over a quantized base, and reports perplexity
//! and BLEU on the second style's validation split after each stage.
//!
//! `cargo run --release --example two_stage -- [seed]`

use std::time::Instant;

use cuelm::corpus::synthetic::{generate_corpus, Style};
use cuelm::corpus::{samples_from_plays, split, DialogueSample, SplitSpec};
use cuelm::eval::{self, BleuSchedule};
use cuelm::model::{InferenceModel, ModelConfig, ModelState, Trainable};
use cuelm::tokenizer::build_vocab;
use cuelm::train::{run_stages, sample_text, AdapterConfig, Dataset, PreparedStage, TrainConfig};

pub struct Settings {
    pub plays_a: usize,
    pub plays_b: usize,
    pub epochs_a: usize,
    pub epochs_b: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            plays_a: 30,
            plays_b: 30,
            epochs_a: 10,
            epochs_b: 60,
        }
    }
}

pub struct Summary {
    pub stage1_ppl: f64,
    pub stage2_ppl: f64,
    pub stage1_bleu: f64,
    pub stage2_bleu: f64,
}

fn style_samples(style: Style, plays: usize, seed: u64) -> Vec<DialogueSample> {
    let docs = generate_corpus(style, plays, 6, seed);
    samples_from_plays(docs.iter().map(|(i, d)| (i.as_str(), d.as_str())), 3).expect("generated plays parse")
}

pub fn run_example(settings: &Settings, seed: u64, verbose: bool) -> Summary {
    let a = style_samples(Style::Household, settings.plays_a, seed);
    let b = style_samples(Style::Marketplace, settings.plays_b, seed.wrapping_add(1000));
    let (a_train, a_val) = split(&a, SplitSpec { train_fraction: 0.8, seed }).expect("non-empty");
    let (b_train, b_val) = split(&b, SplitSpec { train_fraction: 0.9, seed }).expect("non-empty");
    let vocab = build_vocab(&sample_text(&a_train), 325).expect("vocab");
    let config = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 128,
        context_len: 128,
        ..ModelConfig::desk(vocab.len())
    };
    let stage = |train: &[DialogueSample], val: &[DialogueSample], lr, epochs, trainable| PreparedStage {
        data: Dataset::from_split(&vocab, train, val, config.context_len),
        config: TrainConfig {
            learning_rate: lr,
            epochs,
            seed,
            ..TrainConfig::default()
        },
        trainable,
        adapters: AdapterConfig {
            seed,
            targets: ["wq", "wk", "wv", "wo", "w1", "w2", "lm_head"].map(String::from).to_vec(),
            ..AdapterConfig::default()
        },
    };
    let stages = [
        stage(&a_train, &a_val, 3e-3, settings.epochs_a, Trainable::Full),
        stage(&b_train, &b_val, 1e-2, settings.epochs_b, Trainable::AdaptersOnly),
    ];
    let t = Instant::now();
    let initial = ModelState::<f32>::init(config.clone(), seed).expect("valid config");
    let outcomes = run_stages(initial, &stages).expect("training runs");
    if verbose {
        println!(
            "samples: style A {} train / {} val, style B {} train / {} val; vocabulary {}",
            a_train.len(),
            a_val.len(),
            b_train.len(),
            b_val.len(),
            vocab.len()
        );
        for r in outcomes.iter().flat_map(|o| &o.history) {
            println!("stage {} epoch {:>2}  train loss {:.4}  val ppl {:.3}", r.stage, r.epoch, r.train_loss, r.val_ppl);
        }
        println!("training took {:.1?}", t.elapsed());
    }
    let schedule = BleuSchedule::default();
    let score = |state: &ModelState<f32>| {
        let ppl = eval::perplexity(state, &vocab, "style-b", &b_val, config.context_len).expect("ppl").perplexity;
        let model = InferenceModel::new(state).expect("model");
        let bleu = eval::run_bleu_schedule(&model, &vocab, &b_val, &schedule, seed).expect("bleu").grand_mean;
        (ppl, bleu)
    };
    let (stage1_ppl, stage1_bleu) = score(&outcomes[0].state);
    let (stage2_ppl, stage2_bleu) = score(&outcomes[1].state);
    if verbose {
        println!("stage 1 model on style B: ppl {stage1_ppl:.3}, BLEU {stage1_bleu:.4}");
        println!("stage 2 model on style B: ppl {stage2_ppl:.3}, BLEU {stage2_bleu:.4}");
    }
    Summary {
        stage1_ppl,
        stage2_ppl,
        stage1_bleu,
        stage2_bleu,
    }
}

#[allow(dead_code)]
fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    run_example(&Settings::default(), seed, true);
}
