//! Cue-level dialogue agents trained on play scripts.
//!
//! The pipeline runs from plain-text scripts to a chat service: [`corpus`]
//! turns scripts into USER/AGENT samples, [`tokenizer`] renders them as token
//! sequences, [`model`] is a small causal transformer built on the autograd in
//! [`numerics`], [`qlora`] provides NF4 base quantization with low-rank
//! adapters, [`train`] runs the two-stage schedule, [`generate`] samples
//! replies, [`eval`] measures perplexity and BLEU, and [`serve`] exposes the
//! CLI and HTTP API.

pub mod checkpoint;
pub mod corpus;
pub mod eval;
pub mod generate;
pub mod model;
pub mod numerics;
pub mod qlora;
pub mod serve;
pub mod tokenizer;
pub mod train;
