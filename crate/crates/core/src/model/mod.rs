//! Decoder-only causal transformer.
//!
//! Pre-norm residual blocks (RMS norm → multi-head causal attention → RMS
//! norm → SiLU feed-forward), optional rotary position encoding with linear
//! position scaling, and an untied output head. Every linear weight is stored
//! `[out×in]` and applied as `x·Wᵀ`.

mod forward;
mod inference;

pub use forward::{forward, forward_taped, TapedForward};
pub use inference::{InferenceModel, KvCache};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Element, NumericsError, Tensor};
use crate::qlora::{self, LoraAdapter, QloraError, QuantizedTensor};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the context length {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptyInput,
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("no weight named {0}")]
    UnknownWeight(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Qlora(#[from] QloraError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    #[serde(default = "default_true")]
    pub use_rope: bool,
    #[serde(default = "default_rope_scale")]
    pub rope_scale: f64,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn default_true() -> bool {
    true
}
fn default_rope_scale() -> f64 {
    1.0
}
fn default_rope_base() -> f64 {
    10_000.0
}
fn default_norm_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 128, context 256.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            vocab_size,
            context_len: 256,
            use_rope: true,
            rope_scale: 1.0,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return bad("dimensions must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.use_rope && self.head_dim() % 2 != 0 {
            return bad("rotary encoding needs an even head dimension");
        }
        if self.context_len < 2 {
            return bad("context_len must be at least 2");
        }
        if !(self.rope_scale >= 1.0) {
            return bad("rope_scale must be at least 1");
        }
        Ok(())
    }

    /// Names of the weights of layer `l`, in a fixed order.
    pub fn layer_weight_names(l: usize) -> [String; 8] {
        ["attn_norm", "wq", "wk", "wv", "wo", "ff_norm", "w1", "w2"].map(|w| format!("layers.{l}.{w}"))
    }

    /// Expected shape of every named weight.
    pub fn weight_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let mut out = BTreeMap::new();
        out.insert(names::TOK_EMBEDDING.to_string(), vec![v, d]);
        out.insert(names::FINAL_NORM.to_string(), vec![d]);
        out.insert(names::LM_HEAD.to_string(), vec![v, d]);
        for l in 0..self.n_layers {
            let [an, q, k, vv, o, fnorm, w1, w2] = Self::layer_weight_names(l);
            out.insert(an, vec![d]);
            out.insert(q, vec![d, d]);
            out.insert(k, vec![d, d]);
            out.insert(vv, vec![d, d]);
            out.insert(o, vec![d, d]);
            out.insert(fnorm, vec![d]);
            out.insert(w1, vec![f, d]);
            out.insert(w2, vec![d, f]);
        }
        out
    }
}

pub mod names {
    pub const TOK_EMBEDDING: &str = "tok_embedding";
    pub const FINAL_NORM: &str = "final_norm";
    pub const LM_HEAD: &str = "lm_head";

    /// Attention projections of every layer, the default adapter targets.
    pub const ATTENTION_PROJECTIONS: [&str; 4] = ["wq", "wk", "wv", "wo"];

    pub fn is_norm(name: &str) -> bool {
        name.ends_with("norm")
    }

    pub fn lora_a(target: &str) -> String {
        format!("{target}.lora_a")
    }

    pub fn lora_b(target: &str) -> String {
        format!("{target}.lora_b")
    }
}

/// Dense named weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Parameters<T> {
    pub fn new(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Deterministic initialization: weight matrices ~ N(0, 0.02²), norm gains 1.
pub fn init_params<T: Element>(config: &ModelConfig, seed: u64) -> Result<Parameters<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let tensors = config
        .weight_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let t = if names::is_norm(&name) {
                Tensor::ones(&shape)
            } else {
                Tensor::from_fn(&shape, |_| T::from_f64(normal.sample(&mut rng)))
            };
            (name, t)
        })
        .collect();
    Ok(Parameters::new(tensors))
}

/// A base weight, either dense or NF4-quantized.
#[derive(Clone, Debug, PartialEq)]
pub enum Weight<T> {
    Dense(Tensor<T>),
    Quantized(QuantizedTensor),
}

impl<T: Element> Weight<T> {
    pub fn shape(&self) -> &[usize] {
        match self {
            Weight::Dense(t) => t.shape(),
            Weight::Quantized(q) => q.shape(),
        }
    }

    pub fn to_dense(&self) -> Tensor<T> {
        match self {
            Weight::Dense(t) => t.clone(),
            Weight::Quantized(q) => qlora::dequantize(q),
        }
    }
}

/// Which parameters a training step may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trainable {
    /// Every dense weight plus any attached adapters.
    Full,
    /// Adapter factors only; the base stays frozen.
    AdaptersOnly,
}

/// Base weights plus any low-rank adapters attached to them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub weights: BTreeMap<String, Weight<T>>,
    pub adapters: BTreeMap<String, LoraAdapter<T>>,
}

impl<T: Element> ModelState<T> {
    pub fn from_params(config: ModelConfig, params: Parameters<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = config.weight_shapes();
        let tensors = params.into_inner();
        for (name, shape) in &shapes {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::Config(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::UnknownWeight(name.clone())),
            }
        }
        let weights = tensors.into_iter().map(|(k, v)| (k, Weight::Dense(v))).collect();
        Ok(Self {
            config,
            weights,
            adapters: BTreeMap::new(),
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn weight(&self, name: &str) -> Result<&Weight<T>, ModelError> {
        self.weights.get(name).ok_or_else(|| ModelError::UnknownWeight(name.to_string()))
    }

    pub fn is_quantized(&self) -> bool {
        self.weights.values().any(|w| matches!(w, Weight::Quantized(_)))
    }

    /// Replaces every transformer-block weight matrix with its NF4 form. The
    /// token embedding, the output head and the norm gains stay dense.
    pub fn quantize_base(&mut self, block_size: usize) -> Result<(), ModelError> {
        for (name, w) in self.weights.iter_mut() {
            if let Weight::Dense(t) = w {
                if t.shape().len() == 2 && name.starts_with("layers.") {
                    *w = Weight::Quantized(qlora::quantize(t, block_size)?);
                }
            }
        }
        Ok(())
    }

    /// Attaches a fresh adapter for every target. A target naming a whole
    /// weight (`lm_head`) gets one adapter; a layer suffix (`wq`) gets one on
    /// `layers.{l}.{suffix}` for every layer.
    pub fn attach_adapters(&mut self, targets: &[&str], rank: usize, alpha: f64, seed: u64) -> Result<(), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for target in targets {
            let names: Vec<String> = if self.weights.contains_key(*target) {
                vec![target.to_string()]
            } else {
                (0..self.config.n_layers).map(|l| format!("layers.{l}.{target}")).collect()
            };
            for name in names {
                let shape = self.weight(&name)?.shape().to_vec();
                let [out_f, in_f] = shape[..] else {
                    return Err(ModelError::Config(format!("{name} is not a matrix")));
                };
                let adapter = LoraAdapter::new(&name, out_f, in_f, rank, alpha, &mut rng)?;
                self.adapters.insert(name, adapter);
            }
        }
        Ok(())
    }

    /// Keys of the tensors a step may update under `selector`, sorted.
    pub fn trainable_keys(&self, selector: Trainable) -> Vec<String> {
        let mut keys: Vec<String> = match selector {
            Trainable::Full => self
                .weights
                .iter()
                .filter(|(_, w)| matches!(w, Weight::Dense(_)))
                .map(|(k, _)| k.clone())
                .collect(),
            Trainable::AdaptersOnly => Vec::new(),
        };
        for target in self.adapters.keys() {
            keys.push(names::lora_a(target));
            keys.push(names::lora_b(target));
        }
        keys.sort();
        keys
    }

    /// Mutable access to a trainable tensor by key (dense weight name or
    /// `{target}.lora_a` / `{target}.lora_b`).
    pub fn tensor_mut(&mut self, key: &str) -> Option<&mut Tensor<T>> {
        if let Some(target) = key.strip_suffix(".lora_a") {
            return self.adapters.get_mut(target).map(|a| &mut a.a);
        }
        if let Some(target) = key.strip_suffix(".lora_b") {
            return self.adapters.get_mut(target).map(|a| &mut a.b);
        }
        match self.weights.get_mut(key) {
            Some(Weight::Dense(t)) => Some(t),
            _ => None,
        }
    }

    pub fn tensor(&self, key: &str) -> Option<&Tensor<T>> {
        if let Some(target) = key.strip_suffix(".lora_a") {
            return self.adapters.get(target).map(|a| &a.a);
        }
        if let Some(target) = key.strip_suffix(".lora_b") {
            return self.adapters.get(target).map(|a| &a.b);
        }
        match self.weights.get(key) {
            Some(Weight::Dense(t)) => Some(t),
            _ => None,
        }
    }

    /// Dense weight as used at inference: dequantized, with any adapter merged in.
    pub fn effective_weight(&self, name: &str) -> Result<Tensor<T>, ModelError> {
        let base = self.weight(name)?.to_dense();
        match self.adapters.get(name) {
            Some(a) => Ok(qlora::merge_dense(&base, a)?),
            None => Ok(base),
        }
    }

    /// Folds adapters into dense weights and drops them.
    pub fn merged(&self) -> Result<Parameters<T>, ModelError> {
        let tensors = self
            .weights
            .keys()
            .map(|k| Ok((k.clone(), self.effective_weight(k)?)))
            .collect::<Result<_, ModelError>>()?;
        Ok(Parameters::new(tensors))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().map(|w| w.shape().iter().product::<usize>()).sum()
    }

    pub fn adapter_parameter_count(&self) -> usize {
        self.adapters.values().map(|a| a.a.len() + a.b.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            weights: self
                .weights
                .iter()
                .map(|(k, w)| {
                    let w = match w {
                        Weight::Dense(t) => Weight::Dense(t.cast()),
                        Weight::Quantized(q) => Weight::Quantized(q.clone()),
                    };
                    (k.clone(), w)
                })
                .collect(),
            adapters: self
                .adapters
                .iter()
                .map(|(k, a)| {
                    let a = LoraAdapter {
                        target_name: a.target_name.clone(),
                        a: a.a.cast(),
                        b: a.b.cast(),
                        rank: a.rank,
                        alpha: a.alpha,
                    };
                    (k.clone(), a)
                })
                .collect(),
        }
    }
}

/// Models that score a whole sequence at once.
pub trait SequenceModel {
    fn vocab_size(&self) -> usize;

    /// Next-token logits for every prefix of `ids`, as `[T×V]`.
    fn sequence_logits(&self, ids: &[usize]) -> Result<Tensor<f64>, ModelError>;
}

/// Models that decode one token at a time against a cache.
pub trait IncrementalModel {
    type Cache;

    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    fn new_cache(&self) -> Self::Cache;
    fn cache_len(&self, cache: &Self::Cache) -> usize;

    /// Feeds one token and returns the logits for the next position.
    fn step(&self, cache: &mut Self::Cache, id: usize) -> Result<Vec<f64>, ModelError>;
}

impl<T: Element> SequenceModel for ModelState<T> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn sequence_logits(&self, ids: &[usize]) -> Result<Tensor<f64>, ModelError> {
        Ok(forward(self, ids)?.cast())
    }
}
