//! Next-token training: the per-token negative log-likelihood, AdamW, and
//! stage orchestration with early stopping.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::{self, CorpusError, DialogueSample, SplitSpec};
use crate::model::{forward_taped, names, ModelConfig, ModelError, ModelState, Trainable};
use crate::numerics::{Element, NumericsError, Tape, Tensor};
use crate::qlora;
use crate::tokenizer::{self, TokenizerError, Vocabulary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sequence of {0} tokens is too short to predict anything")]
    SequenceTooShort(usize),
    #[error("no gradient for tracked parameter {0}")]
    MissingGradient(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("adapters-only training needs a quantized base with adapters attached")]
    NoAdapters,
    #[error("plan: {0}")]
    Plan(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Longer rendered samples keep only their last `max_seq_len` tokens.
    pub max_seq_len: usize,
    /// Stop after this many optimizer steps in the stage.
    pub max_steps: Option<usize>,
    /// Epochs without a new best validation perplexity before stopping.
    pub patience: usize,
    /// Score only the target reply instead of the whole rendered sample.
    pub target_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            max_seq_len: 256,
            max_steps: None,
            patience: 3,
            target_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("epsilon must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.max_seq_len < 2 {
            return bad("batch_size must be positive and max_seq_len at least 2");
        }
        Ok(())
    }
}

/// AdamW moments for each tracked tensor, keyed like the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

/// Anything that hands out named trainable tensors.
pub trait ParamStore<T> {
    fn param_mut(&mut self, key: &str) -> Option<&mut Tensor<T>>;
}

impl<T: Element> ParamStore<T> for ModelState<T> {
    fn param_mut(&mut self, key: &str) -> Option<&mut Tensor<T>> {
        self.tensor_mut(key)
    }
}

impl<T> ParamStore<T> for BTreeMap<String, Tensor<T>> {
    fn param_mut(&mut self, key: &str) -> Option<&mut Tensor<T>> {
        self.get_mut(key)
    }
}

/// One AdamW update of every tensor in `keys`. Weight decay is decoupled and
/// uses the value of θ from before the step.
pub fn adamw_step<T: Element>(
    params: &mut impl ParamStore<T>,
    keys: &[String],
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if let Some(k) = keys.iter().find(|k| !grads.contains_key(*k)) {
        return Err(TrainError::MissingGradient(k.clone()));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, lr, eps, wd) = (
        config.beta1,
        config.beta2,
        config.learning_rate,
        config.epsilon,
        config.weight_decay,
    );
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for key in keys {
        let g = &grads[key];
        let theta = params.param_mut(key).ok_or_else(|| TrainError::MissingGradient(key.clone()))?;
        if theta.shape() != g.shape() {
            return Err(NumericsError::ShapeMismatch(format!("gradient for {key}")).into());
        }
        let m = state.m.entry(key.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(key.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((th, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi.as_f64();
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            let old = th.as_f64();
            *th = T::from_f64(old - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * old);
        }
    }
    Ok(())
}

/// A rendered training sequence. `target_start` is the index of the first
/// target token, right after the final `<AGENT>` tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub target_start: usize,
}

impl Example {
    pub fn from_sample(vocab: &Vocabulary, sample: &DialogueSample, max_len: usize) -> Self {
        let mut ids = vocab.render_prompt(sample, true).into_ids();
        let mut target_start = ids.iter().rposition(|&i| i == vocab.agent_tag_id()).map_or(0, |p| p + 1);
        if ids.len() > max_len {
            let cut = ids.len() - max_len;
            ids.drain(..cut);
            target_start = target_start.saturating_sub(cut);
        }
        Self { ids, target_start }
    }

    /// Which of the `len − 1` next-token predictions count toward the loss.
    pub fn loss_mask(&self, pad_id: usize, target_only: bool) -> Vec<bool> {
        (1..self.ids.len())
            .map(|j| self.ids[j] != pad_id && (!target_only || j >= self.target_start))
            .collect()
    }
}

pub fn examples(vocab: &Vocabulary, samples: &[DialogueSample], max_len: usize) -> Vec<Example> {
    samples.iter().map(|s| Example::from_sample(vocab, s, max_len)).collect()
}

struct SampleGrad<T> {
    loss: f64,
    count: usize,
    grads: BTreeMap<String, Tensor<T>>,
}

fn taped_loss<T: Element>(
    state: &ModelState<T>,
    ids: &[usize],
    mask: &[bool],
    trainable: Option<Trainable>,
) -> Result<(Tape<T>, crate::numerics::Var, Vec<(String, crate::numerics::Var)>, usize), TrainError> {
    if ids.len() < 2 {
        return Err(TrainError::SequenceTooShort(ids.len()));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut tape = Tape::new();
    let out = forward_taped(state, &mut tape, &ids[..ids.len() - 1], trainable)?;
    let loss = tape.cross_entropy_masked(out.logits, &ids[1..], mask)?;
    Ok((tape, loss, out.params, count))
}

fn sample_grad<T: Element>(
    state: &ModelState<T>,
    ex: &Example,
    pad_id: usize,
    config: &TrainConfig,
    trainable: Trainable,
) -> Result<Option<SampleGrad<T>>, TrainError> {
    let mask = ex.loss_mask(pad_id, config.target_only);
    if !mask.iter().any(|&m| m) {
        return Ok(None);
    }
    let (tape, loss, params, count) = taped_loss(state, &ex.ids, &mask, Some(trainable))?;
    let mut g = tape.backward(loss)?;
    let grads = params
        .into_iter()
        .filter_map(|(k, v)| g.remove(v).map(|t| (k, t)))
        .collect();
    Ok(Some(SampleGrad {
        loss: tape.value(loss).data()[0].as_f64(),
        count,
        grads,
    }))
}

/// Mean next-token NLL of `tokens` over the positions selected by `mask`
/// (one entry per prediction, `tokens.len() − 1` in all).
pub fn masked_sequence_loss<T: Element>(state: &ModelState<T>, tokens: &[usize], mask: &[bool]) -> Result<f64, TrainError> {
    let (tape, loss, _, _) = taped_loss(state, tokens, mask, None)?;
    Ok(tape.value(loss).data()[0].as_f64())
}

/// Mean next-token NLL over positions `1..n`, skipping `<pad>` targets.
pub fn sequence_loss<T: Element>(state: &ModelState<T>, tokens: &[usize]) -> Result<f64, TrainError> {
    let mask: Vec<bool> = tokens.iter().skip(1).map(|&t| t != tokenizer::PAD_ID).collect();
    masked_sequence_loss(state, tokens, &mask)
}

/// Token-weighted mean NLL over `data` and the number of scored tokens.
pub fn dataset_loss<T: Element>(
    state: &ModelState<T>,
    data: &[Example],
    pad_id: usize,
    target_only: bool,
) -> Result<(f64, usize), TrainError> {
    let (mut total, mut count) = (0.0, 0usize);
    for ex in data {
        let mask = ex.loss_mask(pad_id, target_only);
        let n = mask.iter().filter(|&&m| m).count();
        if n == 0 {
            continue;
        }
        total += masked_sequence_loss(state, &ex.ids, &mask)? * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(TrainError::EmptyDataset);
    }
    Ok((total / count as f64, count))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ppl: f64,
}

/// Training and validation examples for one stage.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
}

impl Dataset {
    pub fn from_split(vocab: &Vocabulary, train: &[DialogueSample], validation: &[DialogueSample], max_len: usize) -> Self {
        Self {
            train: examples(vocab, train, max_len),
            validation: examples(vocab, validation, max_len),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome<T> {
    /// The state with the best validation perplexity seen.
    pub state: ModelState<T>,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

fn check_trainable<T: Element>(state: &ModelState<T>, trainable: Trainable) -> Result<(), TrainError> {
    if trainable == Trainable::AdaptersOnly && (state.adapters.is_empty() || !state.is_quantized()) {
        return Err(TrainError::NoAdapters);
    }
    Ok(())
}

/// Runs up to `config.epochs` epochs of shuffled mini-batch AdamW over
/// `data.train`, scoring `data.validation` after each. Returns the best
/// validation state. Stage numbering in the records comes from `stage`.
pub fn train_stage<T: Element>(
    state: ModelState<T>,
    data: &Dataset,
    config: &TrainConfig,
    trainable: Trainable,
    stage: usize,
) -> Result<StageOutcome<T>, TrainError> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_trainable(&state, trainable)?;
    let mut outcome = StageOutcome {
        state: state.clone(),
        history: Vec::new(),
        steps: 0,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    let pad = tokenizer::PAD_ID;
    let keys = state.trainable_keys(trainable);
    let mut current = state;
    let mut opt = OptimizerState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            if outcome.steps >= max_steps {
                break;
            }
            let mut acc: BTreeMap<String, Tensor<T>> = BTreeMap::new();
            let mut batch_count = 0usize;
            for &i in batch {
                let Some(sg) = sample_grad(&current, &data.train[i], pad, config, trainable)? else {
                    continue;
                };
                epoch_loss += sg.loss * sg.count as f64;
                epoch_count += sg.count;
                batch_count += sg.count;
                let w = T::from_f64(sg.count as f64);
                for (k, mut g) in sg.grads {
                    g.scale_in_place(w);
                    match acc.get_mut(&k) {
                        Some(a) => a.add_assign(&g),
                        None => {
                            acc.insert(k, g);
                        }
                    }
                }
            }
            if batch_count == 0 {
                continue;
            }
            let inv = T::from_f64(1.0 / batch_count as f64);
            acc.values_mut().for_each(|g| g.scale_in_place(inv));
            // tensors the loss never reached get an explicit zero gradient
            for k in &keys {
                if !acc.contains_key(k) {
                    let shape = current.tensor(k).map(|t| t.shape().to_vec()).unwrap_or_default();
                    acc.insert(k.clone(), Tensor::zeros(&shape));
                }
            }
            adamw_step(&mut current, &keys, &acc, &mut opt, config)?;
            outcome.steps += 1;
        }
        let train_loss = if epoch_count > 0 { epoch_loss / epoch_count as f64 } else { f64::NAN };
        let val_ppl = if data.validation.is_empty() {
            f64::NAN
        } else {
            dataset_loss(&current, &data.validation, pad, config.target_only)?.0.exp()
        };
        outcome.history.push(EpochRecord {
            stage,
            epoch,
            train_loss,
            val_ppl,
        });
        tracing::info!(stage, epoch, train_loss, val_ppl, "epoch done");
        if val_ppl < best || val_ppl.is_nan() {
            best = val_ppl.min(best);
            outcome.state = current.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
        if outcome.steps >= max_steps {
            break;
        }
    }
    Ok(outcome)
}

/// How a stage picks and prepares its trainable set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<String>,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: qlora::DEFAULT_RANK,
            alpha: qlora::DEFAULT_ALPHA,
            targets: names::ATTENTION_PROJECTIONS.iter().map(|s| s.to_string()).collect(),
            block_size: qlora::DEFAULT_BLOCK_SIZE,
            seed: 0,
        }
    }
}

/// Quantizes the base and attaches fresh adapters unless adapters are already present.
pub fn prepare_adapters<T: Element>(state: &mut ModelState<T>, cfg: &AdapterConfig) -> Result<(), TrainError> {
    if !state.adapters.is_empty() {
        return Ok(());
    }
    if !state.is_quantized() {
        state.quantize_base(cfg.block_size)?;
    }
    let targets: Vec<&str> = cfg.targets.iter().map(String::as_str).collect();
    state.attach_adapters(&targets, cfg.rank, cfg.alpha, cfg.seed)?;
    Ok(())
}

fn default_train_split() -> SplitSpec {
    SplitSpec {
        train_fraction: 0.8,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// A directory of play scripts or a `.jsonl` sample file, relative to the plan file.
    pub dataset: PathBuf,
    /// Defaults to 0.8 for the first stage and 0.9 afterwards.
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_trainable")]
    pub trainable: Trainable,
    #[serde(default)]
    pub adapters: AdapterConfig,
}

fn default_trainable() -> Trainable {
    Trainable::Full
}

/// Architecture section of a plan; the vocabulary size comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub use_rope: bool,
    pub rope_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let d = ModelConfig::desk(tokenizer::MIN_VOCAB_SIZE);
        Self {
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_model: d.d_model,
            d_ff: d.d_ff,
            context_len: d.context_len,
            use_rope: d.use_rope,
            rope_scale: d.rope_scale,
        }
    }
}

impl ArchConfig {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            context_len: self.context_len,
            use_rope: self.use_rope,
            rope_scale: self.rope_scale,
            ..ModelConfig::desk(vocab_size)
        }
    }
}

/// A multi-stage training plan, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on the vocabulary learned from the first stage's text.
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_context_turns")]
    pub max_context_turns: usize,
    #[serde(default)]
    pub model: ArchConfig,
    pub stages: Vec<StageSpec>,
    pub output: PathBuf,
    pub metrics: Option<PathBuf>,
}

fn default_vocab_size() -> usize {
    512
}
fn default_context_turns() -> usize {
    corpus::DEFAULT_MAX_CONTEXT_TURNS
}

impl StagePlan {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let plan: Self = toml::from_str(text).map_err(|e| TrainError::Plan(e.to_string()))?;
        if plan.stages.is_empty() {
            return Err(TrainError::Plan("a plan needs at least one stage".into()));
        }
        Ok(plan)
    }

    /// Reads a plan and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut plan = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut plan.output);
        if let Some(m) = plan.metrics.as_mut() {
            fix(m);
        }
        plan.stages.iter_mut().for_each(|s| fix(&mut s.dataset));
        Ok(plan)
    }

    fn split_for(&self, index: usize) -> SplitSpec {
        self.stages[index].split.unwrap_or(if index == 0 {
            SplitSpec {
                seed: self.seed,
                ..default_train_split()
            }
        } else {
            SplitSpec {
                train_fraction: 0.9,
                seed: self.seed,
            }
        })
    }
}

/// Samples from a `.jsonl` file or a directory of scripts.
pub fn load_samples(path: &Path, max_context_turns: usize) -> Result<Vec<DialogueSample>, TrainError> {
    if path.is_dir() {
        Ok(corpus::ingest_dir(path, max_context_turns)?.0)
    } else {
        Ok(corpus::read_samples(path)?)
    }
}

/// Training text used to learn the vocabulary.
pub fn sample_text(samples: &[DialogueSample]) -> String {
    let mut text = String::new();
    for s in samples {
        for t in &s.context {
            text.push_str(&t.text);
            text.push('\n');
        }
        text.push_str(&s.target);
        text.push('\n');
    }
    text
}

/// A stage ready to run: its data already split and rendered.
#[derive(Clone, Debug)]
pub struct PreparedStage {
    pub data: Dataset,
    pub config: TrainConfig,
    pub trainable: Trainable,
    pub adapters: AdapterConfig,
}

/// Runs `stages` in order, each starting from the previous stage's best state.
pub fn run_stages<T: Element>(initial: ModelState<T>, stages: &[PreparedStage]) -> Result<Vec<StageOutcome<T>>, TrainError> {
    let mut state = initial;
    let mut out = Vec::with_capacity(stages.len());
    for (i, st) in stages.iter().enumerate() {
        if st.trainable == Trainable::AdaptersOnly {
            prepare_adapters(&mut state, &st.adapters)?;
        }
        let outcome = train_stage(state, &st.data, &st.config, st.trainable, i + 1)?;
        state = outcome.state.clone();
        out.push(outcome);
    }
    Ok(out)
}

/// Everything a finished plan produced.
pub struct PlanOutcome {
    pub vocab: Vocabulary,
    pub stages: Vec<StageOutcome<f32>>,
    pub checkpoint: Checkpoint<f32>,
}

/// Executes a [`StagePlan`]: builds the vocabulary from the first stage's
/// training split, initializes the model, runs every stage, and writes the
/// final checkpoint and the metrics log.
pub fn run_two_stage(plan: &StagePlan) -> Result<PlanOutcome, TrainError> {
    if plan.stages.is_empty() {
        return Err(TrainError::Plan("a plan needs at least one stage".into()));
    }
    let mut splits = Vec::new();
    for (i, st) in plan.stages.iter().enumerate() {
        let samples = load_samples(&st.dataset, plan.max_context_turns)?;
        splits.push(corpus::split(&samples, plan.split_for(i))?);
    }
    let vocab = tokenizer::build_vocab(&sample_text(&splits[0].0), plan.vocab_size)?;
    let config = plan.model.with_vocab(vocab.len());
    let max_len = config.context_len;
    let prepared: Vec<PreparedStage> = plan
        .stages
        .iter()
        .zip(&splits)
        .map(|(st, (train, val))| PreparedStage {
            data: Dataset::from_split(&vocab, train, val, st.train.max_seq_len.min(max_len)),
            config: st.train.clone(),
            trainable: st.trainable,
            adapters: st.adapters.clone(),
        })
        .collect();
    let initial = ModelState::<f32>::init(config, plan.seed)?;
    let stages = run_stages(initial, &prepared)?;
    let metrics: Vec<EpochRecord> = stages.iter().flat_map(|s| s.history.clone()).collect();
    let final_state = stages.last().expect("at least one stage").state.clone();
    let checkpoint = Checkpoint::new(final_state, vocab.clone(), metrics.clone());
    checkpoint.save(&plan.output)?;
    if let Some(path) = &plan.metrics {
        write_metrics(path, &metrics)?;
    }
    Ok(PlanOutcome {
        vocab,
        stages,
        checkpoint,
    })
}

pub fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}
