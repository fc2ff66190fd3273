//! Perplexity and BLEU evaluation.

use std::collections::HashMap;
use std::fmt;

use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DialogueSample;
use crate::generate::{generate_tokens, GenerateError, SamplerConfig};
use crate::model::{IncrementalModel, ModelError, SequenceModel};
use crate::tokenizer::{self, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("reports come from different schedules")]
    ScheduleMismatch,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub dataset_name: String,
    pub token_count: usize,
    pub mean_nll: f64,
    pub perplexity: f64,
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    row[target] - max - z.ln()
}

/// Perplexity of `model` over token sequences, counting every non-pad
/// next-token prediction.
pub fn perplexity_of_sequences<M: SequenceModel>(
    model: &M,
    name: &str,
    sequences: &[Vec<usize>],
) -> Result<PerplexityReport, EvalError> {
    let (mut nll, mut count) = (0.0f64, 0usize);
    for ids in sequences.iter().filter(|s| s.len() >= 2) {
        let logits = model.sequence_logits(&ids[..ids.len() - 1])?;
        for (t, &target) in ids[1..].iter().enumerate() {
            if target == tokenizer::PAD_ID {
                continue;
            }
            nll -= log_softmax_at(logits.row(t), target);
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let mean_nll = nll / count as f64;
    Ok(PerplexityReport {
        dataset_name: name.to_string(),
        token_count: count,
        mean_nll,
        perplexity: mean_nll.exp(),
    })
}

/// Perplexity over rendered samples, truncated to the last `max_len` tokens.
pub fn perplexity<M: SequenceModel>(
    model: &M,
    vocab: &Vocabulary,
    name: &str,
    dataset: &[DialogueSample],
    max_len: usize,
) -> Result<PerplexityReport, EvalError> {
    let seqs: Vec<Vec<usize>> = dataset
        .iter()
        .map(|s| {
            let ids = vocab.render_prompt(s, true).into_ids();
            ids[ids.len().saturating_sub(max_len)..].to_vec()
        })
        .collect();
    perplexity_of_sequences(model, name, &seqs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuConfig {
    pub max_n: usize,
    /// Added to zero clipped counts. Zero disables smoothing.
    pub smoothing_epsilon: f64,
    /// Score the whole sample as one corpus instead of averaging sentences.
    pub corpus_level: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing_epsilon: 0.1,
            corpus_level: false,
        }
    }
}

impl BleuConfig {
    pub fn unsmoothed(max_n: usize) -> Self {
        Self {
            max_n,
            smoothing_epsilon: 0.0,
            corpus_level: false,
        }
    }
}

/// Lowercases and splits on whitespace, with each punctuation character
/// its own token.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Clipped matches and candidate n-gram totals for orders `1..=max_n`.
#[derive(Clone, Debug, Default, PartialEq)]
struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    cand_len: usize,
    ref_len: usize,
}

fn stats(cand: &[String], reference: &[String], max_n: usize) -> BleuStats {
    let mut s = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        cand_len: cand.len(),
        ref_len: reference.len(),
    };
    for n in 1..=max_n {
        let c = ngram_counts(cand, n);
        let r = ngram_counts(reference, n);
        s.matches[n - 1] = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
        s.totals[n - 1] = cand.len().saturating_sub(n - 1);
    }
    s
}

/// Geometric mean of the modified precisions times the brevity penalty.
/// Orders longer than the candidate have no n-grams and are left out, with
/// the remaining weights renormalized.
fn score(s: &BleuStats, eps: f64) -> f64 {
    if s.cand_len == 0 {
        return 0.0;
    }
    let orders: Vec<usize> = (0..s.matches.len()).filter(|&i| s.totals[i] > 0).collect();
    let w = 1.0 / orders.len() as f64;
    let mut log_p = 0.0;
    for &i in &orders {
        let m = if s.matches[i] == 0 { eps } else { s.matches[i] as f64 };
        if m == 0.0 {
            return 0.0;
        }
        log_p += w * (m / s.totals[i] as f64).ln();
    }
    let bp = (1.0 - s.ref_len as f64 / s.cand_len as f64).exp().min(1.0);
    bp * log_p.exp()
}

/// Sentence-level BLEU of `candidate` against one `reference`.
pub fn bleu(candidate: &str, reference: &str, config: &BleuConfig) -> f64 {
    let s = stats(&bleu_tokens(candidate), &bleu_tokens(reference), config.max_n);
    score(&s, config.smoothing_epsilon)
}

/// Corpus-level BLEU: counts pooled over all pairs before scoring.
pub fn corpus_bleu(pairs: &[(String, String)], config: &BleuConfig) -> f64 {
    let mut total = BleuStats {
        matches: vec![0; config.max_n],
        totals: vec![0; config.max_n],
        ..Default::default()
    };
    for (c, r) in pairs {
        let s = stats(&bleu_tokens(c), &bleu_tokens(r), config.max_n);
        for i in 0..config.max_n {
            total.matches[i] += s.matches[i];
            total.totals[i] += s.totals[i];
        }
        total.cand_len += s.cand_len;
        total.ref_len += s.ref_len;
    }
    score(&total, config.smoothing_epsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuSchedule {
    pub sample_sizes: Vec<usize>,
    pub trials_per_size: usize,
    pub candidates_per_reference: usize,
    pub k: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    /// Draw with replacement instead of clipping sizes to the set.
    pub with_replacement: bool,
    pub bleu: BleuConfig,
}

impl Default for BleuSchedule {
    fn default() -> Self {
        Self {
            sample_sizes: vec![100, 300, 500, 1000],
            trials_per_size: 3,
            candidates_per_reference: 1,
            k: 50,
            temperature: 0.7,
            max_new_tokens: 64,
            with_replacement: false,
            bleu: BleuConfig::default(),
        }
    }
}

impl BleuSchedule {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(EvalError::InvalidSchedule("sample sizes must be positive".into()));
        }
        if self.trials_per_size == 0 || self.candidates_per_reference == 0 {
            return Err(EvalError::InvalidSchedule("trials and candidates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    /// Size requested by the schedule.
    pub requested: usize,
    /// Size actually drawn.
    pub size: usize,
    pub trials: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub sizes: Vec<SizeResult>,
    pub grand_mean: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl BleuReport {
    pub fn from_trials(sizes: Vec<(usize, usize, Vec<f64>)>) -> Self {
        let sizes: Vec<SizeResult> = sizes
            .into_iter()
            .map(|(requested, size, trials)| SizeResult {
                requested,
                size,
                mean: mean(&trials),
                trials,
            })
            .collect();
        let grand_mean = mean(&sizes.iter().map(|s| s.mean).collect::<Vec<_>>());
        Self { sizes, grand_mean }
    }
}

/// Scores sampled replies against reference targets under `schedule`.
pub fn run_bleu_schedule<M: IncrementalModel>(
    model: &M,
    vocab: &Vocabulary,
    validation: &[DialogueSample],
    schedule: &BleuSchedule,
    seed: u64,
) -> Result<BleuReport, EvalError> {
    schedule.validate()?;
    if validation.is_empty() {
        return Err(EvalError::EmptyValidationSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = SamplerConfig {
        k: schedule.k,
        temperature: schedule.temperature,
        max_new_tokens: schedule.max_new_tokens,
        ..Default::default()
    };
    let mut sizes = Vec::new();
    for &requested in &schedule.sample_sizes {
        let size = if schedule.with_replacement {
            requested
        } else {
            if requested > validation.len() {
                tracing::warn!(requested, available = validation.len(), "sample size clipped");
            }
            requested.min(validation.len())
        };
        let mut trials = Vec::new();
        for _ in 0..schedule.trials_per_size {
            let picks: Vec<&DialogueSample> = if schedule.with_replacement {
                (0..size).map(|_| validation.choose(&mut rng).expect("non-empty")).collect()
            } else {
                index::sample(&mut rng, validation.len(), size).into_iter().map(|i| &validation[i]).collect()
            };
            let mut pairs = Vec::new();
            for sample in picks {
                let prompt = vocab.render_prompt(sample, false).into_ids();
                let keep = model.context_len().saturating_sub(schedule.max_new_tokens).max(1);
                let prompt = &prompt[prompt.len().saturating_sub(keep)..];
                for _ in 0..schedule.candidates_per_reference {
                    let ids = generate_tokens(model, prompt, &sampler, &mut rng)?;
                    pairs.push((vocab.decode_text(&ids).expect("model ids are in range"), sample.target.clone()));
                }
            }
            let score = if schedule.bleu.corpus_level {
                corpus_bleu(&pairs, &schedule.bleu)
            } else {
                mean(&pairs.iter().map(|(c, r)| bleu(c, r, &schedule.bleu)).collect::<Vec<_>>())
            };
            trials.push(score);
        }
        sizes.push((requested, size, trials));
    }
    Ok(BleuReport::from_trials(sizes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub size: usize,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Side-by-side BLEU of two models under the same schedule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ComparisonRow>,
    pub grand_a: f64,
    pub grand_b: f64,
    pub grand_delta: f64,
}

pub fn compare_models(
    label_a: &str,
    a: &BleuReport,
    label_b: &str,
    b: &BleuReport,
) -> Result<Comparison, EvalError> {
    let sizes = |r: &BleuReport| r.sizes.iter().map(|s| (s.requested, s.size)).collect::<Vec<_>>();
    if sizes(a) != sizes(b) {
        return Err(EvalError::ScheduleMismatch);
    }
    Ok(Comparison {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        rows: a
            .sizes
            .iter()
            .zip(&b.sizes)
            .map(|(x, y)| ComparisonRow {
                size: x.size,
                a: x.mean,
                b: y.mean,
                delta: y.mean - x.mean,
            })
            .collect(),
        grand_a: a.grand_mean,
        grand_b: b.grand_mean,
        grand_delta: b.grand_mean - a.grand_mean,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.label_a.len().max(self.label_b.len()).max(10);
        writeln!(f, "{:<12} {:>w$} {:>w$} {:>8}", "sample size", self.label_a, self.label_b, "delta")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:>w$.3} {:>w$.3} {:>+8.3}", r.size, r.a, r.b, r.delta)?;
        }
        write!(
            f,
            "{:<12} {:>w$.3} {:>w$.3} {:>+8.3}",
            "BLEU (avg)", self.grand_a, self.grand_b, self.grand_delta
        )
    }
}

impl fmt::Display for PerplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} tokens {:>8}  mean nll {:>8.4}  perplexity {:>10.3}",
            self.dataset_name, self.token_count, self.mean_nll, self.perplexity
        )
    }
}
