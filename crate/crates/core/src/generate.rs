//! Top-k sampling with temperature and the chat loop around it.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogueSample, Role, Turn};
use crate::model::{IncrementalModel, ModelError};
use crate::tokenizer::{self, TokenizerError, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("message is empty")]
    EmptyMessage,
    #[error("latest message needs {len} tokens but only {budget} fit")]
    MessageTooLong { len: usize, budget: usize },
    #[error("invalid sampler settings: {0}")]
    InvalidSampler(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k: usize,
    pub temperature: f64,
    /// Nucleus cut applied after top-k. Off unless set.
    pub top_p: Option<f64>,
    pub max_new_tokens: usize,
    pub stop_ids: BTreeSet<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 50,
            temperature: 0.7,
            top_p: None,
            max_new_tokens: 128,
            stop_ids: BTreeSet::from([tokenizer::EOS_ID]),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |m: &str| Err(GenerateError::InvalidSampler(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.top_p.is_some_and(|p| !(p > 0.0 && p <= 1.0)) {
            return bad("top_p must lie in (0, 1]");
        }
        Ok(())
    }
}

/// The renormalized distribution sampling draws from, as `(id, probability)`
/// in descending probability. Logits are divided by the temperature, the `k`
/// highest kept (equal values favour the lower id), and softmax taken over
/// the kept set.
pub fn top_k_distribution(logits: &[f64], k: usize, temperature: f64, top_p: Option<f64>) -> Vec<(usize, f64)> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    let max = scaled[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (scaled[i] - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut dist: Vec<(usize, f64)> = order.into_iter().zip(weights.into_iter().map(|w| w / z)).collect();
    if let Some(p) = top_p {
        let mut acc = 0.0;
        let keep = dist
            .iter()
            .position(|&(_, q)| {
                acc += q;
                acc >= p
            })
            .map_or(dist.len(), |i| i + 1);
        dist.truncate(keep);
        let z: f64 = dist.iter().map(|&(_, q)| q).sum();
        dist.iter_mut().for_each(|(_, q)| *q /= z);
    }
    dist
}

/// Draws one id from [`top_k_distribution`].
pub fn sample_next(logits: &[f64], config: &SamplerConfig, rng: &mut impl Rng) -> usize {
    let dist = top_k_distribution(logits, config.k, config.temperature, config.top_p);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in &dist {
        acc += p;
        if u < acc {
            return id;
        }
    }
    dist.last().expect("k ≥ 1").0
}

/// Feeds `prompt` through `model` and samples until a stop id, the token
/// budget, or a full cache. Returned ids never include the stop id.
pub fn generate_tokens<M: IncrementalModel>(
    model: &M,
    prompt: &[usize],
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, GenerateError> {
    if prompt.is_empty() {
        return Err(GenerateError::EmptyMessage);
    }
    let mut cache = model.new_cache();
    let mut logits = Vec::new();
    for &id in prompt {
        logits = model.step(&mut cache, id)?;
    }
    let mut out = Vec::new();
    while out.len() < config.max_new_tokens {
        let id = sample_next(&logits, config, rng);
        if config.stop_ids.contains(&id) {
            break;
        }
        out.push(id);
        if model.cache_len(&cache) >= model.context_len() {
            break;
        }
        logits = model.step(&mut cache, id)?;
    }
    Ok(out)
}

/// The rendered prompt for `turns` (ending in the latest USER turn) that
/// fits `context_len − max_new_tokens`. Whole exchanges are dropped from the
/// front; the latest USER turn is always kept.
pub fn truncate_context(
    turns: &[Turn],
    vocab: &Vocabulary,
    context_len: usize,
    max_new_tokens: usize,
) -> Result<Vec<usize>, GenerateError> {
    let budget = context_len.saturating_sub(max_new_tokens);
    let render = |from: usize| {
        let sample = DialogueSample {
            context: turns[from..].to_vec(),
            target: String::new(),
            source_play: String::new(),
        };
        vocab.render_prompt(&sample, false).into_ids()
    };
    let mut start = 0;
    loop {
        let ids = render(start);
        if ids.len() <= budget {
            return Ok(ids);
        }
        if start + 1 >= turns.len() {
            return Err(GenerateError::MessageTooLong { len: ids.len(), budget });
        }
        start = (start + 2).min(turns.len() - 1);
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Accumulated USER/AGENT turns of one conversation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub turns: Vec<Turn>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub sampler: SamplerConfig,
}

impl ChatSession {
    pub fn new(session_id: impl Into<String>, sampler: SamplerConfig) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            created_at: now_secs(),
            sampler,
        }
    }

    /// Random stream for the next reply, fixed by the seed and turn count.
    fn reply_rng(&self) -> ChaCha8Rng {
        let salt = (self.turns.len() as u64 / 2).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ChaCha8Rng::seed_from_u64(self.sampler.seed ^ salt)
    }

    pub fn roles_alternate(&self) -> bool {
        self.turns.iter().enumerate().all(|(i, t)| t.role == if i % 2 == 0 { Role::User } else { Role::Agent })
    }
}

/// Appends `user_message` and a sampled AGENT reply to `session` and returns
/// the reply. On error the session is left as it was. The prompt is
/// truncated to leave room for `max_new_tokens`, but never to less than half
/// the context.
pub fn generate_reply<M: IncrementalModel>(
    model: &M,
    vocab: &Vocabulary,
    session: &mut ChatSession,
    user_message: &str,
) -> Result<String, GenerateError> {
    let message = crate::corpus::normalize_whitespace(user_message);
    if message.is_empty() {
        return Err(GenerateError::EmptyMessage);
    }
    session.sampler.validate()?;
    let mut turns = session.turns.clone();
    turns.push(Turn::user(message.clone()));
    let reserve = session.sampler.max_new_tokens.min(model.context_len() / 2);
    let prompt = truncate_context(&turns, vocab, model.context_len(), reserve)?;
    let ids = generate_tokens(model, &prompt, &session.sampler, &mut session.reply_rng())?;
    let reply = vocab.decode_text(&ids)?;
    session.turns.push(Turn::user(message));
    session.turns.push(Turn::agent(reply.clone()));
    Ok(reply)
}
