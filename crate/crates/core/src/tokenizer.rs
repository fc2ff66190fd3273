//! Byte-level vocabulary with greedy pair merges and the dialogue special tokens.
//!
//! Ids `0..=255` are raw bytes, `256..=260` the special tokens, and every id
//! from [`FIRST_MERGE_ID`] on is a learned merge of two earlier ids.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Deref;

use thiserror::Error;

use crate::corpus::{DialogueSample, Role};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const USER_TAG: &str = "<USER>";
pub const AGENT_TAG: &str = "<AGENT>";

const SPECIALS: [&str; 5] = [BOS, EOS, PAD, USER_TAG, AGENT_TAG];

pub const BOS_ID: usize = 256;
pub const EOS_ID: usize = 257;
pub const PAD_ID: usize = 258;
pub const USER_TAG_ID: usize = 259;
pub const AGENT_TAG_ID: usize = 260;
pub const FIRST_MERGE_ID: usize = 261;

/// Smallest legal vocabulary: every byte plus the special tokens.
pub const MIN_VOCAB_SIZE: usize = FIRST_MERGE_ID;

const FILE_MAGIC: &str = "cuelm-vocab";
const FILE_VERSION: &str = "v1";

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("vocabulary size {requested} is below the minimum of {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(usize),
    #[error("vocabulary file: {0}")]
    Format(String),
}

/// Token ids of one encoded text or rendered prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.ids
    }
}

impl Deref for TokenSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.ids
    }
}

impl From<Vec<usize>> for TokenSequence {
    fn from(ids: Vec<usize>) -> Self {
        Self { ids }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Token {
    Bytes(Vec<u8>),
    Special(&'static str),
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    merges: Vec<(usize, usize)>,
    merge_rank: HashMap<(usize, usize), usize>,
    byte_lookup: HashMap<Vec<u8>, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

/// Splits text into chunks that never straddle a whitespace boundary: each
/// whitespace byte opens a new chunk that runs through the following
/// non-whitespace bytes.
fn chunks(text: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= text.len() {
            return None;
        }
        let mut i = start + 1;
        while i < text.len() && !text[i].is_ascii_whitespace() {
            i += 1;
        }
        let chunk = &text[start..i];
        start = i;
        Some(chunk)
    })
}

fn apply_merge(symbols: &[usize], pair: (usize, usize), id: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// Builds the byte-level vocabulary and learns up to `max_size − 261` merges,
/// each time merging the most frequent adjacent pair (ties go to the smallest
/// `(left, right)` id pair). Pairs seen fewer than twice are never merged.
pub fn build_vocab(corpus_text: &str, max_size: usize) -> Result<Vocabulary, TokenizerError> {
    if max_size < MIN_VOCAB_SIZE {
        return Err(TokenizerError::VocabTooSmall {
            requested: max_size,
            minimum: MIN_VOCAB_SIZE,
        });
    }
    let mut words: HashMap<&[u8], usize> = HashMap::new();
    for chunk in chunks(corpus_text.as_bytes()) {
        *words.entry(chunk).or_default() += 1;
    }
    let mut words: Vec<(Vec<usize>, usize)> = words
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| b as usize).collect(), c))
        .collect();
    words.sort();

    let mut merges = Vec::new();
    while MIN_VOCAB_SIZE + merges.len() < max_size {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (symbols, freq) in &words {
            for pair in symbols.windows(2) {
                *counts.entry((pair[0], pair[1])).or_default() += freq;
            }
        }
        let Some((pair, count)) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)))
        else {
            break;
        };
        if count < 2 {
            break;
        }
        let id = MIN_VOCAB_SIZE + merges.len();
        merges.push(pair);
        for (symbols, _) in &mut words {
            if symbols.len() > 1 {
                *symbols = apply_merge(symbols, pair, id);
            }
        }
    }
    Vocabulary::from_merges(merges)
}

impl Vocabulary {
    /// The 261-entry vocabulary with no merges.
    pub fn bytes_only() -> Self {
        Self::from_merges(Vec::new()).expect("no merges to validate")
    }

    fn from_merges(merges: Vec<(usize, usize)>) -> Result<Self, TokenizerError> {
        let mut tokens: Vec<Token> = (0..=255u8).map(|b| Token::Bytes(vec![b])).collect();
        tokens.extend(SPECIALS.iter().map(|s| Token::Special(s)));
        let mut merge_rank = HashMap::new();
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let id = FIRST_MERGE_ID + rank;
            let bytes = match (tokens.get(l), tokens.get(r)) {
                (Some(Token::Bytes(a)), Some(Token::Bytes(b))) if l < id && r < id => {
                    [a.as_slice(), b.as_slice()].concat()
                }
                _ => return Err(TokenizerError::Format(format!("merge {id} references invalid ids {l},{r}"))),
            };
            tokens.push(Token::Bytes(bytes));
            merge_rank.insert((l, r), rank);
        }
        let byte_lookup = tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| match t {
                Token::Bytes(b) => Some((b.clone(), i)),
                Token::Special(_) => None,
            })
            .collect();
        Ok(Self {
            tokens,
            merges,
            merge_rank,
            byte_lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn bos_id(&self) -> usize {
        BOS_ID
    }
    pub fn eos_id(&self) -> usize {
        EOS_ID
    }
    pub fn pad_id(&self) -> usize {
        PAD_ID
    }
    pub fn user_tag_id(&self) -> usize {
        USER_TAG_ID
    }
    pub fn agent_tag_id(&self) -> usize {
        AGENT_TAG_ID
    }

    pub fn is_special(&self, id: usize) -> bool {
        (BOS_ID..FIRST_MERGE_ID).contains(&id)
    }

    /// Escaped text form of a token, as written in vocabulary files.
    pub fn id_to_token(&self, id: usize) -> Option<String> {
        self.tokens.get(id).map(|t| match t {
            Token::Special(s) => (*s).to_string(),
            Token::Bytes(b) => escape(b),
        })
    }

    /// Inverse of [`Vocabulary::id_to_token`].
    pub fn token_to_id(&self, token: &str) -> Option<usize> {
        if let Some(pos) = SPECIALS.iter().position(|s| *s == token) {
            return Some(BOS_ID + pos);
        }
        unescape(token).ok().and_then(|b| self.byte_lookup.get(&b).copied())
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::with_capacity(text.len());
        for chunk in chunks(text.as_bytes()) {
            let mut symbols: Vec<usize> = chunk.iter().map(|&b| b as usize).collect();
            while symbols.len() > 1 {
                let best = symbols
                    .windows(2)
                    .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                    .min();
                let Some((rank, pair)) = best else { break };
                symbols = apply_merge(&symbols, pair, FIRST_MERGE_ID + rank);
            }
            ids.extend(symbols);
        }
        TokenSequence::new(ids)
    }

    /// Decodes ids to text. Special tokens render as their literal labels;
    /// byte sequences that are not valid UTF-8 are replaced lossily.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        self.decode_impl(ids, true)
    }

    /// As [`Vocabulary::decode`] but drops special tokens.
    pub fn decode_text(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        self.decode_impl(ids, false)
    }

    fn decode_impl(&self, ids: &[usize], keep_special: bool) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.tokens.get(id) {
                None => return Err(TokenizerError::UnknownId(id)),
                Some(Token::Bytes(b)) => bytes.extend_from_slice(b),
                Some(Token::Special(s)) if keep_special => bytes.extend_from_slice(s.as_bytes()),
                Some(Token::Special(_)) => {}
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Renders a dialogue sample as
    /// `<s> (<ROLE> text </s>)* <AGENT> [target </s>]`.
    ///
    /// Without the target the sequence stops at `<AGENT>`, leaving the reply
    /// slot open for generation.
    pub fn render_prompt(&self, sample: &DialogueSample, include_target: bool) -> TokenSequence {
        let mut ids = vec![BOS_ID];
        for turn in &sample.context {
            ids.push(match turn.role {
                Role::User => USER_TAG_ID,
                Role::Agent => AGENT_TAG_ID,
            });
            ids.extend(self.encode(&turn.text).into_ids());
            ids.push(EOS_ID);
        }
        ids.push(AGENT_TAG_ID);
        if include_target {
            ids.extend(self.encode(&sample.target).into_ids());
            ids.push(EOS_ID);
        }
        TokenSequence::new(ids)
    }

    /// Serializes to the versioned text format: a header line, then one
    /// `id<TAB>token` line per entry. Merged entries carry a third column
    /// with the two ids they were merged from.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FILE_MAGIC}\t{FILE_VERSION}\tsize={}\tspecials={}\tmerges={}\n",
            self.len(),
            SPECIALS.len(),
            self.merges.len()
        );
        for id in 0..self.len() {
            let token = self.id_to_token(id).expect("id in range");
            if id >= FIRST_MERGE_ID {
                let (l, r) = self.merges[id - FIRST_MERGE_ID];
                let _ = writeln!(out, "{id}\t{token}\t{l} {r}");
            } else {
                let _ = writeln!(out, "{id}\t{token}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let fmt = |m: String| TokenizerError::Format(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt("empty file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 || fields[0] != FILE_MAGIC || fields[1] != FILE_VERSION {
            return Err(fmt(format!("bad header {header:?}")));
        }
        let field = |i: usize, key: &str| -> Result<usize, TokenizerError> {
            fields[i]
                .strip_prefix(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| fmt(format!("bad header field {:?}", fields[i])))
        };
        let size = field(2, "size=")?;
        let n_special = field(3, "specials=")?;
        let n_merges = field(4, "merges=")?;
        if n_special != SPECIALS.len() || size != MIN_VOCAB_SIZE + n_merges {
            return Err(fmt(format!("inconsistent counts in {header:?}")));
        }
        let mut merges = Vec::with_capacity(n_merges);
        let mut seen = Vec::with_capacity(size);
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let id: usize = cols[0].parse().map_err(|_| fmt(format!("line {}: bad id", n + 2)))?;
            if id != n {
                return Err(fmt(format!("line {}: expected id {n}, got {id}", n + 2)));
            }
            if id >= FIRST_MERGE_ID {
                let pair = cols
                    .get(2)
                    .and_then(|p| p.split_once(' '))
                    .and_then(|(l, r)| Some((l.parse().ok()?, r.parse().ok()?)))
                    .ok_or_else(|| fmt(format!("line {}: merge pair missing", n + 2)))?;
                merges.push(pair);
            }
            seen.push(cols.get(1).copied().unwrap_or_default().to_string());
        }
        if seen.len() != size {
            return Err(fmt(format!("expected {size} entries, found {}", seen.len())));
        }
        let vocab = Self::from_merges(merges)?;
        for (id, token) in seen.iter().enumerate() {
            if vocab.id_to_token(id).as_deref() != Some(token.as_str()) {
                return Err(fmt(format!("entry {id} does not match its merge pair")));
            }
        }
        Ok(vocab)
    }
}

fn escape(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        if b.is_ascii_graphic() && b != b'\\' && b != b'<' {
            s.push(b as char);
        } else {
            let _ = write!(s, "\\x{b:02x}");
        }
    }
    s
}

fn unescape(s: &str) -> Result<Vec<u8>, ()> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            let hex = s.get(i + 2..i + 4).ok_or(())?;
            if bytes.get(i + 1) != Some(&b'x') {
                return Err(());
            }
            out.push(u8::from_str_radix(hex, 16).map_err(|_| ())?);
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(out)
}
