//! Play-script ingestion: scripts → cues → alternating USER/AGENT samples → splits.
//!
//! Scripts are plain UTF-8 with one `SPEAKER: utterance` line per cue. Blank
//! lines and `#` lines are skipped; `# title: …` and `# author: …` comments
//! fill in play metadata.

pub mod synthetic;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_CONTEXT_TURNS: usize = 7;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("play contains no dialogue lines")]
    EmptyPlay,
    #[error("line {0} is not of the form `SPEAKER: text`")]
    MalformedLine(usize),
    #[error("need at least two cues to build a sample, got {0}")]
    TooFewCues(usize),
    #[error("max_context_turns must be odd and at least 1, got {0}")]
    InvalidContextTurns(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("cannot split an empty sample list")]
    EmptyInput,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPlay {
    pub play_id: String,
    pub title: String,
    pub author: String,
    pub lines: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    pub play_id: String,
    pub index: usize,
    pub speaker: String,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "USER")]
    User,
    #[serde(rename = "AGENT")]
    Agent,
}

impl Role {
    pub fn other(self) -> Self {
        match self {
            Role::User => Role::Agent,
            Role::Agent => Role::User,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Self {
            role: Role::Agent,
            text: text.into(),
        }
    }
}

/// Context turns ending on a USER line, plus the AGENT reply to learn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSample {
    pub context: Vec<Turn>,
    pub target: String,
    pub source_play: String,
}

impl DialogueSample {
    /// Roles alternate, open with USER and close with USER.
    pub fn is_well_formed(&self) -> bool {
        self.context.first().is_none_or(|t| t.role == Role::User)
            && self.context.last().is_none_or(|t| t.role == Role::User)
            && self.context.windows(2).all(|w| w[0].role != w[1].role)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Collapses runs of whitespace to one space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_play(document: &str, play_id: &str) -> Result<RawPlay, CorpusError> {
    let mut play = RawPlay {
        play_id: play_id.to_string(),
        title: String::new(),
        author: String::new(),
        lines: Vec::new(),
    };
    for (n, raw) in document.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once(':') {
                match key.trim().to_ascii_lowercase().as_str() {
                    "title" => play.title = value.trim().to_string(),
                    "author" => play.author = value.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        let (speaker, text) = line.split_once(':').ok_or(CorpusError::MalformedLine(n + 1))?;
        let speaker = speaker.trim();
        if speaker.is_empty() {
            return Err(CorpusError::MalformedLine(n + 1));
        }
        play.lines.push((speaker.to_string(), text.trim().to_string()));
    }
    if play.lines.is_empty() {
        return Err(CorpusError::EmptyPlay);
    }
    if play.title.is_empty() {
        play.title = play_id.to_string();
    }
    Ok(play)
}

/// One cue per non-empty line, indices re-compacted to `0..n`.
pub fn extract_cues(play: &RawPlay) -> Vec<Cue> {
    play.lines
        .iter()
        .filter_map(|(speaker, text)| {
            let text = normalize_whitespace(text);
            (!text.is_empty()).then(|| (normalize_whitespace(speaker), text))
        })
        .enumerate()
        .map(|(index, (speaker, text))| Cue {
            play_id: play.play_id.clone(),
            index,
            speaker,
            text,
        })
        .collect()
}

/// Pairs cues positionally: even indices speak as USER, odd as AGENT. Each
/// AGENT cue becomes a target whose context is the up to `max_context_turns`
/// cues before it.
pub fn build_samples(cues: &[Cue], max_context_turns: usize) -> Result<Vec<DialogueSample>, CorpusError> {
    if max_context_turns == 0 || max_context_turns % 2 == 0 {
        return Err(CorpusError::InvalidContextTurns(max_context_turns));
    }
    if cues.len() < 2 {
        return Err(CorpusError::TooFewCues(cues.len()));
    }
    let samples = (1..cues.len())
        .step_by(2)
        .map(|target| {
            let start = target.saturating_sub(max_context_turns);
            let context = cues[start..target]
                .iter()
                .enumerate()
                .map(|(i, c)| Turn {
                    role: if (start + i) % 2 == 0 { Role::User } else { Role::Agent },
                    text: c.text.clone(),
                })
                .collect();
            DialogueSample {
                context,
                target: cues[target].text.clone(),
                source_play: cues[target].play_id.clone(),
            }
        })
        .collect();
    Ok(samples)
}

/// Train-set size for `n` samples: `⌊n·f⌋`, guarded against the binary
/// representation of decimal fractions (`0.29·100` must give 29).
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    let exact = n as f64 * train_fraction;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 * exact.max(1.0) {
        rounded as usize
    } else {
        exact.floor() as usize
    }
}

/// Seeded shuffle, then the first `⌊n·f⌋` samples train and the rest validate.
pub fn split(
    samples: &[DialogueSample],
    spec: SplitSpec,
) -> Result<(Vec<DialogueSample>, Vec<DialogueSample>), CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(spec.train_fraction));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = train_count(samples.len(), spec.train_fraction);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Parses every play document and concatenates their samples. Cue pairs never
/// cross play boundaries; plays with a single cue contribute nothing.
pub fn samples_from_plays<'a>(
    plays: impl IntoIterator<Item = (&'a str, &'a str)>,
    max_context_turns: usize,
) -> Result<Vec<DialogueSample>, CorpusError> {
    if max_context_turns == 0 || max_context_turns % 2 == 0 {
        return Err(CorpusError::InvalidContextTurns(max_context_turns));
    }
    let mut out = Vec::new();
    for (play_id, document) in plays {
        let cues = extract_cues(&parse_play(document, play_id)?);
        match build_samples(&cues, max_context_turns) {
            Ok(s) => out.extend(s),
            Err(CorpusError::TooFewCues(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Reads every `*.txt` script under `dir` (sorted by file name) into samples.
/// Returns the samples and the number of plays read; a directory that
/// yields no samples is an error.
pub fn ingest_dir(dir: &Path, max_context_turns: usize) -> Result<(Vec<DialogueSample>, usize), CorpusError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| CorpusError::Io { path, source }
    };
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut docs = Vec::with_capacity(files.len());
    for f in &files {
        let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        docs.push((id, fs::read_to_string(f).map_err(io(f))?));
    }
    let samples = samples_from_plays(docs.iter().map(|(i, d)| (i.as_str(), d.as_str())), max_context_turns)?;
    if samples.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok((samples, files.len()))
}

/// Writes one JSON record per line.
pub fn write_samples(path: &Path, samples: &[DialogueSample]) -> Result<(), CorpusError> {
    let err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(err)?);
    for s in samples {
        let line = serde_json::to_string(s).expect("samples serialize");
        writeln!(w, "{line}").map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn read_samples(path: &Path) -> Result<Vec<DialogueSample>, CorpusError> {
    let p = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io { path: p.clone(), source })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: p.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Record {
            path: p.clone(),
            line: n + 1,
            source,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cues(texts: &[&str]) -> Vec<Cue> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| Cue {
                play_id: "p".into(),
                index,
                speaker: format!("S{}", index % 2),
                text: t.to_string(),
            })
            .collect()
    }

    fn dummy_samples(n: usize) -> Vec<DialogueSample> {
        (0..n)
            .map(|i| DialogueSample {
                context: vec![Turn::user(format!("q{i}"))],
                target: format!("a{i}"),
                source_play: "p".into(),
            })
            .collect()
    }

    #[test]
    fn parse_minimal_script() {
        let p = parse_play("A: hi\nB: ho", "x").unwrap();
        assert_eq!(p.lines, vec![("A".into(), "hi".into()), ("B".into(), "ho".into())]);
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let p = parse_play("# title\n\nA: x", "x").unwrap();
        assert_eq!(p.lines, vec![("A".into(), "x".into())]);
        let p = parse_play("# title: Die Mutter\n# author: anon\nA: x", "x").unwrap();
        assert_eq!((p.title.as_str(), p.author.as_str()), ("Die Mutter", "anon"));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_play("A hi", "x"), Err(CorpusError::MalformedLine(1))));
        assert!(matches!(parse_play("A: ok\n\n: bad", "x"), Err(CorpusError::MalformedLine(3))));
        assert!(matches!(parse_play("# only\n\n", "x"), Err(CorpusError::EmptyPlay)));
    }

    #[test]
    fn cue_extraction() {
        let two = extract_cues(&parse_play("A: hi\nB: ho", "x").unwrap());
        assert_eq!(two.iter().map(|c| c.index).collect::<Vec<_>>(), [0, 1]);

        let gap = extract_cues(&parse_play("A: eins\nB:    \nA: zwei", "x").unwrap());
        assert_eq!(gap.len(), 2);
        assert_eq!((gap[1].index, gap[1].text.as_str()), (1, "zwei"));

        let doc = "A: erste  Zeile\nB:zweite\n# Bühne\nA:   dritte   Zeile \nB: vierte";
        let four = extract_cues(&parse_play(doc, "x").unwrap());
        // direct scan of the script lines
        let scanned: Vec<String> = doc
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| normalize_whitespace(l.split_once(':').unwrap().1))
            .collect();
        assert_eq!(four.iter().map(|c| c.text.clone()).collect::<Vec<_>>(), scanned);
    }

    #[test]
    fn pairwise_samples() {
        let s = build_samples(&cues(&["c1", "c2", "c3", "c4"]), 1).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].context.clone(), s[0].target.as_str()), (vec![Turn::user("c1")], "c2"));
        assert_eq!((s[1].context.clone(), s[1].target.as_str()), (vec![Turn::user("c3")], "c4"));
    }

    #[test]
    fn windowed_samples() {
        let s = build_samples(&cues(&["c1", "c2", "c3", "c4"]), 3).unwrap();
        assert_eq!(s[0].context, vec![Turn::user("c1")]);
        assert_eq!(s[1].context, vec![Turn::user("c1"), Turn::agent("c2"), Turn::user("c3")]);
        assert_eq!(s[1].target, "c4");
        assert!(s.iter().all(DialogueSample::is_well_formed));
    }

    #[test]
    fn sample_errors() {
        assert!(matches!(build_samples(&cues(&["c1"]), 1), Err(CorpusError::TooFewCues(1))));
        assert!(matches!(build_samples(&cues(&["a", "b"]), 2), Err(CorpusError::InvalidContextTurns(2))));
    }

    #[test]
    fn split_sizes() {
        let s = dummy_samples(10);
        let spec = |f| SplitSpec { train_fraction: f, seed: 3 };
        let (t, v) = split(&s, spec(0.8)).unwrap();
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t, v) = split(&s, spec(0.9)).unwrap();
        assert_eq!((t.len(), v.len()), (9, 1));
        assert_eq!(split(&s, spec(0.8)).unwrap(), split(&s, spec(0.8)).unwrap());
        assert!(matches!(split(&[], spec(0.8)), Err(CorpusError::EmptyInput)));
        assert!(matches!(split(&s, spec(1.0)), Err(CorpusError::InvalidFraction(_))));
        assert_eq!(train_count(100, 0.29), 29);
    }

    #[test]
    fn table_one_rows_add_up() {
        // (train, validation, total) rows of the reported dataset table
        for (train, val, total) in [(433_979usize, 108_495usize, 542_474usize), (15_966, 1_774, 17_740)] {
            assert_eq!(train + val, total);
        }
        let s = dummy_samples(137);
        for f in [0.8, 0.9] {
            let (t, v) = split(&s, SplitSpec { train_fraction: f, seed: 0 }).unwrap();
            assert_eq!(t.len() + v.len(), s.len());
        }
    }

    #[test]
    fn jsonl_round_trip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let samples = build_samples(&cues(&["Wer da?", "Ich.", "Was willst du?", "Brot."]), 3).unwrap();
        write_samples(&path, &samples).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"context":[{"role":"USER","text":"Wer da?"}],"target":"Ich.","source_play":"p"}"#
        );
        assert_eq!(read_samples(&path).unwrap(), samples);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..200, f in 0.05f64..0.95, seed in any::<u64>()) {
            let s = dummy_samples(n);
            let (t, v) = split(&s, SplitSpec { train_fraction: f, seed }).unwrap();
            prop_assert_eq!(t.len(), train_count(n, f));
            let mut all: Vec<_> = t.iter().chain(&v).map(|x| x.target.clone()).collect();
            all.sort();
            let mut expected: Vec<_> = s.iter().map(|x| x.target.clone()).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
        }

        #[test]
        fn pairwise_count_is_half(n in 2usize..40) {
            let texts: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            prop_assert_eq!(build_samples(&cues(&refs), 1).unwrap().len(), n / 2);
        }

        #[test]
        fn cues_reproduce_the_script(lines in proptest::collection::vec(("[A-Z]{1,6}", "[a-zäö ]{1,20}"), 1..12)) {
            let doc: String = lines.iter().map(|(s, t)| format!("{s}: {t}\n")).collect();
            let play = parse_play(&doc, "p");
            let kept: Vec<_> = lines
                .iter()
                .map(|(s, t)| (s.clone(), normalize_whitespace(t)))
                .filter(|(_, t)| !t.is_empty())
                .collect();
            let Ok(play) = play else { return Ok(()) };
            let cues = extract_cues(&play);
            let rebuilt: Vec<_> = cues.iter().map(|c| (c.speaker.clone(), c.text.clone())).collect();
            prop_assert_eq!(rebuilt, kept);
        }
    }
}
