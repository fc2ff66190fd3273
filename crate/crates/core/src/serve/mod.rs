//! Command-line entry point and the HTTP chat service.

mod http;

pub use http::{
    router, serve, ApiError, AppState, ChatRequest, ChatResponse, LoadedModel, SamplerOverrides, SessionCreated,
    Transcript, MAX_TEMPERATURE, MIN_TEMPERATURE,
};

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::{self, CorpusError};
use crate::eval::{self, BleuSchedule, EvalError};
use crate::generate::{generate_reply, ChatSession, GenerateError, SamplerConfig};
use crate::model::{InferenceModel, ModelError};
use crate::train::{self, StagePlan, TrainError};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("http: {0}")]
    Http(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ServeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cuelm", version, about = "Train and talk to cue-level dialogue agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a directory of play scripts into a sample file.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = corpus::DEFAULT_MAX_CONTEXT_TURNS)]
        max_context_turns: usize,
    },
    /// Run a staged training plan.
    Train {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Perplexity and the BLEU schedule on a sample file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// TOML schedule; the default schedule when absent.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// A second checkpoint to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the reports as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Talk to a checkpoint in the terminal. `/quit` or end of input leaves.
    Chat {
        #[arg(long, env = "CUELM_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 128)]
        max_new_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP chat service.
    Serve {
        #[arg(long, env = "CUELM_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "CUELM_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = "CUELM_MAX_SESSIONS", default_value_t = 64)]
        max_sessions: usize,
        /// Line-delimited request log.
        #[arg(long, env = "CUELM_LOG")]
        log: Option<PathBuf>,
        /// Directory for per-session transcript files.
        #[arg(long, env = "CUELM_TRANSCRIPTS")]
        transcripts: Option<PathBuf>,
        #[arg(long, env = "CUELM_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn load_schedule(path: Option<&Path>) -> Result<BleuSchedule, ServeError> {
    match path {
        None => Ok(BleuSchedule::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ServeError::io(p, e))?;
            toml::from_str(&text).map_err(|e| ServeError::Schedule(e.to_string()))
        }
    }
}

fn run_eval(
    checkpoint: &Path,
    dataset: &Path,
    schedule: Option<&Path>,
    baseline: Option<&Path>,
    seed: u64,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), ServeError> {
    let samples = corpus::read_samples(dataset)?;
    let schedule = load_schedule(schedule)?;
    let name = dataset.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    let mut records = Vec::new();
    let mut evaluate = |path: &Path, out: &mut dyn Write| -> Result<eval::BleuReport, ServeError> {
        let ck = Checkpoint::<f32>::load(path)?;
        let ppl = eval::perplexity(&ck.state, &ck.vocab, &name, &samples, ck.state.config.context_len)?;
        let model = InferenceModel::new(&ck.state)?;
        let bleu = eval::run_bleu_schedule(&model, &ck.vocab, &samples, &schedule, seed)?;
        let w = |e| ServeError::io(Path::new("stdout"), e);
        writeln!(out, "{}", path.display()).map_err(w)?;
        writeln!(out, "  {ppl}").map_err(w)?;
        for s in &bleu.sizes {
            writeln!(out, "  BLEU n={:<5} mean {:.4}  trials {:?}", s.size, s.mean, s.trials).map_err(w)?;
        }
        writeln!(out, "  BLEU (avg) {:.4}", bleu.grand_mean).map_err(w)?;
        records.push(serde_json::json!({"checkpoint": path.display().to_string(), "perplexity": ppl, "bleu": bleu}));
        Ok(bleu)
    };
    let main = evaluate(checkpoint, out)?;
    if let Some(b) = baseline {
        let base = evaluate(b, out)?;
        let table = eval::compare_models(&b.display().to_string(), &base, &checkpoint.display().to_string(), &main)?;
        writeln!(out, "{table}").map_err(|e| ServeError::io(Path::new("stdout"), e))?;
    }
    if let Some(p) = report {
        let text = serde_json::to_string_pretty(&records).expect("reports serialize");
        std::fs::write(p, text).map_err(|e| ServeError::io(p, e))?;
    }
    Ok(())
}

fn run_chat(ck_path: &Path, sampler: SamplerConfig, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), ServeError> {
    let ck = Checkpoint::<f32>::load(ck_path)?;
    let model = InferenceModel::new(&ck.state)?;
    let mut session = ChatSession::new("terminal", sampler);
    let w = |e| ServeError::io(Path::new("stdout"), e);
    let mut line = String::new();
    loop {
        write!(out, "you> ").map_err(w)?;
        out.flush().map_err(w)?;
        line.clear();
        if input.read_line(&mut line).map_err(|e| ServeError::io(Path::new("stdin"), e))? == 0 {
            break;
        }
        let msg = line.trim();
        if msg == "/quit" {
            break;
        }
        if msg.is_empty() {
            continue;
        }
        match generate_reply(&model, &ck.vocab, &mut session, msg) {
            Ok(reply) => writeln!(out, "agent> {reply}").map_err(w)?,
            Err(GenerateError::MessageTooLong { len, budget }) => {
                writeln!(out, "(message of {len} tokens does not fit in {budget})").map_err(w)?
            }
            Err(e) => return Err(e.into()),
        }
    }
    writeln!(out).map_err(w)?;
    Ok(())
}

/// Executes one parsed command.
pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), ServeError> {
    let w = |e| ServeError::io(Path::new("stdout"), e);
    match cli.command {
        Command::Ingest {
            input: dir,
            out: dest,
            max_context_turns,
        } => {
            let (samples, plays) = corpus::ingest_dir(&dir, max_context_turns)?;
            corpus::write_samples(&dest, &samples)?;
            writeln!(out, "wrote {} samples from {plays} plays to {}", samples.len(), dest.display()).map_err(w)?;
        }
        Command::Train { plan } => {
            let plan = StagePlan::load(&plan)?;
            let outcome = train::run_two_stage(&plan)?;
            for (i, st) in outcome.stages.iter().enumerate() {
                let best = st.history.iter().map(|r| r.val_ppl).fold(f64::INFINITY, f64::min);
                writeln!(out, "stage {}: {} epochs, {} steps, best val ppl {best:.4}", i + 1, st.history.len(), st.steps)
                    .map_err(w)?;
            }
            writeln!(out, "checkpoint written to {}", plan.output.display()).map_err(w)?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            schedule,
            baseline,
            seed,
            report,
        } => run_eval(&checkpoint, &dataset, schedule.as_deref(), baseline.as_deref(), seed, report.as_deref(), out)?,
        Command::Chat {
            checkpoint,
            k,
            temperature,
            max_new_tokens,
            seed,
        } => {
            let sampler = SamplerConfig {
                k,
                temperature,
                max_new_tokens,
                seed,
                ..Default::default()
            };
            sampler.validate()?;
            run_chat(&checkpoint, sampler, input, out)?;
        }
        Command::Serve {
            checkpoint,
            addr,
            max_sessions,
            log,
            transcripts,
            seed,
        } => {
            let model = checkpoint.as_deref().map(LoadedModel::load).transpose()?;
            if model.is_none() {
                tracing::warn!("no checkpoint given; chat requests will get 503");
            }
            let mut state = AppState::new(model).max_sessions(max_sessions).default_seed(seed);
            if let Some(p) = &log {
                state = state.request_log(p)?;
            }
            if let Some(d) = &transcripts {
                state = state.transcript_dir(d)?;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServeError::Http(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServeError::Http(e.to_string()))?;
                let bound = listener.local_addr().map_err(|e| ServeError::Http(e.to_string()))?;
                writeln!(out, "listening on http://{bound}").map_err(w)?;
                out.flush().map_err(w)?;
                serve(listener, Arc::new(state)).await
            })?;
        }
    }
    Ok(())
}

/// Parses `argv` and runs it. Returns the process exit code: 0 on success,
/// 2 on a usage error, 1 on a runtime failure.
pub fn cli<I, T>(argv: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match run(parsed, input, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
