//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cuelm::checkpoint::Checkpoint;
use cuelm::corpus::synthetic::{generate_corpus, Style};
use cuelm::corpus::{samples_from_plays, split, DialogueSample, Role, SplitSpec};
use cuelm::eval::{self, bleu, BleuConfig, BleuSchedule};
use cuelm::generate::{sample_next, SamplerConfig};
use cuelm::model::{forward, forward_taped, InferenceModel, ModelConfig, ModelState, Trainable, Weight};
use cuelm::numerics::{Tape, Tensor};
use cuelm::qlora::{self, nf4_codebook};
use cuelm::serve::{router, AppState, ChatResponse, LoadedModel, SessionCreated, Transcript};
use cuelm::tokenizer::{build_vocab, Vocabulary, EOS, EOS_ID};
use cuelm::train::{run_stages, sample_text, train_stage, AdapterConfig, Dataset, PreparedStage, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 32,
        ..ModelConfig::desk(vocab)
    }
}

fn toy_samples(style: Style, plays: usize, seed: u64) -> Vec<DialogueSample> {
    let docs = generate_corpus(style, plays, 6, seed);
    samples_from_plays(docs.iter().map(|(i, d)| (i.as_str(), d.as_str())), 3).expect("generated plays parse")
}

/// Mean next-token NLL from plain logits, computed without the tape.
fn direct_nll(logits: &Tensor<f64>, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / targets.len() as f64
}

/// Central differences in f64 at h = 1e-5 carry roughly 1e-10 of rounding
/// noise, so gradients smaller than this are compared absolutely to 1e-9.
const DENOMINATOR_FLOOR: f64 = 1e-5;

fn gradient_check() -> Outcome {
    let state = ModelState::<f64>::init(tiny(64), 5).unwrap();
    let ids = [3usize, 17, 9, 40, 2, 33, 21, 5, 63, 0, 48, 12];
    let (input, targets) = (&ids[..ids.len() - 1], &ids[1..]);
    let mut tape = Tape::new();
    let out = forward_taped(&state, &mut tape, input, Some(Trainable::Full)).unwrap();
    let loss = tape.cross_entropy(out.logits, targets).unwrap();
    let grads = tape.backward(loss).unwrap();
    let loss_at = |s: &ModelState<f64>| direct_nll(&forward(s, input).unwrap(), targets);
    let h = 1e-5;
    let (mut checked, mut worst, mut worst_at) = (0usize, 0f64, String::new());
    for (key, var) in &out.params {
        let Some(g) = grads.get(*var) else {
            return outcome(false, format!("no gradient for {key}"));
        };
        let mut probe = state.clone();
        for i in 0..g.len() {
            let x0 = probe.tensor(key).unwrap().data()[i];
            probe.tensor_mut(key).unwrap().data_mut()[i] = x0 + h;
            let up = loss_at(&probe);
            probe.tensor_mut(key).unwrap().data_mut()[i] = x0 - h;
            let down = loss_at(&probe);
            probe.tensor_mut(key).unwrap().data_mut()[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let an = g.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(DENOMINATOR_FLOOR);
            if rel > worst {
                worst = rel;
                worst_at = format!("{key}[{i}] (analytic {an:.6e}, numeric {fd:.6e})");
            }
            checked += 1;
        }
    }
    let total = state.parameter_count();
    outcome(
        worst < 1e-4 && checked == total,
        format!("{checked}/{total} entries, worst relative error {worst:.2e} (floor {DENOMINATOR_FLOOR:e}) at {worst_at}"),
    )
}

fn uniform_perplexity() -> Outcome {
    let vocab = Vocabulary::bytes_only();
    let mut state = ModelState::<f64>::init(tiny(vocab.len()), 1).unwrap();
    state.weights.insert("lm_head".into(), Weight::Dense(Tensor::zeros(&[vocab.len(), 16])));
    let samples = toy_samples(Style::Household, 2, 3);
    let report = eval::perplexity(&state, &vocab, "toy", &samples, 32).unwrap();
    let err = (report.perplexity - vocab.len() as f64).abs();
    outcome(
        err < 1e-6,
        format!("perplexity {:.9} over {} tokens, V = {}", report.perplexity, report.token_count, vocab.len()),
    )
}

/// NF4 levels as published with the QLoRA reference implementation.
const PUBLISHED_NF4: [f64; 16] = [
    -1.0,
    -0.6961928009986877,
    -0.5250730514526367,
    -0.39491748809814453,
    -0.28444138169288635,
    -0.18477343022823334,
    -0.09105003625154495,
    0.0,
    0.07958029955625534,
    0.16093020141124725,
    0.24611230194568634,
    0.33791524171829224,
    0.44070982933044434,
    0.5626170039176941,
    0.7229568362236023,
    1.0,
];

fn nf4_codebook_table() -> Outcome {
    let levels = nf4_codebook().levels();
    let worst = levels.iter().zip(PUBLISHED_NF4).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(worst < 1e-6, format!("max deviation from the published table {worst:.2e}"))
}

fn nf4_round_trip() -> Outcome {
    let n = 1_000_000;
    let block = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w = Tensor::<f32>::from_fn(&[1000, 1000], |_| {
        let x: f64 = StandardNormal.sample(&mut rng);
        x as f32
    });
    let t = Instant::now();
    let q = qlora::quantize(&w, block).unwrap();
    let back = qlora::dequantize::<f32>(&q);
    let mut sorted = PUBLISHED_NF4;
    sorted.sort_by(f64::total_cmp);
    let max_gap = sorted.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max);
    let mut violations = 0;
    let mut worst_ratio = 0f64;
    for (b, chunk) in w.data().chunks(block).enumerate() {
        let absmax = chunk.iter().map(|v| v.abs()).fold(0f32, f32::max) as f64;
        let bound = absmax * max_gap / 2.0;
        for (j, &x) in chunk.iter().enumerate() {
            let err = (x as f64 - back.data()[b * block + j] as f64).abs();
            worst_ratio = worst_ratio.max(err / bound);
            if err > bound * (1.0 + 1e-6) {
                violations += 1;
            }
        }
    }
    let again = qlora::quantize(&back, block).unwrap();
    let idempotent = again.packed_codes() == q.packed_codes() && again.absmax() == q.absmax();
    outcome(
        q.len() == n && violations == 0 && idempotent,
        format!(
            "{n} weights, worst error / bound {worst_ratio:.4}, {violations} violations, idempotent {idempotent}, {:.1?}",
            t.elapsed()
        ),
    )
}

fn quantized_snapshot(state: &ModelState<f32>) -> BTreeMap<String, (Vec<u8>, Vec<f32>)> {
    state
        .weights
        .iter()
        .filter_map(|(k, w)| match w {
            Weight::Quantized(q) => Some((k.clone(), (q.packed_codes().to_vec(), q.absmax().to_vec()))),
            Weight::Dense(_) => None,
        })
        .collect()
}

fn freeze_contract() -> Outcome {
    let vocab = build_vocab(&sample_text(&toy_samples(Style::Household, 10, 1)), 300).unwrap();
    let (train, val) = split(&toy_samples(Style::Household, 10, 1), SplitSpec { train_fraction: 0.8, seed: 1 }).unwrap();
    let mut state = ModelState::<f32>::init(tiny(vocab.len()), 4).unwrap();
    cuelm::train::prepare_adapters(&mut state, &AdapterConfig::default()).unwrap();
    let codes_before = quantized_snapshot(&state);
    let adapters_before = state.adapters.clone();
    let dense_before: Vec<_> = state.weights.iter().filter(|(_, w)| matches!(w, Weight::Dense(_))).map(|(k, w)| (k.clone(), w.to_dense())).collect();
    let config = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        epochs: 1000,
        patience: 1000,
        max_steps: Some(50),
        ..TrainConfig::default()
    };
    let data = Dataset::from_split(&vocab, &train, &val, 32);
    let t = Instant::now();
    let out = train_stage(state, &data, &config, Trainable::AdaptersOnly, 1).unwrap();
    let (steps, final_state) = (out.steps, &out.state);
    let codes_same = quantized_snapshot(final_state) == codes_before && !codes_before.is_empty();
    let dense_same = dense_before.iter().all(|(k, t)| final_state.weights[k].to_dense() == *t);
    let changed = final_state
        .adapters
        .iter()
        .filter(|(k, a)| a.b != adapters_before[*k].b || a.a != adapters_before[*k].a)
        .count();
    outcome(
        steps == 50 && codes_same && dense_same && changed == adapters_before.len(),
        format!(
            "{steps} steps, {} quantized tensors bit-identical {codes_same}, frozen dense {dense_same}, {changed}/{} adapters changed, {:.1?}",
            codes_before.len(),
            adapters_before.len(),
            t.elapsed()
        ),
    )
}

fn adapter_transparency() -> Outcome {
    let mut state = ModelState::<f32>::init(tiny(64), 8).unwrap();
    state.quantize_base(64).unwrap();
    let dequantized = ModelState::from_params(state.config.clone(), state.merged().unwrap()).unwrap();
    state.attach_adapters(&["wq", "wk", "wv", "wo", "w1", "w2"], 4, 8.0, 9).unwrap();
    let ids = [1usize, 5, 9, 13, 2, 60, 33, 7];
    let loss = |s: &ModelState<f32>| {
        let mut tape = Tape::new();
        let out = forward_taped(s, &mut tape, &ids[..7], Some(Trainable::AdaptersOnly)).unwrap();
        let l = tape.cross_entropy(out.logits, &ids[1..]).unwrap();
        tape.value(l).data()[0]
    };
    let base_loss = {
        let mut tape = Tape::new();
        let out = forward_taped(&dequantized, &mut tape, &ids[..7], None).unwrap();
        let l = tape.cross_entropy(out.logits, &ids[1..]).unwrap();
        tape.value(l).data()[0]
    };
    let init_exact = loss(&state).to_bits() == base_loss.to_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for a in state.adapters.values_mut() {
        a.b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    let adapted = forward(&state, &ids).unwrap();
    let merged = ModelState::from_params(state.config.clone(), state.merged().unwrap()).unwrap();
    let diff = adapted.max_abs_diff(&forward(&merged, &ids).unwrap());
    outcome(
        init_exact && diff < 1e-5,
        format!("init loss {} vs dequantized {}, merged max |Δlogit| {diff:.2e}", loss(&dequantized), base_loss),
    )
}

struct StageScores {
    ppl: [f64; 2],
    bleu: [f64; 2],
}

/// Style A trains every parameter for stage 1 on an 80/20 split; style B then
/// trains adapters over the quantized stage-1 base on a 90/10 split. Both
/// stage models are scored on the style-B validation split.
fn two_stage(seed: u64) -> StageScores {
    let a = toy_samples(Style::Household, 30, seed);
    let b = toy_samples(Style::Marketplace, 30, seed + 1000);
    let (a_train, a_val) = split(&a, SplitSpec { train_fraction: 0.8, seed }).unwrap();
    let (b_train, b_val) = split(&b, SplitSpec { train_fraction: 0.9, seed }).unwrap();
    let vocab = build_vocab(&sample_text(&a_train), 325).unwrap();
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
        stage(&a_train, &a_val, 3e-3, 10, Trainable::Full),
        stage(&b_train, &b_val, 1e-2, 60, Trainable::AdaptersOnly),
    ];
    let outcomes = run_stages(ModelState::<f32>::init(config.clone(), seed).unwrap(), &stages).unwrap();
    let schedule = BleuSchedule::default();
    let score = |s: &ModelState<f32>| {
        let ppl = eval::perplexity(s, &vocab, "style-b", &b_val, config.context_len).unwrap().perplexity;
        let model = InferenceModel::new(s).unwrap();
        (ppl, eval::run_bleu_schedule(&model, &vocab, &b_val, &schedule, seed).unwrap().grand_mean)
    };
    let (p1, b1) = score(&outcomes[0].state);
    let (p2, b2) = score(&outcomes[1].state);
    StageScores {
        ppl: [p1, p2],
        bleu: [b1, b2],
    }
}

/// Clipped n-gram precision by plain counting.
fn clipped_precision(cand: &[&str], reference: &[&str], n: usize) -> f64 {
    let grams = |t: &[&str]| {
        let mut m: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for w in t.windows(n) {
            *m.entry(w.iter().map(|s| s.to_string()).collect()).or_default() += 1;
        }
        m
    };
    let (c, r) = (grams(cand), grams(reference));
    let matched: usize = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    matched as f64 / c.values().sum::<usize>() as f64
}

fn bleu_oracle() -> Outcome {
    let cand = ["the", "the", "the", "cat"];
    let reference = ["the", "cat", "sat", "down"];
    let expected = (clipped_precision(&cand, &reference, 1) * clipped_precision(&cand, &reference, 2)).sqrt();
    let got = bleu("the the the cat", "the cat sat down", &BleuConfig::unsmoothed(2));
    let identity = bleu("wer zahlt, befiehlt.", "wer zahlt, befiehlt.", &BleuConfig::unsmoothed(4));
    let disjoint = bleu("ein zwei drei vier", "funf sechs sieben acht", &BleuConfig::unsmoothed(4));
    outcome(
        (got - expected).abs() < 1e-9 && (identity - 1.0).abs() < 1e-12 && disjoint == 0.0,
        format!("hand {expected:.15} vs {got:.15}; identity {identity}; disjoint {disjoint}"),
    )
}

fn sampling_support() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let logits: Vec<f64> = (0..300).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let cfg = SamplerConfig::default();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let top: Vec<usize> = order[..cfg.k].to_vec();
    let m = logits[top[0]] / cfg.temperature;
    let weights: Vec<f64> = top.iter().map(|&i| (logits[i] / cfg.temperature - m).exp()).collect();
    let z: f64 = weights.iter().sum();
    let draws = 10_000;
    let mut counts = vec![0usize; logits.len()];
    for _ in 0..draws {
        counts[sample_next(&logits, &cfg, &mut rng)] += 1;
    }
    let outside = (0..logits.len()).filter(|i| !top.contains(i)).map(|i| counts[i]).sum::<usize>();
    let mut within = true;
    let mut detail = Vec::new();
    for r in 0..3 {
        let p = weights[r] / z;
        let f = counts[top[r]] as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        within &= (f - p).abs() <= 3.0 * se;
        detail.push(format!("{f:.4}/{p:.4}"));
    }
    outcome(
        outside == 0 && within,
        format!("{outside} draws outside top-{}, top-3 empirical/exact {}", cfg.k, detail.join(" ")),
    )
}

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).expect("connect");
    let body = body.unwrap_or("");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).expect("send");
    let mut raw = String::new();
    stream.read_to_string(&mut raw).expect("read");
    let status = raw.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let body = raw.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

fn scripted_chat(checkpoint: &Checkpoint<f32>, seed: u64) -> Result<Transcript, String> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let model = LoadedModel::from_checkpoint(checkpoint, "acceptance").map_err(|e| e.to_string())?;
    let app = router(Arc::new(AppState::new(Some(model))));
    rt.spawn(async move { axum::serve(listener, app).await });
    let (status, body) = http(addr, "POST", "/api/session", Some(&format!("{{\"seed\": {seed}}}")));
    if status != 201 {
        return Err(format!("create session: {status} {body}"));
    }
    let created: SessionCreated = serde_json::from_str(&body).map_err(|e| e.to_string())?;
    let lines = ["Guten Abend.", "Wo ist der Hut?", "Was kostet der Korb?", "Wer kauft den Mantel?", "Gute Nacht."];
    for (i, line) in lines.iter().enumerate() {
        let req = serde_json::json!({"session_id": created.session_id, "message": line}).to_string();
        let (status, body) = http(addr, "POST", "/api/chat", Some(&req));
        if status != 200 {
            return Err(format!("chat {i}: {status} {body}"));
        }
        let resp: ChatResponse = serde_json::from_str(&body).map_err(|e| e.to_string())?;
        if resp.turn_index != 2 * i + 1 {
            return Err(format!("chat {i}: turn_index {}", resp.turn_index));
        }
    }
    let (status, body) = http(addr, "GET", &format!("/api/session/{}", created.session_id), None);
    if status != 200 {
        return Err(format!("transcript: {status} {body}"));
    }
    rt.shutdown_timeout(Duration::from_secs(1));
    serde_json::from_str(&body).map_err(|e| e.to_string())
}

fn chat_loop() -> Outcome {
    let samples = toy_samples(Style::Household, 6, 2);
    let vocab = build_vocab(&sample_text(&samples), 300).unwrap();
    let config = ModelConfig {
        context_len: 128,
        ..tiny(vocab.len())
    };
    let checkpoint = Checkpoint::new(ModelState::<f32>::init(config, 21).unwrap(), vocab.clone(), Vec::new());
    let (first, second) = match (scripted_chat(&checkpoint, 42), scripted_chat(&checkpoint, 42)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let alternating = first.turns.len() == 10
        && first.turns.iter().enumerate().all(|(i, t)| t.role == if i % 2 == 0 { Role::User } else { Role::Agent });
    let stop_free = first
        .turns
        .iter()
        .filter(|t| t.role == Role::Agent)
        .all(|t| !t.text.contains(EOS) && !vocab.encode(&t.text).ids().contains(&EOS_ID));
    let reproducible = serde_json::to_string(&first.turns).unwrap() == serde_json::to_string(&second.turns).unwrap();
    let crates: Vec<String> = std::fs::read_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/.."))
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    let primary_only = crates == ["core"];
    outcome(
        alternating && stop_free && reproducible && primary_only,
        format!(
            "{} turns alternating {alternating}, stop-free {stop_free}, same seed reproduces {reproducible}, workspace crates {crates:?}",
            first.turns.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let elapsed = t.elapsed();
        println!("{} {name}: {} ({elapsed:.1?})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, elapsed));
    };
    run("gradient correctness", &gradient_check);
    run("uniform-model perplexity", &uniform_perplexity);
    run("NF4 codebook", &nf4_codebook_table);
    run("NF4 round trip", &nf4_round_trip);
    run("QLoRA freeze contract", &freeze_contract);
    run("adapter transparency", &adapter_transparency);
    run("BLEU oracle", &bleu_oracle);
    run("sampling support", &sampling_support);
    run("chat loop contract", &chat_loop);

    let seeds: Vec<u64> = (0..10).collect();
    let t = Instant::now();
    let scores: Vec<StageScores> = seeds.iter().map(|&s| two_stage(s)).collect();
    let elapsed = t.elapsed();
    for (s, sc) in seeds.iter().zip(&scores) {
        println!(
            "     seed {s}: style-B ppl {:.3} -> {:.3}, BLEU {:.4} -> {:.4}",
            sc.ppl[0], sc.ppl[1], sc.bleu[0], sc.bleu[1]
        );
    }
    let ppl_wins = scores.iter().filter(|s| s.ppl[1] < s.ppl[0]).count();
    let bleu_wins = scores.iter().filter(|s| s.bleu[1] > s.bleu[0]).count();
    let mut report = |name: &'static str, wins: usize| {
        let o = outcome(wins >= 9 && elapsed < Duration::from_secs(30 * 60), format!("{wins}/10 seeds"));
        println!("{} {name}: {} ({elapsed:.1?} for both)", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, elapsed));
    };
    report("two-stage perplexity direction", ppl_wins);
    report("BLEU improvement direction", bleu_wins);

    let failed: Vec<&str> = results.iter().filter(|(_, o, _)| !o.passed).map(|(n, _, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
