#[path = "../examples/autograd.rs"]
mod autograd;
#[path = "../examples/bleu_report.rs"]
mod bleu_report;
#[path = "../examples/checkpoint_round_trip.rs"]
mod checkpoint_round_trip;
#[path = "../examples/http_chat.rs"]
mod http_chat;
#[path = "../examples/ingest_scripts.rs"]
mod ingest_scripts;
#[path = "../examples/nf4_quantize.rs"]
mod nf4_quantize;
#[path = "../examples/sample_reply.rs"]
mod sample_reply;
#[path = "../examples/tokenize.rs"]
mod tokenize;
#[path = "../examples/two_stage.rs"]
mod two_stage;

#[test]
fn autograd_example() {
    let (a, n) = autograd::run_example();
    assert!((a - n).abs() <= 1e-6 * a.abs().max(1e-3));
}

#[test]
fn bleu_report_example() {
    let table = bleu_report::run_example();
    assert!(table.contains("BLEU (avg)"));
    assert!(table.contains("+0.405"));
}

#[test]
fn checkpoint_example() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(checkpoint_round_trip::run_example(&dir.path().join("m.ckpt")), 0.0);
}

#[test]
fn http_chat_example() {
    let t = http_chat::run_example();
    assert_eq!(t["turns"].as_array().unwrap().len(), 6);
}

#[test]
fn ingest_example() {
    let dir = tempfile::tempdir().unwrap();
    let (plays, train, val) = ingest_scripts::run_example(dir.path());
    assert_eq!((plays, train + val), (4, 24));
}

#[test]
fn nf4_example() {
    let rmse = nf4_quantize::run_example(64, 64);
    assert!(rmse > 0.0 && rmse < 0.2);
}

#[test]
fn sample_reply_example() {
    let s = sample_reply::run_example();
    assert_eq!(s.turns.len(), 4);
    assert!(s.roles_alternate());
}

#[test]
fn tokenize_example() {
    assert!(tokenize::run_example().merge_count() > 0);
}

#[test]
fn two_stage_example() {
    let settings = two_stage::Settings {
        plays_a: 8,
        plays_b: 8,
        epochs_a: 2,
        epochs_b: 3,
    };
    let s = two_stage::run_example(&settings, 0, false);
    assert!(s.stage2_ppl < s.stage1_ppl);
    assert!(s.stage1_bleu.is_finite() && s.stage2_bleu.is_finite());
}
