//! Starts the chat service on a local port, holds a three-line
//! conversation over HTTP, and prints the stored transcript.
//!
//! `cargo run --example http_chat`

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;

use cuelm::checkpoint::Checkpoint;
use cuelm::model::{ModelConfig, ModelState};
use cuelm::serve::{router, AppState, LoadedModel};
use cuelm::tokenizer::Vocabulary;
use serde_json::{json, Value};

fn request(addr: SocketAddr, method: &str, path: &str, body: &Value) -> Value {
    let body = if body.is_null() { String::new() } else { body.to_string() };
    let mut s = TcpStream::connect(addr).expect("connect");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .expect("send");
    let mut raw = String::new();
    s.read_to_string(&mut raw).expect("read");
    let (_, payload) = raw.split_once("\r\n\r\n").expect("http response");
    serde_json::from_str(payload).expect("json body")
}

pub fn run_example() -> Value {
    let vocab = Vocabulary::bytes_only();
    let config = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 128,
        ..ModelConfig::desk(vocab.len())
    };
    let ck = Checkpoint::new(ModelState::<f32>::init(config, 1).expect("config"), vocab, Vec::new());
    let state = AppState::new(Some(LoadedModel::from_checkpoint(&ck, "in-memory").expect("model")));

    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).expect("bind");
    let addr = listener.local_addr().expect("addr");
    rt.spawn(async move { axum::serve(listener, router(Arc::new(state))).await });

    println!("health: {}", request(addr, "GET", "/api/health", &Value::Null));
    let created = request(addr, "POST", "/api/session", &json!({"seed": 3, "max_new_tokens": 10}));
    let id = created["session_id"].as_str().expect("id").to_string();
    for line in ["Guten Abend.", "Wo ist der Hut?", "Gute Nacht."] {
        let r = request(addr, "POST", "/api/chat", &json!({"session_id": id, "message": line}));
        println!("> {line}\n< {}", r["reply"]);
    }
    let transcript = request(addr, "GET", &format!("/api/session/{id}"), &Value::Null);
    println!("{} turns stored", transcript["turns"].as_array().map_or(0, Vec::len));
    transcript
}

#[allow(dead_code)]
fn main() {
    run_example();
}
