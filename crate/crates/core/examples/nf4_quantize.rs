//! Quantizes a normally distributed weight matrix to 4-bit NF4 blocks and
//! reports reconstruction error and storage.
//!
//! `cargo run --release --example nf4_quantize`

use cuelm::numerics::Tensor;
use cuelm::qlora::{dequantize, nf4_codebook, quantize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run_example(rows: usize, cols: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = Tensor::<f32>::from_fn(&[rows, cols], |_| {
        let x: f64 = StandardNormal.sample(&mut rng);
        x as f32
    });
    let q = quantize(&w, 64).expect("quantize");
    let back = dequantize::<f32>(&q);
    let rmse = (w.data().iter().zip(back.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    println!("levels: {:?}", nf4_codebook().levels().map(|l| (l * 1e4).round() / 1e4));
    println!(
        "{rows}x{cols}: {} bytes dense, {} bytes quantized; rmse {rmse:.4}, max error {:.4}",
        w.len() * 4,
        q.to_bytes().len(),
        w.max_abs_diff(&back)
    );
    rmse
}

#[allow(dead_code)]
fn main() {
    run_example(512, 512);
}
