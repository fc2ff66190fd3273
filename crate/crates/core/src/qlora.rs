//! 4-bit NormalFloat blockwise quantization and low-rank adapters.
//!
//! A frozen base matrix `W[d×k]` is stored as one 4-bit code per element plus
//! one absmax scale per block of the flattened matrix. An adapter pair
//! `A[r×k]`, `B[d×r]` adds `(alpha/r)·B·A` on top of the dequantized matrix;
//! only `A` and `B` are ever registered as trainable.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::numerics::{self, Element, NumericsError, Tape, Tensor, Var};

pub const DEFAULT_BLOCK_SIZE: usize = 64;
pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 16.0;

const NF4_MAGIC: &[u8; 4] = b"NF4T";
const NF4_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum QloraError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("adapter for {adapter} does not fit {shape:?}")]
    AdapterShape { adapter: String, shape: Vec<usize> },
    #[error("block size must be positive")]
    ZeroBlockSize,
    #[error("rank must be positive")]
    ZeroRank,
    #[error("corrupt nf4 payload: {0}")]
    Corrupt(String),
}

/// The 16 NF4 levels, ascending, spanning exactly `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Nf4Codebook {
    levels: [f64; 16],
}

/// Builds the NF4 levels from standard-normal quantiles. The 8 positive
/// levels sit at evenly spaced probabilities from `offset` down to 0.5
/// (exclusive), the 7 negative levels likewise with one fewer step, and 0 is
/// added exactly. Dividing by the largest level pins the ends to `±1`.
fn build_codebook() -> Nf4Codebook {
    let normal = Normal::standard();
    let offset = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0);
    let quantiles = |steps: usize| -> Vec<f64> {
        (0..steps)
            .map(|i| normal.inverse_cdf(offset + (0.5 - offset) * i as f64 / steps as f64))
            .collect()
    };
    let mut levels: Vec<f64> = quantiles(8);
    levels.extend(quantiles(7).into_iter().map(|q| -q));
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    let max = levels[15];
    let mut out = [0.0; 16];
    for (o, l) in out.iter_mut().zip(&levels) {
        *o = l / max;
    }
    Nf4Codebook { levels: out }
}

pub fn nf4_codebook() -> &'static Nf4Codebook {
    static BOOK: OnceLock<Nf4Codebook> = OnceLock::new();
    BOOK.get_or_init(build_codebook)
}

impl Nf4Codebook {
    pub fn levels(&self) -> &[f64; 16] {
        &self.levels
    }

    pub fn level(&self, code: u8) -> f64 {
        self.levels[code as usize]
    }

    /// Index of the level nearest `x`; ties resolve to the lower index.
    pub fn nearest(&self, x: f64) -> u8 {
        let mut best = 0u8;
        let mut best_dist = f64::INFINITY;
        for (i, &l) in self.levels.iter().enumerate() {
            let d = (x - l).abs();
            if d < best_dist {
                best = i as u8;
                best_dist = d;
            }
        }
        best
    }

    pub fn zero_code(&self) -> u8 {
        self.levels.iter().position(|&l| l == 0.0).expect("zero level") as u8
    }

    pub fn max_gap(&self) -> f64 {
        self.levels.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Blockwise NF4 representation of a tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    original_shape: Vec<usize>,
    block_size: usize,
    /// Two codes per byte, low nibble first.
    packed: Vec<u8>,
    absmax: Vec<f32>,
}

impl QuantizedTensor {
    pub fn shape(&self) -> &[usize] {
        &self.original_shape
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn len(&self) -> usize {
        self.original_shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn absmax(&self) -> &[f32] {
        &self.absmax
    }

    pub fn packed_codes(&self) -> &[u8] {
        &self.packed
    }

    pub fn code(&self, i: usize) -> u8 {
        let byte = self.packed[i / 2];
        if i % 2 == 0 {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    pub fn codes(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.code(i)).collect()
    }

    /// Rebuilds a tensor from its stored parts (checkpoint loading).
    pub fn from_parts(
        original_shape: Vec<usize>,
        block_size: usize,
        packed: Vec<u8>,
        absmax: Vec<f32>,
    ) -> Result<Self, QloraError> {
        if block_size == 0 {
            return Err(QloraError::ZeroBlockSize);
        }
        let n: usize = original_shape.iter().product();
        if packed.len() != n.div_ceil(2) || absmax.len() != n.div_ceil(block_size) {
            return Err(QloraError::Corrupt(format!(
                "{n} elements need {} code bytes and {} scales, got {} and {}",
                n.div_ceil(2),
                n.div_ceil(block_size),
                packed.len(),
                absmax.len()
            )));
        }
        if absmax.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(QloraError::Corrupt("negative or non-finite absmax".into()));
        }
        Ok(Self {
            original_shape,
            block_size,
            packed,
            absmax,
        })
    }

    /// Compact binary form: magic, version, rank, block size, element count,
    /// dims, packed codes, then little-endian `f32` scales.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::header_len(self.original_shape.len()) + self.packed.len() + 4 * self.absmax.len());
        out.extend_from_slice(NF4_MAGIC);
        out.push(NF4_VERSION);
        out.push(self.original_shape.len() as u8);
        out.extend_from_slice(&(self.block_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for &d in &self.original_shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.packed);
        for a in &self.absmax {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out
    }

    pub fn header_len(rank: usize) -> usize {
        4 + 1 + 1 + 4 + 8 + 8 * rank
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QloraError> {
        let corrupt = |m: &str| QloraError::Corrupt(m.to_string());
        if bytes.len() < Self::header_len(0) || &bytes[..4] != NF4_MAGIC || bytes[4] != NF4_VERSION {
            return Err(corrupt("bad header"));
        }
        let rank = bytes[5] as usize;
        let hl = Self::header_len(rank);
        if bytes.len() < hl {
            return Err(corrupt("truncated header"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
        let block_size = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let n = u64_at(10);
        let shape: Vec<usize> = (0..rank).map(|i| u64_at(18 + 8 * i)).collect();
        if shape.iter().product::<usize>() != n || block_size == 0 {
            return Err(corrupt("inconsistent header"));
        }
        let codes_end = hl + n.div_ceil(2);
        let total = codes_end + 4 * n.div_ceil(block_size);
        if bytes.len() != total {
            return Err(corrupt("payload length"));
        }
        let absmax = bytes[codes_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_parts(shape, block_size, bytes[hl..codes_end].to_vec(), absmax)
    }
}

/// Quantizes `w` block by block: each block is scaled by its largest
/// magnitude and every element mapped to the nearest NF4 level.
pub fn quantize<T: Element>(w: &Tensor<T>, block_size: usize) -> Result<QuantizedTensor, QloraError> {
    if block_size == 0 {
        return Err(QloraError::ZeroBlockSize);
    }
    let book = nf4_codebook();
    let zero = book.zero_code();
    let n = w.len();
    let mut packed = vec![0u8; n.div_ceil(2)];
    let mut absmax = Vec::with_capacity(n.div_ceil(block_size));
    for (b, block) in w.data().chunks(block_size).enumerate() {
        let amax = block.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max) as f32;
        absmax.push(amax);
        for (j, v) in block.iter().enumerate() {
            let code = if amax == 0.0 {
                zero
            } else {
                book.nearest(v.as_f64() / amax as f64)
            };
            let i = b * block_size + j;
            packed[i / 2] |= if i % 2 == 0 { code } else { code << 4 };
        }
    }
    Ok(QuantizedTensor {
        original_shape: w.shape().to_vec(),
        block_size,
        packed,
        absmax,
    })
}

pub fn dequantize<T: Element>(q: &QuantizedTensor) -> Tensor<T> {
    let book = nf4_codebook();
    Tensor::from_fn(&q.original_shape, |i| {
        T::from_f64(book.level(q.code(i)) * q.absmax[i / q.block_size] as f64)
    })
}

/// Trainable low-rank update for one base matrix `[d×k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T> {
    pub target_name: String,
    /// `[r×k]`
    pub a: Tensor<T>,
    /// `[d×r]`
    pub b: Tensor<T>,
    pub rank: usize,
    pub alpha: f64,
}

impl<T: Element> LoraAdapter<T> {
    /// Fresh adapter: `A` uniform in `±1/√k`, `B` exactly zero, so the adapted
    /// output initially equals the base output.
    pub fn new(
        target_name: &str,
        out_features: usize,
        in_features: usize,
        rank: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, QloraError> {
        if rank == 0 {
            return Err(QloraError::ZeroRank);
        }
        let bound = 1.0 / (in_features as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("valid range");
        Ok(Self {
            target_name: target_name.to_string(),
            a: Tensor::from_fn(&[rank, in_features], |_| T::from_f64(dist.sample(rng))),
            b: Tensor::zeros(&[out_features, rank]),
            rank,
            alpha,
        })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Checks that this adapter fits a base matrix of `shape`.
    pub fn check_fits(&self, shape: &[usize]) -> Result<(), QloraError> {
        let fits = matches!(shape, [d, k]
            if self.a.shape() == [self.rank, *k] && self.b.shape() == [*d, self.rank]);
        if fits {
            Ok(())
        } else {
            Err(QloraError::AdapterShape {
                adapter: self.target_name.clone(),
                shape: shape.to_vec(),
            })
        }
    }

    /// `(alpha/r)·B·A`, the dense update this adapter represents.
    pub fn delta(&self) -> Result<Tensor<T>, QloraError> {
        let mut d = numerics::matmul(&self.b, &self.a)?;
        let s = T::from_f64(self.scale());
        d.data_mut().iter_mut().for_each(|v| *v = *v * s);
        Ok(d)
    }
}

/// Tape handles for one adapted projection.
#[derive(Clone, Copy, Debug)]
pub struct AdapterVars {
    pub base: Var,
    pub a: Var,
    pub b: Var,
}

/// `x·baseᵀ + scale·(x·Aᵀ)·Bᵀ` over already-registered tape values.
pub fn adapted_linear<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    vars: AdapterVars,
    scale: f64,
) -> Result<Var, NumericsError> {
    let base_out = tape.matmul_nt(x, vars.base)?;
    let down = tape.matmul_nt(x, vars.a)?;
    let up = tape.matmul_nt(down, vars.b)?;
    let up = tape.scale(up, scale);
    tape.add(base_out, up)
}

/// `y = x·dequantize(q)ᵀ + (alpha/r)·(x·Aᵀ)·Bᵀ`.
///
/// The base is dequantized on the fly and registered as a constant, so it
/// never receives a gradient; `A` and `B` are registered as trainable.
pub fn adapted_matmul<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    q: &QuantizedTensor,
    adapter: &LoraAdapter<T>,
) -> Result<(Var, AdapterVars), QloraError> {
    adapter.check_fits(q.shape())?;
    let vars = AdapterVars {
        base: tape.constant(dequantize(q)),
        a: tape.param(adapter.a.clone()),
        b: tape.param(adapter.b.clone()),
    };
    Ok((adapted_linear(tape, x, vars, adapter.scale())?, vars))
}

/// Dense `W = dequantize(q) + (alpha/r)·B·A`.
pub fn merge<T: Element>(q: &QuantizedTensor, adapter: &LoraAdapter<T>) -> Result<Tensor<T>, QloraError> {
    merge_dense(&dequantize(q), adapter)
}

/// Adds the adapter's update to an existing dense matrix. Applying this to
/// an already merged matrix adds the update a second time.
pub fn merge_dense<T: Element>(w: &Tensor<T>, adapter: &LoraAdapter<T>) -> Result<Tensor<T>, QloraError> {
    adapter.check_fits(w.shape())?;
    let mut out = w.clone();
    out.add_assign(&adapter.delta()?);
    Ok(out)
}
