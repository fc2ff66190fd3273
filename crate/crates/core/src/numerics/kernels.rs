//! Slice-level kernels shared by the taped forward pass and the incremental
//! decoder. All matrices are row-major.

use super::Element;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    // four accumulators keep the dependency chain short
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// Reciprocal RMS of one row.
pub fn rms_inv<T: Element>(row: &[T], eps: f64) -> T {
    let ms = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / row.len() as f64;
    T::from_f64(1.0 / (ms + eps).sqrt())
}

pub fn rmsnorm_row<T: Element>(row: &[T], gain: &[T], eps: f64, out: &mut [T]) {
    let r = rms_inv(row, eps);
    for ((o, &x), &g) in out.iter_mut().zip(row).zip(gain) {
        *o = x * r * g;
    }
}

/// Numerically stable softmax over `row`, written to `out`.
pub fn softmax_row<T: Element>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Element>(x: T) -> T {
    x * sigmoid(x)
}

/// Rotary angle for pair `pair` of a head of width `head_dim` at `position`.
pub fn rope_angle(position: usize, pair: usize, head_dim: usize, scale: f64, base: f64) -> f64 {
    let inv_freq = base.powf(-(2.0 * pair as f64) / head_dim as f64);
    (position as f64 / scale) * inv_freq
}

/// Rotate consecutive pairs inside every head of `row` (width `n_heads · head_dim`)
/// by the angle for `position`. `sign = -1` applies the inverse rotation.
pub fn rope_row<T: Element>(
    row: &mut [T],
    n_heads: usize,
    position: usize,
    scale: f64,
    base: f64,
    sign: f64,
) {
    let head_dim = row.len() / n_heads;
    for h in 0..n_heads {
        let head = &mut row[h * head_dim..(h + 1) * head_dim];
        for pair in 0..head_dim / 2 {
            let theta = sign * rope_angle(position, pair, head_dim, scale, base);
            let (s, c) = theta.sin_cos();
            let (s, c) = (T::from_f64(s), T::from_f64(c));
            let x0 = head[2 * pair];
            let x1 = head[2 * pair + 1];
            head[2 * pair] = x0 * c - x1 * s;
            head[2 * pair + 1] = x0 * s + x1 * c;
        }
    }
}
