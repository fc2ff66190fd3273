//! Dense tensors and a reverse-mode gradient tape.
//!
//! The kernel set is deliberately small: what a pre-norm decoder block,
//! low-rank adapters and the next-token loss need, and nothing more.

pub mod kernels;
mod tape;
mod tensor;

pub use tape::{transpose, Gradients, Tape, Var};
pub use tensor::{DType, Element, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target id {id} out of range for {vocab} classes")]
    TargetOutOfRange { id: usize, vocab: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("no positions selected for the loss")]
    EmptyTargets,
}

/// `a[m×k] · b[k×n]` without recording gradients.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch(format!("matmul [{m}×{k}]·[{k2}×{n}]")));
    }
    let mut out = vec![T::zero(); m * n];
    kernels::matmul(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `a[m×k] · b[n×k]ᵀ` without recording gradients.
pub fn matmul_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(NumericsError::ShapeMismatch(format!("matmul_nt [{m}×{k}]·[{n}×{k2}]ᵀ")));
    }
    let mut out = vec![T::zero(); m * n];
    kernels::matmul_nt(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Softmax along `axis` of a vector or matrix.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, NumericsError> {
    let (r, c) = match x.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => {
            return Err(NumericsError::ShapeMismatch(format!(
                "softmax supports rank 1 or 2, got {other:?}"
            )))
        }
    };
    let last = x.shape().len() - 1;
    if axis == last {
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            kernels::softmax_row(&x.data()[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        Tensor::new(x.shape().to_vec(), out)
    } else if axis == 0 && last == 1 {
        let t = transpose(x)?;
        transpose(&softmax(&t, 1)?)
    } else {
        Err(NumericsError::ShapeMismatch(format!(
            "axis {axis} out of range for {:?}",
            x.shape()
        )))
    }
}

/// Mean next-token negative log-likelihood of `targets` under `logits[T×V]`.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, targets: &[usize]) -> Result<T, NumericsError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, targets)?;
    Ok(tape.value(loss).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = a.dims2().unwrap();
        let n = b.cols();
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum()
        })
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[2, 3], &mut rng);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
    }

    #[test]
    fn ones_row_times_column() {
        let a = Tensor::<f32>::ones(&[1, 2]);
        let b = Tensor::<f32>::ones(&[2, 1]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[2.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-6);
        let bt = transpose(&b).unwrap();
        assert!(matmul_nt(&a, &bt).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f32>::ones(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(NumericsError::ShapeMismatch(_))));
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&Tensor::<f64>::zeros(&[4]), 0).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let s = softmax(&Tensor::new(vec![2], vec![1000.0f64, 0.0]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] >= 0.0 && s.all_finite());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[5, 9], &mut rng).map(|v| v * 30.0);
        let p = softmax(&x, 1).unwrap();
        for i in 0..5 {
            let total: f64 = p.row(i).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(p.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let p0 = softmax(&x, 0).unwrap();
        for j in 0..9 {
            let total: f64 = (0..5).map(|i| p0.data()[i * 9 + j]).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }

        let xf = x.cast::<f32>();
        let pf = softmax(&xf, 1).unwrap();
        for i in 0..5 {
            assert!((pf.row(i).iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Tensor::<f64>::zeros(&[3, 8]);
        let l = cross_entropy(&uniform, &[0, 5, 7]).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-12);

        let mut confident = Tensor::<f64>::zeros(&[2, 8]);
        confident.data_mut()[3] = 20.0;
        confident.data_mut()[8 + 1] = 20.0;
        assert!(cross_entropy(&confident, &[3, 1]).unwrap() < 1e-7);

        assert!(matches!(
            cross_entropy(&uniform, &[0, 8, 1]),
            Err(NumericsError::TargetOutOfRange { id: 8, vocab: 8 })
        ));
        assert!(matches!(cross_entropy(&uniform, &[0]), Err(NumericsError::ShapeMismatch(_))));
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = random(&[3, 5], &mut rng).map(|v| v * 4.0);
        let targets = [4usize, 0, 2];
        // −log(exp(z_y) / Σ exp(z_j)), evaluated without max-shifting
        let direct: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = logits.row(i);
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[y].exp() / z).ln()
            })
            .sum::<f64>()
            / 3.0;
        assert!((cross_entropy(&logits, &targets).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn backward_of_square() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(NumericsError::NotScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient_entry() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::ones(&[2, 2]));
        let x = tape.param(Tensor::ones(&[1, 2]));
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(g.len(), 1);
    }

    /// Central differences of a scalar function of one leaf, perturbing every entry.
    fn finite_difference(
        build: &dyn Fn(&mut Tape<f64>, Var) -> Var,
        x: &Tensor<f64>,
        h: f64,
    ) -> Tensor<f64> {
        let eval = |t: Tensor<f64>| {
            let mut tape = Tape::new();
            let v = tape.constant(t);
            let out = build(&mut tape, v);
            tape.value(out).data()[0]
        };
        Tensor::from_fn(x.shape(), |i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (eval(plus) - eval(minus)) / (2.0 * h)
        })
    }

    fn check_op(build: &dyn Fn(&mut Tape<f64>, Var) -> Var, x: Tensor<f64>) {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = build(&mut tape, v);
        let analytic = tape.backward(out).unwrap().remove(v).unwrap();
        let numeric = finite_difference(build, &x, 1e-5);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 6], &mut rng);
        let w = random(&[6, 6], &mut rng);
        let w_nt = random(&[3, 6], &mut rng);
        let weights = random(&[4, 6], &mut rng);

        // a weighted sum turns any [4×6] output into a non-trivial scalar
        let reduce = move |tape: &mut Tape<f64>, y: Var| {
            let c = tape.constant(weights.clone());
            let p = tape.mul(y, c).unwrap();
            tape.sum(p)
        };

        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let c = t.constant(w.clone());
                let y = t.matmul(v, c).unwrap();
                r(t, y)
            },
            x.clone(),
        );
        let r = reduce.clone();
        let nt = w_nt.clone();
        check_op(
            &move |t, v| {
                let c = t.constant(nt.clone());
                let y = t.matmul_nt(v, c).unwrap();
                let y = t.concat_cols(&[y, y]).unwrap();
                r(t, y)
            },
            x.clone(),
        );
        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let g = t.constant(Tensor::from_fn(&[6], |i| 0.5 + i as f64 * 0.1));
                let y = t.rmsnorm(v, g, 1e-6).unwrap();
                r(t, y)
            },
            x.clone(),
        );
        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let y = t.silu(v);
                r(t, y)
            },
            x.clone(),
        );
        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let y = t.rope(v, 3, 2, 1.5, 10_000.0).unwrap();
                r(t, y)
            },
            x.clone(),
        );
        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let y = t.softmax_rows(v).unwrap();
                r(t, y)
            },
            x.clone(),
        );
        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let a = t.slice_cols(v, 0, 4).unwrap();
                let s = t.matmul_nt(a, a).unwrap();
                let p = t.causal_softmax(s).unwrap();
                let o = t.matmul(p, v).unwrap();
                r(t, o)
            },
            x.clone(),
        );
        let r = reduce.clone();
        check_op(
            &move |t, v| {
                let top = t.slice_rows(v, 0, 1).unwrap();
                let rest = t.slice_rows(v, 1, 3).unwrap();
                let y = t.concat_rows(&[rest, top]).unwrap();
                let y = t.scale(y, -1.7);
                let yt = t.transpose(y).unwrap();
                let y = t.transpose(yt).unwrap();
                let y = t.add(y, v).unwrap();
                r(t, y)
            },
            x.clone(),
        );
        check_op(
            &|t, v| {
                let mask = [true, false, true, true];
                t.cross_entropy_masked(v, &[1, 2, 5, 0], &mask).unwrap()
            },
            x.clone(),
        );
        check_op(
            &|t, v| {
                let e = t.embedding(v, &[2, 0, 2, 3, 1]).unwrap();
                let s = t.mul(e, e).unwrap();
                t.sum(s)
            },
            x,
        );
    }
}
