use std::collections::HashMap;

use super::kernels;
use super::{Element, NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        src: Var,
        start: usize,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    RmsNorm {
        x: Var,
        gain: Var,
        eps: f64,
    },
    Softmax {
        x: Var,
    },
    Rope {
        x: Var,
        n_heads: usize,
        offset: usize,
        scale: f64,
        base: f64,
    },
    Silu(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
    tracked: bool,
}

/// Reverse-mode recording of one computation.
///
/// Values are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] walks it once in reverse.
/// Leaves registered with [`Tape::constant`] never receive a gradient, and
/// nodes depending only on constants are skipped during the backward sweep.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss, keyed by the tracked leaves that produced them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(&var)
    }

    pub fn remove(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn mismatch(msg: String) -> NumericsError {
    NumericsError::ShapeMismatch(msg)
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Registers a frozen leaf; it is never assigned a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: tracked,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn dims(&self, var: Var) -> Result<(usize, usize), NumericsError> {
        self.value(var).dims2()
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(mismatch(format!("matmul [{m}×{k}]·[{k2}×{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout used for every linear layer.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(mismatch(format!("matmul_nt [{m}×{k}]·[{n}×{k2}]ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = transpose(self.value(a))?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let t = self.zip(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let t = self.zip(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(format!(
                "elementwise {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let factor = T::from_f64(s);
        let t = self.value(a).map(|v| v * factor);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (v, d) = self.dims(table)?;
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::TargetOutOfRange { id, vocab: v });
            }
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(src)?;
        if start + len > r {
            return Err(mismatch(format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(src).data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::new(vec![len, c], data)?;
        Ok(self.push(t, Op::SliceRows { src, start }, &[src]))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(src)?;
        if start + len > c {
            return Err(mismatch(format!("cols {start}..{} of {c}", start + len)));
        }
        let sv = self.value(src).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&sv[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(vec![r, len], data)?;
        Ok(self.push(t, Op::SliceCols { src, start }, &[src]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let c = self.dims(*parts.first().ok_or_else(|| mismatch("empty concat".into()))?)?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p)?;
            if pc != c {
                return Err(mismatch(format!("concat_rows width {pc} vs {c}")));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let t = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let r = self.dims(*parts.first().ok_or_else(|| mismatch("empty concat".into()))?)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pr != r {
                return Err(mismatch(format!("concat_cols height {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![r, total], data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row-wise RMS normalization with a learned per-column gain.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x)?;
        if self.value(gain).len() != c {
            return Err(mismatch(format!("rmsnorm gain {} vs width {c}", self.value(gain).len())));
        }
        let (xv, gv) = (self.value(x).data(), self.value(gain).data());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            kernels::rmsnorm_row(&xv[i * c..(i + 1) * c], gv, eps, &mut out[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![r, c], out)?;
        Ok(self.push(t, Op::RmsNorm { x, gain, eps }, &[x, gain]))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.softmax_impl(x, false)
    }

    /// Row-wise softmax of attention scores `[T×S]` where row `i` may only
    /// attend to columns `j ≤ i + (S − T)`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x)?;
        if causal && c < r {
            return Err(mismatch(format!("causal scores [{r}×{c}] need cols ≥ rows")));
        }
        let offset = c - r.min(c);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let visible = if causal { i + offset + 1 } else { c };
            kernels::softmax_row(&xv[i * c..i * c + visible], &mut out[i * c..i * c + visible]);
        }
        let t = Tensor::new(vec![r, c], out)?;
        Ok(self.push(t, Op::Softmax { x }, &[x]))
    }

    /// Rotary position encoding over `[T×(heads·head_dim)]`, row `t` at
    /// position `offset + t`, positions divided by `scale`.
    pub fn rope(
        &mut self,
        x: Var,
        n_heads: usize,
        offset: usize,
        scale: f64,
        base: f64,
    ) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x)?;
        if c % n_heads != 0 || (c / n_heads) % 2 != 0 {
            return Err(mismatch(format!("rope width {c} with {n_heads} heads")));
        }
        let mut t = self.value(x).clone();
        for i in 0..r {
            kernels::rope_row(&mut t.data_mut()[i * c..(i + 1) * c], n_heads, offset + i, scale, base, 1.0);
        }
        Ok(self.push(
            t,
            Op::Rope {
                x,
                n_heads,
                offset,
                scale,
                base,
            },
            &[x],
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::silu);
        self.push(t, Op::Silu(x), &[x])
    }

    /// Mean over positions of `−log softmax(logits[t])[targets[t]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let mask = vec![true; targets.len()];
        self.cross_entropy_masked(logits, targets, &mask)
    }

    /// As [`Tape::cross_entropy`], averaging only over positions where `mask` is set.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let (t, v) = self.dims(logits)?;
        if targets.len() != t || mask.len() != t {
            return Err(mismatch(format!(
                "{t} logit rows vs {} targets / {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        if let Some(&id) = targets.iter().find(|&&id| id >= v) {
            return Err(NumericsError::TargetOutOfRange { id, vocab: v });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumericsError::EmptyTargets);
        }
        let lv = self.value(logits).data();
        let mut total = 0.0f64;
        for (i, (&target, _)) in targets.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m) {
            let row = &lv[i * v..(i + 1) * v];
            total += log_sum_exp(row) - row[target].as_f64();
        }
        let loss = Tensor::scalar(T::from_f64(total / count as f64));
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every tracked leaf it
    /// depends on. Constants and unreachable leaves are absent from the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NotScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut out = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.tracked {
                out.insert(Var(i), g);
                continue;
            }
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), NumericsError> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.1;
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_nt(g.data(), self.value(*b).data(), m, n, k, &mut da);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn(self.value(*a).data(), g.data(), m, k, n, &mut db);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.0;
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul(g.data(), self.value(*b).data(), m, n, k, &mut da);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); n * k];
                    kernels::matmul_tn(g.data(), self.value(*a).data(), m, n, k, &mut db);
                    self.accumulate(grads, *b, Tensor::new(vec![n, k], db)?);
                }
            }
            Op::Transpose(a) => {
                let t = transpose(&g)?;
                self.accumulate(grads, *a, t);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                self.accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Scale(a, s) => {
                let factor = T::from_f64(*s);
                self.accumulate(grads, *a, g.map(|v| v * factor));
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (t, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (o, &v) in dst.iter_mut().zip(&g.data()[t * d..(t + 1) * d]) {
                        *o = *o + v;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::SliceRows { src, start } => {
                let sv = self.value(*src);
                let c = sv.cols();
                let mut d = Tensor::zeros(sv.shape());
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *src, d);
            }
            Op::SliceCols { src, start } => {
                let sv = self.value(*src);
                let (r, c) = sv.dims2()?;
                let w = g.cols();
                let mut d = Tensor::zeros(sv.shape());
                for i in 0..r {
                    d.data_mut()[i * c + start..i * c + start + w]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *src, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        let d = Tensor::new(self.value(p).shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                        self.accumulate(grads, p, d);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2()?;
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g.data()[i * total + col..i * total + col + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![r, w], d)?);
                    }
                    col += w;
                }
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let (r, c) = xv.dims2()?;
                let mut dx = vec![T::zero(); r * c];
                let mut dgain = vec![T::zero(); c];
                let inv_c = T::from_f64(1.0 / c as f64);
                for i in 0..r {
                    let row = &xv.data()[i * c..(i + 1) * c];
                    let dy = &g.data()[i * c..(i + 1) * c];
                    let rinv = kernels::rms_inv(row, *eps);
                    let mut proj = T::zero();
                    for j in 0..c {
                        proj = proj + gv[j] * dy[j] * row[j];
                        dgain[j] = dgain[j] + dy[j] * row[j] * rinv;
                    }
                    let coef = rinv * rinv * rinv * inv_c * proj;
                    for j in 0..c {
                        dx[i * c + j] = rinv * gv[j] * dy[j] - row[j] * coef;
                    }
                }
                if self.wants(*x) {
                    self.accumulate(grads, *x, Tensor::new(vec![r, c], dx)?);
                }
                if self.wants(*gain) {
                    let shape = self.value(*gain).shape().to_vec();
                    self.accumulate(grads, *gain, Tensor::new(shape, dgain)?);
                }
            }
            Op::Softmax { x, .. } => {
                let (r, c) = out.dims2()?;
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    let y = &out.data()[i * c..(i + 1) * c];
                    let dy = &g.data()[i * c..(i + 1) * c];
                    let inner = kernels::dot(y, dy);
                    for j in 0..c {
                        dx[i * c + j] = y[j] * (dy[j] - inner);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![r, c], dx)?);
            }
            Op::Rope {
                x,
                n_heads,
                offset,
                scale,
                base,
            } => {
                let (r, c) = g.dims2()?;
                let mut d = g;
                for i in 0..r {
                    kernels::rope_row(&mut d.data_mut()[i * c..(i + 1) * c], *n_heads, offset + i, *scale, *base, -1.0);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&dy, &v)| {
                        let s = kernels::sigmoid(v);
                        dy * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                count,
            } => {
                let lv = self.value(*logits);
                let (t, v) = lv.dims2()?;
                let scale = g.data()[0] / T::from_f64(*count as f64);
                let mut d = vec![T::zero(); t * v];
                for i in (0..t).filter(|&i| mask[i]) {
                    let row = &mut d[i * v..(i + 1) * v];
                    kernels::softmax_row(&lv.data()[i * v..(i + 1) * v], row);
                    row[targets[i]] = row[targets[i]] - T::one();
                    row.iter_mut().for_each(|e| *e = *e * scale);
                }
                self.accumulate(grads, *logits, Tensor::new(vec![t, v], d)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn log_sum_exp<T: Element>(row: &[T]) -> f64 {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln()
}

/// Matrix transpose.
pub fn transpose<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (r, c) = a.dims2()?;
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data)
}
