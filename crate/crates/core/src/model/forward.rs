use crate::numerics::{Element, Tape, Tensor, Var};
use crate::qlora::{self, AdapterVars};

use super::{names, ModelConfig, ModelError, ModelState, Trainable, Weight};

/// Result of recording one forward pass.
pub struct TapedForward {
    /// `[T×V]` next-token logits.
    pub logits: Var,
    /// Trainable tensors registered on the tape, keyed like
    /// [`ModelState::trainable_keys`].
    pub params: Vec<(String, Var)>,
}

enum Linear {
    Plain(Var),
    Adapted(AdapterVars, f64),
}

struct Binder<'a, T> {
    state: &'a ModelState<T>,
    trainable: Option<Trainable>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Binder<'_, T> {
    fn base(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var, ModelError> {
        Ok(match self.state.weight(name)? {
            Weight::Dense(t) if self.trainable == Some(Trainable::Full) => {
                let v = tape.param(t.clone());
                self.params.push((name.to_string(), v));
                v
            }
            Weight::Dense(t) => tape.constant(t.clone()),
            Weight::Quantized(q) => tape.constant(qlora::dequantize(q)),
        })
    }

    fn linear(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Linear, ModelError> {
        let base = self.base(tape, name)?;
        let Some(adapter) = self.state.adapters.get(name) else {
            return Ok(Linear::Plain(base));
        };
        let (a, b) = if self.trainable.is_some() {
            let a = tape.param(adapter.a.clone());
            let b = tape.param(adapter.b.clone());
            self.params.push((names::lora_a(name), a));
            self.params.push((names::lora_b(name), b));
            (a, b)
        } else {
            (tape.constant(adapter.a.clone()), tape.constant(adapter.b.clone()))
        };
        Ok(Linear::Adapted(AdapterVars { base, a, b }, adapter.scale()))
    }

    fn apply(&mut self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var, ModelError> {
        Ok(match self.linear(tape, name)? {
            Linear::Plain(w) => tape.matmul_nt(x, w)?,
            Linear::Adapted(vars, scale) => qlora::adapted_linear(tape, x, vars, scale)?,
        })
    }
}

pub(super) fn check_ids(config: &ModelConfig, ids: &[usize]) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if ids.len() > config.context_len {
        return Err(ModelError::ContextOverflow {
            len: ids.len(),
            max: config.context_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

/// Records the forward pass for `ids` on `tape`. With `trainable = None`
/// every weight is registered as a constant.
pub fn forward_taped<T: Element>(
    state: &ModelState<T>,
    tape: &mut Tape<T>,
    ids: &[usize],
    trainable: Option<Trainable>,
) -> Result<TapedForward, ModelError> {
    let cfg = &state.config;
    check_ids(cfg, ids)?;
    let mut bind = Binder {
        state,
        trainable,
        params: Vec::new(),
    };
    let (n_heads, dh) = (cfg.n_heads, cfg.head_dim());
    let att_scale = 1.0 / (dh as f64).sqrt();

    let table = bind.base(tape, names::TOK_EMBEDDING)?;
    let mut x = tape.embedding(table, ids)?;

    for l in 0..cfg.n_layers {
        let [attn_norm, wq, wk, wv, wo, ff_norm, w1, w2] = ModelConfig::layer_weight_names(l);

        let g = bind.base(tape, &attn_norm)?;
        let h = tape.rmsnorm(x, g, cfg.norm_eps)?;
        let mut q = bind.apply(tape, h, &wq)?;
        let mut k = bind.apply(tape, h, &wk)?;
        let v = bind.apply(tape, h, &wv)?;
        if cfg.use_rope {
            q = tape.rope(q, n_heads, 0, cfg.rope_scale, cfg.rope_base)?;
            k = tape.rope(k, n_heads, 0, cfg.rope_scale, cfg.rope_base)?;
        }
        let mut heads = Vec::with_capacity(n_heads);
        for hd in 0..n_heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, att_scale);
            let probs = tape.causal_softmax(scores)?;
            heads.push(tape.matmul(probs, vh)?);
        }
        let attn = tape.concat_cols(&heads)?;
        let attn = bind.apply(tape, attn, &wo)?;
        x = tape.add(x, attn)?;

        let g = bind.base(tape, &ff_norm)?;
        let h = tape.rmsnorm(x, g, cfg.norm_eps)?;
        let up = bind.apply(tape, h, &w1)?;
        let up = tape.silu(up);
        let down = bind.apply(tape, up, &w2)?;
        x = tape.add(x, down)?;
    }

    let g = bind.base(tape, names::FINAL_NORM)?;
    let x = tape.rmsnorm(x, g, cfg.norm_eps)?;
    let logits = bind.apply(tape, x, names::LM_HEAD)?;
    Ok(TapedForward {
        logits,
        params: bind.params,
    })
}

/// Logits `[T×V]` for every position of `ids`, without gradient tracking.
pub fn forward<T: Element>(state: &ModelState<T>, ids: &[usize]) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let out = forward_taped(state, &mut tape, ids, None)?;
    Ok(tape.value(out.logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny;
    use crate::model::names;

    fn loss_of(state: &ModelState<f64>, ids: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let out = forward_taped(state, &mut tape, &ids[..ids.len() - 1], None).unwrap();
        let l = tape.cross_entropy(out.logits, &ids[1..]).unwrap();
        tape.value(l).data()[0]
    }

    fn check_gradients(state: &ModelState<f64>, trainable: Trainable, stride: usize) -> usize {
        let ids = [3, 17, 9, 40, 2, 33, 21, 5];
        let mut tape = Tape::new();
        let out = forward_taped(state, &mut tape, &ids[..7], Some(trainable)).unwrap();
        let l = tape.cross_entropy(out.logits, &ids[1..]).unwrap();
        let grads = tape.backward(l).unwrap();
        let h = 1e-5;
        let mut checked = 0;
        for (key, var) in &out.params {
            let g = grads.get(*var).unwrap_or_else(|| panic!("no gradient for {key}"));
            for i in (0..g.len()).step_by(stride) {
                let mut plus = state.clone();
                plus.tensor_mut(key).unwrap().data_mut()[i] += h;
                let mut minus = state.clone();
                minus.tensor_mut(key).unwrap().data_mut()[i] -= h;
                let fd = (loss_of(&plus, &ids) - loss_of(&minus, &ids)) / (2.0 * h);
                let an = g.data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "{key}[{i}]: analytic {an} vs numeric {fd}");
                checked += 1;
            }
        }
        checked
    }

    #[test]
    fn full_gradients_match_finite_differences() {
        let s = ModelState::<f64>::init(tiny(48), 11).unwrap();
        assert!(check_gradients(&s, Trainable::Full, 7) > 500);
    }

    #[test]
    fn adapter_gradients_flow_through_quantized_base() {
        let mut s = ModelState::<f64>::init(tiny(48), 12).unwrap();
        s.quantize_base(64).unwrap();
        s.attach_adapters(&names::ATTENTION_PROJECTIONS, 2, 4.0, 3).unwrap();
        for a in s.adapters.values_mut() {
            a.b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * (i as f64 - 10.0));
        }
        let mut tape = Tape::new();
        let out = forward_taped(&s, &mut tape, &[1, 2, 3], Some(Trainable::AdaptersOnly)).unwrap();
        assert!(out.params.iter().all(|(k, _)| k.contains(".lora_")));
        assert_eq!(out.params.len(), 16);
        check_gradients(&s, Trainable::AdaptersOnly, 1);
    }

    #[test]
    fn untracked_forward_registers_nothing() {
        let s = ModelState::<f32>::init(tiny(20), 1).unwrap();
        let mut tape = Tape::new();
        let out = forward_taped(&s, &mut tape, &[1, 2], None).unwrap();
        assert!(out.params.is_empty());
        assert!(!tape.is_tracked(out.logits));
    }
}
