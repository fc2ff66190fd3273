use crate::numerics::{kernels, Element, Tensor};

use super::forward::check_ids;
use super::{names, IncrementalModel, ModelConfig, ModelError, ModelState};

struct LayerWeights<T> {
    attn_norm: Tensor<T>,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Tensor<T>,
    ff_norm: Tensor<T>,
    w1: Tensor<T>,
    w2: Tensor<T>,
}

/// Frozen dense snapshot of a model for token-by-token decoding. Quantized
/// weights are dequantized and adapters merged once, at construction.
pub struct InferenceModel<T> {
    config: ModelConfig,
    tok_embedding: Tensor<T>,
    layers: Vec<LayerWeights<T>>,
    final_norm: Tensor<T>,
    lm_head: Tensor<T>,
}

/// Keys and values of every position decoded so far, one buffer per layer.
#[derive(Clone, Debug)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Element> KvCache<T> {
    pub fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn linear<T: Element>(w: &Tensor<T>, x: &[T]) -> Vec<T> {
    let (out_f, in_f) = (w.rows(), w.cols());
    let mut out = vec![T::zero(); out_f];
    kernels::matmul_nt(x, w.data(), 1, in_f, out_f, &mut out);
    out
}

fn rmsnorm<T: Element>(x: &[T], gain: &Tensor<T>, eps: f64) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    kernels::rmsnorm_row(x, gain.data(), eps, &mut out);
    out
}

impl<T: Element> InferenceModel<T> {
    pub fn new(state: &ModelState<T>) -> Result<Self, ModelError> {
        let w = |name: &str| state.effective_weight(name);
        let layers = (0..state.config.n_layers)
            .map(|l| {
                let [an, q, k, v, o, fnorm, w1, w2] = ModelConfig::layer_weight_names(l);
                Ok(LayerWeights {
                    attn_norm: w(&an)?,
                    wq: w(&q)?,
                    wk: w(&k)?,
                    wv: w(&v)?,
                    wo: w(&o)?,
                    ff_norm: w(&fnorm)?,
                    w1: w(&w1)?,
                    w2: w(&w2)?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self {
            config: state.config.clone(),
            tok_embedding: w(names::TOK_EMBEDDING)?,
            layers,
            final_norm: w(names::FINAL_NORM)?,
            lm_head: w(names::LM_HEAD)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn new_cache(&self) -> KvCache<T> {
        KvCache::new(self.config.n_layers)
    }

    /// Appends `next_id` to the cache and returns the `[1×V]` logits for the
    /// following position.
    pub fn forward_step(&self, cache: &mut KvCache<T>, next_id: usize) -> Result<Tensor<T>, ModelError> {
        let cfg = &self.config;
        if cache.len >= cfg.context_len {
            return Err(ModelError::ContextOverflow {
                len: cache.len + 1,
                max: cfg.context_len,
            });
        }
        check_ids(cfg, &[next_id])?;
        let (d, n_heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let pos = cache.len;
        let att_scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut x = self.tok_embedding.row(next_id).to_vec();

        for (l, lw) in self.layers.iter().enumerate() {
            let h = rmsnorm(&x, &lw.attn_norm, cfg.norm_eps);
            let mut q = linear(&lw.wq, &h);
            let mut k = linear(&lw.wk, &h);
            let v = linear(&lw.wv, &h);
            if cfg.use_rope {
                kernels::rope_row(&mut q, n_heads, pos, cfg.rope_scale, cfg.rope_base, 1.0);
                kernels::rope_row(&mut k, n_heads, pos, cfg.rope_scale, cfg.rope_base, 1.0);
            }
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);
            let (keys, values) = (&cache.keys[l], &cache.values[l]);
            let seen = pos + 1;

            let mut attn = vec![T::zero(); d];
            let mut scores = vec![T::zero(); seen];
            let mut probs = vec![T::zero(); seen];
            for hd in 0..n_heads {
                let qh = &q[hd * dh..(hd + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = kernels::dot(qh, &keys[j * d + hd * dh..j * d + (hd + 1) * dh]) * att_scale;
                }
                kernels::softmax_row(&scores, &mut probs);
                let out = &mut attn[hd * dh..(hd + 1) * dh];
                for (j, &p) in probs.iter().enumerate() {
                    if p == T::zero() {
                        continue;
                    }
                    let vj = &values[j * d + hd * dh..j * d + (hd + 1) * dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o = *o + p * vv;
                    }
                }
            }
            let attn = linear(&lw.wo, &attn);
            x.iter_mut().zip(&attn).for_each(|(a, &b)| *a = *a + b);

            let h = rmsnorm(&x, &lw.ff_norm, cfg.norm_eps);
            let up: Vec<T> = linear(&lw.w1, &h).into_iter().map(kernels::silu).collect();
            let down = linear(&lw.w2, &up);
            x.iter_mut().zip(&down).for_each(|(a, &b)| *a = *a + b);
        }
        cache.len += 1;

        let h = rmsnorm(&x, &self.final_norm, cfg.norm_eps);
        let logits = linear(&self.lm_head, &h);
        Ok(Tensor::new(vec![1, cfg.vocab_size], logits)?)
    }
}

impl<T: Element> IncrementalModel for InferenceModel<T> {
    type Cache = KvCache<T>;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn new_cache(&self) -> KvCache<T> {
        InferenceModel::new_cache(self)
    }

    fn cache_len(&self, cache: &KvCache<T>) -> usize {
        cache.len
    }

    fn step(&self, cache: &mut KvCache<T>, id: usize) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_step(cache, id)?.data().iter().map(|v| v.as_f64()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{forward, ModelState, Parameters};
    use super::*;
    use crate::model::tests::tiny;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ids(n: usize, vocab: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0..vocab)).collect()
    }

    /// Init with a larger spread so logits differ visibly between positions.
    fn spread_state(seed: u64) -> ModelState<f32> {
        let cfg = tiny(50);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = crate::model::init_params::<f32>(&cfg, seed).unwrap();
        let mut tensors = params.into_inner();
        for (k, t) in tensors.iter_mut() {
            let jitter = k.ends_with("norm");
            for v in t.data_mut() {
                *v = *v * 10.0 + if jitter { rng.random_range(-0.2..0.2) } else { 0.0 };
            }
        }
        ModelState::from_params(cfg, Parameters::new(tensors)).unwrap()
    }

    #[test]
    fn single_token_shape() {
        let s = ModelState::<f32>::init(tiny(50), 1).unwrap();
        assert_eq!(forward(&s, &[3]).unwrap().shape(), &[1, 50]);
        assert_eq!(forward(&s, &[]).unwrap_err(), ModelError::EmptyInput);
        assert!(matches!(forward(&s, &vec![1; 33]), Err(ModelError::ContextOverflow { len: 33, max: 32 })));
        assert!(matches!(forward(&s, &[50]), Err(ModelError::TokenOutOfRange { .. })));
    }

    #[test]
    fn causality_bit_exact() {
        let s = spread_state(2);
        let mut ids = random_ids(12, 50, 3);
        let base = forward(&s, &ids).unwrap();
        for t in 0..11 {
            ids[t + 1] = (ids[t + 1] + 7) % 50;
            let pert = forward(&s, &ids).unwrap();
            assert_eq!(&base.data()[..(t + 1) * 50], &pert.data()[..(t + 1) * 50]);
            ids = random_ids(12, 50, 3);
        }
    }

    #[test]
    fn fresh_model_is_near_uniform() {
        let mut cfg = ModelConfig::desk(300);
        cfg.n_layers = 2;
        let s = ModelState::<f64>::init(cfg, 4).unwrap();
        let logits = forward(&s, &random_ids(20, 300, 1)).unwrap();
        let ln_v = 300f64.ln();
        for t in 0..20 {
            let p = crate::numerics::softmax(&Tensor::new(vec![300], logits.row(t).to_vec()).unwrap(), 0).unwrap();
            let h: f64 = -p.data().iter().map(|&q| q * q.ln()).sum::<f64>();
            assert!((h - ln_v).abs() < 0.05 * ln_v);
        }
    }

    #[test]
    fn incremental_matches_full_forward() {
        let s = spread_state(5);
        let ids = random_ids(10, 50, 9);
        let full = forward(&s, &ids).unwrap();
        let inf = InferenceModel::new(&s).unwrap();
        let mut cache = inf.new_cache();
        for (t, &id) in ids.iter().enumerate() {
            let step = inf.forward_step(&mut cache, id).unwrap();
            let want = Tensor::new(vec![1, 50], full.row(t).to_vec()).unwrap();
            assert!(step.max_abs_diff(&want) < 1e-5, "position {t}");
        }
        assert_eq!(cache.len(), 10);
    }

    #[test]
    fn first_step_matches_length_one_forward() {
        let s = spread_state(6);
        let inf = InferenceModel::new(&s).unwrap();
        let step = inf.forward_step(&mut inf.new_cache(), 7).unwrap();
        assert!(step.max_abs_diff(&forward(&s, &[7]).unwrap()) < 1e-5);
    }

    #[test]
    fn cache_overflow() {
        let s = ModelState::<f32>::init(tiny(50), 1).unwrap();
        let inf = InferenceModel::new(&s).unwrap();
        let mut cache = inf.new_cache();
        for _ in 0..32 {
            inf.forward_step(&mut cache, 1).unwrap();
        }
        assert!(matches!(inf.forward_step(&mut cache, 1), Err(ModelError::ContextOverflow { .. })));
    }

    #[test]
    fn rope_scale_changes_outputs() {
        let s = spread_state(8);
        let mut scaled = s.clone();
        scaled.config.rope_scale = 4.0;
        let ids = random_ids(6, 50, 2);
        let a = forward(&s, &ids).unwrap();
        let b = forward(&scaled, &ids).unwrap();
        // position 0 has angle 0 either way
        assert_eq!(a.row(0), b.row(0));
        assert!(a.max_abs_diff(&b) > 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cache_equivalence_and_finiteness(seed in 0u64..1000, len in 1usize..20) {
            let s = spread_state(seed);
            let ids = random_ids(len, 50, seed + 1);
            let full = forward(&s, &ids).unwrap();
            prop_assert!(full.all_finite());
            let inf = InferenceModel::new(&s).unwrap();
            let mut cache = inf.new_cache();
            for (t, &id) in ids.iter().enumerate() {
                let step = inf.forward_step(&mut cache, id).unwrap();
                let diff = step.data().iter().zip(full.row(t)).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
                prop_assert!(diff < 1e-5);
            }
        }
    }
}
