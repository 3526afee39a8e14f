//! Decoder-only transformer: pre-norm blocks with RMSNorm, rotary attention
//! and a SwiGLU feed-forward, no biases, untied embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::ops::{
    causal_softmax_row, log_softmax, rmsnorm, rmsnorm_backward, swiglu, swiglu_backward, Rope,
};
use super::params::{init_params, BlockOffsets, ParamLayout};
use super::real::{gemm, matmul, matmul_nt, matmul_tn_acc, Mat, Real};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Optimizer moments and counters carried across training calls.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState<T> {
    pub step: usize,
    pub tokens_seen: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Transformer<T: Real> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
    pub training_state: Option<TrainingState<T>>,
    rope: Rope<T>,
}

pub type Model = Transformer<f32>;

/// Per-layer key/value history for incremental inference.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    dim: usize,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Forgets every position at or after `len`.
    pub fn truncate(&mut self, len: usize) {
        if len < self.len {
            for buf in self.k.iter_mut().chain(self.v.iter_mut()) {
                buf.truncate(len * self.dim);
            }
            self.len = len;
        }
    }
}

struct BlockCache<T> {
    x_in: Vec<T>,
    rinv1: Vec<T>,
    n1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    drop1: Option<Vec<T>>,
    x_mid: Vec<T>,
    rinv2: Vec<T>,
    n2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
    drop2: Option<Vec<T>>,
}

struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    x_final: Vec<T>,
    rinv_f: Vec<T>,
    nf: Vec<T>,
    logits: Vec<T>,
}

/// Causal multi-head attention of `n` query rows against `len` key rows;
/// query row `i` sits at position `len - n + i`.
#[allow(clippy::too_many_arguments)]
fn attend<T: Real>(q: &[T], k: &[T], v: &[T], n: usize, len: usize, heads: usize, hd: usize, probs: &mut [T], out: &mut [T]) {
    let d = heads * hd;
    let start = len - n;
    let scale = T::from_usize(hd).unwrap().sqrt().recip();
    for h in 0..heads {
        let p = &mut probs[h * n * len..(h + 1) * n * len];
        gemm(scale, Mat::new(&q[h * hd..], n, hd, d), Mat::new(&k[h * hd..], len, hd, d).t(), T::zero(), p, len);
        for i in 0..n {
            causal_softmax_row(&mut p[i * len..(i + 1) * len], start + i);
        }
        gemm(T::one(), Mat::new(p, n, len, len), Mat::new(&v[h * hd..], len, hd, d), T::zero(), &mut out[h * hd..], d);
    }
}

fn dropout_mask<T: Real>(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen_bool(p) { T::zero() } else { keep }).collect()
}

impl<T: Real> Transformer<T> {
    /// Seeded initialization.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = init_params(&config, &layout);
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::rejected(format!("{} parameters, layout needs {}", params.len(), layout.total)));
        }
        let rope = Rope::new(config.head_dim(), config.context_length, config.rope_base);
        Ok(Self { config, layout, params, training_state: None, rope })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn w(&self, offset: usize, len: usize) -> &[T] {
        &self.params[offset..offset + len]
    }

    pub fn new_cache(&self) -> KvCache<T> {
        let layers = self.config.layers;
        KvCache { k: vec![Vec::new(); layers], v: vec![Vec::new(); layers], dim: self.config.model_dim, len: 0 }
    }

    fn check_tokens(&self, tokens: &[TokenId], already: usize) -> Result<()> {
        if already + tokens.len() > self.config.context_length {
            return Err(Error::rejected(format!(
                "{} tokens exceed the context length {}",
                already + tokens.len(),
                self.config.context_length
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::rejected(format!("token id {t} outside the vocabulary")));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[TokenId]) -> Vec<T> {
        let d = self.config.model_dim;
        let mut x = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            x.extend_from_slice(self.w(self.layout.tok_embed + t as usize * d, d));
        }
        x
    }

    /// Appends `tokens` to `cache` and returns their next-token logits,
    /// one row of `vocab_size` per token.
    pub fn forward_chunk(&self, cache: &mut KvCache<T>, tokens: &[TokenId]) -> Result<Vec<T>> {
        self.check_tokens(tokens, cache.len)?;
        let cfg = &self.config;
        let (n, d, hid, heads, hd) = (tokens.len(), cfg.model_dim, cfg.ff_hidden, cfg.heads, cfg.head_dim());
        if n == 0 {
            return Ok(Vec::new());
        }
        let start = cache.len;
        let len = start + n;
        let mut x = self.embed(tokens);
        let mut normed = vec![T::zero(); n * d];
        let mut rinv = vec![T::zero(); n];
        let mut q = vec![T::zero(); n * d];
        let mut kv = vec![T::zero(); n * d];
        let mut att = vec![T::zero(); n * d];
        let mut probs = vec![T::zero(); heads * n * len];
        let mut gate = vec![T::zero(); n * hid];
        let mut up = vec![T::zero(); n * hid];
        let mut act = vec![T::zero(); n * hid];
        for (l, b) in self.layout.blocks.iter().enumerate() {
            rmsnorm(&x, self.w(b.attn_norm, d), &mut normed, &mut rinv, d);
            matmul(&normed, self.w(b.wq, d * d), &mut q, n, d, d, false);
            self.rope.apply(&mut q, d, start, false);
            matmul(&normed, self.w(b.wk, d * d), &mut kv, n, d, d, false);
            self.rope.apply(&mut kv, d, start, false);
            cache.k[l].extend_from_slice(&kv);
            matmul(&normed, self.w(b.wv, d * d), &mut kv, n, d, d, false);
            cache.v[l].extend_from_slice(&kv);
            attend(&q, &cache.k[l], &cache.v[l], n, len, heads, hd, &mut probs, &mut att);
            matmul(&att, self.w(b.wo, d * d), &mut x, n, d, d, true);
            rmsnorm(&x, self.w(b.ffn_norm, d), &mut normed, &mut rinv, d);
            matmul(&normed, self.w(b.w_gate, d * hid), &mut gate, n, d, hid, false);
            matmul(&normed, self.w(b.w_up, d * hid), &mut up, n, d, hid, false);
            swiglu(&gate, &up, &mut act);
            matmul(&act, self.w(b.w_down, hid * d), &mut x, n, hid, d, true);
        }
        cache.len = len;
        rmsnorm(&x, self.w(self.layout.final_norm, d), &mut normed, &mut rinv, d);
        let v = cfg.vocab_size;
        let mut logits = vec![T::zero(); n * v];
        matmul(&normed, self.w(self.layout.lm_head, d * v), &mut logits, n, d, v, false);
        Ok(logits)
    }

    /// Logits for every position of `tokens` from an empty cache.
    pub fn logits(&self, tokens: &[TokenId]) -> Result<Vec<T>> {
        self.forward_chunk(&mut self.new_cache(), tokens)
    }

    fn forward_train(&self, tokens: &[TokenId], dropout_seed: Option<u64>) -> ForwardCache<T> {
        let cfg = &self.config;
        let (n, d, hid, heads, hd) = (tokens.len(), cfg.model_dim, cfg.ff_hidden, cfg.heads, cfg.head_dim());
        let mut rng = dropout_seed.filter(|_| cfg.dropout > 0.0).map(ChaCha8Rng::seed_from_u64);
        let mut x = self.embed(tokens);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for b in &self.layout.blocks {
            let x_in = x.clone();
            let mut n1 = vec![T::zero(); n * d];
            let mut rinv1 = vec![T::zero(); n];
            rmsnorm(&x_in, self.w(b.attn_norm, d), &mut n1, &mut rinv1, d);
            let project = |w: usize| {
                let mut out = vec![T::zero(); n * d];
                matmul(&n1, self.w(w, d * d), &mut out, n, d, d, false);
                out
            };
            let (mut q, mut k, v) = (project(b.wq), project(b.wk), project(b.wv));
            self.rope.apply(&mut q, d, 0, false);
            self.rope.apply(&mut k, d, 0, false);
            let mut probs = vec![T::zero(); heads * n * n];
            let mut att = vec![T::zero(); n * d];
            attend(&q, &k, &v, n, n, heads, hd, &mut probs, &mut att);
            let mut a = vec![T::zero(); n * d];
            matmul(&att, self.w(b.wo, d * d), &mut a, n, d, d, false);
            let drop1 = rng.as_mut().map(|r| dropout_mask::<T>(r, n * d, cfg.dropout));
            if let Some(m) = &drop1 {
                a.iter_mut().zip(m).for_each(|(a, &m)| *a *= m);
            }
            x.iter_mut().zip(&a).for_each(|(x, &a)| *x += a);
            let x_mid = x.clone();
            let mut n2 = vec![T::zero(); n * d];
            let mut rinv2 = vec![T::zero(); n];
            rmsnorm(&x_mid, self.w(b.ffn_norm, d), &mut n2, &mut rinv2, d);
            let mut gate = vec![T::zero(); n * hid];
            let mut up = vec![T::zero(); n * hid];
            let mut act = vec![T::zero(); n * hid];
            matmul(&n2, self.w(b.w_gate, d * hid), &mut gate, n, d, hid, false);
            matmul(&n2, self.w(b.w_up, d * hid), &mut up, n, d, hid, false);
            swiglu(&gate, &up, &mut act);
            let mut f = vec![T::zero(); n * d];
            matmul(&act, self.w(b.w_down, hid * d), &mut f, n, hid, d, false);
            let drop2 = rng.as_mut().map(|r| dropout_mask::<T>(r, n * d, cfg.dropout));
            if let Some(m) = &drop2 {
                f.iter_mut().zip(m).for_each(|(f, &m)| *f *= m);
            }
            x.iter_mut().zip(&f).for_each(|(x, &f)| *x += f);
            blocks.push(BlockCache { x_in, rinv1, n1, q, k, v, probs, att, drop1, x_mid, rinv2, n2, gate, up, act, drop2 });
        }
        let mut nf = vec![T::zero(); n * d];
        let mut rinv_f = vec![T::zero(); n];
        rmsnorm(&x, self.w(self.layout.final_norm, d), &mut nf, &mut rinv_f, d);
        let v = cfg.vocab_size;
        let mut logits = vec![T::zero(); n * v];
        matmul(&nf, self.w(self.layout.lm_head, d * v), &mut logits, n, d, v, false);
        ForwardCache { blocks, x_final: x, rinv_f, nf, logits }
    }

    /// Summed masked negative log-likelihood and the number of supervised
    /// targets, without dropout.
    pub fn loss(&self, tokens: &[TokenId], mask: &[bool]) -> Result<(f64, usize)> {
        self.check_tokens(tokens, 0)?;
        let v = self.config.vocab_size;
        let cache = self.forward_train(tokens, None);
        let mut lp = vec![T::zero(); v];
        let mut total = 0.0;
        let mut count = 0;
        for t in 1..tokens.len() {
            if mask[t] {
                log_softmax(&cache.logits[(t - 1) * v..t * v], &mut lp);
                total -= lp[tokens[t] as usize].as_f64();
                count += 1;
            }
        }
        Ok((total, count))
    }

    /// Forward and backward over one sentence. Adds `scale * d(loss)/d(theta)`
    /// into `grads` and returns the summed loss and supervised target count.
    pub fn loss_and_grad(
        &self,
        tokens: &[TokenId],
        mask: &[bool],
        scale: T,
        dropout_seed: Option<u64>,
        grads: &mut [T],
    ) -> Result<(f64, usize)> {
        self.check_tokens(tokens, 0)?;
        if mask.len() != tokens.len() {
            return Err(Error::MalformedSentence(format!("{} tokens but {} mask flags", tokens.len(), mask.len())));
        }
        if grads.len() != self.layout.total {
            return Err(Error::rejected("gradient buffer does not match the parameter layout"));
        }
        if !mask.iter().skip(1).any(|&m| m) {
            return Ok((0.0, 0));
        }
        let cfg = &self.config;
        let (n, d, hid, heads, hd, v) =
            (tokens.len(), cfg.model_dim, cfg.ff_hidden, cfg.heads, cfg.head_dim(), cfg.vocab_size);
        let fc = self.forward_train(tokens, dropout_seed);

        let mut dlogits = vec![T::zero(); n * v];
        let mut total = 0.0;
        let mut count = 0;
        for t in 1..n {
            if !mask[t] {
                continue;
            }
            let row = &mut dlogits[(t - 1) * v..t * v];
            log_softmax(&fc.logits[(t - 1) * v..t * v], row);
            let target = tokens[t] as usize;
            total -= row[target].as_f64();
            count += 1;
            for x in row.iter_mut() {
                *x = x.exp() * scale;
            }
            row[target] -= scale;
        }

        let l = &self.layout;
        matmul_tn_acc(&fc.nf, &dlogits, &mut grads[l.lm_head..l.lm_head + d * v], n, d, v);
        let mut dnf = vec![T::zero(); n * d];
        matmul_nt(&dlogits, self.w(l.lm_head, d * v), &mut dnf, n, v, d, false);
        drop(dlogits);
        let mut dx = vec![T::zero(); n * d];
        rmsnorm_backward(
            &fc.x_final,
            self.w(l.final_norm, d),
            &fc.rinv_f,
            &dnf,
            &mut dx,
            &mut grads[l.final_norm..l.final_norm + d],
            d,
        );

        let mut dscratch = vec![T::zero(); n * n];
        for (b, c) in l.blocks.iter().zip(&fc.blocks).rev() {
            dx = self.block_backward(b, c, dx, &mut dscratch, grads, (n, d, hid, heads, hd));
        }

        for (t, &tok) in tokens.iter().enumerate() {
            let g = &mut grads[l.tok_embed + tok as usize * d..l.tok_embed + (tok as usize + 1) * d];
            g.iter_mut().zip(&dx[t * d..(t + 1) * d]).for_each(|(g, &x)| *g += x);
        }
        Ok((total, count))
    }

    /// Gradient of one block; takes the gradient at the block output and
    /// returns the gradient at its input.
    fn block_backward(
        &self,
        b: &BlockOffsets,
        c: &BlockCache<T>,
        dx: Vec<T>,
        dp: &mut [T],
        grads: &mut [T],
        (n, d, hid, heads, hd): (usize, usize, usize, usize, usize),
    ) -> Vec<T> {
        // feed-forward branch
        let mut df = dx.clone();
        if let Some(m) = &c.drop2 {
            df.iter_mut().zip(m).for_each(|(g, &m)| *g *= m);
        }
        matmul_tn_acc(&c.act, &df, &mut grads[b.w_down..b.w_down + hid * d], n, hid, d);
        let mut dact = vec![T::zero(); n * hid];
        matmul_nt(&df, self.w(b.w_down, hid * d), &mut dact, n, d, hid, false);
        let mut dgate = vec![T::zero(); n * hid];
        let mut dup = vec![T::zero(); n * hid];
        swiglu_backward(&c.gate, &c.up, &dact, &mut dgate, &mut dup);
        matmul_tn_acc(&c.n2, &dgate, &mut grads[b.w_gate..b.w_gate + d * hid], n, d, hid);
        matmul_tn_acc(&c.n2, &dup, &mut grads[b.w_up..b.w_up + d * hid], n, d, hid);
        let mut dn2 = vec![T::zero(); n * d];
        matmul_nt(&dgate, self.w(b.w_gate, d * hid), &mut dn2, n, hid, d, false);
        matmul_nt(&dup, self.w(b.w_up, d * hid), &mut dn2, n, hid, d, true);
        let mut dx_mid = dx;
        rmsnorm_backward(&c.x_mid, self.w(b.ffn_norm, d), &c.rinv2, &dn2, &mut dx_mid, &mut grads[b.ffn_norm..b.ffn_norm + d], d);

        // attention branch
        let mut da = dx_mid.clone();
        if let Some(m) = &c.drop1 {
            da.iter_mut().zip(m).for_each(|(g, &m)| *g *= m);
        }
        matmul_tn_acc(&c.att, &da, &mut grads[b.wo..b.wo + d * d], n, d, d);
        let mut datt = vec![T::zero(); n * d];
        matmul_nt(&da, self.w(b.wo, d * d), &mut datt, n, d, d, false);
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let scale = T::from_usize(hd).unwrap().sqrt().recip();
        for h in 0..heads {
            let p = &c.probs[h * n * n..(h + 1) * n * n];
            let dout = Mat::new(&datt[h * hd..], n, hd, d);
            gemm(T::one(), dout, Mat::new(&c.v[h * hd..], n, hd, d).t(), T::zero(), dp, n);
            gemm(T::one(), Mat::new(p, n, n, n).t(), dout, T::zero(), &mut dv[h * hd..], d);
            for i in 0..n {
                let (prow, drow) = (&p[i * n..(i + 1) * n], &mut dp[i * n..(i + 1) * n]);
                let dot = (0..=i).fold(T::zero(), |s, j| s + prow[j] * drow[j]);
                for j in 0..=i {
                    drow[j] = prow[j] * (drow[j] - dot) * scale;
                }
                drow[i + 1..].fill(T::zero());
            }
            gemm(T::one(), Mat::new(dp, n, n, n), Mat::new(&c.k[h * hd..], n, hd, d), T::zero(), &mut dq[h * hd..], d);
            gemm(T::one(), Mat::new(dp, n, n, n).t(), Mat::new(&c.q[h * hd..], n, hd, d), T::zero(), &mut dk[h * hd..], d);
        }
        self.rope.apply(&mut dq, d, 0, true);
        self.rope.apply(&mut dk, d, 0, true);
        let mut dn1 = vec![T::zero(); n * d];
        for (g, w, first) in [(&dq, b.wq, true), (&dk, b.wk, false), (&dv, b.wv, false)] {
            matmul_tn_acc(&c.n1, g, &mut grads[w..w + d * d], n, d, d);
            matmul_nt(g, self.w(w, d * d), &mut dn1, n, d, d, !first);
        }
        let mut dx_in = dx_mid;
        rmsnorm_backward(&c.x_in, self.w(b.attn_norm, d), &c.rinv1, &dn1, &mut dx_in, &mut grads[b.attn_norm..b.attn_norm + d], d);
        dx_in
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::VOCAB_SIZE;

    fn small() -> ModelConfig {
        ModelConfig::new(64, 2, 16, 2)
    }

    fn toks(n: usize) -> Vec<TokenId> {
        (0..n).map(|i| ((i * 37 + 11) % VOCAB_SIZE) as TokenId).collect()
    }

    #[test]
    fn distributions_normalize() {
        let m = Model::new(small()).unwrap();
        let logits = m.logits(&toks(20)).unwrap();
        let mut lp = vec![0.0f32; VOCAB_SIZE];
        for row in logits.chunks_exact(VOCAB_SIZE) {
            log_softmax(row, &mut lp);
            let s: f64 = lp.iter().map(|&v| f64::from(v).exp()).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn causal_and_chunking_consistent() {
        let m = Model::new(small()).unwrap();
        let a = toks(30);
        let mut b = a.clone();
        b[20] = 5;
        let (la, lb) = (m.logits(&a).unwrap(), m.logits(&b).unwrap());
        assert_eq!(la[..20 * VOCAB_SIZE], lb[..20 * VOCAB_SIZE]);
        assert_ne!(la[20 * VOCAB_SIZE..], lb[20 * VOCAB_SIZE..]);
        let mut cache = m.new_cache();
        let mut chunked = m.forward_chunk(&mut cache, &a[..13]).unwrap();
        chunked.extend(m.forward_chunk(&mut cache, &a[13..]).unwrap());
        for (x, y) in chunked.iter().zip(&la) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn training_forward_matches_inference() {
        let m = Transformer::<f64>::new(small()).unwrap();
        let t = toks(25);
        let fc = m.forward_train(&t, None);
        let inf = m.logits(&t).unwrap();
        for (x, y) in fc.logits.iter().zip(&inf) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cache_truncate_then_extend() {
        let m = Model::new(small()).unwrap();
        let t = toks(16);
        let mut cache = m.new_cache();
        m.forward_chunk(&mut cache, &t).unwrap();
        cache.truncate(10);
        assert_eq!(cache.len(), 10);
        let tail = m.forward_chunk(&mut cache, &t[10..]).unwrap();
        let full = m.logits(&t).unwrap();
        for (x, y) in tail.iter().zip(&full[10 * VOCAB_SIZE..]) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn context_overflow_rejected() {
        let m = Model::new(ModelConfig::new(8, 1, 16, 2)).unwrap();
        assert!(m.logits(&toks(9)).is_err());
        assert!(m.logits(&[300]).is_err());
    }
}
