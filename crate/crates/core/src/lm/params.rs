//! Named tensors packed into one flat buffer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::real::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one decoder block's tensors. Weights are stored `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub tok_embed: usize,
    pub blocks: Vec<BlockOffsets>,
    pub final_norm: usize,
    pub lm_head: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, h) = (cfg.vocab_size, cfg.model_dim, cfg.ff_hidden);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, dims: Vec<usize>| {
            let offset = total;
            total += dims.iter().product::<usize>();
            tensors.push(TensorInfo { name, dims, offset });
            offset
        };
        let tok_embed = add("tok_embed".into(), vec![v, d]);
        let blocks = (0..cfg.layers)
            .map(|l| BlockOffsets {
                attn_norm: add(format!("layers.{l}.attn_norm"), vec![d]),
                wq: add(format!("layers.{l}.wq"), vec![d, d]),
                wk: add(format!("layers.{l}.wk"), vec![d, d]),
                wv: add(format!("layers.{l}.wv"), vec![d, d]),
                wo: add(format!("layers.{l}.wo"), vec![d, d]),
                ffn_norm: add(format!("layers.{l}.ffn_norm"), vec![d]),
                w_gate: add(format!("layers.{l}.w_gate"), vec![d, h]),
                w_up: add(format!("layers.{l}.w_up"), vec![d, h]),
                w_down: add(format!("layers.{l}.w_down"), vec![h, d]),
            })
            .collect();
        let final_norm = add("final_norm".into(), vec![d]);
        let lm_head = add("lm_head".into(), vec![d, v]);
        Self { tensors, total, tok_embed, blocks, final_norm, lm_head }
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Normal(0, 0.02) weights, residual output projections scaled down by
/// `sqrt(2 * layers)`, unit norm gains.
pub fn init_params<T: Real>(cfg: &ModelConfig, layout: &ParamLayout) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = 0.02;
    let residual_std = std / (2.0 * cfg.layers as f64).sqrt();
    let mut params = vec![T::zero(); layout.total];
    for t in &layout.tensors {
        let slice = &mut params[t.range()];
        if t.name.ends_with("norm") {
            slice.fill(T::one());
            continue;
        }
        let s = if t.name.ends_with(".wo") || t.name.ends_with(".w_down") { residual_std } else { std };
        let normal = Normal::new(0.0, s).expect("positive std");
        for p in slice {
            *p = T::from_f64_lossy(normal.sample(&mut rng));
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_dense_and_ordered() {
        let cfg = ModelConfig::new(32, 2, 16, 2);
        let layout = ParamLayout::new(&cfg);
        let mut expected = 0;
        for t in &layout.tensors {
            assert_eq!(t.offset, expected);
            expected += t.len();
        }
        assert_eq!(expected, layout.total);
        assert_eq!(layout.tensors.len(), 2 + 9 * 2 + 1);
        assert_eq!(layout.get("layers.1.w_down").unwrap().dims, vec![48, 16]);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(32, 2, 16, 2);
        let layout = ParamLayout::new(&cfg);
        let a: Vec<f32> = init_params(&cfg, &layout);
        assert_eq!(a, init_params::<f32>(&cfg, &layout));
        let b: Vec<f32> = init_params(&ModelConfig { seed: 1, ..cfg.clone() }, &layout);
        assert_ne!(a, b);
        assert!(a[layout.get("final_norm").unwrap().range()].iter().all(|&g| g == 1.0));
    }
}
