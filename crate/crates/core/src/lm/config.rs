use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::VOCAB_SIZE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub rope_base: f64,
    /// Applied to each residual branch during training only.
    pub dropout: f64,
    pub seed: u64,
}

/// Gated feed-forward width: two thirds of `4 * dim`, rounded up to a
/// multiple of 8.
pub fn gated_hidden(dim: usize) -> usize {
    (8 * dim / 3).div_ceil(8) * 8
}

impl ModelConfig {
    pub fn new(context_length: usize, layers: usize, model_dim: usize, heads: usize) -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            context_length,
            layers,
            model_dim,
            heads,
            ff_hidden: gated_hidden(model_dim),
            rope_base: 10_000.0,
            dropout: 0.0,
            seed: 0,
        }
    }

    /// Desk-scale default; use a 2048 context for color corpora.
    pub fn desk(context_length: usize) -> Self {
        Self::new(context_length, 6, 256, 8)
    }

    /// Small enough to memorize a handful of files in minutes on one core.
    pub fn tiny() -> Self {
        Self::new(1024, 2, 64, 4)
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::rejected(format!("model config: {m}")));
        if self.vocab_size != VOCAB_SIZE {
            return fail(format!("vocab_size {} must be {VOCAB_SIZE}", self.vocab_size));
        }
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ff_hidden == 0 || self.context_length == 0 {
            return fail("sizes must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return fail(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        }
        if self.head_dim() % 2 != 0 {
            return fail(format!("head dim {} must be even for rotary embeddings", self.head_dim()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.rope_base > 1.0) {
            return fail(format!("rope_base {}", self.rope_base));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_iterations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    /// Stop early once an epoch's mean loss falls below this.
    pub target_loss: Option<f64>,
    /// Seeds batch order.
    pub seed: u64,
}

impl TrainHyperparams {
    pub fn grayscale() -> Self {
        Self {
            learning_rate: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_iterations: 10,
            epochs: 6,
            batch_size: 32,
            grad_clip: Some(1.0),
            target_loss: None,
            seed: 0,
        }
    }

    pub fn color() -> Self {
        Self { learning_rate: 6e-4, warmup_iterations: 11, epochs: 5, batch_size: 16, ..Self::grayscale() }
    }

    /// Short, low-rate pass for single-token fine-tuning.
    pub fn finetune() -> Self {
        Self { learning_rate: 1e-4, warmup_iterations: 5, epochs: 2, batch_size: 16, ..Self::grayscale() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::rejected(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::rejected("batch size must be positive"));
        }
        Ok(())
    }

    /// Linear warmup to the peak rate, then cosine decay to zero at `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_iterations {
            return self.learning_rate * (step + 1) as f64 / self.warmup_iterations as f64;
        }
        let span = total.saturating_sub(self.warmup_iterations).max(1);
        let progress = ((step - self.warmup_iterations) as f64 / span as f64).min(1.0);
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
