//! Likelihood queries on a frozen model.

use serde::{Deserialize, Serialize};

use super::model::{KvCache, Transformer};
use super::ops::log_softmax;
use super::real::Real;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, BYTES, END_BYTES};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    /// Targets inside `<bytes> .. </bytes>` plus the closing delimiter.
    #[default]
    BytesOnly,
}

/// Target positions counted by `region`.
pub fn region_targets(tokens: &[TokenId], region: Region) -> Result<std::ops::RangeInclusive<usize>> {
    match region {
        Region::All => Ok(1..=tokens.len().saturating_sub(1)),
        Region::BytesOnly => {
            let open = tokens
                .iter()
                .position(|&t| t == BYTES)
                .ok_or_else(|| Error::MalformedSentence("no <bytes> delimiter".into()))?;
            let close = tokens[open..]
                .iter()
                .position(|&t| t == END_BYTES)
                .ok_or_else(|| Error::MalformedSentence("no </bytes> delimiter".into()))?;
            Ok(open + 1..=open + close)
        }
    }
}

fn realized<T: Real>(logits: &[T], tokens: &[TokenId], from: usize, vocab: usize, out: &mut Vec<f64>) {
    let mut lp = vec![T::zero(); vocab];
    for (row, &next) in logits.chunks_exact(vocab).zip(&tokens[from..]) {
        log_softmax(row, &mut lp);
        out.push(lp[next as usize].as_f64());
    }
}

/// Entry `t` is `log p(tokens[t] | tokens[..t])` for `t >= 1`; entry 0 has no
/// prediction and holds 0.
pub fn token_logprobs<T: Real>(model: &Transformer<T>, tokens: &[TokenId]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let logits = model.logits(&tokens[..tokens.len() - 1])?;
    let mut out = vec![0.0];
    realized(&logits, tokens, 1, model.config.vocab_size, &mut out);
    Ok(out)
}

pub fn sum_region(logprobs: &[f64], tokens: &[TokenId], region: Region) -> Result<f64> {
    Ok(region_targets(tokens, region)?.map(|t| logprobs[t]).sum())
}

pub fn sequence_loglik<T: Real>(model: &Transformer<T>, tokens: &[TokenId], region: Region) -> Result<f64> {
    sum_region(&token_logprobs(model, tokens)?, tokens, region)
}

/// Scores a reference sequence once and then scores sequences that share a
/// prefix with it by recomputing only the differing suffix.
pub struct PrefixScorer<'m, T: Real> {
    model: &'m Transformer<T>,
    tokens: Vec<TokenId>,
    cache: KvCache<T>,
    /// Log-softmax rows, row `t` predicts token `t + 1`.
    rows: Vec<T>,
    logprobs: Vec<f64>,
}

impl<'m, T: Real> PrefixScorer<'m, T> {
    pub fn new(model: &'m Transformer<T>, tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::rejected("need at least two tokens to score"));
        }
        let mut cache = model.new_cache();
        let logits = model.forward_chunk(&mut cache, &tokens[..tokens.len() - 1])?;
        let v = model.config.vocab_size;
        let mut rows = vec![T::zero(); logits.len()];
        for (src, dst) in logits.chunks_exact(v).zip(rows.chunks_exact_mut(v)) {
            log_softmax(src, dst);
        }
        let mut logprobs = vec![0.0];
        logprobs.extend(rows.chunks_exact(v).zip(&tokens[1..]).map(|(r, &t)| r[t as usize].as_f64()));
        Ok(Self { model, tokens, cache, rows, logprobs })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    /// Log-distribution over the token at position `t` given `tokens[..t]`.
    pub fn next_distribution(&self, t: usize) -> &[T] {
        let v = self.model.config.vocab_size;
        &self.rows[(t - 1) * v..t * v]
    }

    /// Per-target log-probabilities of `other`, which must have the same
    /// length and first differ from the reference at some position >= 1.
    pub fn score(&self, other: &[TokenId]) -> Result<Vec<f64>> {
        if other.len() != self.tokens.len() {
            return Err(Error::rejected("sequence length differs from the reference"));
        }
        let Some(p) = self.tokens.iter().zip(other).position(|(a, b)| a != b) else {
            return Ok(self.logprobs.clone());
        };
        if p == 0 {
            return Err(Error::rejected("sequences differ at the first token"));
        }
        let mut out = self.logprobs[..p].to_vec();
        out.push(self.next_distribution(p)[other[p] as usize].as_f64());
        if p + 1 < other.len() {
            let mut cache = self.cache.clone();
            cache.truncate(p);
            let logits = self.model.forward_chunk(&mut cache, &other[p..other.len() - 1])?;
            realized(&logits, other, p + 1, self.model.config.vocab_size, &mut out);
        }
        Ok(out)
    }
}
