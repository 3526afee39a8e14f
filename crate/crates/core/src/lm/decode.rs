//! Greedy and nucleus-restricted beam decoding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::model::{KvCache, Transformer};
use super::ops::{argmax, log_softmax};
use super::real::Real;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// Prompt followed by the generated tokens.
    pub tokens: Vec<TokenId>,
    /// Mean log-probability of the generated tokens.
    pub score: f64,
    /// Set when `max_len` was reached before the stop token.
    pub truncated: bool,
}

fn last_row_logprobs<T: Real>(logits: &[T], vocab: usize) -> Vec<T> {
    let mut lp = vec![T::zero(); vocab];
    log_softmax(&logits[logits.len() - vocab..], &mut lp);
    lp
}

fn normalized(logp: f64, generated: usize) -> f64 {
    if generated == 0 {
        0.0
    } else {
        logp / generated as f64
    }
}

fn effective_max<T: Real>(model: &Transformer<T>, prompt: &[TokenId], max_len: usize) -> Result<usize> {
    if prompt.is_empty() {
        return Err(Error::rejected("empty prompt"));
    }
    Ok(max_len.min(model.config.context_length))
}

/// Appends the most likely token (lowest id on ties) until `stop` is
/// produced or the sequence reaches `max_len` tokens.
pub fn greedy_decode<T: Real>(model: &Transformer<T>, prompt: &[TokenId], stop: TokenId, max_len: usize) -> Result<Decoded> {
    let max_len = effective_max(model, prompt, max_len)?;
    let mut tokens = prompt.to_vec();
    if tokens.len() >= max_len {
        return Ok(Decoded { tokens, score: 0.0, truncated: true });
    }
    let vocab = model.config.vocab_size;
    let mut cache = model.new_cache();
    let mut lp = last_row_logprobs(&model.forward_chunk(&mut cache, prompt)?, vocab);
    let mut logp = 0.0;
    loop {
        let next = argmax(&lp);
        logp += lp[next].as_f64();
        tokens.push(next as TokenId);
        let generated = tokens.len() - prompt.len();
        if next as TokenId == stop {
            return Ok(Decoded { tokens, score: normalized(logp, generated), truncated: false });
        }
        if tokens.len() >= max_len {
            return Ok(Decoded { tokens, score: normalized(logp, generated), truncated: true });
        }
        lp = last_row_logprobs(&model.forward_chunk(&mut cache, &[next as TokenId])?, vocab);
    }
}

/// Smallest set of tokens, taken in order of decreasing probability (lowest
/// id first on ties), whose cumulative probability reaches `top_p`.
pub fn nucleus<T: Real>(logprobs: &[T], top_p: f64) -> Vec<(TokenId, f64)> {
    let mut order: Vec<(TokenId, f64)> = logprobs.iter().enumerate().map(|(i, &v)| (i as TokenId, v.as_f64())).collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = 0;
    for &(_, lp) in &order {
        keep += 1;
        cum += lp.exp();
        if cum >= top_p {
            break;
        }
    }
    order.truncate(keep.max(1));
    order
}

struct Hyp<T> {
    tokens: Vec<TokenId>,
    cache: KvCache<T>,
    logp: f64,
    next: Vec<T>,
}

/// Length-normalized beam search whose expansions are restricted to each
/// hypothesis' nucleus. Returns up to `beams` sequences, finished ones first,
/// each group ranked by normalized log-likelihood.
pub fn beam_search_decode<T: Real>(
    model: &Transformer<T>,
    prompt: &[TokenId],
    beams: usize,
    top_p: f64,
    stop: TokenId,
    max_len: usize,
) -> Result<Vec<Decoded>> {
    if beams == 0 {
        return Err(Error::rejected("beams must be at least 1"));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::rejected(format!("top_p {top_p} outside (0, 1]")));
    }
    let max_len = effective_max(model, prompt, max_len)?;
    if prompt.len() >= max_len {
        return Ok(vec![Decoded { tokens: prompt.to_vec(), score: 0.0, truncated: true }]);
    }
    let vocab = model.config.vocab_size;
    let mut cache = model.new_cache();
    let next = last_row_logprobs(&model.forward_chunk(&mut cache, prompt)?, vocab);
    let mut live = vec![Hyp { tokens: prompt.to_vec(), cache, logp: 0.0, next }];
    let mut finished: Vec<Decoded> = Vec::new();
    let mut truncated: Vec<Decoded> = Vec::new();
    while !live.is_empty() && finished.len() < beams {
        // (total logp, token logp, parent, token)
        let mut candidates: Vec<(f64, f64, usize, TokenId)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            for (tok, lp) in nucleus(&h.next, top_p) {
                candidates.push((h.logp + lp, lp, i, tok));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let generated = live[0].tokens.len() + 1 - prompt.len();
        let mut chosen = Vec::new();
        for (total, _, parent, tok) in candidates {
            if chosen.len() >= beams {
                break;
            }
            if tok == stop {
                if finished.len() < beams {
                    let mut tokens = live[parent].tokens.clone();
                    tokens.push(tok);
                    finished.push(Decoded { tokens, score: normalized(total, generated), truncated: false });
                }
            } else {
                chosen.push((parent, tok, total));
            }
        }
        if finished.len() >= beams {
            break;
        }
        let at_limit = live[0].tokens.len() + 1 >= max_len;
        let mut next_live = Vec::with_capacity(chosen.len());
        for (parent, tok, total) in chosen {
            let mut tokens = live[parent].tokens.clone();
            tokens.push(tok);
            if at_limit {
                truncated.push(Decoded { tokens, score: normalized(total, generated), truncated: true });
                continue;
            }
            let mut cache = live[parent].cache.clone();
            let next = last_row_logprobs(&model.forward_chunk(&mut cache, &[tok])?, vocab);
            next_live.push(Hyp { tokens, cache, logp: total, next });
        }
        live = next_live;
    }
    let by_score = |a: &Decoded, b: &Decoded| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal);
    finished.sort_by(by_score);
    truncated.sort_by(by_score);
    finished.extend(truncated);
    finished.truncate(beams);
    Ok(finished)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::config::ModelConfig;
    use crate::lm::model::Model;
    use crate::tokenizer::{BOS, END_BYTES};

    fn model() -> Model {
        Model::new(ModelConfig::new(48, 2, 16, 2)).unwrap()
    }

    #[test]
    fn greedy_truncation_and_determinism() {
        let m = model();
        let prompt = [BOS, 261, 270, 259];
        let d = greedy_decode(&m, &prompt, END_BYTES, 4).unwrap();
        assert_eq!(d.tokens, prompt);
        assert!(d.truncated);
        let a = greedy_decode(&m, &prompt, END_BYTES, 30).unwrap();
        assert_eq!(a, greedy_decode(&m, &prompt, END_BYTES, 30).unwrap());
        assert!(a.truncated || *a.tokens.last().unwrap() == END_BYTES);
    }

    #[test]
    fn single_beam_full_nucleus_is_greedy() {
        let m = model();
        let prompt = [BOS, 265, 273, 259];
        let greedy = greedy_decode(&m, &prompt, END_BYTES, 40).unwrap();
        let beam = beam_search_decode(&m, &prompt, 1, 1.0, END_BYTES, 40).unwrap();
        assert_eq!(beam[0].tokens, greedy.tokens);
        assert_eq!(beam[0].truncated, greedy.truncated);
    }

    #[test]
    fn tiny_nucleus_is_greedy_for_any_beam_count() {
        let m = model();
        let prompt = [BOS, 265, 273, 259];
        let greedy = greedy_decode(&m, &prompt, END_BYTES, 40).unwrap();
        for beams in [2, 4] {
            let out = beam_search_decode(&m, &prompt, beams, 1e-9, END_BYTES, 40).unwrap();
            assert_eq!(out[0].tokens, greedy.tokens);
        }
    }

    #[test]
    fn beam_results_end_with_stop_or_truncated() {
        let m = model();
        let out = beam_search_decode(&m, &[BOS, 261, 275, 259], 3, 0.9, END_BYTES, 20).unwrap();
        assert!(!out.is_empty() && out.len() <= 3);
        for d in &out {
            assert!(d.truncated || *d.tokens.last().unwrap() == END_BYTES);
            assert!(d.tokens.len() <= 20);
        }
    }

    #[test]
    fn nucleus_sizes() {
        let lp: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|p| p.ln()).collect();
        assert_eq!(nucleus(&lp, 0.5).len(), 1);
        assert_eq!(nucleus(&lp, 0.6).len(), 2);
        assert_eq!(nucleus(&lp, 1.0).len(), 3);
        let tied: Vec<f64> = vec![(0.5f64).ln(); 2];
        assert_eq!(nucleus(&tied, 0.1)[0].0, 0);
    }
}
