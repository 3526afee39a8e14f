//! Masked next-token training with AdamW, warmup and cosine decay.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainHyperparams;
use super::model::{TrainingState, Transformer};
use super::real::Real;
use crate::corpus::CorpusFile;
use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::{encode_sentence, Sentence, Variant, VariantSampler};

/// Supplies the sentence at `index` as it should be seen during `epoch`.
pub trait SentenceSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sentence(&self, epoch: usize, index: usize) -> Result<Sentence>;
}

/// The same sentences every epoch.
pub struct FixedSentences(pub Vec<Sentence>);

impl SentenceSource for FixedSentences {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn sentence(&self, _epoch: usize, index: usize) -> Result<Sentence> {
        Ok(self.0[index].clone())
    }
}

/// Corpus files whose generation/recognition variant is redrawn each epoch.
pub struct VariantSource {
    pub files: Vec<CorpusFile>,
    pub sampler: VariantSampler,
}

impl SentenceSource for VariantSource {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn sentence(&self, epoch: usize, index: usize) -> Result<Sentence> {
        let f = &self.files[index];
        let variant = self.sampler.variant(epoch as u64, index as u64);
        encode_sentence(&f.bytes, f.quality, f.class_label, variant, &f.source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognitionTarget {
    Quality,
    Class,
}

/// Recognition-variant sentences supervised only at one trailing condition.
pub fn recognition_target_sentence(f: &CorpusFile, target: RecognitionTarget) -> Result<Sentence> {
    let mut s = encode_sentence(&f.bytes, f.quality, f.class_label, Variant::Recognition, &f.source)?;
    let keep = match target {
        RecognitionTarget::Quality => s.trailing_quality_pos(),
        RecognitionTarget::Class => s.trailing_class_pos(),
    };
    s.loss_mask.iter_mut().enumerate().for_each(|(i, m)| *m = i == keep);
    Ok(s)
}

pub struct FinetuneSource {
    pub files: Vec<CorpusFile>,
    pub target: RecognitionTarget,
}

impl SentenceSource for FinetuneSource {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn sentence(&self, _epoch: usize, index: usize) -> Result<Sentence> {
        recognition_target_sentence(&self.files[index], self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub tokens_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<StepLog>,
    pub epochs_completed: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().map(|s| s.loss)
    }
}

fn batch_gradient<T: Real>(
    model: &Transformer<T>,
    batch: &[(usize, Sentence)],
    scale: T,
    dropout_root: u64,
    step: usize,
) -> Result<(Vec<T>, f64)> {
    let n = model.layout.total;
    let threads = rayon::current_num_threads().max(1);
    let mut grads = vec![T::zero(); n];
    let mut loss = 0.0;
    // Each sentence gets its own buffer and buffers are summed in batch
    // order, so the result does not depend on the thread count.
    for group in batch.chunks(threads) {
        let parts: Vec<Result<(Vec<T>, f64)>> = group
            .par_iter()
            .map(|(idx, s)| {
                let mut g = vec![T::zero(); n];
                let seed = seed::derive_indexed(dropout_root, &[step as u64, *idx as u64]);
                let (l, _) = model.loss_and_grad(&s.token_ids, &s.loss_mask, scale, Some(seed), &mut g)?;
                Ok((g, l))
            })
            .collect();
        for part in parts {
            let (g, l) = part?;
            grads.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
            loss += l;
        }
    }
    Ok((grads, loss))
}

/// Trains `model` on `source`; resumes from `model.training_state` when
/// present. Writes one JSON line per step to `log`.
pub fn train<T: Real>(
    model: &mut Transformer<T>,
    source: &dyn SentenceSource,
    hp: &TrainHyperparams,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    hp.validate()?;
    let mut report = TrainReport { loss_curve: Vec::new(), epochs_completed: 0, stopped_early: false };
    if hp.epochs == 0 || source.is_empty() {
        return Ok(report);
    }
    let steps_per_epoch = source.len().div_ceil(hp.batch_size);
    let total_steps = hp.epochs * steps_per_epoch;
    let n = model.layout.total;
    let mut state = model
        .training_state
        .take()
        .unwrap_or_else(|| TrainingState { step: 0, tokens_seen: 0, m: vec![T::zero(); n], v: vec![T::zero(); n] });
    let dropout_root = seed::derive(hp.seed, "dropout");
    let order_root = seed::derive(hp.seed, "order");
    let (b1, b2) = (hp.beta1, hp.beta2);

    let mut epoch = state.step / steps_per_epoch;
    let result = (|| -> Result<()> {
        while epoch < hp.epochs {
            let mut order: Vec<usize> = (0..source.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive_indexed(order_root, &[epoch as u64])));
            let first = state.step - epoch * steps_per_epoch;
            let mut epoch_loss = 0.0;
            let mut epoch_steps = 0;
            for chunk in order.chunks(hp.batch_size).skip(first) {
                let batch: Vec<(usize, Sentence)> =
                    chunk.iter().map(|&i| Ok((i, source.sentence(epoch, i)?))).collect::<Result<_>>()?;
                for (i, s) in &batch {
                    if s.token_ids.len() > model.config.context_length {
                        return Err(Error::rejected(format!(
                            "sentence {i} ({}) has {} tokens, context is {}",
                            s.meta.source,
                            s.token_ids.len(),
                            model.config.context_length
                        )));
                    }
                }
                let count: usize = batch.iter().map(|(_, s)| s.loss_mask.iter().skip(1).filter(|&&m| m).count()).sum();
                let lr = hp.lr_at(state.step, total_steps);
                let ids: Vec<usize> = batch.iter().map(|(i, _)| *i).collect();
                if count == 0 {
                    return Err(Error::rejected(format!("batch {ids:?} has no supervised targets")));
                }
                let scale = T::from_f64_lossy(1.0 / count as f64);
                let (mut grads, loss_sum) = batch_gradient(model, &batch, scale, dropout_root, state.step)?;
                let loss = loss_sum / count as f64;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step: state.step, lr, loss, batch: ids });
                }
                if let Some(clip) = hp.grad_clip {
                    let norm = grads.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
                    if norm > clip {
                        let s = T::from_f64_lossy(clip / norm);
                        grads.iter_mut().for_each(|g| *g *= s);
                    }
                }
                state.step += 1;
                let t = state.step as i32;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                let (lr_t, b1_t, b2_t) = (T::from_f64_lossy(lr), T::from_f64_lossy(b1), T::from_f64_lossy(b2));
                let (eps, wd) = (T::from_f64_lossy(hp.eps), T::from_f64_lossy(hp.weight_decay));
                let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
                for i in 0..n {
                    let g = grads[i];
                    state.m[i] = b1_t * state.m[i] + (T::one() - b1_t) * g;
                    state.v[i] = b2_t * state.v[i] + (T::one() - b2_t) * g * g;
                    let update = (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + eps) + wd * model.params[i];
                    model.params[i] -= lr_t * update;
                }
                if !model.all_finite() {
                    return Err(Error::NonFiniteLoss { step: state.step - 1, lr, loss: f64::NAN, batch: ids });
                }
                state.tokens_seen += batch.iter().map(|(_, s)| s.token_ids.len() as u64).sum::<u64>();
                let entry = StepLog { step: state.step, loss, lr, tokens_seen: state.tokens_seen };
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io("<train log>", e))?;
                }
                report.loss_curve.push(entry);
                epoch_loss += loss;
                epoch_steps += 1;
            }
            epoch += 1;
            report.epochs_completed += 1;
            if let Some(target) = hp.target_loss {
                if epoch_steps > 0 && epoch_loss / (epoch_steps as f64) < target {
                    report.stopped_early = epoch < hp.epochs;
                    break;
                }
            }
        }
        Ok(())
    })();
    model.training_state = Some(state);
    result.map(|_| report)
}

/// Fine-tunes on recognition sentences supervised only at `target`, with a
/// fresh optimizer state.
pub fn finetune_recognition<T: Real>(
    model: &mut Transformer<T>,
    files: Vec<CorpusFile>,
    target: RecognitionTarget,
    hp: &TrainHyperparams,
    log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    model.training_state = None;
    train(model, &FinetuneSource { files, target }, hp, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::config::ModelConfig;
    use crate::lm::model::Model;

    fn file(bytes: &[u8], class_label: u8) -> CorpusFile {
        CorpusFile { bytes: bytes.to_vec(), quality: 75, class_label, source: format!("f{class_label}") }
    }

    fn hp(epochs: usize) -> TrainHyperparams {
        TrainHyperparams { learning_rate: 3e-3, warmup_iterations: 2, epochs, batch_size: 2, ..TrainHyperparams::grayscale() }
    }

    #[test]
    fn zero_epochs_is_noop() {
        let mut m = Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap();
        let before = m.params.clone();
        let src = FixedSentences(vec![encode_sentence(&[1, 2], 75, 0, Variant::Generation, "").unwrap()]);
        let r = train(&mut m, &src, &hp(0), None).unwrap();
        assert!(r.loss_curve.is_empty());
        assert_eq!(m.params, before);
    }

    #[test]
    fn finetune_masks_single_position() {
        let f = file(&[9, 9, 9], 4);
        for target in [RecognitionTarget::Quality, RecognitionTarget::Class] {
            let s = recognition_target_sentence(&f, target).unwrap();
            assert_eq!(s.supervised_targets(), 1);
            assert_eq!(s.variant, Variant::Recognition);
        }
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let files = vec![file(&[0xFF, 0xD8, 1, 2, 3, 0xFF, 0xD9], 1), file(&[0xFF, 0xD8, 7, 7, 0xFF, 0xD9], 2)];
        let run = || {
            let mut m = Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap();
            let src = VariantSource { files: files.clone(), sampler: VariantSampler::new(0.5, 3) };
            let mut log = Vec::new();
            let hp = TrainHyperparams { learning_rate: 1e-2, ..hp(150) };
            let r = train(&mut m, &src, &hp, Some(&mut log)).unwrap();
            (r, log, m.params)
        };
        let (a, log_a, pa) = run();
        let (b, log_b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(pa, pb);
        assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), 150);
        assert!(a.final_loss().unwrap() < a.loss_curve[0].loss * 0.5);
    }

    #[test]
    fn resume_continues_step_counter() {
        let files = vec![file(&[1, 2, 3], 0), file(&[4, 5, 6], 1), file(&[7, 8], 2)];
        let src = VariantSource { files, sampler: VariantSampler::new(0.5, 1) };
        let mut full = Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap();
        let r_full = train(&mut full, &src, &hp(4), None).unwrap();

        let mut part = Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap();
        train(&mut part, &src, &hp(2), None).unwrap();
        assert_eq!(part.training_state.as_ref().unwrap().step, 4);
        let r_rest = train(&mut part, &src, &hp(4), None).unwrap();
        assert_eq!(r_rest.loss_curve.first().unwrap().step, 5);
        assert_eq!(r_rest.loss_curve.len(), 4);
        assert_eq!(r_full.loss_curve.len(), 8);
    }

    #[test]
    fn context_overflow_names_file() {
        let mut m = Model::new(ModelConfig::new(16, 1, 16, 2)).unwrap();
        let src = VariantSource { files: vec![file(&[0; 20], 3)], sampler: VariantSampler::new(0.5, 0) };
        let err = train(&mut m, &src, &hp(1), None).unwrap_err().to_string();
        assert!(err.contains("f3"), "{err}");
    }
}
