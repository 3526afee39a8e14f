//! Recognition and generation evaluations of a frozen model.

use std::path::Path;

use clm_codec::{decode_stream, estimate_quality, validate_stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusFile;
use crate::error::{Error, Result};
use crate::lm::{beam_search_decode, greedy_decode, Decoded, Real, Transformer};
use crate::tokenizer::{
    generation_prompt, recognition_prompt, token_class, token_quality, TokenId, BYTES, END_BYTES, EOS, NUM_CLASSES,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BEAMS: usize = 4;
pub const DEFAULT_TOP_P: f64 = 0.9;
pub const TRUNCATED: &str = "generation_truncated";
pub const SPECIAL_TOKEN_IN_BYTES: &str = "special_token_in_bytes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionPrediction {
    pub source: String,
    pub quality: u32,
    pub class_label: u8,
    pub predicted_quality: Option<u32>,
    pub predicted_class: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub schema_version: u32,
    pub phase: Phase,
    pub n_samples: usize,
    pub quality_accuracy: f64,
    pub class_accuracy: f64,
    /// `confusion[true][predicted]` over legal class predictions.
    pub confusion: Vec<Vec<usize>>,
    /// Per true class, predictions that were not a class token.
    pub illegal_class_predictions: Vec<usize>,
    pub illegal_quality_predictions: usize,
    pub predictions: Vec<RecognitionPrediction>,
}

impl RecognitionReport {
    /// Per true class, the number of evaluated files.
    pub fn class_counts(&self) -> Vec<usize> {
        self.confusion.iter().zip(&self.illegal_class_predictions).map(|(row, ill)| row.iter().sum::<usize>() + ill).collect()
    }
}

/// The two tokens greedily predicted after the closing delimiter.
pub fn predict_conditions<T: Real>(model: &Transformer<T>, bytes: &[u8]) -> Result<(TokenId, Option<TokenId>)> {
    let prompt = recognition_prompt(bytes);
    if prompt.len() + 2 > model.config.context_length {
        return Err(Error::rejected(format!(
            "{}-byte file needs {} tokens, context is {}",
            bytes.len(),
            prompt.len() + 2,
            model.config.context_length
        )));
    }
    let d = greedy_decode(model, &prompt, EOS, prompt.len() + 2)?;
    let gen = &d.tokens[prompt.len()..];
    Ok((gen[0], gen.get(1).copied()))
}

/// Greedily predicts quality then class for every file. Tokens outside the
/// expected subrange count as wrong.
pub fn eval_recognition<T: Real>(model: &Transformer<T>, files: &[CorpusFile], phase: Phase) -> Result<RecognitionReport> {
    if files.is_empty() {
        return Err(Error::rejected("no files to recognize"));
    }
    let predictions = files
        .par_iter()
        .map(|f| {
            let (q, c) = predict_conditions(model, &f.bytes)?;
            Ok(RecognitionPrediction {
                source: f.source.clone(),
                quality: f.quality,
                class_label: f.class_label,
                predicted_quality: token_quality(q),
                predicted_class: c.and_then(token_class),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = NUM_CLASSES as usize;
    let mut confusion = vec![vec![0; k]; k];
    let mut illegal_class_predictions = vec![0; k];
    let mut illegal_quality_predictions = 0;
    let (mut q_ok, mut c_ok) = (0, 0);
    for p in &predictions {
        let t = p.class_label as usize;
        match p.predicted_class {
            Some(c) => confusion[t][c as usize] += 1,
            None => illegal_class_predictions[t] += 1,
        }
        illegal_quality_predictions += usize::from(p.predicted_quality.is_none());
        q_ok += usize::from(p.predicted_quality == Some(p.quality));
        c_ok += usize::from(p.predicted_class == Some(p.class_label));
    }
    let n = predictions.len();
    Ok(RecognitionReport {
        schema_version: SCHEMA_VERSION,
        phase,
        n_samples: n,
        quality_accuracy: q_ok as f64 / n as f64,
        class_accuracy: c_ok as f64 / n as f64,
        confusion,
        illegal_class_predictions,
        illegal_quality_predictions,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decode")]
pub enum DecodeMode {
    Greedy,
    Beam { beams: usize, top_p: f64 },
}

impl Default for DecodeMode {
    fn default() -> Self {
        Self::Greedy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub qualities: Vec<u32>,
    pub classes: Vec<u8>,
    pub decode: DecodeMode,
    /// Total sequence length bound; the model's context length when unset.
    pub max_len: Option<usize>,
    pub write_pnm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub quality: u32,
    pub class_label: u8,
    pub beam: usize,
    pub valid: bool,
    pub diagnostics: Vec<String>,
    pub estimated_quality: Option<u32>,
    pub quality_match: bool,
    pub byte_length: usize,
    pub file_path: Option<String>,
    pub score: f64,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub schema_version: u32,
    pub decode: DecodeMode,
    pub records: Vec<GenerationRecord>,
    pub valid_fraction: f64,
    pub quality_match_fraction: f64,
}

/// Bytes after `<bytes>` up to `</bytes>` or the end, with special tokens
/// dropped and reported.
fn generated_bytes(tokens: &[TokenId], prompt_len: usize) -> (Vec<u8>, bool) {
    debug_assert_eq!(tokens[prompt_len - 1], BYTES);
    let body = &tokens[prompt_len..];
    let body = &body[..body.iter().position(|&t| t == END_BYTES).unwrap_or(body.len())];
    let bytes: Vec<u8> = body.iter().filter_map(|&t| u8::try_from(t).ok()).collect();
    let special = bytes.len() != body.len();
    (bytes, special)
}

fn record(quality: u32, class_label: u8, beam: usize, d: &Decoded, prompt_len: usize) -> GenerationRecord {
    let (bytes, special) = generated_bytes(&d.tokens, prompt_len);
    let report = validate_stream(&bytes);
    let mut diagnostics: Vec<String> = report.diagnostics.iter().map(|x| x.code.to_string()).collect();
    if d.truncated {
        diagnostics.insert(0, TRUNCATED.into());
    }
    if special {
        diagnostics.insert(0, SPECIAL_TOKEN_IN_BYTES.into());
    }
    let valid = report.is_valid() && !d.truncated && !special;
    let estimated_quality = estimate_quality(&bytes).ok().and_then(|e| e.exact());
    GenerationRecord {
        quality,
        class_label,
        beam,
        valid,
        diagnostics,
        estimated_quality,
        quality_match: valid && estimated_quality == Some(quality),
        byte_length: bytes.len(),
        file_path: None,
        score: d.score,
        bytes,
    }
}

/// Decodes one file per (quality, class) prompt, or `beams` files in beam
/// mode, and checks each for validity and quality. With `out_dir`, files are
/// written to `<out_dir>/<q>/<class>.jpeg` (`<class>_b<i>.jpeg` for beams).
pub fn eval_generation<T: Real>(
    model: &Transformer<T>,
    opts: &GenerationOptions,
    out_dir: Option<&Path>,
) -> Result<GenerationReport> {
    let max_len = opts.max_len.unwrap_or(model.config.context_length);
    let prompts: Vec<(u32, u8)> =
        opts.qualities.iter().flat_map(|&q| opts.classes.iter().map(move |&c| (q, c))).collect();
    if prompts.is_empty() {
        return Err(Error::rejected("no (quality, class) prompts"));
    }
    let groups = prompts
        .par_iter()
        .map(|&(q, c)| {
            let prompt = generation_prompt(q, c)?;
            let decoded = match opts.decode {
                DecodeMode::Greedy => vec![greedy_decode(model, &prompt, END_BYTES, max_len)?],
                DecodeMode::Beam { beams, top_p } => beam_search_decode(model, &prompt, beams, top_p, END_BYTES, max_len)?,
            };
            Ok(decoded.iter().enumerate().map(|(i, d)| record(q, c, i, d, prompt.len())).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<GenerationRecord> = groups.into_iter().flatten().collect();
    if let Some(dir) = out_dir {
        let beam = matches!(opts.decode, DecodeMode::Beam { .. });
        for r in &mut records {
            let sub = dir.join(r.quality.to_string());
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let stem = if beam { format!("{}_b{}", r.class_label, r.beam) } else { r.class_label.to_string() };
            let path = sub.join(format!("{stem}.jpeg"));
            std::fs::write(&path, &r.bytes).map_err(|e| Error::io(&path, e))?;
            if opts.write_pnm {
                if let Some(raster) = decode_stream(&r.bytes).decoded {
                    let pnm = sub.join(format!("{stem}.pnm"));
                    std::fs::write(&pnm, raster.to_pnm()).map_err(|e| Error::io(&pnm, e))?;
                }
            }
            r.file_path = Some(format!("{}/{stem}.jpeg", r.quality));
        }
    }
    let n = records.len() as f64;
    Ok(GenerationReport {
        schema_version: SCHEMA_VERSION,
        decode: opts.decode,
        valid_fraction: records.iter().filter(|r| r.valid).count() as f64 / n,
        quality_match_fraction: records.iter().filter(|r| r.quality_match).count() as f64 / n,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{Model, ModelConfig};
    use crate::tokenizer::{class_token, quality_token, FIRST_CLASS, FIRST_QUALITY, VOCAB_SIZE};

    fn model() -> Model {
        Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap()
    }

    /// Every logit is zero, so greedy decoding always picks token 0.
    fn uniform_model() -> Model {
        let mut m = model();
        let head = m.layout.get("lm_head").unwrap().range();
        m.params[head].fill(0.0);
        m
    }

    fn files() -> Vec<CorpusFile> {
        (0..4u8)
            .map(|c| CorpusFile { bytes: vec![c; 6], quality: 30, class_label: c, source: format!("f{c}") })
            .collect()
    }

    #[test]
    fn uniform_model_recognition_is_exact() {
        // ties go to the lowest id, byte 0, which is neither a quality nor a class
        let m = uniform_model();
        let r = eval_recognition(&m, &files(), Phase::Pretrained).unwrap();
        assert_eq!(r.quality_accuracy, 0.0);
        assert_eq!(r.class_accuracy, 0.0);
        assert_eq!(r.illegal_quality_predictions, 4);
        assert_eq!(r.class_counts()[..4], [1, 1, 1, 1]);
        assert_eq!(r.illegal_class_predictions.iter().sum::<usize>(), 4);
    }

    #[test]
    fn recognition_report_identities() {
        let m = model();
        let r = eval_recognition(&m, &files(), Phase::Finetuned).unwrap();
        let trace: usize = (0..10).map(|i| r.confusion[i][i]).sum();
        assert!((trace as f64 / r.n_samples as f64 - r.class_accuracy).abs() < 1e-12);
        assert_eq!(r.class_counts().iter().sum::<usize>(), 4);
        assert!(eval_recognition(&m, &[], Phase::Pretrained).is_err());
    }

    #[test]
    fn legal_token_ranges() {
        assert_eq!(quality_token(30).unwrap(), FIRST_QUALITY);
        assert_eq!(class_token(0).unwrap(), FIRST_CLASS);
        assert_eq!(VOCAB_SIZE, 280);
    }

    #[test]
    fn generation_truncation_is_invalid() {
        let m = model();
        let opts = GenerationOptions {
            qualities: vec![30, 92],
            classes: vec![0, 1],
            decode: DecodeMode::Greedy,
            max_len: Some(12),
            write_pnm: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let r = eval_generation(&m, &opts, Some(dir.path())).unwrap();
        assert_eq!(r.records.len(), 4);
        assert_eq!(
            r.records.iter().map(|x| (x.quality, x.class_label)).collect::<Vec<_>>(),
            vec![(30, 0), (30, 1), (92, 0), (92, 1)]
        );
        for rec in &r.records {
            assert!(!rec.quality_match || rec.valid);
            if rec.diagnostics.iter().any(|d| d == TRUNCATED) {
                assert!(!rec.valid);
            }
            assert!(dir.path().join(rec.file_path.as_ref().unwrap()).exists());
        }
        assert_eq!(r.valid_fraction, r.records.iter().filter(|x| x.valid).count() as f64 / 4.0);
    }

    #[test]
    fn single_beam_matches_greedy() {
        let m = model();
        let base = GenerationOptions {
            qualities: vec![75],
            classes: vec![2, 5],
            decode: DecodeMode::Greedy,
            max_len: Some(40),
            write_pnm: false,
        };
        let g = eval_generation(&m, &base, None).unwrap();
        let b = eval_generation(&m, &GenerationOptions { decode: DecodeMode::Beam { beams: 1, top_p: 1.0 }, ..base }, None)
            .unwrap();
        for (x, y) in g.records.iter().zip(&b.records) {
            assert_eq!(x.bytes, y.bytes);
            assert_eq!(x.valid, y.valid);
            assert_eq!(x.diagnostics, y.diagnostics);
        }
        assert_eq!(g.valid_fraction, b.valid_fraction);
    }

    #[test]
    fn generated_bytes_stop_at_delimiter() {
        let t = [256, 265, 273, BYTES, 0xFF, 0xD8, 280 - 1, END_BYTES, 7];
        assert_eq!(generated_bytes(&t, 4), (vec![0xFF, 0xD8], true));
        let t = [256, 265, 273, BYTES, 1, 2];
        assert_eq!(generated_bytes(&t, 4), (vec![1, 2], false));
    }
}
