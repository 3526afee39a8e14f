//! One-byte substitution variants and the tagging, detection and correction
//! tasks evaluated on them.

use std::cmp::Ordering;
use std::path::Path;

use clm_codec::{validate_stream, Status};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::CorpusFile;
use crate::error::{Error, Result};
use crate::lm::infer::{region_targets, sum_region, PrefixScorer, Region};
use crate::lm::{Real, Transformer};
use crate::seed;
use crate::tokenizer::{generation_prompt, recognition_prompt, TokenId, BYTES, END_BYTES};

pub const SCHEMA_VERSION: u32 = 1;
pub const ALPHA: f64 = 0.05;
pub const HISTOGRAM_BINS: usize = 50;
pub const DEFAULT_SAMPLED_VARIANTS: usize = 2000;
/// Largest sample size evaluated by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

/// Offset of byte 0 inside a framed sequence (`<s> c1 c2 <bytes>`).
const BYTE_OFFSET: usize = 4;

/// Copy of `x` with byte `k` replaced by `v`.
pub fn perturb(x: &[u8], v: u8, k: usize) -> Result<Vec<u8>> {
    let Some(&old) = x.get(k) else {
        return Err(Error::rejected(format!("position {k} outside a {}-byte file", x.len())));
    };
    if old == v {
        return Err(Error::rejected(format!("byte {k} already holds {v:#04x}")));
    }
    let mut out = x.to_vec();
    out[k] = v;
    Ok(out)
}

/// A single substitution applied to an original file. The perturbed bytes are
/// materialized on demand so full enumerations stay small.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyVariant {
    pub original_id: String,
    pub position: usize,
    pub injected_value: u8,
    pub original_value: u8,
    pub validity: Status,
}

impl AnomalyVariant {
    pub fn perturbed_bytes(&self, original: &[u8]) -> Result<Vec<u8>> {
        if original.get(self.position) != Some(&self.original_value) {
            return Err(Error::ContractViolation(format!("variant of {} applied to a different file", self.original_id)));
        }
        perturb(original, self.injected_value, self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum VariantMode {
    Full,
    Sampled { count: usize, seed: u64 },
}

impl std::str::FromStr for VariantMode {
    type Err = Error;

    /// `full` or `sampled:N`; the seed is supplied separately.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "full" => Ok(Self::Full),
            Some(("sampled", n)) => n
                .parse()
                .map(|count| Self::Sampled { count, seed: 0 })
                .map_err(|_| Error::rejected(format!("bad sample count {n:?}"))),
            _ => Err(Error::rejected(format!("mode {s:?} is neither full nor sampled:N"))),
        }
    }
}

fn variant_at(x: &[u8], id: &str, index: usize) -> AnomalyVariant {
    let (k, r) = (index / 255, (index % 255) as u8);
    let old = x[k];
    let v = if r < old { r } else { r + 1 };
    let mut bytes = x.to_vec();
    bytes[k] = v;
    AnomalyVariant {
        original_id: id.to_string(),
        position: k,
        injected_value: v,
        original_value: old,
        validity: validate_stream(&bytes).status,
    }
}

/// All `255 * N` substitutions of `x`, or a seeded sample of distinct ones,
/// ordered by position then injected value.
pub fn enumerate_variants(x: &[u8], id: &str, mode: VariantMode) -> Result<Vec<AnomalyVariant>> {
    if x.is_empty() {
        return Err(Error::rejected("cannot perturb an empty file"));
    }
    let total = 255 * x.len();
    let mut indices: Vec<usize> = match mode {
        VariantMode::Full => (0..total).collect(),
        VariantMode::Sampled { count, seed } => {
            if count > total {
                return Err(Error::rejected(format!("{count} variants requested, {id} has only {total}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, total, count).into_vec()
        }
    };
    indices.sort_unstable();
    Ok(indices.into_par_iter().map(|i| variant_at(x, id, i)).collect())
}

/// Sequence layout used when scoring a file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framing {
    /// `<s> <unk> <unk> <bytes> b* </bytes>`
    Recognition,
    /// `<s> <qQ> <classC> <bytes> b* </bytes>` using the file's own labels.
    #[default]
    Conditioned,
}

pub fn frame(file: &CorpusFile, bytes: &[u8], framing: Framing) -> Result<Vec<TokenId>> {
    match framing {
        Framing::Recognition => Ok(recognition_prompt(bytes)),
        Framing::Conditioned => {
            let mut ids = generation_prompt(file.quality, file.class_label)?;
            ids.extend(bytes.iter().map(|&b| TokenId::from(b)));
            ids.push(END_BYTES);
            Ok(ids)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lower: lo + width * i as f64,
            upper: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values {
        let i = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
        out[i].count += 1;
    }
    out
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("lower,upper,count\n");
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.lower, b.upper, b.count));
    }
    s
}

/// Nonzero differences with their average ranks (by absolute value).
fn signed_ranks(differences: &[f64]) -> Result<Vec<(f64, f64)>> {
    if differences.iter().any(|d| d.is_nan()) {
        return Err(Error::rejected("NaN difference"));
    }
    let mut d: Vec<f64> = differences.iter().copied().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::rejected("all differences are zero"));
    }
    d.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    let mut out = Vec::with_capacity(d.len());
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        out.extend(d[i..=j].iter().map(|&x| (x, rank)));
        i = j + 1;
    }
    Ok(out)
}

fn positive_rank_sum(ranked: &[(f64, f64)]) -> f64 {
    ranked.iter().filter(|(d, _)| *d > 0.0).map(|(_, r)| r).sum()
}

/// `P(W+ >= observed)` over all `2^n` sign assignments of the given ranks.
pub fn wilcoxon_exact(differences: &[f64]) -> Result<(f64, f64)> {
    let ranked = signed_ranks(differences)?;
    if ranked.len() > 62 {
        return Err(Error::rejected("exact enumeration needs n <= 62"));
    }
    // Average ranks are multiples of one half, so doubled ranks are integers.
    let doubled: Vec<usize> = ranked.iter().map(|(_, r)| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w = positive_rank_sum(&ranked);
    let observed = (w * 2.0).round() as usize;
    let tail: f64 = counts[observed..].iter().sum();
    Ok((w, tail / 2f64.powi(ranked.len() as i32)))
}

/// Normal approximation with tie-corrected variance and continuity
/// correction, one-sided towards larger `W+`.
pub fn wilcoxon_normal(differences: &[f64]) -> Result<(f64, f64)> {
    let ranked = signed_ranks(differences)?;
    let n = ranked.len() as f64;
    let w = positive_rank_sum(&ranked);
    let mut ties = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let t = ranked[i..].iter().take_while(|(_, r)| *r == ranked[i].1).count();
        ties += (t * t * t - t) as f64;
        i += t;
    }
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return Ok((w, if w > mean { 0.0 } else { 1.0 }));
    }
    let z = (w - mean - 0.5) / var.sqrt();
    Ok((w, Normal::new(0.0, 1.0).unwrap().sf(z)))
}

/// One-sided signed-rank test of `median > 0` after dropping zeros. Returns
/// the positive rank sum and its p-value.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<(f64, f64)> {
    let n = differences.iter().filter(|&&d| d != 0.0).count();
    if n <= EXACT_MAX_N {
        wilcoxon_exact(differences)
    } else {
        wilcoxon_normal(differences)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingResult {
    pub schema_version: u32,
    pub differences: Vec<f64>,
    #[serde(rename = "W")]
    pub w: f64,
    pub p_value: f64,
    pub alpha: f64,
    #[serde(rename = "reject_H0")]
    pub reject_h0: bool,
    pub histogram: Vec<HistogramBin>,
    pub histogram_csv_path: Option<String>,
}

impl TaggingResult {
    pub fn from_differences(differences: Vec<f64>) -> Result<Self> {
        if differences.is_empty() {
            return Err(Error::rejected("no likelihood differences to test"));
        }
        let (w, p_value) = wilcoxon_signed_rank(&differences)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            histogram: histogram(&differences, HISTOGRAM_BINS),
            differences,
            w,
            p_value,
            alpha: ALPHA,
            reject_h0: p_value < ALPHA,
            histogram_csv_path: None,
        })
    }

    pub fn all_positive(&self) -> bool {
        self.differences.iter().all(|&d| d > 0.0)
    }
}

fn scored_region(tokens: &[TokenId], lp: &[f64], region: Region) -> Result<f64> {
    sum_region(lp, tokens, region)
}

/// Tags each file by the gap `L(original) - L(variant)` under the
/// recognition framing and tests whether it is positive.
pub fn tag_files<T: Real>(
    model: &Transformer<T>,
    originals: &[CorpusFile],
    variants: &[AnomalyVariant],
    region: Region,
) -> Result<TaggingResult> {
    let scorers: Vec<PrefixScorer<T>> =
        originals.par_iter().map(|f| PrefixScorer::new(model, recognition_prompt(&f.bytes))).collect::<Result<_>>()?;
    let differences = variants
        .par_iter()
        .map(|v| {
            let i = originals
                .iter()
                .position(|f| f.source == v.original_id)
                .ok_or_else(|| Error::rejected(format!("variant of unknown file {}", v.original_id)))?;
            let s = &scorers[i];
            let base = scored_region(s.tokens(), s.logprobs(), region)?;
            let tokens = recognition_prompt(&v.perturbed_bytes(&originals[i].bytes)?);
            Ok(base - scored_region(&tokens, &s.score(&tokens)?, region)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    TaggingResult::from_differences(differences)
}

/// Byte positions ordered from most to least surprising; ties go to the
/// earlier position.
fn rank_positions(lp: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        lp[BYTE_OFFSET + a].partial_cmp(&lp[BYTE_OFFSET + b]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    order
}

/// 1-based rank `rank_positions` would give position `k`.
fn position_rank(lp: &[f64], n: usize, k: usize) -> usize {
    let x = lp[BYTE_OFFSET + k];
    1 + (0..n).filter(|&l| lp[BYTE_OFFSET + l] < x || (lp[BYTE_OFFSET + l] == x && l < k)).count()
}

/// The `top_k` byte positions of `bytes` the model finds least likely,
/// scored under the recognition framing.
pub fn detect_anomaly<T: Real>(model: &Transformer<T>, bytes: &[u8], top_k: usize) -> Result<Vec<usize>> {
    let tokens = recognition_prompt(bytes);
    let lp = crate::lm::token_logprobs(model, &tokens)?;
    let mut ranked = rank_positions(&lp, bytes.len());
    ranked.truncate(top_k);
    Ok(ranked)
}

/// Byte candidates from one next-token distribution, most likely first,
/// lower byte first on ties.
fn rank_bytes<T: Real>(dist: &[T]) -> Vec<u8> {
    let mut order: Vec<u8> = (0..=255).collect();
    order.sort_by(|&a, &b| {
        dist[b as usize].partial_cmp(&dist[a as usize]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    order
}

fn byte_rank<T: Real>(dist: &[T], b: u8) -> usize {
    let x = dist[b as usize];
    1 + (0..=255u8).filter(|&o| dist[o as usize] > x || (dist[o as usize] == x && o < b)).count()
}

/// The `top_k` most likely replacements for byte `k` of `bytes`, given only
/// the tokens before it.
pub fn correct_anomaly<T: Real>(
    model: &Transformer<T>,
    file: &CorpusFile,
    bytes: &[u8],
    k: usize,
    top_k: usize,
    framing: Framing,
) -> Result<Vec<u8>> {
    if k >= bytes.len() {
        return Err(Error::rejected(format!("position {k} outside the {}-byte region", bytes.len())));
    }
    let tokens = frame(file, bytes, framing)?;
    debug_assert_eq!(tokens[BYTE_OFFSET - 1], BYTES);
    let logits = model.logits(&tokens[..BYTE_OFFSET + k])?;
    let v = model.config.vocab_size;
    let mut dist = vec![T::zero(); v];
    crate::lm::ops::log_softmax(&logits[logits.len() - v..], &mut dist);
    let mut ranked = rank_bytes(&dist);
    ranked.truncate(top_k);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyTask {
    Detection,
    Correction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata<T> {
    pub broken: T,
    pub valid: T,
    pub overall: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub schema_version: u32,
    pub task: AnomalyTask,
    pub ks: Vec<usize>,
    /// Top-k accuracy per stratum, aligned with `ks`; null for an empty stratum.
    pub accuracies: Strata<Vec<Option<f64>>>,
    pub counts: Strata<usize>,
}

impl AnomalyReport {
    fn from_ranks(task: AnomalyTask, ks: &[usize], ranks: &[(Status, usize)]) -> Self {
        let acc = |filter: &dyn Fn(Status) -> bool| -> (Vec<Option<f64>>, usize) {
            let sel: Vec<usize> = ranks.iter().filter(|(s, _)| filter(*s)).map(|&(_, r)| r).collect();
            let n = sel.len();
            let accs = ks
                .iter()
                .map(|&k| (n > 0).then(|| sel.iter().filter(|&&r| r <= k).count() as f64 / n as f64))
                .collect();
            (accs, n)
        };
        let (broken, nb) = acc(&|s| s == Status::Broken);
        let (valid, nv) = acc(&|s| s == Status::Valid);
        let (overall, n) = acc(&|_| true);
        Self {
            schema_version: SCHEMA_VERSION,
            task,
            ks: ks.to_vec(),
            accuracies: Strata { broken, valid, overall },
            counts: Strata { broken: nb, valid: nv, overall: n },
        }
    }

    /// Accuracy for stratum `broken`/`valid`/`overall` at `k`.
    pub fn accuracy(&self, stratum: &str, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        let row = match stratum {
            "broken" => &self.accuracies.broken,
            "valid" => &self.accuracies.valid,
            "overall" => &self.accuracies.overall,
            _ => return None,
        };
        row[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub original_id: String,
    pub position: usize,
    pub injected_value: u8,
    pub validity: Status,
    pub delta_l: f64,
    /// 1-based rank of the true position among all byte positions.
    pub detection_rank: usize,
    /// 1-based rank of the original byte among all 256 candidates.
    pub correction_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyOptions {
    pub mode: VariantMode,
    pub ks: Vec<usize>,
    pub region: Region,
    pub correction_framing: Framing,
}

impl Default for AnomalyOptions {
    fn default() -> Self {
        Self {
            mode: VariantMode::Sampled { count: DEFAULT_SAMPLED_VARIANTS, seed: 0 },
            ks: vec![1, 3, 5],
            region: Region::BytesOnly,
            correction_framing: Framing::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvaluation {
    pub detection: AnomalyReport,
    pub correction: AnomalyReport,
    pub tagging: TaggingResult,
    pub outcomes: Vec<VariantOutcome>,
}

impl AnomalyEvaluation {
    /// Writes `detection.json`, `correction.json`, `tagging.json` and
    /// `tagging_histogram.csv` into `dir`.
    pub fn write_reports(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("tagging_histogram.csv");
        std::fs::write(&csv, histogram_csv(&self.tagging.histogram)).map_err(|e| Error::io(&csv, e))?;
        self.tagging.histogram_csv_path = Some("tagging_histogram.csv".into());
        let write = |name: &str, bytes: Vec<u8>| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write("detection.json", serde_json::to_vec_pretty(&self.detection)?)?;
        write("correction.json", serde_json::to_vec_pretty(&self.correction)?)?;
        write("tagging.json", serde_json::to_vec_pretty(&self.tagging)?)
    }
}

/// Runs tagging, detection and correction over the variants of every file.
/// File `i` draws its sample from a seed derived from the mode seed and `i`.
pub fn run_anomaly_eval<T: Real>(
    model: &Transformer<T>,
    originals: &[CorpusFile],
    opts: &AnomalyOptions,
) -> Result<AnomalyEvaluation> {
    if originals.is_empty() {
        return Err(Error::rejected("no files to perturb"));
    }
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(Error::rejected("ks must be non-empty and positive"));
    }
    let mut outcomes = Vec::new();
    for (i, file) in originals.iter().enumerate() {
        let mode = match opts.mode {
            VariantMode::Full => VariantMode::Full,
            VariantMode::Sampled { count, seed } => {
                VariantMode::Sampled { count, seed: seed::derive_indexed(seed, &[i as u64]) }
            }
        };
        let variants = enumerate_variants(&file.bytes, &file.source, mode)?;
        let base_tokens = recognition_prompt(&file.bytes);
        region_targets(&base_tokens, opts.region)?;
        let scorer = PrefixScorer::new(model, base_tokens)?;
        let base = sum_region(scorer.logprobs(), scorer.tokens(), opts.region)?;
        let corrector = PrefixScorer::new(model, frame(file, &file.bytes, opts.correction_framing)?)?;
        let n = file.bytes.len();
        let part = variants
            .par_iter()
            .map(|v| {
                let tokens = recognition_prompt(&v.perturbed_bytes(&file.bytes)?);
                let lp = scorer.score(&tokens)?;
                Ok(VariantOutcome {
                    original_id: v.original_id.clone(),
                    position: v.position,
                    injected_value: v.injected_value,
                    validity: v.validity,
                    delta_l: base - sum_region(&lp, &tokens, opts.region)?,
                    detection_rank: position_rank(&lp, n, v.position),
                    correction_rank: byte_rank(
                        corrector.next_distribution(BYTE_OFFSET + v.position),
                        v.original_value,
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        outcomes.extend(part);
    }
    let det: Vec<(Status, usize)> = outcomes.iter().map(|o| (o.validity, o.detection_rank)).collect();
    let cor: Vec<(Status, usize)> = outcomes.iter().map(|o| (o.validity, o.correction_rank)).collect();
    Ok(AnomalyEvaluation {
        detection: AnomalyReport::from_ranks(AnomalyTask::Detection, &opts.ks, &det),
        correction: AnomalyReport::from_ranks(AnomalyTask::Correction, &opts.ks, &cor),
        tagging: TaggingResult::from_differences(outcomes.iter().map(|o| o.delta_l).collect())?,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ModelConfig, Model};
    use clm_codec::{encode_image, Raster, Subsampling};
    use proptest::prelude::*;

    fn jpeg() -> Vec<u8> {
        let mut r = Raster::filled(16, 16, 1, 0);
        for y in 0..16 {
            for x in 0..16 {
                r.set(x, y, 0, (x * 13 + y * 7) as u8);
            }
        }
        encode_image(&r, 75, Subsampling::S420).unwrap()
    }

    #[test]
    fn perturb_examples() {
        assert_eq!(perturb(&[1, 2, 3], 7, 1).unwrap(), vec![1, 7, 3]);
        assert!(perturb(&[1, 2, 3], 2, 1).is_err());
        assert!(perturb(&[1, 2, 3], 0, 3).is_err());
    }

    #[test]
    fn full_enumeration_cardinality() {
        let x = [0u8, 10, 255, 128];
        let vs = enumerate_variants(&x, "f", VariantMode::Full).unwrap();
        assert_eq!(vs.len(), 1020);
        let mut pairs: Vec<(usize, u8)> = vs.iter().map(|v| (v.position, v.injected_value)).collect();
        pairs.dedup();
        assert_eq!(pairs.len(), 1020);
        assert!(vs.iter().all(|v| v.injected_value != v.original_value && v.original_value == x[v.position]));
    }

    #[test]
    fn sampled_is_deterministic_and_bounded() {
        let x = jpeg();
        let a = enumerate_variants(&x, "f", VariantMode::Sampled { count: 100, seed: 5 }).unwrap();
        let b = enumerate_variants(&x, "f", VariantMode::Sampled { count: 100, seed: 5 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(enumerate_variants(&[1, 2], "f", VariantMode::Sampled { count: 511, seed: 0 }).is_err());
        for v in &a {
            assert_eq!(v.validity, validate_stream(&v.perturbed_bytes(&x).unwrap()).status);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("full".parse::<VariantMode>().unwrap(), VariantMode::Full);
        assert_eq!("sampled:500".parse::<VariantMode>().unwrap(), VariantMode::Sampled { count: 500, seed: 0 });
        assert!("sampled:x".parse::<VariantMode>().is_err());
        assert!("most".parse::<VariantMode>().is_err());
    }

    fn brute_force_p(d: &[f64]) -> f64 {
        let ranked = signed_ranks(d).unwrap();
        let w = positive_rank_sum(&ranked);
        let n = ranked.len();
        let hits = (0..1u32 << n)
            .filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranked[i].1).sum::<f64>() >= w - 1e-9)
            .count();
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_examples() {
        assert_eq!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).unwrap(), (6.0, 0.125));
        assert_eq!(wilcoxon_signed_rank(&[-1.0, -2.0, -3.0]).unwrap(), (0.0, 1.0));
        assert!(wilcoxon_signed_rank(&[0.0, 0.0]).is_err());
        assert!(wilcoxon_signed_rank(&[]).is_err());
        // zeros dropped, tie ranks averaged: ranks 1.5, 1.5, 3
        let (w, p) = wilcoxon_signed_rank(&[0.0, 1.0, -1.0, 2.0]).unwrap();
        assert_eq!(w, 4.5);
        assert_eq!(p, brute_force_p(&[1.0, -1.0, 2.0]));
    }

    #[test]
    fn tagging_rejects_by_alpha() {
        let t = TaggingResult::from_differences(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(!t.reject_h0);
        assert_eq!(t.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
        let t = TaggingResult::from_differences((1..=10).map(f64::from).collect()).unwrap();
        assert!(t.reject_h0 && t.p_value < ALPHA);
        assert!(TaggingResult::from_differences(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn exact_matches_brute_force(d in prop::collection::vec(-4i32..=4, 1..10)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            prop_assume!(d.iter().any(|&x| x != 0.0));
            let (_, p) = wilcoxon_exact(&d).unwrap();
            prop_assert!((p - brute_force_p(&d)).abs() < 1e-12);
        }

        #[test]
        fn histogram_conserves_count(v in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let h = histogram(&v, HISTOGRAM_BINS);
            prop_assert_eq!(h.len(), HISTOGRAM_BINS);
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), v.len());
        }

        #[test]
        fn perturb_hamming_one(x in prop::collection::vec(any::<u8>(), 1..50), k in 0usize..50, v in any::<u8>()) {
            let k = k % x.len();
            prop_assume!(x[k] != v);
            let y = perturb(&x, v, k).unwrap();
            prop_assert_eq!(x.iter().zip(&y).filter(|(a, b)| a != b).count(), 1);
        }
    }

    fn file(bytes: Vec<u8>) -> CorpusFile {
        CorpusFile { bytes, quality: 75, class_label: 3, source: "f".into() }
    }

    #[test]
    fn detection_and_correction_contracts() {
        let m = Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap();
        let f = file((0..20u8).map(|i| i * 11).collect());
        let all = detect_anomaly(&m, &f.bytes, 20).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        let lp = crate::lm::token_logprobs(&m, &recognition_prompt(&f.bytes)).unwrap();
        for w in all.windows(2) {
            assert!(lp[BYTE_OFFSET + w[0]] <= lp[BYTE_OFFSET + w[1]]);
        }
        for (r, &k) in all.iter().enumerate() {
            assert_eq!(position_rank(&lp, 20, k), r + 1);
        }
        for framing in [Framing::Recognition, Framing::Conditioned] {
            let c = correct_anomaly(&m, &f, &f.bytes, 5, 256, framing).unwrap();
            assert_eq!(c.len(), 256);
            assert!(c.contains(&f.bytes[5]));
            let scorer = PrefixScorer::new(&m, frame(&f, &f.bytes, framing).unwrap()).unwrap();
            let dist = scorer.next_distribution(BYTE_OFFSET + 5);
            for w in c.windows(2) {
                assert!(dist[w[0] as usize] >= dist[w[1] as usize]);
            }
            assert_eq!(byte_rank(dist, c[7]), 8);
        }
        assert!(correct_anomaly(&m, &f, &f.bytes, 20, 1, Framing::Recognition).is_err());
    }

    #[test]
    fn report_arithmetic() {
        let m = Model::new(ModelConfig::new(64, 1, 16, 2)).unwrap();
        let f = file((0..24u8).map(|i| i.wrapping_mul(37)).collect());
        let opts = AnomalyOptions { mode: VariantMode::Sampled { count: 60, seed: 1 }, ..Default::default() };
        let mut e = run_anomaly_eval(&m, &[f.clone()], &opts).unwrap();
        for r in [&e.detection, &e.correction] {
            assert_eq!(r.counts.overall, 60);
            assert_eq!(r.counts.broken + r.counts.valid, 60);
            for row in [&r.accuracies.broken, &r.accuracies.valid, &r.accuracies.overall] {
                let vals: Vec<f64> = row.iter().flatten().copied().collect();
                assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            }
            for i in 0..3 {
                let wsum = r.accuracies.broken[i].unwrap_or(0.0) * r.counts.broken as f64
                    + r.accuracies.valid[i].unwrap_or(0.0) * r.counts.valid as f64;
                assert!((wsum / 60.0 - r.accuracies.overall[i].unwrap()).abs() < 1e-12);
            }
        }
        // outcomes agree with the standalone task functions
        for o in e.outcomes.iter().take(5) {
            let v = AnomalyVariant {
                original_id: "f".into(),
                position: o.position,
                injected_value: o.injected_value,
                original_value: f.bytes[o.position],
                validity: o.validity,
            };
            let bytes = v.perturbed_bytes(&f.bytes).unwrap();
            let ranked = detect_anomaly(&m, &bytes, 24).unwrap();
            assert_eq!(ranked.iter().position(|&k| k == o.position).unwrap() + 1, o.detection_rank);
            let cands = correct_anomaly(&m, &f, &bytes, o.position, 256, opts.correction_framing).unwrap();
            assert_eq!(cands.iter().position(|&b| b == f.bytes[o.position]).unwrap() + 1, o.correction_rank);
        }
        let variants = enumerate_variants(&f.bytes, "f", VariantMode::Sampled { count: 60, seed: seed::derive_indexed(1, &[0]) }).unwrap();
        let t = tag_files(&m, &[f], &variants, Region::BytesOnly).unwrap();
        for (a, b) in t.differences.iter().zip(&e.tagging.differences) {
            assert!((a - b).abs() < 1e-9);
        }
        let dir = tempfile::tempdir().unwrap();
        e.write_reports(dir.path()).unwrap();
        for name in ["detection.json", "correction.json", "tagging.json", "tagging_histogram.csv"] {
            assert!(dir.path().join(name).exists());
        }
    }
}
