use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clm_codec::{decode_stream, encode_image, estimate_quality, validate_stream, QualityEstimate, Raster, Subsampling};
use clm_core::anomaly::{run_anomaly_eval, AnomalyOptions, Framing, VariantMode};
use clm_core::corpus::{
    build_corpus, load_cifar, load_idx, manifest_path, AugmentationSpec, CorpusFile, CorpusManifest, CorpusOptions,
    CorpusSource, QualityPlan, Split, MANIFEST_FILE,
};
use clm_core::eval::{eval_generation, eval_recognition, DecodeMode, GenerationOptions, Phase};
use clm_core::lm::config::gated_hidden;
use clm_core::lm::{
    finetune_recognition, load_checkpoint, save_checkpoint, train, Model, ModelConfig, RecognitionTarget, Region,
    TrainHyperparams, VariantSource,
};
use clm_core::tokenizer::{VariantSampler, QUALITIES};
use clm_core::{hash, seed};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cli::*;
use crate::error::{CliError, EXIT_NEGATIVE, EXIT_OK};
use crate::run::{write_json, RunDir};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_LOG: &str = "loss.jsonl";

type Outcome = Result<u8, CliError>;

pub fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::BuildCorpus(a) => cmd_build_corpus(a),
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(EvalCommand::Recognize(a)) => cmd_recognize(a),
        Command::Eval(EvalCommand::Anomaly(a)) => cmd_anomaly(a),
        Command::Eval(EvalCommand::Generate(a)) => cmd_generate(a),
        Command::Codec(c) => cmd_codec(c),
    }
}

/// Corpus root and manifest path from either of them.
fn resolve_manifest(path: &Path) -> Result<(PathBuf, CorpusManifest), CliError> {
    let file = if path.is_dir() { manifest_path(path) } else { path.to_path_buf() };
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = CorpusManifest::load(&file)?;
    Ok((root, m))
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    }
}

fn cmd_build_corpus(a: BuildCorpusArgs) -> Outcome {
    let qualities = a.qualities.clone().unwrap_or_else(|| QUALITIES.to_vec());
    let source = match a.dataset {
        Dataset::Synthetic => CorpusSource::synthetic(&a.classes, a.train_per_class, a.val_per_class, a.seed),
        Dataset::Mnist => {
            let (Some(images), Some(labels)) = (&a.train_images, &a.train_labels) else {
                return Err(CliError::usage("--dataset mnist needs --train-images and --train-labels"));
            };
            let val = match (&a.val_images, &a.val_labels) {
                (Some(i), Some(l)) => load_idx(i, l, "val")?,
                _ => Vec::new(),
            };
            CorpusSource { dataset: "mnist".into(), train: load_idx(images, labels, "train")?, val }
        }
        Dataset::Cifar => {
            if a.train_batches.is_empty() {
                return Err(CliError::usage("--dataset cifar needs at least one --train-batch"));
            }
            let load = |paths: &[PathBuf], prefix: &str| -> Result<Vec<_>, CliError> {
                let mut out = Vec::new();
                for (i, p) in paths.iter().enumerate() {
                    out.extend(load_cifar(p, &format!("{prefix}{i}"))?);
                }
                Ok(out)
            };
            CorpusSource {
                dataset: "cifar".into(),
                train: load(&a.train_batches, "train")?,
                val: load(&a.val_batches, "val")?,
            }
        }
    };
    let augmentation = match a.augment {
        Some(AugmentArg::None) => AugmentationSpec::none(),
        Some(AugmentArg::Mnist) => AugmentationSpec::mnist(),
        Some(AugmentArg::Cifar) => AugmentationSpec::cifar(),
        None if a.multiplier <= 1 => AugmentationSpec::none(),
        None if a.dataset == Dataset::Cifar => AugmentationSpec::cifar(),
        None => AugmentationSpec::mnist(),
    };
    let opts = CorpusOptions {
        qualities,
        augmentation,
        multiplier: a.multiplier,
        quality_plan: match a.quality_plan {
            PlanArg::Every => QualityPlan::Every,
            PlanArg::RoundRobin => QualityPlan::RoundRobin,
        },
        seed: a.seed,
    };
    let run = RunDir::acquire(&a.out)?;
    let manifest = build_corpus(&source, &opts, &a.out)?;
    let mut inputs: Vec<(&str, &Path)> = Vec::new();
    for (name, p) in [
        ("train_images", &a.train_images),
        ("train_labels", &a.train_labels),
        ("val_images", &a.val_images),
        ("val_labels", &a.val_labels),
    ] {
        if let Some(p) = p {
            inputs.push((name, p));
        }
    }
    let batches: Vec<(String, &PathBuf)> = a
        .train_batches
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("train_batch_{i}"), p))
        .chain(a.val_batches.iter().enumerate().map(|(i, p)| (format!("val_batch_{i}"), p)))
        .collect();
    inputs.extend(batches.iter().map(|(n, p)| (n.as_str(), p.as_path())));
    let resolved = json!({
        "dataset": manifest.dataset,
        "options": opts,
        "classes": a.classes,
        "train_per_class": a.train_per_class,
        "val_per_class": a.val_per_class,
    });
    run.record("build-corpus", &resolved, &inputs)?;
    let (train_n, val_n) = (manifest.entries(Split::Train).count(), manifest.entries(Split::Val).count());
    println!(
        "{}: {train_n} train + {val_n} val files at qualities {:?}; manifest sha256 {}",
        a.out.join(MANIFEST_FILE).display(),
        manifest.quality_set,
        hash::hash_file(&manifest_path(&a.out))?
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub hyperparams: TrainHyperparams,
    pub generation_probability: f64,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn read_config(path: Option<&Path>) -> Result<Value, CliError> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let raw = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_slice(&raw).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn apply_hyper(hp: &mut TrainHyperparams, o: &HyperOverrides) {
    if let Some(v) = o.epochs {
        hp.epochs = v;
    }
    if let Some(v) = o.lr {
        hp.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        hp.batch_size = v;
    }
    if let Some(v) = o.warmup {
        hp.warmup_iterations = v;
    }
    if let Some(v) = o.weight_decay {
        hp.weight_decay = v;
    }
    if o.target_loss.is_some() {
        hp.target_loss = o.target_loss;
    }
}

/// Defaults, then the config file, then flags. Seeds always derive from
/// `seed`.
pub fn resolve_train_settings(
    config: Option<&Path>,
    seed: u64,
    model: &ModelOverrides,
    hyper: &HyperOverrides,
    generation_probability: Option<f64>,
) -> Result<TrainSettings, CliError> {
    let defaults = TrainSettings {
        model: ModelConfig::tiny(),
        hyperparams: TrainHyperparams::grayscale(),
        generation_probability: 0.5,
    };
    let file = read_config(config)?;
    let dim_from_file = file.pointer("/model/model_dim").is_some();
    let hidden_from_file = file.pointer("/model/ff_hidden").is_some();
    let mut value = serde_json::to_value(&defaults)?;
    merge(&mut value, file);
    let mut s: TrainSettings =
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("config: {e}")))?;
    if dim_from_file && !hidden_from_file {
        s.model.ff_hidden = gated_hidden(s.model.model_dim);
    }
    if let Some(v) = model.context {
        s.model.context_length = v;
    }
    if let Some(v) = model.layers {
        s.model.layers = v;
    }
    if let Some(v) = model.dim {
        s.model.model_dim = v;
        s.model.ff_hidden = gated_hidden(v);
    }
    if let Some(v) = model.heads {
        s.model.heads = v;
    }
    if let Some(v) = model.dropout {
        s.model.dropout = v;
    }
    apply_hyper(&mut s.hyperparams, hyper);
    if let Some(p) = generation_probability {
        s.generation_probability = p;
    }
    if !(0.0..=1.0).contains(&s.generation_probability) {
        return Err(CliError::usage("generation probability must lie in [0, 1]"));
    }
    s.model.seed = seed::derive(seed, "init");
    s.hyperparams.seed = seed::derive(seed, "order");
    s.model.validate()?;
    s.hyperparams.validate()?;
    Ok(s)
}

fn loss_log(path: &Path, append: bool) -> Result<BufWriter<File>, CliError> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn has_model_overrides(m: &ModelOverrides) -> bool {
    m.context.is_some() || m.layers.is_some() || m.dim.is_some() || m.heads.is_some() || m.dropout.is_some()
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let (root, manifest) = resolve_manifest(&a.manifest)?;
    let manifest_file = if a.manifest.is_dir() { manifest_path(&a.manifest) } else { a.manifest.clone() };
    let mut settings =
        resolve_train_settings(a.config.as_deref(), a.seed, &a.model, &a.hyper, a.generation_probability)?;
    let mut model = match &a.resume {
        Some(ckpt) => {
            if has_model_overrides(&a.model) {
                return Err(CliError::usage("model shape comes from the resumed checkpoint"));
            }
            let m = load_checkpoint(ckpt)?;
            settings.model = m.config.clone();
            m
        }
        None => Model::new(settings.model.clone())?,
    };
    let files = manifest.load_files(&root, Split::Train)?;
    if files.is_empty() {
        return Err(CliError::usage("manifest has no training files"));
    }
    let run = RunDir::acquire(&a.out)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("manifest", &manifest_file)];
    if let Some(c) = &a.config {
        inputs.push(("config", c));
    }
    if let Some(r) = &a.resume {
        inputs.push(("resume", r));
    }
    run.record("train", &settings, &inputs)?;
    let source = VariantSource {
        files,
        sampler: VariantSampler::new(settings.generation_probability, seed::derive(a.seed, "variant")),
    };
    let mut log = loss_log(&run.join(LOSS_LOG), a.resume.is_some())?;
    let report = train(&mut model, &source, &settings.hyperparams, Some(&mut log))?;
    log.flush().map_err(|e| CliError::io(&run.join(LOSS_LOG), e))?;
    let corpus_hash = hash::hash_file(&manifest_file)?;
    save_checkpoint(&model, &run.join(CHECKPOINT_FILE), Some(corpus_hash))?;
    write_json(&run.join("train_report.json"), &report)?;
    println!(
        "{} steps, final loss {}, checkpoint {}",
        report.loss_curve.len(),
        report.final_loss().map_or("n/a".into(), |l| format!("{l:.4}")),
        run.join(CHECKPOINT_FILE).display()
    );
    Ok(EXIT_OK)
}

fn cmd_finetune(a: FinetuneArgs) -> Outcome {
    let (root, manifest) = resolve_manifest(&a.manifest)?;
    let manifest_file = if a.manifest.is_dir() { manifest_path(&a.manifest) } else { a.manifest.clone() };
    let mut model = load_checkpoint(&a.checkpoint)?;
    let mut value = serde_json::to_value(TrainHyperparams::finetune())?;
    merge(&mut value, read_config(a.config.as_deref())?);
    let mut hp: TrainHyperparams = serde_json::from_value(value).map_err(|e| CliError::usage(format!("config: {e}")))?;
    apply_hyper(&mut hp, &a.hyper);
    hp.seed = seed::derive(a.seed, "finetune");
    hp.validate()?;
    let files = manifest.load_files(&root, Split::Train)?;
    if files.is_empty() {
        return Err(CliError::usage("manifest has no training files"));
    }
    let target = match a.target {
        TargetArg::Quality => RecognitionTarget::Quality,
        TargetArg::Class => RecognitionTarget::Class,
    };
    let run = RunDir::acquire(&a.out)?;
    run.record(
        "finetune",
        &json!({ "target": target, "hyperparams": hp }),
        &[("checkpoint", &a.checkpoint), ("manifest", &manifest_file)],
    )?;
    let mut log = loss_log(&run.join(LOSS_LOG), false)?;
    let report = finetune_recognition(&mut model, files, target, &hp, Some(&mut log))?;
    log.flush().map_err(|e| CliError::io(&run.join(LOSS_LOG), e))?;
    save_checkpoint(&model, &run.join(CHECKPOINT_FILE), Some(hash::hash_file(&manifest_file)?))?;
    write_json(&run.join("train_report.json"), &report)?;
    println!("{} fine-tuning steps on the {target:?} token", report.loss_curve.len());
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

fn cmd_recognize(a: RecognizeArgs) -> Outcome {
    let model = load_model(&a.checkpoint)?;
    let (root, manifest) = resolve_manifest(&a.manifest)?;
    let files = manifest.load_files(&root, split_of(a.split))?;
    if files.is_empty() {
        return Err(CliError::usage(format!("split {:?} is empty", a.split)));
    }
    let phase = match a.phase {
        PhaseArg::Pretrained => Phase::Pretrained,
        PhaseArg::Finetuned => Phase::Finetuned,
    };
    let run = RunDir::acquire(&a.out)?;
    let manifest_file = if a.manifest.is_dir() { manifest_path(&a.manifest) } else { a.manifest.clone() };
    run.record(
        "eval recognize",
        &json!({ "split": split_of(a.split), "phase": phase }),
        &[("checkpoint", &a.checkpoint), ("manifest", &manifest_file)],
    )?;
    let report = eval_recognition(&model, &files, phase)?;
    write_json(&run.join("recognition.json"), &report)?;
    println!(
        "{} files: quality accuracy {:.4}, class accuracy {:.4}",
        report.n_samples, report.quality_accuracy, report.class_accuracy
    );
    Ok(EXIT_OK)
}

/// The first `per_class` files of each class, in manifest order.
pub fn pick_per_class(files: Vec<CorpusFile>, per_class: usize, quality: Option<u32>) -> Vec<CorpusFile> {
    let mut taken = [0usize; 256];
    files
        .into_iter()
        .filter(|f| quality.is_none_or(|q| f.quality == q))
        .filter(|f| {
            let t = &mut taken[f.class_label as usize];
            *t += 1;
            *t <= per_class
        })
        .collect()
}

fn cmd_anomaly(a: AnomalyArgs) -> Outcome {
    let model = load_model(&a.checkpoint)?;
    let (root, manifest) = resolve_manifest(&a.manifest)?;
    let mode = match a.mode.parse::<VariantMode>()? {
        VariantMode::Sampled { count, .. } => VariantMode::Sampled { count, seed: seed::derive(a.seed, "anomaly") },
        VariantMode::Full => VariantMode::Full,
    };
    let files = pick_per_class(manifest.load_files(&root, split_of(a.split))?, a.files, a.quality);
    if files.is_empty() {
        return Err(CliError::usage("no files match the selection"));
    }
    let opts = AnomalyOptions {
        mode,
        ks: vec![1, 3, 5],
        region: match a.region {
            RegionArg::All => Region::All,
            RegionArg::Bytes => Region::BytesOnly,
        },
        correction_framing: match a.correction_framing {
            FramingArg::Conditioned => Framing::Conditioned,
            FramingArg::Recognition => Framing::Recognition,
        },
    };
    let run = RunDir::acquire(&a.out)?;
    let manifest_file = if a.manifest.is_dir() { manifest_path(&a.manifest) } else { a.manifest.clone() };
    let sources: Vec<&str> = files.iter().map(|f| f.source.as_str()).collect();
    run.record(
        "eval anomaly",
        &json!({ "options": opts, "files": sources }),
        &[("checkpoint", &a.checkpoint), ("manifest", &manifest_file)],
    )?;
    let mut e = run_anomaly_eval(&model, &files, &opts)?;
    e.write_reports(&run.path)?;
    println!(
        "{} variants ({} broken): tagging p {:.3e} (reject H0: {}), detection top-1 {:.4}, correction top-1 {:.4}",
        e.detection.counts.overall,
        e.detection.counts.broken,
        e.tagging.p_value,
        e.tagging.reject_h0,
        e.detection.accuracy("overall", 1).unwrap_or(f64::NAN),
        e.correction.accuracy("overall", 1).unwrap_or(f64::NAN),
    );
    Ok(EXIT_OK)
}

fn cmd_generate(a: GenerateArgs) -> Outcome {
    let model = load_model(&a.checkpoint)?;
    let opts = GenerationOptions {
        qualities: a.qualities.clone(),
        classes: a.classes.clone(),
        decode: match a.decode {
            DecodeArg::Greedy => DecodeMode::Greedy,
            DecodeArg::Beam => DecodeMode::Beam { beams: a.beams, top_p: a.top_p },
        },
        max_len: a.max_len,
        write_pnm: a.pnm,
    };
    let run = RunDir::acquire(&a.out)?;
    run.record("eval generate", &opts, &[("checkpoint", &a.checkpoint)])?;
    let report = eval_generation(&model, &opts, Some(&run.path))?;
    write_json(&run.join("generation.json"), &report)?;
    println!(
        "{} files: valid {:.4}, quality match {:.4}",
        report.records.len(),
        report.valid_fraction,
        report.quality_match_fraction
    );
    Ok(EXIT_OK)
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn cmd_codec(c: CodecCommand) -> Outcome {
    match c {
        CodecCommand::Encode { input, quality, subsampling, out } => {
            let raster = Raster::from_pnm(&read(&input)?)
                .ok_or_else(|| CliError::usage(format!("{} is not a binary PGM/PPM", input.display())))?;
            let sub = match subsampling {
                SubsamplingArg::S420 => Subsampling::S420,
                SubsamplingArg::S444 => Subsampling::None,
            };
            let bytes = encode_image(&raster, quality, sub).map_err(|e| CliError::usage(e.to_string()))?;
            std::fs::write(&out, &bytes).map_err(|e| CliError::io(&out, e))?;
            println!("{} bytes", bytes.len());
            Ok(EXIT_OK)
        }
        CodecCommand::Decode { input, out } => {
            let report = decode_stream(&read(&input)?);
            for d in &report.diagnostics {
                eprintln!("{} at {}: {}", d.code, d.offset, d.message);
            }
            let valid = report.is_valid();
            let Some(raster) = report.decoded else {
                return Ok(EXIT_NEGATIVE);
            };
            std::fs::write(&out, raster.to_pnm()).map_err(|e| CliError::io(&out, e))?;
            Ok(if valid { EXIT_OK } else { EXIT_NEGATIVE })
        }
        CodecCommand::Validate { input } => {
            let report = validate_stream(&read(&input)?);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.is_valid() { EXIT_OK } else { EXIT_NEGATIVE })
        }
        CodecCommand::Quality { input } => match estimate_quality(&read(&input)?) {
            Ok(QualityEstimate::Exact(q)) => {
                println!("{q}");
                Ok(EXIT_OK)
            }
            Ok(QualityEstimate::Nonstandard { nearest, distance }) => {
                println!("nonstandard tables (nearest quality {nearest}, distance {distance})");
                Ok(EXIT_NEGATIVE)
            }
            Err(e) => {
                eprintln!("{e}");
                Ok(EXIT_NEGATIVE)
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none_model() -> ModelOverrides {
        ModelOverrides { context: None, layers: None, dim: None, heads: None, dropout: None }
    }

    fn none_hyper() -> HyperOverrides {
        HyperOverrides { epochs: None, lr: None, batch_size: None, warmup: None, weight_decay: None, target_loss: None }
    }

    #[test]
    fn flags_beat_config_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"model": {"model_dim": 32, "layers": 3}, "hyperparams": {"epochs": 9, "learning_rate": 0.01}}"#)
            .unwrap();
        let hyper = HyperOverrides { epochs: Some(4), ..none_hyper() };
        let s = resolve_train_settings(Some(&cfg), 1, &none_model(), &hyper, None).unwrap();
        assert_eq!(s.model.model_dim, 32);
        assert_eq!(s.model.ff_hidden, gated_hidden(32));
        assert_eq!(s.model.layers, 3);
        assert_eq!(s.hyperparams.epochs, 4);
        assert_eq!(s.hyperparams.learning_rate, 0.01);
        assert_eq!(s.hyperparams.batch_size, TrainHyperparams::grayscale().batch_size);
        assert_eq!(s.generation_probability, 0.5);
    }

    #[test]
    fn bad_config_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"model": {"heads": 5}}"#).unwrap();
        assert_eq!(resolve_train_settings(Some(&cfg), 0, &none_model(), &none_hyper(), None).unwrap_err().code, 2);
        std::fs::write(&cfg, "{").unwrap();
        assert_eq!(resolve_train_settings(Some(&cfg), 0, &none_model(), &none_hyper(), None).unwrap_err().code, 2);
    }

    #[test]
    fn seeds_derive_from_root() {
        let a = resolve_train_settings(None, 1, &none_model(), &none_hyper(), None).unwrap();
        let b = resolve_train_settings(None, 2, &none_model(), &none_hyper(), None).unwrap();
        assert_ne!(a.model.seed, b.model.seed);
        assert_ne!(a.hyperparams.seed, b.hyperparams.seed);
        assert_eq!(a.model.seed, resolve_train_settings(None, 1, &none_model(), &none_hyper(), None).unwrap().model.seed);
    }

    #[test]
    fn per_class_selection() {
        let f = |c: u8, q: u32, s: &str| CorpusFile { bytes: vec![], quality: q, class_label: c, source: s.into() };
        let files = vec![f(0, 30, "a"), f(0, 75, "b"), f(1, 75, "c"), f(0, 75, "d"), f(1, 30, "e")];
        let names = |v: Vec<CorpusFile>| v.into_iter().map(|f| f.source).collect::<Vec<_>>();
        assert_eq!(names(pick_per_class(files.clone(), 1, None)), ["a", "c"]);
        assert_eq!(names(pick_per_class(files, 1, Some(75))), ["b", "c"]);
    }
}
