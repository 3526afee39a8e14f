//! Labeled image sources and JPEG corpus materialization.

mod augment;
mod loaders;
mod synthetic;

use std::path::{Path, PathBuf};

use clm_codec::{encode_image, Raster, Subsampling};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{
    apply_augmentation, augment, hflip, reflect_crop, resize_bilinear, rotate_nearest, sample_augmentation,
    AppliedAugmentation, AugmentationSpec,
};
pub use loaders::{load_cifar, load_idx, parse_cifar, parse_idx_images, parse_idx_labels};
pub use synthetic::{synthetic_image, synthetic_images};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::seed;
use crate::tokenizer::QUALITIES;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const IMAGE_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub raster: Raster,
    pub class_label: u8,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Source images with their native split.
#[derive(Debug, Clone, Default)]
pub struct CorpusSource {
    pub dataset: String,
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
}

impl CorpusSource {
    pub fn synthetic(classes: &[u8], train_per_class: usize, val_per_class: usize, seed: u64) -> Self {
        Self {
            dataset: "synthetic".into(),
            train: synthetic_images(classes, train_per_class, seed, "train"),
            val: synthetic_images(classes, val_per_class, seed, "val"),
        }
    }
}

/// Which qualities each augmented copy is encoded at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityPlan {
    /// Every copy at every quality of the set.
    #[default]
    Every,
    /// One quality per copy, cycling through the set per class.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub qualities: Vec<u32>,
    pub augmentation: AugmentationSpec,
    pub multiplier: usize,
    pub quality_plan: QualityPlan,
    pub seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            qualities: QUALITIES.to_vec(),
            augmentation: AugmentationSpec::none(),
            multiplier: 1,
            quality_plan: QualityPlan::Every,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file_path: String,
    pub quality: u32,
    pub class_label: u8,
    pub byte_length: usize,
    pub split: Split,
    pub source_id: String,
    pub augmentation_index: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub dataset: String,
    pub quality_set: Vec<u32>,
    pub quality_plan: QualityPlan,
    pub augmentation_spec: AugmentationSpec,
    pub multiplier: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// A corpus file loaded into memory together with its labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFile {
    pub bytes: Vec<u8>,
    pub quality: u32,
    pub class_label: u8,
    pub source: String,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&raw)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::rejected(format!("manifest schema {} unsupported", m.schema_version)));
        }
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads the files of `split`, checking recorded lengths and hashes.
    pub fn load_files(&self, root: &Path, split: Split) -> Result<Vec<CorpusFile>> {
        self.entries(split)
            .map(|e| {
                let path = root.join(&e.file_path);
                let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
                if bytes.len() != e.byte_length || sha256_hex(&bytes) != e.sha256 {
                    return Err(Error::rejected(format!("{} does not match its manifest entry", e.file_path)));
                }
                Ok(CorpusFile { bytes, quality: e.quality, class_label: e.class_label, source: e.file_path.clone() })
            })
            .collect()
    }
}

fn qualities_for(opts: &CorpusOptions, class_rank: usize, copy: usize) -> Vec<u32> {
    match opts.quality_plan {
        QualityPlan::Every => opts.qualities.clone(),
        QualityPlan::RoundRobin => {
            vec![opts.qualities[(class_rank * opts.multiplier + copy) % opts.qualities.len()]]
        }
    }
}

struct Encoded {
    entry: ManifestEntry,
    bytes: Vec<u8>,
}

fn encode_image_copies(
    image: &LabeledImage,
    split: Split,
    split_index: usize,
    class_rank: usize,
    opts: &CorpusOptions,
) -> Result<Vec<Encoded>> {
    let base = resize_bilinear(&image.raster, IMAGE_SIZE, IMAGE_SIZE);
    let (copies, spec) = match split {
        Split::Train => (opts.multiplier, opts.augmentation.clone()),
        Split::Val => (1, AugmentationSpec::none()),
    };
    let aug_root = seed::derive(opts.seed, "augment");
    let mut out = Vec::new();
    for copy in 0..copies {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(aug_root, &[split as u64, split_index as u64, copy as u64]));
        let raster = apply_augmentation(&base, &spec, &sample_augmentation(&spec, &mut rng));
        for q in qualities_for(opts, class_rank, copy) {
            let bytes = encode_image(&raster, q, Subsampling::S420)
                .map_err(|error| Error::Codec { source_id: image.source_id.clone(), error })?;
            let file_path = format!("{}/{}_a{copy}_q{q}.jpeg", split.as_str(), image.source_id);
            out.push(Encoded {
                entry: ManifestEntry {
                    file_path,
                    quality: q,
                    class_label: image.class_label,
                    byte_length: bytes.len(),
                    split,
                    source_id: image.source_id.clone(),
                    augmentation_index: copy,
                    sha256: sha256_hex(&bytes),
                },
                bytes,
            });
        }
    }
    Ok(out)
}

/// Resizes, augments and encodes every image, writes the files and
/// `manifest.json` under `out_dir`, and returns the manifest.
pub fn build_corpus(source: &CorpusSource, opts: &CorpusOptions, out_dir: &Path) -> Result<CorpusManifest> {
    if opts.multiplier == 0 {
        return Err(Error::rejected("multiplier must be at least 1"));
    }
    if opts.qualities.is_empty() {
        return Err(Error::rejected("empty quality set"));
    }
    if let Some(q) = opts.qualities.iter().find(|q| !QUALITIES.contains(q)) {
        return Err(Error::rejected(format!("quality {q} is not one of {QUALITIES:?}")));
    }
    let mut jobs = Vec::new();
    for (split, images) in [(Split::Train, &source.train), (Split::Val, &source.val)] {
        let mut rank = [0usize; 256];
        for (i, image) in images.iter().enumerate() {
            if image.class_label > 9 {
                return Err(Error::rejected(format!("{}: class label {}", image.source_id, image.class_label)));
            }
            jobs.push((split, i, rank[image.class_label as usize], image));
            rank[image.class_label as usize] += 1;
        }
    }
    let encoded: Vec<Vec<Encoded>> = jobs
        .par_iter()
        .map(|&(split, i, rank, image)| encode_image_copies(image, split, i, rank, opts))
        .collect::<Result<_>>()?;
    let mut encoded: Vec<Encoded> = encoded.into_iter().flatten().collect();
    encoded.sort_by(|a, b| {
        (&a.entry.source_id, a.entry.augmentation_index, a.entry.quality)
            .cmp(&(&b.entry.source_id, b.entry.augmentation_index, b.entry.quality))
    });
    if let Some(w) = encoded.windows(2).find(|w| w[0].entry.file_path == w[1].entry.file_path) {
        return Err(Error::rejected(format!("duplicate source id {}", w[0].entry.source_id)));
    }
    for split in [Split::Train, Split::Val] {
        let dir = out_dir.join(split.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
    }
    for e in &encoded {
        let path = out_dir.join(&e.entry.file_path);
        std::fs::write(&path, &e.bytes).map_err(|err| Error::io(path, err))?;
    }
    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        dataset: source.dataset.clone(),
        quality_set: opts.qualities.clone(),
        quality_plan: opts.quality_plan,
        augmentation_spec: opts.augmentation.clone(),
        multiplier: opts.multiplier,
        seed: opts.seed,
        entries: encoded.into_iter().map(|e| e.entry).collect(),
    };
    let path = manifest_path(out_dir);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
