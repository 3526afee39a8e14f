//! Byte-level vocabulary and condition-wrapped training sentences.
//!
//! Layout: `<s> c1 c2 <bytes> b_1 .. b_N </bytes> c1' c2' </s>`, so an
//! `N`-byte file becomes `N + 8` tokens. Mask flags refer to targets: flag
//! `t` gates the loss of predicting token `t` from tokens `..t`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub type TokenId = u16;

pub const QUALITIES: [u32; 9] = [30, 50, 60, 70, 75, 80, 85, 90, 92];
pub const NUM_CLASSES: u8 = 10;

pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const UNK: TokenId = 258;
pub const BYTES: TokenId = 259;
pub const END_BYTES: TokenId = 260;
pub const FIRST_QUALITY: TokenId = 261;
pub const FIRST_CLASS: TokenId = 270;
pub const VOCAB_SIZE: usize = 280;

/// Bumped whenever the sentence layout or mask convention changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub struct Vocabulary;

impl Vocabulary {
    pub fn token_name(id: TokenId) -> String {
        match id {
            0..=255 => format!("0x{id:02X}"),
            BOS => "<s>".into(),
            EOS => "</s>".into(),
            UNK => "<unk>".into(),
            BYTES => "<bytes>".into(),
            END_BYTES => "</bytes>".into(),
            id if (FIRST_QUALITY..FIRST_CLASS).contains(&id) => {
                format!("<q{}>", QUALITIES[(id - FIRST_QUALITY) as usize])
            }
            id if (FIRST_CLASS..VOCAB_SIZE as TokenId).contains(&id) => format!("<class{}>", id - FIRST_CLASS),
            _ => format!("<invalid:{id}>"),
        }
    }

    /// Hex sha256 over all token names; stamped into checkpoints and caches.
    pub fn hash() -> String {
        let mut h = Sha256::new();
        for id in 0..VOCAB_SIZE as TokenId {
            h.update(Self::token_name(id).as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

pub fn quality_token(quality: u32) -> Result<TokenId> {
    QUALITIES
        .iter()
        .position(|&q| q == quality)
        .map(|i| FIRST_QUALITY + i as TokenId)
        .ok_or_else(|| Error::rejected(format!("quality {quality} is not one of {QUALITIES:?}")))
}

pub fn class_token(class_label: u8) -> Result<TokenId> {
    if class_label < NUM_CLASSES {
        Ok(FIRST_CLASS + TokenId::from(class_label))
    } else {
        Err(Error::rejected(format!("class label {class_label} outside 0..{NUM_CLASSES}")))
    }
}

pub fn token_quality(id: TokenId) -> Option<u32> {
    (FIRST_QUALITY..FIRST_CLASS).contains(&id).then(|| QUALITIES[(id - FIRST_QUALITY) as usize])
}

pub fn token_class(id: TokenId) -> Option<u8> {
    (FIRST_CLASS..VOCAB_SIZE as TokenId).contains(&id).then(|| (id - FIRST_CLASS) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Generation,
    Recognition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceMeta {
    pub quality: u32,
    pub class_label: u8,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub token_ids: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub variant: Variant,
    pub meta: SentenceMeta,
}

impl Sentence {
    pub fn byte_len(&self) -> usize {
        self.token_ids.len() - 8
    }

    /// Index of the trailing quality token.
    pub fn trailing_quality_pos(&self) -> usize {
        self.token_ids.len() - 3
    }

    pub fn trailing_class_pos(&self) -> usize {
        self.token_ids.len() - 2
    }

    pub fn supervised_targets(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

/// Mask for an `n`-byte sentence of the given variant.
///
/// The leading condition targets are never supervised: in the generation
/// variant they are the caller's choice, and in the recognition variant the
/// `<unk>` placeholders carry no information about the file.
pub fn loss_mask(n: usize, variant: Variant) -> Vec<bool> {
    let len = n + 8;
    let mut mask = vec![true; len];
    mask[0] = false;
    mask[1] = false;
    mask[2] = false;
    let trailing = variant == Variant::Recognition;
    mask[len - 3] = trailing;
    mask[len - 2] = trailing;
    mask
}

pub fn encode_sentence(file: &[u8], quality: u32, class_label: u8, variant: Variant, source: &str) -> Result<Sentence> {
    let q = quality_token(quality)?;
    let c = class_token(class_label)?;
    let (c1, c2) = match variant {
        Variant::Generation => (q, c),
        Variant::Recognition => (UNK, UNK),
    };
    let mut ids = Vec::with_capacity(file.len() + 8);
    ids.extend([BOS, c1, c2, BYTES]);
    ids.extend(file.iter().map(|&b| TokenId::from(b)));
    ids.extend([END_BYTES, q, c, EOS]);
    Ok(Sentence {
        loss_mask: loss_mask(file.len(), variant),
        token_ids: ids,
        variant,
        meta: SentenceMeta { quality, class_label, source: source.to_string() },
    })
}

/// `<s> <unk> <unk> <bytes> b* </bytes>`
pub fn recognition_prompt(file: &[u8]) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(file.len() + 5);
    ids.extend([BOS, UNK, UNK, BYTES]);
    ids.extend(file.iter().map(|&b| TokenId::from(b)));
    ids.push(END_BYTES);
    ids
}

/// `<s> <qQ> <classC> <bytes>`
pub fn generation_prompt(quality: u32, class_label: u8) -> Result<Vec<TokenId>> {
    Ok(vec![BOS, quality_token(quality)?, class_token(class_label)?, BYTES])
}

/// Bytes strictly between the first `<bytes>` and the next `</bytes>`.
pub fn detokenize_bytes(tokens: &[TokenId]) -> Result<Vec<u8>> {
    let start = tokens
        .iter()
        .position(|&t| t == BYTES)
        .ok_or_else(|| Error::MalformedSentence("no <bytes> delimiter".into()))?;
    let len = tokens[start + 1..]
        .iter()
        .position(|&t| t == END_BYTES)
        .ok_or_else(|| Error::MalformedSentence("no </bytes> delimiter".into()))?;
    tokens[start + 1..start + 1 + len]
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            u8::try_from(t).map_err(|_| {
                Error::ContractViolation(format!(
                    "special token {} inside byte region at offset {i}",
                    Vocabulary::token_name(t)
                ))
            })
        })
        .collect()
}

/// Bernoulli choice between the two variants, resampled per epoch and
/// derived per sentence so the draw does not depend on processing order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSampler {
    pub generation_probability: f64,
    pub seed: u64,
}

impl VariantSampler {
    pub fn new(generation_probability: f64, seed: u64) -> Self {
        Self { generation_probability, seed }
    }

    pub fn variant(&self, epoch: u64, index: u64) -> Variant {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(self.seed, &[epoch, index]));
        if rng.gen_bool(self.generation_probability.clamp(0.0, 1.0)) {
            Variant::Generation
        } else {
            Variant::Recognition
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheSidecar {
    vocab_hash: String,
    template_version: u32,
    sentences: Vec<CacheEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    len: usize,
    variant: Variant,
    #[serde(flatten)]
    meta: SentenceMeta,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

/// Flat little-endian u16 ids at `path` plus `<path>.json` metadata.
pub fn write_cache(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut bin = Vec::with_capacity(sentences.iter().map(|s| s.token_ids.len() * 2).sum());
    for s in sentences {
        for &id in &s.token_ids {
            bin.write_all(&id.to_le_bytes()).expect("write to vec");
        }
    }
    std::fs::write(path, bin).map_err(|e| Error::io(path, e))?;
    let sidecar = CacheSidecar {
        vocab_hash: Vocabulary::hash(),
        template_version: TEMPLATE_VERSION,
        sentences: sentences
            .iter()
            .map(|s| CacheEntry { len: s.token_ids.len(), variant: s.variant, meta: s.meta.clone() })
            .collect(),
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(side, e))
}

pub fn read_cache(path: &Path) -> Result<Vec<Sentence>> {
    let side = sidecar_path(path);
    let raw = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: CacheSidecar = serde_json::from_slice(&raw)?;
    if sidecar.vocab_hash != Vocabulary::hash() || sidecar.template_version != TEMPLATE_VERSION {
        return Err(Error::rejected("token cache was built with a different vocabulary or template"));
    }
    let bin = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let total: usize = sidecar.sentences.iter().map(|e| e.len).sum();
    if bin.len() != total * 2 {
        return Err(Error::RejectedAt { offset: bin.len(), message: format!("expected {} bytes of ids", total * 2) });
    }
    let mut ids = bin.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]));
    sidecar
        .sentences
        .into_iter()
        .map(|e| {
            if e.len < 8 {
                return Err(Error::MalformedSentence(format!("cached sentence of {} tokens", e.len)));
            }
            let token_ids: Vec<TokenId> = ids.by_ref().take(e.len).collect();
            Ok(Sentence { loss_mask: loss_mask(e.len - 8, e.variant), token_ids, variant: e.variant, meta: e.meta })
        })
        .collect()
}
