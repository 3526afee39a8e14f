//! Byte-level decoder-only language model.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod infer;
pub mod model;
pub mod ops;
pub mod params;
pub mod real;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader};
pub use config::{ModelConfig, TrainHyperparams};
pub use decode::{beam_search_decode, greedy_decode, Decoded};
pub use infer::{sequence_loglik, token_logprobs, PrefixScorer, Region};
pub use model::{KvCache, Model, TrainingState, Transformer};
pub use real::Real;
pub use train::{
    finetune_recognition, train, FinetuneSource, FixedSentences, RecognitionTarget, SentenceSource, StepLog,
    TrainReport, VariantSource,
};

/// Seeded initialization of an f32 model.
pub fn init_model(config: ModelConfig) -> crate::Result<Model> {
    Model::new(config)
}
