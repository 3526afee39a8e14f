use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("quality {0} outside 1..=100")]
    InvalidQuality(u32),
    #[error("raster has {actual} samples, expected {expected} ({width}x{height}x{channels})")]
    SampleCount { width: usize, height: usize, channels: usize, expected: usize, actual: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("raster dimensions must be non-zero and at most 65535, got {width}x{height}")]
    Dimensions { width: usize, height: usize },
    #[error("no parseable quantization table: {0}")]
    QuantTable(String),
}
