//! Minimal baseline JPEG (JFIF) codec: encoder, strict decoder/validator
//! with a closed diagnostic taxonomy, and quality-table tooling.
//!
//! ```
//! use clm_codec::{encode_image, estimate_quality, validate_stream, Raster, Subsampling};
//!
//! let raster = Raster::filled(32, 32, 1, 90);
//! let bytes = encode_image(&raster, 75, Subsampling::S420).unwrap();
//! assert!(validate_stream(&bytes).is_valid());
//! assert_eq!(estimate_quality(&bytes).unwrap().exact(), Some(75));
//! ```

pub mod dct;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod huffman;
pub mod marker;
pub mod quality;
pub mod raster;
pub mod tables;

pub use dct::{fdct_block, idct_block, DctBlock};
pub use decoder::{decode_stream, validate_stream, Diagnostic, DiagnosticCode, Status, ValidationReport};
pub use encoder::{encode_image, Subsampling};
pub use error::CodecError;
pub use quality::{estimate_quality, read_quant_tables, QualityEstimate};
pub use raster::Raster;
pub use tables::{build_quant_tables, QuantTables};
