//! Standard tables: zig-zag ordering, the Annex K quantization bases and
//! the Annex K Huffman specifications, plus quality scaling.

use serde::{Deserialize, Serialize};

use crate::error::CodecError;

/// Maps a zig-zag index to its natural (row-major) index inside an 8x8 block.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Annex K luminance base table, natural order.
pub const BASE_LUMINANCE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance base table, natural order.
pub const BASE_CHROMINANCE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// A Huffman table as carried in a DHT segment: code counts per length and
/// the symbols in code order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanSpec {
    pub bits: [u8; 16],
    pub values: Vec<u8>,
}

pub const DC_LUMINANCE_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
pub const DC_CHROMINANCE_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
pub const DC_VALUES: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

pub const AC_LUMINANCE_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
pub const AC_LUMINANCE_VALUES: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

pub const AC_CHROMINANCE_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
pub const AC_CHROMINANCE_VALUES: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

impl HuffmanSpec {
    pub fn dc_luminance() -> Self {
        Self { bits: DC_LUMINANCE_BITS, values: DC_VALUES.to_vec() }
    }

    pub fn ac_luminance() -> Self {
        Self { bits: AC_LUMINANCE_BITS, values: AC_LUMINANCE_VALUES.to_vec() }
    }

    pub fn dc_chrominance() -> Self {
        Self { bits: DC_CHROMINANCE_BITS, values: DC_VALUES.to_vec() }
    }

    pub fn ac_chrominance() -> Self {
        Self { bits: AC_CHROMINANCE_BITS, values: AC_CHROMINANCE_VALUES.to_vec() }
    }
}

/// Quantization tables of a stream, both stored in zig-zag order.
///
/// Grayscale streams carry only the luminance table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantTables {
    pub luminance: Vec<u16>,
    pub chrominance: Option<Vec<u16>>,
}

impl QuantTables {
    /// Luminance divisor for a natural-order coefficient index.
    pub fn luminance_natural(&self) -> [u16; 64] {
        to_natural(&self.luminance)
    }

    pub fn chrominance_natural(&self) -> Option<[u16; 64]> {
        self.chrominance.as_deref().map(to_natural)
    }

    /// Drops the chrominance table, as used by single-component streams.
    pub fn grayscale(mut self) -> Self {
        self.chrominance = None;
        self
    }
}

fn to_natural(zigzag: &[u16]) -> [u16; 64] {
    let mut out = [0u16; 64];
    for (zz, &v) in zigzag.iter().enumerate().take(64) {
        out[ZIGZAG[zz]] = v;
    }
    out
}

/// The libjpeg quality-to-scale rule.
pub fn quality_scale(quality: u32) -> u32 {
    if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    }
}

fn scale_table(base: &[u16; 64], scale: u32) -> Vec<u16> {
    ZIGZAG
        .iter()
        .map(|&natural| {
            let v = (u32::from(base[natural]) * scale + 50) / 100;
            v.clamp(1, 255) as u16
        })
        .collect()
}

/// Annex K tables scaled for `quality` in `1..=100`, in zig-zag order.
pub fn build_quant_tables(quality: u32) -> Result<QuantTables, CodecError> {
    if !(1..=100).contains(&quality) {
        return Err(CodecError::InvalidQuality(quality));
    }
    let scale = quality_scale(quality);
    Ok(QuantTables {
        luminance: scale_table(&BASE_LUMINANCE, scale),
        chrominance: Some(scale_table(&BASE_CHROMINANCE, scale)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; 64];
        for &i in &ZIGZAG {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }

    #[test]
    fn quality_50_is_identity() {
        let t = build_quant_tables(50).unwrap();
        assert_eq!(t.luminance_natural(), BASE_LUMINANCE);
        assert_eq!(t.chrominance_natural().unwrap(), BASE_CHROMINANCE);
    }

    #[test]
    fn quality_30_first_entry() {
        // scale = 5000 / 30 = 166; (16 * 166 + 50) / 100 = 27
        let t = build_quant_tables(30).unwrap();
        assert_eq!(quality_scale(30), 166);
        assert_eq!(t.luminance[0], 27);
        // chrominance DC: (17 * 166 + 50) / 100 = 28
        assert_eq!(t.chrominance.as_ref().unwrap()[0], 28);
    }

    #[test]
    fn quality_100_is_all_ones() {
        let t = build_quant_tables(100).unwrap();
        assert!(t.luminance.iter().all(|&v| v == 1));
        assert!(t.chrominance.unwrap().iter().all(|&v| v == 1));
    }

    #[test]
    fn out_of_range_quality_rejected() {
        assert!(matches!(build_quant_tables(0), Err(CodecError::InvalidQuality(0))));
        assert!(build_quant_tables(101).is_err());
    }

    #[test]
    fn huffman_specs_are_consistent() {
        for spec in [
            HuffmanSpec::dc_luminance(),
            HuffmanSpec::ac_luminance(),
            HuffmanSpec::dc_chrominance(),
            HuffmanSpec::ac_chrominance(),
        ] {
            let total: usize = spec.bits.iter().map(|&b| b as usize).sum();
            assert_eq!(total, spec.values.len());
        }
    }
}
