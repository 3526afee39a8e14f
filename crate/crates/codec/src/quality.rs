//! Quality estimation by inverting the quantization-table scaling rule.

use serde::{Deserialize, Serialize};

use crate::error::CodecError;
use crate::marker;
use crate::tables::{build_quant_tables, QuantTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityEstimate {
    /// The stream's tables are exactly `build_quant_tables(q)`.
    Exact(u32),
    /// No exact match; `nearest` minimizes the summed absolute table difference.
    Nonstandard { nearest: u32, distance: u32 },
}

impl QualityEstimate {
    pub fn exact(self) -> Option<u32> {
        match self {
            Self::Exact(q) => Some(q),
            Self::Nonstandard { .. } => None,
        }
    }

    pub fn nearest(self) -> u32 {
        match self {
            Self::Exact(q) | Self::Nonstandard { nearest: q, .. } => q,
        }
    }
}

/// Collects the 8-bit DQT tables (ids 0 and 1) preceding the first scan.
pub fn read_quant_tables(bytes: &[u8]) -> Result<QuantTables, CodecError> {
    let bad = |msg: &str| CodecError::QuantTable(msg.to_string());
    if bytes.len() < 2 || bytes[..2] != [0xFF, marker::SOI] {
        return Err(bad("missing SOI"));
    }
    let mut tables: [Option<Vec<u16>>; 4] = Default::default();
    let mut pos = 2;
    while pos + 4 <= bytes.len() {
        if bytes[pos] != 0xFF {
            return Err(bad("segment structure broken before first scan"));
        }
        let m = bytes[pos + 1];
        if m == 0xFF {
            pos += 1;
            continue;
        }
        if m == marker::SOS || m == marker::EOI {
            break;
        }
        if marker::is_standalone(m) {
            pos += 2;
            continue;
        }
        let len = usize::from(u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]));
        if len < 2 || pos + 2 + len > bytes.len() {
            return Err(bad("segment length out of range"));
        }
        if m == marker::DQT {
            let mut p = &bytes[pos + 4..pos + 2 + len];
            while !p.is_empty() {
                let (pq, tq) = (p[0] >> 4, usize::from(p[0] & 15));
                let width = if pq == 0 { 1 } else { 2 };
                if pq > 1 || tq > 3 || p.len() < 1 + 64 * width {
                    return Err(bad("malformed DQT payload"));
                }
                let table = (0..64)
                    .map(|i| {
                        if width == 1 {
                            u16::from(p[1 + i])
                        } else {
                            u16::from_be_bytes([p[1 + 2 * i], p[2 + 2 * i]])
                        }
                    })
                    .collect();
                tables[tq] = Some(table);
                p = &p[1 + 64 * width..];
            }
        }
        pos += 2 + len;
    }
    let [lum, chrom, ..] = tables;
    let luminance = lum.ok_or_else(|| bad("no table with id 0"))?;
    Ok(QuantTables { luminance, chrominance: chrom })
}

fn distance(a: &[u16], b: &[u16]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| u32::from(x.abs_diff(y))).sum()
}

/// Matches the stream's tables against every standard quality.
pub fn estimate_quality(bytes: &[u8]) -> Result<QualityEstimate, CodecError> {
    let found = read_quant_tables(bytes)?;
    Ok(match_tables(&found))
}

pub fn match_tables(found: &QuantTables) -> QualityEstimate {
    let mut best = (u32::MAX, 0u32);
    for q in 1..=100 {
        let reference = build_quant_tables(q).expect("quality in range");
        let mut d = distance(&found.luminance, &reference.luminance);
        if let (Some(c), Some(rc)) = (&found.chrominance, &reference.chrominance) {
            d += distance(c, rc);
        }
        if d == 0 {
            return QualityEstimate::Exact(q);
        }
        if d < best.0 {
            best = (d, q);
        }
    }
    QualityEstimate::Nonstandard { nearest: best.1, distance: best.0 }
}
