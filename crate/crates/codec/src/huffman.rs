//! Canonical Huffman code construction for both directions.

use crate::tables::HuffmanSpec;

/// Why a DHT table cannot be turned into a prefix code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableDefect {
    TooManySymbols(usize),
    CodeOverflow { length: usize },
    DcSymbolTooLarge(u8),
}

impl std::fmt::Display for TableDefect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::TooManySymbols(n) => write!(f, "{n} symbols exceed 256"),
            Self::CodeOverflow { length } => write!(f, "code space exhausted at length {length}"),
            Self::DcSymbolTooLarge(s) => write!(f, "DC symbol {s} exceeds 15"),
        }
    }
}

/// Assigns canonical codes: returns `(code, length)` in symbol order.
fn canonical_codes(spec: &HuffmanSpec) -> Result<Vec<(u16, u8)>, TableDefect> {
    let total: usize = spec.bits.iter().map(|&b| b as usize).sum();
    if total > 256 || total > spec.values.len() {
        return Err(TableDefect::TooManySymbols(total));
    }
    let mut codes = Vec::with_capacity(total);
    let mut code: u32 = 0;
    for (i, &count) in spec.bits.iter().enumerate() {
        let length = i + 1;
        for _ in 0..count {
            codes.push((code as u16, length as u8));
            code += 1;
        }
        // the all-ones code of each length is reserved
        if code >= (1 << length) {
            return Err(TableDefect::CodeOverflow { length });
        }
        code <<= 1;
    }
    Ok(codes)
}

/// Symbol -> (code, length) lookup for the encoder.
#[derive(Debug, Clone)]
pub struct EncodeTable {
    codes: [(u16, u8); 256],
}

impl EncodeTable {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let assigned = canonical_codes(spec).expect("built-in tables are well formed");
        let mut codes = [(0u16, 0u8); 256];
        for (&symbol, &code) in spec.values.iter().zip(&assigned) {
            codes[symbol as usize] = code;
        }
        Self { codes }
    }

    #[inline]
    pub fn lookup(&self, symbol: u8) -> (u16, u8) {
        let entry = self.codes[symbol as usize];
        debug_assert!(entry.1 > 0, "symbol {symbol:#04x} has no code");
        entry
    }
}

/// Decoder tables in the classic maxcode/valptr form.
#[derive(Debug, Clone)]
pub struct DecodeTable {
    /// Largest code of each length (index 1..=16), -1 when the length is unused.
    maxcode: [i32; 18],
    /// `values` index of the first code of each length minus that code.
    offset: [i32; 17],
    values: Vec<u8>,
}

impl DecodeTable {
    pub fn new(spec: &HuffmanSpec, is_dc: bool) -> Result<Self, TableDefect> {
        let codes = canonical_codes(spec)?;
        if is_dc {
            if let Some(&s) = spec.values[..codes.len()].iter().find(|&&s| s > 15) {
                return Err(TableDefect::DcSymbolTooLarge(s));
            }
        }
        let mut maxcode = [-1i32; 18];
        let mut offset = [0i32; 17];
        let mut k = 0usize;
        for length in 1..=16 {
            let count = spec.bits[length - 1] as usize;
            if count > 0 {
                offset[length] = k as i32 - i32::from(codes[k].0);
                k += count;
                maxcode[length] = i32::from(codes[k - 1].0);
            }
        }
        // sentinel so the decode loop terminates
        maxcode[17] = i32::MAX;
        Ok(Self { maxcode, offset, values: spec.values[..codes.len()].to_vec() })
    }

    /// Decodes one symbol, pulling bits from `next_bit`. `None` when no code
    /// of length <= 16 matches.
    #[inline]
    pub fn decode(&self, mut next_bit: impl FnMut() -> u32) -> Option<u8> {
        let mut code = next_bit() as i32;
        let mut length = 1;
        while length <= 16 && code > self.maxcode[length] {
            code = (code << 1) | next_bit() as i32;
            length += 1;
        }
        if length > 16 {
            return None;
        }
        let idx = (code + self.offset[length]) as usize;
        self.values.get(idx).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits_of(code: u16, len: u8) -> Vec<u32> {
        (0..len).rev().map(|i| u32::from((code >> i) & 1)).collect()
    }

    #[test]
    fn encode_decode_agree_on_standard_tables() {
        for (spec, dc) in [
            (HuffmanSpec::dc_luminance(), true),
            (HuffmanSpec::ac_luminance(), false),
            (HuffmanSpec::dc_chrominance(), true),
            (HuffmanSpec::ac_chrominance(), false),
        ] {
            let enc = EncodeTable::new(&spec);
            let dec = DecodeTable::new(&spec, dc).unwrap();
            for &symbol in &spec.values {
                let (code, len) = enc.lookup(symbol);
                let mut bits = bits_of(code, len).into_iter();
                assert_eq!(dec.decode(|| bits.next().unwrap_or(0)), Some(symbol));
                assert!(bits.next().is_none(), "decoder consumed too few bits");
            }
        }
    }

    #[test]
    fn known_codes() {
        let enc = EncodeTable::new(&HuffmanSpec::ac_luminance());
        assert_eq!(enc.lookup(0x00), (0b1010, 4)); // EOB
        assert_eq!(enc.lookup(0xF0), (0b1111_1111_001, 11)); // ZRL
        let dc = EncodeTable::new(&HuffmanSpec::dc_luminance());
        assert_eq!(dc.lookup(0), (0b00, 2));
    }

    #[test]
    fn overfull_table_rejected() {
        let mut bits = [0u8; 16];
        bits[0] = 3; // three 1-bit codes cannot exist
        let spec = HuffmanSpec { bits, values: vec![0, 1, 2] };
        assert_eq!(DecodeTable::new(&spec, false).unwrap_err(), TableDefect::CodeOverflow { length: 1 });
    }

    #[test]
    fn dc_symbol_range_checked() {
        let mut bits = [0u8; 16];
        bits[1] = 1;
        let spec = HuffmanSpec { bits, values: vec![16] };
        assert!(DecodeTable::new(&spec, true).is_err());
        assert!(DecodeTable::new(&spec, false).is_ok());
    }

    #[test]
    fn unmatched_pattern_is_none() {
        let dec = DecodeTable::new(&HuffmanSpec::dc_luminance(), true).unwrap();
        // the all-ones 16-bit pattern is not a code in any standard table
        assert_eq!(dec.decode(|| 1), None);
    }
}
