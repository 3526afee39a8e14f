//! Strict best-effort decoder. Every deviation from a clean baseline stream
//! is recorded as a [`Diagnostic`]; decoding never aborts.

use serde::{Deserialize, Serialize};

use crate::dct::{idct_block, DctBlock};
use crate::huffman::DecodeTable;
use crate::marker;
use crate::raster::Raster;
use crate::tables::{HuffmanSpec, ZIGZAG};

/// Closed taxonomy of stream defects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    MissingSoi,
    UnknownMarker,
    BadSegmentLength,
    BadQuantTable,
    BadHuffmanTable,
    BadHuffmanCode,
    PrematureEndOfData,
    ExtraneousBytesBeforeEoi,
    MissingEoi,
    DimensionMismatch,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MissingSoi => "missing_soi",
            Self::UnknownMarker => "unknown_marker",
            Self::BadSegmentLength => "bad_segment_length",
            Self::BadQuantTable => "bad_quant_table",
            Self::BadHuffmanTable => "bad_huffman_table",
            Self::BadHuffmanCode => "bad_huffman_code",
            Self::PrematureEndOfData => "premature_end_of_data",
            Self::ExtraneousBytesBeforeEoi => "extraneous_bytes_before_eoi",
            Self::MissingEoi => "missing_eoi",
            Self::DimensionMismatch => "dimension_mismatch",
        }
    }
}

impl std::fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Valid,
    Broken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub status: Status,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(skip)]
    pub decoded: Option<Raster>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.status == Status::Valid
    }

    pub fn has(&self, code: DiagnosticCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }

    pub fn codes(&self) -> Vec<DiagnosticCode> {
        self.diagnostics.iter().map(|d| d.code).collect()
    }
}

/// Decodes as much of `bytes` as possible and materializes the raster when
/// the frame header parsed.
pub fn decode_stream(bytes: &[u8]) -> ValidationReport {
    Decoder::new(bytes, true).run()
}

/// Same classification as [`decode_stream`] without building the raster.
pub fn validate_stream(bytes: &[u8]) -> ValidationReport {
    Decoder::new(bytes, false).run()
}

/// Pixel count above which a frame is rejected outright.
const MAX_PIXELS: usize = 1 << 24;

#[derive(Debug, Clone)]
struct FrameComponent {
    id: u8,
    h: usize,
    v: usize,
    tq: usize,
}

#[derive(Debug, Clone)]
struct Frame {
    width: usize,
    height: usize,
    components: Vec<FrameComponent>,
    hmax: usize,
    vmax: usize,
    mcus_x: usize,
    mcus_y: usize,
}

impl Frame {
    fn blocks_w(&self, c: usize) -> usize {
        self.mcus_x * self.components[c].h
    }

    fn blocks_h(&self, c: usize) -> usize {
        self.mcus_y * self.components[c].v
    }
}

struct ScanComponent {
    index: usize,
    dc: usize,
    ac: usize,
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    byte: u32,
    bits_left: u32,
    /// Bits were requested past the end of the entropy segment.
    overrun: bool,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        Self { data, pos, byte: 0, bits_left: 0, overrun: false }
    }

    #[inline]
    fn bit(&mut self) -> u32 {
        if self.bits_left == 0 {
            if self.overrun || self.pos >= self.data.len() {
                self.overrun = true;
                return 0;
            }
            let b = self.data[self.pos];
            if b == 0xFF {
                match self.data.get(self.pos + 1) {
                    Some(0x00) => self.pos += 2,
                    // a marker, or a lone 0xFF at the very end
                    _ => {
                        self.overrun = true;
                        return 0;
                    }
                }
            } else {
                self.pos += 1;
            }
            self.byte = u32::from(b);
            self.bits_left = 8;
        }
        self.bits_left -= 1;
        (self.byte >> self.bits_left) & 1
    }

    #[inline]
    fn receive(&mut self, n: u32) -> u32 {
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.bit();
        }
        v
    }
}

#[inline]
fn extend(v: u32, size: u32) -> i32 {
    if size == 0 {
        0
    } else if v < (1 << (size - 1)) {
        v as i32 - (1 << size) + 1
    } else {
        v as i32
    }
}

/// Next offset `>= from` where a marker (0xFF followed by neither 0x00 nor
/// 0xFF) begins, skipping fill bytes.
fn find_marker(data: &[u8], from: usize) -> Option<usize> {
    let mut i = from;
    while i + 1 < data.len() {
        if data[i] == 0xFF && data[i + 1] != 0x00 && data[i + 1] != 0xFF {
            return Some(i);
        }
        i += 1;
    }
    None
}

struct Decoder<'a> {
    data: &'a [u8],
    materialize: bool,
    diags: Vec<Diagnostic>,
    qt: [Option<[u16; 64]>; 4],
    dc: [Option<DecodeTable>; 4],
    ac: [Option<DecodeTable>; 4],
    frame: Option<Frame>,
    frame_seen: bool,
    /// Zig-zag ordered coefficients per component, 64 per block.
    coefs: Vec<Vec<i32>>,
    /// Quantization table latched for each component at its first scan.
    latched: Vec<Option<[u16; 64]>>,
    scans: usize,
}

impl<'a> Decoder<'a> {
    fn new(data: &'a [u8], materialize: bool) -> Self {
        Self {
            data,
            materialize,
            diags: Vec::new(),
            qt: [None; 4],
            dc: Default::default(),
            ac: Default::default(),
            frame: None,
            frame_seen: false,
            coefs: Vec::new(),
            latched: Vec::new(),
            scans: 0,
        }
    }

    fn diag(&mut self, code: DiagnosticCode, offset: usize, message: impl Into<String>) {
        self.diags.push(Diagnostic { code, offset, message: message.into() });
    }

    fn run(mut self) -> ValidationReport {
        self.parse();
        let decoded = if self.materialize { self.build_raster() } else { None };
        let status = if self.diags.is_empty() { Status::Valid } else { Status::Broken };
        ValidationReport { status, diagnostics: self.diags, decoded }
    }

    fn parse(&mut self) {
        let data = self.data;
        if data.len() < 2 || data[0] != 0xFF || data[1] != marker::SOI {
            self.diag(DiagnosticCode::MissingSoi, 0, "stream does not start with SOI");
            return;
        }
        let mut pos = 2;
        loop {
            if pos >= data.len() {
                self.diag(DiagnosticCode::PrematureEndOfData, pos, "stream ends where a marker was expected");
                self.diag(DiagnosticCode::MissingEoi, pos, "no EOI marker");
                return;
            }
            if data[pos] != 0xFF || data.get(pos + 1) == Some(&0x00) {
                match find_marker(data, pos) {
                    Some(next) => {
                        self.diag(
                            DiagnosticCode::BadSegmentLength,
                            pos,
                            format!("{} stray bytes where a marker was expected", next - pos),
                        );
                        pos = next;
                    }
                    None => {
                        self.diag(DiagnosticCode::BadSegmentLength, pos, "stray bytes where a marker was expected");
                        self.diag(DiagnosticCode::PrematureEndOfData, data.len(), "stream ends without a marker");
                        self.diag(DiagnosticCode::MissingEoi, data.len(), "no EOI marker");
                        return;
                    }
                }
            }
            // fill bytes
            while pos + 1 < data.len() && data[pos + 1] == 0xFF {
                pos += 1;
            }
            if pos + 1 >= data.len() {
                self.diag(DiagnosticCode::PrematureEndOfData, pos, "stream ends inside a marker");
                self.diag(DiagnosticCode::MissingEoi, pos, "no EOI marker");
                return;
            }
            let m = data[pos + 1];
            let moff = pos;
            pos += 2;
            if m == marker::EOI {
                if self.scans == 0 {
                    self.diag(DiagnosticCode::PrematureEndOfData, moff, "EOI before any scan data");
                }
                return;
            }
            if marker::is_standalone(m) {
                let what = if m == marker::SOI { "duplicate SOI".to_string() } else { format!("unexpected marker 0xFF{m:02X}") };
                self.diag(DiagnosticCode::UnknownMarker, moff, what);
                continue;
            }
            if pos + 2 > data.len() {
                self.diag(DiagnosticCode::PrematureEndOfData, pos, "stream ends inside a segment length");
                self.diag(DiagnosticCode::MissingEoi, pos, "no EOI marker");
                return;
            }
            let len = usize::from(u16::from_be_bytes([data[pos], data[pos + 1]]));
            if len < 2 {
                self.diag(DiagnosticCode::BadSegmentLength, pos, format!("segment length {len} below minimum"));
                continue;
            }
            let seg_end = pos + len;
            if seg_end > data.len() {
                self.diag(
                    DiagnosticCode::PrematureEndOfData,
                    data.len(),
                    format!("segment 0xFF{m:02X} declares {len} bytes past the end of the stream"),
                );
                self.diag(DiagnosticCode::MissingEoi, data.len(), "no EOI marker");
                return;
            }
            let payload_at = pos + 2;
            let payload = &data[payload_at..seg_end];
            match m {
                marker::APP0..=marker::APP15 | marker::COM => {}
                marker::DQT => self.parse_dqt(payload, payload_at),
                marker::DHT => self.parse_dht(payload, payload_at),
                marker::SOF0 => self.parse_sof(payload, payload_at, moff),
                marker::SOS => {
                    if let Some(scan) = self.parse_sos(payload, payload_at, moff) {
                        pos = self.decode_scan(&scan, seg_end);
                        self.scans += 1;
                        continue;
                    }
                    // undecodable scan: skip its entropy data
                    match find_marker(data, seg_end) {
                        Some(next) => {
                            pos = next;
                            continue;
                        }
                        None => {
                            self.diag(DiagnosticCode::PrematureEndOfData, data.len(), "stream ends inside scan data");
                            self.diag(DiagnosticCode::MissingEoi, data.len(), "no EOI marker");
                            return;
                        }
                    }
                }
                0xC1..=0xCF => {
                    self.diag(DiagnosticCode::UnknownMarker, moff, format!("unsupported coding process 0xFF{m:02X}"));
                    self.frame_seen = true;
                }
                marker::DRI => {
                    self.diag(DiagnosticCode::UnknownMarker, moff, "restart intervals are not supported");
                }
                _ => {
                    self.diag(DiagnosticCode::UnknownMarker, moff, format!("unknown marker 0xFF{m:02X}"));
                }
            }
            pos = seg_end;
        }
    }

    fn parse_dqt(&mut self, mut p: &[u8], mut at: usize) {
        while !p.is_empty() {
            let pq = p[0] >> 4;
            let tq = usize::from(p[0] & 15);
            if pq > 1 || tq > 3 {
                self.diag(DiagnosticCode::BadQuantTable, at, format!("bad table selector 0x{:02X}", p[0]));
                return;
            }
            let width = if pq == 0 { 1 } else { 2 };
            if p.len() < 1 + 64 * width {
                self.diag(DiagnosticCode::BadQuantTable, at, "truncated quantization table");
                return;
            }
            let mut table = [0u16; 64];
            for (i, v) in table.iter_mut().enumerate() {
                *v = if width == 1 {
                    u16::from(p[1 + i])
                } else {
                    u16::from_be_bytes([p[1 + 2 * i], p[2 + 2 * i]])
                };
            }
            if let Some(i) = table.iter().position(|&v| v == 0) {
                self.diag(DiagnosticCode::BadQuantTable, at + 1 + i * width, "zero quantization divisor");
            }
            self.qt[tq] = Some(table);
            p = &p[1 + 64 * width..];
            at += 1 + 64 * width;
        }
    }

    fn parse_dht(&mut self, mut p: &[u8], mut at: usize) {
        while !p.is_empty() {
            let tc = p[0] >> 4;
            let th = usize::from(p[0] & 15);
            if tc > 1 || th > 3 {
                self.diag(DiagnosticCode::BadHuffmanTable, at, format!("bad table selector 0x{:02X}", p[0]));
                return;
            }
            if p.len() < 17 {
                self.diag(DiagnosticCode::BadHuffmanTable, at, "truncated code-length counts");
                return;
            }
            let mut bits = [0u8; 16];
            bits.copy_from_slice(&p[1..17]);
            let total: usize = bits.iter().map(|&b| usize::from(b)).sum();
            if total > 256 || p.len() < 17 + total {
                self.diag(DiagnosticCode::BadHuffmanTable, at, format!("table declares {total} symbols, segment too short"));
                return;
            }
            let spec = HuffmanSpec { bits, values: p[17..17 + total].to_vec() };
            match DecodeTable::new(&spec, tc == 0) {
                Ok(t) => {
                    if tc == 0 {
                        self.dc[th] = Some(t);
                    } else {
                        self.ac[th] = Some(t);
                    }
                }
                Err(defect) => {
                    self.diag(DiagnosticCode::BadHuffmanTable, at, format!("invalid Huffman table: {defect}"));
                }
            }
            p = &p[17 + total..];
            at += 17 + total;
        }
    }

    fn parse_sof(&mut self, p: &[u8], at: usize, moff: usize) {
        if self.frame_seen {
            self.diag(DiagnosticCode::UnknownMarker, moff, "second frame header");
            return;
        }
        self.frame_seen = true;
        if p.len() < 6 {
            self.diag(DiagnosticCode::BadSegmentLength, at, "frame header too short");
            return;
        }
        let precision = p[0];
        let height = usize::from(u16::from_be_bytes([p[1], p[2]]));
        let width = usize::from(u16::from_be_bytes([p[3], p[4]]));
        let nf = usize::from(p[5]);
        if p.len() != 6 + 3 * nf {
            self.diag(DiagnosticCode::BadSegmentLength, at, format!("frame header length does not match {nf} components"));
            return;
        }
        if precision != 8 {
            self.diag(DiagnosticCode::DimensionMismatch, at, format!("sample precision {precision}, baseline requires 8"));
            return;
        }
        if width == 0 || height == 0 {
            self.diag(DiagnosticCode::DimensionMismatch, at + 1, format!("degenerate frame {width}x{height}"));
            return;
        }
        if width * height > MAX_PIXELS {
            self.diag(DiagnosticCode::DimensionMismatch, at + 1, format!("frame {width}x{height} too large"));
            return;
        }
        if nf != 1 && nf != 3 {
            self.diag(DiagnosticCode::DimensionMismatch, at + 5, format!("{nf} components, expected 1 or 3"));
            return;
        }
        let mut components = Vec::with_capacity(nf);
        for i in 0..nf {
            let c = &p[6 + 3 * i..9 + 3 * i];
            let (h, v) = (usize::from(c[1] >> 4), usize::from(c[1] & 15));
            if !(1..=4).contains(&h) || !(1..=4).contains(&v) {
                self.diag(DiagnosticCode::DimensionMismatch, at + 7 + 3 * i, format!("sampling factors {h}x{v}"));
                return;
            }
            let tq = usize::from(c[2]);
            if tq > 3 {
                self.diag(DiagnosticCode::BadQuantTable, at + 8 + 3 * i, format!("quantization table {tq} out of range"));
                return;
            }
            components.push(FrameComponent { id: c[0], h, v, tq });
        }
        let hmax = components.iter().map(|c| c.h).max().unwrap_or(1);
        let vmax = components.iter().map(|c| c.v).max().unwrap_or(1);
        let frame = Frame {
            width,
            height,
            mcus_x: width.div_ceil(8 * hmax),
            mcus_y: height.div_ceil(8 * vmax),
            hmax,
            vmax,
            components,
        };
        if self.materialize {
            self.coefs = (0..nf).map(|c| vec![0; frame.blocks_w(c) * frame.blocks_h(c) * 64]).collect();
        }
        self.latched = vec![None; nf];
        self.frame = Some(frame);
    }

    fn parse_sos(&mut self, p: &[u8], at: usize, moff: usize) -> Option<Vec<ScanComponent>> {
        let Some(frame) = self.frame.clone() else {
            // an unusable frame header was already reported
            if !self.frame_seen {
                self.diag(DiagnosticCode::UnknownMarker, moff, "scan before frame header");
            }
            return None;
        };
        let ns = usize::from(*p.first()?);
        if !(1..=4).contains(&ns) || p.len() != 4 + 2 * ns {
            self.diag(DiagnosticCode::BadSegmentLength, at, "scan header length does not match its component count");
            return None;
        }
        let mut scan = Vec::with_capacity(ns);
        for i in 0..ns {
            let sel = p[1 + 2 * i];
            let Some(index) = frame.components.iter().position(|c| c.id == sel) else {
                self.diag(DiagnosticCode::DimensionMismatch, at + 1 + 2 * i, format!("scan references unknown component {sel}"));
                return None;
            };
            if scan.iter().any(|s: &ScanComponent| s.index == index) {
                self.diag(DiagnosticCode::DimensionMismatch, at + 1 + 2 * i, format!("component {sel} repeated in scan"));
                return None;
            }
            let dc = usize::from(p[2 + 2 * i] >> 4);
            let ac = usize::from(p[2 + 2 * i] & 15);
            if dc > 3 || ac > 3 || self.dc[dc].is_none() || self.ac[ac].is_none() {
                self.diag(DiagnosticCode::BadHuffmanTable, at + 2 + 2 * i, format!("scan uses undefined Huffman tables {dc}/{ac}"));
                return None;
            }
            let tq = frame.components[index].tq;
            match self.qt[tq] {
                Some(t) => {
                    if self.latched[index].is_none() {
                        self.latched[index] = Some(t);
                    }
                }
                None => {
                    self.diag(DiagnosticCode::BadQuantTable, at + 1 + 2 * i, format!("quantization table {tq} not defined"));
                    return None;
                }
            }
            scan.push(ScanComponent { index, dc, ac });
        }
        let (ss, se, a) = (p[1 + 2 * ns], p[2 + 2 * ns], p[3 + 2 * ns]);
        if ss != 0 || se != 63 || a != 0 {
            self.diag(DiagnosticCode::UnknownMarker, at + 1 + 2 * ns, format!("non-sequential scan parameters Ss={ss} Se={se} A=0x{a:02X}"));
        }
        if ns > 1 {
            let blocks: usize = scan.iter().map(|s| frame.components[s.index].h * frame.components[s.index].v).sum();
            if blocks > 10 {
                self.diag(DiagnosticCode::DimensionMismatch, at, format!("{blocks} blocks per MCU exceed 10"));
                return None;
            }
        }
        Some(scan)
    }

    /// Decodes one scan starting at `start`; returns the offset of the marker
    /// that ends it (or the stream end).
    fn decode_scan(&mut self, scan: &[ScanComponent], start: usize) -> usize {
        let frame = self.frame.clone().expect("scan parsed against a frame");
        let data = self.data;
        let mut reader = BitReader::new(data, start);
        let mut preds = vec![0i32; scan.len()];

        // (component slot, block x, block y) visited in order
        let mut units: Vec<(usize, usize, usize)> = Vec::new();
        let (units_x, units_y) = if scan.len() == 1 {
            let c = &frame.components[scan[0].index];
            let cw = (frame.width * c.h).div_ceil(frame.hmax);
            let ch = (frame.height * c.v).div_ceil(frame.vmax);
            (cw.div_ceil(8), ch.div_ceil(8))
        } else {
            (frame.mcus_x, frame.mcus_y)
        };

        let mut failure: Option<(DiagnosticCode, String)> = None;
        'mcus: for uy in 0..units_y {
            for ux in 0..units_x {
                units.clear();
                if scan.len() == 1 {
                    units.push((0, ux, uy));
                } else {
                    for (slot, s) in scan.iter().enumerate() {
                        let c = &frame.components[s.index];
                        for by in 0..c.v {
                            for bx in 0..c.h {
                                units.push((slot, ux * c.h + bx, uy * c.v + by));
                            }
                        }
                    }
                }
                for &(slot, bx, by) in &units {
                    let s = &scan[slot];
                    let mut block = [0i32; 64];
                    let result = decode_block(
                        &mut reader,
                        self.dc[s.dc].as_ref().expect("checked in parse_sos"),
                        self.ac[s.ac].as_ref().expect("checked in parse_sos"),
                        &mut preds[slot],
                        &mut block,
                    );
                    if reader.overrun {
                        failure = Some((
                            DiagnosticCode::PrematureEndOfData,
                            format!("entropy data ends inside block ({bx},{by}) of component {}", frame.components[s.index].id),
                        ));
                        break 'mcus;
                    }
                    if let Err(msg) = result {
                        failure = Some((DiagnosticCode::BadHuffmanCode, msg));
                        break 'mcus;
                    }
                    if self.materialize {
                        let bw = frame.blocks_w(s.index);
                        let idx = (by * bw + bx) * 64;
                        if let Some(dst) = self.coefs[s.index].get_mut(idx..idx + 64) {
                            dst.copy_from_slice(&block);
                        }
                    }
                }
            }
        }

        match failure {
            Some((code, msg)) => {
                let offset = reader.pos;
                self.diag(code, offset, msg);
                find_marker(data, reader.pos).unwrap_or(data.len())
            }
            None => {
                // leftover bits of the current byte are padding
                let end = reader.pos;
                match find_marker(data, end) {
                    Some(next) => {
                        if next > end {
                            self.diag(
                                DiagnosticCode::ExtraneousBytesBeforeEoi,
                                end,
                                format!("{} extraneous bytes before marker 0x{:02x}", next - end, data[next + 1]),
                            );
                        }
                        next
                    }
                    None => {
                        if data.len() > end {
                            self.diag(
                                DiagnosticCode::ExtraneousBytesBeforeEoi,
                                end,
                                format!("{} extraneous bytes at end of stream", data.len() - end),
                            );
                        }
                        data.len()
                    }
                }
            }
        }
    }

    fn build_raster(&self) -> Option<Raster> {
        let frame = self.frame.as_ref()?;
        let nf = frame.components.len();
        let mut planes = Vec::with_capacity(nf);
        for c in 0..nf {
            let bw = frame.blocks_w(c);
            let bh = frame.blocks_h(c);
            let pw = bw * 8;
            let mut plane = vec![128u8; pw * bh * 8];
            if let Some(qt_zz) = self.latched[c] {
                let mut q = [0f64; 64];
                for (zz, &v) in qt_zz.iter().enumerate() {
                    q[ZIGZAG[zz]] = f64::from(v);
                }
                for by in 0..bh {
                    for bx in 0..bw {
                        let src = &self.coefs[c][(by * bw + bx) * 64..(by * bw + bx + 1) * 64];
                        let mut block = DctBlock::default();
                        for (zz, &v) in src.iter().enumerate() {
                            let n = ZIGZAG[zz];
                            block.0[n] = f64::from(v) * q[n];
                        }
                        let spatial = idct_block(&block);
                        for y in 0..8 {
                            for x in 0..8 {
                                let v = (spatial.0[y * 8 + x] + 128.0).round().clamp(0.0, 255.0) as u8;
                                plane[(by * 8 + y) * pw + bx * 8 + x] = v;
                            }
                        }
                    }
                }
            }
            planes.push((plane, pw));
        }
        let (w, h) = (frame.width, frame.height);
        let channels = if nf == 3 { 3 } else { 1 };
        let mut out = Raster::filled(w, h, channels, 0);
        let sample = |c: usize, x: usize, y: usize| -> f64 {
            let comp = &frame.components[c];
            let sx = x * comp.h / frame.hmax;
            let sy = y * comp.v / frame.vmax;
            let (plane, pw) = &planes[c];
            f64::from(plane[sy * pw + sx])
        };
        for y in 0..h {
            for x in 0..w {
                if channels == 1 {
                    out.set(x, y, 0, sample(0, x, y) as u8);
                } else {
                    let (yy, cb, cr) = (sample(0, x, y), sample(1, x, y) - 128.0, sample(2, x, y) - 128.0);
                    let to_u8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
                    out.set(x, y, 0, to_u8(yy + 1.402 * cr));
                    out.set(x, y, 1, to_u8(yy - 0.344_136 * cb - 0.714_136 * cr));
                    out.set(x, y, 2, to_u8(yy + 1.772 * cb));
                }
            }
        }
        Some(out)
    }
}

fn decode_block(
    reader: &mut BitReader<'_>,
    dc: &DecodeTable,
    ac: &DecodeTable,
    pred: &mut i32,
    block: &mut [i32; 64],
) -> Result<(), String> {
    let s = dc.decode(|| reader.bit()).ok_or("no DC Huffman code matches")?;
    let s = u32::from(s);
    let diff = extend(reader.receive(s), s);
    *pred += diff;
    block[0] = *pred;
    let mut k = 1usize;
    while k < 64 {
        let rs = ac.decode(|| reader.bit()).ok_or("no AC Huffman code matches")?;
        let run = usize::from(rs >> 4);
        let size = u32::from(rs & 15);
        if size == 0 {
            if run == 15 {
                k += 16;
                if k > 64 {
                    return Err("zero run extends past the end of the block".into());
                }
                continue;
            }
            break;
        }
        k += run;
        if k > 63 {
            return Err(format!("coefficient index {k} past the end of the block"));
        }
        block[k] = extend(reader.receive(size), size);
        k += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_garbage_inputs() {
        assert!(validate_stream(&[]).has(DiagnosticCode::MissingSoi));
        assert!(validate_stream(&[0x12, 0x34, 0x56]).has(DiagnosticCode::MissingSoi));
        let r = validate_stream(&[0xFF, 0xD8]);
        assert!(r.has(DiagnosticCode::PrematureEndOfData));
        assert!(r.has(DiagnosticCode::MissingEoi));
        let r = validate_stream(&[0xFF, 0xD8, 0xFF, 0xD9]);
        assert_eq!(r.codes(), vec![DiagnosticCode::PrematureEndOfData]);
    }

    #[test]
    fn extend_matches_category_coding() {
        assert_eq!(extend(0, 1), -1);
        assert_eq!(extend(1, 1), 1);
        assert_eq!(extend(0b010, 3), -5);
        assert_eq!(extend(0b101, 3), 5);
    }
}
