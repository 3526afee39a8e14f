//! Baseline sequential JFIF encoder.

use crate::dct::{fdct_block, DctBlock};
use crate::error::CodecError;
use crate::huffman::EncodeTable;
use crate::marker;
use crate::raster::Raster;
use crate::tables::{build_quant_tables, HuffmanSpec, ZIGZAG};

/// Chroma subsampling for color rasters. Grayscale ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Subsampling {
    /// 4:4:4
    None,
    /// 4:2:0, the JFIF default.
    #[default]
    S420,
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        Self { out, acc: 0, nbits: 0 }
    }

    fn put(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (code & ((1 << len) - 1));
        self.nbits += len;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
            self.nbits -= 8;
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    /// Pads the final partial byte with one-bits.
    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
        self.out
    }
}

/// Magnitude category of a coefficient and its appended bits.
#[inline]
fn category(value: i32) -> (u32, u32) {
    let magnitude = value.unsigned_abs();
    let size = 32 - magnitude.leading_zeros();
    let bits = if value < 0 { (value - 1) as u32 & ((1 << size) - 1) } else { value as u32 };
    (size, bits)
}

struct ComponentPlan {
    id: u8,
    h: usize,
    v: usize,
    table: usize,
    plane: Vec<f64>,
    plane_width: usize,
}

fn padded_plane(source: &[u8], width: usize, height: usize, pw: usize, ph: usize) -> Vec<f64> {
    let mut plane = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = y.min(height - 1);
        for x in 0..pw {
            let sx = x.min(width - 1);
            plane.push(f64::from(source[sy * width + sx]));
        }
    }
    plane
}

fn rgb_to_ycbcr(raster: &Raster) -> [Vec<u8>; 3] {
    let n = raster.width * raster.height;
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for px in raster.samples.chunks_exact(3) {
        let (r, g, b) = (f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        let to_u8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        y.push(to_u8(0.299 * r + 0.587 * g + 0.114 * b));
        cb.push(to_u8(-0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0));
        cr.push(to_u8(0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0));
    }
    [y, cb, cr]
}

/// Averages 2x2 neighbourhoods of an already padded plane.
fn downsample_2x2(plane: &[f64], pw: usize, ph: usize) -> Vec<f64> {
    let (w, h) = (pw / 2, ph / 2);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = plane[2 * y * pw + 2 * x]
                + plane[2 * y * pw + 2 * x + 1]
                + plane[(2 * y + 1) * pw + 2 * x]
                + plane[(2 * y + 1) * pw + 2 * x + 1];
            out.push((s / 4.0).round());
        }
    }
    out
}

/// Encodes a raster as a baseline JFIF stream with Annex K Huffman tables.
pub fn encode_image(raster: &Raster, quality: u32, subsampling: Subsampling) -> Result<Vec<u8>, CodecError> {
    raster.check()?;
    let tables = build_quant_tables(quality)?;
    let (w, h) = (raster.width, raster.height);
    let color = raster.channels == 3;
    let (hmax, vmax) = if color && subsampling == Subsampling::S420 { (2, 2) } else { (1, 1) };
    let mcu_w = 8 * hmax;
    let mcu_h = 8 * vmax;
    let mcus_x = w.div_ceil(mcu_w);
    let mcus_y = h.div_ceil(mcu_h);
    let (pw, ph) = (mcus_x * mcu_w, mcus_y * mcu_h);

    let mut components = Vec::new();
    if color {
        let [y, cb, cr] = rgb_to_ycbcr(raster);
        components.push(ComponentPlan { id: 1, h: hmax, v: vmax, table: 0, plane: padded_plane(&y, w, h, pw, ph), plane_width: pw });
        for (id, src) in [(2u8, cb), (3u8, cr)] {
            let full = padded_plane(&src, w, h, pw, ph);
            let (plane, plane_width) =
                if hmax == 2 { (downsample_2x2(&full, pw, ph), pw / 2) } else { (full, pw) };
            components.push(ComponentPlan { id, h: 1, v: 1, table: 1, plane, plane_width });
        }
    } else {
        components.push(ComponentPlan {
            id: 1,
            h: 1,
            v: 1,
            table: 0,
            plane: padded_plane(&raster.samples, w, h, pw, ph),
            plane_width: pw,
        });
    }

    let quant_zz: Vec<&[u16]> = if color {
        vec![&tables.luminance, tables.chrominance.as_deref().expect("built with chrominance")]
    } else {
        vec![&tables.luminance]
    };

    let mut out = Vec::with_capacity(1024);
    out.extend_from_slice(&[0xFF, marker::SOI]);
    write_app0(&mut out);
    for (id, table) in quant_zz.iter().enumerate() {
        write_dqt(&mut out, id as u8, table);
    }
    write_sof0(&mut out, w as u16, h as u16, &components);
    let specs = [
        (0x00, HuffmanSpec::dc_luminance()),
        (0x10, HuffmanSpec::ac_luminance()),
        (0x01, HuffmanSpec::dc_chrominance()),
        (0x11, HuffmanSpec::ac_chrominance()),
    ];
    let used = if color { 4 } else { 2 };
    for (class_id, spec) in &specs[..used] {
        write_dht(&mut out, *class_id, spec);
    }
    write_sos(&mut out, &components);

    let dc_tables = [EncodeTable::new(&specs[0].1), EncodeTable::new(&specs[2].1)];
    let ac_tables = [EncodeTable::new(&specs[1].1), EncodeTable::new(&specs[3].1)];
    let divisors: Vec<[f64; 64]> = quant_zz
        .iter()
        .map(|zz| {
            let mut natural = [0.0; 64];
            for (i, &q) in zz.iter().enumerate() {
                natural[ZIGZAG[i]] = f64::from(q);
            }
            natural
        })
        .collect();

    let mut writer = BitWriter::new(out);
    let mut predictors = vec![0i32; components.len()];
    for my in 0..mcus_y {
        for mx in 0..mcus_x {
            for (ci, comp) in components.iter().enumerate() {
                for by in 0..comp.v {
                    for bx in 0..comp.h {
                        let x0 = (mx * comp.h + bx) * 8;
                        let y0 = (my * comp.v + by) * 8;
                        let mut block = DctBlock::default();
                        for y in 0..8 {
                            for x in 0..8 {
                                block.0[y * 8 + x] = comp.plane[(y0 + y) * comp.plane_width + x0 + x] - 128.0;
                            }
                        }
                        let coef = fdct_block(&block);
                        let mut quantized = [0i32; 64];
                        for (zz, q) in quantized.iter_mut().enumerate() {
                            let natural = ZIGZAG[zz];
                            // f64::round rounds half away from zero
                            *q = (coef.0[natural] / divisors[comp.table][natural]).round() as i32;
                        }
                        encode_block(
                            &mut writer,
                            &quantized,
                            &mut predictors[ci],
                            &dc_tables[comp.table],
                            &ac_tables[comp.table],
                        );
                    }
                }
            }
        }
    }
    let mut out = writer.finish();
    out.extend_from_slice(&[0xFF, marker::EOI]);
    Ok(out)
}

fn encode_block(w: &mut BitWriter, zz: &[i32; 64], pred: &mut i32, dc: &EncodeTable, ac: &EncodeTable) {
    let diff = zz[0] - *pred;
    *pred = zz[0];
    let (size, bits) = category(diff);
    let (code, len) = dc.lookup(size as u8);
    w.put(u32::from(code), u32::from(len));
    if size > 0 {
        w.put(bits, size);
    }
    let mut run = 0u32;
    for &value in &zz[1..] {
        if value == 0 {
            run += 1;
            continue;
        }
        while run > 15 {
            let (code, len) = ac.lookup(0xF0);
            w.put(u32::from(code), u32::from(len));
            run -= 16;
        }
        let (size, bits) = category(value);
        let (code, len) = ac.lookup(((run << 4) | size) as u8);
        w.put(u32::from(code), u32::from(len));
        w.put(bits, size);
        run = 0;
    }
    if run > 0 {
        let (code, len) = ac.lookup(0x00);
        w.put(u32::from(code), u32::from(len));
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn write_app0(out: &mut Vec<u8>) {
    // JFIF 1.01, aspect-ratio units, 1:1 density, no thumbnail
    segment(out, marker::APP0, &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0]);
}

fn write_dqt(out: &mut Vec<u8>, id: u8, zigzag: &[u16]) {
    let mut payload = Vec::with_capacity(65);
    payload.push(id);
    payload.extend(zigzag.iter().map(|&v| v as u8));
    segment(out, marker::DQT, &payload);
}

fn write_sof0(out: &mut Vec<u8>, width: u16, height: u16, comps: &[ComponentPlan]) {
    let mut payload = vec![8];
    payload.extend_from_slice(&height.to_be_bytes());
    payload.extend_from_slice(&width.to_be_bytes());
    payload.push(comps.len() as u8);
    for c in comps {
        payload.extend_from_slice(&[c.id, ((c.h as u8) << 4) | c.v as u8, c.table as u8]);
    }
    segment(out, marker::SOF0, &payload);
}

fn write_dht(out: &mut Vec<u8>, class_id: u8, spec: &HuffmanSpec) {
    let mut payload = vec![class_id];
    payload.extend_from_slice(&spec.bits);
    payload.extend_from_slice(&spec.values);
    segment(out, marker::DHT, &payload);
}

fn write_sos(out: &mut Vec<u8>, comps: &[ComponentPlan]) {
    let mut payload = vec![comps.len() as u8];
    for c in comps {
        let t = c.table as u8;
        payload.extend_from_slice(&[c.id, (t << 4) | t]);
    }
    payload.extend_from_slice(&[0, 63, 0]);
    segment(out, marker::SOS, &payload);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        assert_eq!(category(0), (0, 0));
        assert_eq!(category(1), (1, 1));
        assert_eq!(category(-1), (1, 0));
        assert_eq!(category(5), (3, 5));
        assert_eq!(category(-5), (3, 0b010));
        assert_eq!(category(-1023), (10, 0));
    }

    #[test]
    fn bit_writer_stuffs_ff() {
        let mut w = BitWriter::new(Vec::new());
        w.put(0xFF, 8);
        w.put(0b101, 3);
        assert_eq!(w.finish(), vec![0xFF, 0x00, 0b1011_1111]);
    }

    #[test]
    fn constant_mid_gray_encodes_zero_blocks() {
        let raster = Raster::filled(32, 32, 1, 128);
        let bytes = encode_image(&raster, 50, Subsampling::S420).unwrap();
        // scan header is 14 bytes including its marker; entropy data follows
        let sos = bytes.windows(2).position(|w| w == [0xFF, marker::SOS]).unwrap();
        let data = &bytes[sos + 10..bytes.len() - 2];
        // 16 blocks x (DC "00" + EOB "1010") = 96 bits = 12 bytes
        assert_eq!(data, &[0b0010_1000, 0b1010_0010, 0b1000_1010].repeat(4)[..]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let raster = Raster::new(16, 8, 3, (0..384).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
        let a = encode_image(&raster, 75, Subsampling::S420).unwrap();
        let b = encode_image(&raster, 75, Subsampling::S420).unwrap();
        assert_eq!(a, b);
    }
}
