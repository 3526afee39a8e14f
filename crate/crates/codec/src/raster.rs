use serde::{Deserialize, Serialize};

use crate::error::CodecError;

/// An 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self, CodecError> {
        let raster = Self { width, height, channels, samples };
        raster.check()?;
        Ok(raster)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self { width, height, channels, samples: vec![value; width * height * channels] }
    }

    pub fn check(&self) -> Result<(), CodecError> {
        if self.channels != 1 && self.channels != 3 {
            return Err(CodecError::Channels(self.channels));
        }
        if self.width == 0 || self.height == 0 || self.width > 65535 || self.height > 65535 {
            return Err(CodecError::Dimensions { width: self.width, height: self.height });
        }
        let expected = self.width * self.height * self.channels;
        if self.samples.len() != expected {
            return Err(CodecError::SampleCount {
                width: self.width,
                height: self.height,
                channels: self.channels,
                expected,
                actual: self.samples.len(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.samples[(y * self.width + x) * self.channels + c] = v;
    }

    /// Mean squared error against another raster of identical shape.
    pub fn mse(&self, other: &Raster) -> f64 {
        assert_eq!(self.samples.len(), other.samples.len(), "raster shapes differ");
        let sum: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum();
        sum / self.samples.len() as f64
    }

    /// Peak signal-to-noise ratio in dB; infinite for identical rasters.
    pub fn psnr(&self, other: &Raster) -> f64 {
        let mse = self.mse(other);
        if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (255.0 * 255.0 / mse).log10()
        }
    }

    /// Binary PPM (color) or PGM (grayscale) encoding.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    /// Parses binary PGM/PPM (P5/P6, maxval 255).
    pub fn from_pnm(data: &[u8]) -> Option<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return None;
            }
            fields.push(std::str::from_utf8(&data[start..pos]).ok()?.to_string());
        }
        // exactly one whitespace byte separates the header from the payload
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return None,
        };
        let width: usize = fields[1].parse().ok()?;
        let height: usize = fields[2].parse().ok()?;
        if fields[3] != "255" {
            return None;
        }
        let len = width * height * channels;
        let payload = data.get(pos..pos + len)?;
        Raster::new(width, height, channels, payload.to_vec()).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_sample_count() {
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0; 3]),
            Err(CodecError::SampleCount { expected: 4, actual: 3, .. })
        ));
        assert!(matches!(Raster::new(2, 2, 2, vec![0; 8]), Err(CodecError::Channels(2))));
    }

    #[test]
    fn pnm_round_trip() {
        let r = Raster::new(3, 2, 3, (0..18).collect()).unwrap();
        assert_eq!(Raster::from_pnm(&r.to_pnm()).unwrap(), r);
        let g = Raster::new(4, 1, 1, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(Raster::from_pnm(&g.to_pnm()).unwrap(), g);
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let r = Raster::filled(8, 8, 1, 7);
        assert!(r.psnr(&r).is_infinite());
    }
}
