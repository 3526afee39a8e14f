//! Image-space augmentations and resizing.

use clm_codec::Raster;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledImage;

/// Composition of the supported augmentations, applied in field order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Uniform rotation in `[-d, d]` degrees, nearest-neighbour, fill 0.
    pub rotation_degrees: Option<f64>,
    /// Reflect-pad by this many pixels, then crop back at a random offset.
    pub crop_pad: Option<usize>,
    pub hflip_probability: Option<f64>,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn mnist() -> Self {
        Self { rotation_degrees: Some(15.0), ..Self::default() }
    }

    pub fn cifar() -> Self {
        Self { crop_pad: Some(4), hflip_probability: Some(0.5), ..Self::default() }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }
}

/// The concrete draw of one augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedAugmentation {
    pub angle_degrees: f64,
    pub crop_offset: Option<(usize, usize)>,
    pub flip: bool,
}

pub fn sample_augmentation(spec: &AugmentationSpec, rng: &mut impl Rng) -> AppliedAugmentation {
    let angle_degrees = match spec.rotation_degrees {
        Some(d) if d > 0.0 => rng.gen_range(-d..=d),
        _ => 0.0,
    };
    let crop_offset = spec.crop_pad.map(|p| (rng.gen_range(0..=2 * p), rng.gen_range(0..=2 * p)));
    let flip = spec.hflip_probability.is_some_and(|p| rng.gen_bool(p.clamp(0.0, 1.0)));
    AppliedAugmentation { angle_degrees, crop_offset, flip }
}

pub fn apply_augmentation(raster: &Raster, spec: &AugmentationSpec, applied: &AppliedAugmentation) -> Raster {
    let mut out = raster.clone();
    if applied.angle_degrees != 0.0 {
        out = rotate_nearest(&out, applied.angle_degrees);
    }
    if let (Some(pad), Some((ox, oy))) = (spec.crop_pad, applied.crop_offset) {
        out = reflect_crop(&out, pad, ox, oy);
    }
    if applied.flip {
        out = hflip(&out);
    }
    out
}

pub fn augment(image: &LabeledImage, spec: &AugmentationSpec, rng: &mut impl Rng) -> LabeledImage {
    let applied = sample_augmentation(spec, rng);
    LabeledImage { raster: apply_augmentation(&image.raster, spec, &applied), ..image.clone() }
}

/// Rotation about the image centre by inverse mapping.
pub fn rotate_nearest(raster: &Raster, degrees: f64) -> Raster {
    let (w, h, ch) = (raster.width, raster.height, raster.channels);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = Raster::filled(w, h, ch, 0);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (cos * dx + sin * dy + cx).round();
            let sy = (-sin * dx + cos * dy + cy).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                for c in 0..ch {
                    out.set(x, y, c, raster.get(sx as usize, sy as usize, c));
                }
            }
        }
    }
    out
}

/// Reflect (edge not repeated) index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Reflect-pads by `pad` and crops an image of the original size at `(ox, oy)`
/// in padded coordinates.
pub fn reflect_crop(raster: &Raster, pad: usize, ox: usize, oy: usize) -> Raster {
    let (w, h, ch) = (raster.width, raster.height, raster.channels);
    let mut out = Raster::filled(w, h, ch, 0);
    for y in 0..h {
        let sy = reflect(y as isize + oy as isize - pad as isize, h);
        for x in 0..w {
            let sx = reflect(x as isize + ox as isize - pad as isize, w);
            for c in 0..ch {
                out.set(x, y, c, raster.get(sx, sy, c));
            }
        }
    }
    out
}

pub fn hflip(raster: &Raster) -> Raster {
    let mut out = raster.clone();
    for y in 0..raster.height {
        for x in 0..raster.width {
            for c in 0..raster.channels {
                out.set(x, y, c, raster.get(raster.width - 1 - x, y, c));
            }
        }
    }
    out
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(raster: &Raster, width: usize, height: usize) -> Raster {
    if raster.width == width && raster.height == height {
        return raster.clone();
    }
    let ch = raster.channels;
    let sx = raster.width as f64 / width as f64;
    let sy = raster.height as f64 / height as f64;
    let mut out = Raster::filled(width, height, ch, 0);
    let axis = |dst: usize, scale: f64, n: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        (i0, (i0 + 1).min(n - 1), src - i0 as f64)
    };
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, raster.height);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, sx, raster.width);
            for c in 0..ch {
                let p = |xx, yy| f64::from(raster.get(xx, yy, c));
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.set(x, y, c, (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize, ch: usize) -> Raster {
        Raster::new(w, h, ch, (0..w * h * ch).map(|i| (i * 7 % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn hflip_mirrors() {
        let r = ramp(5, 3, 3);
        let f = apply_augmentation(
            &r,
            &AugmentationSpec { hflip_probability: Some(1.0), ..Default::default() },
            &sample_augmentation(&AugmentationSpec { hflip_probability: Some(1.0), ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)),
        );
        for y in 0..3 {
            for x in 0..5 {
                for c in 0..3 {
                    assert_eq!(f.get(x, y, c), r.get(4 - x, y, c));
                }
            }
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let r = ramp(28, 28, 1);
        let spec = AugmentationSpec { rotation_degrees: Some(0.0), ..Default::default() };
        let img = LabeledImage { raster: r.clone(), class_label: 3, source_id: "x".into() };
        let out = augment(&img, &spec, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out.raster, r);
        assert_eq!(rotate_nearest(&r, 0.0), r);
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let mut r = Raster::filled(4, 4, 1, 0);
        r.set(0, 0, 0, 200);
        let turned = rotate_nearest(&r, 90.0);
        assert_eq!(turned.samples.iter().filter(|&&v| v == 200).count(), 1);
        assert_eq!(turned.get(0, 0, 0), 0);
    }

    #[test]
    fn crop_matches_padded_slice_oracle() {
        let r = ramp(32, 32, 3);
        let pad = 4;
        // explicit padded canvas, built independently of `reflect`
        let pw = 32 + 2 * pad;
        let mut canvas = vec![0u8; pw * pw * 3];
        let mirror = |i: isize| -> usize {
            if i < 0 {
                (-i) as usize
            } else if i >= 32 {
                (62 - i) as usize
            } else {
                i as usize
            }
        };
        for py in 0..pw {
            for px in 0..pw {
                let (sx, sy) = (mirror(px as isize - 4), mirror(py as isize - 4));
                for c in 0..3 {
                    canvas[(py * pw + px) * 3 + c] = r.get(sx, sy, c);
                }
            }
        }
        let spec = AugmentationSpec::cifar();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let applied = sample_augmentation(&spec, &mut rng);
            let (ox, oy) = applied.crop_offset.unwrap();
            assert!(ox <= 8 && oy <= 8);
            let cropped = reflect_crop(&r, pad, ox, oy);
            for y in 0..32 {
                for x in 0..32 {
                    for c in 0..3 {
                        assert_eq!(cropped.get(x, y, c), canvas[((y + oy) * pw + x + ox) * 3 + c]);
                    }
                }
            }
        }
    }

    #[test]
    fn augment_preserves_label_and_shape_and_is_seeded() {
        let img = LabeledImage { raster: ramp(32, 32, 3), class_label: 7, source_id: "s".into() };
        let a = augment(&img, &AugmentationSpec::cifar(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&img, &AugmentationSpec::cifar(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.class_label, 7);
        assert_eq!(a.raster.channels, 3);
    }

    #[test]
    fn bilinear_constant_and_bounds() {
        let flat = Raster::filled(28, 28, 1, 77);
        assert_eq!(resize_bilinear(&flat, 32, 32), Raster::filled(32, 32, 1, 77));
        let r = ramp(28, 28, 1);
        let up = resize_bilinear(&r, 32, 32);
        assert_eq!((up.width, up.height), (32, 32));
        assert_eq!(up.get(0, 0, 0), r.get(0, 0, 0));
    }
}
