//! Floating-point 8x8 type-II DCT with JPEG normalization.

use std::sync::OnceLock;

/// An 8x8 block in natural (row-major) order. Holds level-shifted samples
/// on the spatial side and coefficients on the frequency side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DctBlock(pub [f64; 64]);

impl Default for DctBlock {
    fn default() -> Self {
        Self([0.0; 64])
    }
}

/// `basis[u][x] = C(u)/2 * cos((2x+1) u pi / 16)`, so that the 2-D transform
/// is `F = B f B^T`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                let angle = (2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0;
                *v = 0.5 * c * angle.cos();
            }
        }
        b
    })
}

pub fn fdct_block(block: &DctBlock) -> DctBlock {
    let b = basis();
    let f = &block.0;
    // rows first: tmp[y][u] = sum_x f[y][x] b[u][x]
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += f[y * 8 + x] * b[u][x];
            }
            tmp[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += tmp[y * 8 + u] * b[v][y];
            }
            out[v * 8 + u] = s;
        }
    }
    DctBlock(out)
}

pub fn idct_block(block: &DctBlock) -> DctBlock {
    let b = basis();
    let coef = &block.0;
    // columns: tmp[y][u] = sum_v coef[v][u] b[v][y]
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                s += coef[v * 8 + u] * b[v][y];
            }
            tmp[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for u in 0..8 {
                s += tmp[y * 8 + u] * b[u][x];
            }
            out[y * 8 + x] = s;
        }
    }
    DctBlock(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple-sum definition, independent of the separable path.
    fn reference_fdct(f: &[f64; 64]) -> [f64; 64] {
        let pi = std::f64::consts::PI;
        let c = |k: usize| if k == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += f[y * 8 + x]
                            * ((2 * x + 1) as f64 * u as f64 * pi / 16.0).cos()
                            * ((2 * y + 1) as f64 * v as f64 * pi / 16.0).cos();
                    }
                }
                out[v * 8 + u] = 0.25 * c(u) * c(v) * s;
            }
        }
        out
    }

    #[test]
    fn zero_block() {
        assert_eq!(fdct_block(&DctBlock::default()), DctBlock::default());
        assert_eq!(idct_block(&DctBlock::default()), DctBlock::default());
    }

    #[test]
    fn constant_block_has_dc_8c() {
        for c in [-128.0, -3.0, 1.0, 57.0, 127.0] {
            let out = fdct_block(&DctBlock([c; 64]));
            assert!((out.0[0] - 8.0 * c).abs() < 1e-9);
            assert!(out.0[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn dc_only_inverts_to_constant() {
        let mut coef = [0.0; 64];
        coef[0] = 8.0 * 21.0;
        let out = idct_block(&DctBlock(coef));
        assert!(out.0.iter().all(|v| (v - 21.0).abs() < 1e-9));
    }

    #[test]
    fn matches_direct_definition_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut f = [0.0; 64];
            for v in f.iter_mut() {
                *v = f64::from(rng.gen_range(-128i32..=127));
            }
            let freq = fdct_block(&DctBlock(f));
            let reference = reference_fdct(&f);
            for (a, b) in freq.0.iter().zip(reference.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
            let back = idct_block(&freq);
            for (a, b) in back.0.iter().zip(f.iter()) {
                assert!((a - b).abs() < 0.5);
            }
        }
    }
}
