//! Row-wise kernels shared by the training and inference paths.

use super::real::Real;

pub const NORM_EPS: f64 = 1e-5;

/// `out[t] = x[t] * gain / rms(x[t])`; stores `1 / rms` per row.
pub fn rmsnorm<T: Real>(x: &[T], gain: &[T], out: &mut [T], rinv: &mut [T], d: usize) {
    let eps = T::from_f64_lossy(NORM_EPS);
    let dn = T::from_usize(d).unwrap();
    for ((row, o), r) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(rinv.iter_mut()) {
        let ms = row.iter().fold(T::zero(), |s, &v| s + v * v) / dn;
        *r = (ms + eps).sqrt().recip();
        for ((o, &v), &g) in o.iter_mut().zip(row).zip(gain) {
            *o = v * *r * g;
        }
    }
}

/// Accumulates input and gain gradients of [`rmsnorm`].
pub fn rmsnorm_backward<T: Real>(x: &[T], gain: &[T], rinv: &[T], dy: &[T], dx: &mut [T], dgain: &mut [T], d: usize) {
    let dn = T::from_usize(d).unwrap();
    for (((row, dyr), dxr), &r) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)).zip(rinv) {
        let mut dot = T::zero();
        for i in 0..d {
            dot += gain[i] * dyr[i] * row[i];
            dgain[i] += dyr[i] * row[i] * r;
        }
        let c = r * r * r * dot / dn;
        for i in 0..d {
            dxr[i] += r * gain[i] * dyr[i] - row[i] * c;
        }
    }
}

/// Rotary tables: `cos[p * half + i]`, `sin[p * half + i]` for pair `i` of a head.
#[derive(Debug, Clone)]
pub struct Rope<T> {
    pub half: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Real> Rope<T> {
    pub fn new(head_dim: usize, context: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(context * half);
        let mut sin = Vec::with_capacity(context * half);
        for p in 0..context {
            for i in 0..half {
                let theta = base.powf(-2.0 * i as f64 / head_dim as f64);
                let (s, c) = (p as f64 * theta).sin_cos();
                cos.push(T::from_f64_lossy(c));
                sin.push(T::from_f64_lossy(s));
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates interleaved pairs of every head in rows `x` (row `r` sits at
    /// position `start + r`). `inverse` applies the transpose rotation, which
    /// is also the backward pass.
    pub fn apply(&self, x: &mut [T], d: usize, start: usize, inverse: bool) {
        let hd = 2 * self.half;
        for (r, row) in x.chunks_exact_mut(d).enumerate() {
            let base = (start + r) * self.half;
            let (cos, sin) = (&self.cos[base..base + self.half], &self.sin[base..base + self.half]);
            for head in row.chunks_exact_mut(hd) {
                for i in 0..self.half {
                    let (a, b) = (head[2 * i], head[2 * i + 1]);
                    let s = if inverse { -sin[i] } else { sin[i] };
                    head[2 * i] = a * cos[i] - b * s;
                    head[2 * i + 1] = a * s + b * cos[i];
                }
            }
        }
    }
}

/// Softmax over `row[..=last]` in place; entries after `last` are zeroed.
pub fn causal_softmax_row<T: Real>(row: &mut [T], last: usize) {
    let max = row[..=last].iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in &mut row[..=last] {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in &mut row[..=last] {
        *v *= inv;
    }
    for v in &mut row[last + 1..] {
        *v = T::zero();
    }
}

/// Log-softmax of one row of logits into `out`.
pub fn log_softmax<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln() + max;
    for (o, &v) in out.iter_mut().zip(logits) {
        *o = v - lse;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

/// `act = silu(gate) * up`
pub fn swiglu<T: Real>(gate: &[T], up: &[T], act: &mut [T]) {
    for ((a, &g), &u) in act.iter_mut().zip(gate).zip(up) {
        *a = g * sigmoid(g) * u;
    }
}

/// Gradients of [`swiglu`] with respect to `gate` and `up`.
pub fn swiglu_backward<T: Real>(gate: &[T], up: &[T], dact: &[T], dgate: &mut [T], dup: &mut [T]) {
    for i in 0..gate.len() {
        let s = sigmoid(gate[i]);
        let silu = gate[i] * s;
        dup[i] = dact[i] * silu;
        dgate[i] = dact[i] * up[i] * s * (T::one() + gate[i] * (T::one() - s));
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rope_inverse_and_norm_preserving() {
        let rope = Rope::<f64>::new(8, 16, 10_000.0);
        let orig: Vec<f64> = (0..3 * 16).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut x = orig.clone();
        rope.apply(&mut x, 16, 5, false);
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert!((norm(&x) - norm(&orig)).abs() < 1e-12);
        assert_ne!(x, orig);
        rope.apply(&mut x, 16, 5, true);
        for (a, b) in x.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let rope = Rope::<f32>::new(4, 2, 10_000.0);
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        rope.apply(&mut x, 4, 0, false);
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_rows() {
        let mut row = vec![1.0f64, 2.0, 3.0, 100.0];
        causal_softmax_row(&mut row, 2);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row[3], 0.0);
        let mut out = vec![0.0; 3];
        log_softmax(&[0.0f64, 0.0, 0.0], &mut out);
        assert!(out.iter().all(|v| (v + 3f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 5]), 0);
    }

    #[test]
    fn rmsnorm_unit_rms() {
        let x = vec![3.0f64, -4.0, 0.0, 5.0];
        let mut out = vec![0.0; 4];
        let mut r = vec![0.0; 1];
        rmsnorm(&x, &[1.0; 4], &mut out, &mut r, 4);
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-5);
    }
}
