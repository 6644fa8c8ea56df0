//! Randomized Hadamard rotation `R = H A / sqrt(d)`.
//!
//! `A` is a diagonal of Rademacher signs drawn from public randomness (a seed
//! every party knows), `H` the Walsh-Hadamard matrix. Inputs whose length is
//! not a power of two are zero-padded; the rotation acts in the padded space.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_all_finite, invalid, Result};
use crate::rng::{self, GENERATOR_CHACHA20};

pub fn padded_dim(d: usize) -> usize {
    d.max(1).next_power_of_two()
}

/// Unnormalized in-place Walsh-Hadamard transform, `x <- H x`.
pub fn fwht(values: &mut [f64]) -> Result<()> {
    let n = values.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(invalid(format!("fwht length must be a power of two, got {n}")));
    }
    let mut h = 1;
    while h < n {
        for block in values.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Public randomness identifying one rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RotationSeed {
    seed: u64,
    dim: usize,
    padded_dim: usize,
    generator: u8,
}

impl RotationSeed {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("rotation dimension must be positive"));
        }
        Ok(Self {
            seed,
            dim,
            padded_dim: padded_dim(dim),
            generator: GENERATOR_CHACHA20,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn generator(&self) -> u8 {
        self.generator
    }

    /// Rademacher diagonal: bit `j % 64` of the `j / 64`-th keystream word,
    /// set bit meaning `-1`.
    pub fn signs(&self) -> Vec<f64> {
        let mut rng = rng::seeded(self.seed);
        let mut out = Vec::with_capacity(self.padded_dim);
        let mut word = 0u64;
        for j in 0..self.padded_dim {
            if j % 64 == 0 {
                word = rng.next_u64();
            }
            out.push(if (word >> (j % 64)) & 1 == 1 { -1.0 } else { 1.0 });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedVector {
    pub values: Vec<f64>,
    pub original_dim: usize,
}

/// A materialized rotation: the sign diagonal plus dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    dim: usize,
    signs: Vec<f64>,
}

impl Rotation {
    pub fn from_seed(seed: &RotationSeed) -> Self {
        Self {
            dim: seed.dim(),
            signs: seed.signs(),
        }
    }

    /// Explicit signs; `signs.len()` must be the padded dimension of `dim`.
    pub fn from_signs(dim: usize, signs: Vec<f64>) -> Result<Self> {
        if dim == 0 || signs.len() != padded_dim(dim) {
            return Err(invalid(format!(
                "expected {} signs for dimension {dim}, got {}",
                padded_dim(dim),
                signs.len()
            )));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(invalid("rotation signs must be +1 or -1"));
        }
        Ok(Self { dim, signs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn padded_dim(&self) -> usize {
        self.signs.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<RotatedVector> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "rotation expects dimension {}, got {}",
                self.dim,
                x.len()
            )));
        }
        ensure_all_finite("x", x)?;
        let mut buf = vec![0.0; self.padded_dim()];
        for ((b, &v), &s) in buf.iter_mut().zip(x).zip(&self.signs) {
            *b = v * s;
        }
        fwht(&mut buf)?;
        let scale = 1.0 / (self.padded_dim() as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= scale);
        Ok(RotatedVector {
            values: buf,
            original_dim: self.dim,
        })
    }

    /// `R^{-1} = A H / sqrt(d)`, truncated to the original dimension.
    pub fn invert(&self, y: &RotatedVector) -> Result<Vec<f64>> {
        self.invert_values(&y.values, y.original_dim)
    }

    pub(crate) fn invert_values(&self, values: &[f64], original_dim: usize) -> Result<Vec<f64>> {
        if values.len() != self.padded_dim() || original_dim != self.dim {
            return Err(invalid(format!(
                "inverse rotation expects {} values for dimension {}, got {} for {}",
                self.padded_dim(),
                self.dim,
                values.len(),
                original_dim
            )));
        }
        let mut buf = values.to_vec();
        fwht(&mut buf)?;
        let scale = 1.0 / (self.padded_dim() as f64).sqrt();
        buf.truncate(self.dim);
        for (v, &s) in buf.iter_mut().zip(&self.signs) {
            *v *= scale * s;
        }
        Ok(buf)
    }
}

pub fn rotate(x: &[f64], seed: &RotationSeed) -> Result<RotatedVector> {
    if x.len() != seed.dim() {
        return Err(invalid(format!(
            "seed is for dimension {}, input has {}",
            seed.dim(),
            x.len()
        )));
    }
    Rotation::from_seed(seed).apply(x)
}

pub fn inverse_rotate(y: &RotatedVector, seed: &RotationSeed) -> Result<Vec<f64>> {
    if y.original_dim != seed.dim() || y.values.len() != seed.padded_dim() {
        return Err(invalid("rotated vector does not match the seed's dimensions"));
    }
    Rotation::from_seed(seed).invert(y)
}

/// High-probability bound on every rotated coordinate of `n` vectors of norm
/// at most `clip_bound`: `2 D sqrt(log(2 n d / delta) / d)`, with `d`
/// replaced by its padded dimension.
pub fn xmax_bound(clip_bound: f64, n: usize, d: usize, delta: f64) -> f64 {
    let d = padded_dim(d) as f64;
    2.0 * clip_bound * ((2.0 * n as f64 * d / delta).ln() / d).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Dense H(2^m) from the block recursion, as an independent reference.
    fn hadamard(n: usize) -> Vec<Vec<f64>> {
        let mut h = vec![vec![1.0]];
        while h.len() < n {
            let m = h.len();
            let mut next = vec![vec![0.0; 2 * m]; 2 * m];
            for i in 0..m {
                for j in 0..m {
                    next[i][j] = h[i][j];
                    next[i][j + m] = h[i][j];
                    next[i + m][j] = h[i][j];
                    next[i + m][j + m] = -h[i][j];
                }
            }
            h = next;
        }
        h
    }

    #[test]
    fn fwht_examples() {
        let mut x = vec![1.0, 0.0];
        fwht(&mut x).unwrap();
        assert_eq!(x, vec![1.0, 1.0]);

        let mut x = vec![1.0, 1.0];
        fwht(&mut x).unwrap();
        assert_eq!(x, vec![2.0, 0.0]);

        let mut x = vec![1.0, -1.0, 1.0, -1.0];
        fwht(&mut x).unwrap();
        assert_eq!(x, vec![0.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn fwht_rejects_bad_length() {
        assert!(fwht(&mut [1.0, 2.0, 3.0]).is_err());
        assert!(fwht(&mut []).is_err());
    }

    #[test]
    fn fwht_matches_dense_matrix() {
        for n in [1usize, 2, 4, 8, 16, 32] {
            let h = hadamard(n);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
            let want: Vec<f64> = h
                .iter()
                .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            let mut got = x.clone();
            fwht(&mut got).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rotation_examples() {
        let r = Rotation::from_signs(2, vec![1.0, 1.0]).unwrap();
        let y = r.apply(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(y.values[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(y.values[1], 1.0 / 2f64.sqrt(), epsilon = 1e-15);

        let r = Rotation::from_signs(4, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = r.apply(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y.values, vec![0.0, 2.0, 0.0, 0.0]);
        assert_eq!(r.invert(&y).unwrap(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn round_trip_with_padding() {
        let seed = RotationSeed::new(99, 3).unwrap();
        assert_eq!(seed.padded_dim(), 4);
        let x = [0.3, -0.7, 0.2];
        let y = rotate(&x, &seed).unwrap();
        assert_eq!(y.values.len(), 4);
        let back = inverse_rotate(&y, &seed).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }

        let zero = rotate(&[0.0; 3], &seed).unwrap();
        assert_eq!(inverse_rotate(&zero, &seed).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let seed = RotationSeed::new(1, 4).unwrap();
        assert!(rotate(&[1.0; 5], &seed).is_err());
        let other = RotationSeed::new(1, 8).unwrap();
        let y = rotate(&[1.0; 4], &seed).unwrap();
        assert!(inverse_rotate(&y, &other).is_err());
        assert!(RotationSeed::new(0, 0).is_err());
        assert!(Rotation::from_signs(3, vec![1.0; 3]).is_err());
        assert!(Rotation::from_signs(2, vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn signs_are_deterministic_and_balanced() {
        let s = RotationSeed::new(12345, 4096).unwrap();
        assert_eq!(s.signs(), s.signs());
        let neg = s.signs().iter().filter(|&&v| v < 0.0).count();
        // 4096 fair coin flips: mean 2048, sd 32.
        assert!((neg as i64 - 2048).abs() < 5 * 32);
        assert_ne!(s.signs(), RotationSeed::new(12346, 4096).unwrap().signs());
    }

    #[test]
    fn xmax_examples() {
        // delta chosen so that log(2nd/delta) = 1: bound = 2 D / sqrt(d).
        let delta = 2.0 * 4.0 / std::f64::consts::E;
        assert_relative_eq!(xmax_bound(1.0, 1, 4, delta), 1.0, max_relative = 1e-14);
        // 30-digit reference: 0.346017915879749006307977102598
        assert_relative_eq!(
            xmax_bound(1.0, 10, 1024, 1e-9),
            0.346_017_915_879_749,
            max_relative = 1e-13
        );
        // padded: d = 1000 behaves like 1024
        assert_eq!(xmax_bound(1.0, 10, 1000, 1e-9), xmax_bound(1.0, 10, 1024, 1e-9));
    }

    #[test]
    fn xmax_decreasing_in_d() {
        let mut last = f64::INFINITY;
        for m in 1..20 {
            let b = xmax_bound(1.0, 10, 1 << m, 1e-6);
            assert!(b < last);
            last = b;
        }
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(xs in prop::collection::vec(-10.0f64..10.0, 1..300), seed in any::<u64>()) {
            let s = RotationSeed::new(seed, xs.len()).unwrap();
            let y = rotate(&xs, &s).unwrap();
            let nx = crate::stats::l2_norm(&xs);
            let ny = crate::stats::l2_norm(&y.values);
            prop_assert!((nx - ny).abs() <= 1e-9 * nx.max(1e-300));
            let back = inverse_rotate(&y, &s).unwrap();
            for (a, b) in back.iter().zip(&xs) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn fwht_involution(xs in prop::collection::vec(-1e3f64..1e3, 64)) {
            let mut y = xs.clone();
            fwht(&mut y).unwrap();
            fwht(&mut y).unwrap();
            for (a, b) in y.iter().zip(&xs) {
                prop_assert!((a - 64.0 * b).abs() <= 1e-9 * (64.0 * b.abs()).max(1.0));
            }
        }
    }
}
