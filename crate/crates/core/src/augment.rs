//! Random cropping and timestamp masking used to build two views of a batch.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::DiffTensor;

/// Two overlapping crops `[a1, b1)` and `[a2, b2)` of a length-`T` series.
///
/// Contrasting happens on the overlap `[a2, b1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropPair {
    pub a1: usize,
    pub a2: usize,
    pub b1: usize,
    pub b2: usize,
}

impl CropPair {
    pub fn is_valid(&self, t: usize) -> bool {
        self.a1 <= self.a2 && self.a2 < self.b1 && self.b1 <= self.b2 && self.b2 <= t
    }

    pub fn overlap_len(&self) -> usize {
        self.b1 - self.a2
    }

    /// Overlap position inside the first view.
    pub fn overlap_in_first(&self) -> (usize, usize) {
        (self.a2 - self.a1, self.b1 - self.a1)
    }

    /// Overlap position inside the second view.
    pub fn overlap_in_second(&self) -> (usize, usize) {
        (0, self.b1 - self.a2)
    }
}

/// Number of valid crop pairs for a series of length `t`, i.e. `C(t+3, 4)`.
pub fn crop_pair_count(t: usize) -> usize {
    let n = t + 3;
    n * (n - 1) * (n - 2) * (n - 3) / 24
}

/// Draws a crop pair uniformly from all valid pairs.
///
/// Valid pairs `a1 <= a2 < b1 <= b2 <= T` are in bijection with 4-subsets
/// `u1 < u2 < u3 < u4` of `0..T+3` via `(a1, a2+1, b1+1, b2+2)`.
pub fn sample_crop_pair<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Result<CropPair> {
    if t < 2 {
        return Err(Error::config(format!("cropping needs T >= 2, got {t}")));
    }
    let mut u = sample(rng, t + 3, 4).into_vec();
    u.sort_unstable();
    Ok(CropPair {
        a1: u[0],
        a2: u[1] - 1,
        b1: u[2] - 1,
        b2: u[3] - 2,
    })
}

/// Zeroes whole timestamps with probability `p`.
///
/// `h` has shape `[..., T, H]`; one Bernoulli draw is made per leading index
/// and timestamp, in row-major order.
pub fn timestamp_mask<'t, R: Rng + ?Sized>(
    h: DiffTensor<'t>,
    p: f64,
    rng: &mut R,
) -> Result<DiffTensor<'t>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("mask probability {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(h);
    }
    let mut shape = h.shape();
    if shape.len() < 2 {
        return Err(Error::shape("timestamp_mask", format!("expected [..., T, H], got {shape:?}")));
    }
    *shape.last_mut().unwrap() = 1;
    let draws: usize = shape.iter().product();
    let keep: Vec<bool> = (0..draws).map(|_| !rng.random_bool(p)).collect();
    h.masked(&keep, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn enumerate(t: usize) -> HashSet<CropPair> {
        let mut all = HashSet::new();
        for a1 in 0..=t {
            for a2 in a1..=t {
                for b1 in a2 + 1..=t {
                    for b2 in b1..=t {
                        all.insert(CropPair { a1, a2, b1, b2 });
                    }
                }
            }
        }
        all
    }

    #[test]
    fn count_matches_enumeration() {
        for t in 2..12 {
            assert_eq!(enumerate(t).len(), crop_pair_count(t));
        }
    }

    #[test]
    fn short_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let c = sample_crop_pair(2, &mut rng).unwrap();
            assert!(c.is_valid(2));
        }
        assert!(sample_crop_pair(1, &mut rng).is_err());
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let a = sample_crop_pair(10, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_crop_pair(10, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_pair_observed_at_t8() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seen: HashSet<CropPair> = (0..10_000)
            .map(|_| sample_crop_pair(8, &mut rng).unwrap())
            .collect();
        assert_eq!(seen, enumerate(8));
    }

    #[test]
    fn invariants_hold_for_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [2, 3, 7, 50] {
            for _ in 0..10_000 {
                let c = sample_crop_pair(t, &mut rng).unwrap();
                assert!(c.is_valid(t), "{c:?} at T={t}");
                let (s1, e1) = c.overlap_in_first();
                assert_eq!(e1 - s1, c.overlap_len());
                assert!(e1 <= c.b1 - c.a1);
            }
        }
    }

    #[test]
    fn zero_probability_is_identity() {
        let tape = Tape::new();
        let h = tape.leaf(&[3, 2], vec![1.0; 6]).unwrap();
        let out = timestamp_mask(h, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.to_vec(), vec![1.0; 6]);
    }

    #[test]
    fn masked_fraction_concentrates() {
        let tape = Tape::new();
        let t = 10_000;
        let h = tape.constant(&[t, 2], vec![1.0; 2 * t]).unwrap();
        let out = timestamp_mask(h, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().to_vec();
        let masked = out.chunks(2).filter(|r| r[0] == 0.0).count();
        for row in out.chunks(2) {
            assert_eq!(row[0], row[1]);
        }
        assert!((masked as f64 / t as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn gradient_is_zero_at_masked_positions() {
        let tape = Tape::new();
        let h = tape.leaf(&[6, 2], (0..12).map(f64::from).collect()).unwrap();
        let out = timestamp_mask(h, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        out.sum().backward().unwrap();
        let g = h.grad().unwrap();
        for (row, v) in g.chunks(2).zip(out.to_vec().chunks(2)) {
            let kept = v[0] != 0.0 || v[1] != 0.0;
            assert_eq!(row, if kept { [1.0, 1.0] } else { [0.0, 0.0] });
        }
    }

    #[test]
    fn masking_commutes_with_scaling() {
        let tape = Tape::new();
        let vals: Vec<f64> = (1..=20).map(f64::from).collect();
        let h = tape.constant(&[10, 2], vals).unwrap();
        let a = timestamp_mask(h.mul_scalar(3.0), 0.5, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = timestamp_mask(h, 0.5, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap()
            .mul_scalar(3.0);
        assert_eq!(a.to_vec(), b.to_vec());
    }
}
