//! Uniform quantization of the unit hypercube `[-1/2, 1/2]^d`.
//!
//! Reconstruction points sit at integer multiples `γ·a` of the step. Each
//! dimension has `levels` such points: `B` when `B = 1/γ` is odd and `B + 1`
//! when it is even (both faces `±1/2` are then grid points). Per-dimension
//! coordinates are `a + levels/2`, and bins flatten to the 1-based index
//! `j = 1 + Σ coord_m · levels^(m-1)` so that every bin is a nonzero field
//! element.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("quantization step {0} must lie in (0, 1] with 1/step an integer")]
    InvalidStep(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("grid with {levels}^{dim} bins overflows the index range")]
    TooManyBins { levels: u64, dim: usize },
    #[error("coordinate {value} in dimension {dim} lies outside [-1/2, 1/2]")]
    OutOfRange { dim: usize, value: f64 },
    #[error("bin coordinate {coord} in dimension {dim} exceeds {max}")]
    CoordOutOfRange { dim: usize, coord: u64, max: u64 },
    #[error("bin index {0} outside [1, total_bins]")]
    IndexOutOfRange(u128),
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("empty dataset")]
    Empty,
}

/// A flattened 1-based bin index.
pub type BinIndex = u128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    bins_per_dim: u64,
    dim: usize,
    levels: u64,
    total_bins: u128,
    /// Optional shared shift added before quantization.
    shift: Option<Vec<f64>>,
}

impl GridSpec {
    /// Grid with `B = bins_per_dim` bins per unit length.
    pub fn new(bins_per_dim: u64, dim: usize) -> Result<Self, GridError> {
        if bins_per_dim == 0 {
            return Err(GridError::InvalidStep(f64::INFINITY));
        }
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        let levels = 2 * (bins_per_dim / 2) + 1;
        let mut total: u128 = 1;
        for _ in 0..dim {
            total = total
                .checked_mul(levels as u128)
                .filter(|t| *t < (1u128 << 127))
                .ok_or(GridError::TooManyBins { levels, dim })?;
        }
        Ok(Self { bins_per_dim, dim, levels, total_bins: total, shift: None })
    }

    /// Grid from a step `γ`; `1/γ` must be an integer to within `1e-9`.
    pub fn from_step(gamma: f64, dim: usize) -> Result<Self, GridError> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(GridError::InvalidStep(gamma));
        }
        let b = libm::round(1.0 / gamma);
        if libm::fabs(b * gamma - 1.0) >= 1e-9 {
            return Err(GridError::InvalidStep(gamma));
        }
        Self::new(b as u64, dim)
    }

    /// The default `γ ≈ 1/√n`, rounded so that `B` is an integer.
    pub fn default_for(n: usize, dim: usize) -> Result<Self, GridError> {
        let b = libm::round(libm::sqrt(n as f64)).max(1.0);
        Self::new(b as u64, dim)
    }

    /// Adds a shared shift drawn uniformly from `[-γ/2, γ/2)^d`.
    pub fn with_random_shift<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        let half = 0.5 * self.gamma();
        let shift = (0..self.dim).map(|_| rng.random_range(-half..half)).collect();
        self.shift = Some(shift);
        self
    }

    pub fn gamma(&self) -> f64 {
        1.0 / self.bins_per_dim as f64
    }

    pub fn bins_per_dim(&self) -> u64 {
        self.bins_per_dim
    }

    /// Reconstruction points per dimension.
    pub fn levels(&self) -> u64 {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_bins(&self) -> u128 {
        self.total_bins
    }

    pub fn shift(&self) -> Option<&[f64]> {
        self.shift.as_deref()
    }

    fn offset(&self) -> i64 {
        (self.levels / 2) as i64
    }

    /// Per-dimension bin coordinates in `[0, levels)`.
    pub fn quantize_point(&self, x: &[f64]) -> Result<Vec<u64>, GridError> {
        if x.len() != self.dim {
            return Err(GridError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let b = self.bins_per_dim as f64;
        let offset = self.offset();
        x.iter()
            .enumerate()
            .map(|(m, &y)| {
                if !(-0.5..=0.5).contains(&y) {
                    return Err(GridError::OutOfRange { dim: m, value: y });
                }
                let y = match &self.shift {
                    Some(s) => (y + s[m]).clamp(-0.5, 0.5),
                    None => y,
                };
                let a = nearest_multiple(y * b).clamp(-offset, offset);
                Ok((a + offset) as u64)
            })
            .collect()
    }

    pub fn quantize(&self, x: &[f64]) -> Result<BinIndex, GridError> {
        let coords = self.quantize_point(x)?;
        self.flatten(&coords)
    }

    pub fn flatten(&self, coords: &[u64]) -> Result<BinIndex, GridError> {
        if coords.len() != self.dim {
            return Err(GridError::DimensionMismatch { expected: self.dim, got: coords.len() });
        }
        flatten_coords(coords, self.levels)
    }

    pub fn unflatten(&self, j: BinIndex) -> Result<Vec<u64>, GridError> {
        if j == 0 || j > self.total_bins {
            return Err(GridError::IndexOutOfRange(j));
        }
        let mut rest = j - 1;
        let base = self.levels as u128;
        let coords = (0..self.dim)
            .map(|_| {
                let c = (rest % base) as u64;
                rest /= base;
                c
            })
            .collect();
        Ok(coords)
    }

    /// Reconstruction point `γ·a` of bin `j` (minus the shift, if any).
    pub fn bin_center(&self, j: BinIndex) -> Result<Vec<f64>, GridError> {
        let coords = self.unflatten(j)?;
        Ok(self.center_of(&coords))
    }

    pub(crate) fn center_of(&self, coords: &[u64]) -> Vec<f64> {
        let gamma = self.gamma();
        let offset = self.offset();
        coords
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                let center = gamma * (c as i64 - offset) as f64;
                match &self.shift {
                    Some(s) => center - s[m],
                    None => center,
                }
            })
            .collect()
    }

    /// Reconstruction of `x` after quantization.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>, GridError> {
        let coords = self.quantize_point(x)?;
        Ok(self.center_of(&coords))
    }
}

/// `argmin_a |t - a|` over the integers, ties toward the lower `a`.
fn nearest_multiple(t: f64) -> i64 {
    let mut a = libm::ceil(t - 0.5) as i64;
    // Guard against rounding in `t - 0.5`.
    let dist = |a: i64| libm::fabs(t - a as f64);
    if dist(a - 1) <= dist(a) {
        a -= 1;
    } else if dist(a + 1) < dist(a) {
        a += 1;
    }
    a
}

/// `1 + Σ coord_m · base^(m-1)`.
pub fn flatten_coords(coords: &[u64], base: u64) -> Result<BinIndex, GridError> {
    let mut j: u128 = 0;
    let mut scale: u128 = 1;
    for (m, &c) in coords.iter().enumerate() {
        if c >= base {
            return Err(GridError::CoordOutOfRange { dim: m, coord: c, max: base - 1 });
        }
        j += c as u128 * scale;
        scale = scale.checked_mul(base as u128).ok_or(GridError::TooManyBins {
            levels: base,
            dim: coords.len(),
        })?;
    }
    Ok(j + 1)
}

/// Per-dimension affine map of raw data into `[-1/2, 1/2]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTransform {
    center: Vec<f64>,
    range: Vec<f64>,
}

impl ScaleTransform {
    /// Fits min/max scaling on a row-major `n × dim` matrix.
    pub fn fit(coords: &[f64], dim: usize) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        if coords.is_empty() {
            return Err(GridError::Empty);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(GridError::DimensionMismatch { expected: dim, got: coords.len() % dim });
        }
        let mut lo = alloc::vec![f64::INFINITY; dim];
        let mut hi = alloc::vec![f64::NEG_INFINITY; dim];
        for (row, point) in coords.chunks_exact(dim).enumerate() {
            for (col, &v) in point.iter().enumerate() {
                if !v.is_finite() {
                    return Err(GridError::NonFinite { row, col });
                }
                lo[col] = lo[col].min(v);
                hi[col] = hi[col].max(v);
            }
        }
        let center = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        Ok(Self { center, range })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn apply_point(&self, x: &[f64], out: &mut [f64]) {
        for m in 0..self.center.len() {
            out[m] = if self.range[m] > 0.0 {
                ((x[m] - self.center[m]) / self.range[m]).clamp(-0.5, 0.5)
            } else {
                0.0
            };
        }
    }

    pub fn apply(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = alloc::vec![0.0; coords.len()];
        for (x, y) in coords.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.apply_point(x, y);
        }
        out
    }

    pub fn invert(&self, scaled: &[f64]) -> Vec<f64> {
        let d = self.dim();
        scaled
            .chunks_exact(d)
            .flat_map(|y| (0..d).map(move |m| y[m] * self.range[m] + self.center[m]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn fit_scale_examples() {
        let t = ScaleTransform::fit(&[3.0], 1).unwrap();
        assert_eq!(t.apply(&[3.0]), vec![0.0]);
        let t = ScaleTransform::fit(&[0.0, 10.0], 1).unwrap();
        assert_eq!(t.apply(&[0.0, 10.0]), vec![-0.5, 0.5]);
        let t = ScaleTransform::fit(&[-2.0, 0.0, 2.0], 1).unwrap();
        assert_eq!(t.apply(&[-2.0, 0.0, 2.0]), vec![-0.5, 0.0, 0.5]);
        assert_eq!(
            ScaleTransform::fit(&[0.0, f64::NAN], 1),
            Err(GridError::NonFinite { row: 1, col: 0 })
        );
    }

    #[test]
    fn quantize_examples() {
        let g = GridSpec::from_step(0.25, 1).unwrap();
        assert_eq!(g.levels(), 5);
        let a = |y: f64| g.quantize_point(&[y]).unwrap()[0] as i64 - 2;
        assert_eq!(a(0.0), 0);
        assert_eq!(g.reconstruct(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(a(0.3), 1);
        assert_eq!(g.reconstruct(&[0.3]).unwrap(), vec![0.25]);
        // midpoint between a = 1 and a = 2
        assert_eq!(a(0.375), 1);
        assert_eq!(a(-0.375), -2);
        assert_eq!(a(0.5), 2);
        assert_eq!(a(-0.5), -2);
        assert!(matches!(g.quantize_point(&[0.6]), Err(GridError::OutOfRange { .. })));
    }

    #[test]
    fn midpoint_tie_matches_argmin_scan() {
        let g = GridSpec::from_step(0.25, 1).unwrap();
        let y = 0.375;
        let best = (1..=2)
            .min_by(|&a, &b| {
                let da = libm::fabs(y - 0.25 * a as f64);
                let db = libm::fabs(y - 0.25 * b as f64);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        assert_eq!(g.quantize_point(&[y]).unwrap()[0] as i64 - 2, best);
    }

    #[test]
    fn odd_grid_boundary_ties_stay_in_range() {
        let g = GridSpec::new(3, 1).unwrap();
        assert_eq!(g.levels(), 3);
        assert_eq!(g.quantize_point(&[-0.5]).unwrap(), vec![0]);
        assert_eq!(g.quantize_point(&[0.5]).unwrap(), vec![2]);
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(flatten_coords(&[0, 0], 2).unwrap(), 1);
        assert_eq!(flatten_coords(&[1, 1], 2).unwrap(), 4);
        let g = GridSpec::from_step(1.0 / 3.0, 3).unwrap();
        assert_eq!(g.flatten(&[1, 0, 1]).unwrap(), 11);
        assert!(matches!(g.flatten(&[3, 0, 0]), Err(GridError::CoordOutOfRange { .. })));
    }

    #[test]
    fn flatten_is_a_bijection_on_small_grid() {
        let g = GridSpec::new(3, 3).unwrap();
        let mut seen = [false; 27];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let j = g.flatten(&[a, b, c]).unwrap();
                    assert!((1..=27).contains(&j));
                    assert!(!seen[(j - 1) as usize]);
                    seen[(j - 1) as usize] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn unflatten_examples() {
        // B = 2 has three levels per dimension; use the pure helper for base 2.
        let g = GridSpec::new(3, 4).unwrap();
        assert_eq!(g.total_bins(), 81);
        for j in 1..=81 {
            assert_eq!(g.flatten(&g.unflatten(j).unwrap()).unwrap(), j);
        }
        assert_eq!(g.unflatten(1).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(g.unflatten(0), Err(GridError::IndexOutOfRange(0)));
        assert_eq!(g.unflatten(82), Err(GridError::IndexOutOfRange(82)));
        let g2 = GridSpec::new(1, 2).unwrap();
        assert_eq!(g2.unflatten(1).unwrap(), vec![0, 0]);
    }

    #[test]
    fn default_step_tracks_sqrt_n() {
        let g = GridSpec::default_for(30_000, 10).unwrap();
        assert_eq!(g.bins_per_dim(), 173);
        assert_eq!(g.total_bins(), 173u128.pow(10));
    }

    #[test]
    fn overflowing_grid_is_rejected() {
        assert!(matches!(GridSpec::new(1000, 20), Err(GridError::TooManyBins { .. })));
    }

    proptest! {
        #[test]
        fn distortion_is_bounded(b in 1u64..50, pts in proptest::collection::vec(-0.5f64..=0.5, 1..6)) {
            let g = GridSpec::new(b, pts.len()).unwrap();
            let r = g.reconstruct(&pts).unwrap();
            let dist2: f64 = pts.iter().zip(&r).map(|(x, y)| (x - y) * (x - y)).sum();
            let bound = libm::sqrt(pts.len() as f64) * g.gamma() / 2.0;
            prop_assert!(libm::sqrt(dist2) <= bound + 1e-12);
        }

        #[test]
        fn quantization_is_idempotent(b in 1u64..50, pts in proptest::collection::vec(-0.5f64..=0.5, 1..6)) {
            let g = GridSpec::new(b, pts.len()).unwrap();
            let r = g.reconstruct(&pts).unwrap();
            prop_assert_eq!(g.quantize(&r).unwrap(), g.quantize(&pts).unwrap());
        }

        #[test]
        fn scale_round_trip(rows in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 2..20)) {
            let flat: Vec<f64> = rows.iter().flat_map(|&(a, b)| [a, b]).collect();
            let t = ScaleTransform::fit(&flat, 2).unwrap();
            let back = t.invert(&t.apply(&flat));
            for (i, (x, y)) in flat.iter().zip(&back).enumerate() {
                let range = t.range[i % 2];
                if range > 0.0 {
                    prop_assert!(libm::fabs(x - y) <= 1e-12 * range.max(libm::fabs(*x)));
                }
            }
        }
    }
}
