//! Weighted K-means++ seeding, Lloyd iterations and clustering objectives.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Largest instance the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_POINTS: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusteringError {
    #[error("cannot pick {k} centroids from {distinct} distinct points")]
    Infeasible { k: usize, distinct: usize },
    #[error("K must be positive")]
    ZeroK,
    #[error("centroid list is empty")]
    EmptyCentroids,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate in row {0}")]
    NonFinite(usize),
    #[error("weight of row {0} is not a positive finite number")]
    BadWeight(usize),
    #[error("exhaustive search is limited to {BRUTE_FORCE_MAX_POINTS} points, got {0}")]
    OracleTooLarge(usize),
    #[error("point index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("no mapping for local cluster {0}")]
    MissingMapping(usize),
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Points in row-major order with positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDataset {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedDataset {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self, ClusteringError> {
        if dim == 0 || coords.len() != dim * weights.len() {
            return Err(ClusteringError::DimensionMismatch { expected: dim * weights.len(), got: coords.len() });
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(ClusteringError::NonFinite(i / dim));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ClusteringError::BadWeight(i));
        }
        Ok(Self { dim, coords, weights })
    }

    pub fn unweighted(dim: usize, coords: Vec<f64>) -> Result<Self, ClusteringError> {
        let n = coords.len().checked_div(dim).unwrap_or(0);
        Self::new(dim, coords, vec![1.0; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ClusteringError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut coords = Vec::with_capacity(dim * rows.len());
        for r in rows {
            if r.len() != dim {
                return Err(ClusteringError::DimensionMismatch { expected: dim, got: r.len() });
            }
            coords.extend_from_slice(r);
        }
        Self::unweighted(dim, coords)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn total_weight(&self) -> f64 {
        let mut s = CompensatedSum::default();
        self.weights.iter().for_each(|&w| s.add(w));
        s.value()
    }

    /// Number of distinct coordinate vectors.
    pub fn distinct_count(&self) -> usize {
        let key = |p: &[f64]| -> Vec<u64> { p.iter().map(|&x| (x + 0.0).to_bits()).collect() };
        self.points().map(key).collect::<BTreeSet<_>>().len()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        let mut weights = Vec::with_capacity(idx.len());
        for &i in idx {
            coords.extend_from_slice(self.point(i));
            weights.push(self.weights[i]);
        }
        Self { dim: self.dim, coords, weights }
    }

    /// Replaces each point of integer weight `w` by `w` unit-weight copies.
    pub fn expand_integer_weights(&self) -> Self {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, &w) in self.points().zip(&self.weights) {
            for _ in 0..(w as usize) {
                coords.extend_from_slice(p);
            }
            weights.resize(weights.len() + w as usize, 1.0);
        }
        Self { dim: self.dim, coords, weights }
    }
}

/// Ordered centroids with the total weight assigned to each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidList {
    dim: usize,
    coords: Vec<f64>,
    sizes: Vec<f64>,
    /// Dataset rows the centroids were drawn from, in selection order.
    /// Present only for seeding output.
    sources: Option<Vec<usize>>,
}

impl CentroidList {
    pub fn from_points(dim: usize, coords: Vec<f64>) -> Result<Self, ClusteringError> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(ClusteringError::DimensionMismatch { expected: dim, got: coords.len() });
        }
        let k = coords.len() / dim;
        Ok(Self { dim, coords, sizes: vec![0.0; k], sources: None })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new(), sizes: Vec::new(), sources: None }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn sources(&self) -> Option<&[usize]> {
        self.sources.as_deref()
    }

    pub(crate) fn set_sources(&mut self, sources: Option<Vec<usize>>) {
        self.sources = sources;
    }

    pub(crate) fn sizes_mut(&mut self) -> &mut [f64] {
        &mut self.sizes
    }

    /// Index and squared distance of the nearest centroid, ties to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Recomputes sizes from the nearest-centroid assignment of `data`.
    pub fn assign_sizes(&mut self, data: &WeightedDataset) -> Assignment {
        let a = assign(data, self);
        self.sizes = vec![0.0; self.len()];
        let mut acc = vec![CompensatedSum::default(); self.len()];
        for (i, &k) in a.labels.iter().enumerate() {
            acc[k].add(data.weight(i));
        }
        for (s, c) in self.sizes.iter_mut().zip(acc) {
            *s = c.value();
        }
        a
    }
}

/// Nearest-centroid label of every point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

pub fn assign(data: &WeightedDataset, centroids: &CentroidList) -> Assignment {
    Assignment { labels: data.points().map(|x| centroids.nearest(x).0).collect() }
}

/// Inverse-CDF draw over `mass` with one uniform variate. Zero-mass entries
/// are never returned.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, mass: &[f64]) -> usize {
    let total: f64 = mass.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = i;
            if acc > u {
                return i;
            }
        }
    }
    last_positive
}

pub fn kmeanspp_init<R: Rng + ?Sized>(
    data: &WeightedDataset,
    k: usize,
    rng: &mut R,
) -> Result<CentroidList, ClusteringError> {
    kmeanspp_resume(data, &[], k, rng)
}

/// Continues K-means++ seeding from an already chosen prefix of row indices.
/// With an empty prefix this is a fresh seeding.
pub fn kmeanspp_resume<R: Rng + ?Sized>(
    data: &WeightedDataset,
    prefix: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<CentroidList, ClusteringError> {
    if k == 0 {
        return Err(ClusteringError::ZeroK);
    }
    let distinct = data.distinct_count();
    if k > distinct {
        return Err(ClusteringError::Infeasible { k, distinct });
    }
    if let Some(&bad) = prefix.iter().find(|&&i| i >= data.len()) {
        return Err(ClusteringError::IndexOutOfRange(bad));
    }
    let mut chosen: Vec<usize> = prefix.iter().copied().take(k).collect();
    let mut d2 = vec![f64::INFINITY; data.len()];
    for &c in &chosen {
        let cp = data.point(c);
        for (i, x) in data.points().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, cp));
        }
    }
    let mut mass = vec![0.0; data.len()];
    while chosen.len() < k {
        if chosen.is_empty() {
            mass.copy_from_slice(data.weights());
        } else {
            for ((m, &w), &d) in mass.iter_mut().zip(data.weights()).zip(&d2) {
                *m = w * d;
            }
        }
        let next = sample_index(rng, &mass);
        let cp = data.point(next);
        for (i, x) in data.points().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, cp));
        }
        chosen.push(next);
    }
    let mut coords = Vec::with_capacity(k * data.dim());
    for &c in &chosen {
        coords.extend_from_slice(data.point(c));
    }
    let mut list = CentroidList { dim: data.dim(), coords, sizes: vec![0.0; k], sources: Some(chosen) };
    list.assign_sizes(data);
    Ok(list)
}

pub fn objective(data: &WeightedDataset, centroids: &CentroidList) -> Result<f64, ClusteringError> {
    if centroids.is_empty() {
        return Err(ClusteringError::EmptyCentroids);
    }
    let mut s = CompensatedSum::default();
    for (x, &w) in data.points().zip(data.weights()) {
        s.add(w * centroids.nearest(x).1);
    }
    Ok(s.value())
}

/// Weighted Lloyd iterations; returns the final centroids and the objective
/// measured before each update and after the last one.
pub fn lloyd_with_history(
    data: &WeightedDataset,
    init: &CentroidList,
    max_iters: usize,
    tol: f64,
) -> Result<(CentroidList, Vec<f64>), ClusteringError> {
    if init.is_empty() {
        return Err(ClusteringError::EmptyCentroids);
    }
    if init.dim() != data.dim() {
        return Err(ClusteringError::DimensionMismatch { expected: data.dim(), got: init.dim() });
    }
    let dim = data.dim();
    let k = init.len();
    let mut cur = CentroidList { dim, coords: init.coords.clone(), sizes: vec![0.0; k], sources: None };
    let mut history = Vec::new();
    for _ in 0..max_iters {
        let mut sums = vec![CompensatedSum::default(); k * dim];
        let mut mass = vec![CompensatedSum::default(); k];
        let mut dist = Vec::with_capacity(data.len());
        let mut phi = CompensatedSum::default();
        for (x, &w) in data.points().zip(data.weights()) {
            let (c, d) = cur.nearest(x);
            dist.push(d);
            phi.add(w * d);
            mass[c].add(w);
            for (s, &xi) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                s.add(w * xi);
            }
        }
        history.push(phi.value());
        let mut next = cur.coords.clone();
        for c in 0..k {
            let m = mass[c].value();
            if m > 0.0 {
                for t in 0..dim {
                    next[c * dim + t] = sums[c * dim + t].value() / m;
                }
            } else {
                // farthest point from its own centroid, lowest index on ties
                let mut far = 0;
                for i in 1..dist.len() {
                    if dist[i] > dist[far] {
                        far = i;
                    }
                }
                next[c * dim..(c + 1) * dim].copy_from_slice(data.point(far));
                dist[far] = 0.0;
            }
        }
        let moved = next
            .chunks_exact(dim)
            .zip(cur.coords.chunks_exact(dim))
            .map(|(a, b)| libm::sqrt(sq_dist(a, b)))
            .fold(0.0, f64::max);
        cur.coords = next;
        if moved < tol {
            break;
        }
    }
    cur.assign_sizes(data);
    history.push(objective(data, &cur)?);
    Ok((cur, history))
}

pub fn lloyd(
    data: &WeightedDataset,
    init: &CentroidList,
    max_iters: usize,
    tol: f64,
) -> Result<CentroidList, ClusteringError> {
    lloyd_with_history(data, init, max_iters, tol).map(|(c, _)| c)
}

/// K-means++ seeding followed by Lloyd iterations.
pub fn kmeans<R: Rng + ?Sized>(
    data: &WeightedDataset,
    k: usize,
    rng: &mut R,
    max_iters: usize,
    tol: f64,
) -> Result<CentroidList, ClusteringError> {
    let init = kmeanspp_init(data, k, rng)?;
    lloyd(data, &init, max_iters, tol)
}

/// One client's contribution to the induced (federated) objective.
#[derive(Debug, Clone, Copy)]
pub struct InducedPart<'a> {
    pub data: &'a WeightedDataset,
    /// Local cluster of every point.
    pub labels: &'a [usize],
    /// Server-visible representative of every local centroid.
    pub representatives: &'a CentroidList,
}

/// Maps every local representative to its nearest server centroid.
pub fn induced_mapping(representatives: &CentroidList, server: &CentroidList) -> Vec<usize> {
    representatives.centroids().map(|r| server.nearest(r).0).collect()
}

/// Sum of squared distances when every point takes the server centroid its
/// local centroid maps to, rather than its own nearest server centroid.
pub fn federated_objective(parts: &[InducedPart<'_>], server: &CentroidList) -> Result<f64, ClusteringError> {
    if server.is_empty() {
        return Err(ClusteringError::EmptyCentroids);
    }
    let mut s = CompensatedSum::default();
    for part in parts {
        let map = induced_mapping(part.representatives, server);
        for (i, (x, &w)) in part.data.points().zip(part.data.weights()).enumerate() {
            let local = *part.labels.get(i).ok_or(ClusteringError::MissingMapping(i))?;
            let target = *map.get(local).ok_or(ClusteringError::MissingMapping(local))?;
            s.add(w * sq_dist(x, server.centroid(target)));
        }
    }
    Ok(s.value())
}

/// Exact optimum over all `K^n` labelings, centroids at cluster means.
pub fn brute_force_optimal(data: &WeightedDataset, k: usize) -> Result<(Vec<usize>, f64), ClusteringError> {
    let n = data.len();
    if n > BRUTE_FORCE_MAX_POINTS {
        return Err(ClusteringError::OracleTooLarge(n));
    }
    if k == 0 {
        return Err(ClusteringError::ZeroK);
    }
    let dim = data.dim();
    let mut labels = vec![0usize; n];
    let mut best = (labels.clone(), f64::INFINITY);
    loop {
        let mut sums = vec![0.0; k * dim];
        let mut mass = vec![0.0; k];
        for (i, &c) in labels.iter().enumerate() {
            mass[c] += data.weight(i);
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(data.point(i)) {
                *s += data.weight(i) * x;
            }
        }
        let mut cost = CompensatedSum::default();
        for (i, &c) in labels.iter().enumerate() {
            let mean: Vec<f64> = sums[c * dim..(c + 1) * dim].iter().map(|s| s / mass[c]).collect();
            cost.add(data.weight(i) * sq_dist(data.point(i), &mean));
        }
        if cost.value() < best.1 {
            best = (labels.clone(), cost.value());
        }
        // next labeling in base-K counting order
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(best);
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}
