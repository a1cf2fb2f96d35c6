//! Secure compressed multiset aggregation.
//!
//! Each client holds a sparse count vector `q` over bin indices and sends
//! `2KL` masked power sums `S_i = Σ_j q_j·j^(i-1) + z_i (mod p)`. The masks
//! cancel in the server-side sum, which is then decoded like a Reed-Solomon
//! syndrome: Berlekamp-Massey yields `g(x) = Π (1 - j·x)`, the roots of its
//! reversal give the occupied bins, and a transposed Vandermonde solve gives
//! the counts.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::field::{FieldError, FieldModulus};
use crate::grid::BinIndex;
use crate::poly::MontPoly;
use crate::seed::{self, Stream};

#[cfg(feature = "bigint")]
pub mod integer;
pub mod wire;

/// Grids up to this many bins are root-searched by direct evaluation.
pub const SCAN_LIMIT: u128 = 1 << 12;

/// Systems up to this size are solved by Gaussian elimination.
const ELIMINATION_LIMIT: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScmaError {
    #[error("bin index {index} is not below the modulus {modulus}")]
    IndexTooLarge { index: u128, modulus: u128 },
    #[error("count {count} is not below the modulus {modulus}")]
    CountTooLarge { count: u64, modulus: u128 },
    #[error("bin index 0 is reserved")]
    ZeroIndex,
    #[error("syndrome length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no syndrome vectors to aggregate")]
    NoMessages,
    #[error("decode failure: {0}")]
    DecodeFailure(&'static str),
    #[error("wire format: {0}")]
    Wire(&'static str),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Sparse vector of positive counts keyed by 1-based bin index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseMultiset {
    entries: BTreeMap<BinIndex, u64>,
}

impl SparseMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` to bin `j`; zero counts are ignored.
    pub fn add(&mut self, j: BinIndex, count: u64) {
        if count > 0 {
            *self.entries.entry(j).or_insert(0) += count;
        }
    }

    /// Subtracts up to `count` from bin `j`, dropping it at zero.
    pub fn remove(&mut self, j: BinIndex, count: u64) {
        if let Some(c) = self.entries.get_mut(&j) {
            *c = c.saturating_sub(count);
            if *c == 0 {
                self.entries.remove(&j);
            }
        }
    }

    pub fn get(&self, j: BinIndex) -> u64 {
        self.entries.get(&j).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BinIndex, u64)> + '_ {
        self.entries.iter().map(|(&j, &c)| (j, c))
    }

    pub fn merge(&mut self, other: &SparseMultiset) {
        for (j, c) in other.iter() {
            self.add(j, c);
        }
    }

    pub fn sum<'a>(parts: impl IntoIterator<Item = &'a SparseMultiset>) -> SparseMultiset {
        let mut acc = SparseMultiset::new();
        for p in parts {
            acc.merge(p);
        }
        acc
    }
}

impl FromIterator<(BinIndex, u64)> for SparseMultiset {
    fn from_iter<I: IntoIterator<Item = (BinIndex, u64)>>(iter: I) -> Self {
        let mut m = SparseMultiset::new();
        for (j, c) in iter {
            m.add(j, c);
        }
        m
    }
}

/// `2KL` residues; the only payload a client transmits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyndromeVector(Vec<u128>);

impl SyndromeVector {
    pub fn new(values: Vec<u128>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u128] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u128> {
        self.0
    }
}

/// One client's additive mask keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskShare {
    pub client: usize,
    pub keys: Vec<u128>,
}

/// `g(x)` with ascending coefficients and `g(0) = 1`. Its degree is the
/// linear complexity reported by Berlekamp-Massey.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionPolynomial {
    coeffs: Vec<u128>,
}

impl ConnectionPolynomial {
    pub fn coeffs(&self) -> &[u128] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, field: &FieldModulus, x: u128) -> u128 {
        self.coeffs.iter().rev().fold(0, |acc, &c| field.add(field.mul(acc, x), c))
    }
}

/// Protocol parameters shared by all parties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScmaParams {
    pub k: usize,
    pub l: usize,
    pub modulus: FieldModulus,
    pub total_bins: u128,
}

impl ScmaParams {
    /// Picks the smallest prime strictly above `max(n, total_bins)`, so every
    /// bin index and every count is a distinct nonzero residue.
    pub fn new(k: usize, l: usize, n: u64, total_bins: u128) -> Result<Self, ScmaError> {
        let bound = (n as u128).max(total_bins).max(1) + 1;
        let modulus = crate::field::select_prime(bound)?;
        Ok(Self { k, l, modulus, total_bins })
    }

    pub fn with_modulus(k: usize, l: usize, modulus: FieldModulus, total_bins: u128) -> Self {
        Self { k, l, modulus, total_bins }
    }

    pub fn syndrome_len(&self) -> usize {
        2 * self.k * self.l
    }
}

fn uniform_residue<R: Rng + ?Sized>(rng: &mut R, p: u128, bits: u32) -> u128 {
    let mask = if bits >= 128 { u128::MAX } else { (1u128 << bits) - 1 };
    loop {
        let lo = rng.next_u64() as u128;
        let v = if bits > 64 { lo | ((rng.next_u64() as u128) << 64) } else { lo };
        let v = v & mask;
        if v < p {
            return v;
        }
    }
}

/// Pairwise-cancelling masks: client `l` adds the stream shared with every
/// later client and subtracts the stream shared with every earlier one.
pub fn gen_masks(clients: usize, syndrome_len: usize, field: &FieldModulus, master_seed: u64) -> Vec<MaskShare> {
    let p = field.value();
    let bits = field.bit_width();
    let mut shares: Vec<MaskShare> = (0..clients)
        .map(|client| MaskShare { client, keys: vec![0; syndrome_len] })
        .collect();
    for a in 0..clients {
        for b in (a + 1)..clients {
            let mut rng = seed::stream_rng(master_seed, Stream::Mask, &[a as u64, b as u64]);
            for i in 0..syndrome_len {
                let z = uniform_residue(&mut rng, p, bits);
                shares[a].keys[i] = field.add(shares[a].keys[i], z);
                shares[b].keys[i] = field.sub(shares[b].keys[i], z);
            }
        }
    }
    shares
}

/// Unmasked power sums `Σ_j q_j·j^i` for `i = 0..len`.
pub fn power_sums(q: &SparseMultiset, field: &FieldModulus, len: usize) -> Result<Vec<u128>, ScmaError> {
    let p = field.value();
    let mut s = vec![0u128; len];
    for (j, count) in q.iter() {
        if j == 0 {
            return Err(ScmaError::ZeroIndex);
        }
        if j >= p {
            return Err(ScmaError::IndexTooLarge { index: j, modulus: p });
        }
        if count as u128 >= p {
            return Err(ScmaError::CountTooLarge { count, modulus: p });
        }
        let mut term = count as u128;
        for si in s.iter_mut() {
            *si = field.add(*si, term);
            term = field.mul(term, j);
        }
    }
    Ok(s)
}

pub fn encode_client(
    q: &SparseMultiset,
    mask: &MaskShare,
    field: &FieldModulus,
    syndrome_len: usize,
) -> Result<SyndromeVector, ScmaError> {
    if mask.keys.len() != syndrome_len {
        return Err(ScmaError::LengthMismatch { expected: syndrome_len, got: mask.keys.len() });
    }
    let mut s = power_sums(q, field, syndrome_len)?;
    for (si, &z) in s.iter_mut().zip(&mask.keys) {
        *si = field.add(*si, field.reduce(z));
    }
    Ok(SyndromeVector(s))
}

pub fn aggregate_syndromes(all: &[SyndromeVector], field: &FieldModulus) -> Result<SyndromeVector, ScmaError> {
    let first = all.first().ok_or(ScmaError::NoMessages)?;
    let len = first.len();
    let mut acc = vec![0u128; len];
    for v in all {
        if v.len() != len {
            return Err(ScmaError::LengthMismatch { expected: len, got: v.len() });
        }
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a = field.add(*a, field.reduce(x));
        }
    }
    Ok(SyndromeVector(acc))
}

/// Shortest LFSR generating `s`, as a connection polynomial with `g(0) = 1`.
pub fn berlekamp_massey(s: &SyndromeVector, field: &FieldModulus) -> ConnectionPolynomial {
    let s = s.as_slice();
    let mut c: Vec<u128> = vec![1];
    let mut b: Vec<u128> = vec![1];
    let mut len = 0usize;
    let mut shift = 1usize;
    let mut last = 1u128;
    for n in 0..s.len() {
        let mut d = s[n];
        for i in 1..=len.min(c.len() - 1) {
            d = field.add(d, field.mul(c[i], s[n - i]));
        }
        if d == 0 {
            shift += 1;
            continue;
        }
        let coef = field.mul(d, field.inv(last).expect("nonzero discrepancy"));
        let prev = c.clone();
        if c.len() < b.len() + shift {
            c.resize(b.len() + shift, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            c[i + shift] = field.sub(c[i + shift], field.mul(coef, bi));
        }
        if 2 * len <= n {
            len = n + 1 - len;
            b = prev;
            last = d;
            shift = 1;
        } else {
            shift += 1;
        }
    }
    c.resize(len + 1, 0);
    ConnectionPolynomial { coeffs: c }
}

/// Occupied bins: all `j ∈ [1, total_bins]` with `g(j^{-1}) = 0`.
///
/// Small grids are scanned directly; larger ones are factored by
/// equal-degree splitting after checking that `h(x) = x^m g(1/x)` divides
/// `x^p - x`.
pub fn find_roots(
    g: &ConnectionPolynomial,
    field: &FieldModulus,
    total_bins: u128,
) -> Result<Vec<BinIndex>, ScmaError> {
    let m = g.degree();
    if m == 0 {
        return Ok(Vec::new());
    }
    // reversal: h(x) = x^m g(1/x), monic since g(0) = 1
    let h: Vec<u128> = g.coeffs().iter().rev().copied().collect();
    let p = field.value();
    let limit = total_bins.min(p - 1);
    let mut roots = if total_bins <= SCAN_LIMIT || p == 2 {
        let mut found = Vec::new();
        for j in 1..=limit {
            let v = h.iter().rev().fold(0, |acc, &c| field.add(field.mul(acc, j), c));
            if v == 0 {
                found.push(j);
                if found.len() > m {
                    break;
                }
            }
        }
        found
    } else {
        let ring = MontPoly::new(field);
        let hm: Vec<u128> = h.iter().map(|&c| field.to_mont(c)).collect();
        let x = [0, ring.one()];
        let xp = ring.pow_mod(&x, p, &hm);
        // x^p - x mod h must vanish for h to split into distinct linear factors.
        let xr = ring.rem_monic(x.to_vec(), &hm);
        if xp != xr {
            return Err(ScmaError::DecodeFailure("connection polynomial does not split over F_p"));
        }
        let mut rng = seed::stream_rng(0, Stream::Decoder, &[m as u64]);
        let mut found = Vec::with_capacity(m);
        ring.split_linear(hm, &mut rng, &mut found);
        found
    };
    roots.sort_unstable();
    roots.dedup();
    if roots.len() != m || roots.iter().any(|&j| j == 0 || j > total_bins) {
        return Err(ScmaError::DecodeFailure("root count does not match the connection polynomial"));
    }
    Ok(roots)
}

/// Solves `S_i = Σ_j q_j·j^(i-1)` for the counts at the given roots and
/// checks the remaining equations.
pub fn solve_counts(
    s: &SyndromeVector,
    roots: &[BinIndex],
    field: &FieldModulus,
) -> Result<SparseMultiset, ScmaError> {
    let m = roots.len();
    let s = s.as_slice();
    if m > s.len() {
        return Err(ScmaError::DecodeFailure("more roots than syndromes"));
    }
    if m == 0 {
        return if s.iter().all(|&x| x == 0) {
            Ok(SparseMultiset::new())
        } else {
            Err(ScmaError::DecodeFailure("nonzero syndrome with empty support"))
        };
    }
    let counts = if m <= ELIMINATION_LIMIT {
        vandermonde_eliminate(s, roots, field)?
    } else {
        vandermonde_structured(s, roots, field)?
    };
    // The remaining equations must agree as well.
    let mut terms: Vec<u128> = counts.clone();
    for (i, &si) in s.iter().enumerate() {
        let sum = terms.iter().fold(0, |acc, &t| field.add(acc, t));
        if sum != si {
            return Err(ScmaError::DecodeFailure("syndromes inconsistent with decoded support"));
        }
        if i + 1 < s.len() {
            for (t, &r) in terms.iter_mut().zip(roots) {
                *t = field.mul(*t, r);
            }
        }
    }
    let mut out = SparseMultiset::new();
    for (&j, &c) in roots.iter().zip(&counts) {
        if c == 0 {
            return Err(ScmaError::DecodeFailure("zero count at a decoded root"));
        }
        let c = u64::try_from(c).map_err(|_| ScmaError::DecodeFailure("count exceeds 64 bits"))?;
        out.add(j, c);
    }
    Ok(out)
}

fn vandermonde_eliminate(s: &[u128], roots: &[u128], field: &FieldModulus) -> Result<Vec<u128>, ScmaError> {
    let m = roots.len();
    // augmented rows: [r_0^i ... r_{m-1}^i | S_i]
    let mut rows: Vec<Vec<u128>> = Vec::with_capacity(m);
    let mut powers = vec![1u128; m];
    for &si in s.iter().take(m) {
        let mut row = powers.clone();
        row.push(si);
        rows.push(row);
        for (pw, &r) in powers.iter_mut().zip(roots) {
            *pw = field.mul(*pw, r);
        }
    }
    for col in 0..m {
        let pivot = (col..m)
            .find(|&r| rows[r][col] != 0)
            .ok_or(ScmaError::DecodeFailure("singular Vandermonde system"))?;
        rows.swap(col, pivot);
        let inv = field.inv(rows[col][col])?;
        for x in rows[col].iter_mut() {
            *x = field.mul(*x, inv);
        }
        let pivot_row = rows[col].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != col && row[col] != 0 {
                let f = row[col];
                for (x, &pv) in row.iter_mut().zip(&pivot_row) {
                    *x = field.sub(*x, field.mul(f, pv));
                }
            }
        }
    }
    Ok(rows.into_iter().map(|r| r[m]).collect())
}

/// `O(m²)` solve: with `P(x) = Π (x - r_k)` and `P_j = P / (x - r_j)`,
/// `q_j = Σ_t [x^t]P_j · S_t / P_j(r_j)`.
fn vandermonde_structured(s: &[u128], roots: &[u128], field: &FieldModulus) -> Result<Vec<u128>, ScmaError> {
    let m = roots.len();
    let mut full = vec![0u128; m + 1];
    full[0] = 1;
    for (deg, &r) in roots.iter().enumerate() {
        // multiply by (x - r)
        for t in (0..=deg + 1).rev() {
            let shifted = if t > 0 { full[t - 1] } else { 0 };
            full[t] = field.sub(shifted, field.mul(r, full[t]));
        }
    }
    let mut out = Vec::with_capacity(m);
    let mut quotient = vec![0u128; m];
    for &r in roots {
        // synthetic division of P by (x - r)
        let mut carry = 0u128;
        for t in (0..m).rev() {
            carry = field.add(full[t + 1], field.mul(carry, r));
            quotient[t] = carry;
        }
        let numer = quotient.iter().zip(s).fold(0, |acc, (&b, &st)| field.add(acc, field.mul(b, st)));
        let denom = quotient.iter().rev().fold(0, |acc, &b| field.add(field.mul(acc, r), b));
        out.push(field.mul(numer, field.inv(denom)?));
    }
    Ok(out)
}

/// Full server-side decode of an aggregated syndrome vector.
pub fn decode(s: &SyndromeVector, field: &FieldModulus, total_bins: u128) -> Result<SparseMultiset, ScmaError> {
    let g = berlekamp_massey(s, field);
    if 2 * g.degree() > s.len() {
        return Err(ScmaError::DecodeFailure("support exceeds half the syndrome length"));
    }
    let roots = find_roots(&g, field, total_bins)?;
    solve_counts(s, &roots, field)
}

/// Runs the whole protocol in memory for a set of client multisets.
pub fn secure_sum(
    parts: &[SparseMultiset],
    params: &ScmaParams,
    mask_seed: u64,
) -> Result<SparseMultiset, ScmaError> {
    let field = &params.modulus;
    let len = params.syndrome_len();
    let masks = gen_masks(parts.len(), len, field, mask_seed);
    let messages = parts
        .iter()
        .zip(&masks)
        .map(|(q, z)| encode_client(q, z, field, len))
        .collect::<Result<Vec<_>, _>>()?;
    decode(&aggregate_syndromes(&messages, field)?, field, params.total_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f13() -> FieldModulus {
        FieldModulus::new(13).unwrap()
    }

    fn ms(pairs: &[(u128, u64)]) -> SparseMultiset {
        pairs.iter().copied().collect()
    }

    fn zero_mask(len: usize) -> MaskShare {
        MaskShare { client: 0, keys: vec![0; len] }
    }

    // Power-sum oracle with plain integers, reduced at the end.
    fn oracle_sums(pairs: &[(u128, u64)], p: u128, len: usize) -> Vec<u128> {
        (0..len as u32)
            .map(|i| pairs.iter().map(|&(j, c)| c as u128 * j.pow(i)).sum::<u128>() % p)
            .collect()
    }

    #[test]
    fn masks_sum_to_zero() {
        let f = f13();
        let one = gen_masks(1, 8, &f, 3);
        assert!(one[0].keys.iter().all(|&z| z == 0));
        let two = gen_masks(2, 8, &f, 11);
        for i in 0..8 {
            assert_eq!(f.add(two[0].keys[i], two[1].keys[i]), 0);
        }
        let five = gen_masks(5, 8, &f, 42);
        for i in 0..8 {
            let s: u128 = five.iter().map(|m| m.keys[i]).sum();
            assert_eq!(s % 13, 0);
        }
        // dropping one share leaves a nonzero partial sum somewhere
        let partial: Vec<u128> = (0..8).map(|i| five[1..].iter().map(|m| m.keys[i]).sum::<u128>() % 13).collect();
        assert!(partial.iter().any(|&x| x != 0));
    }

    #[test]
    fn encode_examples() {
        let f = f13();
        assert_eq!(encode_client(&SparseMultiset::new(), &zero_mask(8), &f, 8).unwrap(), SyndromeVector::zeros(8));
        let z = MaskShare { client: 0, keys: vec![1, 2, 3, 4] };
        assert_eq!(encode_client(&SparseMultiset::new(), &z, &f, 4).unwrap().as_slice(), &[1, 2, 3, 4]);

        let s1 = encode_client(&ms(&[(1, 3), (3, 2)]), &zero_mask(8), &f, 8).unwrap();
        assert_eq!(&s1.as_slice()[..4], &[5, 9, 8, 5]);
        assert_eq!(s1.as_slice(), oracle_sums(&[(1, 3), (3, 2)], 13, 8).as_slice());
        let s2 = encode_client(&ms(&[(2, 4), (4, 3)]), &zero_mask(8), &f, 8).unwrap();
        assert_eq!(&s2.as_slice()[..4], &[7, 7, 12, 3]);
        assert_eq!(s2.as_slice(), oracle_sums(&[(2, 4), (4, 3)], 13, 8).as_slice());
    }

    #[test]
    fn encode_rejects_oversized_inputs() {
        let f = f13();
        assert_eq!(
            encode_client(&ms(&[(13, 1)]), &zero_mask(4), &f, 4),
            Err(ScmaError::IndexTooLarge { index: 13, modulus: 13 })
        );
        assert_eq!(
            encode_client(&ms(&[(2, 13)]), &zero_mask(4), &f, 4),
            Err(ScmaError::CountTooLarge { count: 13, modulus: 13 })
        );
    }

    #[test]
    fn aggregate_examples() {
        let f = f13();
        let s1 = encode_client(&ms(&[(1, 3), (3, 2)]), &zero_mask(8), &f, 8).unwrap();
        let s2 = encode_client(&ms(&[(2, 4), (4, 3)]), &zero_mask(8), &f, 8).unwrap();
        let agg = aggregate_syndromes(&[s1.clone(), s2.clone()], &f).unwrap();
        assert_eq!(&agg.as_slice()[..4], &[12, 3, 7, 8]);

        let masks = gen_masks(2, 8, &f, 5);
        let m1 = encode_client(&ms(&[(1, 3), (3, 2)]), &masks[0], &f, 8).unwrap();
        let m2 = encode_client(&ms(&[(2, 4), (4, 3)]), &masks[1], &f, 8).unwrap();
        assert_ne!(m1, s1);
        assert_eq!(aggregate_syndromes(&[m1, m2], &f).unwrap(), agg);

        assert_eq!(aggregate_syndromes(core::slice::from_ref(&s1), &f).unwrap(), s1);
        assert_eq!(
            aggregate_syndromes(&[s1, SyndromeVector::zeros(4)], &f),
            Err(ScmaError::LengthMismatch { expected: 8, got: 4 })
        );
    }

    #[test]
    fn berlekamp_massey_examples() {
        let f = f13();
        assert_eq!(berlekamp_massey(&SyndromeVector::zeros(8), &f).coeffs(), &[1]);

        // (1-x)(1-2x)(1-3x)(1-4x) expanded by hand: 1 - 10x + 35x^2 - 50x^3 + 24x^4
        let expected: Vec<u128> = [1i64, -10, 35, -50, 24].iter().map(|&c| c.rem_euclid(13) as u128).collect();
        let s = SyndromeVector::new(oracle_sums(&[(1, 3), (2, 4), (3, 2), (4, 3)], 13, 8));
        let g = berlekamp_massey(&s, &f);
        assert_eq!(g.coeffs(), expected.as_slice());
        // g annihilates the sequence
        for n in 4..8 {
            let mut acc = 0;
            for (i, &c) in g.coeffs().iter().enumerate() {
                acc = f.add(acc, f.mul(c, s.as_slice()[n - i]));
            }
            assert_eq!(acc, 0);
        }

        let single = SyndromeVector::new(vec![1, 5, 12, 8]);
        assert_eq!(berlekamp_massey(&single, &f).coeffs(), &[1, 8]); // 1 - 5x
    }

    #[test]
    fn find_roots_examples() {
        let f = f13();
        let one = ConnectionPolynomial { coeffs: vec![1] };
        assert!(find_roots(&one, &f, 4).unwrap().is_empty());
        let s = SyndromeVector::new(oracle_sums(&[(1, 3), (2, 4), (3, 2), (4, 3)], 13, 8));
        let g = berlekamp_massey(&s, &f);
        for j in 1..=4u128 {
            assert_eq!(g.eval(&f, f.inv(j).unwrap()), 0);
        }
        assert_eq!(find_roots(&g, &f, 4).unwrap(), vec![1, 2, 3, 4]);
        let lin = ConnectionPolynomial { coeffs: vec![1, 8] };
        assert_eq!(find_roots(&lin, &f, 12).unwrap(), vec![5]);
        // root 5 lies outside a 4-bin grid
        assert!(matches!(find_roots(&lin, &f, 4), Err(ScmaError::DecodeFailure(_))));
    }

    #[test]
    fn solve_counts_examples() {
        let f = f13();
        let s = SyndromeVector::new(oracle_sums(&[(1, 3), (2, 4), (3, 2), (4, 3)], 13, 8));
        assert_eq!(solve_counts(&s, &[1, 2, 3, 4], &f).unwrap(), ms(&[(1, 3), (2, 4), (3, 2), (4, 3)]));
        let s = SyndromeVector::new(vec![1, 5, 12, 8]);
        assert_eq!(solve_counts(&s, &[5], &f).unwrap(), ms(&[(5, 1)]));
        assert!(solve_counts(&SyndromeVector::zeros(4), &[], &f).unwrap().is_empty());
    }

    #[test]
    fn vandermonde_oracle_by_enumeration() {
        // brute force over all count vectors in [1, 12]^4
        let s = oracle_sums(&[(1, 3), (2, 4), (3, 2), (4, 3)], 13, 4);
        let mut hits = Vec::new();
        for a in 1..13u64 {
            for b in 1..13u64 {
                for c in 1..13u64 {
                    for d in 1..13u64 {
                        if oracle_sums(&[(1, a), (2, b), (3, c), (4, d)], 13, 4) == s {
                            hits.push((a, b, c, d));
                        }
                    }
                }
            }
        }
        assert_eq!(hits, vec![(3, 4, 2, 3)]);
    }

    #[test]
    fn structured_and_eliminated_solves_agree() {
        let f = FieldModulus::new(1_000_003).unwrap();
        let roots: Vec<u128> = (1..=40).map(|j| j * 977 + 3).collect();
        let pairs: Vec<(u128, u64)> = roots.iter().enumerate().map(|(i, &j)| (j, i as u64 + 1)).collect();
        let q: SparseMultiset = pairs.iter().copied().collect();
        let s = power_sums(&q, &f, 80).unwrap();
        let a = vandermonde_eliminate(&s, &roots, &f).unwrap();
        let b = vandermonde_structured(&s, &roots, &f).unwrap();
        assert_eq!(a, b);
        assert_eq!(solve_counts(&SyndromeVector::new(s), &roots, &f).unwrap(), q);
    }

    #[test]
    fn decode_examples() {
        let f = f13();
        let s = SyndromeVector::new(oracle_sums(&[(1, 3), (2, 4), (3, 2), (4, 3)], 13, 8));
        assert_eq!(decode(&s, &f, 4).unwrap(), ms(&[(1, 3), (2, 4), (3, 2), (4, 3)]));
        let params = ScmaParams::new(1, 1, 2, 12).unwrap();
        assert_eq!(secure_sum(&[ms(&[(7, 2)])], &params, 1).unwrap(), ms(&[(7, 2)]));
    }

    #[test]
    fn decode_large_grid_uses_factorization() {
        // 173^10 bins needs a modulus above 2^64
        let total = 173u128.pow(10);
        let params = ScmaParams::new(3, 3, 30_000, total).unwrap();
        assert!(params.modulus.value() > total);
        let parts = vec![
            ms(&[(total, 5), (1, 7), (123_456_789_012_345_678, 9)]),
            ms(&[(total - 1, 1), (1, 2), (98_765_432_109_876_543_210, 3)]),
            ms(&[(42, 4)]),
        ];
        let expected = SparseMultiset::sum(&parts);
        assert_eq!(secure_sum(&parts, &params, 9).unwrap(), expected);
    }

    #[test]
    fn corrupted_syndromes_fail_to_decode() {
        let params = ScmaParams::new(2, 2, 100, 10_000).unwrap();
        let f = &params.modulus;
        let q = ms(&[(10, 3), (9_999, 4), (77, 1)]);
        let mut s = power_sums(&q, f, params.syndrome_len()).unwrap();
        s[7] = f.add(s[7], 1);
        assert!(decode(&SyndromeVector::new(s), f, params.total_bins).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn decode_inverts_masked_aggregation(
            k in 1usize..4,
            l in 1usize..5,
            bins in 1u128..1_000_000,
            seed in any::<u64>(),
            raw in proptest::collection::vec((any::<u128>(), 1u64..50), 0..16),
        ) {
            let params = ScmaParams::new(k, l, 50 * 16, bins).unwrap();
            let mut parts = vec![SparseMultiset::new(); l];
            let mut used = vec![0usize; l];
            for (i, (j, c)) in raw.into_iter().enumerate() {
                let who = i % l;
                if used[who] < k {
                    parts[who].add(1 + j % bins, c);
                    used[who] += 1;
                }
            }
            let expected = SparseMultiset::sum(&parts);
            prop_assert_eq!(secure_sum(&parts, &params, seed).unwrap(), expected);
        }

        #[test]
        fn distinct_aggregates_have_distinct_syndromes(
            a in proptest::collection::btree_map(1u128..500, 1u64..20, 0..4),
            b in proptest::collection::btree_map(1u128..500, 1u64..20, 0..4),
        ) {
            let f = FieldModulus::new(503).unwrap();
            let qa: SparseMultiset = a.into_iter().collect();
            let qb: SparseMultiset = b.into_iter().collect();
            let sa = power_sums(&qa, &f, 8).unwrap();
            let sb = power_sums(&qb, &f, 8).unwrap();
            prop_assert_eq!(qa == qb, sa == sb);
        }

        #[test]
        fn degree_is_bounded_by_support(
            a in proptest::collection::btree_map(1u128..5000, 1u64..20, 0..8),
        ) {
            let f = FieldModulus::new(5003).unwrap();
            let q: SparseMultiset = a.into_iter().collect();
            let s = SyndromeVector::new(power_sums(&q, &f, 16).unwrap());
            prop_assert_eq!(berlekamp_massey(&s, &f).degree(), q.len());
        }
    }
}
