//! Decoder over the integers with arbitrary-precision arithmetic.
//!
//! Masks live in `Z_{p'}` for a modulus `p'` large enough that every true
//! power sum is below it, so the unmasked aggregate equals the integer power
//! sums exactly. Decoding then runs Berlekamp-Massey over the rationals and
//! isolates the integer roots of `h(x) = x^m g(1/x)` by bisection with Sturm
//! root counts.

use alloc::vec;
use alloc::vec::Vec;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::RngCore;

use super::{ScmaError, SparseMultiset};
use crate::seed::{self, Stream};

type Poly = Vec<BigRational>;

/// `max{KL·T^(2KL), n·T^(2KL-1)} + 1` with `T` the number of bins. The
/// second term covers aggregates whose counts exceed `KL`.
pub fn integer_modulus(k: usize, l: usize, n: u64, total_bins: u128) -> BigUint {
    let kl = (k * l) as u32;
    let t = BigUint::from(total_bins);
    let a = BigUint::from(kl) * t.pow(2 * kl);
    let b = BigUint::from(n) * t.pow(2 * kl - 1);
    a.max(b) + 1u32
}

fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    let excess = (bytes as u64) * 8 - bits;
    loop {
        rng.fill_bytes(&mut buf);
        if let Some(top) = buf.last_mut() {
            *top &= 0xFFu8 >> excess;
        }
        let v = BigUint::from_bytes_le(&buf);
        if &v < bound {
            return v;
        }
    }
}

/// Pairwise-cancelling masks in `Z_{p'}`.
pub fn gen_masks(clients: usize, len: usize, modulus: &BigUint, master_seed: u64) -> Vec<Vec<BigUint>> {
    let mut shares = vec![vec![BigUint::zero(); len]; clients];
    for a in 0..clients {
        for b in (a + 1)..clients {
            let mut rng = seed::stream_rng(master_seed, Stream::Mask, &[a as u64, b as u64]);
            let (lo, hi) = shares.split_at_mut(b);
            for (x, y) in lo[a].iter_mut().zip(hi[0].iter_mut()) {
                let z = uniform_below(&mut rng, modulus);
                *x = (&*x + &z) % modulus;
                *y = (&*y + modulus - &z) % modulus;
            }
        }
    }
    shares
}

pub fn encode_client(q: &SparseMultiset, mask: &[BigUint], modulus: &BigUint) -> Result<Vec<BigUint>, ScmaError> {
    let mut s: Vec<BigUint> = mask.iter().map(|z| z % modulus).collect();
    for (j, count) in q.iter() {
        if j == 0 {
            return Err(ScmaError::ZeroIndex);
        }
        let j = BigUint::from(j);
        let mut term = BigUint::from(count);
        for si in s.iter_mut() {
            *si = (&*si + &term) % modulus;
            term *= &j;
        }
    }
    Ok(s)
}

pub fn aggregate(all: &[Vec<BigUint>], modulus: &BigUint) -> Result<Vec<BigUint>, ScmaError> {
    let first = all.first().ok_or(ScmaError::NoMessages)?;
    let mut acc = vec![BigUint::zero(); first.len()];
    for v in all {
        if v.len() != acc.len() {
            return Err(ScmaError::LengthMismatch { expected: acc.len(), got: v.len() });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a = (&*a + x) % modulus;
        }
    }
    Ok(acc)
}

fn rat(v: &BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from_biguint(Sign::Plus, v.clone()))
}

fn trim(p: &mut Poly) {
    while p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
}

fn eval(p: &[BigRational], x: &BigRational) -> BigRational {
    p.iter().rev().fold(BigRational::zero(), |acc, c| acc * x + c)
}

fn rem(a: &[BigRational], m: &[BigRational]) -> Poly {
    let mut a = a.to_vec();
    let dm = m.len() - 1;
    let lead = m[dm].clone();
    while a.len() > dm {
        let top = a.len() - 1;
        let c = &a[top] / &lead;
        if !c.is_zero() {
            for i in 0..dm {
                let t = &c * &m[i];
                a[top - dm + i] -= t;
            }
        }
        a.pop();
    }
    trim(&mut a);
    a
}

fn derivative(p: &[BigRational]) -> Poly {
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i)))
        .collect()
}

fn sturm_chain(h: &[BigRational]) -> Vec<Poly> {
    let mut chain = vec![h.to_vec(), derivative(h)];
    loop {
        let n = chain.len();
        if chain[n - 1].is_empty() {
            chain.pop();
            break;
        }
        let r: Poly = rem(&chain[n - 2], &chain[n - 1]).into_iter().map(|c| -c).collect();
        if r.is_empty() {
            break;
        }
        chain.push(r);
    }
    chain
}

fn variations(chain: &[Poly], x: &BigRational) -> usize {
    let mut last: Option<bool> = None;
    let mut v = 0;
    for p in chain {
        let y = eval(p, x);
        if y.is_zero() {
            continue;
        }
        let pos = y.is_positive();
        if last.is_some_and(|l| l != pos) {
            v += 1;
        }
        last = Some(pos);
    }
    v
}

/// Rational Berlekamp-Massey; returns `g` with `g(0) = 1`.
fn berlekamp_massey(s: &[BigRational]) -> Poly {
    let mut c: Poly = vec![BigRational::one()];
    let mut b: Poly = vec![BigRational::one()];
    let mut len = 0usize;
    let mut shift = 1usize;
    let mut last = BigRational::one();
    for n in 0..s.len() {
        let mut d = s[n].clone();
        for i in 1..=len.min(c.len() - 1) {
            d += &c[i] * &s[n - i];
        }
        if d.is_zero() {
            shift += 1;
            continue;
        }
        let coef = &d / &last;
        let prev = c.clone();
        if c.len() < b.len() + shift {
            c.resize(b.len() + shift, BigRational::zero());
        }
        for (i, bi) in b.iter().enumerate() {
            let t = &coef * bi;
            c[i + shift] -= t;
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
    c.resize(len + 1, BigRational::zero());
    c
}

/// Integer roots of `h` in `[1, total_bins]`: bisects `[0, total_bins]`
/// on half-integer endpoints, so each unit cell `(a, a+1]` holds at most
/// one candidate integer.
fn integer_roots(h: &[BigRational], total_bins: u128) -> Result<Vec<u128>, ScmaError> {
    let chain = sturm_chain(h);
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let at = |x: u128| BigRational::from_integer(BigInt::from(x)) + &half;
    let mut roots = Vec::new();
    // (lo, hi, variations at lo+1/2, variations at hi+1/2)
    let mut stack = vec![(0u128, total_bins, variations(&chain, &at(0)), variations(&chain, &at(total_bins)))];
    while let Some((lo, hi, vlo, vhi)) = stack.pop() {
        let count = vlo.saturating_sub(vhi);
        if count == 0 {
            continue;
        }
        if hi - lo == 1 {
            let x = BigRational::from_integer(BigInt::from(hi));
            if count != 1 || !eval(h, &x).is_zero() {
                return Err(ScmaError::DecodeFailure("bisection bracket holds no integer root"));
            }
            roots.push(hi);
            continue;
        }
        let mid = lo + (hi - lo) / 2;
        let vmid = variations(&chain, &at(mid));
        stack.push((mid, hi, vmid, vhi));
        stack.push((lo, mid, vlo, vmid));
    }
    roots.sort_unstable();
    Ok(roots)
}

fn solve_vandermonde(s: &[BigRational], roots: &[u128]) -> Result<Vec<BigRational>, ScmaError> {
    let m = roots.len();
    let r: Vec<BigRational> = roots.iter().map(|&j| BigRational::from_integer(BigInt::from(j))).collect();
    let mut rows: Vec<Poly> = Vec::with_capacity(m);
    let mut pw = vec![BigRational::one(); m];
    for si in s.iter().take(m) {
        let mut row = pw.clone();
        row.push(si.clone());
        rows.push(row);
        for (p, x) in pw.iter_mut().zip(&r) {
            *p *= x;
        }
    }
    for col in 0..m {
        let pivot = (col..m)
            .find(|&i| !rows[i][col].is_zero())
            .ok_or(ScmaError::DecodeFailure("singular Vandermonde system"))?;
        rows.swap(col, pivot);
        let inv = rows[col][col].recip();
        for x in rows[col].iter_mut() {
            *x *= &inv;
        }
        let pivot_row = rows[col].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != col && !row[col].is_zero() {
                let f = row[col].clone();
                for (x, pv) in row.iter_mut().zip(&pivot_row) {
                    *x -= &f * pv;
                }
            }
        }
    }
    Ok(rows.into_iter().map(|mut r| r.pop().unwrap()).collect())
}

/// Decodes an unmasked aggregate whose entries are the exact integer power
/// sums (taken mod `p'`, which leaves them unchanged).
pub fn decode_integer_deterministic(
    s: &[BigUint],
    modulus: &BigUint,
    total_bins: u128,
) -> Result<SparseMultiset, ScmaError> {
    let s: Vec<BigRational> = s.iter().map(|v| rat(&(v % modulus))).collect();
    let g = berlekamp_massey(&s);
    let m = g.len() - 1;
    if 2 * m > s.len() {
        return Err(ScmaError::DecodeFailure("support exceeds half the syndrome length"));
    }
    if g.iter().any(|c| !c.is_integer()) {
        return Err(ScmaError::DecodeFailure("connection polynomial is not integral"));
    }
    if m == 0 {
        return if s.iter().all(|v| v.is_zero()) {
            Ok(SparseMultiset::new())
        } else {
            Err(ScmaError::DecodeFailure("nonzero syndrome with empty support"))
        };
    }
    let h: Poly = g.iter().rev().cloned().collect();
    let roots = integer_roots(&h, total_bins)?;
    if roots.len() != m {
        return Err(ScmaError::DecodeFailure("root count does not match the connection polynomial"));
    }
    let counts = solve_vandermonde(&s, &roots)?;
    for (i, si) in s.iter().enumerate() {
        let mut acc = BigRational::zero();
        for (&j, c) in roots.iter().zip(&counts) {
            acc += c * BigRational::from_integer(BigInt::from(j).pow(i as u32));
        }
        if &acc != si {
            return Err(ScmaError::DecodeFailure("syndromes inconsistent with decoded support"));
        }
    }
    let mut out = SparseMultiset::new();
    for (&j, c) in roots.iter().zip(&counts) {
        if !c.is_integer() || !c.is_positive() {
            return Err(ScmaError::DecodeFailure("count is not a positive integer"));
        }
        let (_, rem) = c.numer().div_rem(c.denom());
        debug_assert!(rem.is_zero());
        let v = c.to_integer().to_u64().ok_or(ScmaError::DecodeFailure("count exceeds 64 bits"))?;
        out.add(j, v);
    }
    Ok(out)
}

/// Whole protocol over `Z_{p'}` for a set of client multisets.
pub fn secure_sum_integer(
    parts: &[SparseMultiset],
    k: usize,
    total_bins: u128,
    mask_seed: u64,
) -> Result<SparseMultiset, ScmaError> {
    let l = parts.len();
    let n: u64 = parts.iter().map(SparseMultiset::total).sum();
    let modulus = integer_modulus(k, l, n.max(1), total_bins);
    let masks = gen_masks(l, 2 * k * l, &modulus, mask_seed);
    let messages = parts
        .iter()
        .zip(&masks)
        .map(|(q, z)| encode_client(q, z, &modulus))
        .collect::<Result<Vec<_>, _>>()?;
    decode_integer_deterministic(&aggregate(&messages, &modulus)?, &modulus, total_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldModulus;
    use proptest::prelude::*;

    fn ms(pairs: &[(u128, u64)]) -> SparseMultiset {
        pairs.iter().copied().collect()
    }

    fn sums(q: &SparseMultiset, len: usize) -> Vec<BigUint> {
        (0..len as u32)
            .map(|i| q.iter().map(|(j, c)| BigUint::from(c) * BigUint::from(j).pow(i)).sum())
            .collect()
    }

    #[test]
    fn modulus_bound() {
        // K=L=2, four bins: 4·4^8 vs 12·4^7
        assert_eq!(integer_modulus(2, 2, 12, 4), BigUint::from(4u32 * 4u32.pow(8) + 1));
        assert_eq!(integer_modulus(1, 1, 1000, 4), BigUint::from(4001u32));
    }

    #[test]
    fn fig_instance_matches_field_decoder() {
        let q = ms(&[(1, 3), (2, 4), (3, 2), (4, 3)]);
        let pm = integer_modulus(2, 2, 12, 4);
        let got = decode_integer_deterministic(&sums(&q, 8), &pm, 4).unwrap();
        let f = FieldModulus::new(13).unwrap();
        let s = super::super::SyndromeVector::new(super::super::power_sums(&q, &f, 8).unwrap());
        assert_eq!(got, super::super::decode(&s, &f, 4).unwrap());
        assert_eq!(got, q);
    }

    #[test]
    fn empty_and_single_root() {
        let pm = integer_modulus(1, 1, 1, 8);
        assert!(decode_integer_deterministic(&[BigUint::zero(), BigUint::zero()], &pm, 8).unwrap().is_empty());
        let h = vec![rat(&BigUint::zero()) - rat(&BigUint::from(5u32)), BigRational::one()];
        assert_eq!(integer_roots(&h, 8).unwrap(), vec![5]);
    }

    #[test]
    fn adjacent_roots_are_separated() {
        let q = ms(&[(6, 1), (7, 2), (8, 5)]);
        let pm = integer_modulus(3, 1, 8, 10);
        assert_eq!(decode_integer_deterministic(&sums(&q, 6), &pm, 10).unwrap(), q);
    }

    #[test]
    fn masked_round_trip() {
        let parts = vec![ms(&[(1, 3), (3, 2)]), ms(&[(2, 4), (4, 3)])];
        assert_eq!(secure_sum_integer(&parts, 2, 4, 17).unwrap(), SparseMultiset::sum(&parts));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn agrees_with_field_decoder(
            a in proptest::collection::btree_map(1u128..=20, 1u64..9, 0..3),
            b in proptest::collection::btree_map(1u128..=20, 1u64..9, 0..3),
            seed in any::<u64>(),
        ) {
            let parts = vec![a.into_iter().collect::<SparseMultiset>(), b.into_iter().collect()];
            let params = super::super::ScmaParams::new(3, 2, 64, 20).unwrap();
            let field = super::super::secure_sum(&parts, &params, seed).unwrap();
            prop_assert_eq!(secure_sum_integer(&parts, 3, 20, seed).unwrap(), field);
        }
    }
}
