//! Dense polynomials over `F_p` held in the Montgomery domain.
//!
//! Coefficients are ascending (`c[0]` is the constant term) and the
//! zero polynomial is the empty vector. Only used by the root finder, so
//! the modulus is always odd.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::field::{mul_wide, FieldModulus};

/// Sum of 256-bit products awaiting a single reduction.
#[derive(Clone, Copy, Default)]
struct Acc {
    hi: u128,
    lo: u128,
}

impl Acc {
    #[inline]
    fn add_prod(&mut self, a: u128, b: u128, p: u128) {
        let (h, l) = mul_wide(a, b);
        let (lo, carry) = self.lo.overflowing_add(l);
        self.lo = lo;
        let add = h + carry as u128;
        self.hi = match self.hi.checked_add(add) {
            Some(v) => v,
            None => self.hi % p + add,
        };
    }
}

/// Remainder by a fixed monic modulus via a precomputed inverse of its
/// reversal, so reduction costs two truncated products.
struct Reducer {
    m: Vec<u128>,
    inv_rev: Vec<u128>,
}

impl Reducer {
    fn new(ring: &MontPoly<'_>, m: &[u128]) -> Self {
        let f = ring.field;
        let dm = m.len() - 1;
        let rev: Vec<u128> = m.iter().rev().copied().collect();
        let mut g = vec![ring.one];
        let mut prec = 1;
        while prec < dm {
            let next = (2 * prec).min(dm);
            let e = ring.mul_low(&rev[..next.min(rev.len())], &g, next);
            // g <- g·(2 - rev·g)
            let mut t: Vec<u128> = e.iter().map(|&c| f.neg(c)).collect();
            t[0] = f.add(t[0], f.add(ring.one, ring.one));
            g = ring.mul_low(&g, &t, next);
            prec = next;
        }
        Self { m: m.to_vec(), inv_rev: g }
    }

    fn reduce(&self, ring: &MontPoly<'_>, mut a: Vec<u128>) -> Vec<u128> {
        trim(&mut a);
        let dm = self.m.len() - 1;
        if a.len() <= dm {
            return a;
        }
        let k = a.len() - dm;
        if k > self.inv_rev.len() {
            return ring.rem_monic(a, &self.m);
        }
        let top: Vec<u128> = a[dm..].iter().rev().copied().collect();
        let mut q = ring.mul_low(&top, &self.inv_rev[..k], k);
        q.reverse();
        let qm = ring.mul_low(&q, &self.m, dm);
        let f = ring.field;
        let mut r: Vec<u128> = a[..dm].iter().zip(&qm).map(|(&x, &y)| f.sub(x, y)).collect();
        trim(&mut r);
        r
    }
}

pub(crate) struct MontPoly<'f> {
    pub field: &'f FieldModulus,
    one: u128,
}

fn trim(p: &mut Vec<u128>) {
    while p.last() == Some(&0) {
        p.pop();
    }
}

impl<'f> MontPoly<'f> {
    pub fn new(field: &'f FieldModulus) -> Self {
        debug_assert!(field.value() % 2 == 1);
        Self { field, one: field.to_mont(1) }
    }

    pub fn one(&self) -> u128 {
        self.one
    }

    fn inv(&self, a: u128) -> u128 {
        let f = self.field;
        f.to_mont(f.inv(f.from_mont(a)).expect("nonzero leading coefficient"))
    }

    /// Makes `p` monic in place.
    pub fn monic(&self, p: &mut [u128]) {
        if let Some(&lead) = p.last() {
            if lead != self.one {
                let s = self.inv(lead);
                for c in p.iter_mut() {
                    *c = self.field.mont_mul(*c, s);
                }
            }
        }
    }

    /// Remainder of `a` modulo the monic polynomial `m`.
    pub fn rem_monic(&self, mut a: Vec<u128>, m: &[u128]) -> Vec<u128> {
        let f = self.field;
        let dm = m.len() - 1;
        while a.len() > dm {
            let top = a.len() - 1;
            let c = a[top];
            if c != 0 {
                let shift = top - dm;
                for (i, &mi) in m[..dm].iter().enumerate() {
                    a[shift + i] = f.sub(a[shift + i], f.mont_mul(c, mi));
                }
            }
            a.pop();
        }
        trim(&mut a);
        a
    }

    /// Coefficients `lo..hi` of `a·b`, each summed lazily and reduced once.
    fn convolve(&self, a: &[u128], b: &[u128], hi: usize) -> Vec<u128> {
        let f = self.field;
        let p = f.value();
        let mut out = Vec::with_capacity(hi);
        for k in 0..hi {
            let start = k.saturating_sub(b.len() - 1);
            let stop = k.min(a.len() - 1);
            let mut acc = Acc::default();
            for i in start..=stop {
                acc.add_prod(a[i], b[k - i], p);
            }
            out.push(f.redc_wide(acc.hi, acc.lo));
        }
        out
    }

    pub fn mul(&self, a: &[u128], b: &[u128]) -> Vec<u128> {
        if a.is_empty() || b.is_empty() {
            return Vec::new();
        }
        self.convolve(a, b, a.len() + b.len() - 1)
    }

    /// `a·b mod x^n`.
    fn mul_low(&self, a: &[u128], b: &[u128], n: usize) -> Vec<u128> {
        if a.is_empty() || b.is_empty() {
            return vec![0; n];
        }
        let mut out = self.convolve(a, b, n.min(a.len() + b.len() - 1));
        out.resize(n, 0);
        out
    }

    pub fn sqr(&self, a: &[u128]) -> Vec<u128> {
        if a.is_empty() {
            return Vec::new();
        }
        let f = self.field;
        let p = f.value();
        let n = a.len();
        let mut out = Vec::with_capacity(2 * n - 1);
        for k in 0..(2 * n - 1) {
            let start = k.saturating_sub(n - 1);
            let mut acc = Acc::default();
            // off-diagonal pairs i < k - i
            let mut i = start;
            while 2 * i < k {
                acc.add_prod(a[i], a[k - i], p);
                i += 1;
            }
            let half = f.redc_wide(acc.hi, acc.lo);
            let mut c = f.add(half, half);
            if k % 2 == 0 {
                c = f.add(c, f.mont_mul(a[k / 2], a[k / 2]));
            }
            out.push(c);
        }
        out
    }

    /// `base^exp mod m` for monic `m`.
    pub fn pow_mod(&self, base: &[u128], mut exp: u128, m: &[u128]) -> Vec<u128> {
        let red = Reducer::new(self, m);
        let mut acc = vec![self.one];
        let mut b = self.rem_monic(base.to_vec(), m);
        let mut first = true;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = if first { b.clone() } else { red.reduce(self, self.mul(&acc, &b)) };
                first = false;
            }
            exp >>= 1;
            if exp > 0 {
                b = red.reduce(self, self.sqr(&b));
            }
        }
        if first {
            self.rem_monic(acc, m)
        } else {
            acc
        }
    }

    /// Monic gcd.
    pub fn gcd(&self, a: &[u128], b: &[u128]) -> Vec<u128> {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        trim(&mut a);
        trim(&mut b);
        while !b.is_empty() {
            self.monic(&mut b);
            let r = self.rem_monic(a, &b);
            a = b;
            b = r;
        }
        self.monic(&mut a);
        a
    }

    /// Exact quotient `a / m` for monic `m`.
    pub fn div_exact(&self, a: &[u128], m: &[u128]) -> Vec<u128> {
        let f = self.field;
        let dm = m.len() - 1;
        let mut r = a.to_vec();
        let mut q = vec![0u128; a.len() - dm];
        for top in (dm..a.len()).rev() {
            let c = r[top];
            q[top - dm] = c;
            if c != 0 {
                let shift = top - dm;
                for (i, &mi) in m[..dm].iter().enumerate() {
                    r[shift + i] = f.sub(r[shift + i], f.mont_mul(c, mi));
                }
            }
        }
        q
    }

    /// Splits a monic product of distinct linear factors into its roots
    /// (returned as plain residues) by equal-degree factorization.
    pub fn split_linear<R: Rng + ?Sized>(&self, poly: Vec<u128>, rng: &mut R, out: &mut Vec<u128>) {
        let f = self.field;
        let p = f.value();
        let mut stack = vec![poly];
        while let Some(h) = stack.pop() {
            match h.len() {
                0 | 1 => {}
                2 => out.push(f.from_mont(f.neg(h[0]))),
                _ => {
                    let half = (p - 1) / 2;
                    loop {
                        let a = f.to_mont(rng.random_range(0..p));
                        let w = self.pow_mod(&[a, self.one], half, &h);
                        let mut w1 = w;
                        if w1.is_empty() {
                            w1.push(0);
                        }
                        w1[0] = f.sub(w1[0], self.one);
                        trim(&mut w1);
                        let g = self.gcd(&h, &w1);
                        if g.len() > 1 && g.len() < h.len() {
                            let rest = self.div_exact(&h, &g);
                            stack.push(g);
                            stack.push(rest);
                            break;
                        }
                    }
                }
            }
        }
    }
}
