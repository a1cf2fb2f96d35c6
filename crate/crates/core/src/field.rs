//! Prime-field arithmetic over moduli up to 127 bits.
//!
//! Values are plain `u128` residues in `[0, p)`. Multiplication of residues
//! wider than 64 bits goes through a 128-bit Montgomery reduction; callers
//! that run long multiply chains (polynomial arithmetic in the decoder) can
//! stay in the Montgomery domain with [`FieldModulus::to_mont`] /
//! [`FieldModulus::mont_mul`] / [`FieldModulus::from_mont`].

use core::fmt;

use serde::{Deserialize, Serialize};

/// Largest modulus this module accepts.
pub const MAX_MODULUS: u128 = (1u128 << 127) - 1;

/// Below this bound the Miller-Rabin witness set used by [`is_prime`] is
/// deterministic.
pub const DETERMINISTIC_PRIMALITY_BOUND: u128 = 3_317_044_064_679_887_385_961_981;

const WITNESSES: [u128; 13] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41];
const EXTRA_WITNESSES: [u128; 12] = [
    43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u128),
    #[error("lower bound {0} exceeds the supported modulus width (2^127 - 1); use the big-integer decoder")]
    UnsupportedModulus(u128),
    #[error("lower bound must be at least 2, got {0}")]
    BoundTooSmall(u128),
    #[error("division by zero in F_{0}")]
    DivisionByZero(u128),
}

/// Full 256-bit product of two `u128` values, returned as `(hi, lo)`.
#[inline]
pub(crate) fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let (a0, a1) = (a as u64 as u128, a >> 64);
    let (b0, b1) = (b as u64 as u128, b >> 64);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 as u64 as u128) + (p10 as u64 as u128);
    let lo = (p00 as u64 as u128) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

/// A prime modulus `p` together with its Montgomery constants.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u128", into = "u128")]
pub struct FieldModulus {
    p: u128,
    // -p^{-1} mod 2^128 (zero when p = 2)
    neg_inv: u128,
    // 2^256 mod p
    r2: u128,
}

impl fmt::Debug for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldModulus({})", self.p)
    }
}

impl fmt::Display for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.p)
    }
}

impl TryFrom<u128> for FieldModulus {
    type Error = FieldError;

    fn try_from(p: u128) -> Result<Self, FieldError> {
        FieldModulus::new(p)
    }
}

impl From<FieldModulus> for u128 {
    fn from(m: FieldModulus) -> u128 {
        m.p
    }
}

impl FieldModulus {
    /// Validates that `p` is a prime in `[2, 2^127)`.
    pub fn new(p: u128) -> Result<Self, FieldError> {
        if p > MAX_MODULUS {
            return Err(FieldError::UnsupportedModulus(p));
        }
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self::new_unchecked(p))
    }

    /// Builds the Montgomery context without a primality check. `p` must be
    /// at least 2 and below 2^127.
    pub(crate) fn new_unchecked(p: u128) -> Self {
        debug_assert!((2..=MAX_MODULUS).contains(&p));
        if p.is_multiple_of(2) {
            return Self { p, neg_inv: 0, r2: 0 };
        }
        // Newton iteration for p^{-1} mod 2^128; p*p = 1 mod 8 seeds 3 bits.
        let mut inv = p;
        for _ in 0..7 {
            inv = inv.wrapping_mul(2u128.wrapping_sub(p.wrapping_mul(inv)));
        }
        debug_assert_eq!(p.wrapping_mul(inv), 1);
        // 2^128 mod p, then doubled 128 more times to reach 2^256 mod p.
        let mut r = (u128::MAX % p + 1) % p;
        for _ in 0..128 {
            r = add_mod(r, r, p);
        }
        Self { p, neg_inv: inv.wrapping_neg(), r2: r }
    }

    #[inline]
    pub fn value(&self) -> u128 {
        self.p
    }

    /// Number of bits needed to hold any residue, i.e. `ceil(log2 p)`.
    pub fn bit_width(&self) -> u32 {
        128 - (self.p - 1).leading_zeros()
    }

    #[inline]
    pub fn reduce(&self, a: u128) -> u128 {
        a % self.p
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        add_mod(a, b, self.p)
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            self.p - (b - a)
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        if self.p <= u64::MAX as u128 {
            (a * b) % self.p
        } else {
            self.redc(mul_wide(self.redc(mul_wide(a, b)), self.r2))
        }
    }

    pub fn pow(&self, base: u128, mut exp: u128) -> u128 {
        if self.p == 2 {
            return if exp == 0 { 1 } else { base & 1 };
        }
        let mut acc = self.to_mont(1);
        let mut b = self.to_mont(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mont_mul(acc, b);
            }
            b = self.mont_mul(b, b);
            exp >>= 1;
        }
        self.from_mont(acc)
    }

    /// Inverse by Fermat exponentiation `a^(p-2)`.
    pub fn inv(&self, a: u128) -> Result<u128, FieldError> {
        let a = self.reduce(a);
        if a == 0 {
            return Err(FieldError::DivisionByZero(self.p));
        }
        Ok(self.pow(a, self.p - 2))
    }

    #[inline]
    fn redc(&self, (hi, lo): (u128, u128)) -> u128 {
        let m = lo.wrapping_mul(self.neg_inv);
        let (mh, ml) = mul_wide(m, self.p);
        let (_, carry) = lo.overflowing_add(ml);
        let t = hi + mh + carry as u128;
        if t >= self.p {
            t - self.p
        } else {
            t
        }
    }

    /// Montgomery reduction of an arbitrary 256-bit value `hi·2^128 + lo`.
    #[inline]
    pub(crate) fn redc_wide(&self, hi: u128, lo: u128) -> u128 {
        let hi = if hi >= self.p { hi % self.p } else { hi };
        self.redc((hi, lo))
    }

    /// Maps a residue into the Montgomery domain. Requires an odd modulus.
    #[inline]
    pub fn to_mont(&self, a: u128) -> u128 {
        self.redc(mul_wide(a, self.r2))
    }

    #[inline]
    pub fn from_mont(&self, a: u128) -> u128 {
        self.redc((0, a))
    }

    #[inline]
    pub fn mont_mul(&self, a: u128, b: u128) -> u128 {
        self.redc(mul_wide(a, b))
    }

    pub fn element(&self, value: u128) -> FieldElement<'_> {
        FieldElement { value: self.reduce(value), field: self }
    }
}

#[inline]
fn add_mod(a: u128, b: u128, p: u128) -> u128 {
    // a, b < p < 2^127 so the sum cannot overflow.
    let s = a + b;
    if s >= p {
        s - p
    } else {
        s
    }
}

/// Miller-Rabin. Deterministic below [`DETERMINISTIC_PRIMALITY_BOUND`],
/// probabilistic (25 fixed witnesses) above it.
pub fn is_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for &w in WITNESSES.iter().chain(EXTRA_WITNESSES.iter()) {
        if n == w {
            return true;
        }
        if n.is_multiple_of(w) {
            return false;
        }
    }
    if n > MAX_MODULUS {
        // Outside the Montgomery range; nothing here needs such primes.
        return false;
    }
    let field = FieldModulus::new_unchecked(n);
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    let extra: &[u128] = if n < DETERMINISTIC_PRIMALITY_BOUND {
        &[]
    } else {
        &EXTRA_WITNESSES
    };
    'witness: for &a in WITNESSES.iter().chain(extra.iter()) {
        let mut x = field.pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = field.mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime `p >= lower_bound`.
pub fn select_prime(lower_bound: u128) -> Result<FieldModulus, FieldError> {
    if lower_bound < 2 {
        return Err(FieldError::BoundTooSmall(lower_bound));
    }
    let mut candidate = lower_bound;
    loop {
        if candidate > MAX_MODULUS {
            return Err(FieldError::UnsupportedModulus(lower_bound));
        }
        if is_prime(candidate) {
            return Ok(FieldModulus::new_unchecked(candidate));
        }
        candidate += 1;
    }
}

/// A residue bound to its modulus.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct FieldElement<'m> {
    value: u128,
    field: &'m FieldModulus,
}

impl fmt::Debug for FieldElement<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.value, self.field.p)
    }
}

impl<'m> FieldElement<'m> {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn modulus(&self) -> &'m FieldModulus {
        self.field
    }

    pub fn pow(self, exp: u128) -> Self {
        self.field.element(self.field.pow(self.value, exp))
    }

    pub fn inverse(self) -> Result<Self, FieldError> {
        Ok(self.field.element(self.field.inv(self.value)?))
    }
}

/// Inverse of a field element; fails on zero.
pub fn field_inverse(a: FieldElement<'_>) -> Result<FieldElement<'_>, FieldError> {
    a.inverse()
}

macro_rules! field_binop {
    ($trait:ident, $method:ident, $op:ident) => {
        impl<'m> core::ops::$trait for FieldElement<'m> {
            type Output = FieldElement<'m>;

            fn $method(self, rhs: Self) -> Self {
                debug_assert_eq!(self.field.p, rhs.field.p, "mixed moduli");
                FieldElement { value: self.field.$op(self.value, rhs.value), field: self.field }
            }
        }
    };
}

field_binop!(Add, add, add);
field_binop!(Sub, sub, sub);
field_binop!(Mul, mul, mul);

impl<'m> core::ops::Neg for FieldElement<'m> {
    type Output = FieldElement<'m>;

    fn neg(self) -> Self {
        FieldElement { value: self.field.neg(self.value), field: self.field }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trial_division(n: u128) -> bool {
        if n < 2 {
            return false;
        }
        let mut d = 2;
        while d * d <= n {
            if n.is_multiple_of(d) {
                return false;
            }
            d += 1;
        }
        true
    }

    #[test]
    fn select_prime_examples() {
        assert_eq!(select_prime(2).unwrap().value(), 2);
        assert_eq!(select_prime(12).unwrap().value(), 13);
        assert_eq!(select_prime(65530).unwrap().value(), 65537);
        assert!(matches!(select_prime(1), Err(FieldError::BoundTooSmall(1))));
        assert!(matches!(
            select_prime(MAX_MODULUS + 1),
            Err(FieldError::UnsupportedModulus(_))
        ));
    }

    #[test]
    fn primality_matches_trial_division() {
        for n in 0..5000u128 {
            assert_eq!(is_prime(n), trial_division(n), "n = {n}");
        }
        // Strong pseudoprime to bases 2..37 except 41.
        assert!(!is_prime(3_825_123_056_546_413_051));
        assert!(is_prime((1u128 << 61) - 1));
        assert!(is_prime((1u128 << 89) - 1));
        assert!(is_prime((1u128 << 127) - 1));
        assert!(!is_prime((1u128 << 67) - 1));
    }

    #[test]
    fn inverse_examples() {
        let f = FieldModulus::new(13).unwrap();
        assert_eq!(field_inverse(f.element(1)).unwrap().value(), 1);
        assert_eq!(field_inverse(f.element(3)).unwrap().value(), 9);
        assert_eq!(field_inverse(f.element(12)).unwrap().value(), 12);
        assert_eq!(field_inverse(f.element(0)), Err(FieldError::DivisionByZero(13)));
        let two = FieldModulus::new(2).unwrap();
        assert_eq!(two.inv(1).unwrap(), 1);
    }

    #[test]
    fn rejects_composites() {
        assert_eq!(FieldModulus::new(15), Err(FieldError::NotPrime(15)));
    }

    #[test]
    fn bit_width() {
        assert_eq!(FieldModulus::new(2).unwrap().bit_width(), 1);
        assert_eq!(FieldModulus::new(13).unwrap().bit_width(), 4);
        assert_eq!(FieldModulus::new(17).unwrap().bit_width(), 5);
        assert_eq!(FieldModulus::new(65537).unwrap().bit_width(), 17);
    }

    // Schoolbook 256-bit mod for the wide-modulus oracle.
    fn mulmod_oracle(a: u128, b: u128, p: u128) -> u128 {
        let mut acc = 0u128;
        let mut x = a % p;
        let mut y = b;
        while y > 0 {
            if y & 1 == 1 {
                acc = (acc + x) % p;
            }
            x = (x + x) % p;
            y >>= 1;
        }
        acc
    }

    const WIDE_PRIME: u128 = (1u128 << 89) - 1;

    proptest! {
        #[test]
        fn add_matches_integer_arithmetic(a in any::<u64>(), b in any::<u64>()) {
            let f = FieldModulus::new(WIDE_PRIME).unwrap();
            let (a, b) = (a as u128 % WIDE_PRIME, b as u128 % WIDE_PRIME);
            prop_assert_eq!(f.add(a, b), (a + b) % WIDE_PRIME);
        }

        #[test]
        fn wide_mul_matches_oracle(a in any::<u128>(), b in any::<u128>()) {
            let f = FieldModulus::new(WIDE_PRIME).unwrap();
            let (a, b) = (a % WIDE_PRIME, b % WIDE_PRIME);
            prop_assert_eq!(f.mul(a, b), mulmod_oracle(a, b, WIDE_PRIME));
            let m = f.mont_mul(f.to_mont(a), f.to_mont(b));
            prop_assert_eq!(f.from_mont(m), mulmod_oracle(a, b, WIDE_PRIME));
        }

        #[test]
        fn inverse_is_involution(a in 1u128..WIDE_PRIME) {
            let f = FieldModulus::new(WIDE_PRIME).unwrap();
            let x = f.element(a);
            let inv = x.inverse().unwrap();
            prop_assert_eq!((x * inv).value(), 1);
            prop_assert_eq!(inv.inverse().unwrap(), x);
        }

        #[test]
        fn fermat_little_theorem(a in 1u128..65537) {
            for p in [13u128, 65537, (1u128 << 61) - 1, WIDE_PRIME] {
                let f = FieldModulus::new(p).unwrap();
                let a = a % p;
                if a != 0 {
                    prop_assert_eq!(f.pow(a, p - 1), 1);
                }
            }
        }
    }
}
