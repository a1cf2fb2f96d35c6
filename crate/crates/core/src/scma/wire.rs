//! Binary encoding of a client's syndrome message.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field                          |
//! |-------|--------------------------------|
//! | 4     | magic `SCM1`                   |
//! | 4     | K (`u32`)                      |
//! | 4     | L (`u32`)                      |
//! | 16    | modulus p (`u128`)             |
//! | 16    | total bins (`u128`)            |
//! | 4     | element count, must be `2KL`   |
//! | 1     | element width `⌈log₂ p⌉` bits  |
//!
//! followed by the elements bit-packed LSB-first, the last byte padded with
//! zero bits.

use alloc::vec::Vec;

use super::{ScmaError, ScmaParams, SyndromeVector};
use crate::field::FieldModulus;

pub const MAGIC: [u8; 4] = *b"SCM1";
pub const HEADER_LEN: usize = 49;

/// Exact encoded size in bytes.
pub fn message_len(params: &ScmaParams) -> usize {
    let bits = params.syndrome_len() * params.modulus.bit_width() as usize;
    HEADER_LEN + bits.div_ceil(8)
}

pub fn encode(params: &ScmaParams, s: &SyndromeVector) -> Result<Vec<u8>, ScmaError> {
    let len = params.syndrome_len();
    if s.len() != len {
        return Err(ScmaError::LengthMismatch { expected: len, got: s.len() });
    }
    let k = u32::try_from(params.k).map_err(|_| ScmaError::Wire("K exceeds u32"))?;
    let l = u32::try_from(params.l).map_err(|_| ScmaError::Wire("L exceeds u32"))?;
    let n = u32::try_from(len).map_err(|_| ScmaError::Wire("length exceeds u32"))?;
    let width = params.modulus.bit_width();
    let p = params.modulus.value();

    let mut out = Vec::with_capacity(message_len(params));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&l.to_le_bytes());
    out.extend_from_slice(&p.to_le_bytes());
    out.extend_from_slice(&params.total_bins.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.push(width as u8);

    let mut acc: u128 = 0;
    let mut filled: u32 = 0;
    for &v in s.as_slice() {
        if v >= p {
            return Err(ScmaError::Wire("element not reduced"));
        }
        let mut rest = v;
        let mut left = width;
        while left > 0 {
            let take = left.min(8 - filled);
            acc |= (rest & ((1u128 << take) - 1)) << filled;
            rest >>= take;
            left -= take;
            filled += take;
            if filled == 8 {
                out.push(acc as u8);
                acc = 0;
                filled = 0;
            }
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ScmaParams, SyndromeVector), ScmaError> {
    if bytes.len() < HEADER_LEN {
        return Err(ScmaError::Wire("truncated header"));
    }
    if bytes[..4] != MAGIC {
        return Err(ScmaError::Wire("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u128_at = |o: usize| u128::from_le_bytes(bytes[o..o + 16].try_into().unwrap());
    let k = u32_at(4) as usize;
    let l = u32_at(8) as usize;
    let p = u128_at(12);
    let total_bins = u128_at(28);
    let n = u32_at(44) as usize;
    let width = bytes[48] as u32;

    let modulus = FieldModulus::new(p)?;
    if width != modulus.bit_width() {
        return Err(ScmaError::Wire("element width does not match modulus"));
    }
    let params = ScmaParams::with_modulus(k, l, modulus, total_bins);
    if n != params.syndrome_len() {
        return Err(ScmaError::LengthMismatch { expected: params.syndrome_len(), got: n });
    }
    if bytes.len() != message_len(&params) {
        return Err(ScmaError::Wire("payload length does not match header"));
    }

    let payload = &bytes[HEADER_LEN..];
    let mut values = Vec::with_capacity(n);
    let mut bit = 0usize;
    for _ in 0..n {
        let mut v: u128 = 0;
        let mut got = 0u32;
        while got < width {
            let byte = payload[bit / 8] as u128;
            let off = (bit % 8) as u32;
            let take = (width - got).min(8 - off);
            v |= ((byte >> off) & ((1u128 << take) - 1)) << got;
            got += take;
            bit += take as usize;
        }
        if v >= p {
            return Err(ScmaError::Wire("element not reduced"));
        }
        values.push(v);
    }
    if !bit.is_multiple_of(8) && payload[bit / 8] >> (bit % 8) != 0 {
        return Err(ScmaError::Wire("nonzero padding bits"));
    }
    Ok((params, SyndromeVector::new(values)))
}
