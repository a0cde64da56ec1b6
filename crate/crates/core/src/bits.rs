//! Fixed-capacity bit vectors used for permutation and sponge states.
//!
//! Bit `i` is bit `i % 8` (LSB first) of byte `i / 8` in the canonical
//! little-endian serialization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest width handled anywhere in the crate.
pub const MAX_BITS: usize = 256;
const WORDS: usize = MAX_BITS / 64;

/// Lowercase hex of a byte string.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses exactly `N` bytes of hex.
pub fn parse_hex<const N: usize>(s: &str) -> Result<[u8; N]> {
    let s = s.trim();
    let s = s.strip_prefix("0x").unwrap_or(s);
    if s.len() != 2 * N || !s.is_ascii() {
        return Err(Error::Config(format!("expected {} hex digits, got {:?}", 2 * N, s)));
    }
    let mut out = [0u8; N];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::Config(format!("bad hex digits in {s:?}")))?;
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateBits {
    words: [u64; WORDS],
    width: u16,
}

impl StateBits {
    pub fn zero(width: usize) -> Self {
        assert!(width <= MAX_BITS, "state width {width} exceeds {MAX_BITS}");
        StateBits {
            words: [0; WORDS],
            width: width as u16,
        }
    }

    /// Builds a state from the low `width` bits of `value`.
    pub fn from_u64(width: usize, value: u64) -> Self {
        let mut s = Self::zero(width);
        s.words[0] = value;
        s.mask_top();
        s
    }

    pub fn from_le_bytes(width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width.div_ceil(8) {
            return Err(Error::Config(format!(
                "expected {} bytes for a {width}-bit state, got {}",
                width.div_ceil(8),
                bytes.len()
            )));
        }
        let mut s = Self::zero(width);
        for (i, b) in bytes.iter().enumerate() {
            s.words[i / 8] |= (*b as u64) << (8 * (i % 8));
        }
        if s.clone_masked() != s {
            return Err(Error::Config(format!(
                "bits beyond width {width} are set"
            )));
        }
        Ok(s)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        (0..self.byte_len())
            .map(|i| (self.words[i / 8] >> (8 * (i % 8))) as u8)
            .collect()
    }

    pub fn from_hex(width: usize, hex: &str) -> Result<Self> {
        let hex = hex.trim();
        if !hex.len().is_multiple_of(2) {
            return Err(Error::Config(format!("odd-length hex string {hex:?}")));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::Config(format!("bad hex {hex:?}: {e}")))?;
        Self::from_le_bytes(width, &bytes)
    }

    pub fn to_hex(&self) -> String {
        hex(&self.to_le_bytes())
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn byte_len(&self) -> usize {
        self.width().div_ceil(8)
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.width());
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.width());
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn flip_bit(&mut self, i: usize) {
        debug_assert!(i < self.width());
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    /// Reads `len <= 64` bits starting at bit `lo`.
    pub fn get_bits(&self, lo: usize, len: usize) -> u64 {
        debug_assert!(len <= 64 && lo + len <= self.width());
        if len == 0 {
            return 0;
        }
        let w = lo / 64;
        let off = lo % 64;
        let mut v = self.words[w] >> off;
        if off != 0 && off + len > 64 {
            v |= self.words[w + 1] << (64 - off);
        }
        if len == 64 {
            v
        } else {
            v & ((1u64 << len) - 1)
        }
    }

    /// Overwrites `len <= 64` bits starting at bit `lo` with the low bits of `value`.
    pub fn set_bits(&mut self, lo: usize, len: usize, value: u64) {
        debug_assert!(len <= 64 && lo + len <= self.width());
        if len == 0 {
            return;
        }
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        let value = value & mask;
        let w = lo / 64;
        let off = lo % 64;
        self.words[w] = (self.words[w] & !(mask << off)) | (value << off);
        if off != 0 && off + len > 64 {
            let hi = 64 - off;
            let mhi = mask >> hi;
            self.words[w + 1] = (self.words[w + 1] & !mhi) | (value >> hi);
        }
    }

    /// Copies bits `[lo, lo + len)` into a new `len`-bit vector.
    pub fn slice(&self, lo: usize, len: usize) -> StateBits {
        let mut out = StateBits::zero(len);
        let mut done = 0;
        while done < len {
            let n = (len - done).min(64);
            out.set_bits(done, n, self.get_bits(lo + done, n));
            done += n;
        }
        out
    }

    /// Writes `src` into bits `[lo, lo + src.width())`.
    pub fn splice(&mut self, lo: usize, src: &StateBits) {
        let len = src.width();
        let mut done = 0;
        while done < len {
            let n = (len - done).min(64);
            self.set_bits(lo + done, n, src.get_bits(done, n));
            done += n;
        }
    }

    pub fn xor(&self, other: &StateBits) -> StateBits {
        assert_eq!(self.width, other.width, "xor of mismatched widths");
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a ^= b;
        }
        out
    }

    pub fn xor_assign(&mut self, other: &StateBits) {
        *self = self.xor(other);
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn hamming(&self, other: &StateBits) -> u32 {
        self.xor(other).count_ones()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Fills the vector from an RNG.
    pub fn random<R: rand::Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let mut s = Self::zero(width);
        for w in s.words.iter_mut() {
            *w = rng.gen();
        }
        s.mask_top();
        s
    }

    fn mask_top(&mut self) {
        let width = self.width();
        for (i, w) in self.words.iter_mut().enumerate() {
            let lo = i * 64;
            if lo >= width {
                *w = 0;
            } else if width - lo < 64 {
                *w &= (1u64 << (width - lo)) - 1;
            }
        }
    }

    fn clone_masked(&self) -> Self {
        let mut s = *self;
        s.mask_top();
        s
    }
}

impl fmt::Debug for StateBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateBits<{}>({})", self.width, self.to_hex())
    }
}

impl fmt::Display for StateBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
