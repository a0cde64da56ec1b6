use std::fmt;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::bits::StateBits;
use crate::error::{Error, Result};

/// Sponge state `z`: rate in bits `[0, r)`, capacity in `[r, b)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpongeState {
    bits: StateBits,
    rate: u16,
}

impl SpongeState {
    pub fn new(bits: StateBits, rate: usize) -> Self {
        assert!(rate <= bits.width());
        SpongeState {
            bits,
            rate: rate as u16,
        }
    }

    pub fn zero(width: usize, rate: usize) -> Self {
        Self::new(StateBits::zero(width), rate)
    }

    pub fn from_parts(rate: &StateBits, capacity: &StateBits) -> Self {
        let mut bits = StateBits::zero(rate.width() + capacity.width());
        bits.splice(0, rate);
        bits.splice(rate.width(), capacity);
        Self::new(bits, rate.width())
    }

    pub fn bits(&self) -> &StateBits {
        &self.bits
    }

    pub fn width(&self) -> usize {
        self.bits.width()
    }

    pub fn rate_bits(&self) -> usize {
        self.rate as usize
    }

    pub fn capacity_bits(&self) -> usize {
        self.width() - self.rate_bits()
    }

    pub fn rate(&self) -> StateBits {
        self.bits.slice(0, self.rate_bits())
    }

    /// The rate as an integer; the rate never exceeds 64 bits.
    pub fn rate_u64(&self) -> u64 {
        self.bits.get_bits(0, self.rate_bits())
    }

    pub fn capacity(&self) -> StateBits {
        self.bits.slice(self.rate_bits(), self.capacity_bits())
    }

    pub fn with_capacity(mut self, capacity: &StateBits) -> Self {
        assert_eq!(capacity.width(), self.capacity_bits());
        self.bits.splice(self.rate_bits(), capacity);
        self
    }

    pub fn with_rate_u64(mut self, rate: u64) -> Self {
        self.bits.set_bits(0, self.rate_bits(), rate);
        self
    }

    /// Clears the rate; APE chains carry only the capacity between steps.
    pub fn capacity_only(self) -> Self {
        self.with_rate_u64(0)
    }

    pub fn xor(&self, other: &SpongeState) -> SpongeState {
        assert_eq!(self.rate, other.rate);
        SpongeState::new(self.bits.xor(&other.bits), self.rate_bits())
    }

    /// Lowercase hex of the little-endian bytes; rate bits come first.
    pub fn to_hex(&self) -> String {
        self.bits.to_hex()
    }

    pub fn from_hex(width: usize, rate: usize, hex: &str) -> Result<Self> {
        Ok(Self::new(StateBits::from_hex(width, hex)?, rate))
    }
}

impl fmt::Debug for SpongeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpongeState(r={}, {})", self.rate, self.bits.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatchScope {
    Capacity,
    FullState,
}

impl PatchScope {
    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Ape => PatchScope::Capacity,
            Mode::Duplex => PatchScope::FullState,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchValue {
    pub scope: PatchScope,
    pub bits: StateBits,
}

impl PatchValue {
    pub fn zero(scope: PatchScope, width: usize) -> Self {
        PatchValue {
            scope,
            bits: StateBits::zero(width),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bits.is_zero()
    }

    /// Patch bits as `ceil(width / 32)` little-endian words, low bits first.
    pub fn to_words(&self) -> Vec<u32> {
        let n = self.bits.width().div_ceil(32);
        (0..n)
            .map(|i| {
                let lo = 32 * i;
                let len = (self.bits.width() - lo).min(32);
                self.bits.get_bits(lo, len) as u32
            })
            .collect()
    }

    /// Inverse of [`Self::to_words`]. High bits beyond `width` must be zero.
    pub fn from_words(scope: PatchScope, width: usize, words: &[u32]) -> Result<Self> {
        if words.len() != width.div_ceil(32) {
            return Err(Error::Layout(format!(
                "{} patch words for a {width}-bit patch",
                words.len()
            )));
        }
        let mut bits = StateBits::zero(width);
        for (i, w) in words.iter().enumerate() {
            let lo = 32 * i;
            let len = (width - lo).min(32);
            if len < 32 && (*w >> len) != 0 {
                return Err(Error::Layout("patch word has bits above the patch width".into()));
            }
            bits.set_bits(lo, len, *w as u64);
        }
        Ok(PatchValue { scope, bits })
    }

    /// Like [`Self::from_words`] but drops high bits instead of failing; used
    /// where slot memory may hold attacker-chosen words.
    pub fn from_words_lossy(scope: PatchScope, width: usize, words: &[u32]) -> Self {
        let mut bits = StateBits::zero(width);
        for (i, w) in words.iter().enumerate().take(width.div_ceil(32)) {
            let lo = 32 * i;
            let len = (width - lo).min(32);
            bits.set_bits(lo, len, *w as u64 & ((1u64 << len) - 1));
        }
        PatchValue { scope, bits }
    }
}

pub fn apply_patch(z: &SpongeState, patch: &PatchValue) -> Result<SpongeState> {
    match patch.scope {
        PatchScope::Capacity => {
            if patch.bits.width() != z.capacity_bits() {
                return Err(Error::Config(format!(
                    "capacity patch of {} bits for a {}-bit capacity",
                    patch.bits.width(),
                    z.capacity_bits()
                )));
            }
            Ok(z.with_capacity(&z.capacity().xor(&patch.bits)))
        }
        PatchScope::FullState => {
            if patch.bits.width() != z.width() {
                return Err(Error::Config(format!(
                    "full-state patch of {} bits for a {}-bit state",
                    patch.bits.width(),
                    z.width()
                )));
            }
            Ok(SpongeState::new(z.bits().xor(&patch.bits), z.rate_bits()))
        }
    }
}

/// Like [`apply_patch`] but also rejects a scope that does not fit the mode.
pub fn apply_patch_in_mode(z: &SpongeState, patch: &PatchValue, mode: Mode) -> Result<SpongeState> {
    if patch.scope != PatchScope::for_mode(mode) {
        return Err(Error::Config(format!(
            "{:?} patch used in {mode} mode",
            patch.scope
        )));
    }
    apply_patch(z, patch)
}

pub fn compute_patch(from: &SpongeState, to: &SpongeState, scope: PatchScope) -> Result<PatchValue> {
    match scope {
        PatchScope::Capacity => {
            if from.rate() != to.rate() {
                return Err(Error::UnpatchableDivergence {
                    addr: 0,
                    detail: "rates differ, a capacity patch cannot join them".into(),
                });
            }
            Ok(PatchValue {
                scope,
                bits: from.capacity().xor(&to.capacity()),
            })
        }
        PatchScope::FullState => Ok(PatchValue {
            scope,
            bits: from.bits().xor(to.bits()),
        }),
    }
}

/// `z' = z ^ e ^ z_entry`.
pub fn combine_interrupt_exit(z: &SpongeState, e: &SpongeState, z_entry: &SpongeState) -> SpongeState {
    z.xor(e).xor(z_entry)
}

/// True iff the low `n` bits of `redundancy` are all zero.
pub fn check_redundancy(redundancy: u64, n: usize) -> bool {
    if n == 0 {
        return true;
    }
    let mask = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
    redundancy & mask == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_state(rng: &mut ChaCha8Rng) -> SpongeState {
        SpongeState::new(StateBits::random(200, rng), 32)
    }

    #[test]
    fn patch_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = rand_state(&mut rng);
            let b = rand_state(&mut rng);
            let zero = PatchValue::zero(PatchScope::FullState, 200);
            assert_eq!(apply_patch(&a, &zero).unwrap(), a);
            let p = compute_patch(&a, &b, PatchScope::FullState).unwrap();
            assert_eq!(apply_patch(&a, &p).unwrap(), b);
            assert_eq!(apply_patch(&apply_patch(&a, &p).unwrap(), &p).unwrap(), a);
            assert!(compute_patch(&a, &a, PatchScope::Capacity).unwrap().is_zero());

            let b_same_rate = b.with_rate_u64(a.rate_u64());
            let q = compute_patch(&a, &b_same_rate, PatchScope::Capacity).unwrap();
            assert_eq!(apply_patch(&a, &q).unwrap(), b_same_rate);
            assert!(matches!(
                compute_patch(&a, &b, PatchScope::Capacity),
                Err(Error::UnpatchableDivergence { .. })
            ));
        }
    }

    #[test]
    fn scope_mode_mismatch() {
        let z = SpongeState::zero(200, 32);
        let p = PatchValue::zero(PatchScope::FullState, 200);
        assert!(apply_patch_in_mode(&z, &p, Mode::Ape).is_err());
        assert!(apply_patch_in_mode(&z, &p, Mode::Duplex).is_ok());
        assert!(apply_patch(&z, &PatchValue::zero(PatchScope::Capacity, 200)).is_err());
    }

    #[test]
    fn interrupt_combine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = rand_state(&mut rng);
        let e = rand_state(&mut rng);
        let entry = rand_state(&mut rng);
        assert_eq!(combine_interrupt_exit(&z, &z, &entry), entry);
        assert_eq!(combine_interrupt_exit(&entry, &entry, &entry), entry);
        let out = combine_interrupt_exit(&z, &e, &entry);
        assert_eq!(out.xor(&entry), z.xor(&e));
    }

    #[test]
    fn redundancy_check() {
        assert!(check_redundancy(0xFFFF, 0));
        assert!(check_redundancy(0b100, 2));
        assert!(!check_redundancy(0b01, 2));
    }

    #[test]
    fn patch_words_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for width in [8, 16, 32, 50, 168, 200] {
            let p = PatchValue {
                scope: PatchScope::FullState,
                bits: StateBits::random(width, &mut rng),
            };
            let words = p.to_words();
            assert_eq!(words.len(), width.div_ceil(32));
            assert_eq!(PatchValue::from_words(p.scope, width, &words).unwrap(), p);
        }
        assert!(PatchValue::from_words(PatchScope::Capacity, 8, &[0x100]).is_err());
        assert_eq!(
            PatchValue::from_words_lossy(PatchScope::Capacity, 8, &[0x1ff]).bits,
            StateBits::from_u64(8, 0xff)
        );
    }
}
