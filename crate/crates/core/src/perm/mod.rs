//! Cryptographic permutations: Keccak-p at widths 50 and 200, and the PRINCE
//! keyed permutation on 64 bits.

mod keccak;
mod prince;

use serde::{Deserialize, Serialize};

pub use keccak::{max_rounds, KeccakP};
pub use prince::Prince;

use crate::bits::StateBits;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PermKind {
    KeccakP,
    Prince,
}

/// Permutation selection. `key` is only meaningful (and required) for PRINCE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermSpec {
    pub kind: PermKind,
    pub width: usize,
    pub rounds: u32,
    pub key: Option<[u8; 16]>,
    /// Security level of the keyed permutation in bits; informational.
    pub key_security: Option<u32>,
}

impl PermSpec {
    pub const fn keccak(width: usize, rounds: u32) -> Self {
        PermSpec {
            kind: PermKind::KeccakP,
            width,
            rounds,
            key: None,
            key_security: None,
        }
    }

    pub const fn prince(key: Option<[u8; 16]>) -> Self {
        PermSpec {
            kind: PermKind::Prince,
            width: 64,
            rounds: 12,
            key,
            key_security: Some(96),
        }
    }

    pub fn is_keyed(&self) -> bool {
        self.kind == PermKind::Prince
    }

    pub fn with_key(mut self, key: [u8; 16]) -> Self {
        if self.is_keyed() {
            self.key = Some(key);
        }
        self
    }

    /// Checks the structural invariants that do not depend on a key.
    pub fn check_shape(&self) -> std::result::Result<(), String> {
        match self.kind {
            PermKind::KeccakP => {
                if self.width != 50 && self.width != 200 {
                    return Err(format!("Keccak-p width {} not in {{50, 200}}", self.width));
                }
                let max = max_rounds(self.width as u32 / 25);
                if self.rounds == 0 || self.rounds > max {
                    return Err(format!(
                        "Keccak-p[{}] rounds {} outside 1..={max}",
                        self.width, self.rounds
                    ));
                }
                Ok(())
            }
            PermKind::Prince => {
                if self.width != 64 {
                    return Err(format!("PRINCE width {} != 64", self.width));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            PermKind::KeccakP => format!("keccak-p[{},{}]", self.width, self.rounds),
            PermKind::Prince => "prince".to_string(),
        }
    }
}

/// An instantiated permutation, ready to apply.
#[derive(Clone, Copy, Debug)]
pub enum Permutation {
    Keccak(KeccakP),
    Prince(Prince),
}

impl Permutation {
    pub fn new(spec: &PermSpec) -> Result<Self> {
        match spec.kind {
            PermKind::KeccakP => KeccakP::new(spec.width, spec.rounds)
                .map(Permutation::Keccak)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unsupported Keccak-p[{},{}]",
                        spec.width, spec.rounds
                    ))
                }),
            PermKind::Prince => {
                if spec.width != 64 {
                    return Err(Error::Config(format!("PRINCE width {} != 64", spec.width)));
                }
                let key = spec
                    .key
                    .ok_or_else(|| Error::Config("PRINCE requires a 128-bit key".into()))?;
                Ok(Permutation::Prince(Prince::new(&key)))
            }
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Permutation::Keccak(k) => k.width(),
            Permutation::Prince(_) => 64,
        }
    }

    fn check(&self, s: &StateBits) -> Result<()> {
        if s.width() != self.width() {
            return Err(Error::Config(format!(
                "state has {} bits, permutation expects {}",
                s.width(),
                self.width()
            )));
        }
        Ok(())
    }

    pub fn permute(&self, s: &StateBits) -> Result<StateBits> {
        self.check(s)?;
        Ok(self.apply(s))
    }

    pub fn permute_inverse(&self, s: &StateBits) -> Result<StateBits> {
        self.check(s)?;
        Ok(self.apply_inverse(s))
    }

    /// Unchecked forward application; callers guarantee the width.
    pub(crate) fn apply(&self, s: &StateBits) -> StateBits {
        match self {
            Permutation::Keccak(k) => k.permute(s),
            Permutation::Prince(p) => StateBits::from_u64(64, p.encrypt(s.get_bits(0, 64))),
        }
    }

    pub(crate) fn apply_inverse(&self, s: &StateBits) -> StateBits {
        match self {
            Permutation::Keccak(k) => k.permute_inverse(s),
            Permutation::Prince(p) => StateBits::from_u64(64, p.decrypt(s.get_bits(0, 64))),
        }
    }
}

/// `f(s)` for the given specification.
pub fn permute(spec: &PermSpec, s: &StateBits) -> Result<StateBits> {
    Permutation::new(spec)?.permute(s)
}

/// `f^-1(s)` for the given specification.
pub fn permute_inverse(spec: &PermSpec, s: &StateBits) -> Result<StateBits> {
    Permutation::new(spec)?.permute_inverse(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    fn specs(rng: &mut impl Rng) -> Vec<PermSpec> {
        vec![
            PermSpec::keccak(50, 12),
            PermSpec::keccak(200, 12),
            PermSpec::prince(Some(rng.gen())),
        ]
    }

    #[test]
    fn width_mismatch_is_a_config_error() {
        let s = StateBits::zero(64);
        assert!(matches!(
            permute(&PermSpec::keccak(50, 12), &s),
            Err(Error::Config(_))
        ));
        assert!(permute_inverse(&PermSpec::keccak(200, 12), &s).is_err());
    }

    #[test]
    fn prince_without_key_is_rejected() {
        assert!(Permutation::new(&PermSpec::prince(None)).is_err());
    }

    #[test]
    fn inverse_identity_on_random_states() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for spec in specs(&mut rng) {
            let p = Permutation::new(&spec).unwrap();
            for _ in 0..1000 {
                let s = StateBits::random(spec.width, &mut rng);
                assert_eq!(p.permute(&p.permute_inverse(&s).unwrap()).unwrap(), s);
            }
        }
    }

    #[test]
    fn no_collisions_on_sampled_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for spec in specs(&mut rng) {
            let p = Permutation::new(&spec).unwrap();
            let mut inputs = HashSet::new();
            let mut outputs = HashSet::new();
            while inputs.len() < 10_000 {
                let s = StateBits::random(spec.width, &mut rng);
                if inputs.insert(s) {
                    assert!(outputs.insert(p.apply(&s)), "collision for {}", spec.name());
                }
            }
        }
    }

    #[test]
    fn avalanche_at_least_forty_percent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for spec in [PermSpec::keccak(200, 12), PermSpec::prince(Some(rng.gen()))] {
            let p = Permutation::new(&spec).unwrap();
            let trials = 10_000;
            let mut flipped = 0u64;
            for _ in 0..trials {
                let s = StateBits::random(spec.width, &mut rng);
                let mut t = s;
                t.flip_bit(rng.gen_range(0..spec.width));
                flipped += p.apply(&s).hamming(&p.apply(&t)) as u64;
            }
            let frac = flipped as f64 / (trials as f64 * spec.width as f64);
            assert!(frac >= 0.40, "{}: avalanche {frac}", spec.name());
        }
    }
}
