use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::{PermKind, PermSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Capacity-patched, decrypts forward and encrypts backward through `f^-1`.
    Ape,
    /// Full-state patched, keystream mode.
    Duplex,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ape => "ape",
            Mode::Duplex => "duplex",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ape" | "ape_like" => Ok(Mode::Ape),
            "duplex" | "duplex_like" => Ok(Mode::Duplex),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpongeParams {
    pub perm: PermSpec,
    pub rate: usize,
    pub capacity: usize,
    pub instr_bits: usize,
    pub redundancy: usize,
    pub mode: Mode,
    /// Target security level in bits.
    pub security: u32,
}

pub const PRESET_NAMES: [&str; 4] = ["aee", "ie", "aee-light", "micro"];

impl SpongeParams {
    /// Keccak-p[200,12] with an 84-bit security target.
    pub const AEE: SpongeParams = SpongeParams {
        perm: PermSpec::keccak(200, 12),
        rate: 32,
        capacity: 168,
        instr_bits: 32,
        redundancy: 0,
        mode: Mode::Ape,
        security: 84,
    };

    /// Keccak-p[50,12] with two redundancy bits.
    pub const IE: SpongeParams = SpongeParams {
        perm: PermSpec::keccak(50, 12),
        rate: 34,
        capacity: 16,
        instr_bits: 32,
        redundancy: 2,
        mode: Mode::Ape,
        security: 8,
    };

    /// PRINCE, keyed; the key is bound when a [`super::Sponge`] is built.
    pub const AEE_LIGHT: SpongeParams = SpongeParams {
        perm: PermSpec::prince(None),
        rate: 32,
        capacity: 32,
        instr_bits: 32,
        redundancy: 0,
        mode: Mode::Ape,
        security: 16,
    };

    /// Tiny capacity for attack campaigns that must finish quickly.
    pub const MICRO: SpongeParams = SpongeParams {
        perm: PermSpec::keccak(50, 12),
        rate: 42,
        capacity: 8,
        instr_bits: 32,
        redundancy: 10,
        mode: Mode::Ape,
        security: 4,
    };

    pub fn preset(name: &str) -> Result<SpongeParams> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "aee" => Ok(Self::AEE),
            "ie" => Ok(Self::IE),
            "aee-light" | "light" => Ok(Self::AEE_LIGHT),
            "micro" => Ok(Self::MICRO),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn width(&self) -> usize {
        self.perm.width
    }

    /// Bits carried by one patch: the capacity in APE, the whole state in duplex.
    pub fn patch_bits(&self) -> usize {
        match self.mode {
            Mode::Ape => self.capacity,
            Mode::Duplex => self.width(),
        }
    }

    /// Words per patch slot group (`k`).
    pub fn slot_words(&self) -> u32 {
        self.patch_bits().div_ceil(32) as u32
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        validate_params(self)
    }

    /// `key=value` lines: mode, perm, rounds, r, x, i, n, s.
    pub fn to_config(&self) -> String {
        let perm = match self.perm.kind {
            PermKind::KeccakP => format!("keccak-p{}", self.perm.width),
            PermKind::Prince => "prince".to_string(),
        };
        format!(
            "mode={}\nperm={perm}\nrounds={}\nr={}\nx={}\ni={}\nn={}\ns={}\n",
            self.mode,
            self.perm.rounds,
            self.rate,
            self.capacity,
            self.instr_bits,
            self.redundancy,
            self.security
        )
    }

    /// Parses [`Self::to_config`] output. `preset=NAME` seeds the defaults;
    /// later keys override. Blank lines and `#` comments are ignored.
    pub fn from_config(text: &str) -> Result<SpongeParams> {
        let mut p = SpongeParams::AEE;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("line {}: `{key}` is not a number", n + 1)))
            };
            match key {
                "preset" => p = SpongeParams::preset(value)?,
                "mode" => p.mode = value.parse()?,
                "perm" => {
                    let rounds = p.perm.rounds;
                    p.perm = match value.to_ascii_lowercase().as_str() {
                        "keccak-p50" | "keccak50" => PermSpec::keccak(50, rounds),
                        "keccak-p200" | "keccak200" => PermSpec::keccak(200, rounds),
                        "prince" => PermSpec::prince(None),
                        _ => return Err(Error::Config(format!("unknown permutation `{value}`"))),
                    }
                }
                "rounds" => p.perm.rounds = num()? as u32,
                "r" => p.rate = num()?,
                "x" => p.capacity = num()?,
                "i" => p.instr_bits = num()?,
                "n" => p.redundancy = num()?,
                "s" => p.security = num()? as u32,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        Ok(p)
    }
}

/// Checks every structural rule; the returned list names each violated one.
pub fn validate_params(p: &SpongeParams) -> std::result::Result<(), Vec<String>> {
    let mut diags = Vec::new();
    if let Err(e) = p.perm.check_shape() {
        diags.push(e);
    }
    if p.rate + p.capacity != p.width() {
        diags.push(format!(
            "rate plus capacity ({} + {}) differs from permutation width {}",
            p.rate,
            p.capacity,
            p.width()
        ));
    }
    if p.instr_bits != 32 {
        diags.push(format!("instruction width {} is not 32", p.instr_bits));
    }
    if p.rate != p.instr_bits + p.redundancy {
        diags.push(format!(
            "rate {} differs from instruction width plus redundancy ({} + {})",
            p.rate, p.instr_bits, p.redundancy
        ));
    }
    if p.rate > 64 {
        diags.push(format!("rate {} exceeds 64 bits", p.rate));
    }
    if p.capacity == 0 {
        diags.push("capacity is zero".to_string());
    }
    if !p.perm.is_keyed() && p.capacity < 2 * p.security as usize {
        diags.push(format!(
            "capacity below 2s ({} < 2 * {})",
            p.capacity, p.security
        ));
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            let p = SpongeParams::preset(name).unwrap();
            assert_eq!(validate_params(&p), Ok(()), "{name}");
            assert_eq!(validate_params(&p.with_mode(Mode::Duplex)), Ok(()), "{name}");
        }
    }

    #[test]
    fn capacity_rule_boundary() {
        let mut p = SpongeParams::IE;
        p.capacity = 15;
        p.rate = 35;
        p.redundancy = 3;
        let d = validate_params(&p).unwrap_err();
        assert_eq!(d.len(), 1);
        assert!(d[0].contains("capacity below 2s"));
    }

    #[test]
    fn each_violation_is_named() {
        let mut p = SpongeParams::AEE;
        p.rate = 40;
        p.instr_bits = 30;
        let d = validate_params(&p).unwrap_err();
        assert!(d.iter().any(|m| m.contains("rate plus capacity")));
        assert!(d.iter().any(|m| m.contains("instruction width 30")));
        assert!(d.iter().any(|m| m.contains("plus redundancy")));
    }

    #[test]
    fn keyed_permutation_skips_capacity_rule() {
        let mut p = SpongeParams::AEE_LIGHT;
        p.security = 64;
        assert_eq!(validate_params(&p), Ok(()));
    }

    #[test]
    fn slot_words_per_preset() {
        assert_eq!(SpongeParams::AEE.slot_words(), 6);
        assert_eq!(SpongeParams::IE.slot_words(), 1);
        assert_eq!(SpongeParams::IE.with_mode(Mode::Duplex).slot_words(), 2);
        assert_eq!(SpongeParams::MICRO.slot_words(), 1);
    }

    #[test]
    fn config_round_trip() {
        for name in PRESET_NAMES {
            for mode in [Mode::Ape, Mode::Duplex] {
                let p = SpongeParams::preset(name).unwrap().with_mode(mode);
                let mut q = SpongeParams::from_config(&p.to_config()).unwrap();
                q.perm.key_security = p.perm.key_security;
                assert_eq!(p, q);
            }
        }
        let p = SpongeParams::from_config("preset=ie\nmode=duplex # comment\n").unwrap();
        assert_eq!(p, SpongeParams::IE.with_mode(Mode::Duplex));
        assert!(SpongeParams::from_config("bogus=1").is_err());
    }
}
