//! The sponge state machine: APE-like and duplex-like patched decryption,
//! their encryption duals, patch algebra and initial state derivation.

mod params;
mod state;

use serde::{Deserialize, Serialize};

pub use params::{validate_params, Mode, SpongeParams, PRESET_NAMES};
pub use state::{
    apply_patch, apply_patch_in_mode, check_redundancy, combine_interrupt_exit, compute_patch,
    PatchScope, PatchValue, SpongeState,
};

use crate::bits::StateBits;
use crate::error::{Error, Result};
use crate::perm::Permutation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub key: [u8; 16],
    pub nonce: [u8; 16],
}

impl KeyMaterial {
    pub fn new(key: [u8; 16], nonce: [u8; 16]) -> Self {
        KeyMaterial { key, nonce }
    }
}

/// Context string for the program entry state.
pub fn entry_context(entry_addr: u32) -> Vec<u8> {
    [&entry_addr.to_le_bytes()[..], b"start"].concat()
}

/// Context string for the state a handler starts in.
pub fn handler_entry_context(vector: u32) -> Vec<u8> {
    [&vector.to_le_bytes()[..], b"entry"].concat()
}

/// Context string for the exit state `e` expected when a handler returns.
pub fn handler_exit_context(vector: u32) -> Vec<u8> {
    [&vector.to_le_bytes()[..], b"exit"].concat()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApeStep {
    pub plain: u32,
    pub redundancy: u64,
    /// Full output state; only its capacity is carried to the next step.
    pub state: SpongeState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DuplexStep {
    pub plain: u32,
    pub redundancy: u64,
    pub state: SpongeState,
}

/// Parameters bound to an instantiated permutation (and key, for PRINCE).
#[derive(Clone, Copy, Debug)]
pub struct Sponge {
    params: SpongeParams,
    perm: Permutation,
}

impl Sponge {
    pub fn new(params: SpongeParams, key: &[u8; 16]) -> Result<Self> {
        if let Err(d) = validate_params(&params) {
            return Err(Error::Config(d.join("; ")));
        }
        let perm = Permutation::new(&params.perm.with_key(*key))?;
        Ok(Sponge { params, perm })
    }

    pub fn params(&self) -> &SpongeParams {
        &self.params
    }

    pub fn mode(&self) -> Mode {
        self.params.mode
    }

    pub fn width(&self) -> usize {
        self.params.width()
    }

    pub fn rate(&self) -> usize {
        self.params.rate
    }

    pub fn scope(&self) -> PatchScope {
        PatchScope::for_mode(self.params.mode)
    }

    fn rate_mask(&self) -> u64 {
        if self.params.rate == 64 {
            u64::MAX
        } else {
            (1u64 << self.params.rate) - 1
        }
    }

    pub fn zero_state(&self) -> SpongeState {
        SpongeState::zero(self.width(), self.params.rate)
    }

    pub fn permute(&self, z: &SpongeState) -> SpongeState {
        SpongeState::new(self.perm.apply(z.bits()), self.params.rate)
    }

    pub fn permute_inverse(&self, z: &SpongeState) -> SpongeState {
        SpongeState::new(self.perm.apply_inverse(z.bits()), self.params.rate)
    }

    fn split(&self, rate: u64) -> (u32, u64) {
        (rate as u32, rate >> self.params.instr_bits)
    }

    fn patched(&self, z: &SpongeState, patch: Option<&PatchValue>) -> Result<SpongeState> {
        match patch {
            Some(p) => apply_patch_in_mode(z, p, self.params.mode),
            None => Ok(*z),
        }
    }

    /// Absorbs `N | k | context` in `floor(b/8)`-byte chunks, padded with
    /// `0x01` then zeros, permuting after each chunk.
    pub fn derive_initial_state(&self, km: &KeyMaterial, context: &[u8]) -> SpongeState {
        let mut msg = Vec::with_capacity(33 + context.len());
        msg.extend_from_slice(&km.nonce);
        msg.extend_from_slice(&km.key);
        msg.extend_from_slice(context);
        msg.push(0x01);
        let chunk = self.width() / 8;
        while msg.len() % chunk != 0 {
            msg.push(0);
        }
        let mut z = self.zero_state();
        for c in msg.chunks(chunk) {
            let mut bits = *z.bits();
            for (i, b) in c.iter().enumerate() {
                bits.set_bits(8 * i, 8, bits.get_bits(8 * i, 8) ^ *b as u64);
            }
            z = self.permute(&SpongeState::new(bits, self.params.rate));
        }
        z
    }

    /// Seed for [`Self::free_state`].
    pub fn prf_seed(&self, km: &KeyMaterial) -> SpongeState {
        self.derive_initial_state(km, b"prf")
    }

    /// Pseudorandom state bound to `(addr, tag)`, used where the linker is free
    /// to choose a state. The tag separates uses at the same address.
    pub fn free_state(&self, seed: &SpongeState, addr: u32, tag: u8) -> SpongeState {
        let mut bits = *seed.bits();
        let input = (addr as u64) | ((tag as u64) << 32);
        bits.set_bits(0, 40, bits.get_bits(0, 40) ^ input);
        self.permute(&SpongeState::new(bits, self.params.rate))
    }

    /// `(C | patched capacity)` is permuted; the output rate splits into
    /// plaintext and redundancy. `ciphertext` holds `r` bits.
    pub fn ape_decrypt_step(
        &self,
        z_in: &SpongeState,
        ciphertext: u64,
        patch: Option<&PatchValue>,
    ) -> Result<ApeStep> {
        let z = self.patched(z_in, patch)?;
        let out = self.permute(&z.with_rate_u64(ciphertext & self.rate_mask()));
        let (plain, redundancy) = self.split(out.rate_u64());
        Ok(ApeStep {
            plain,
            redundancy,
            state: out,
        })
    }

    /// Runs `f^-1` on `(plain | 0^n | capacity_after)`. Returns the
    /// ciphertext (`r` bits) and the capacity that must precede it.
    pub fn ape_encrypt_step_backward(
        &self,
        plain: u32,
        capacity_after: &StateBits,
    ) -> (u64, StateBits) {
        let z = self
            .zero_state()
            .with_rate_u64(plain as u64)
            .with_capacity(capacity_after);
        let before = self.permute_inverse(&z);
        (before.rate_u64(), before.capacity())
    }

    /// Keystream is the rate of the (patched) input state; the plaintext and
    /// redundancy are fed back before permuting.
    pub fn duplex_decrypt_step(
        &self,
        z_in: &SpongeState,
        ciphertext: u64,
        patch: Option<&PatchValue>,
    ) -> Result<DuplexStep> {
        let z = self.patched(z_in, patch)?;
        let fed = (ciphertext ^ z.rate_u64()) & self.rate_mask();
        let (plain, redundancy) = self.split(fed);
        Ok(DuplexStep {
            plain,
            redundancy,
            state: self.permute(&z.with_rate_u64(fed)),
        })
    }

    pub fn duplex_encrypt_step(
        &self,
        z_in: &SpongeState,
        plain: u32,
        patch: Option<&PatchValue>,
    ) -> Result<(u64, SpongeState)> {
        let z = self.patched(z_in, patch)?;
        let ciphertext = (plain as u64 ^ z.rate_u64()) & self.rate_mask();
        Ok((ciphertext, self.permute(&z.with_rate_u64(plain as u64))))
    }

    /// Mode-generic decryption step used by the simulator and verifier.
    /// Returns `(plain, redundancy, next state)`; in APE mode the next state
    /// carries only the capacity.
    pub fn decrypt_step(
        &self,
        z_in: &SpongeState,
        ciphertext: u64,
        patch: Option<&PatchValue>,
    ) -> Result<(u32, u64, SpongeState)> {
        match self.params.mode {
            Mode::Ape => {
                let s = self.ape_decrypt_step(z_in, ciphertext, patch)?;
                Ok((s.plain, s.redundancy, s.state.capacity_only()))
            }
            Mode::Duplex => {
                let s = self.duplex_decrypt_step(z_in, ciphertext, patch)?;
                Ok((s.plain, s.redundancy, s.state))
            }
        }
    }

    /// Canonical form of a chain state for this mode.
    pub fn canonical(&self, z: &SpongeState) -> SpongeState {
        match self.params.mode {
            Mode::Ape => z.capacity_only(),
            Mode::Duplex => *z,
        }
    }

    /// Patch joining `from` to `to` in this mode's scope (rates ignored in APE).
    pub fn patch_between(&self, from: &SpongeState, to: &SpongeState) -> PatchValue {
        match self.params.mode {
            Mode::Ape => PatchValue {
                scope: PatchScope::Capacity,
                bits: from.capacity().xor(&to.capacity()),
            },
            Mode::Duplex => PatchValue {
                scope: PatchScope::FullState,
                bits: from.bits().xor(to.bits()),
            },
        }
    }

    pub fn check_redundancy(&self, redundancy: u64) -> bool {
        check_redundancy(redundancy, self.params.redundancy)
    }
}
