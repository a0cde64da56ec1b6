//! Binary image format. All integers little-endian:
//!
//! ```text
//! "SCFP" | version u8 = 1 | mode u8 | perm u8 | r u16 | x u16 | n u8 | reserved u8
//! nonce [16] | entry_addr u32 | entry_patch [ceil((r+x)/8)]
//! code_len u32 | code | data_len u32 | data
//! handler_count u8 | { vector u32 | entry_patch [ceil((r+x)/8)] }*
//! tag_len u32 | tags            (only when n > 0)
//! ```
//!
//! The tag section packs the `n` redundancy bits of each code word's
//! ciphertext, LSB first, one group per code word.

use serde::Serialize;

use crate::bits::StateBits;
use crate::error::{Error, Result};
use crate::perm::{PermKind, PermSpec};
use crate::sponge::{Mode, SpongeParams};

pub const MAGIC: &[u8; 4] = b"SCFP";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ImageMode {
    Plain,
    Protected(Mode),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HandlerEntry {
    pub vector: u32,
    pub patch: StateBits,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EncryptedImage {
    pub mode: ImageMode,
    /// 0 = Keccak-p[200,12], 1 = Keccak-p[50,12], 2 = PRINCE.
    pub perm: u8,
    pub rate: u16,
    pub capacity: u16,
    pub redundancy: u8,
    pub nonce: [u8; 16],
    pub entry: u32,
    /// Full-state patch applied to the derived initial state.
    pub entry_patch: StateBits,
    pub code: Vec<u32>,
    /// Redundancy bits of each code word's ciphertext.
    pub tags: Vec<u64>,
    pub data: Vec<u32>,
    pub handlers: Vec<HandlerEntry>,
}

pub fn perm_code(spec: &PermSpec) -> Result<u8> {
    match (spec.kind, spec.width, spec.rounds) {
        (PermKind::KeccakP, 200, 12) => Ok(0),
        (PermKind::KeccakP, 50, 12) => Ok(1),
        (PermKind::Prince, 64, _) => Ok(2),
        _ => Err(Error::Config(format!(
            "{} has no image encoding",
            spec.name()
        ))),
    }
}

impl EncryptedImage {
    /// Unencrypted image of a plain program.
    pub fn plain(code: Vec<u32>, data: Vec<u32>, entry: u32, handlers: &[u32]) -> Self {
        EncryptedImage {
            mode: ImageMode::Plain,
            perm: 0,
            rate: 0,
            capacity: 0,
            redundancy: 0,
            nonce: [0; 16],
            entry,
            entry_patch: StateBits::zero(0),
            tags: vec![0; code.len()],
            code,
            data,
            handlers: handlers
                .iter()
                .map(|v| HandlerEntry {
                    vector: *v,
                    patch: StateBits::zero(0),
                })
                .collect(),
        }
    }

    pub fn is_plain(&self) -> bool {
        self.mode == ImageMode::Plain
    }

    pub fn width(&self) -> usize {
        self.rate as usize + self.capacity as usize
    }

    /// Sponge parameters recorded in the header; `None` for plain images.
    pub fn params(&self) -> Result<Option<SpongeParams>> {
        let ImageMode::Protected(mode) = self.mode else {
            return Ok(None);
        };
        let perm = match self.perm {
            0 => PermSpec::keccak(200, 12),
            1 => PermSpec::keccak(50, 12),
            2 => PermSpec::prince(None),
            p => return Err(Error::Config(format!("unknown permutation code {p}"))),
        };
        let x = self.capacity as usize;
        Ok(Some(SpongeParams {
            perm,
            rate: self.rate as usize,
            capacity: x,
            instr_bits: 32,
            redundancy: self.redundancy as usize,
            mode,
            security: (x / 2) as u32,
        }))
    }

    /// Ciphertext of the code word at `addr`, `r` bits; words outside the
    /// code section read from `memory` have no tag bits.
    pub fn ciphertext_at(&self, addr: u32, word: u32) -> u64 {
        let tag = self.tags.get((addr / 4) as usize).copied().unwrap_or(0);
        word as u64 | (tag << 32)
    }

    pub fn code_bytes(&self) -> usize {
        4 * self.code.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(match self.mode {
            ImageMode::Plain => 0,
            ImageMode::Protected(Mode::Ape) => 1,
            ImageMode::Protected(Mode::Duplex) => 2,
        });
        out.push(self.perm);
        out.extend_from_slice(&self.rate.to_le_bytes());
        out.extend_from_slice(&self.capacity.to_le_bytes());
        out.push(self.redundancy);
        out.push(0);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.extend_from_slice(&self.entry_patch.to_le_bytes());
        let words = |out: &mut Vec<u8>, ws: &[u32]| {
            out.extend_from_slice(&((4 * ws.len()) as u32).to_le_bytes());
            for w in ws {
                out.extend_from_slice(&w.to_le_bytes());
            }
        };
        words(&mut out, &self.code);
        words(&mut out, &self.data);
        out.push(self.handlers.len() as u8);
        for h in &self.handlers {
            out.extend_from_slice(&h.vector.to_le_bytes());
            out.extend_from_slice(&h.patch.to_le_bytes());
        }
        let n = self.redundancy as usize;
        if n > 0 {
            let mut packed = vec![0u8; (n * self.code.len()).div_ceil(8)];
            for (i, t) in self.tags.iter().enumerate() {
                for b in 0..n {
                    if (t >> b) & 1 == 1 {
                        let bit = i * n + b;
                        packed[bit / 8] |= 1 << (bit % 8);
                    }
                }
            }
            out.extend_from_slice(&(packed.len() as u32).to_le_bytes());
            out.extend_from_slice(&packed);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err(0, "bad magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(r.err(4, format!("unsupported version {version}")));
        }
        let mode = match r.u8()? {
            0 => ImageMode::Plain,
            1 => ImageMode::Protected(Mode::Ape),
            2 => ImageMode::Protected(Mode::Duplex),
            m => return Err(r.err(5, format!("unknown mode {m}"))),
        };
        let perm = r.u8()?;
        if perm > 2 {
            return Err(r.err(6, format!("unknown permutation {perm}")));
        }
        let rate = r.u16()?;
        let capacity = r.u16()?;
        let redundancy = r.u8()?;
        let _reserved = r.u8()?;
        let width = rate as usize + capacity as usize;
        if width > crate::bits::MAX_BITS || redundancy > 32 || rate > 64 {
            return Err(r.err(7, "sponge dimensions out of range"));
        }
        let nonce: [u8; 16] = r.take(16)?.try_into().unwrap();
        let entry = r.u32()?;
        let entry_patch = r.state(width)?;
        let code = r.words()?;
        let data = r.words()?;
        let count = r.u8()?;
        let mut handlers = Vec::new();
        for _ in 0..count {
            let vector = r.u32()?;
            let patch = r.state(width)?;
            handlers.push(HandlerEntry { vector, patch });
        }
        let n = redundancy as usize;
        let mut tags = vec![0u64; code.len()];
        if n > 0 {
            let at = r.pos;
            let len = r.u32()? as usize;
            if len != (n * code.len()).div_ceil(8) {
                return Err(r.err(at, "tag section length does not match code length"));
            }
            let packed = r.take(len)?;
            for (i, t) in tags.iter_mut().enumerate() {
                for b in 0..n {
                    let bit = i * n + b;
                    *t |= (((packed[bit / 8] >> (bit % 8)) & 1) as u64) << b;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        Ok(EncryptedImage {
            mode,
            perm,
            rate,
            capacity,
            redundancy,
            nonce,
            entry,
            entry_patch,
            code,
            tags,
            data,
            handlers,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Image {
            offset,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.pos, format!("truncated, needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn state(&mut self, width: usize) -> Result<StateBits> {
        let at = self.pos;
        let b = self.take(width.div_ceil(8))?;
        StateBits::from_le_bytes(width, b).map_err(|_| self.err(at, "patch has bits above the state width"))
    }

    fn words(&mut self) -> Result<Vec<u32>> {
        let at = self.pos;
        let len = self.u32()? as usize;
        if !len.is_multiple_of(4) {
            return Err(self.err(at, "section length is not a multiple of 4"));
        }
        Ok(self
            .take(len)?
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
