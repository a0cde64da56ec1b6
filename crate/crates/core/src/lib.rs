//! Sponge-based control-flow protection for a toy 32-bit ISA.

pub mod attacks;
pub mod bits;
pub mod error;
pub mod gen;
pub mod isa;
pub mod linker;
pub mod perm;
pub mod sponge;
pub mod vm;

pub use bits::StateBits;
pub use error::{Error, Result};
