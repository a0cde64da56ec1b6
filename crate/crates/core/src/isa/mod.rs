//! A toy 32-bit RISC ISA with protected control-flow instructions.
//!
//! Every word is little-endian with the opcode in bits `[31:24]`. Valid opcode
//! bytes are exactly those with `byte & 3 == 1`, so a uniformly random word is
//! invalid with probability 192/256.
//!
//! | form | fields |
//! |------|--------|
//! | R    | rd `[23:20]`, rs1 `[19:16]`, rs2 `[15:12]` |
//! | I    | rd `[23:20]`, rs1 `[19:16]`, imm16 `[15:0]` |
//! | B    | rs1 `[23:20]`, rs2 `[19:16]`, word offset `[15:0]` |
//! | J    | word offset `[23:0]` |
//! | JR   | rs `[23:20]` |

mod asm;
mod layout;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use asm::{assemble, disassemble_program, AsmOptions, AssembledProgram, Diagnostic};
pub use layout::{layout_rules, slot_words_for_bits, LayoutRule, SlotGroup};

/// Base address of the data section.
pub const DATA_BASE: u32 = 0x8000;
/// Default simulated memory size.
pub const MEMORY_SIZE: usize = 0x1_0000;

pub const LINK_REG: u8 = 14;
pub const STACK_REG: u8 = 13;

/// Fraction of opcode bytes that do not decode.
pub const P_INVALID: f64 = 192.0 / 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImmOp {
    Addi,
    Andi,
    Ori,
    Xori,
    Slti,
    Lui,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Cond {
    pub fn holds(self, a: u32, b: u32) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Lt => (a as i32) < (b as i32),
            Cond::Ge => (a as i32) >= (b as i32),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Alu { op: AluOp, rd: u8, rs1: u8, rs2: u8 },
    /// `imm` holds the raw 16-bit field; signedness depends on `op`.
    Imm { op: ImmOp, rd: u8, rs1: u8, imm: u16 },
    Lw { rd: u8, base: u8, imm: u16 },
    Sw { src: u8, base: u8, imm: u16 },
    /// `offset` is in bytes, relative to the branch's own address.
    Branch { cond: Cond, protected: bool, rs1: u8, rs2: u8, offset: i32 },
    Jmp { protected: bool, offset: i32 },
    Call { protected: bool, offset: i32 },
    CallR { protected: bool, rs: u8 },
    Ret,
    RetU,
    XRet,
    /// `alias` 0 is the canonical NOP; 1..=26 are reserved-valid aliases.
    Nop { alias: u8 },
    Halt,
    Iret,
}

/// Kind of a patch slot word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotKind {
    BranchTaken,
    CallReturn,
    ICallOut,
    ICallIn,
    FuncEntry,
    FuncExit,
    Entry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordKind {
    Instr,
    Slot(SlotKind),
    Data,
}

const NAMED: [&str; 38] = [
    "ADD", "SUB", "AND", "OR", "XOR", "SLL", "SRL", "SRA", "SLT", "SLTU", "ADDI", "ANDI", "ORI",
    "XORI", "SLTI", "LUI", "LW", "SW", "BEQ", "BNE", "BLT", "BGE", "JMP", "CALL", "CALLR", "RETU",
    "BPEQ", "BPNE", "BPLT", "BPGE", "JMPP", "CALLP", "CALLRP", "RET", "XRET", "NOP", "HALT",
    "IRET",
];
const NOP_INDEX: u8 = 35;
const FIRST_ALIAS: u8 = 38;
pub const NOP_ALIASES: u8 = 64 - FIRST_ALIAS;

fn opcode_byte(index: u8) -> u32 {
    ((index as u32) << 2) | 1
}

/// Index 0..64 of a valid opcode byte, `None` for the 192 invalid ones.
pub fn opcode_index(byte: u8) -> Option<u8> {
    (byte & 3 == 1).then_some(byte >> 2)
}

pub fn is_valid_opcode(byte: u8) -> bool {
    opcode_index(byte).is_some()
}

const ALU: [AluOp; 10] = [
    AluOp::Add,
    AluOp::Sub,
    AluOp::And,
    AluOp::Or,
    AluOp::Xor,
    AluOp::Sll,
    AluOp::Srl,
    AluOp::Sra,
    AluOp::Slt,
    AluOp::Sltu,
];
const IMM: [ImmOp; 6] = [
    ImmOp::Addi,
    ImmOp::Andi,
    ImmOp::Ori,
    ImmOp::Xori,
    ImmOp::Slti,
    ImmOp::Lui,
];
const CONDS: [Cond; 4] = [Cond::Eq, Cond::Ne, Cond::Lt, Cond::Ge];

fn sext(v: u32, bits: u32) -> i32 {
    ((v << (32 - bits)) as i32) >> (32 - bits)
}

impl ImmOp {
    pub fn sign_extends(self) -> bool {
        matches!(self, ImmOp::Addi | ImmOp::Slti)
    }
}

impl Instruction {
    pub fn opcode_index(&self) -> u8 {
        match *self {
            Instruction::Alu { op, .. } => ALU.iter().position(|o| *o == op).unwrap() as u8,
            Instruction::Imm { op, .. } => 10 + IMM.iter().position(|o| *o == op).unwrap() as u8,
            Instruction::Lw { .. } => 16,
            Instruction::Sw { .. } => 17,
            Instruction::Branch { cond, protected, .. } => {
                let c = CONDS.iter().position(|o| *o == cond).unwrap() as u8;
                if protected {
                    26 + c
                } else {
                    18 + c
                }
            }
            Instruction::Jmp { protected, .. } => {
                if protected {
                    30
                } else {
                    22
                }
            }
            Instruction::Call { protected, .. } => {
                if protected {
                    31
                } else {
                    23
                }
            }
            Instruction::CallR { protected, .. } => {
                if protected {
                    32
                } else {
                    24
                }
            }
            Instruction::RetU => 25,
            Instruction::Ret => 33,
            Instruction::XRet => 34,
            Instruction::Nop { alias: 0 } => NOP_INDEX,
            Instruction::Nop { alias } => FIRST_ALIAS + alias - 1,
            Instruction::Halt => 36,
            Instruction::Iret => 37,
        }
    }

    pub fn mnemonic(&self) -> String {
        match *self {
            Instruction::Nop { alias } if alias > 0 => format!("NOP.{alias}"),
            _ => NAMED[self.opcode_index() as usize].to_string(),
        }
    }

    /// Canonical encoding; unused fields are zero.
    pub fn encode(&self) -> u32 {
        let op = opcode_byte(self.opcode_index()) << 24;
        let r = |v: u8, shift: u32| ((v & 0xF) as u32) << shift;
        match *self {
            Instruction::Alu { rd, rs1, rs2, .. } => op | r(rd, 20) | r(rs1, 16) | r(rs2, 12),
            Instruction::Imm { rd, rs1, imm, .. } => op | r(rd, 20) | r(rs1, 16) | imm as u32,
            Instruction::Lw { rd, base, imm } => op | r(rd, 20) | r(base, 16) | imm as u32,
            Instruction::Sw { src, base, imm } => op | r(src, 20) | r(base, 16) | imm as u32,
            Instruction::Branch { rs1, rs2, offset, .. } => {
                op | r(rs1, 20) | r(rs2, 16) | ((offset / 4) as u32 & 0xFFFF)
            }
            Instruction::Jmp { offset, .. } | Instruction::Call { offset, .. } => {
                op | ((offset / 4) as u32 & 0xFF_FFFF)
            }
            Instruction::CallR { rs, .. } => op | r(rs, 20),
            _ => op,
        }
    }

    /// Decodes a word; `None` means INVALID.
    pub fn decode(word: u32) -> Option<Instruction> {
        let idx = opcode_index((word >> 24) as u8)?;
        let rd = ((word >> 20) & 0xF) as u8;
        let rs1 = ((word >> 16) & 0xF) as u8;
        let rs2 = ((word >> 12) & 0xF) as u8;
        let imm = word as u16;
        let boff = sext(word & 0xFFFF, 16) * 4;
        let joff = sext(word & 0xFF_FFFF, 24) * 4;
        Some(match idx {
            0..=9 => Instruction::Alu {
                op: ALU[idx as usize],
                rd,
                rs1,
                rs2,
            },
            10..=15 => Instruction::Imm {
                op: IMM[idx as usize - 10],
                rd,
                rs1,
                imm,
            },
            16 => Instruction::Lw { rd, base: rs1, imm },
            17 => Instruction::Sw {
                src: rd,
                base: rs1,
                imm,
            },
            18..=21 | 26..=29 => Instruction::Branch {
                cond: CONDS[(idx as usize - 18) % 8],
                protected: idx >= 26,
                rs1: rd,
                rs2: rs1,
                offset: boff,
            },
            22 | 30 => Instruction::Jmp {
                protected: idx == 30,
                offset: joff,
            },
            23 | 31 => Instruction::Call {
                protected: idx == 31,
                offset: joff,
            },
            24 | 32 => Instruction::CallR {
                protected: idx == 32,
                rs: rd,
            },
            25 => Instruction::RetU,
            33 => Instruction::Ret,
            34 => Instruction::XRet,
            35 => Instruction::Nop { alias: 0 },
            36 => Instruction::Halt,
            37 => Instruction::Iret,
            _ => Instruction::Nop {
                alias: idx - FIRST_ALIAS + 1,
            },
        })
    }

    pub fn is_control_flow(&self) -> bool {
        matches!(
            self,
            Instruction::Branch { .. }
                | Instruction::Jmp { .. }
                | Instruction::Call { .. }
                | Instruction::CallR { .. }
                | Instruction::Ret
                | Instruction::RetU
                | Instruction::XRet
                | Instruction::Halt
                | Instruction::Iret
        )
    }

    /// Slot groups (offset in words after the instruction, kind) in protected layout.
    pub fn trailing_slots(&self) -> &'static [SlotKind] {
        match self {
            Instruction::Branch { protected: true, .. } | Instruction::Jmp { protected: true, .. } => {
                &[SlotKind::BranchTaken]
            }
            Instruction::Call { protected: true, .. } => &[SlotKind::CallReturn],
            Instruction::CallR { protected: true, .. } => &[SlotKind::ICallOut, SlotKind::ICallIn],
            Instruction::XRet | Instruction::Iret => &[SlotKind::FuncExit],
            _ => &[],
        }
    }

    /// Size in words including trailing slots, for `k` words per slot group.
    /// `protected_layout` is false for plain images, where IRET carries no slots.
    pub fn size_words(&self, k: u32, protected_layout: bool) -> u32 {
        if !protected_layout {
            return 1;
        }
        1 + k * self.trailing_slots().len() as u32
    }
}

/// `disassemble(word)`: total decoding, `None` is INVALID.
pub fn disassemble(word: u32) -> Option<Instruction> {
    Instruction::decode(word)
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic();
        match *self {
            Instruction::Alu { rd, rs1, rs2, .. } => write!(f, "{m} r{rd}, r{rs1}, r{rs2}"),
            Instruction::Imm {
                op: ImmOp::Lui,
                rd,
                imm,
                ..
            } => write!(f, "{m} r{rd}, {imm:#x}"),
            Instruction::Imm { op, rd, rs1, imm } => {
                if op.sign_extends() {
                    write!(f, "{m} r{rd}, r{rs1}, {}", imm as i16)
                } else {
                    write!(f, "{m} r{rd}, r{rs1}, {imm:#x}")
                }
            }
            Instruction::Lw { rd, base, imm } => write!(f, "{m} r{rd}, {}(r{base})", imm as i16),
            Instruction::Sw { src, base, imm } => write!(f, "{m} r{src}, {}(r{base})", imm as i16),
            Instruction::Branch {
                rs1, rs2, offset, ..
            } => write!(f, "{m} r{rs1}, r{rs2}, {offset}"),
            Instruction::Jmp { offset, .. } | Instruction::Call { offset, .. } => {
                write!(f, "{m} {offset}")
            }
            Instruction::CallR { rs, .. } => write!(f, "{m} r{rs}"),
            _ => f.write_str(&m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exactly_64_of_256_opcode_bytes_are_valid() {
        let valid = (0..=255u8).filter(|b| is_valid_opcode(*b)).count();
        assert_eq!(valid, 64);
        assert!(disassemble(0xFF00_0000).is_none());
        assert!(disassemble(0).is_none());
    }

    #[test]
    fn every_valid_opcode_decodes_to_a_distinct_index() {
        let mut seen = std::collections::HashSet::new();
        for b in 0..=255u8 {
            if let Some(i) = Instruction::decode((b as u32) << 24) {
                assert_eq!(opcode_byte(i.opcode_index()), b as u32);
                assert!(seen.insert(i.opcode_index()));
            }
        }
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn addi_encoding() {
        let i = Instruction::Imm {
            op: ImmOp::Addi,
            rd: 1,
            rs1: 0,
            imm: 5,
        };
        let w = i.encode();
        assert_eq!(w >> 24, opcode_byte(10));
        assert_eq!(w & 0xFFFF, 5);
        assert_eq!((w >> 20) & 0xF, 1);
        assert_eq!(Instruction::decode(w), Some(i));
    }

    proptest! {
        #[test]
        fn canonical_reencode(word in any::<u32>()) {
            if let Some(i) = Instruction::decode(word) {
                let w = i.encode();
                prop_assert_eq!(Instruction::decode(w), Some(i));
                prop_assert_eq!(w >> 24, word >> 24);
            }
        }
    }
}
