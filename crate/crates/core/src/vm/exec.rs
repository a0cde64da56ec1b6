//! Architectural semantics. `execute` sees registers, memory and the pc only;
//! it has no path to the sponge state.

use crate::isa::{AluOp, ImmOp, Instruction, LINK_REG, MEMORY_SIZE};

pub struct Memory {
    bytes: Vec<u8>,
}

impl Memory {
    pub fn new() -> Self {
        Memory {
            bytes: vec![0; MEMORY_SIZE],
        }
    }

    fn index(addr: u32) -> usize {
        (addr as usize & (MEMORY_SIZE - 1)) & !3
    }

    pub fn read(&self, addr: u32) -> u32 {
        let i = Self::index(addr);
        u32::from_le_bytes(self.bytes[i..i + 4].try_into().unwrap())
    }

    pub fn write(&mut self, addr: u32, value: u32) {
        let i = Self::index(addr);
        self.bytes[i..i + 4].copy_from_slice(&value.to_le_bytes());
    }

    pub fn load_words(&mut self, base: u32, words: &[u32]) {
        for (i, w) in words.iter().enumerate() {
            self.write(base + 4 * i as u32, *w);
        }
    }
}

impl Default for Memory {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Next,
    Halt,
    /// Return from interrupt; exit slots (if any) are listed in `absorb`.
    Iret,
}

/// What the instruction asks of the fetch stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Effect {
    pub next_pc: u32,
    /// Addresses of slot groups to absorb, in order.
    pub absorb: Vec<u32>,
    pub control: Control,
    pub store: Option<(u32, u32)>,
    pub taken: bool,
    pub call: bool,
}

fn sext16(v: u16) -> u32 {
    v as i16 as i32 as u32
}

fn alu(op: AluOp, a: u32, b: u32) -> u32 {
    match op {
        AluOp::Add => a.wrapping_add(b),
        AluOp::Sub => a.wrapping_sub(b),
        AluOp::And => a & b,
        AluOp::Or => a | b,
        AluOp::Xor => a ^ b,
        AluOp::Sll => a << (b & 31),
        AluOp::Srl => a >> (b & 31),
        AluOp::Sra => ((a as i32) >> (b & 31)) as u32,
        AluOp::Slt => ((a as i32) < (b as i32)) as u32,
        AluOp::Sltu => (a < b) as u32,
    }
}

/// Executes one instruction at `pc`. `k` is the slot group size; in plain
/// images (`protected == false`) protected forms behave like their plain twins.
pub fn execute(
    instr: &Instruction,
    pc: u32,
    regs: &mut [u32; 16],
    mem: &mut Memory,
    k: u32,
    protected: bool,
) -> Effect {
    let k4 = if protected { 4 * k } else { 0 };
    let mut fx = Effect {
        next_pc: pc.wrapping_add(4),
        absorb: Vec::new(),
        control: Control::Next,
        store: None,
        taken: false,
        call: false,
    };
    let set = |regs: &mut [u32; 16], r: u8, v: u32| {
        if r != 0 {
            regs[r as usize] = v;
        }
    };
    let rel = |off: i32| pc.wrapping_add(off as u32);
    match *instr {
        Instruction::Alu { op, rd, rs1, rs2 } => {
            let v = alu(op, regs[rs1 as usize], regs[rs2 as usize]);
            set(regs, rd, v);
        }
        Instruction::Imm { op, rd, rs1, imm } => {
            let a = regs[rs1 as usize];
            let v = match op {
                ImmOp::Addi => a.wrapping_add(sext16(imm)),
                ImmOp::Andi => a & imm as u32,
                ImmOp::Ori => a | imm as u32,
                ImmOp::Xori => a ^ imm as u32,
                ImmOp::Slti => ((a as i32) < (sext16(imm) as i32)) as u32,
                ImmOp::Lui => (imm as u32) << 16,
            };
            set(regs, rd, v);
        }
        Instruction::Lw { rd, base, imm } => {
            let v = mem.read(regs[base as usize].wrapping_add(sext16(imm)));
            set(regs, rd, v);
        }
        Instruction::Sw { src, base, imm } => {
            let addr = regs[base as usize].wrapping_add(sext16(imm)) & !3 & (MEMORY_SIZE as u32 - 1);
            mem.write(addr, regs[src as usize]);
            fx.store = Some((addr, regs[src as usize]));
        }
        Instruction::Branch {
            cond,
            protected: p,
            rs1,
            rs2,
            offset,
        } => {
            let slots = p && protected;
            if cond.holds(regs[rs1 as usize], regs[rs2 as usize]) {
                fx.taken = true;
                fx.next_pc = rel(offset);
                if slots {
                    fx.absorb.push(pc + 4);
                }
            } else if slots {
                fx.next_pc = pc + 4 + k4;
            }
        }
        Instruction::Jmp { protected: p, offset } => {
            fx.taken = true;
            fx.next_pc = rel(offset);
            if p && protected {
                fx.absorb.push(pc + 4);
            }
        }
        Instruction::Call { offset, .. } => {
            fx.call = true;
            set(regs, LINK_REG, pc + 4);
            fx.next_pc = rel(offset);
        }
        Instruction::CallR { protected: p, rs } => {
            fx.call = true;
            let t = regs[rs as usize];
            if p && protected {
                set(regs, LINK_REG, pc + 4 + k4);
                fx.absorb.push(pc + 4);
                fx.absorb.push(t);
                fx.next_pc = t.wrapping_add(k4);
            } else {
                set(regs, LINK_REG, pc + 4);
                fx.next_pc = t;
            }
        }
        Instruction::Ret => {
            let link = regs[LINK_REG as usize];
            if protected {
                fx.absorb.push(link);
            }
            fx.next_pc = link.wrapping_add(k4);
        }
        Instruction::RetU => fx.next_pc = regs[LINK_REG as usize],
        Instruction::XRet => {
            let link = regs[LINK_REG as usize];
            if protected {
                fx.absorb.push(pc + 4);
                fx.absorb.push(link);
            }
            fx.next_pc = link.wrapping_add(k4);
        }
        Instruction::Nop { .. } => {}
        Instruction::Halt => {
            fx.control = Control::Halt;
            fx.next_pc = pc;
        }
        Instruction::Iret => {
            fx.control = Control::Iret;
            if protected {
                fx.absorb.push(pc + 4);
            }
        }
    }
    fx
}
