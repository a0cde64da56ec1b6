//! Cycle-counting simulator: fetch, sponge decryption, redundancy check,
//! decode, execute and patch absorption, with a single interrupt bank.

mod exec;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use exec::{execute, Control, Effect, Memory};
pub use metrics::{arch_equal, metrics, OverheadReport};

use crate::error::{Error, Result};
use crate::isa::{Instruction, DATA_BASE};
use crate::linker::{virtual_state, EncryptedImage, Node};
use crate::sponge::{apply_patch, combine_interrupt_exit, KeyMaterial, PatchValue, Sponge, SpongeState};

/// Upper bound of the region whose stores form the architectural trace.
pub const ARCH_LIMIT: u32 = 0xF000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Status {
    Halted,
    InvalidInstr,
    RedundancyFail,
    CycleLimit,
}

impl Status {
    pub fn is_detection(&self) -> bool {
        matches!(self, Status::InvalidInstr | Status::RedundancyFail)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Halted => "HALTED",
            Status::InvalidInstr => "INVALID_INSTR",
            Status::RedundancyFail => "REDUNDANCY_FAIL",
            Status::CycleLimit => "CYCLE_LIMIT",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub instructions: u64,
    pub patch_words: u64,
    pub cycles: u64,
    pub taken_branches: u64,
    pub calls: u64,
    pub interrupts: u64,
}

/// Observable program behavior: stores into the data region and the final
/// values of r1..r9.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct ArchTrace {
    pub stores: Vec<(u32, u32)>,
    pub regs: [u32; 9],
}

impl ArchTrace {
    /// FNV-1a over the trace.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u32| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (a, v) in &self.stores {
            eat(*a);
            eat(*v);
        }
        for r in &self.regs {
            eat(*r);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub pc: u32,
    /// Decrypted word.
    pub word: u32,
    pub valid: bool,
    pub patch_words: u32,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:#06x} {:#010x} {} {}",
            self.cycle, self.pc, self.word, self.valid as u8, self.patch_words
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub status: Status,
    pub detection_cycle: Option<u64>,
    pub metrics: Metrics,
    pub arch: ArchTrace,
    pub digest: u64,
    pub pc: u32,
}

impl Outcome {
    /// `key=value` summary block.
    pub fn summary(&self) -> String {
        let mut s = format!("status={}\n", self.status);
        if let Some(c) = self.detection_cycle {
            s += &format!("detection_cycle={c}\n");
        }
        s += &format!(
            "instructions={}\npatch_words={}\ncycles={}\ntaken_branches={}\ncalls={}\ninterrupts={}\ndigest={:016x}\n",
            self.metrics.instructions,
            self.metrics.patch_words,
            self.metrics.cycles,
            self.metrics.taken_branches,
            self.metrics.calls,
            self.metrics.interrupts,
            self.digest
        );
        s
    }
}

#[derive(Clone, Copy, Debug)]
struct Bank {
    pc: u32,
    z: SpongeState,
    vector: u32,
}

#[derive(Clone, Copy, Debug)]
struct HandlerStates {
    entry: SpongeState,
    exit: SpongeState,
}

/// Per-step information passed to hooks after the step.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub pc: u32,
    pub word: u32,
    pub valid: bool,
    pub skipped: bool,
    pub patch_words: u32,
    /// Decrypted redundancy bits; zero on a genuine fetch.
    pub redundancy: u64,
}

pub struct Machine {
    regs: [u32; 16],
    pc: u32,
    mem: Memory,
    img: EncryptedImage,
    sponge: Option<Sponge>,
    z: SpongeState,
    k: u32,
    handlers: BTreeMap<u32, HandlerStates>,
    bank: Option<Bank>,
    metrics: Metrics,
    status: Option<Status>,
    detection_cycle: Option<u64>,
    stores: Vec<(u32, u32)>,
    suppress_patch: bool,
}

impl Machine {
    /// Loads an image under the device key; the nonce comes from the image.
    /// Protected images start in the patched entry state.
    pub fn load(img: &EncryptedImage, key: &[u8; 16]) -> Result<Machine> {
        let km = &KeyMaterial::new(*key, img.nonce);
        let mut mem = Memory::new();
        mem.load_words(0, &img.code);
        mem.load_words(DATA_BASE, &img.data);
        let mut m = Machine {
            regs: [0; 16],
            pc: img.entry,
            mem,
            img: img.clone(),
            sponge: None,
            z: SpongeState::zero(0, 0),
            k: 0,
            handlers: BTreeMap::new(),
            bank: None,
            metrics: Metrics::default(),
            status: None,
            detection_cycle: None,
            stores: Vec::new(),
            suppress_patch: false,
        };
        if let Some(params) = img.params()? {
            let sp = Sponge::new(params, key)?;
            let enter = |node: Node, patch: &crate::bits::StateBits| {
                let z = virtual_state(&sp, km, img.entry, node).unwrap();
                sp.canonical(&SpongeState::new(z.bits().xor(patch), params.rate))
            };
            m.z = enter(Node::Entry, &img.entry_patch);
            for h in &img.handlers {
                m.handlers.insert(
                    h.vector,
                    HandlerStates {
                        entry: enter(Node::Handler(h.vector), &h.patch),
                        exit: virtual_state(&sp, km, img.entry, Node::HandlerExit(h.vector)).unwrap(),
                    },
                );
            }
            m.k = params.slot_words();
            m.sponge = Some(sp);
        } else {
            for h in &img.handlers {
                let z = SpongeState::zero(0, 0);
                m.handlers.insert(h.vector, HandlerStates { entry: z, exit: z });
            }
        }
        Ok(m)
    }

    pub fn is_protected(&self) -> bool {
        self.sponge.is_some()
    }

    pub fn pc(&self) -> u32 {
        self.pc
    }

    pub fn set_pc(&mut self, pc: u32) {
        self.pc = pc;
    }

    pub fn regs(&self) -> &[u32; 16] {
        &self.regs
    }

    pub fn regs_mut(&mut self) -> &mut [u32; 16] {
        &mut self.regs
    }

    pub fn memory(&self) -> &Memory {
        &self.mem
    }

    pub fn memory_mut(&mut self) -> &mut Memory {
        &mut self.mem
    }

    pub fn cycles(&self) -> u64 {
        self.metrics.cycles
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics
    }

    pub fn status(&self) -> Option<Status> {
        self.status
    }

    pub fn slot_words(&self) -> u32 {
        self.k
    }

    pub fn image(&self) -> &EncryptedImage {
        &self.img
    }

    /// Harness access to the sponge state, for fault injection. Simulated
    /// software has no equivalent.
    pub fn sponge_state(&self) -> &SpongeState {
        &self.z
    }

    pub fn set_sponge_state(&mut self, z: SpongeState) {
        self.z = z;
    }

    /// Flips bit `i` of the state; in APE mode `i` indexes the capacity.
    pub fn corrupt_state_bit(&mut self, i: usize) {
        let mut bits = *self.z.bits();
        let offset = match &self.sponge {
            Some(sp) if sp.mode() == crate::sponge::Mode::Ape => self.z.rate_bits(),
            _ => 0,
        };
        bits.flip_bit(offset + i);
        self.z = SpongeState::new(bits, self.z.rate_bits());
    }

    /// Flips bit `bit` of the `r`-bit ciphertext at `addr`: bits below 32 hit
    /// the code word, higher bits the tag section.
    pub fn flip_ciphertext_bit(&mut self, addr: u32, bit: usize) {
        if bit < 32 {
            let w = self.mem.read(addr);
            self.mem.write(addr, w ^ (1 << bit));
        } else if let Some(t) = self.img.tags.get_mut((addr / 4) as usize) {
            *t ^= 1 << (bit - 32);
        }
    }

    /// Drops the patch absorption of the next step that would absorb one.
    pub fn suppress_next_patch(&mut self) {
        self.suppress_patch = true;
    }

    pub fn in_interrupt(&self) -> bool {
        self.bank.is_some()
    }

    fn absorb(&mut self, at: u32) -> u32 {
        let Some(sp) = &self.sponge else { return 0 };
        let words: Vec<u32> = (0..self.k).map(|i| self.mem.read(at.wrapping_add(4 * i))).collect();
        let bits = sp.params().patch_bits();
        let p = PatchValue::from_words_lossy(sp.scope(), bits, &words);
        self.z = sp.canonical(&apply_patch(&self.z, &p).expect("patch width matches"));
        self.k
    }

    fn detect(&mut self, status: Status) {
        self.status = Some(status);
        self.detection_cycle = Some(self.metrics.cycles);
    }

    /// Advances the pc past one instruction without fetching or decrypting it.
    pub fn skip(&mut self) {
        self.pc = self.pc.wrapping_add(4);
    }

    /// One fetch-decrypt-execute step.
    pub fn step(&mut self) -> StepInfo {
        let pc = self.pc;
        let word = self.mem.read(pc);
        let (plain, redundancy) = match &self.sponge {
            Some(sp) => {
                let (p, red, next) = sp
                    .decrypt_step(&self.z, self.img.ciphertext_at(pc, word), None)
                    .expect("state matches the image parameters");
                self.z = next;
                (p, red)
            }
            None => (word, 0),
        };
        let redundancy_ok = self.sponge.as_ref().is_none_or(|sp| sp.check_redundancy(redundancy));
        self.metrics.cycles += 1;
        self.metrics.instructions += 1;
        let mut info = StepInfo {
            pc,
            word: plain,
            valid: false,
            skipped: false,
            patch_words: 0,
            redundancy,
        };
        if !redundancy_ok {
            self.detect(Status::RedundancyFail);
            return info;
        }
        let Some(instr) = Instruction::decode(plain) else {
            self.detect(Status::InvalidInstr);
            return info;
        };
        info.valid = true;
        let protected = self.is_protected();
        let fx = execute(&instr, pc, &mut self.regs, &mut self.mem, self.k, protected);
        if let Some((a, v)) = fx.store {
            if (DATA_BASE..ARCH_LIMIT).contains(&a) {
                self.stores.push((a, v));
            }
        }
        self.metrics.taken_branches += fx.taken as u64;
        self.metrics.calls += fx.call as u64;
        let suppress = !fx.absorb.is_empty() && std::mem::take(&mut self.suppress_patch);
        if !suppress {
            for at in &fx.absorb {
                info.patch_words += self.absorb(*at);
            }
        }
        self.metrics.patch_words += info.patch_words as u64;
        self.metrics.cycles += info.patch_words as u64;
        match fx.control {
            Control::Halt => self.status = Some(Status::Halted),
            Control::Iret => match self.bank.take() {
                Some(bank) => {
                    if let Some(sp) = &self.sponge {
                        let e = self.handlers[&bank.vector].exit;
                        self.z = sp.canonical(&combine_interrupt_exit(&self.z, &e, &bank.z));
                    }
                    self.pc = bank.pc;
                    return info;
                }
                None => {
                    info.valid = false;
                    self.detect(Status::InvalidInstr);
                    return info;
                }
            },
            Control::Next => {}
        }
        self.pc = fx.next_pc;
        info
    }

    /// Saves `(pc, state)` in the bank and enters the handler at `vector`.
    pub fn interrupt_enter(&mut self, vector: u32) -> Result<()> {
        if self.bank.is_some() {
            return Err(Error::Interrupt("nested interrupt: the state bank is occupied".into()));
        }
        let h = *self
            .handlers
            .get(&vector)
            .ok_or_else(|| Error::Interrupt(format!("no handler registered at {vector:#06x}")))?;
        self.bank = Some(Bank {
            pc: self.pc,
            z: self.z,
            vector,
        });
        self.z = h.entry;
        self.pc = vector;
        self.metrics.interrupts += 1;
        Ok(())
    }

    pub fn arch_trace(&self) -> ArchTrace {
        let mut regs = [0u32; 9];
        regs.copy_from_slice(&self.regs[1..10]);
        ArchTrace {
            stores: self.stores.clone(),
            regs,
        }
    }

    pub fn outcome(&self) -> Outcome {
        let arch = self.arch_trace();
        Outcome {
            status: self.status.unwrap_or(Status::CycleLimit),
            detection_cycle: self.detection_cycle,
            metrics: self.metrics,
            digest: arch.digest(),
            arch,
            pc: self.pc,
        }
    }
}

/// Harness callbacks around each step.
pub trait Hook {
    /// Return `false` to skip the instruction (pc advances by 4, nothing is
    /// fetched or decrypted).
    fn before_step(&mut self, _m: &mut Machine) -> bool {
        true
    }

    fn after_step(&mut self, _m: &mut Machine, _info: &StepInfo) {}
}

pub struct NoHook;

impl Hook for NoHook {}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub max_cycles: u64,
    /// `(cycle, vector)` events with strictly increasing cycles. An event is
    /// taken at the first step boundary at or after its cycle once the bank
    /// is free.
    pub schedule: Vec<(u64, u32)>,
    pub trace: bool,
}

impl RunConfig {
    pub fn new(max_cycles: u64) -> Self {
        RunConfig {
            max_cycles,
            ..Default::default()
        }
    }
}

pub struct RunResult {
    pub outcome: Outcome,
    pub trace: Vec<TraceRecord>,
}

/// Drives an already loaded machine to completion or the cycle limit.
pub fn run_machine(m: &mut Machine, cfg: &RunConfig, hook: &mut dyn Hook) -> Result<RunResult> {
    if cfg.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Interrupt("schedule cycles must be strictly increasing".into()));
    }
    let mut trace = Vec::new();
    let mut next_event = 0;
    while m.status.is_none() {
        if m.metrics.cycles >= cfg.max_cycles {
            m.status = Some(Status::CycleLimit);
            break;
        }
        if let Some((c, v)) = cfg.schedule.get(next_event) {
            if m.metrics.cycles >= *c && m.bank.is_none() {
                m.interrupt_enter(*v)?;
                next_event += 1;
            }
        }
        let cycle = m.metrics.cycles;
        let info = if hook.before_step(m) {
            m.step()
        } else {
            let pc = m.pc;
            m.skip();
            StepInfo {
                pc,
                word: 0,
                valid: true,
                skipped: true,
                patch_words: 0,
                redundancy: 0,
            }
        };
        if cfg.trace {
            trace.push(TraceRecord {
                cycle,
                pc: info.pc,
                word: info.word,
                valid: info.valid,
                patch_words: info.patch_words,
            });
        }
        hook.after_step(m, &info);
    }
    Ok(RunResult {
        outcome: m.outcome(),
        trace,
    })
}

/// Loads and runs an image.
pub fn run(
    img: &EncryptedImage,
    key: &[u8; 16],
    cfg: &RunConfig,
    hook: &mut dyn Hook,
) -> Result<RunResult> {
    let mut m = Machine::load(img, key)?;
    run_machine(&mut m, cfg, hook)
}
