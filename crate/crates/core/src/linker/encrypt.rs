//! State assignment and patch solving.
//!
//! Each instruction `A` has an incoming state `in(A)` (after any patch on the
//! edge that reached it) and an outgoing state `out(A)`. An edge without a slot
//! needs `in(dst) == out(src)`; an edge with a slot gets the patch
//! `out(src) ^ in(dst)`. APE fixes `out(A)` and encrypts backward, so each
//! instruction may have one unpatched successor. Duplex fixes `in(A)` and
//! encrypts forward, so each instruction may have one unpatched predecessor.
//! Everything the constraints leave open is drawn from a keyed PRF.

use std::collections::{BTreeMap, BTreeSet};

use super::cfg::{ControlFlowGraph, Node, Slot};
use super::image::{perm_code, EncryptedImage, HandlerEntry, ImageMode};
use super::plan::PatchPlan;
use crate::bits::StateBits;
use crate::error::{Error, Result};
use crate::isa::{AssembledProgram, Instruction};
use crate::sponge::{
    entry_context, handler_entry_context, handler_exit_context, KeyMaterial, Mode, PatchValue,
    Sponge, SpongeParams, SpongeState,
};

const TAG_OUT: u8 = 1;
const TAG_IN: u8 = 2;
const TAG_RET: u8 = 3;
const TAG_INTERMEDIATE: u8 = 4;

/// Fixed states of the virtual nodes, shared by the linker, verifier and VM.
pub fn virtual_state(sp: &Sponge, km: &KeyMaterial, entry: u32, node: Node) -> Option<SpongeState> {
    let z = match node {
        Node::Instr(_) => return None,
        Node::Entry => sp.derive_initial_state(km, &entry_context(entry)),
        Node::Handler(v) => sp.derive_initial_state(km, &handler_entry_context(v)),
        Node::HandlerExit(v) => sp.derive_initial_state(km, &handler_exit_context(v)),
        Node::Intermediate => sp.free_state(&sp.prf_seed(km), u32::MAX, TAG_INTERMEDIATE),
    };
    Some(sp.canonical(&z))
}

struct Solver<'a> {
    sp: Sponge,
    seed: SpongeState,
    prog: &'a AssembledProgram,
    cfg: &'a ControlFlowGraph,
    /// APE: designated successor; duplex: designated predecessor.
    designated: BTreeMap<u32, u32>,
    owner: BTreeMap<u32, u32>,
    ins: BTreeMap<u32, SpongeState>,
    outs: BTreeMap<u32, SpongeState>,
    cipher: BTreeMap<u32, u64>,
}

impl Solver<'_> {
    fn plain(&self, a: u32) -> u32 {
        self.prog.code[(a / 4) as usize]
    }

    fn free(&self, a: u32, tag: u8) -> SpongeState {
        self.sp.canonical(&self.sp.free_state(&self.seed, a, tag))
    }

    fn designate(&mut self, plan: &PatchPlan) -> Result<()> {
        let mode = self.sp.mode();
        for (i, e) in self.cfg.edges.iter().enumerate() {
            if !e.is_internal() || (e.slot.is_some() && !plan.tree.contains(&i)) {
                continue;
            }
            let (s, d) = (e.src.addr().unwrap(), e.dst.addr().unwrap());
            let (key, val) = match mode {
                Mode::Ape => (s, d),
                Mode::Duplex => (d, s),
            };
            if let Some(prev) = self.designated.insert(key, val) {
                if prev != val {
                    let detail = match mode {
                        Mode::Ape => format!(
                            "successors {prev:#06x} and {val:#06x} both need the unpatched state"
                        ),
                        Mode::Duplex => format!(
                            "merge point reached unpatched from {prev:#06x} and {val:#06x}"
                        ),
                    };
                    return Err(Error::UnpatchableDivergence { addr: key, detail });
                }
            }
        }
        Ok(())
    }

    /// Follows designations from `start` and fills in states along the chain.
    fn resolve(&mut self, start: u32) -> Result<()> {
        let mut chain = Vec::new();
        let mut on_chain = BTreeSet::new();
        let mut a = start;
        let known = |s: &Self, a: u32| match s.sp.mode() {
            Mode::Ape => s.ins.contains_key(&a),
            Mode::Duplex => s.outs.contains_key(&a),
        };
        loop {
            if known(self, a) {
                break;
            }
            if !on_chain.insert(a) {
                return Err(Error::MissingPatchLocation {
                    addr: a,
                    detail: "cycle of unpatched edges; the loop needs a patch slot".into(),
                });
            }
            chain.push(a);
            match self.designated.get(&a) {
                Some(next) => a = *next,
                None => break,
            }
        }
        for a in chain.into_iter().rev() {
            match self.sp.mode() {
                Mode::Ape => {
                    let out = match self.designated.get(&a) {
                        Some(n) => self.ins[n],
                        None => self.free_out(a),
                    };
                    let (c, cap_in) = self.sp.ape_encrypt_step_backward(self.plain(a), &out.capacity());
                    self.cipher.insert(a, c);
                    self.outs.insert(a, out);
                    self.ins.insert(a, self.sp.zero_state().with_capacity(&cap_in));
                }
                Mode::Duplex => {
                    let z_in = match self.designated.get(&a) {
                        Some(p) => self.outs[p],
                        None => self.free(a, TAG_IN),
                    };
                    let (c, out) = self.sp.duplex_encrypt_step(&z_in, self.plain(a), None)?;
                    self.cipher.insert(a, c);
                    self.ins.insert(a, z_in);
                    self.outs.insert(a, out);
                }
            }
        }
        Ok(())
    }

    fn free_out(&self, a: u32) -> SpongeState {
        match self.cfg.instrs[&a] {
            // All returns of one function share the call sites' slots.
            Instruction::Ret | Instruction::RetU => {
                self.free(self.owner.get(&a).copied().unwrap_or(a), TAG_RET)
            }
            _ => self.free(a, TAG_OUT),
        }
    }
}

/// Encrypts `prog` under `params` and `km`, filling every patch slot.
pub fn encrypt_image(
    prog: &AssembledProgram,
    cfg: &ControlFlowGraph,
    plan: &PatchPlan,
    km: &KeyMaterial,
    params: &SpongeParams,
) -> Result<EncryptedImage> {
    let sp = Sponge::new(*params, &km.key)?;
    if !prog.protected {
        return Err(Error::Layout("program was assembled without protection".into()));
    }
    if prog.slot_words != params.slot_words() {
        return Err(Error::Layout(format!(
            "program has {}-word slots, {} mode with x={} needs {}",
            prog.slot_words,
            params.mode,
            params.capacity,
            params.slot_words()
        )));
    }
    let mut owner = BTreeMap::new();
    for (entry, f) in &cfg.functions {
        for a in &f.instrs {
            let o = owner.entry(*a).or_insert(*entry);
            *o = (*o).min(*entry);
        }
    }
    let mut s = Solver {
        sp,
        seed: sp.prf_seed(km),
        prog,
        cfg,
        designated: BTreeMap::new(),
        owner,
        ins: BTreeMap::new(),
        outs: BTreeMap::new(),
        cipher: BTreeMap::new(),
    };
    s.designate(plan)?;
    for a in cfg.instrs.keys() {
        s.resolve(*a)?;
    }

    let state_in = |n: Node| match n {
        Node::Instr(a) => s.ins[&a],
        v => virtual_state(&sp, km, prog.entry, v).unwrap(),
    };
    let state_out = |n: Node| match n {
        Node::Instr(a) => s.outs[&a],
        v => virtual_state(&sp, km, prog.entry, v).unwrap(),
    };

    let mut patches: BTreeMap<Slot, (PatchValue, usize)> = BTreeMap::new();
    for (i, e) in cfg.edges.iter().enumerate() {
        let p = sp.patch_between(&state_out(e.src), &state_in(e.dst));
        match e.slot {
            None => {
                if !p.is_zero() {
                    return Err(Error::MissingPatchLocation {
                        addr: e.src.addr().or(e.dst.addr()).unwrap_or(0),
                        detail: format!("{:?} edge {:?} -> {:?} has no slot", e.kind, e.src, e.dst),
                    });
                }
            }
            Some(slot) => {
                if let Some((prev, j)) = patches.get(&slot) {
                    if *prev != p {
                        let other = &cfg.edges[*j];
                        return Err(Error::UnpatchableDivergence {
                            addr: match slot {
                                Slot::Code(a) => a,
                                _ => 0,
                            },
                            detail: format!(
                                "slot shared by {:?} -> {:?} and {:?} -> {:?} needs two different patches",
                                other.src, other.dst, e.src, e.dst
                            ),
                        });
                    }
                } else {
                    patches.insert(slot, (p, i));
                }
            }
        }
    }

    let mut code = prog.code.clone();
    let mut tags = vec![0u64; code.len()];
    for (a, c) in &s.cipher {
        code[(a / 4) as usize] = *c as u32;
        tags[(a / 4) as usize] = c >> 32;
    }
    let full = |p: &PatchValue| match params.mode {
        Mode::Ape => *s.sp.zero_state().with_capacity(&p.bits).bits(),
        Mode::Duplex => p.bits,
    };
    let mut entry_patch = StateBits::zero(params.width());
    let mut handler_patches = BTreeMap::new();
    for (slot, (p, _)) in &patches {
        match slot {
            Slot::Code(a) => {
                for (i, w) in p.to_words().iter().enumerate() {
                    code[(a / 4) as usize + i] = *w;
                }
            }
            Slot::EntryHeader => entry_patch = full(p),
            Slot::HandlerHeader(v) => {
                handler_patches.insert(*v, full(p));
            }
        }
    }
    Ok(EncryptedImage {
        mode: ImageMode::Protected(params.mode),
        perm: perm_code(&params.perm)?,
        rate: params.rate as u16,
        capacity: params.capacity as u16,
        redundancy: params.redundancy as u8,
        nonce: km.nonce,
        entry: prog.entry,
        entry_patch,
        code,
        tags,
        data: prog.data.clone(),
        handlers: prog
            .handlers
            .iter()
            .map(|v| HandlerEntry {
                vector: *v,
                patch: handler_patches[v],
            })
            .collect(),
    })
}
