//! Static re-simulation of an encrypted image. Walks every path from the
//! program entry and each handler with a bounded call stack, decrypting each
//! word with the state that actually reaches it and reading patches from the
//! image itself. Independent of the graph and solver used to build the image.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use super::cfg::Node;
use super::encrypt::virtual_state;
use super::image::{EncryptedImage, ImageMode};
use crate::error::{Error, Result};
use crate::isa::{AssembledProgram, Instruction, WordKind};
use crate::sponge::{KeyMaterial, PatchValue, Sponge, SpongeState};

const MAX_DEPTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum IssueKind {
    WrongPlaintext,
    Redundancy,
    MergeMismatch,
    ExitMismatch,
    BadControl,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub addr: u32,
    pub kind: IssueKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    pub issues: Vec<Issue>,
    pub visited: usize,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn addrs(&self) -> BTreeSet<u32> {
        self.issues.iter().map(|i| i.addr).collect()
    }

    pub fn has(&self, addr: u32, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.addr == addr && i.kind == kind)
    }
}

struct Item {
    pc: u32,
    z: SpongeState,
    stack: Vec<u32>,
    handler: Option<u32>,
}

pub fn verify_image(img: &EncryptedImage, prog: &AssembledProgram, km: &KeyMaterial) -> Result<VerifyReport> {
    let ImageMode::Protected(_) = img.mode else {
        return Err(Error::Config("plain images carry no sponge state to verify".into()));
    };
    let params = img.params()?.expect("protected image");
    let sp = Sponge::new(params, &km.key)?;
    let k = prog.slot_words;
    let scope = sp.scope();
    let patch_bits = params.patch_bits();

    let absorb = |z: &SpongeState, at: u32| -> SpongeState {
        let base = (at / 4) as usize;
        let words: Vec<u32> = (0..k as usize)
            .map(|i| img.code.get(base + i).copied().unwrap_or(0))
            .collect();
        let p = PatchValue::from_words_lossy(scope, patch_bits, &words);
        sp.canonical(&crate::sponge::apply_patch(z, &p).expect("patch width matches"))
    };
    let header = |node: Node, patch: &crate::bits::StateBits| {
        let z = virtual_state(&sp, km, img.entry, node).unwrap();
        sp.canonical(&SpongeState::new(z.bits().xor(patch), params.rate))
    };

    let mut report = VerifyReport::default();
    let mut issue = |addr: u32, kind: IssueKind, detail: String| {
        report.issues.push(Issue { addr, kind, detail });
    };
    let mut queue = VecDeque::new();
    queue.push_back(Item {
        pc: img.entry,
        z: header(Node::Entry, &img.entry_patch),
        stack: vec![],
        handler: None,
    });
    for h in &img.handlers {
        queue.push_back(Item {
            pc: h.vector,
            z: header(Node::Handler(h.vector), &h.patch),
            stack: vec![],
            handler: Some(h.vector),
        });
    }

    let mut first: BTreeMap<u32, SpongeState> = BTreeMap::new();
    let mut seen: BTreeSet<(u32, Vec<u32>, Option<u32>)> = BTreeSet::new();
    while let Some(Item {
        pc,
        z,
        mut stack,
        handler,
    }) = queue.pop_front()
    {
        if prog.kind_at(pc) != Some(WordKind::Instr) {
            issue(pc, IssueKind::BadControl, "control reaches a non-instruction word".into());
            continue;
        }
        match first.get(&pc) {
            Some(prev) if *prev != z => {
                issue(pc, IssueKind::MergeMismatch, "paths arrive with different states".into());
                continue;
            }
            Some(_) => {}
            None => {
                first.insert(pc, z);
            }
        }
        if !seen.insert((pc, stack.clone(), handler)) {
            continue;
        }
        report.visited += 1;

        let word = img.code[(pc / 4) as usize];
        let (plain, red, next) = sp.decrypt_step(&z, img.ciphertext_at(pc, word), None)?;
        let intended = prog.code[(pc / 4) as usize];
        if plain != intended {
            issue(
                pc,
                IssueKind::WrongPlaintext,
                format!("decrypts to {plain:#010x}, expected {intended:#010x}"),
            );
        }
        if !sp.check_redundancy(red) {
            issue(pc, IssueKind::Redundancy, format!("redundancy bits {red:#x}"));
        }
        let instr = Instruction::decode(intended).expect("program words decode");
        let mut go = |pc: u32, z: SpongeState, stack: Vec<u32>| {
            queue.push_back(Item {
                pc,
                z,
                stack,
                handler,
            })
        };
        match instr {
            Instruction::Branch {
                protected, offset, ..
            } => {
                if protected {
                    go(pc + 4 + 4 * k, next, stack.clone());
                    go(pc.wrapping_add(offset as u32), absorb(&next, pc + 4), stack);
                } else {
                    go(pc + 4, next, stack.clone());
                    go(pc.wrapping_add(offset as u32), next, stack);
                }
            }
            Instruction::Jmp { protected, offset } => {
                let z = if protected { absorb(&next, pc + 4) } else { next };
                go(pc.wrapping_add(offset as u32), z, stack);
            }
            Instruction::Call { offset, .. } => {
                if stack.len() >= MAX_DEPTH {
                    issue(pc, IssueKind::BadControl, "call depth limit".into());
                    continue;
                }
                stack.push(pc + 4);
                go(pc.wrapping_add(offset as u32), next, stack);
            }
            Instruction::CallR { protected, .. } => {
                if stack.len() >= MAX_DEPTH {
                    issue(pc, IssueKind::BadControl, "call depth limit".into());
                    continue;
                }
                let heads = prog.targets.get(&pc).cloned().unwrap_or_default();
                if protected {
                    let mid = absorb(&next, pc + 4);
                    let mut s = stack.clone();
                    s.push(pc + 4 + 4 * k);
                    for h in heads {
                        go(h + 4 * k, absorb(&mid, h), s.clone());
                    }
                } else {
                    stack.push(pc + 4);
                    for h in heads {
                        go(h, next, stack.clone());
                    }
                }
            }
            Instruction::Ret | Instruction::RetU | Instruction::XRet => {
                let z = if instr == Instruction::XRet {
                    absorb(&next, pc + 4)
                } else {
                    next
                };
                let Some(link) = stack.pop() else {
                    issue(pc, IssueKind::BadControl, "return without a caller".into());
                    continue;
                };
                if instr == Instruction::RetU {
                    go(link, z, stack);
                } else {
                    go(link + 4 * k, absorb(&z, link), stack);
                }
            }
            Instruction::Iret => {
                let Some(v) = handler else {
                    issue(pc, IssueKind::BadControl, "IRET outside a handler".into());
                    continue;
                };
                let z = absorb(&next, pc + 4);
                let e = virtual_state(&sp, km, img.entry, Node::HandlerExit(v)).unwrap();
                if z != e {
                    issue(pc, IssueKind::ExitMismatch, format!("handler {v:#06x} exits off its exit state"));
                }
            }
            Instruction::Halt => {}
            _ => go(pc + 4, next, stack),
        }
    }
    report.issues.sort_by_key(|i| (i.addr, i.kind));
    report.issues.dedup();
    Ok(report)
}
