//! Instruction-level control-flow graph with virtual nodes for the program
//! entry, handler entries and exits, and the shared indirect-call state.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::isa::{AssembledProgram, Instruction, WordKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Node {
    Instr(u32),
    /// Program entry, state derived from key, nonce and entry address.
    Entry,
    /// Handler entry for the given vector.
    Handler(u32),
    /// The constant intermediate state all indirect calls and returns pass through.
    Intermediate,
    /// Required exit state `e` of the handler for the given vector.
    HandlerExit(u32),
}

impl Node {
    pub fn addr(&self) -> Option<u32> {
        match self {
            Node::Instr(a) => Some(*a),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EdgeKind {
    Fallthrough,
    TakenBranch,
    Jump,
    Call,
    Return,
    ICall,
    IReturn,
    Entry,
    InterruptExit,
}

/// Where an edge's patch lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Slot {
    /// `k` words starting at this code address.
    Code(u32),
    EntryHeader,
    HandlerHeader(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub src: Node,
    pub dst: Node,
    pub kind: EdgeKind,
    pub slot: Option<Slot>,
}

impl Edge {
    /// True for edges between two instructions, the only ones the solver may
    /// use to carry a state unchanged.
    pub fn is_internal(&self) -> bool {
        matches!((self.src, self.dst), (Node::Instr(_), Node::Instr(_)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BasicBlock {
    pub start: u32,
    /// Instruction addresses in execution order.
    pub instrs: Vec<u32>,
}

impl BasicBlock {
    pub fn last(&self) -> u32 {
        *self.instrs.last().expect("blocks are never empty")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Function {
    /// First instruction.
    pub entry: u32,
    /// Label address; precedes `entry` by the entry slots of indirect targets.
    pub head: u32,
    pub indirect: bool,
    pub handler: bool,
    pub call_sites: Vec<u32>,
    pub icall_sites: Vec<u32>,
    pub instrs: BTreeSet<u32>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlFlowGraph {
    pub slot_words: u32,
    pub protected: bool,
    pub entry: u32,
    pub handlers: Vec<u32>,
    pub instrs: BTreeMap<u32, Instruction>,
    pub edges: Vec<Edge>,
    pub blocks: Vec<BasicBlock>,
    /// Keyed by entry instruction.
    pub functions: BTreeMap<u32, Function>,
}

impl ControlFlowGraph {
    pub fn out_edges(&self, n: Node) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.src == n)
    }

    pub fn in_edges(&self, n: Node) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.dst == n)
    }

    pub fn block_of(&self, addr: u32) -> Option<usize> {
        self.blocks.iter().position(|b| b.instrs.contains(&addr))
    }

    /// Blocks with at least two incoming edges.
    pub fn merge_points(&self) -> Vec<u32> {
        let mut indeg: BTreeMap<u32, usize> = BTreeMap::new();
        for e in &self.edges {
            if let Node::Instr(d) = e.dst {
                if self.blocks.iter().any(|b| b.start == d) {
                    *indeg.entry(d).or_default() += 1;
                }
            }
        }
        indeg.into_iter().filter(|(_, n)| *n >= 2).map(|(a, _)| a).collect()
    }

    /// Distinct code slots referenced by edges.
    pub fn code_slots(&self) -> BTreeSet<u32> {
        self.edges
            .iter()
            .filter_map(|e| match e.slot {
                Some(Slot::Code(a)) => Some(a),
                _ => None,
            })
            .collect()
    }
}

fn cfg_err(addr: u32, msg: impl std::fmt::Display) -> Error {
    Error::Cfg(format!("{addr:#06x}: {msg}"))
}

fn target(a: u32, offset: i32) -> u32 {
    a.wrapping_add(offset as u32)
}

struct Builder<'a> {
    prog: &'a AssembledProgram,
    k: u32,
    protected: bool,
}

impl Builder<'_> {
    fn is_instr(&self, a: u32) -> bool {
        self.prog.kind_at(a) == Some(WordKind::Instr)
    }

    fn instr(&self, a: u32) -> Result<Instruction> {
        match self.prog.kind_at(a) {
            Some(WordKind::Instr) => Instruction::decode(self.prog.code[(a / 4) as usize])
                .ok_or_else(|| cfg_err(a, "invalid instruction word")),
            Some(_) => Err(cfg_err(a, "control reaches a slot or data word")),
            None => Err(cfg_err(a, "control leaves the code section")),
        }
    }

    fn indirect_entry(&self, head: u32) -> u32 {
        if self.protected {
            head + 4 * self.k
        } else {
            head
        }
    }

    /// Successors within the same function; calls continue at the return site.
    fn intra_successors(&self, a: u32, i: &Instruction) -> Vec<u32> {
        let k = if self.protected { self.k } else { 0 };
        match *i {
            Instruction::Branch {
                protected, offset, ..
            } => {
                let ft = if protected { a + 4 + 4 * k } else { a + 4 };
                vec![ft, target(a, offset)]
            }
            Instruction::Jmp { offset, .. } => vec![target(a, offset)],
            Instruction::Call { protected, .. } => {
                vec![if protected { a + 4 + 4 * k } else { a + 4 }]
            }
            Instruction::CallR { protected, .. } => {
                vec![if protected { a + 4 + 8 * k } else { a + 4 }]
            }
            Instruction::Ret
            | Instruction::RetU
            | Instruction::XRet
            | Instruction::Halt
            | Instruction::Iret => vec![],
            _ => vec![a + 4],
        }
    }
}

/// Builds the graph. Every instruction word is included, reachable or not.
pub fn build_cfg(prog: &AssembledProgram) -> Result<ControlFlowGraph> {
    let b = Builder {
        prog,
        k: prog.slot_words,
        protected: prog.protected,
    };
    let k = b.k;
    let instrs: BTreeMap<u32, Instruction> = prog
        .instruction_addrs()
        .map(|a| Ok((a, b.instr(a)?)))
        .collect::<Result<_>>()?;
    if !b.is_instr(prog.entry) {
        return Err(cfg_err(prog.entry, "program entry is not an instruction"));
    }
    let indirect_heads = prog.indirect_functions();

    // Function roots.
    let mut functions: BTreeMap<u32, Function> = BTreeMap::new();
    let root = |functions: &mut BTreeMap<u32, Function>, entry: u32, head: u32| {
        functions.entry(entry).or_insert_with(|| Function {
            entry,
            head,
            ..Default::default()
        });
    };
    root(&mut functions, prog.entry, prog.entry);
    for h in &prog.handlers {
        if !b.is_instr(*h) {
            return Err(cfg_err(*h, "handler vector is not an instruction"));
        }
        root(&mut functions, *h, *h);
        functions.get_mut(h).unwrap().handler = true;
    }
    for head in &indirect_heads {
        let entry = b.indirect_entry(*head);
        if !b.is_instr(entry) {
            return Err(cfg_err(*head, "indirect call target has no instruction"));
        }
        root(&mut functions, entry, *head);
        functions.get_mut(&entry).unwrap().indirect = true;
    }
    for (a, i) in &instrs {
        if let Instruction::Call { offset, .. } = i {
            let t = target(*a, *offset);
            if indirect_heads.contains(&t) && b.protected {
                return Err(cfg_err(
                    *a,
                    "direct call to an indirectly callable function; call it through CALLRP",
                ));
            }
            if !b.is_instr(t) {
                return Err(cfg_err(*a, format!("call target {t:#06x} is not an instruction")));
            }
            root(&mut functions, t, t);
            functions.get_mut(&t).unwrap().call_sites.push(*a);
        }
        if let Instruction::CallR { protected, .. } = i {
            if b.protected && !protected {
                return Err(cfg_err(*a, "unprotected indirect call in a protected program"));
            }
            let heads = prog
                .targets
                .get(a)
                .ok_or_else(|| cfg_err(*a, "indirect call without a .targets declaration"))?;
            for h in heads {
                let entry = b.indirect_entry(*h);
                root(&mut functions, entry, *h);
                functions.get_mut(&entry).unwrap().icall_sites.push(*a);
            }
        }
    }

    // Membership by intra-procedural reachability.
    let entries: Vec<u32> = functions.keys().copied().collect();
    let mut member_of: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for f in entries {
        let mut seen = BTreeSet::new();
        let mut stack = vec![f];
        while let Some(a) = stack.pop() {
            if !seen.insert(a) {
                continue;
            }
            let i = b.instr(a)?;
            for s in b.intra_successors(a, &i) {
                if !b.is_instr(s) {
                    return Err(cfg_err(a, format!("successor {s:#06x} is not an instruction")));
                }
                stack.push(s);
            }
        }
        for a in &seen {
            member_of.entry(*a).or_default().insert(f);
        }
        functions.get_mut(&f).unwrap().instrs = seen;
    }

    let mut edges = Vec::new();
    let mut push = |src, dst, kind, slot| {
        edges.push(Edge {
            src,
            dst,
            kind,
            slot,
        })
    };
    push(Node::Entry, Node::Instr(prog.entry), EdgeKind::Entry, Some(Slot::EntryHeader));
    for h in &prog.handlers {
        push(
            Node::Handler(*h),
            Node::Instr(*h),
            EdgeKind::Entry,
            Some(Slot::HandlerHeader(*h)),
        );
    }
    let owners = |a: u32| member_of.get(&a).cloned().unwrap_or_default();
    let mut icall_sites_seen = BTreeSet::new();
    for (&a, i) in &instrs {
        let ia = Node::Instr(a);
        let need = |t: u32| -> Result<Node> {
            if b.is_instr(t) {
                Ok(Node::Instr(t))
            } else {
                Err(cfg_err(a, format!("control target {t:#06x} is not an instruction")))
            }
        };
        match *i {
            Instruction::Branch {
                protected, offset, ..
            } => {
                let p = protected && b.protected;
                let ft = if protected { a + 4 + 4 * k } else { a + 4 };
                push(ia, need(ft)?, EdgeKind::Fallthrough, None);
                let slot = p.then_some(Slot::Code(a + 4));
                push(ia, need(target(a, offset))?, EdgeKind::TakenBranch, slot);
            }
            Instruction::Jmp { protected, offset } => {
                let slot = (protected && b.protected).then_some(Slot::Code(a + 4));
                push(ia, need(target(a, offset))?, EdgeKind::Jump, slot);
            }
            Instruction::Call { offset, .. } => {
                push(ia, need(target(a, offset))?, EdgeKind::Call, None);
            }
            Instruction::CallR { protected, .. } => {
                let heads = prog.targets.get(&a).cloned().unwrap_or_default();
                if protected && b.protected {
                    push(ia, Node::Intermediate, EdgeKind::ICall, Some(Slot::Code(a + 4)));
                    push(
                        Node::Intermediate,
                        need(a + 4 + 8 * k)?,
                        EdgeKind::IReturn,
                        Some(Slot::Code(a + 4 + 4 * k)),
                    );
                    for h in heads {
                        if icall_sites_seen.insert(h) {
                            push(
                                Node::Intermediate,
                                need(b.indirect_entry(h))?,
                                EdgeKind::ICall,
                                Some(Slot::Code(h)),
                            );
                        }
                    }
                } else {
                    for h in heads {
                        push(ia, need(h)?, EdgeKind::ICall, None);
                    }
                }
            }
            Instruction::Ret | Instruction::RetU => {
                for f in owners(a) {
                    let func = &functions[&f];
                    if func.indirect && b.protected {
                        return Err(cfg_err(a, "RET in an indirectly callable function; use XRET"));
                    }
                    for site in &func.call_sites {
                        let protected = matches!(
                            instrs[site],
                            Instruction::Call {
                                protected: true,
                                ..
                            }
                        ) && b.protected;
                        let (ret_site, slot) = if protected {
                            (site + 4 + 4 * k, Some(Slot::Code(site + 4)))
                        } else {
                            (site + 4, None)
                        };
                        push(ia, need(ret_site)?, EdgeKind::Return, slot);
                    }
                    if !func.icall_sites.is_empty() && !b.protected {
                        for site in &func.icall_sites {
                            push(ia, need(site + 4)?, EdgeKind::Return, None);
                        }
                    }
                }
            }
            Instruction::XRet => {
                if !b.protected {
                    continue;
                }
                for f in owners(a) {
                    if !functions[&f].indirect {
                        return Err(cfg_err(a, "XRET outside an indirectly callable function"));
                    }
                }
                push(ia, Node::Intermediate, EdgeKind::IReturn, Some(Slot::Code(a + 4)));
            }
            Instruction::Iret => {
                for f in owners(a) {
                    if functions[&f].handler {
                        let slot = b.protected.then_some(Slot::Code(a + 4));
                        push(ia, Node::HandlerExit(f), EdgeKind::InterruptExit, slot);
                    }
                }
            }
            Instruction::Halt => {}
            _ => push(ia, need(a + 4)?, EdgeKind::Fallthrough, None),
        }
    }

    // Blocks: split at leaders and after control flow.
    let mut leaders: BTreeSet<u32> = functions.keys().copied().collect();
    for e in &edges {
        if let Node::Instr(d) = e.dst {
            let ft_inside = e.kind == EdgeKind::Fallthrough
                && matches!(e.src, Node::Instr(s) if !instrs[&s].is_control_flow());
            if !ft_inside {
                leaders.insert(d);
            }
        }
    }
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut in_block = BTreeSet::new();
    for &a in instrs.keys() {
        if in_block.contains(&a) {
            continue;
        }
        let mut cur = BasicBlock {
            start: a,
            instrs: vec![],
        };
        let mut p = a;
        loop {
            cur.instrs.push(p);
            in_block.insert(p);
            if instrs[&p].is_control_flow() {
                break;
            }
            let n = p + 4;
            if !instrs.contains_key(&n) || leaders.contains(&n) {
                break;
            }
            p = n;
        }
        blocks.push(cur);
    }

    Ok(ControlFlowGraph {
        slot_words: k,
        protected: b.protected,
        entry: prog.entry,
        handlers: prog.handlers.clone(),
        instrs,
        edges,
        blocks,
        functions,
    })
}
