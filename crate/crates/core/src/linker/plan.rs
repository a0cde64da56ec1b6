//! Patch placement: which slotted edges carry a real patch and which are
//! forced to a zero patch (spanning-tree edges).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::cfg::{ControlFlowGraph, EdgeKind, Node, Slot};
use crate::sponge::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Placement {
    Convention,
    SpanningTree,
}

impl std::str::FromStr for Placement {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "convention" => Ok(Placement::Convention),
            "spanning-tree" | "spanning_tree" | "tree" => Ok(Placement::SpanningTree),
            _ => Err(crate::Error::Config(format!("unknown placement `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PatchPlan {
    pub placement: Placement,
    /// Slotted edges whose patch the solver computes.
    pub required: BTreeSet<usize>,
    /// Slotted edges that must carry the state unchanged (zero patch).
    pub tree: BTreeSet<usize>,
    /// Cycle rank of the block graph the tree was built over.
    pub cycle_rank: Option<usize>,
    pub diagnostics: Vec<String>,
}

impl PatchPlan {
    /// Distinct code slot groups that carry a computed patch.
    pub fn patch_slots(&self, cfg: &ControlFlowGraph) -> BTreeSet<u32> {
        self.required
            .iter()
            .filter_map(|e| match cfg.edges[*e].slot {
                Some(Slot::Code(a)) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn patch_count(&self, cfg: &ControlFlowGraph) -> usize {
        self.patch_slots(cfg).len()
    }
}

fn is_code_slotted(cfg: &ControlFlowGraph, e: usize) -> bool {
    matches!(cfg.edges[e].slot, Some(Slot::Code(_)))
}

/// Every slotted edge carries its own patch.
pub fn place_patches_convention(cfg: &ControlFlowGraph) -> PatchPlan {
    PatchPlan {
        placement: Placement::Convention,
        required: (0..cfg.edges.len())
            .filter(|e| is_code_slotted(cfg, *e))
            .collect(),
        tree: BTreeSet::new(),
        cycle_rank: None,
        diagnostics: Vec::new(),
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Block-level edges considered by the spanning tree: direct intra-procedural
/// flow and direct calls, leaving a block's last instruction.
pub fn block_graph_edges(cfg: &ControlFlowGraph) -> Vec<(usize, usize, usize)> {
    let block_of: BTreeMap<u32, usize> = cfg
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(i, b)| b.instrs.iter().map(move |a| (*a, i)))
        .collect();
    cfg.edges
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            matches!(
                e.kind,
                EdgeKind::Fallthrough | EdgeKind::TakenBranch | EdgeKind::Jump | EdgeKind::Call
            )
        })
        .filter_map(|(i, e)| {
            let (s, d) = (e.src.addr()?, e.dst.addr()?);
            let (bs, bd) = (block_of[&s], block_of[&d]);
            let crosses = cfg.blocks[bs].last() == s && cfg.blocks[bd].start == d;
            crosses.then_some((i, bs, bd))
        })
        .collect()
}

/// `|E| - |V| + components` of the block graph.
pub fn cycle_rank(cfg: &ControlFlowGraph) -> usize {
    let edges = block_graph_edges(cfg);
    let mut uf = UnionFind((0..cfg.blocks.len()).collect());
    let mut merged = 0;
    for (_, a, b) in &edges {
        if uf.union(*a, *b) {
            merged += 1;
        }
    }
    edges.len() - merged
}

/// Patches only on edges outside a spanning tree of the block graph.
/// Edges the tree cannot cover (returns, indirect flow) follow the convention.
/// Tree edges that the mode cannot leave unpatched are moved back to the
/// required set, each with a diagnostic.
pub fn place_patches_spanning_tree(cfg: &ControlFlowGraph, mode: Mode) -> PatchPlan {
    let mut diagnostics = Vec::new();
    let graph = block_graph_edges(cfg);
    let in_graph: BTreeSet<usize> = graph.iter().map(|(e, _, _)| *e).collect();

    let unslotted = |e: usize| cfg.edges[e].slot.is_none();
    let has_unslotted_out = |n: Node| cfg.out_edges(n).any(|(_, e)| e.slot.is_none());
    let has_unslotted_in = |n: Node| cfg.in_edges(n).any(|(_, e)| e.slot.is_none());
    let mut order = graph.clone();
    order.sort_by_key(|(e, _, _)| {
        let edge = &cfg.edges[*e];
        let conflict = match mode {
            Mode::Ape => has_unslotted_out(edge.src),
            Mode::Duplex => has_unslotted_in(edge.dst),
        };
        (!unslotted(*e), conflict, *e)
    });

    let mut uf = UnionFind((0..cfg.blocks.len()).collect());
    let mut tree = BTreeSet::new();
    let mut non_tree = BTreeSet::new();
    for (e, a, b) in &order {
        if uf.union(*a, *b) {
            tree.insert(*e);
        } else {
            non_tree.insert(*e);
        }
    }
    let rank = non_tree.len();
    for e in &non_tree {
        if unslotted(*e) {
            let edge = &cfg.edges[*e];
            diagnostics.push(format!(
                "cycle through {:?} -> {:?} has no patch slot",
                edge.src, edge.dst
            ));
        }
    }

    let mut required: BTreeSet<usize> = non_tree.iter().copied().filter(|e| !unslotted(*e)).collect();
    let mut fallback = 0;
    for (i, e) in cfg.edges.iter().enumerate() {
        if matches!(e.slot, Some(Slot::Code(_))) && !in_graph.contains(&i) {
            required.insert(i);
            fallback += 1;
        }
    }
    if fallback > 0 {
        diagnostics.push(format!(
            "{fallback} return or indirect edges placed by convention"
        ));
    }

    // Mode feasibility: each node keeps at most one unchanged-state edge on
    // its forward (duplex: incoming, APE: outgoing) side.
    let mut zero: BTreeSet<usize> = tree.iter().copied().filter(|e| !unslotted(*e)).collect();
    let key = |e: usize| match mode {
        Mode::Ape => cfg.edges[e].src,
        Mode::Duplex => cfg.edges[e].dst,
    };
    let mut claimed: BTreeMap<Node, usize> = BTreeMap::new();
    for (i, e) in cfg.edges.iter().enumerate() {
        if e.slot.is_none() && e.is_internal() {
            claimed.entry(key(i)).or_insert(i);
        }
    }
    for e in zero.clone() {
        let n = key(e);
        if let Some(other) = claimed.get(&n) {
            if *other != e {
                zero.remove(&e);
                required.insert(e);
                diagnostics.push(format!(
                    "tree edge {:?} -> {:?} needs a patch in {mode} mode",
                    cfg.edges[e].src, cfg.edges[e].dst
                ));
                continue;
            }
        }
        claimed.insert(n, e);
    }

    PatchPlan {
        placement: Placement::SpanningTree,
        required,
        tree: zero,
        cycle_rank: Some(rank),
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{assemble, AsmOptions};
    use crate::linker::build_cfg;

    fn cfg(src: &str) -> ControlFlowGraph {
        build_cfg(&assemble(src, &AsmOptions::default()).unwrap()).unwrap()
    }

    const DIAMOND: &str = "
        main: BPEQ r1, r2, c
        b:    ADDI r3, r0, 1
              JMP d
        c:    ADDI r3, r0, 2
        d:    HALT
    ";

    #[test]
    fn diamond_needs_one_patch_either_way() {
        let c = cfg(DIAMOND);
        assert_eq!(place_patches_convention(&c).patch_count(&c), 1);
        let t = place_patches_spanning_tree(&c, Mode::Ape);
        assert_eq!(t.patch_count(&c), 1);
        assert_eq!(t.cycle_rank, Some(1));
    }

    #[test]
    fn tree_shaped_graph_needs_no_patch() {
        let c = cfg("main: BPEQ r1, r2, x\n HALT\nx: HALT");
        let t = place_patches_spanning_tree(&c, Mode::Duplex);
        assert_eq!(t.patch_count(&c), 0);
        assert!(t.diagnostics.is_empty());
    }

    #[test]
    fn single_loop_patches_the_back_edge() {
        let c = cfg("main: ADDI r1, r0, 3\nl: ADDI r1, r1, -1\n BPNE r1, r0, l\n HALT");
        let t = place_patches_spanning_tree(&c, Mode::Ape);
        assert_eq!(t.patch_count(&c), 1);
        let e = &c.edges[*t.required.iter().next().unwrap()];
        assert_eq!(e.kind, EdgeKind::TakenBranch);
    }

    #[test]
    fn patch_count_equals_cycle_rank_without_repairs() {
        let c = cfg("
            main: ADDI r1, r0, 3
            l:    BPEQ r1, r0, out
                  ADDI r1, r1, -1
                  JMPP l
            out:  HALT
        ");
        let t = place_patches_spanning_tree(&c, Mode::Duplex);
        assert_eq!(t.patch_count(&c), cycle_rank(&c));
        assert!(t.diagnostics.is_empty());

        // APE cannot leave the exit branch unpatched next to its fallthrough.
        let t = place_patches_spanning_tree(&c, Mode::Ape);
        assert_eq!(t.patch_count(&c), cycle_rank(&c) + 1);
        assert!(t.diagnostics.iter().any(|d| d.contains("needs a patch in ape mode")));
    }

    #[test]
    fn returns_fall_back_to_convention() {
        let c = cfg("main: CALLP f\n CALLP f\n HALT\nf: RET");
        let t = place_patches_spanning_tree(&c, Mode::Ape);
        assert_eq!(t.patch_count(&c), 2);
        assert!(!t.diagnostics.is_empty());
    }
}
