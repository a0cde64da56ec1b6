use serde::Serialize;

use super::SlotKind;

/// Patch words needed to hold `bits` patch bits.
pub fn slot_words_for_bits(bits: usize) -> u32 {
    bits.div_ceil(32) as u32
}

/// A run of `words` patch words at `offset` bytes from the owning instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SlotGroup {
    pub offset: u32,
    pub words: u32,
    pub kind: SlotKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayoutRule {
    pub mnemonics: &'static [&'static str],
    /// Slots stored after the instruction.
    pub slots: Vec<SlotGroup>,
    /// Slot groups stored at the head of the callee (indirect targets only).
    pub callee_slots: Vec<SlotGroup>,
    pub absorbs: &'static str,
    pub next_pc: &'static str,
}

/// Placement and absorption rules for protected control flow with `k` words per slot group.
pub fn layout_rules(k: u32) -> Vec<LayoutRule> {
    let group = |offset, kind| SlotGroup {
        offset,
        words: k,
        kind,
    };
    vec![
        LayoutRule {
            mnemonics: &["BPEQ", "BPNE", "BPLT", "BPGE"],
            slots: vec![group(4, SlotKind::BranchTaken)],
            callee_slots: vec![],
            absorbs: "taken: slots at A+4; not taken: nothing",
            next_pc: "taken: A + offset; not taken: A + 4 + 4k",
        },
        LayoutRule {
            mnemonics: &["JMPP"],
            slots: vec![group(4, SlotKind::BranchTaken)],
            callee_slots: vec![],
            absorbs: "always: slots at A+4",
            next_pc: "A + offset",
        },
        LayoutRule {
            mnemonics: &["CALLP"],
            slots: vec![group(4, SlotKind::CallReturn)],
            callee_slots: vec![],
            absorbs: "nothing at the call; the return site slots are absorbed by RET",
            next_pc: "A + offset, r14 := A + 4",
        },
        LayoutRule {
            mnemonics: &["RET"],
            slots: vec![],
            callee_slots: vec![],
            absorbs: "k words at r14",
            next_pc: "r14 + 4k",
        },
        LayoutRule {
            mnemonics: &["CALLRP"],
            slots: vec![
                group(4, SlotKind::ICallOut),
                group(4 + 4 * k, SlotKind::ICallIn),
            ],
            callee_slots: vec![group(0, SlotKind::FuncEntry)],
            absorbs: "outgoing site slots at A+4, then the callee's entry slots at rs",
            next_pc: "rs + 4k, r14 := A + 4 + 4k",
        },
        LayoutRule {
            mnemonics: &["XRET"],
            slots: vec![group(4, SlotKind::FuncExit)],
            callee_slots: vec![],
            absorbs: "exit slots at B+4, then k words at r14",
            next_pc: "r14 + 4k",
        },
        LayoutRule {
            mnemonics: &["IRET"],
            slots: vec![group(4, SlotKind::FuncExit)],
            callee_slots: vec![],
            absorbs: "exit slots at B+4, then the banked state is recombined",
            next_pc: "banked pc",
        },
    ]
}
