//! Two-pass assembler and program-level disassembler.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    opcode_byte, ImmOp, Instruction, SlotKind, WordKind, DATA_BASE, FIRST_ALIAS, NAMED,
    NOP_ALIASES,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmOptions {
    /// Words per patch slot group (`k`).
    pub slot_words: u32,
    /// Emit protected control flow with slots; `false` lowers to plain forms.
    pub protected: bool,
}

impl Default for AsmOptions {
    fn default() -> Self {
        AsmOptions {
            slot_words: 1,
            protected: true,
        }
    }
}

/// Output of the assembler. Code lives at address 0, data at [`DATA_BASE`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledProgram {
    pub protected: bool,
    pub slot_words: u32,
    pub code: Vec<u32>,
    pub kinds: Vec<WordKind>,
    pub lines: Vec<usize>,
    pub data: Vec<u32>,
    pub symbols: BTreeMap<String, u32>,
    pub globals: Vec<String>,
    pub entry: u32,
    pub handlers: Vec<u32>,
    /// Indirect call site address → addresses of its permitted targets.
    pub targets: BTreeMap<u32, Vec<u32>>,
}

impl AssembledProgram {
    pub fn code_bytes(&self) -> usize {
        self.code.len() * 4
    }

    pub fn word_at(&self, addr: u32) -> Option<u32> {
        self.code.get((addr / 4) as usize).copied()
    }

    pub fn kind_at(&self, addr: u32) -> Option<WordKind> {
        self.kinds.get((addr / 4) as usize).copied()
    }

    /// Decoded instruction at `addr`, if that word is an instruction.
    pub fn instr_at(&self, addr: u32) -> Option<Instruction> {
        match self.kind_at(addr)? {
            WordKind::Instr => Instruction::decode(self.word_at(addr)?),
            _ => None,
        }
    }

    /// Word index → slot kind.
    pub fn slots(&self) -> BTreeMap<usize, SlotKind> {
        self.kinds
            .iter()
            .enumerate()
            .filter_map(|(i, k)| match k {
                WordKind::Slot(s) => Some((i, *s)),
                _ => None,
            })
            .collect()
    }

    pub fn patch_words(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| matches!(k, WordKind::Slot(_)))
            .count()
    }

    pub fn instruction_addrs(&self) -> impl Iterator<Item = u32> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == WordKind::Instr)
            .map(|(i, _)| (i * 4) as u32)
    }

    /// Addresses of all functions that appear in some indirect target set.
    pub fn indirect_functions(&self) -> BTreeSet<u32> {
        self.targets.values().flatten().copied().collect()
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

enum ItemKind {
    Instr { index: u8, ops: Vec<String> },
    Word(String),
    Zero(u32),
    EntrySlots,
}

struct Item {
    line: usize,
    section: Section,
    addr: u32,
    kind: ItemKind,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_number(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_reg(s: &str) -> Option<u8> {
    let s = s.trim().to_ascii_lowercase();
    match s.as_str() {
        "sp" => return Some(13),
        "lr" => return Some(14),
        _ => {}
    }
    let n: u8 = s.strip_prefix('r')?.parse().ok()?;
    (n < 16).then_some(n)
}

/// Maps a mnemonic to its opcode index, lowering protected forms for plain builds.
fn mnemonic_index(m: &str, protected: bool) -> Option<u8> {
    let upper = m.to_ascii_uppercase();
    if let Some(n) = upper.strip_prefix("NOP.") {
        let n: u8 = n.parse().ok()?;
        return (1..=NOP_ALIASES).contains(&n).then(|| FIRST_ALIAS + n - 1);
    }
    let lowered = if protected {
        upper.as_str()
    } else {
        match upper.as_str() {
            "BPEQ" => "BEQ",
            "BPNE" => "BNE",
            "BPLT" => "BLT",
            "BPGE" => "BGE",
            "JMPP" => "JMP",
            "CALLP" => "CALL",
            "CALLRP" => "CALLR",
            "RET" | "XRET" => "RETU",
            other => other,
        }
    };
    NAMED.iter().position(|n| *n == lowered).map(|i| i as u8)
}

fn template(index: u8) -> Instruction {
    Instruction::decode(opcode_byte(index) << 24).expect("valid opcode index")
}

struct Assembler {
    opts: AsmOptions,
    diags: Vec<Diagnostic>,
}

impl Assembler {
    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn run(&mut self, src: &str) -> Option<AssembledProgram> {
        let k = self.opts.slot_words;
        let protected = self.opts.protected;

        // Indirect targets must be known before layout, since protected builds
        // place entry slots in front of them.
        let mut target_decls: Vec<(usize, String, Vec<String>)> = Vec::new();
        for (n, raw) in src.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if let Some(rest) = line.strip_prefix(".targets") {
                match rest.split_once(':') {
                    Some((site, list)) => {
                        let fns: Vec<String> = list
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect();
                        target_decls.push((n + 1, site.trim().to_string(), fns));
                    }
                    None => self.err(n + 1, ".targets expects `site: f1, f2, ...`"),
                }
            }
        }
        let indirect: BTreeSet<&str> = target_decls
            .iter()
            .flat_map(|(_, _, f)| f.iter().map(|s| s.as_str()))
            .collect();

        // pass 1: layout
        let mut items: Vec<Item> = Vec::new();
        let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
        let mut symbol_lines: BTreeMap<String, usize> = BTreeMap::new();
        let mut section = Section::Text;
        let mut text_addr = 0u32;
        let mut data_addr = DATA_BASE;
        let mut entry_label: Option<(usize, String)> = None;
        let mut handler_labels: Vec<(usize, String)> = Vec::new();
        let mut globals = Vec::new();

        for (n, raw) in src.lines().enumerate() {
            let line_no = n + 1;
            let mut line = strip_comment(raw).trim();
            let mut labels = Vec::new();
            while !line.starts_with('.') {
                let Some((head, rest)) = line.split_once(':') else {
                    break;
                };
                let head = head.trim();
                if !is_ident(head) {
                    break;
                }
                labels.push(head.to_string());
                line = rest.trim();
            }
            let cur = match section {
                Section::Text => text_addr,
                Section::Data => data_addr,
            };
            let mut needs_entry_slots = false;
            for l in &labels {
                if symbols.insert(l.clone(), cur).is_some() {
                    self.err(
                        line_no,
                        format!("label `{l}` redefined (first at line {})", symbol_lines[l]),
                    );
                }
                symbol_lines.insert(l.clone(), line_no);
                if indirect.contains(l.as_str()) {
                    needs_entry_slots = true;
                }
            }
            if needs_entry_slots && protected && section == Section::Text {
                items.push(Item {
                    line: line_no,
                    section,
                    addr: text_addr,
                    kind: ItemKind::EntrySlots,
                });
                text_addr += 4 * k;
            }
            if line.is_empty() {
                continue;
            }
            let (head, rest) = match line.find(char::is_whitespace) {
                Some(i) => (&line[..i], line[i..].trim()),
                None => (line, ""),
            };
            let ops: Vec<String> = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(|s| s.trim().to_string()).collect()
            };
            let addr = match section {
                Section::Text => text_addr,
                Section::Data => data_addr,
            };
            let mut advance = 0u32;
            match head.to_ascii_lowercase().as_str() {
                ".text" => section = Section::Text,
                ".data" => section = Section::Data,
                ".targets" => {}
                ".global" | ".globl" => globals.extend(ops.iter().cloned()),
                ".entry" => entry_label = Some((line_no, rest.to_string())),
                ".handler" => handler_labels.push((line_no, rest.to_string())),
                ".word" => {
                    if ops.is_empty() || ops.iter().any(|o| o.is_empty()) {
                        self.err(line_no, ".word expects a comma-separated list of values");
                    }
                    for (i, op) in ops.iter().enumerate() {
                        items.push(Item {
                            line: line_no,
                            section,
                            addr: addr + 4 * i as u32,
                            kind: ItemKind::Word(op.clone()),
                        });
                    }
                    advance = 4 * ops.len() as u32;
                }
                ".zero" => match ops.first().and_then(|s| parse_number(s)) {
                    Some(count) if (0..=0x4000).contains(&count) => {
                        items.push(Item {
                            line: line_no,
                            section,
                            addr,
                            kind: ItemKind::Zero(count as u32),
                        });
                        advance = 4 * count as u32;
                    }
                    _ => self.err(line_no, ".zero expects a word count"),
                },
                d if d.starts_with('.') => self.err(line_no, format!("unknown directive `{head}`")),
                _ => match mnemonic_index(head, protected) {
                    Some(index) => {
                        if section == Section::Data {
                            self.err(line_no, "instruction in .data section");
                        }
                        advance = 4 * template(index).size_words(k, protected);
                        items.push(Item {
                            line: line_no,
                            section,
                            addr,
                            kind: ItemKind::Instr { index, ops },
                        });
                    }
                    None => {
                        self.err(line_no, format!("unknown mnemonic `{head}`"));
                        advance = 4;
                    }
                },
            }
            match section {
                Section::Text => text_addr += advance,
                Section::Data => data_addr += advance,
            }
        }
        if text_addr > DATA_BASE {
            self.err(0, format!("code section of {text_addr} bytes overlaps data at {DATA_BASE:#x}"));
        }

        // pass 2: encode
        let text_words = (text_addr / 4) as usize;
        let mut code = vec![0u32; text_words];
        let mut kinds = vec![WordKind::Data; text_words];
        let mut lines = vec![0usize; text_words];
        let mut data = vec![0u32; ((data_addr - DATA_BASE) / 4) as usize];

        for item in &items {
            let ctx = Ctx {
                symbols: &symbols,
                line: item.line,
            };
            match &item.kind {
                ItemKind::EntrySlots => {
                    let base = (item.addr / 4) as usize;
                    for i in 0..k as usize {
                        kinds[base + i] = WordKind::Slot(SlotKind::FuncEntry);
                        lines[base + i] = item.line;
                    }
                }
                ItemKind::Word(expr) => match ctx.value(expr) {
                    Ok(v) => {
                        if !(-(1i64 << 31)..(1i64 << 32)).contains(&v) {
                            self.err(item.line, format!("value {v} does not fit in 32 bits"));
                        }
                        self.store(item, v as u32, &mut code, &mut kinds, &mut lines, &mut data);
                    }
                    Err(e) => self.err(item.line, e),
                },
                ItemKind::Zero(count) => {
                    for i in 0..*count {
                        let sub = Item {
                            line: item.line,
                            section: item.section,
                            addr: item.addr + 4 * i,
                            kind: ItemKind::Zero(0),
                        };
                        self.store(&sub, 0, &mut code, &mut kinds, &mut lines, &mut data);
                    }
                }
                ItemKind::Instr { index, ops } => {
                    if item.section == Section::Data {
                        continue;
                    }
                    match encode_instr(*index, ops, item.addr, &ctx) {
                        Ok(instr) => {
                            let base = (item.addr / 4) as usize;
                            code[base] = instr.encode();
                            kinds[base] = WordKind::Instr;
                            lines[base] = item.line;
                            if protected {
                                for (g, kind) in instr.trailing_slots().iter().enumerate() {
                                    for i in 0..k as usize {
                                        let w = base + 1 + g * k as usize + i;
                                        kinds[w] = WordKind::Slot(*kind);
                                        lines[w] = item.line;
                                    }
                                }
                            }
                        }
                        Err(e) => self.err(item.line, e),
                    }
                }
            }
        }

        let resolve = |this: &mut Self, line: usize, name: &str| -> Option<u32> {
            match symbols.get(name) {
                Some(a) => Some(*a),
                None => {
                    this.err(line, format!("undefined label `{name}`"));
                    None
                }
            }
        };
        let entry = match &entry_label {
            Some((line, name)) => resolve(self, *line, name).unwrap_or(0),
            None => symbols.get("main").copied().unwrap_or(0),
        };
        let mut handlers = Vec::new();
        for (line, name) in &handler_labels {
            if let Some(a) = resolve(self, *line, name) {
                handlers.push(a);
            }
        }
        let mut targets: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (line, site, fns) in &target_decls {
            let Some(site_addr) = resolve(self, *line, site) else {
                continue;
            };
            let is_icall = site_addr < text_addr
                && kinds[(site_addr / 4) as usize] == WordKind::Instr
                && matches!(
                    Instruction::decode(code[(site_addr / 4) as usize]),
                    Some(Instruction::CallR { .. })
                );
            if !is_icall {
                self.err(*line, format!("`{site}` does not label an indirect call"));
            }
            let list: Vec<u32> = fns.iter().filter_map(|f| resolve(self, *line, f)).collect();
            targets.entry(site_addr).or_default().extend(list);
        }

        if !self.diags.is_empty() {
            return None;
        }
        Some(AssembledProgram {
            protected,
            slot_words: k,
            code,
            kinds,
            lines,
            data,
            symbols,
            globals,
            entry,
            handlers,
            targets,
        })
    }

    fn store(
        &mut self,
        item: &Item,
        value: u32,
        code: &mut [u32],
        kinds: &mut [WordKind],
        lines: &mut [usize],
        data: &mut [u32],
    ) {
        match item.section {
            Section::Text => {
                let i = (item.addr / 4) as usize;
                code[i] = value;
                kinds[i] = WordKind::Data;
                lines[i] = item.line;
            }
            Section::Data => data[((item.addr - DATA_BASE) / 4) as usize] = value,
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(';') {
        Some(i) => &line[..i],
        None => line,
    }
}

struct Ctx<'a> {
    symbols: &'a BTreeMap<String, u32>,
    line: usize,
}

impl Ctx<'_> {
    fn value(&self, s: &str) -> std::result::Result<i64, String> {
        let s = s.trim();
        if let Some(v) = parse_number(s) {
            return Ok(v);
        }
        if is_ident(s) {
            return self
                .symbols
                .get(s)
                .map(|a| *a as i64)
                .ok_or_else(|| format!("undefined label `{s}`"));
        }
        Err(format!("bad operand `{s}`"))
    }

    fn reg(&self, s: Option<&String>) -> std::result::Result<u8, String> {
        let s = s.ok_or("missing register operand")?;
        parse_reg(s).ok_or_else(|| format!("bad register `{s}`"))
    }

    fn imm16(&self, s: Option<&String>) -> std::result::Result<u16, String> {
        let s = s.ok_or("missing immediate operand")?;
        let v = self.value(s)?;
        if !(-32768..=65535).contains(&v) {
            return Err(format!("immediate {v} out of 16-bit range"));
        }
        Ok(v as u16)
    }

    fn mem(&self, s: Option<&String>) -> std::result::Result<(u16, u8), String> {
        let s = s.ok_or("missing memory operand")?;
        let (imm, rest) = s
            .split_once('(')
            .ok_or_else(|| format!("expected `imm(reg)`, got `{s}`"))?;
        let reg = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("unclosed `(` in `{s}`"))?;
        let imm = if imm.trim().is_empty() {
            0
        } else {
            self.imm16(Some(&imm.to_string()))?
        };
        let reg = parse_reg(reg).ok_or_else(|| format!("bad register `{reg}`"))?;
        Ok((imm, reg))
    }

    /// Labels are absolute; bare numbers are byte offsets from `addr`.
    fn target(&self, s: Option<&String>, addr: u32, bits: u32) -> std::result::Result<i32, String> {
        let s = s.ok_or("missing branch target")?;
        let offset = match parse_number(s) {
            Some(v) => v,
            None => self.value(s)? - addr as i64,
        };
        if offset % 4 != 0 {
            return Err(format!("branch offset {offset} is not word aligned"));
        }
        let words = offset / 4;
        let limit = 1i64 << (bits - 1);
        if words < -limit || words >= limit {
            return Err(format!("branch offset {offset} out of range"));
        }
        let _ = self.line;
        Ok(offset as i32)
    }
}

fn encode_instr(
    index: u8,
    ops: &[String],
    addr: u32,
    ctx: &Ctx,
) -> std::result::Result<Instruction, String> {
    let expect = |n: usize| -> std::result::Result<(), String> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(format!(
                "`{}` expects {n} operand(s), got {}",
                template(index).mnemonic(),
                ops.len()
            ))
        }
    };
    let t = template(index);
    Ok(match t {
        Instruction::Alu { op, .. } => {
            expect(3)?;
            Instruction::Alu {
                op,
                rd: ctx.reg(ops.first())?,
                rs1: ctx.reg(ops.get(1))?,
                rs2: ctx.reg(ops.get(2))?,
            }
        }
        Instruction::Imm { op: ImmOp::Lui, .. } => {
            expect(2)?;
            Instruction::Imm {
                op: ImmOp::Lui,
                rd: ctx.reg(ops.first())?,
                rs1: 0,
                imm: ctx.imm16(ops.get(1))?,
            }
        }
        Instruction::Imm { op, .. } => {
            expect(3)?;
            Instruction::Imm {
                op,
                rd: ctx.reg(ops.first())?,
                rs1: ctx.reg(ops.get(1))?,
                imm: ctx.imm16(ops.get(2))?,
            }
        }
        Instruction::Lw { .. } => {
            expect(2)?;
            let (imm, base) = ctx.mem(ops.get(1))?;
            Instruction::Lw {
                rd: ctx.reg(ops.first())?,
                base,
                imm,
            }
        }
        Instruction::Sw { .. } => {
            expect(2)?;
            let (imm, base) = ctx.mem(ops.get(1))?;
            Instruction::Sw {
                src: ctx.reg(ops.first())?,
                base,
                imm,
            }
        }
        Instruction::Branch {
            cond, protected, ..
        } => {
            expect(3)?;
            Instruction::Branch {
                cond,
                protected,
                rs1: ctx.reg(ops.first())?,
                rs2: ctx.reg(ops.get(1))?,
                offset: ctx.target(ops.get(2), addr, 16)?,
            }
        }
        Instruction::Jmp { protected, .. } => {
            expect(1)?;
            Instruction::Jmp {
                protected,
                offset: ctx.target(ops.first(), addr, 24)?,
            }
        }
        Instruction::Call { protected, .. } => {
            expect(1)?;
            Instruction::Call {
                protected,
                offset: ctx.target(ops.first(), addr, 24)?,
            }
        }
        Instruction::CallR { protected, .. } => {
            expect(1)?;
            Instruction::CallR {
                protected,
                rs: ctx.reg(ops.first())?,
            }
        }
        other => {
            expect(0)?;
            other
        }
    })
}

/// Assembles source text. Output is a pure function of `(src, opts)`.
pub fn assemble(src: &str, opts: &AsmOptions) -> Result<AssembledProgram> {
    let mut a = Assembler {
        opts: *opts,
        diags: Vec::new(),
    };
    match a.run(src) {
        Some(p) => Ok(p),
        None => {
            a.diags.sort_by_key(|d| d.line);
            Err(Error::Assembly(a.diags))
        }
    }
}

/// Renders a program as source text that reassembles to the same words
/// under the same options.
pub fn disassemble_program(prog: &AssembledProgram) -> String {
    let mut out = String::new();
    let indirect = prog.indirect_functions();
    let mut labels: BTreeMap<u32, String> = BTreeMap::new();
    labels.insert(prog.entry, format!("L{:04x}", prog.entry));
    for h in &prog.handlers {
        labels.insert(*h, format!("L{h:04x}"));
    }
    for (site, fns) in &prog.targets {
        labels.insert(*site, format!("L{site:04x}"));
        for f in fns {
            labels.insert(*f, format!("L{f:04x}"));
        }
    }
    out.push_str(&format!(".entry L{:04x}\n", prog.entry));
    for h in &prog.handlers {
        out.push_str(&format!(".handler L{h:04x}\n"));
    }
    for (site, fns) in &prog.targets {
        let list: Vec<String> = fns.iter().map(|f| format!("L{f:04x}")).collect();
        out.push_str(&format!(".targets L{site:04x}: {}\n", list.join(", ")));
    }
    for (i, (word, kind)) in prog.code.iter().zip(prog.kinds.iter()).enumerate() {
        let addr = (i * 4) as u32;
        if let Some(l) = labels.get(&addr) {
            out.push_str(&format!("{l}:\n"));
        }
        match kind {
            WordKind::Instr => {
                let instr = Instruction::decode(*word).expect("assembled words decode");
                out.push_str(&format!("    {instr}\n"));
            }
            WordKind::Slot(SlotKind::FuncEntry) if prog.protected && indirect.contains(&addr) => {}
            WordKind::Slot(_) => {}
            WordKind::Data => out.push_str(&format!("    .word {word:#x}\n")),
        }
    }
    if !prog.data.is_empty() {
        out.push_str(".data\n");
        for w in &prog.data {
            out.push_str(&format!("    .word {w:#x}\n"));
        }
    }
    out
}
