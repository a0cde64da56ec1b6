//! Random structured programs for round-trip and attack testing.
//!
//! Generated programs always halt. Each direct function has one call site and
//! one `RET`, so the same source links in both modes. Registers: r1..r9 hold
//! data, r10 the indirect target, r11 the loop counter, r12 the data pointer,
//! r15 belongs to the interrupt handler.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BRANCHES: [&str; 4] = ["BPEQ", "BPNE", "BPLT", "BPGE"];
const ALU: [&str; 10] = ["ADD", "SUB", "AND", "OR", "XOR", "SLL", "SRL", "SRA", "SLT", "SLTU"];
const IMM: [&str; 4] = ["ADDI", "ANDI", "XORI", "SLTI"];

struct Gen {
    rng: ChaCha8Rng,
    funcs: String,
    count: usize,
    labels: usize,
    leaves: usize,
    indirect: Vec<String>,
    sites: Vec<(String, Vec<String>)>,
}

impl Gen {
    fn reg(&mut self) -> u32 {
        self.rng.gen_range(1..10)
    }

    fn label(&mut self, stem: &str) -> String {
        self.labels += 1;
        format!("{stem}{}", self.labels)
    }

    fn emit(buf: &mut String, count: &mut usize, line: &str) {
        let _ = writeln!(buf, "    {line}");
        *count += 1;
    }

    fn data_op(&mut self) -> String {
        let rd = self.reg();
        let rs = self.reg();
        match self.rng.gen_range(0..8) {
            0..=3 => {
                let rt = self.reg();
                format!("{} r{rd}, r{rs}, r{rt}", ALU.choose(&mut self.rng).unwrap())
            }
            4..=5 => {
                let imm: i32 = self.rng.gen_range(-100..100);
                format!("{} r{rd}, r{rs}, {imm}", IMM.choose(&mut self.rng).unwrap())
            }
            6 => format!("SW r{rs}, {}(r12)", 4 * self.rng.gen_range(0..16)),
            _ => format!("LW r{rd}, {}(r12)", 4 * self.rng.gen_range(0..16)),
        }
    }

    fn straight(&mut self, buf: &mut String, n: usize) {
        let mut count = 0;
        for _ in 0..n {
            let op = self.data_op();
            Self::emit(buf, &mut count, &op);
        }
        self.count += count;
    }

    fn line(&mut self, buf: &mut String, s: &str) {
        let mut c = 0;
        Self::emit(buf, &mut c, s);
        self.count += c;
    }

    fn place(buf: &mut String, label: &str) {
        let _ = writeln!(buf, "{label}:");
    }

    fn diamond(&mut self, buf: &mut String, with_else: bool) {
        let (a, b) = (self.reg(), self.reg());
        let br = *BRANCHES.choose(&mut self.rng).unwrap();
        let other = self.label("else");
        let join = self.label("join");
        self.line(buf, &format!("{br} r{a}, r{b}, {}", if with_else { &other } else { &join }));
        let n = self.rng.gen_range(1..4);
        self.straight(buf, n);
        if with_else {
            self.line(buf, &format!("JMPP {join}"));
            Self::place(buf, &other);
            let n = self.rng.gen_range(1..4);
            self.straight(buf, n);
        }
        Self::place(buf, &join);
    }

    fn body(&mut self, buf: &mut String) {
        let n = self.rng.gen_range(1..4);
        self.straight(buf, n);
        if self.rng.gen_bool(0.5) {
            let e = self.rng.gen_bool(0.5);
            self.diamond(buf, e);
        }
        let n = self.rng.gen_range(0..3);
        self.straight(buf, n);
    }

    fn leaf(&mut self) -> String {
        self.leaves += 1;
        let name = format!("leaf{}", self.leaves);
        let mut buf = String::new();
        Self::place(&mut buf, &name);
        self.body(&mut buf);
        self.line(&mut buf, "RET");
        self.funcs += &buf;
        name
    }

    fn indirect_fn(&mut self) -> String {
        let name = format!("ind{}", self.indirect.len() + 1);
        let mut buf = String::new();
        Self::place(&mut buf, &name);
        self.body(&mut buf);
        self.line(&mut buf, "XRET");
        self.funcs += &buf;
        self.indirect.push(name.clone());
        name
    }

    fn icall(&mut self, buf: &mut String) {
        while self.indirect.len() < 3 {
            self.indirect_fn();
        }
        let n = self.rng.gen_range(2..=3);
        let mut targets = self.indirect.clone();
        targets.shuffle(&mut self.rng);
        targets.truncate(n);
        let site = self.label("site");
        let pick = targets.choose(&mut self.rng).unwrap().clone();
        self.line(buf, &format!("ORI r10, r0, {pick}"));
        Self::place(buf, &site);
        self.line(buf, "CALLRP r10");
        self.sites.push((site, targets));
    }

    fn segment(&mut self, buf: &mut String, in_loop: bool) {
        match self.rng.gen_range(0..10) {
            0..=2 => {
                let n = self.rng.gen_range(1..5);
                self.straight(buf, n);
            }
            3..=4 => {
                let e = self.rng.gen_bool(0.6);
                self.diamond(buf, e);
            }
            5..=6 if !in_loop => {
                let iters = self.rng.gen_range(1..6);
                let top = self.label("loop");
                self.line(buf, &format!("ADDI r11, r0, {iters}"));
                Self::place(buf, &top);
                for _ in 0..self.rng.gen_range(1..3) {
                    self.segment(buf, true);
                }
                self.line(buf, "ADDI r11, r11, -1");
                self.line(buf, &format!("BPNE r11, r0, {top}"));
            }
            7 => {
                let f = self.leaf();
                self.line(buf, &format!("CALLP {f}"));
            }
            8 => self.icall(buf),
            _ => {
                let n = self.rng.gen_range(1..3);
                self.straight(buf, n);
            }
        }
    }
}

/// Assembly source of a random program with roughly `size` instructions
/// (never more than `size + 40`).
pub fn random_program(seed: u64, size: usize) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        funcs: String::new(),
        count: 0,
        labels: 0,
        leaves: 0,
        indirect: Vec::new(),
        sites: Vec::new(),
    };
    let mut main = String::new();
    Gen::place(&mut main, "main");
    g.line(&mut main, "ORI r12, r0, 0x8000");
    for r in 1..10 {
        let v: i32 = g.rng.gen_range(-50..50);
        g.line(&mut main, &format!("ADDI r{r}, r0, {v}"));
    }
    while g.count < size.saturating_sub(20) {
        g.segment(&mut main, false);
    }
    for r in 1..10 {
        g.line(&mut main, &format!("SW r{r}, {}(r12)", 64 + 4 * r));
    }
    g.line(&mut main, "HALT");
    let mut src = String::from("    .entry main\n    .handler isr\n");
    for (site, targets) in &g.sites {
        let _ = writeln!(src, "    .targets {site}: {}", targets.join(", "));
    }
    src += &main;
    src += &g.funcs;
    src += "isr:\n    ADDI r15, r15, 1\n    IRET\n";
    src
}
