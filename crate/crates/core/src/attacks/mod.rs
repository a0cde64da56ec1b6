//! Monte Carlo fault campaigns at scaled-down parameters.
//!
//! Campaigns touch the machine only through harness hooks: memory and
//! ciphertext writes, pc redirection and suppressed patch fetches. The one
//! exception is the oracle patch guess, which reads chain states to build the
//! patch an all-knowing attacker would use.

pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bits::hex;
use crate::error::{Error, Result};
use crate::gen::random_program;
use crate::isa::{assemble, AsmOptions, AssembledProgram};
use crate::linker::{build_cfg, encrypt_image, link_plain, plan_for, ControlFlowGraph, EncryptedImage, PatchPlan, Placement};
use crate::sponge::{KeyMaterial, Mode, PatchScope, PatchValue, SpongeParams};
use crate::vm::{run, run_machine, Hook, Machine, NoHook, RunConfig, Status};

/// Straight-line chain; `{}` holes take per-trial immediates.
const SKIP_SRC: &str = "
main: ORI r12, r0, 0x8000
s1:   ADDI r1, r0, {}
s2:   ADDI r2, r1, {}
s3:   ADDI r3, r2, {}
s4:   ADDI r4, r3, {}
s5:   ADDI r5, r4, {}
      SW r1, 0(r12)
      SW r2, 4(r12)
      SW r3, 8(r12)
      SW r4, 12(r12)
      SW r5, 16(r12)
      HALT
";
const SKIP_TARGETS: [&str; 5] = ["s1", "s2", "s3", "s4", "s5"];

fn skip_source(imms: &[u16; 5]) -> String {
    let mut parts = SKIP_SRC.split("{}");
    let mut out = parts.next().unwrap().to_string();
    for (imm, rest) in imms.iter().zip(parts) {
        out += &imm.to_string();
        out += rest;
    }
    out
}

const PATCH_SRC: &str = "
main:  ORI r12, r0, 0x8000
       ADDI r1, r0, 1
       BPEQ r1, r0, other
       ADDI r3, r0, 1
jump:  JMPP join
other: ADDI r3, r0, 2
join:  SW r3, 0(r12)
       SW r1, 4(r12)
       HALT
";

const JUMP_SRC: &str = "
main: ORI r12, r0, 0x8000
      ADDI r1, r0, 1
jump: JMPP t1
t1:   ADDI r2, r0, 2
      ADDI r3, r0, 3
      ADDI r4, r0, 4
      JMPP t2
t2:   ADDI r5, r0, 5
      ADDI r6, r0, 6
      ADDI r7, r0, 7
      SW r5, 0(r12)
      HALT
";

const HANDLER_SRC: &str = "
      .handler isr
main: ORI r12, r0, 0x8000
      ADDI r1, r0, 12
loop: ADDI r2, r2, 3
      XOR r3, r3, r2
      ADDI r1, r1, -1
      BPNE r1, r0, loop
      SW r2, 0(r12)
      SW r3, 4(r12)
      HALT
isr:  ADDI r15, r15, 1
      XORI r15, r15, 5
      ADDI r15, r15, 2
      IRET
";

const LATENCY_SEED: u64 = 0x1a7e;
const LATENCY_SIZE: usize = 80;
const PREFIX_WINDOW: u64 = 64;
const GENUINE_RUN: usize = 3;
const MAX_CYCLES: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CampaignKind {
    /// Skip one instruction fetch entirely.
    Skip,
    /// Drop the patch absorption of a taken protected jump.
    SkipPatch,
    /// Redirect a protected jump with a chosen patch.
    JumpTamper,
    /// Flip one ciphertext bit of the next instruction.
    BitFlip,
    /// Fetches from a ciphertext bit flip to detection.
    Latency,
    /// Run under a random foreign key.
    WrongKey,
    /// Run under a foreign nonce.
    WrongNonce,
    /// Flip a handler ciphertext bit and interrupt at a random cycle.
    HandlerFlip,
}

pub const CAMPAIGN_NAMES: [&str; 8] = [
    "skip",
    "skip-patch",
    "jump-tamper",
    "bitflip",
    "latency",
    "wrong-key",
    "wrong-nonce",
    "handler-flip",
];

const KINDS: [CampaignKind; 8] = [
    CampaignKind::Skip,
    CampaignKind::SkipPatch,
    CampaignKind::JumpTamper,
    CampaignKind::BitFlip,
    CampaignKind::Latency,
    CampaignKind::WrongKey,
    CampaignKind::WrongNonce,
    CampaignKind::HandlerFlip,
];

impl CampaignKind {
    pub fn name(self) -> &'static str {
        CAMPAIGN_NAMES[KINDS.iter().position(|k| *k == self).unwrap()]
    }

    /// Campaigns whose success rate is a `2^-patch_bits` event.
    pub fn is_guessing(self) -> bool {
        matches!(self, CampaignKind::Skip | CampaignKind::SkipPatch | CampaignKind::JumpTamper)
    }
}

impl fmt::Display for CampaignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CampaignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CAMPAIGN_NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| KINDS[i])
            .ok_or_else(|| Error::Config(format!("unknown campaign {s:?}; expected one of {}", CAMPAIGN_NAMES.join(", "))))
    }
}

/// Patch value written by the jump-tamper attacker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum PatchGuess {
    Random,
    Zero,
    Oracle,
}

impl FromStr for PatchGuess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PatchGuess::Random),
            "zero" => Ok(PatchGuess::Zero),
            "oracle" => Ok(PatchGuess::Oracle),
            _ => Err(Error::Config(format!("unknown patch guess {s:?}; expected random, zero or oracle"))),
        }
    }
}

impl fmt::Display for PatchGuess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchGuess::Random => "random",
            PatchGuess::Zero => "zero",
            PatchGuess::Oracle => "oracle",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CampaignConfig {
    pub kind: CampaignKind,
    pub params: SpongeParams,
    pub trials: u64,
    pub seed: u64,
    pub guess: PatchGuess,
}

impl CampaignConfig {
    pub fn new(kind: CampaignKind, params: SpongeParams, trials: u64, seed: u64) -> Self {
        CampaignConfig {
            kind,
            params,
            trials,
            seed,
            guess: PatchGuess::Random,
        }
    }

    pub fn with_guess(mut self, guess: PatchGuess) -> Self {
        self.guess = guess;
        self
    }

    /// Success probability predicted for the configured attack, if exact.
    pub fn expected_rate(&self) -> Option<f64> {
        let bits = self.params.patch_bits() as i32;
        match self.kind {
            CampaignKind::JumpTamper if self.guess == PatchGuess::Oracle => Some(1.0),
            k if k.is_guessing() => Some(2f64.powi(-bits)),
            // A foreign key or nonce still hits the genuine chain when the
            // entry state collides.
            CampaignKind::WrongKey | CampaignKind::WrongNonce => Some(2f64.powi(-bits)),
            CampaignKind::BitFlip if self.params.mode == Mode::Duplex => Some(1.0),
            _ => None,
        }
    }

    /// Mean latency `1 / p_inv` with `p_inv = 1 - (1/4)·2^-n`.
    pub fn expected_latency(&self) -> f64 {
        1.0 / p_detect(self.params.redundancy)
    }
}

/// Probability that one random fetch is rejected.
pub fn p_detect(n: usize) -> f64 {
    1.0 - (1.0 - crate::isa::P_INVALID) * 2f64.powi(-(n as i32))
}

/// Refuses guessing campaigns whose success events would never be observed.
pub fn check_feasible(cfg: &CampaignConfig) -> Result<()> {
    let bits = cfg.params.patch_bits();
    if cfg.kind.is_guessing() && cfg.guess != PatchGuess::Oracle && bits > 24 {
        return Err(Error::Config(format!(
            "{} succeeds with probability 2^-{bits} under these parameters; no feasible trial count \
             observes it. Use the micro preset (2^-8) or ie (2^-16).",
            cfg.kind
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Tally {
    trials: u64,
    successes: u64,
    excluded: u64,
    single_hits: u64,
    metric: u64,
    metric_den: u64,
    hist: BTreeMap<u64, u64>,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.trials += o.trials;
        self.successes += o.successes;
        self.excluded += o.excluded;
        self.single_hits += o.single_hits;
        self.metric += o.metric;
        self.metric_den += o.metric_den;
        for (k, v) in o.hist {
            *self.hist.entry(k).or_default() += v;
        }
        self
    }
}

type TrialFn = Box<dyn Fn(&mut ChaCha8Rng) -> Trial + Sync>;

#[derive(Default)]
struct Trial {
    success: bool,
    excluded: bool,
    single: bool,
    metric: Option<(u64, u64)>,
    value: Option<u64>,
}

impl Trial {
    fn excluded() -> Trial {
        Trial {
            excluded: true,
            ..Default::default()
        }
    }

    fn tally(self, t: &mut Tally) {
        t.trials += 1;
        if self.excluded {
            t.excluded += 1;
            return;
        }
        t.successes += self.success as u64;
        t.single_hits += self.single as u64;
        if let Some((m, d)) = self.metric {
            t.metric += m;
            t.metric_den += d;
        }
        if let Some(v) = self.value {
            *t.hist.entry(v).or_default() += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignResult {
    pub kind: CampaignKind,
    pub mode: Mode,
    pub guess: PatchGuess,
    pub seed: u64,
    pub trials: u64,
    pub excluded: u64,
    pub successes: u64,
    pub single_hits: u64,
    pub rate: f64,
    pub wilson: (f64, f64),
    pub expected: Option<f64>,
    pub band: Option<(f64, f64)>,
    pub metric: Option<f64>,
    pub histogram: BTreeMap<u64, u64>,
    pub mean: Option<f64>,
    pub expected_mean: Option<f64>,
}

impl CampaignResult {
    pub fn counted(&self) -> u64 {
        self.trials - self.excluded
    }

    /// Whether the rate lies in the 3σ band around the prediction.
    pub fn within_band(&self) -> Option<bool> {
        self.band.map(|(lo, hi)| {
            if self.expected == Some(1.0) {
                self.successes == self.counted()
            } else {
                (lo..=hi).contains(&self.rate)
            }
        })
    }

    /// Line-delimited `key=value` records.
    pub fn records(&self) -> String {
        let mut s = format!(
            "campaign={}\nmode={}\nseed={}\ntrials={}\nexcluded={}\nsuccesses={}\nrate={:.6e}\nwilson_lo={:.6e}\nwilson_hi={:.6e}\n",
            self.kind, self.mode, self.seed, self.trials, self.excluded, self.successes, self.rate, self.wilson.0, self.wilson.1
        );
        if self.kind == CampaignKind::JumpTamper {
            s += &format!("guess={}\nsingle_hits={}\n", self.guess, self.single_hits);
        }
        if let Some(p) = self.expected {
            s += &format!("expected={p:.6e}\n");
        }
        if let (Some((lo, hi)), Some(ok)) = (self.band, self.within_band()) {
            s += &format!("band_lo={lo:.6e}\nband_hi={hi:.6e}\nwithin_3sigma={ok}\n");
        }
        if let Some(m) = self.metric {
            s += &format!("metric={m:.6}\n");
        }
        if let Some(m) = self.mean {
            s += &format!("mean={m:.6}\n");
        }
        if let Some(m) = self.expected_mean {
            s += &format!("expected_mean={m:.6}\n");
        }
        for (k, v) in &self.histogram {
            s += &format!("hist.{k}={v}\n");
        }
        s
    }

    /// Aligned human-readable table.
    pub fn summary(&self) -> String {
        let mut rows = vec![
            ("campaign", self.kind.to_string()),
            ("mode", self.mode.to_string()),
            ("trials", format!("{} ({} excluded)", self.trials, self.excluded)),
            ("successes", self.successes.to_string()),
            ("rate", format!("{:.4e}  wilson95 [{:.4e}, {:.4e}]", self.rate, self.wilson.0, self.wilson.1)),
        ];
        if let Some(p) = self.expected {
            let (lo, hi) = self.band.unwrap_or((p, p));
            let verdict = if self.within_band() == Some(true) { "inside" } else { "OUTSIDE" };
            rows.push(("expected", format!("{p:.4e}  3-sigma [{lo:.4e}, {hi:.4e}] {verdict}")));
        }
        if let Some(m) = self.metric {
            rows.push(("metric", format!("{m:.4}")));
        }
        if let Some(m) = self.mean {
            let e = self.expected_mean.map(|e| format!(" (expected {e:.4})")).unwrap_or_default();
            rows.push(("mean", format!("{m:.4}{e}")));
        }
        let mut s = String::new();
        for (k, v) in rows {
            s += &format!("{k:<10} {v}\n");
        }
        s
    }
}

/// A program linked once structurally, re-encrypted per trial.
struct Target {
    prog: AssembledProgram,
    cfg: ControlFlowGraph,
    plan: PatchPlan,
    params: SpongeParams,
    key: [u8; 16],
}

impl Target {
    fn build(src: &str, params: SpongeParams, key: [u8; 16]) -> Result<Target> {
        let prog = assemble(src, &AsmOptions { slot_words: params.slot_words(), protected: true })?;
        let cfg = build_cfg(&prog)?;
        let plan = plan_for(&cfg, Placement::Convention, &params);
        Ok(Target { prog, cfg, plan, params, key })
    }

    /// Builds and checks that the program encrypts.
    fn new(src: &str, params: SpongeParams, key: [u8; 16]) -> Result<Target> {
        let t = Self::build(src, params, key)?;
        t.image([0; 16])?;
        Ok(t)
    }

    fn image(&self, nonce: [u8; 16]) -> Result<EncryptedImage> {
        encrypt_image(&self.prog, &self.cfg, &self.plan, &KeyMaterial::new(self.key, nonce), &self.params)
    }

    fn fresh(&self, rng: &mut ChaCha8Rng) -> EncryptedImage {
        self.image(rng.gen()).expect("structure was checked when the target was built")
    }

    fn addr_of(&self, label: &str) -> u32 {
        self.prog.symbol(label).expect("label exists")
    }
}

struct SkipAt {
    pc: u32,
    done: bool,
}

impl Hook for SkipAt {
    fn before_step(&mut self, m: &mut Machine) -> bool {
        if !self.done && m.pc() == self.pc {
            self.done = true;
            return false;
        }
        true
    }
}

struct SuppressAt {
    pc: u32,
    done: bool,
}

impl Hook for SuppressAt {
    fn before_step(&mut self, m: &mut Machine) -> bool {
        if !self.done && m.pc() == self.pc {
            self.done = true;
            m.suppress_next_patch();
        }
        true
    }
}

/// Steps until the pc reaches `addr`; `false` if the run ended first.
fn advance_to(m: &mut Machine, addr: u32) -> bool {
    while m.pc() != addr {
        if m.status().is_some() || m.cycles() > MAX_CYCLES {
            return false;
        }
        m.step();
    }
    m.status().is_none()
}

fn trial_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

fn campaign_key(seed: u64) -> [u8; 16] {
    trial_rng(seed, u64::MAX).gen()
}

/// Runs a campaign. Identical configurations give identical results
/// regardless of thread count.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    let key = campaign_key(cfg.seed);
    let trial: TrialFn = match cfg.kind {
        CampaignKind::Skip => skip_trial(cfg, key)?,
        CampaignKind::SkipPatch => skip_patch_trial(cfg, key)?,
        CampaignKind::JumpTamper => jump_trial(cfg, key)?,
        CampaignKind::BitFlip => bitflip_trial(cfg, key)?,
        CampaignKind::Latency => latency_trial(cfg, key)?,
        CampaignKind::WrongKey | CampaignKind::WrongNonce => wrong_key_trial(cfg, key)?,
        CampaignKind::HandlerFlip => handler_trial(cfg, key)?,
    };
    let tally = (0..cfg.trials)
        .into_par_iter()
        .fold(Tally::default, |mut t, i| {
            trial(&mut trial_rng(cfg.seed, i)).tally(&mut t);
            t
        })
        .reduce(Tally::default, Tally::merge);
    Ok(finish(cfg, tally))
}

fn finish(cfg: &CampaignConfig, t: Tally) -> CampaignResult {
    let counted = t.trials - t.excluded;
    let rate = if counted == 0 { 0.0 } else { t.successes as f64 / counted as f64 };
    let expected = cfg.expected_rate();
    let hist_total: u64 = t.hist.values().sum();
    let mean = (hist_total > 0).then(|| t.hist.iter().map(|(k, v)| k * v).sum::<u64>() as f64 / hist_total as f64);
    CampaignResult {
        kind: cfg.kind,
        mode: cfg.params.mode,
        guess: cfg.guess,
        seed: cfg.seed,
        trials: t.trials,
        excluded: t.excluded,
        successes: t.successes,
        single_hits: t.single_hits,
        rate,
        wilson: stats::wilson(t.successes, counted, 1.96),
        expected,
        band: expected.map(|p| stats::sigma_band(p, counted.max(1), 3.0)),
        metric: (t.metric_den > 0).then(|| t.metric as f64 / t.metric_den as f64),
        histogram: t.hist,
        mean,
        expected_mean: (cfg.kind == CampaignKind::Latency).then(|| cfg.expected_latency()),
    }
}

fn skip_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    // The permutation is unkeyed, so for a fixed plaintext only a fixed set of
    // capacities survives a skip. Fresh immediates make the plaintext uniform.
    Target::new(&skip_source(&[1, 2, 3, 4, 5]), cfg.params, key)?;
    let params = cfg.params;
    Ok(Box::new(move |rng| {
        let imms: [u16; 5] = rng.gen();
        let src = skip_source(&imms);
        let t = Target::build(&src, params, key).expect("template assembles");
        let img = t.fresh(rng);
        let label = SKIP_TARGETS[rng.gen_range(0..SKIP_TARGETS.len())];
        let plain_prog = assemble(&src, &AsmOptions { slot_words: 1, protected: false }).expect("template assembles");
        let plain = link_plain(&plain_prog).expect("unprotected build");
        let mut hook = SkipAt { pc: plain_prog.symbol(label).unwrap(), done: false };
        let oracle = run(&plain, &key, &RunConfig::new(MAX_CYCLES), &mut hook).expect("valid schedule").outcome;
        let mut hook = SkipAt { pc: t.addr_of(label), done: false };
        let out = run(&img, &key, &RunConfig::new(MAX_CYCLES), &mut hook).expect("valid schedule").outcome;
        Trial {
            success: out.status == Status::Halted && out.arch == oracle.arch,
            ..Default::default()
        }
    }))
}

fn skip_patch_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    let t = Target::new(PATCH_SRC, cfg.params, key)?;
    let jump = t.prog.symbol("jump").unwrap();
    let clean = run(&t.image([0; 16])?, &key, &RunConfig::new(MAX_CYCLES), &mut NoHook)?.outcome.arch;
    Ok(Box::new(move |rng| {
        let img = t.fresh(rng);
        let mut hook = SuppressAt { pc: jump, done: false };
        let out = run(&img, &key, &RunConfig::new(MAX_CYCLES), &mut hook).expect("valid schedule").outcome;
        Trial {
            success: out.status == Status::Halted && out.arch == clean,
            ..Default::default()
        }
    }))
}

/// Chain states at the first fetch of each address in `addrs`.
fn states_at(img: &EncryptedImage, key: &[u8; 16], addrs: &[u32]) -> Vec<crate::sponge::SpongeState> {
    let mut m = Machine::load(img, key).expect("image loads");
    let mut found = vec![None; addrs.len()];
    while m.status().is_none() && m.cycles() < MAX_CYCLES {
        for (i, a) in addrs.iter().enumerate() {
            if found[i].is_none() && m.pc() == *a {
                found[i] = Some(*m.sponge_state());
            }
        }
        m.step();
    }
    found.into_iter().map(|s| s.expect("address is reached in a clean run")).collect()
}

fn jump_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    let t = Target::new(JUMP_SRC, cfg.params, key)?;
    let jump = t.prog.symbol("jump").unwrap();
    let t1 = t.prog.symbol("t1").unwrap();
    let t2 = t.prog.symbol("t2").unwrap();
    let genuine: Vec<u32> = (0..GENUINE_RUN as u32).map(|i| t.prog.word_at(t2 + 4 * i).unwrap()).collect();
    let guess = cfg.guess;
    let k = cfg.params.slot_words();
    let bits = cfg.params.patch_bits();
    let scope = PatchScope::for_mode(cfg.params.mode);
    Ok(Box::new(move |rng| {
        let img = t.fresh(rng);
        let words: Vec<u32> = match guess {
            PatchGuess::Zero => vec![0; k as usize],
            PatchGuess::Random => {
                PatchValue { scope, bits: crate::bits::StateBits::random(bits, rng) }.to_words()
            }
            PatchGuess::Oracle => {
                let s = states_at(&img, &key, &[t1, t2]);
                let diff = match scope {
                    PatchScope::Capacity => s[0].capacity().xor(&s[1].capacity()),
                    PatchScope::FullState => s[0].bits().xor(s[1].bits()),
                };
                let slot: Vec<u32> = (0..k).map(|i| img.code[(jump / 4 + 1 + i) as usize]).collect();
                let genuine = PatchValue::from_words_lossy(scope, bits, &slot);
                PatchValue { scope, bits: genuine.bits.xor(&diff) }.to_words()
            }
        };
        let mut m = Machine::load(&img, &key).expect("image loads");
        if !advance_to(&mut m, jump) {
            return Trial::excluded();
        }
        m.memory_mut().load_words(jump + 4, &words);
        m.step();
        m.set_pc(t2);
        let mut run_len = 0;
        for g in &genuine {
            let info = m.step();
            if info.word != *g || !info.valid || m.status().is_some_and(|s| s.is_detection()) {
                break;
            }
            run_len += 1;
        }
        Trial {
            success: run_len == GENUINE_RUN,
            single: run_len >= 1,
            value: Some(run_len as u64),
            ..Default::default()
        }
    }))
}

fn bitflip_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    let t = Target::new(&skip_source(&[11, 22, 33, 44, 55]), cfg.params, key)?;
    let targets: Vec<u32> = SKIP_TARGETS.iter().map(|m| t.addr_of(m)).collect();
    let r = cfg.params.rate;
    Ok(Box::new(move |rng| {
        let img = t.fresh(rng);
        let at = targets[rng.gen_range(0..targets.len())];
        let bit = rng.gen_range(0..r);
        let mut m = Machine::load(&img, &key).expect("image loads");
        if !advance_to(&mut m, at) {
            return Trial::excluded();
        }
        m.flip_ciphertext_bit(at, bit);
        let info = m.step();
        let genuine = t.prog.word_at(at).unwrap();
        let dp = (info.word ^ genuine) as u64 | (info.redundancy << 32);
        Trial {
            success: dp == 1 << bit,
            metric: Some(((info.word ^ genuine).count_ones() as u64, 32)),
            ..Default::default()
        }
    }))
}

/// Source of the program used by the latency campaign.
pub fn latency_program() -> String {
    random_program(LATENCY_SEED, LATENCY_SIZE)
}

fn latency_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    let src = latency_program();
    let t = Target::new(&src, cfg.params, key)?;
    let clean = run(&t.image([0; 16])?, &key, &RunConfig::new(MAX_CYCLES), &mut NoHook)?.outcome;
    if clean.status != Status::Halted {
        return Err(Error::Config("latency program does not halt".into()));
    }
    let fetches = clean.metrics.instructions;
    let r = cfg.params.rate;
    Ok(Box::new(move |rng| {
        let img = t.fresh(rng);
        let at = rng.gen_range(0..fetches);
        let bit = rng.gen_range(0..r);
        let mut m = Machine::load(&img, &key).expect("image loads");
        while m.metrics().instructions < at {
            m.step();
        }
        let pc = m.pc();
        m.flip_ciphertext_bit(pc, bit);
        let start = m.metrics().instructions;
        while m.status().is_none() && m.metrics().instructions - start < MAX_CYCLES {
            m.step();
        }
        match m.status() {
            Some(s) if s.is_detection() => Trial {
                success: true,
                value: Some(m.metrics().instructions - start),
                ..Default::default()
            },
            _ => Trial::excluded(),
        }
    }))
}

fn wrong_key_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    let t = Target::new(&skip_source(&[11, 22, 33, 44, 55]), cfg.params, key)?;
    let img = t.image(campaign_key(cfg.seed ^ 1))?;
    let trace_cfg = RunConfig { max_cycles: PREFIX_WINDOW, schedule: vec![], trace: true };
    let clean = run(&img, &key, &trace_cfg, &mut NoHook)?.trace;
    let foreign_nonce = cfg.kind == CampaignKind::WrongNonce;
    Ok(Box::new(move |rng| {
        let mut img = img.clone();
        let mut k = key;
        if foreign_nonce {
            img.nonce = rng.gen();
        } else {
            while k == key {
                k = rng.gen();
            }
        }
        let trace = run(&img, &k, &trace_cfg, &mut NoHook).expect("valid schedule").trace;
        let prefix = trace
            .iter()
            .zip(&clean)
            .take_while(|(a, b)| a.pc == b.pc && a.word == b.word && a.valid)
            .count() as u64;
        Trial {
            success: prefix >= GENUINE_RUN as u64,
            value: Some(prefix),
            ..Default::default()
        }
    }))
}

fn handler_trial(cfg: &CampaignConfig, key: [u8; 16]) -> Result<TrialFn> {
    let t = Target::new(HANDLER_SRC, cfg.params, key)?;
    let isr = t.prog.symbol("isr").unwrap();
    let handler_words: Vec<u32> = t.prog.instruction_addrs().filter(|a| *a >= isr).collect();
    let clean = run(&t.image([0; 16])?, &key, &RunConfig::new(MAX_CYCLES), &mut NoHook)?.outcome;
    let horizon = clean.metrics.cycles - 1;
    let r = cfg.params.rate;
    Ok(Box::new(move |rng| {
        let img = t.fresh(rng);
        let at = handler_words[rng.gen_range(0..handler_words.len())];
        let bit = rng.gen_range(0..r);
        let c = rng.gen_range(0..horizon);
        let mut m = Machine::load(&img, &key).expect("image loads");
        m.flip_ciphertext_bit(at, bit);
        let run_cfg = RunConfig { max_cycles: MAX_CYCLES, schedule: vec![(c, isr)], trace: false };
        let out = run_machine(&mut m, &run_cfg, &mut NoHook).expect("valid schedule").outcome;
        let genuine = out.status == Status::Halted && out.arch == clean.arch;
        Trial {
            success: out.status.is_detection(),
            single: genuine,
            ..Default::default()
        }
    }))
}

/// Hex rendering of the campaign key, for reports.
pub fn campaign_key_hex(seed: u64) -> String {
    hex(&campaign_key(seed))
}
