//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/keccak_oracle.rs"]
mod keccak_oracle;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scfp_cli::bench::bench_dir;
use scfp_core::attacks::stats::chi_square_geometric;
use scfp_core::attacks::{p_detect, run_campaign, CampaignConfig, CampaignKind};
use scfp_core::gen::random_program;
use scfp_core::isa::{assemble, is_valid_opcode, AsmOptions, AssembledProgram, Instruction, DATA_BASE};
use scfp_core::linker::{link, link_plain, EncryptedImage, Placement};
use scfp_core::perm::{PermSpec, Permutation, Prince};
use scfp_core::sponge::{validate_params, KeyMaterial, Mode, SpongeParams, SpongeState, PRESET_NAMES};
use scfp_core::vm::{run, Hook, Machine, NoHook, Outcome, RunConfig, StepInfo, Status};
use scfp_core::StateBits;

const CORE_DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data");
const BENCH_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../bench/benchdir");
const IFELSE: &str = include_str!("data/ifelse.s");
const KEY: [u8; 16] = *b"acceptance-key!!";
const PLACEMENTS: [Placement; 2] = [Placement::Convention, Placement::SpanningTree];
const MODES: [Mode; 2] = [Mode::Ape, Mode::Duplex];

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn km(nonce: u8) -> KeyMaterial {
    KeyMaterial::new(KEY, [nonce; 16])
}

fn assemble_for(src: &str, params: Option<&SpongeParams>) -> Result<AssembledProgram, String> {
    let opts = match params {
        Some(p) => AsmOptions { slot_words: p.slot_words(), protected: true },
        None => AsmOptions { slot_words: 1, protected: false },
    };
    assemble(src, &opts).map_err(|e| e.to_string())
}

fn build(src: &str, params: &SpongeParams, placement: Placement) -> Result<(AssembledProgram, EncryptedImage), String> {
    let prog = assemble_for(src, Some(params))?;
    let linked = link(&prog, params, &km(5), placement).map_err(|e| e.to_string())?;
    Ok((prog, linked.image))
}

fn plain_outcome(src: &str) -> Result<Outcome, String> {
    let img = link_plain(&assemble_for(src, None)?).map_err(|e| e.to_string())?;
    let out = run(&img, &KEY, &RunConfig::new(1_000_000), &mut NoHook).map_err(|e| e.to_string())?;
    Ok(out.outcome)
}

fn hex_u64(s: &str) -> u64 {
    u64::from_str_radix(s, 16).unwrap()
}

fn keccak_oracle(s: &StateBits) -> StateBits {
    let out = keccak_oracle::keccak_p(&keccak_oracle::bits_from_bytes(&s.to_le_bytes(), s.width()), s.width() / 25, 12);
    StateBits::from_le_bytes(s.width(), &keccak_oracle::bytes_from_bits(&out)).unwrap()
}

fn c1_permutations() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for width in [50, 200] {
        let p = Permutation::new(&PermSpec::keccak(width, 12)).map_err(|e| e.to_string())?;
        for i in 0..10 {
            let s = StateBits::random(width, &mut rng);
            let out = p.permute(&s).map_err(|e| e.to_string())?;
            ensure(out == keccak_oracle(&s), format!("keccak-p[{width},12] differs on state {i}"))?;
        }
    }
    let kat = std::fs::read_to_string(format!("{CORE_DATA}/prince_kat.txt")).map_err(|e| e.to_string())?;
    let mut vectors = 0;
    for l in kat.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let mut key = [0u8; 16];
        key[..8].copy_from_slice(&hex_u64(f[1]).to_be_bytes());
        key[8..].copy_from_slice(&hex_u64(f[2]).to_be_bytes());
        ensure(Prince::new(&key).encrypt(hex_u64(f[0])) == hex_u64(f[3]), format!("PRINCE vector {l}"))?;
        vectors += 1;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(1), format!("took {took:?}"))?;
    Ok(format!("20 random keccak states match the oracle, {vectors} PRINCE vectors, {took:.2?}"))
}

fn c2_round_trip() -> Check {
    let start = Instant::now();
    let mut instrs = 0;
    for seed in 0..100u64 {
        let src = random_program(seed, 300);
        let plain = plain_outcome(&src)?;
        ensure(plain.status == Status::Halted, format!("seed {seed}: plain run {}", plain.status))?;
        for mode in MODES {
            let params = SpongeParams::IE.with_mode(mode);
            let (prog, img) = build(&src, &params, Placement::SpanningTree)?;
            ensure(prog.instruction_addrs().count() <= 500, format!("seed {seed}: program too long"))?;
            let cfg = RunConfig { max_cycles: 1_000_000, schedule: vec![], trace: true };
            let r = run(&img, &KEY, &cfg, &mut NoHook).map_err(|e| e.to_string())?;
            let o = &r.outcome;
            ensure(
                o.status == Status::Halted && r.trace.iter().all(|t| t.valid),
                format!("seed {seed} {mode}: {}", o.status),
            )?;
            ensure(o.arch == plain.arch, format!("seed {seed} {mode}: architectural trace differs"))?;
            ensure(
                o.metrics.instructions == plain.metrics.instructions,
                format!("seed {seed} {mode}: instruction count differs"),
            )?;
            instrs += o.metrics.instructions;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!("100 programs x 2 modes, {instrs} instructions, no failed checks, {took:.2?}"))
}

fn state_at(img: &EncryptedImage, data: u32, pc: u32) -> Result<SpongeState, String> {
    let mut m = Machine::load(img, &KEY).map_err(|e| e.to_string())?;
    m.memory_mut().write(DATA_BASE, data);
    for _ in 0..100 {
        if m.pc() == pc {
            return Ok(*m.sponge_state());
        }
        m.step();
        if let Some(s) = m.status() {
            return Err(format!("stopped with {s} before {pc:#x}"));
        }
    }
    Err(format!("never reached {pc:#x}"))
}

fn c3_merge() -> Check {
    let mut checked = 0;
    for params in [SpongeParams::AEE, SpongeParams::IE] {
        for mode in MODES {
            for placement in PLACEMENTS {
                let params = params.with_mode(mode);
                let (prog, img) = build(IFELSE, &params, placement)?;
                let d = prog.symbol("D").ok_or("no label D")?;
                let via_b = state_at(&img, 1, d)?;
                let via_c = state_at(&img, 0, d)?;
                ensure(
                    via_b == via_c,
                    format!("{mode} {placement:?}: {} vs {}", via_b.to_hex(), via_c.to_hex()),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!("states entering D equal on both paths in {checked} configurations"))
}

const INDIRECT: &str = "
    .targets sa: f, g
    .targets sb: f, g
    main: ORI r12, r0, 0x8000
          ORI r10, r0, f
          ORI r11, r0, g
          ADDI r6, r0, 2
    loop: ADDI r1, r1, 1
    sa:   CALLRP r10
    sb:   CALLRP r11
          ADD r15, r10, r0
          ADD r10, r11, r0
          ADD r11, r15, r0
          ADDI r6, r6, -1
          BPNE r6, r0, loop
          SW r5, 0(r12)
          SW r7, 4(r12)
          HALT
    f:    ADDI r5, r5, 1
          XRET
    g:    ADDI r7, r7, 16
          XRET
";

fn c4_indirect() -> Check {
    let plain = plain_outcome(INDIRECT)?;
    ensure(
        plain.arch.stores == vec![(DATA_BASE, 2), (DATA_BASE + 4, 32)],
        format!("baseline stores {:?}", plain.arch.stores),
    )?;
    for params in [SpongeParams::AEE, SpongeParams::MICRO] {
        for mode in MODES {
            for placement in PLACEMENTS {
                let params = params.with_mode(mode);
                let k = params.slot_words();
                let (prog, img) = build(INDIRECT, &params, placement)?;
                let (sa, sb) = (prog.symbol("sa").unwrap(), prog.symbol("sb").unwrap());
                let (f, g) = (prog.symbol("f").unwrap(), prog.symbol("g").unwrap());
                let cfg = RunConfig { max_cycles: 10_000, schedule: vec![], trace: true };
                let r = run(&img, &KEY, &cfg, &mut NoHook).map_err(|e| e.to_string())?;
                let tag = format!("{mode} {placement:?} k={k}");
                ensure(r.outcome.status == Status::Halted, format!("{tag}: {}", r.outcome.status))?;
                ensure(r.outcome.arch == plain.arch, format!("{tag}: trace differs"))?;
                let mut combos = BTreeSet::new();
                let mut groups = 0;
                for (i, t) in r.trace.iter().enumerate() {
                    match Instruction::decode(t.word) {
                        Some(Instruction::CallR { protected: true, .. }) => {
                            let callee = r.trace.get(i + 1).map(|n| n.pc).unwrap_or(0);
                            let callee = if callee == f || callee == f + 4 * k { f } else { g };
                            combos.insert((t.pc, callee));
                            ensure(t.patch_words == 2 * k, format!("{tag}: CALLRP absorbed {}", t.patch_words))?;
                            groups += t.patch_words / k;
                        }
                        Some(Instruction::XRet) => {
                            ensure(t.patch_words == 2 * k, format!("{tag}: XRET absorbed {}", t.patch_words))?;
                            groups += t.patch_words / k;
                        }
                        _ => {}
                    }
                }
                let want: BTreeSet<_> = [(sa, f), (sa, g), (sb, f), (sb, g)].into();
                ensure(combos == want, format!("{tag}: combinations {combos:x?}"))?;
                ensure(groups == 16, format!("{tag}: {groups} patch groups for 4 calls"))?;
            }
        }
    }
    Ok("all 4 site/target pairs genuine, 4 patch groups per indirect call, 8 configurations".into())
}

/// Raises `vector` once `at` instructions have retired; logs main-program fetches.
struct InterruptAt {
    at: u64,
    vector: u32,
    fired: bool,
    in_main: bool,
    fetches: Vec<(u32, u32)>,
}

impl InterruptAt {
    fn new(at: u64, vector: u32) -> Self {
        InterruptAt { at, vector, fired: false, in_main: true, fetches: Vec::new() }
    }
}

impl Hook for InterruptAt {
    fn before_step(&mut self, m: &mut Machine) -> bool {
        if !self.fired && m.metrics().instructions == self.at {
            m.interrupt_enter(self.vector).expect("vector is registered");
            self.fired = true;
        }
        self.in_main = !m.in_interrupt();
        true
    }

    fn after_step(&mut self, _m: &mut Machine, info: &StepInfo) {
        if self.in_main {
            self.fetches.push((info.pc, info.word));
        }
    }
}

fn c5_interrupts() -> Check {
    let src = random_program(0x1e7, 200);
    let mut boundaries = 0;
    for params in [SpongeParams::AEE, SpongeParams::IE] {
        for mode in MODES {
            let params = params.with_mode(mode);
            let (prog, img) = build(&src, &params, Placement::SpanningTree)?;
            let isr = prog.symbol("isr").ok_or("no isr")?;
            let mut clean = InterruptAt::new(u64::MAX, isr);
            let base = run(&img, &KEY, &RunConfig::new(100_000), &mut clean)
                .map_err(|e| e.to_string())?
                .outcome;
            ensure(base.status == Status::Halted, format!("{mode}: clean run {}", base.status))?;
            for at in 0..base.metrics.instructions {
                let mut hook = InterruptAt::new(at, isr);
                let out = run(&img, &KEY, &RunConfig::new(100_000), &mut hook)
                    .map_err(|e| e.to_string())?
                    .outcome;
                let tag = format!("{mode}: interrupt after {at} instructions");
                ensure(out.status == Status::Halted && hook.fired, format!("{tag}: {}", out.status))?;
                ensure(out.arch == base.arch, format!("{tag}: architectural trace differs"))?;
                ensure(hook.fetches == clean.fetches, format!("{tag}: fetch sequence differs"))?;
                ensure(out.metrics.interrupts == 1, format!("{tag}: {} interrupts", out.metrics.interrupts))?;
                boundaries += 1;
            }
        }
    }
    let flip = run_campaign(&CampaignConfig::new(CampaignKind::HandlerFlip, SpongeParams::MICRO, 10_000, 5))
        .map_err(|e| e.to_string())?;
    ensure(flip.rate >= 0.99, format!("handler flips detected at rate {:.4}", flip.rate))?;
    Ok(format!(
        "{boundaries} interrupt points resume identically; handler flips detected {}/{}",
        flip.successes,
        flip.counted()
    ))
}

fn c6_latency() -> Check {
    let invalid = (0..=255u8).filter(|b| !is_valid_opcode(*b)).count();
    ensure(invalid == 192, format!("{invalid} invalid opcode bytes"))?;
    let light = run_campaign(&CampaignConfig::new(CampaignKind::Latency, SpongeParams::AEE_LIGHT, 100_000, 6))
        .map_err(|e| e.to_string())?;
    let ie = run_campaign(&CampaignConfig::new(CampaignKind::Latency, SpongeParams::IE, 100_000, 6))
        .map_err(|e| e.to_string())?;
    let (m0, m2) = (light.mean.unwrap_or(f64::NAN), ie.mean.unwrap_or(f64::NAN));
    let chi = chi_square_geometric(&light.histogram, p_detect(0));
    ensure((1.27..=1.40).contains(&m0), format!("n=0 mean {m0:.4}"))?;
    ensure(m2 < m0, format!("n=2 mean {m2:.4} not below {m0:.4}"))?;
    Ok(format!(
        "mean {m0:.4} at n=0 over {}, {m2:.4} at n=2; chi-square {:.2} on {} df, p={:.3}",
        light.counted(),
        chi.statistic,
        chi.df,
        chi.p_value
    ))
}

fn c7_guessing() -> Check {
    let mut parts = Vec::new();
    for kind in [CampaignKind::Skip, CampaignKind::JumpTamper] {
        let r = run_campaign(&CampaignConfig::new(kind, SpongeParams::MICRO, 1_000_000, 7)).map_err(|e| e.to_string())?;
        let (lo, hi) = r.band.unwrap_or((f64::NAN, f64::NAN));
        ensure(
            r.within_band() == Some(true),
            format!("{kind}: rate {:.3e} outside [{lo:.3e}, {hi:.3e}]", r.rate),
        )?;
        parts.push(format!("{kind} {}/{} = {:.3e}", r.successes, r.counted(), r.rate));
    }
    Ok(format!("{} (2^-8 = 3.906e-3, 3 sigma)", parts.join(", ")))
}

/// Counts baseline instructions and patch words straight from assembly text.
fn count_patch_words(src: &str, k: usize) -> (usize, usize) {
    let mut targets = BTreeSet::new();
    for line in src.lines() {
        let line = line.split(';').next().unwrap().trim();
        if let Some(rest) = line.strip_prefix(".targets") {
            let list = rest.split_once(':').map(|(_, l)| l).unwrap_or("");
            targets.extend(list.split(',').map(|t| t.trim().to_string()));
        }
    }
    let (mut instrs, mut slots, mut text) = (0, 0, true);
    for line in src.lines() {
        let mut line = line.split(';').next().unwrap().trim();
        let mut entry = false;
        while let Some((head, rest)) = line.split_once(':') {
            let head = head.trim();
            if head.is_empty() || !head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                break;
            }
            entry |= targets.contains(head);
            line = rest.trim();
        }
        if entry && text {
            slots += k;
        }
        let op = line.split_whitespace().next().unwrap_or("").to_ascii_uppercase();
        match op.as_str() {
            "" => {}
            ".DATA" => text = false,
            ".TEXT" => text = true,
            d if d.starts_with('.') => {}
            _ => {
                instrs += 1;
                slots += match op.as_str() {
                    "BPEQ" | "BPNE" | "BPLT" | "BPGE" | "JMPP" | "CALLP" | "XRET" | "IRET" => k,
                    "CALLRP" => 2 * k,
                    _ => 0,
                };
            }
        }
    }
    (instrs, slots)
}

fn c8_overhead() -> Check {
    let params = SpongeParams::IE;
    let k = params.slot_words() as usize;
    let report = bench_dir(Path::new(BENCH_DIR), &params, Placement::SpanningTree, &KEY).map_err(|e| e.to_string())?;
    ensure(report.failures.is_empty(), format!("failures: {:?}", report.failures))?;
    for row in &report.rows {
        let src = std::fs::read_to_string(format!("{BENCH_DIR}/{}.s", row.name)).map_err(|e| e.to_string())?;
        let (instrs, slots) = count_patch_words(&src, k);
        let want = (4 * slots) as f64 / (4 * instrs) as f64;
        ensure(row.base_bytes == 4 * instrs, format!("{}: {} baseline bytes, counted {}", row.name, row.base_bytes, 4 * instrs))?;
        ensure(row.patch_words == slots, format!("{}: {} patch words, counted {slots}", row.name, row.patch_words))?;
        ensure(row.size_overhead == want, format!("{}: size overhead {} vs {want}", row.name, row.size_overhead))?;
    }
    let (lp, un) = (report.row("crc_loop").ok_or("no crc_loop")?, report.row("crc_unrolled").ok_or("no crc_unrolled")?);
    ensure(
        un.time_overhead < lp.time_overhead,
        format!("unrolled {:.4} not below loop {:.4}", un.time_overhead, lp.time_overhead),
    )?;
    let rel = (un.size_overhead - lp.size_overhead).abs() / lp.size_overhead;
    ensure(rel < 0.30, format!("size overheads differ by {:.1}%", 100.0 * rel))?;
    Ok(format!(
        "{} benchmarks exact; crc time +{:.2}% loop vs +{:.2}% unrolled, size +{:.2}% vs +{:.2}%",
        report.rows.len(),
        100.0 * lp.time_overhead,
        100.0 * un.time_overhead,
        100.0 * lp.size_overhead,
        100.0 * un.size_overhead
    ))
}

fn c9_bitflip() -> Check {
    let duplex = SpongeParams::MICRO.with_mode(Mode::Duplex);
    let d = run_campaign(&CampaignConfig::new(CampaignKind::BitFlip, duplex, 10_000, 9)).map_err(|e| e.to_string())?;
    ensure(d.successes == d.counted(), format!("duplex: {}/{} flips pass through", d.successes, d.counted()))?;
    let mut parts = Vec::new();
    for params in [SpongeParams::MICRO, SpongeParams::IE] {
        let a = run_campaign(&CampaignConfig::new(CampaignKind::BitFlip, params, 10_000, 9)).map_err(|e| e.to_string())?;
        let m = a.metric.unwrap_or(0.0);
        ensure(m >= 0.25, format!("APE avalanche {m:.3}"))?;
        parts.push(format!("{m:.3}"));
    }
    Ok(format!(
        "duplex flips pass through {}/{}; APE mean flipped fraction {}",
        d.successes,
        d.counted(),
        parts.join(" / ")
    ))
}

fn c10_params() -> Check {
    for name in PRESET_NAMES {
        for mode in MODES {
            let p = SpongeParams::preset(name).map_err(|e| e.to_string())?.with_mode(mode);
            validate_params(&p).map_err(|d| format!("{name} {mode}: {d:?}"))?;
        }
    }
    let mut cases: Vec<(SpongeParams, &str)> = Vec::new();
    let mut p = SpongeParams::IE;
    p.capacity = 15;
    p.rate = 35;
    p.redundancy = 3;
    cases.push((p, "capacity below 2s"));
    let mut p = SpongeParams::AEE;
    p.rate = 33;
    cases.push((p, "rate plus capacity"));
    let mut p = SpongeParams::AEE;
    p.instr_bits = 30;
    cases.push((p, "instruction width 30"));
    let mut p = SpongeParams::IE;
    p.redundancy = 1;
    cases.push((p, "plus redundancy"));
    let mut p = SpongeParams::IE;
    p.perm = PermSpec::keccak(50, 15);
    cases.push((p, "rounds 15 outside"));
    let n = cases.len();
    for (p, needle) in cases {
        let diags = validate_params(&p).err().unwrap_or_default();
        ensure(diags.iter().any(|d| d.contains(needle)), format!("missing `{needle}` in {diags:?}"))?;
    }
    let mut edge = SpongeParams::IE;
    edge.security = 8;
    validate_params(&edge).map_err(|d| format!("c = 2s rejected: {d:?}"))?;
    Ok(format!("{} presets x 2 modes accepted, {n} violations named, c = 2s accepted", PRESET_NAMES.len()))
}

fn main() {
    let checks: [Criterion; 10] = [
        ("permutations", c1_permutations),
        ("round trip", c2_round_trip),
        ("merge states", c3_merge),
        ("indirect calls", c4_indirect),
        ("interrupts", c5_interrupts),
        ("detection latency", c6_latency),
        ("patch guessing", c7_guessing),
        ("overhead", c8_overhead),
        ("bit flips", c9_bitflip),
        ("parameters", c10_params),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let res = check();
        let took = start.elapsed();
        match res {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{took:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{took:.1?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

