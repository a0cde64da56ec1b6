//! Command implementations behind the `scfp` binary. Each command writes its
//! report to `out` and returns the process exit code.

pub mod bench;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scfp_core::attacks::{check_feasible, run_campaign, CampaignConfig, CampaignKind, PatchGuess};
use scfp_core::bits::{hex, parse_hex};
use scfp_core::isa::{assemble, AsmOptions, AssembledProgram};
use scfp_core::linker::{link, EncryptedImage, Placement};
use scfp_core::sponge::{validate_params, KeyMaterial, Mode, SpongeParams};
use scfp_core::vm::{run, NoHook, RunConfig, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SECURITY: i32 = 2;

/// Key used by `bench` when none is given.
const BENCH_KEY: [u8; 16] = *b"scfp-bench-key!!";

#[derive(Parser, Debug)]
#[command(name = "scfp", version, about = "Sponge-based control-flow protection toolchain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ParamArgs {
    /// Named instance: aee, ie, aee-light or micro.
    #[arg(long, default_value = "micro")]
    pub preset: String,
    /// Parameter file (key=value lines); overrides --preset.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Override the construction: ape or duplex.
    #[arg(long)]
    pub mode: Option<Mode>,
}

impl ParamArgs {
    pub fn resolve(&self) -> Result<SpongeParams> {
        let p = match &self.params {
            Some(path) => SpongeParams::from_config(&read(path)?)?,
            None => SpongeParams::preset(&self.preset)?,
        };
        let p = match self.mode {
            Some(m) => p.with_mode(m),
            None => p,
        };
        p.validate().map_err(|problems| anyhow!("invalid parameters: {}", problems.join("; ")))?;
        Ok(p)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Assemble a source file into a program file.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Lower protected control flow to plain forms, without slots.
        #[arg(long)]
        unprotected: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Encrypt a program (source or program file) into an image.
    Link {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
        /// 128-bit key as hex, or @file holding it.
        #[arg(long)]
        key: String,
        /// 128-bit nonce as hex, or @file; a fresh one is drawn when absent.
        #[arg(long)]
        nonce: Option<String>,
        #[arg(long, default_value = "convention")]
        placement: Placement,
    },
    /// Run an image on the simulator.
    Run {
        image: PathBuf,
        /// Device key; not needed for plain images.
        #[arg(long)]
        key: Option<String>,
        /// Interrupt schedule: lines `cycle vector`.
        #[arg(long)]
        irq: Option<PathBuf>,
        /// Program file used to resolve vector labels in --irq.
        #[arg(long)]
        symbols: Option<PathBuf>,
        /// Write `cycle pc word valid patchwords` lines here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000_000)]
        max_cycles: u64,
    },
    /// Overhead table for every `.s` file in a directory.
    Bench {
        dir: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        key: Option<String>,
        #[arg(long, default_value = "convention")]
        placement: Placement,
    },
    /// Monte Carlo attack campaign.
    Attack {
        /// skip, skip-patch, jump-tamper, bitflip, latency, wrong-key,
        /// wrong-nonce or handler-flip.
        campaign: CampaignKind,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Patch guess for jump-tamper: random, zero or oracle.
        #[arg(long, default_value = "random")]
        guess: PatchGuess,
        /// Write key=value records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print and check a parameter set.
    Params {
        #[command(flatten)]
        params: ParamArgs,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Hex on the command line, or `@path` to a file holding hex.
pub fn parse_secret(arg: &str) -> Result<[u8; 16]> {
    let text = match arg.strip_prefix('@') {
        Some(path) => read(Path::new(path))?,
        None => arg.to_string(),
    };
    Ok(parse_hex::<16>(&text)?)
}

fn load_program(path: &Path, params: &SpongeParams) -> Result<AssembledProgram> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let prog: AssembledProgram =
            serde_json::from_str(&text).with_context(|| format!("parsing program file {}", path.display()))?;
        if !prog.protected {
            bail!("{} is an unprotected build; link needs a protected one", path.display());
        }
        if prog.slot_words != params.slot_words() {
            bail!(
                "{} was assembled with {}-word slots but the parameters need {}",
                path.display(),
                prog.slot_words,
                params.slot_words()
            );
        }
        Ok(prog)
    } else {
        Ok(assemble(&text, &AsmOptions { slot_words: params.slot_words(), protected: true })?)
    }
}

fn default_output(input: &Path, ext: &str) -> PathBuf {
    input.with_extension(ext)
}

pub fn cmd_asm(input: &Path, output: Option<&Path>, unprotected: bool, params: &ParamArgs, out: &mut dyn Write) -> Result<i32> {
    let p = params.resolve()?;
    let opts = AsmOptions { slot_words: if unprotected { 1 } else { p.slot_words() }, protected: !unprotected };
    let prog = assemble(&read(input)?, &opts)?;
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| default_output(input, "json"));
    write_file(&path, serde_json::to_string_pretty(&prog)?.as_bytes())?;
    writeln!(out, "wrote {}", path.display())?;
    writeln!(out, "words={}", prog.code.len())?;
    writeln!(out, "patch_words={}", prog.patch_words())?;
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_link(
    input: &Path,
    output: Option<&Path>,
    params: &ParamArgs,
    key: &str,
    nonce: Option<&str>,
    placement: Placement,
    out: &mut dyn Write,
) -> Result<i32> {
    let p = params.resolve()?;
    let key = parse_secret(key)?;
    let (nonce, fresh) = match nonce {
        Some(n) => (parse_secret(n)?, false),
        None => (rand::random::<[u8; 16]>(), true),
    };
    let prog = load_program(input, &p)?;
    let linked = link(&prog, &p, &KeyMaterial::new(key, nonce), placement)?;
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| default_output(input, "img"));
    write_file(&path, &linked.image.to_bytes())?;
    let base_bytes = 4 * prog.instruction_addrs().count();
    let patch_words = prog.patch_words();
    writeln!(out, "wrote {}", path.display())?;
    writeln!(out, "nonce={}{}", hex(&nonce), if fresh { " (generated)" } else { "" })?;
    writeln!(out, "slot_words={}", p.slot_words())?;
    writeln!(out, "patches={}", linked.patch_count())?;
    writeln!(out, "patch_words={patch_words}")?;
    writeln!(out, "code_size_overhead={:.4}", (4 * patch_words) as f64 / base_bytes as f64)?;
    for d in &linked.plan.diagnostics {
        writeln!(out, "note: {d}")?;
    }
    Ok(EXIT_OK)
}

/// Parses `cycle vector` lines; vectors are numbers or labels from `prog`.
pub fn parse_schedule(text: &str, prog: Option<&AssembledProgram>) -> Result<Vec<(u64, u32)>> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(c), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("irq line {}: expected `cycle vector`", i + 1);
        };
        let cycle: u64 = c.parse().with_context(|| format!("irq line {}: bad cycle {c:?}", i + 1))?;
        let vector = parse_number(v)
            .or_else(|| prog.and_then(|p| p.symbol(v)))
            .ok_or_else(|| anyhow!("irq line {}: unknown vector {v:?}", i + 1))?;
        events.push((cycle, vector));
    }
    Ok(events)
}

fn parse_number(s: &str) -> Option<u32> {
    match s.strip_prefix("0x") {
        Some(h) => u32::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_run(
    image: &Path,
    key: Option<&str>,
    irq: Option<&Path>,
    symbols: Option<&Path>,
    trace: Option<&Path>,
    max_cycles: u64,
    out: &mut dyn Write,
) -> Result<i32> {
    let bytes = std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
    let img = EncryptedImage::from_bytes(&bytes)?;
    let key = match key {
        Some(k) => parse_secret(k)?,
        None if img.is_plain() => [0; 16],
        None => bail!("protected image needs --key"),
    };
    let prog = match symbols {
        Some(p) => Some(serde_json::from_str::<AssembledProgram>(&read(p)?)?),
        None => None,
    };
    let schedule = match irq {
        Some(p) => parse_schedule(&read(p)?, prog.as_ref())?,
        None => Vec::new(),
    };
    let cfg = RunConfig { max_cycles, schedule, trace: trace.is_some() };
    let result = run(&img, &key, &cfg, &mut NoHook)?;
    if let Some(path) = trace {
        let text: String = result.trace.iter().map(|t| format!("{t}\n")).collect();
        write_file(path, text.as_bytes())?;
    }
    write!(out, "{}", result.outcome.summary())?;
    Ok(match result.outcome.status {
        Status::Halted => EXIT_OK,
        Status::InvalidInstr | Status::RedundancyFail => EXIT_SECURITY,
        Status::CycleLimit => EXIT_USAGE,
    })
}

pub fn cmd_bench(dir: &Path, params: &ParamArgs, key: Option<&str>, placement: Placement, out: &mut dyn Write) -> Result<i32> {
    let p = params.resolve()?;
    let key = match key {
        Some(k) => parse_secret(k)?,
        None => BENCH_KEY,
    };
    let report = bench::bench_dir(dir, &p, placement, &key)?;
    write!(out, "{}\n{}", report.table(), report.records())?;
    Ok(if report.failures.is_empty() { EXIT_OK } else { EXIT_USAGE })
}

pub fn cmd_attack(
    campaign: CampaignKind,
    params: &ParamArgs,
    trials: u64,
    seed: u64,
    guess: PatchGuess,
    records: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let p = params.resolve()?;
    let cfg = CampaignConfig::new(campaign, p, trials, seed).with_guess(guess);
    check_feasible(&cfg)?;
    writeln!(out, "seed={seed}")?;
    let result = run_campaign(&cfg)?;
    write!(out, "{}", result.summary())?;
    match records {
        Some(path) => write_file(path, result.records().as_bytes())?,
        None => write!(out, "\n{}", result.records())?,
    }
    Ok(EXIT_OK)
}

pub fn cmd_params(params: &ParamArgs, out: &mut dyn Write) -> Result<i32> {
    let p = match &params.params {
        Some(path) => SpongeParams::from_config(&read(path)?)?,
        None => SpongeParams::preset(&params.preset)?,
    };
    let p = params.mode.map_or(p, |m| p.with_mode(m));
    write!(out, "{}", p.to_config())?;
    match validate_params(&p) {
        Ok(()) => {
            writeln!(out, "valid=true")?;
            writeln!(out, "slot_words={}", p.slot_words())?;
            Ok(EXIT_OK)
        }
        Err(problems) => {
            writeln!(out, "valid=false")?;
            for m in problems {
                writeln!(out, "error: {m}")?;
            }
            Ok(EXIT_USAGE)
        }
    }
}

/// Dispatches a parsed command line.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Asm { input, output, unprotected, params } => cmd_asm(&input, output.as_deref(), unprotected, &params, out),
        Command::Link { input, output, params, key, nonce, placement } => {
            cmd_link(&input, output.as_deref(), &params, &key, nonce.as_deref(), placement, out)
        }
        Command::Run { image, key, irq, symbols, trace, max_cycles } => cmd_run(
            &image,
            key.as_deref(),
            irq.as_deref(),
            symbols.as_deref(),
            trace.as_deref(),
            max_cycles,
            out,
        ),
        Command::Bench { dir, params, key, placement } => cmd_bench(&dir, &params, key.as_deref(), placement, out),
        Command::Attack { campaign, params, trials, seed, guess, out: records } => {
            cmd_attack(campaign, &params, trials, seed, guess, records.as_deref(), out)
        }
        Command::Params { params } => cmd_params(&params, out),
    }
}
