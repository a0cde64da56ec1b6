//! Baseline vs. protected overhead table over a directory of programs.

use std::fmt::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use scfp_core::isa::{assemble, AsmOptions};
use scfp_core::linker::{link, link_plain, Placement};
use scfp_core::sponge::{KeyMaterial, SpongeParams};
use scfp_core::vm::{metrics, run, NoHook, RunConfig};

const MAX_CYCLES: u64 = 50_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub base_bytes: usize,
    pub size_overhead: f64,
    pub base_cycles: u64,
    pub time_overhead: f64,
    pub patch_words: usize,
    pub taken_branches: u64,
    pub calls: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub failures: Vec<(String, String)>,
}

impl BenchReport {
    /// Arithmetic means of the size and runtime overheads.
    pub fn averages(&self) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        (
            self.rows.iter().map(|r| r.size_overhead).sum::<f64>() / n,
            self.rows.iter().map(|r| r.time_overhead).sum::<f64>() / n,
        )
    }

    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>10} {:>9} {:>12} {:>9} {:>7} {:>8} {:>6}\n",
            "benchmark", "code [B]", "size +%", "cycles", "time +%", "patch", "taken", "calls"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>10} {:>9.2} {:>12} {:>9.2} {:>7} {:>8} {:>6}",
                r.name,
                r.base_bytes,
                100.0 * r.size_overhead,
                r.base_cycles,
                100.0 * r.time_overhead,
                r.patch_words,
                r.taken_branches,
                r.calls
            );
        }
        let (size, time) = self.averages();
        let _ = writeln!(s, "{:<16} {:>10} {:>9.2} {:>12} {:>9.2}", "average", "", 100.0 * size, "", 100.0 * time);
        for (name, err) in &self.failures {
            let _ = writeln!(s, "{name:<16} FAILED: {err}");
        }
        s
    }

    pub fn records(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "bench={} base_bytes={} size_overhead={:.6} base_cycles={} time_overhead={:.6} patch_words={} taken_branches={} calls={}",
                r.name, r.base_bytes, r.size_overhead, r.base_cycles, r.time_overhead, r.patch_words, r.taken_branches, r.calls
            );
        }
        let (size, time) = self.averages();
        let _ = writeln!(s, "bench=average size_overhead={size:.6} time_overhead={time:.6}");
        for (name, err) in &self.failures {
            let _ = writeln!(s, "bench={name} failed={err:?}");
        }
        s
    }
}

/// Builds, links and runs one benchmark source both ways.
pub fn bench_source(
    name: &str,
    src: &str,
    params: &SpongeParams,
    placement: Placement,
    key: &[u8; 16],
    nonce: [u8; 16],
) -> Result<BenchRow> {
    let plain = assemble(src, &AsmOptions { slot_words: 1, protected: false })?;
    let prog = assemble(src, &AsmOptions { slot_words: params.slot_words(), protected: true })?;
    let base_img = link_plain(&plain)?;
    let linked = link(&prog, params, &KeyMaterial::new(*key, nonce), placement)?;
    let cfg = RunConfig::new(MAX_CYCLES);
    let base = run(&base_img, key, &cfg, &mut NoHook)?.outcome;
    let prot = run(&linked.image, key, &cfg, &mut NoHook)?.outcome;
    let rep = metrics(&base_img, &base, &linked.image, &prot)?;
    Ok(BenchRow {
        name: name.to_string(),
        base_bytes: rep.base_bytes,
        size_overhead: rep.size_overhead,
        base_cycles: rep.base_cycles,
        time_overhead: rep.time_overhead,
        patch_words: prog.patch_words(),
        taken_branches: rep.taken_branches,
        calls: rep.calls,
    })
}

/// Every `*.s` file in `dir`, in name order. Failures are listed, not fatal.
pub fn bench_dir(dir: &Path, params: &SpongeParams, placement: Placement, key: &[u8; 16]) -> Result<BenchReport> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "s"))
        .collect();
    files.sort();
    let mut report = BenchReport::default();
    for (i, path) in files.iter().enumerate() {
        let name = path.file_stem().unwrap().to_string_lossy().to_string();
        let mut nonce = [0u8; 16];
        nonce[..8].copy_from_slice(&(i as u64 + 1).to_le_bytes());
        let row = std::fs::read_to_string(path)
            .map_err(anyhow::Error::from)
            .and_then(|src| bench_source(&name, &src, params, placement, key, nonce));
        match row {
            Ok(r) => report.rows.push(r),
            Err(e) => report.failures.push((name, format!("{e:#}"))),
        }
    }
    Ok(report)
}
