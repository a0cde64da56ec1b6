use std::fmt;

use serde::Serialize;

use super::{Outcome, Status};
use crate::error::{Error, Result};
use crate::linker::EncryptedImage;

/// Protected vs. baseline cost of one program run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    pub base_bytes: usize,
    pub prot_bytes: usize,
    /// Inserted patch bytes over baseline code bytes.
    pub size_overhead: f64,
    pub base_cycles: u64,
    pub prot_cycles: u64,
    /// Extra cycles over baseline cycles.
    pub time_overhead: f64,
    pub instructions: u64,
    pub patch_words: u64,
    pub patch_ratio: f64,
    pub taken_branches: u64,
    pub calls: u64,
}

impl fmt::Display for OverheadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "base_bytes={}", self.base_bytes)?;
        writeln!(f, "prot_bytes={}", self.prot_bytes)?;
        writeln!(f, "size_overhead={:.4}", self.size_overhead)?;
        writeln!(f, "base_cycles={}", self.base_cycles)?;
        writeln!(f, "prot_cycles={}", self.prot_cycles)?;
        writeln!(f, "time_overhead={:.4}", self.time_overhead)?;
        writeln!(f, "instructions={}", self.instructions)?;
        writeln!(f, "patch_words={}", self.patch_words)?;
        writeln!(f, "patch_ratio={:.4}", self.patch_ratio)?;
        writeln!(f, "taken_branches={}", self.taken_branches)?;
        writeln!(f, "calls={}", self.calls)
    }
}

pub fn arch_equal(a: &Outcome, b: &Outcome) -> bool {
    a.status == b.status && a.arch == b.arch
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Compares a baseline run with a protected run of the same program. Both
/// runs must halt with identical architectural traces.
pub fn metrics(
    base_img: &EncryptedImage,
    base: &Outcome,
    prot_img: &EncryptedImage,
    prot: &Outcome,
) -> Result<OverheadReport> {
    if base.status != Status::Halted || prot.status != Status::Halted {
        return Err(Error::Metrics(format!(
            "runs must halt (baseline {}, protected {})",
            base.status, prot.status
        )));
    }
    if base.arch != prot.arch {
        return Err(Error::Metrics(format!(
            "architectural traces differ (digest {:016x} vs {:016x})",
            base.digest, prot.digest
        )));
    }
    let base_bytes = base_img.code_bytes();
    let prot_bytes = prot_img.code_bytes();
    let m = prot.metrics;
    Ok(OverheadReport {
        base_bytes,
        prot_bytes,
        size_overhead: ratio(prot_bytes.saturating_sub(base_bytes) as f64, base_bytes as f64),
        base_cycles: base.metrics.cycles,
        prot_cycles: m.cycles,
        time_overhead: ratio(m.cycles.saturating_sub(base.metrics.cycles) as f64, base.metrics.cycles as f64),
        instructions: m.instructions,
        patch_words: m.patch_words,
        patch_ratio: ratio(m.patch_words as f64, m.instructions as f64),
        taken_branches: m.taken_branches,
        calls: m.calls,
    })
}
