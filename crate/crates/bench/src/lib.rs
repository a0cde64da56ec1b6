//! Shared inputs for the criterion benches.

use std::path::{Path, PathBuf};

pub fn bench_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("benchdir")
}

/// Source text of `benchdir/<name>.s`.
pub fn source(name: &str) -> String {
    let path = bench_dir().join(format!("{name}.s"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
