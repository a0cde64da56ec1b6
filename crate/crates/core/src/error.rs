use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("assembly failed:\n{}", format_diagnostics(.0))]
    Assembly(Vec<crate::isa::Diagnostic>),
    #[error("cfg error: {0}")]
    Cfg(String),
    #[error("unpatchable divergence at {addr:#06x}: {detail}")]
    UnpatchableDivergence { addr: u32, detail: String },
    #[error("missing patch location at {addr:#06x}: {detail}")]
    MissingPatchLocation { addr: u32, detail: String },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("malformed image at offset {offset}: {detail}")]
    Image { offset: usize, detail: String },
    #[error("interrupt error: {0}")]
    Interrupt(String),
    #[error("metrics error: {0}")]
    Metrics(String),
}

fn format_diagnostics(d: &[crate::isa::Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
