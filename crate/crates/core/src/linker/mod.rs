//! Post-processing linker: builds the control-flow graph, places patch slots,
//! solves sponge states and patch values, and emits the encrypted image.

mod cfg;
mod encrypt;
mod image;
mod plan;
mod verify;

use std::collections::HashSet;

pub use cfg::{build_cfg, BasicBlock, ControlFlowGraph, Edge, EdgeKind, Function, Node, Slot};
pub use encrypt::{encrypt_image, virtual_state};
pub use image::{perm_code, EncryptedImage, HandlerEntry, ImageMode, MAGIC, VERSION};
pub use plan::{
    block_graph_edges, cycle_rank, place_patches_convention, place_patches_spanning_tree,
    PatchPlan, Placement,
};
pub use verify::{verify_image, Issue, IssueKind, VerifyReport};

use crate::error::{Error, Result};
use crate::isa::AssembledProgram;
use crate::sponge::{KeyMaterial, SpongeParams};

/// Result of [`link`].
#[derive(Clone, Debug)]
pub struct Linked {
    pub image: EncryptedImage,
    pub cfg: ControlFlowGraph,
    pub plan: PatchPlan,
}

impl Linked {
    pub fn patch_count(&self) -> usize {
        self.plan.patch_count(&self.cfg)
    }
}

pub fn plan_for(cfg: &ControlFlowGraph, placement: Placement, params: &SpongeParams) -> PatchPlan {
    match placement {
        Placement::Convention => place_patches_convention(cfg),
        Placement::SpanningTree => place_patches_spanning_tree(cfg, params.mode),
    }
}

/// Graph, plan and encryption in one call.
pub fn link(
    prog: &AssembledProgram,
    params: &SpongeParams,
    km: &KeyMaterial,
    placement: Placement,
) -> Result<Linked> {
    let cfg = build_cfg(prog)?;
    let plan = plan_for(&cfg, placement, params);
    let image = encrypt_image(prog, &cfg, &plan, km, params)?;
    Ok(Linked { image, cfg, plan })
}

/// Unencrypted image of a program assembled with `protected: false`.
pub fn link_plain(prog: &AssembledProgram) -> Result<EncryptedImage> {
    if prog.protected {
        return Err(Error::Layout("plain images need an unprotected build".into()));
    }
    Ok(EncryptedImage::plain(
        prog.code.clone(),
        prog.data.clone(),
        prog.entry,
        &prog.handlers,
    ))
}

/// Rejects a nonce that was already used for another image.
#[derive(Debug, Default)]
pub struct NonceRegistry {
    used: HashSet<[u8; 16]>,
}

impl NonceRegistry {
    pub fn claim(&mut self, nonce: [u8; 16]) -> Result<()> {
        if self.used.insert(nonce) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "nonce {} was already used for another image",
                crate::bits::hex(&nonce)
            )))
        }
    }
}
