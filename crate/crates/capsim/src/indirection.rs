//! Parameter indirection: shrink per-replay refresh traffic to pointer size.
//!
//! A captured graph refreshes each external input by copying its bytes into
//! placeholder storage. Indirection replaces that data copy with one 8-byte
//! pointer-cell update: kernels consume the cell, the cell names the live
//! tensor, and the replay-time work per external drops from tensor-sized to
//! pointer-sized.
//!
//! Kernels marked rewritable are rebound directly to the cell. Opaque
//! kernels cannot be rebound, so a prelude step patches their recorded
//! parameter buffers at replay time; the byte offset to patch is recovered
//! by scanning the recorded buffer for the placeholder's address pattern.
//! If that pattern is not unique the whole placeholder falls back to the
//! data copy — patching a wrong slot would corrupt the launch.

use serde::Serialize;
use thiserror::Error;

use crate::capture::{
    CapturedGraph, CopyAction, Direction, Patch, PiFallback, PlaceholderRole, PointerCell,
    PreludePlan,
};
use crate::costsim::CostModel;
use crate::ir::*;
use crate::rng::synth_addr;

/// Recorded parameter buffer of one kernel launch: every slot is 8 bytes
/// (f64 scalars, 8-byte pointers), laid out in slot order.
#[derive(Debug, Clone)]
pub struct ParamBufferImage {
    pub kernel: NodeId,
    pub bytes: Vec<u8>,
}

pub fn build_param_image(node: &Node) -> ParamBufferImage {
    let mut params: Vec<&ParamBinding> = node.params().iter().collect();
    params.sort_by_key(|p| p.slot);
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in &params {
        let word: u64 = match &p.kind {
            ParamKind::DevicePtr(t) | ParamKind::HostPtr(t) => synth_addr(*t),
            ParamKind::ScalarByValue { value, .. } => value.to_bits(),
            ParamKind::PtrCell(c) => synth_addr(*c ^ u64::MAX),
        };
        bytes.extend_from_slice(&word.to_le_bytes());
    }
    ParamBufferImage {
        kernel: node.id,
        bytes,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum OffsetError {
    #[error("address pattern absent from parameter buffer")]
    NotFound,
    #[error("address pattern at {0:?}: ambiguous, refusing to patch")]
    OffsetAmbiguous(Vec<u64>),
}

/// Locate the unique 8-aligned offset holding `addr`'s byte pattern.
pub fn find_param_offset(image: &ParamBufferImage, addr: u64) -> Result<u64, OffsetError> {
    let needle = addr.to_le_bytes();
    let mut hits = Vec::new();
    let mut off = 0usize;
    while off + 8 <= image.bytes.len() {
        if image.bytes[off..off + 8] == needle {
            hits.push(off as u64);
        }
        off += 8;
    }
    match hits.len() {
        0 => Err(OffsetError::NotFound),
        1 => Ok(hits[0]),
        _ => Err(OffsetError::OffsetAmbiguous(hits)),
    }
}

/// Apply indirection to every data placeholder of a captured graph whose
/// consumers are all kernel launches. Returns the rewritten graph; the input
/// is left untouched so callers can compare both.
pub fn apply_pi(cg: &CapturedGraph, program: &Program, cost: &CostModel) -> CapturedGraph {
    let mut out = cg.clone();
    let block_index = program
        .blocks
        .iter()
        .position(|b| b.id == cg.block)
        .unwrap_or(0);
    let mut ids = IdAlloc::new(program, IdLane::Indirection, block_index);
    let mut all_patches: Vec<Patch> = Vec::new();

    for ai in 0..out.copy_plan.len() {
        let ph_id = out.copy_plan[ai].placeholder;
        let pi = out
            .placeholders
            .iter()
            .position(|p| p.id == ph_id)
            .expect("copy action names a placeholder");
        if out.placeholders[pi].role != PlaceholderRole::Data {
            continue;
        }
        let backing = out.placeholders[pi].backing;

        if out.mirrors.iter().any(|(b, _)| *b == backing) {
            out.fallbacks.push(PiFallback {
                placeholder: ph_id,
                reason: "block writes the placeholder; the data copy must stay".into(),
            });
            continue;
        }
        let non_kernel_consumer = out.nodes.iter().any(|n| match &n.op {
            NodeOp::MemCopy { src, dst, .. } => *src == backing || *dst == backing,
            NodeOp::Alloc { tensor } | NodeOp::Free { tensor } => *tensor == backing,
            _ => false,
        });
        if non_kernel_consumer {
            out.fallbacks.push(PiFallback {
                placeholder: ph_id,
                reason: "a non-kernel node consumes the placeholder".into(),
            });
            continue;
        }

        // Plan first, mutate after: an ambiguous offset anywhere reverts the
        // whole placeholder.
        let mut rebinds: Vec<(NodeId, usize)> = Vec::new();
        let mut patches: Vec<Patch> = Vec::new();
        let mut abort: Option<String> = None;
        for n in &out.nodes {
            let NodeOp::KernelLaunch {
                rewritable, params, ..
            } = &n.op
            else {
                continue;
            };
            for p in params {
                if p.kind != ParamKind::DevicePtr(backing) {
                    continue;
                }
                if *rewritable {
                    rebinds.push((n.id, p.slot));
                } else {
                    let image = build_param_image(n);
                    match find_param_offset(&image, synth_addr(backing)) {
                        Ok(off) => patches.push(Patch {
                            kernel: n.id,
                            param_buffer_offset: off,
                            cell: 0, // assigned below
                        }),
                        Err(e) => {
                            abort = Some(format!("kernel {}: {e}", n.id));
                            break;
                        }
                    }
                }
            }
            if abort.is_some() {
                break;
            }
        }
        if let Some(reason) = abort {
            out.fallbacks.push(PiFallback {
                placeholder: ph_id,
                reason,
            });
            continue;
        }
        if rebinds.is_empty() && patches.is_empty() {
            continue;
        }

        let cell = ids.fresh();
        out.cells.push(PointerCell {
            id: cell,
            initial_target: out.placeholders[pi].source,
            recorded_addr: synth_addr(backing),
        });
        for (node_id, slot) in rebinds {
            let n = out.nodes.iter_mut().find(|n| n.id == node_id).unwrap();
            let NodeOp::KernelLaunch { params, .. } = &mut n.op else {
                unreachable!()
            };
            let p = params.iter_mut().find(|p| p.slot == slot).unwrap();
            p.kind = ParamKind::PtrCell(cell);
        }
        for mut patch in patches {
            patch.cell = cell;
            all_patches.push(patch);
        }
        out.placeholders[pi].role = PlaceholderRole::PointerCell;
        out.placeholders[pi].cell = Some(cell);
        out.copy_plan[ai] = CopyAction {
            placeholder: ph_id,
            source: out.copy_plan[ai].source,
            bytes: 8,
            direction: Direction::H2D,
        };
    }

    if !all_patches.is_empty() {
        let prelude_node = ids.fresh();
        let duration_us =
            cost.prelude_base_us + cost.prelude_per_patch_us * all_patches.len() as f64;
        out.nodes.insert(
            0,
            Node {
                id: prelude_node,
                op: NodeOp::PreludeKernel { duration_us },
            },
        );
        out.prelude = Some(PreludePlan {
            prelude_node,
            patches: all_patches,
            per_patch_cost_us: cost.prelude_per_patch_us,
        });
    }

    out.stats.bytes_copied_per_replay = out.copy_plan.iter().map(|c| c.bytes).sum();
    out
}
