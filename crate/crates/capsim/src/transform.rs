//! Rewrites that repair capture-blocking launch patterns.
//!
//! Three rules, applied per block in a fixed order until the block is
//! eligible or a round makes no progress:
//!
//! 1. **scalar cast** — a CPU scalar parameter becomes a one-element device
//!    tensor, refreshed from the live value before each block run;
//! 2. **memcopy hoist** — synchronous copies (and kernel reads) of
//!    iteration-invariant host data move to one-time init;
//! 3. **output relocation** — a host-resident block output moves to a device
//!    tensor, materialized back on the host by a copy that runs after the
//!    block, outside any captured region.
//!
//! In-place mutation of block inputs and explicit device synchronization
//! have no repair; their causes survive into the log.
//!
//! Every rewrite preserves eager semantics: a transformed program run
//! eagerly produces outputs equivalent to the original (the property tests
//! pin this down).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::eligibility::{analyze, Cause, CauseKind, EligibilityReport};
use crate::ir::*;

/// Rounds of (cast → hoist → relocate) attempted per block before giving up.
pub const MAX_PASSES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    ScalarCast,
    MemcopyHoist,
    OutputRelocation,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformAction {
    pub block: BlockId,
    pub kind: TransformKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensor: Option<TensorId>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnrepairedCause {
    pub block: BlockId,
    pub cause: Cause,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TransformLog {
    pub actions: Vec<TransformAction>,
    pub unrepaired: Vec<UnrepairedCause>,
    pub passes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformOutcome {
    pub program: Program,
    pub log: TransformLog,
    /// Post-transform eligibility, one report per block.
    pub reports: Vec<EligibilityReport>,
}

pub fn why_unrepaired(kind: CauseKind) -> &'static str {
    match kind {
        CauseKind::InputMutation => {
            "in-place mutation of a block input; replay could not restore the consumed value"
        }
        CauseKind::DeviceSync => "explicit device synchronization cannot run inside a graph",
        CauseKind::SyncMemcopy => {
            "copy source varies per iteration; hoisting requires iteration-invariant data"
        }
        CauseKind::CpuTensorParam => {
            "host tensor varies per iteration; staging requires iteration-invariant data"
        }
        CauseKind::CpuScalarParam => "scalar cast did not apply",
        CauseKind::HostOutput => "output relocation did not apply",
    }
}

/// Run the full repair loop over every block of the program.
pub fn transform_until_eligible(program: &Program) -> TransformOutcome {
    let mut p = program.clone();
    let mut log = TransformLog::default();
    let ids: Vec<BlockId> = p.blocks.iter().map(|b| b.id).collect();
    for bid in ids {
        transform_block(&mut p, bid, &mut log);
    }
    let reports = p.blocks.iter().map(|b| analyze(b, &p)).collect();
    TransformOutcome {
        program: p,
        log,
        reports,
    }
}

fn transform_block(p: &mut Program, bid: BlockId, log: &mut TransformLog) {
    let idx = match p.blocks.iter().position(|b| b.id == bid) {
        Some(i) => i,
        None => return,
    };
    for _ in 0..MAX_PASSES {
        if analyze(&p.blocks[idx], p).eligible {
            return;
        }
        let before = log.actions.len();
        scalar_cast_pass(p, idx, log);
        hoist_pass(p, idx, log);
        relocate_pass(p, idx, log);
        log.passes += 1;
        if log.actions.len() == before {
            break; // no rule fired; the rest is unrepairable
        }
    }
    let report = analyze(&p.blocks[idx], p);
    for cause in report.causes {
        let reason = why_unrepaired(cause.kind).to_string();
        log.unrepaired.push(UnrepairedCause {
            block: bid,
            cause,
            reason,
        });
    }
}

// ── Rule 1: scalar cast ─────────────────────────────────────────────────────

fn scalar_cast_pass(p: &mut Program, idx: usize, log: &mut TransformLog) {
    let targets: Vec<(NodeId, usize)> = analyze(&p.blocks[idx], p)
        .causes
        .iter()
        .filter(|c| c.kind == CauseKind::CpuScalarParam)
        .filter_map(|c| c.slot.map(|s| (c.node, s)))
        .collect();
    if targets.is_empty() {
        return;
    }
    let bid = p.blocks[idx].id;
    let mut ids = IdAlloc::new(p, IdLane::Transform, idx);
    // One device tensor per live scalar input; by-value constants get their
    // own cell each.
    let mut shared: BTreeMap<u64, TensorId> = BTreeMap::new();

    for (node_id, slot) in targets {
        let node = p.blocks[idx]
            .nodes
            .iter()
            .find(|n| n.id == node_id)
            .expect("cause names a block node");
        let Some(param) = node.params().iter().find(|b| b.slot == slot) else {
            continue;
        };
        let ParamKind::ScalarByValue { value, input } = param.kind else {
            continue;
        };

        let existing = input.and_then(|i| shared.get(&i).copied());
        let t = match existing {
            Some(t) => t,
            None => {
                let t = ids.fresh();
                p.tensors.push(TensorDesc {
                    id: t,
                    device: Device::Device,
                    elem_size: 8,
                    num_elems: 1,
                    is_scalar: true,
                });
                p.init.push(Node {
                    id: ids.fresh(),
                    op: NodeOp::Alloc { tensor: t },
                });
                p.blocks[idx].scalar_refreshes.push(ScalarRefresh {
                    tensor: t,
                    init_value: value,
                    input,
                });
                if let Some(i) = input {
                    shared.insert(i, t);
                }
                t
            }
        };

        // Re-borrow: the pushes above ended the node borrow.
        let node = p.blocks[idx]
            .nodes
            .iter_mut()
            .find(|n| n.id == node_id)
            .unwrap();
        let NodeOp::KernelLaunch { params, reads, .. } = &mut node.op else {
            unreachable!()
        };
        let param = params.iter_mut().find(|b| b.slot == slot).unwrap();
        param.kind = ParamKind::DevicePtr(t);
        reads.insert(t);

        log.actions.push(TransformAction {
            block: bid,
            kind: TransformKind::ScalarCast,
            node: Some(node_id),
            slot: Some(slot),
            tensor: Some(t),
            detail: format!("scalar slot {slot} cast to one-element device tensor {t}"),
        });
    }
}

// ── Rule 2: memcopy hoist ───────────────────────────────────────────────────

fn hoist_pass(p: &mut Program, idx: usize, log: &mut TransformLog) {
    let causes = analyze(&p.blocks[idx], p).causes;
    let bid = p.blocks[idx].id;

    // 2a. Synchronous copies whose source never changes after init.
    let sync_copies: Vec<NodeId> = causes
        .iter()
        .filter(|c| c.kind == CauseKind::SyncMemcopy)
        .map(|c| c.node)
        .collect();
    for node_id in sync_copies {
        let Some(pos) = p.blocks[idx].nodes.iter().position(|n| n.id == node_id) else {
            continue;
        };
        let NodeOp::MemCopy { src, dst, .. } = p.blocks[idx].nodes[pos].op else {
            continue;
        };
        if !p.tensor_is_constant(src) {
            continue;
        }
        // The copy must be dst's only writer anywhere (its alloc moves along
        // with it), and dst must not be provisioned per iteration, or moving
        // the copy to init changes meaning.
        let other_writer = p.blocks.iter().any(|b| {
            b.nodes.iter().any(|n| {
                n.id != node_id
                    && !matches!(n.op, NodeOp::Alloc { tensor } if tensor == dst)
                    && n.write_set().contains(&dst)
            }) || b.input_tensors().contains(&dst)
        });
        if other_writer || matches!(p.tensor_rule(dst), Some(ValueRule::PerIteration)) {
            continue;
        }
        let copy = p.blocks[idx].nodes.remove(pos);
        if let Some(a) = p.blocks[idx]
            .nodes
            .iter()
            .position(|n| matches!(n.op, NodeOp::Alloc { tensor } if tensor == dst))
        {
            let alloc = p.blocks[idx].nodes.remove(a);
            p.init.push(alloc);
        }
        p.init.push(copy);
        log.actions.push(TransformAction {
            block: bid,
            kind: TransformKind::MemcopyHoist,
            node: Some(node_id),
            slot: None,
            tensor: Some(dst),
            detail: format!("sync copy of iteration-invariant tensor {src} hoisted to init"),
        });
    }

    // 2b. Kernels reading iteration-invariant host tensors: stage the data
    // on device once and rebind every consumer program-wide.
    let host_reads: Vec<(NodeId, Option<usize>, TensorId)> = causes
        .iter()
        .filter(|c| c.kind == CauseKind::CpuTensorParam)
        .filter_map(|c| c.tensor.map(|t| (c.node, c.slot, t)))
        .collect();
    if host_reads.is_empty() {
        return;
    }
    let mut ids = IdAlloc::new(p, IdLane::Transform, idx);
    let mut staged: BTreeMap<TensorId, TensorId> = BTreeMap::new();
    for (node_id, slot, t) in host_reads {
        if !p.tensor_is_constant(t) {
            continue;
        }
        let Some(desc) = p.tensors.iter().find(|d| d.id == t).cloned() else {
            continue;
        };
        if desc.device != Device::Host {
            continue;
        }
        let d = match staged.get(&t) {
            Some(&d) => d,
            None => {
                let d = ids.fresh();
                p.tensors.push(TensorDesc {
                    id: d,
                    device: Device::Device,
                    ..desc
                });
                p.init.push(Node {
                    id: ids.fresh(),
                    op: NodeOp::Alloc { tensor: d },
                });
                p.init.push(Node {
                    id: ids.fresh(),
                    op: NodeOp::MemCopy {
                        src: t,
                        dst: d,
                        sync: false,
                    },
                });
                staged.insert(t, d);
                d
            }
        };
        for b in p.blocks.iter_mut() {
            for n in b.nodes.iter_mut() {
                if let NodeOp::KernelLaunch { params, reads, .. } = &mut n.op {
                    let mut hit = false;
                    for param in params.iter_mut() {
                        if param.kind == ParamKind::HostPtr(t) {
                            param.kind = ParamKind::DevicePtr(d);
                            hit = true;
                        }
                    }
                    if reads.remove(&t) {
                        hit = true;
                    }
                    if hit {
                        reads.insert(d);
                    }
                }
            }
        }
        log.actions.push(TransformAction {
            block: bid,
            kind: TransformKind::MemcopyHoist,
            node: Some(node_id),
            slot,
            tensor: Some(d),
            detail: format!("host tensor {t} staged to device tensor {d} in init"),
        });
    }
}

// ── Rule 3: output relocation ───────────────────────────────────────────────

fn relocate_pass(p: &mut Program, idx: usize, log: &mut TransformLog) {
    let has_host_output_cause = analyze(&p.blocks[idx], p)
        .causes
        .iter()
        .any(|c| c.kind == CauseKind::HostOutput);
    if !has_host_output_cause {
        return;
    }
    let bid = p.blocks[idx].id;
    let descs: BTreeMap<TensorId, TensorDesc> = p
        .tensor_map()
        .into_iter()
        .map(|(k, v)| (k, v.clone()))
        .collect();
    let host_outputs: Vec<TensorId> = p.blocks[idx]
        .outputs
        .iter()
        .copied()
        .filter(|t| descs.get(t).map(|d| d.device) == Some(Device::Host))
        .filter(|t| {
            p.blocks[idx]
                .nodes
                .iter()
                .any(|n| n.write_set().contains(t))
        })
        .collect();
    if host_outputs.is_empty() {
        return;
    }
    let mut ids = IdAlloc::new(p, IdLane::Transform, idx);

    for h in host_outputs {
        let block = &p.blocks[idx];
        let writers: Vec<usize> = block
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.write_set().contains(&h))
            .map(|(i, _)| i)
            .collect();
        let read_in_block = block.nodes.iter().any(|n| n.read_set().contains(&h));

        // Sole device-to-host copy, nothing reads h inside the block: the
        // copy itself moves outside the captured region.
        if let [w] = writers[..] {
            if let NodeOp::MemCopy { src, dst, .. } = p.blocks[idx].nodes[w].op {
                let src_on_device = descs.get(&src).map(|d| d.device) == Some(Device::Device);
                if dst == h && src_on_device && !read_in_block {
                    let removed = p.blocks[idx].nodes.remove(w);
                    p.blocks[idx]
                        .post_replay_copies
                        .push(PostReplayCopy { src, dst: h });
                    log.actions.push(TransformAction {
                        block: bid,
                        kind: TransformKind::OutputRelocation,
                        node: Some(removed.id),
                        slot: None,
                        tensor: Some(h),
                        detail: format!(
                            "device-to-host copy of output {h} moved after the block"
                        ),
                    });
                    continue;
                }
            }
        }

        // General case: writers produce a fresh device tensor, copied back
        // to the host object after the block.
        let hd = descs.get(&h).expect("output tensor is declared").clone();
        let d = ids.fresh();
        p.tensors.push(TensorDesc {
            id: d,
            device: Device::Device,
            ..hd
        });
        for n in p.blocks[idx].nodes.iter_mut() {
            match &mut n.op {
                NodeOp::KernelLaunch {
                    params,
                    reads,
                    writes,
                    ..
                } => {
                    for param in params.iter_mut() {
                        if param.kind == ParamKind::HostPtr(h) {
                            param.kind = ParamKind::DevicePtr(d);
                        }
                    }
                    if reads.remove(&h) {
                        reads.insert(d);
                    }
                    if writes.remove(&h) {
                        writes.insert(d);
                    }
                }
                NodeOp::MemCopy { src, dst, sync } => {
                    if *dst == h {
                        *dst = d;
                        *sync = false; // now feeds the post-block copy instead
                    }
                    if *src == h {
                        *src = d;
                    }
                }
                NodeOp::Alloc { tensor } | NodeOp::Free { tensor } => {
                    if *tensor == h {
                        *tensor = d;
                    }
                }
                _ => {}
            }
        }
        p.blocks[idx]
            .post_replay_copies
            .push(PostReplayCopy { src: d, dst: h });
        log.actions.push(TransformAction {
            block: bid,
            kind: TransformKind::OutputRelocation,
            node: None,
            slot: None,
            tensor: Some(d),
            detail: format!("host output {h} relocated to device tensor {d}"),
        });
    }
}
