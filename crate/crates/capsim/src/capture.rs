//! Graph capture: freeze a block into a replayable artifact.
//!
//! Capture walks the block once, rebinding every device-pointer parameter to
//! a placeholder tensor. Parameters fall into three classes:
//!
//! * **external** — supplied anew each iteration (block inputs, per-iteration
//!   tensors, scalar-cast refresh targets). Each distinct external tensor
//!   gets a Data placeholder plus a device-to-device copy refreshed before
//!   every replay.
//! * **internal** — produced by a preceding node in the same block. Rebound
//!   to the producer's placeholder; no copy, the producer writes it directly.
//! * **static** — iteration-invariant program state (weights, hoisted
//!   constants). Recorded by value with no placeholder and no copy.
//!
//! Scalars are recorded by value — the stale-parameter hazard this whole
//! pipeline exists to fix — and host references are recorded by address,
//! which is the dangling-pointer hazard replay can trip over.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::eligibility::{analyze, Cause};
use crate::ir::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    H2D,
    D2H,
    D2D,
    H2H,
}

pub fn direction(src: Device, dst: Device) -> Direction {
    match (src, dst) {
        (Device::Host, Device::Device) => Direction::H2D,
        (Device::Device, Device::Host) => Direction::D2H,
        (Device::Device, Device::Device) => Direction::D2D,
        (Device::Host, Device::Host) => Direction::H2H,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderRole {
    Data,
    PointerCell,
}

#[derive(Debug, Clone, Serialize)]
pub struct Placeholder {
    pub id: u64,
    /// Fresh device tensor backing this placeholder. Pointer-cell
    /// placeholders have no backing storage beyond the 8-byte cell.
    pub backing: TensorId,
    pub size_bytes: u64,
    pub role: PlaceholderRole,
    /// Original tensor this placeholder stands in for.
    pub source: TensorId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CopySource {
    InputTensor(TensorId),
}

#[derive(Debug, Clone, Serialize)]
pub struct CopyAction {
    pub placeholder: u64,
    pub source: CopySource,
    pub bytes: u64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointerCell {
    pub id: CellId,
    pub initial_target: TensorId,
    /// Address stand-in that appeared in recorded parameter buffers.
    pub recorded_addr: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Patch {
    pub kernel: NodeId,
    pub param_buffer_offset: u64,
    pub cell: CellId,
}

#[derive(Debug, Clone, Serialize)]
pub struct PreludePlan {
    pub prelude_node: NodeId,
    pub patches: Vec<Patch>,
    pub per_patch_cost_us: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PiFallback {
    pub placeholder: u64,
    pub reason: String,
}

/// Parameter counts are over distinct bound tensors, the unit the byte
/// accounting uses: one external tensor = one placeholder = one copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CaptureStats {
    pub external_param_count: u64,
    pub internal_param_count: u64,
    pub static_param_count: u64,
    pub bytes_copied_per_replay: u64,
}

/// Byte/direction cost of a recorded MemCopy node, resolved at capture time
/// so the simulator needs no program context.
#[derive(Debug, Clone, Serialize)]
pub struct NodeCopyCost {
    pub node: NodeId,
    pub bytes: u64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapturedGraph {
    pub block: BlockId,
    /// Frozen node list in replay order; a prelude, if present, is first.
    pub nodes: Vec<Node>,
    pub placeholders: Vec<Placeholder>,
    pub placeholder_descs: Vec<TensorDesc>,
    pub copy_plan: Vec<CopyAction>,
    pub cells: Vec<PointerCell>,
    pub prelude: Option<PreludePlan>,
    pub scalar_refreshes: Vec<ScalarRefresh>,
    pub post_replay_copies: Vec<PostReplayCopy>,
    pub outputs: Vec<TensorId>,
    /// (placeholder backing, original tensor) pairs for tensors the block
    /// writes: replay mirrors results back under the original ids.
    pub mirrors: Vec<(TensorId, TensorId)>,
    pub uses_rng: bool,
    pub node_copy_costs: Vec<NodeCopyCost>,
    pub fallbacks: Vec<PiFallback>,
    pub stats: CaptureStats,
}

impl CapturedGraph {
    pub fn placeholder(&self, id: u64) -> Option<&Placeholder> {
        self.placeholders.iter().find(|p| p.id == id)
    }

    /// Map a parameter-buffer byte offset back to the slot it patches.
    /// Slots are 8-byte aligned and, with f64 scalars and 8-byte pointers,
    /// exactly 8 bytes wide.
    pub fn slot_of_offset(&self, kernel: NodeId, offset: u64) -> Option<usize> {
        let node = self.nodes.iter().find(|n| n.id == kernel)?;
        let mut params: Vec<&ParamBinding> = node.params().iter().collect();
        params.sort_by_key(|p| p.slot);
        params.get((offset / 8) as usize).map(|p| p.slot)
    }

    pub fn kernel_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_kernel()).count()
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("block {block} is not capture-eligible ({} causes)", causes.len())]
    NotEligible { block: BlockId, causes: Vec<Cause> },
}

/// Capture an eligible block.
pub fn capture(block: &Block, program: &Program) -> Result<CapturedGraph, CaptureError> {
    let report = analyze(block, program);
    if !report.eligible {
        return Err(CaptureError::NotEligible {
            block: block.id,
            causes: report.causes,
        });
    }
    Ok(capture_unchecked(block, program))
}

/// Capture without the eligibility guard. Exists so the stale-scalar and
/// dangling-host-pointer replay hazards can be demonstrated on blocks the
/// analysis would reject.
pub fn capture_naive(block: &Block, program: &Program) -> CapturedGraph {
    capture_unchecked(block, program)
}

fn capture_unchecked(block: &Block, program: &Program) -> CapturedGraph {
    let descs = program.tensor_map();
    let block_index = program
        .blocks
        .iter()
        .position(|b| b.id == block.id)
        .unwrap_or(0);
    let mut ids = IdAlloc::new(program, IdLane::Capture, block_index);

    // Tensors supplied anew each iteration.
    let mut externals: BTreeSet<TensorId> = block.input_tensors();
    externals.extend(block.scalar_refreshes.iter().map(|r| r.tensor));
    for ii in &program.iteration_inputs {
        if let IterationInput::Tensor {
            tensor,
            rule: ValueRule::PerIteration,
        } = ii
        {
            externals.insert(*tensor);
        }
    }

    let mut placeholders: Vec<Placeholder> = Vec::new();
    let mut placeholder_descs: Vec<TensorDesc> = Vec::new();
    let mut by_source: BTreeMap<TensorId, usize> = BTreeMap::new();
    let mut copy_plan: Vec<CopyAction> = Vec::new();
    let mut copied: BTreeSet<TensorId> = BTreeSet::new();
    let mut statics: BTreeSet<TensorId> = BTreeSet::new();
    let mut written: BTreeSet<TensorId> = BTreeSet::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut node_copy_costs: Vec<NodeCopyCost> = Vec::new();
    let mut uses_rng_any = false;

    let get_placeholder = |t: TensorId,
                               placeholders: &mut Vec<Placeholder>,
                               placeholder_descs: &mut Vec<TensorDesc>,
                               by_source: &mut BTreeMap<TensorId, usize>,
                               ids: &mut IdAlloc|
     -> usize {
        if let Some(&i) = by_source.get(&t) {
            return i;
        }
        let d = descs.get(&t).expect("placeholder source tensor is declared");
        let backing = ids.fresh();
        let ph = Placeholder {
            id: ids.fresh(),
            backing,
            size_bytes: d.total_bytes(),
            role: PlaceholderRole::Data,
            source: t,
            cell: None,
        };
        placeholder_descs.push(TensorDesc {
            id: backing,
            device: Device::Device,
            elem_size: d.elem_size,
            num_elems: d.num_elems,
            is_scalar: d.is_scalar,
        });
        placeholders.push(ph);
        by_source.insert(t, placeholders.len() - 1);
        placeholders.len() - 1
    };

    for node in &block.nodes {
        let mut frozen = node.clone();
        match &mut frozen.op {
            NodeOp::KernelLaunch {
                params, uses_rng, ..
            } => {
                uses_rng_any |= *uses_rng;
                let self_writes = node.write_set();
                for p in params.iter_mut() {
                    match p.kind.clone() {
                        ParamKind::DevicePtr(t) => {
                            if written.contains(&t)
                                || (self_writes.contains(&t) && !externals.contains(&t))
                            {
                                // Produced inside the graph (by an earlier
                                // node or by this one): reads and writes both
                                // land on the same backing, no refresh copy.
                                let i = get_placeholder(
                                    t,
                                    &mut placeholders,
                                    &mut placeholder_descs,
                                    &mut by_source,
                                    &mut ids,
                                );
                                p.kind = ParamKind::DevicePtr(placeholders[i].backing);
                                p.mutability = Some(Mutability::Internal);
                            } else if externals.contains(&t) {
                                let i = get_placeholder(
                                    t,
                                    &mut placeholders,
                                    &mut placeholder_descs,
                                    &mut by_source,
                                    &mut ids,
                                );
                                p.kind = ParamKind::DevicePtr(placeholders[i].backing);
                                p.mutability = Some(Mutability::External);
                                if copied.insert(t) {
                                    copy_plan.push(CopyAction {
                                        placeholder: placeholders[i].id,
                                        source: CopySource::InputTensor(t),
                                        bytes: placeholders[i].size_bytes,
                                        direction: Direction::D2D,
                                    });
                                }
                            } else {
                                statics.insert(t);
                            }
                        }
                        ParamKind::ScalarByValue { value, .. } => {
                            // Freeze: sever the live-input link, keep the value.
                            p.kind = ParamKind::ScalarByValue { value, input: None };
                        }
                        // Host pointers are recorded by address (naive
                        // capture only); cells cannot exist before PI.
                        ParamKind::HostPtr(_) | ParamKind::PtrCell(_) => {}
                    }
                }
            }
            NodeOp::MemCopy { src, dst, .. } => {
                let src_dev = descs.get(src).map(|d| d.device).unwrap_or(Device::Device);
                let dst_dev = descs.get(dst).map(|d| d.device).unwrap_or(Device::Device);
                let bytes = descs.get(src).map(|d| d.total_bytes()).unwrap_or(0);
                node_copy_costs.push(NodeCopyCost {
                    node: node.id,
                    bytes,
                    direction: direction(src_dev, dst_dev),
                });
                if src_dev == Device::Device {
                    let t = *src;
                    if written.contains(&t) {
                        let i = get_placeholder(
                            t,
                            &mut placeholders,
                            &mut placeholder_descs,
                            &mut by_source,
                            &mut ids,
                        );
                        *src = placeholders[i].backing;
                    } else if externals.contains(&t) {
                        let i = get_placeholder(
                            t,
                            &mut placeholders,
                            &mut placeholder_descs,
                            &mut by_source,
                            &mut ids,
                        );
                        *src = placeholders[i].backing;
                        if copied.insert(t) {
                            copy_plan.push(CopyAction {
                                placeholder: placeholders[i].id,
                                source: CopySource::InputTensor(t),
                                bytes: placeholders[i].size_bytes,
                                direction: Direction::D2D,
                            });
                        }
                    } else {
                        statics.insert(t);
                    }
                }
                if dst_dev == Device::Device {
                    let i = get_placeholder(
                        *dst,
                        &mut placeholders,
                        &mut placeholder_descs,
                        &mut by_source,
                        &mut ids,
                    );
                    *dst = placeholders[i].backing;
                }
                // Host-side endpoints keep their recorded address.
            }
            NodeOp::Alloc { tensor } => {
                let dev = descs.get(tensor).map(|d| d.device).unwrap_or(Device::Device);
                if dev == Device::Device {
                    let i = get_placeholder(
                        *tensor,
                        &mut placeholders,
                        &mut placeholder_descs,
                        &mut by_source,
                        &mut ids,
                    );
                    *tensor = placeholders[i].backing;
                }
            }
            NodeOp::Free { tensor } => {
                if let Some(&i) = by_source.get(tensor) {
                    *tensor = placeholders[i].backing;
                }
            }
            NodeOp::DeviceSync | NodeOp::PreludeKernel { .. } => {}
        }
        written.extend(node.write_set());
        nodes.push(frozen);
    }

    let mirrors: Vec<(TensorId, TensorId)> = placeholders
        .iter()
        .filter(|p| written.contains(&p.source))
        .map(|p| (p.backing, p.source))
        .collect();

    let bytes: u64 = copy_plan.iter().map(|c| c.bytes).sum();
    let stats = CaptureStats {
        external_param_count: copied.len() as u64,
        internal_param_count: placeholders
            .iter()
            .filter(|p| !copied.contains(&p.source))
            .count() as u64,
        static_param_count: statics.len() as u64,
        bytes_copied_per_replay: bytes,
    };

    CapturedGraph {
        block: block.id,
        nodes,
        placeholders,
        placeholder_descs,
        copy_plan,
        cells: Vec::new(),
        prelude: None,
        scalar_refreshes: block.scalar_refreshes.clone(),
        post_replay_copies: block.post_replay_copies.clone(),
        outputs: block.outputs.clone(),
        mirrors,
        uses_rng: uses_rng_any,
        node_copy_costs,
        fallbacks: Vec::new(),
        stats,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub captured_kernels: u64,
    pub total_kernels: u64,
    pub percent: f64,
}

/// Share of per-iteration kernel launches that run inside captured graphs.
pub fn coverage(program: &Program, captured: &BTreeSet<BlockId>) -> CoverageReport {
    let total: u64 = program.blocks.iter().map(|b| b.kernel_count() as u64).sum();
    let inside: u64 = program
        .blocks
        .iter()
        .filter(|b| captured.contains(&b.id))
        .map(|b| b.kernel_count() as u64)
        .sum();
    CoverageReport {
        captured_kernels: inside,
        total_kernels: total,
        percent: if total == 0 {
            0.0
        } else {
            100.0 * inside as f64 / total as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{outputs_equivalent, run_eager, run_replay, InputPlan};
    use crate::ir::{Opcode, ParamBinding, ParamKind};

    fn desc(id: TensorId, device: Device, n: u64) -> TensorDesc {
        TensorDesc {
            id,
            device,
            elem_size: 8,
            num_elems: n,
            is_scalar: false,
        }
    }

    /// k1: add(in1, in2) -> t3 ; k2: scale-free copy t3 -> t4 (out)
    fn chain_program() -> Program {
        Program {
            tensors: vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
                desc(4, Device::Device, 4),
            ],
            blocks: vec![Block {
                id: 1,
                inputs: vec![
                    ParamBinding::new(0, ParamKind::DevicePtr(1)),
                    ParamBinding::new(1, ParamKind::DevicePtr(2)),
                ],
                nodes: vec![
                    Node {
                        id: 1,
                        op: NodeOp::Alloc { tensor: 3 },
                    },
                    Node {
                        id: 2,
                        op: NodeOp::Alloc { tensor: 4 },
                    },
                    Node::kernel(
                        3,
                        3,
                        Opcode::ElemAdd,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(1)),
                            ParamBinding::new(1, ParamKind::DevicePtr(2)),
                            ParamBinding::new(2, ParamKind::DevicePtr(3)),
                        ],
                        2.0,
                    ),
                    Node::kernel(
                        4,
                        4,
                        Opcode::Copy,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(3)),
                            ParamBinding::new(1, ParamKind::DevicePtr(4)),
                        ],
                        2.0,
                    ),
                ],
                outputs: vec![4],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            iterations: 3,
            seed: 21,
            ..Default::default()
        }
    }

    #[test]
    fn consumer_of_producer_output_is_internal() {
        let p = chain_program();
        let cg = capture(&p.blocks[0], &p).unwrap();
        // Two external inputs copied; t3 and t4 are internal.
        assert_eq!(cg.stats.external_param_count, 2);
        assert_eq!(cg.stats.internal_param_count, 2);
        assert_eq!(cg.copy_plan.len(), 2);
        assert_eq!(cg.stats.bytes_copied_per_replay, 2 * 32);
        // k2's input param was rebound to k1's output placeholder.
        let k2 = cg.nodes.iter().find(|n| n.id == 4).unwrap();
        let k1 = cg.nodes.iter().find(|n| n.id == 3).unwrap();
        assert_eq!(
            k2.params()[0].kind,
            k1.params()[2].kind,
            "consumer reads the producer's placeholder"
        );
        assert_eq!(k2.params()[0].mutability, Some(Mutability::Internal));
    }

    #[test]
    fn three_external_megabyte_tensors_copy_3145728_bytes() {
        let mb = 131_072; // f64 elems per MiB
        let p = Program {
            tensors: vec![
                desc(1, Device::Device, mb),
                desc(2, Device::Device, mb),
                desc(3, Device::Device, mb),
                desc(4, Device::Device, mb),
            ],
            blocks: vec![Block {
                id: 1,
                inputs: vec![
                    ParamBinding::new(0, ParamKind::DevicePtr(1)),
                    ParamBinding::new(1, ParamKind::DevicePtr(2)),
                    ParamBinding::new(2, ParamKind::DevicePtr(3)),
                ],
                nodes: vec![
                    Node {
                        id: 1,
                        op: NodeOp::Alloc { tensor: 4 },
                    },
                    Node::kernel(
                        2,
                        2,
                        Opcode::ElemAdd,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(1)),
                            ParamBinding::new(1, ParamKind::DevicePtr(2)),
                            ParamBinding::new(2, ParamKind::DevicePtr(4)),
                        ],
                        1.0,
                    ),
                    Node::kernel(
                        3,
                        3,
                        Opcode::ElemMul,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(4)),
                            ParamBinding::new(1, ParamKind::DevicePtr(3)),
                            ParamBinding::new(2, ParamKind::DevicePtr(4)),
                        ],
                        1.0,
                    ),
                ],
                outputs: vec![4],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            iterations: 1,
            seed: 1,
            ..Default::default()
        };
        // The in-place mul on t4 is internal (t4 written by the add first).
        let mut p = p;
        if let NodeOp::KernelLaunch {
            in_place,
            reads,
            writes,
            ..
        } = &mut p.blocks[0].nodes[2].op
        {
            *in_place = true;
            reads.insert(4);
            writes.insert(4);
        }
        let cg = capture(&p.blocks[0], &p).unwrap();
        assert_eq!(cg.stats.bytes_copied_per_replay, 3_145_728);
    }

    #[test]
    fn ineligible_block_is_refused() {
        let mut p = chain_program();
        p.blocks[0].nodes.push(Node {
            id: 99,
            op: NodeOp::DeviceSync,
        });
        let err = capture(&p.blocks[0], &p).unwrap_err();
        let CaptureError::NotEligible { block, causes } = err;
        assert_eq!(block, 1);
        assert_eq!(causes.len(), 1);
    }

    #[test]
    fn replay_matches_eager_on_eligible_block() {
        let p = chain_program();
        let cg = capture(&p.blocks[0], &p).unwrap();
        let plan = InputPlan::for_program(&p);
        let eager = run_eager(&p, &plan, 3).unwrap();
        let mut captured = BTreeMap::new();
        captured.insert(1u64, cg);
        let replay = run_replay(&p, &captured, &plan, 3).unwrap();
        outputs_equivalent(&eager, &replay).unwrap();
    }

    #[test]
    fn static_weights_get_no_copy() {
        // Weight tensor 5 lives in init (constant), read by the kernel.
        let mut p = chain_program();
        p.tensors.push(desc(5, Device::Device, 4));
        p.init.push(Node {
            id: 100,
            op: NodeOp::Alloc { tensor: 5 },
        });
        p.iteration_inputs.push(IterationInput::Tensor {
            tensor: 5,
            rule: ValueRule::Constant,
        });
        p.blocks[0].nodes[2] = Node::kernel(
            3,
            3,
            Opcode::ElemAdd,
            vec![
                ParamBinding::new(0, ParamKind::DevicePtr(1)),
                ParamBinding::new(1, ParamKind::DevicePtr(5)),
                ParamBinding::new(2, ParamKind::DevicePtr(3)),
            ],
            2.0,
        );
        let cg = capture(&p.blocks[0], &p).unwrap();
        assert_eq!(cg.stats.static_param_count, 1);
        assert_eq!(cg.stats.external_param_count, 1); // only input 1 copied
        let plan = InputPlan::for_program(&p);
        let eager = run_eager(&p, &plan, 2).unwrap();
        let mut captured = BTreeMap::new();
        captured.insert(1u64, cg);
        let replay = run_replay(&p, &captured, &plan, 2).unwrap();
        outputs_equivalent(&eager, &replay).unwrap();
    }

    #[test]
    fn naive_capture_freezes_scalars() {
        let p = Program {
            tensors: vec![desc(1, Device::Device, 4), desc(2, Device::Device, 4)],
            blocks: vec![Block {
                id: 1,
                inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
                nodes: vec![
                    Node {
                        id: 1,
                        op: NodeOp::Alloc { tensor: 2 },
                    },
                    Node::kernel(
                        2,
                        2,
                        Opcode::ScaleByScalar,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(1)),
                            ParamBinding::new(
                                1,
                                ParamKind::ScalarByValue {
                                    value: 2.0,
                                    input: Some(7),
                                },
                            ),
                            ParamBinding::new(2, ParamKind::DevicePtr(2)),
                        ],
                        1.0,
                    ),
                ],
                outputs: vec![2],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            iteration_inputs: vec![IterationInput::ScalarInput {
                id: 7,
                rule: ValueRule::PerIteration,
            }],
            iterations: 3,
            seed: 9,
            ..Default::default()
        };
        assert!(!analyze(&p.blocks[0], &p).eligible);
        let cg = capture_naive(&p.blocks[0], &p);
        let frozen = cg.nodes.iter().find(|n| n.id == 2).unwrap();
        assert_eq!(
            frozen.params()[1].kind,
            ParamKind::ScalarByValue {
                value: 2.0,
                input: None
            }
        );
    }

    #[test]
    fn dangling_host_ref_on_replay_after_free() {
        // Async H2D copy from a host tensor is capturable; freeing the host
        // tensor in init leaves the recorded address dangling at replay.
        let p = Program {
            tensors: vec![
                desc(1, Device::Host, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
            ],
            init: vec![
                Node {
                    id: 10,
                    op: NodeOp::Alloc { tensor: 1 },
                },
                Node {
                    id: 11,
                    op: NodeOp::Free { tensor: 1 },
                },
            ],
            blocks: vec![Block {
                id: 1,
                inputs: vec![],
                nodes: vec![
                    Node {
                        id: 1,
                        op: NodeOp::Alloc { tensor: 2 },
                    },
                    Node {
                        id: 2,
                        op: NodeOp::MemCopy {
                            src: 1,
                            dst: 2,
                            sync: false,
                        },
                    },
                    Node {
                        id: 3,
                        op: NodeOp::Alloc { tensor: 3 },
                    },
                    Node::kernel(
                        4,
                        4,
                        Opcode::Copy,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(2)),
                            ParamBinding::new(1, ParamKind::DevicePtr(3)),
                        ],
                        1.0,
                    ),
                ],
                outputs: vec![3],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            iterations: 1,
            seed: 3,
            ..Default::default()
        };
        let report = analyze(&p.blocks[0], &p);
        assert!(report.eligible, "async host copy should not block capture");
        let cg = capture(&p.blocks[0], &p).unwrap();
        let plan = InputPlan::for_program(&p);
        let mut captured = BTreeMap::new();
        captured.insert(1u64, cg);
        let err = run_replay(&p, &captured, &plan, 1).unwrap_err();
        assert!(
            matches!(
                err,
                crate::interp::ExecError::DanglingHostRef { tensor: 1, .. }
            ),
            "got {err:?}"
        );
    }

    #[test]
    fn coverage_counts_kernels_in_captured_blocks() {
        let mut p = chain_program();
        let mut other = p.blocks[0].clone();
        other.id = 2;
        other.nodes.push(Node {
            id: 50,
            op: NodeOp::DeviceSync,
        });
        // Re-id nodes to keep them unique.
        for (i, n) in other.nodes.iter_mut().enumerate() {
            n.id = 60 + i as u64;
        }
        p.blocks.push(other);
        let cov0 = coverage(&p, &BTreeSet::new());
        assert_eq!(cov0.percent, 0.0);
        let cov1 = coverage(&p, &BTreeSet::from([1]));
        assert_eq!(cov1.captured_kernels, 2);
        assert_eq!(cov1.total_kernels, 4);
        assert!((cov1.percent - 50.0).abs() < 1e-12);
    }
}
