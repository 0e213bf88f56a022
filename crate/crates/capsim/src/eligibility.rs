//! Capture-eligibility analysis.
//!
//! A block can be captured into a replayable graph only if nothing in it
//! depends on the CPU at replay time. The analysis reports every offending
//! construct at once — callers repair them in bulk, not one retry at a time.
//!
//! Async copies touching host memory are deliberately NOT causes: capture
//! records the host address and replay reads through it, which is exactly
//! the stale-pointer hazard the interpreter models as `DanglingHostRef`.

use serde::Serialize;

use crate::ir::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseKind {
    /// A kernel takes a host scalar by value; replay would freeze it.
    CpuScalarParam,
    /// A kernel reads a host-resident tensor.
    CpuTensorParam,
    /// Synchronous copies cannot be captured at all.
    SyncMemcopy,
    /// Explicit device synchronization cannot be captured.
    DeviceSync,
    /// A block output lives on the host.
    HostOutput,
    /// An in-place kernel mutates an external input. Detected, never repaired.
    InputMutation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cause {
    pub node: NodeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    pub kind: CauseKind,
    /// Tensor the cause is about, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensor: Option<TensorId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EligibilityReport {
    pub block: BlockId,
    pub eligible: bool,
    pub causes: Vec<Cause>,
}

/// Analyze one block. Returns all causes, sorted by (node, slot, kind).
pub fn analyze(block: &Block, program: &Program) -> EligibilityReport {
    let tensors = program.tensor_map();
    let device_of = |t: TensorId| tensors.get(&t).map(|d| d.device);
    let inputs = block.input_tensors();
    let mut causes = Vec::new();

    for n in &block.nodes {
        match &n.op {
            NodeOp::KernelLaunch {
                params,
                reads,
                writes,
                in_place,
                ..
            } => {
                let mut host_reads_covered = std::collections::BTreeSet::new();
                for p in params {
                    match &p.kind {
                        ParamKind::ScalarByValue { .. } => causes.push(Cause {
                            node: n.id,
                            slot: Some(p.slot),
                            kind: CauseKind::CpuScalarParam,
                            tensor: None,
                        }),
                        ParamKind::HostPtr(t) if reads.contains(t) => {
                            host_reads_covered.insert(*t);
                            causes.push(Cause {
                                node: n.id,
                                slot: Some(p.slot),
                                kind: CauseKind::CpuTensorParam,
                                tensor: Some(*t),
                            });
                        }
                        _ => {}
                    }
                }
                for t in reads {
                    if device_of(*t) == Some(Device::Host) && !host_reads_covered.contains(t) {
                        causes.push(Cause {
                            node: n.id,
                            slot: None,
                            kind: CauseKind::CpuTensorParam,
                            tensor: Some(*t),
                        });
                    }
                }
                if *in_place && writes.iter().any(|t| inputs.contains(t)) {
                    let t = writes.iter().find(|t| inputs.contains(t)).copied();
                    causes.push(Cause {
                        node: n.id,
                        slot: None,
                        kind: CauseKind::InputMutation,
                        tensor: t,
                    });
                }
            }
            NodeOp::MemCopy { sync: true, .. } => causes.push(Cause {
                node: n.id,
                slot: None,
                kind: CauseKind::SyncMemcopy,
                tensor: None,
            }),
            NodeOp::DeviceSync => causes.push(Cause {
                node: n.id,
                slot: None,
                kind: CauseKind::DeviceSync,
                tensor: None,
            }),
            _ => {}
        }
    }

    // Host-resident block outputs, attributed to every node that produces
    // bytes into them (kernels and copies; an alloc only reserves storage),
    // so dropping one producer never hides a cause on another.
    for &out in &block.outputs {
        if device_of(out) == Some(Device::Host) {
            for n in &block.nodes {
                let produces = match &n.op {
                    NodeOp::KernelLaunch { .. } | NodeOp::MemCopy { .. } => {
                        n.write_set().contains(&out)
                    }
                    _ => false,
                };
                if produces {
                    causes.push(Cause {
                        node: n.id,
                        slot: None,
                        kind: CauseKind::HostOutput,
                        tensor: Some(out),
                    });
                }
            }
        }
    }

    causes.sort_by(|a, b| {
        (a.node, a.slot, a.kind, a.tensor).cmp(&(b.node, b.slot, b.kind, b.tensor))
    });
    causes.dedup();
    EligibilityReport {
        block: block.id,
        eligible: causes.is_empty(),
        causes,
    }
}

/// Analyze every block of a program, in block order.
pub fn analyze_program(program: &Program) -> Vec<EligibilityReport> {
    program.blocks.iter().map(|b| analyze(b, program)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Device, Opcode, ParamBinding, ParamKind};
    use std::collections::BTreeSet;

    fn desc(id: TensorId, device: Device, n: u64) -> TensorDesc {
        TensorDesc {
            id,
            device,
            elem_size: 8,
            num_elems: n,
            is_scalar: false,
        }
    }

    fn base_program(block: Block, tensors: Vec<TensorDesc>) -> Program {
        Program {
            tensors,
            blocks: vec![block],
            ..Default::default()
        }
    }

    fn copy_kernel(id: NodeId, src: TensorId, dst: TensorId) -> Node {
        Node::kernel(
            id,
            id,
            Opcode::Copy,
            vec![
                ParamBinding::new(0, ParamKind::DevicePtr(src)),
                ParamBinding::new(1, ParamKind::DevicePtr(dst)),
            ],
            1.0,
        )
    }

    #[test]
    fn all_device_async_block_is_eligible() {
        let block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
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
                copy_kernel(4, 2, 3),
            ],
            outputs: vec![3],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(
            block,
            vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
            ],
        );
        let r = analyze(&p.blocks[0], &p);
        assert!(r.eligible, "causes: {:?}", r.causes);
    }

    #[test]
    fn sync_copy_plus_scalar_yields_exactly_two_causes() {
        let mut scale = Node::kernel(
            2,
            2,
            Opcode::ScaleByScalar,
            vec![
                ParamBinding::new(0, ParamKind::DevicePtr(2)),
                ParamBinding::new(
                    1,
                    ParamKind::ScalarByValue {
                        value: 0.5,
                        input: None,
                    },
                ),
                ParamBinding::new(2, ParamKind::DevicePtr(3)),
            ],
            1.0,
        );
        let _ = &mut scale;
        let block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(2))],
            nodes: vec![
                Node {
                    id: 1,
                    op: NodeOp::MemCopy {
                        src: 1,
                        dst: 4,
                        sync: true,
                    },
                },
                Node {
                    id: 3,
                    op: NodeOp::Alloc { tensor: 3 },
                },
                scale,
            ],
            outputs: vec![3],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(
            block,
            vec![
                desc(1, Device::Host, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
                desc(4, Device::Device, 4),
            ],
        );
        let r = analyze(&p.blocks[0], &p);
        assert_eq!(r.causes.len(), 2, "causes: {:?}", r.causes);
        let kinds: BTreeSet<CauseKind> = r.causes.iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            BTreeSet::from([CauseKind::SyncMemcopy, CauseKind::CpuScalarParam])
        );
    }

    #[test]
    fn each_cause_kind_in_isolation() {
        // CpuScalarParam
        let scalar_block = Block {
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
                                input: None,
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
        };
        let p = base_program(
            scalar_block,
            vec![desc(1, Device::Device, 4), desc(2, Device::Device, 4)],
        );
        let r = analyze(&p.blocks[0], &p);
        assert_eq!(r.causes.len(), 1);
        assert_eq!(r.causes[0].kind, CauseKind::CpuScalarParam);
        assert_eq!(r.causes[0].slot, Some(1));

        // CpuTensorParam via HostPtr read
        let host_read_block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
            nodes: vec![
                Node {
                    id: 1,
                    op: NodeOp::Alloc { tensor: 3 },
                },
                Node::kernel(
                    2,
                    2,
                    Opcode::ElemAdd,
                    vec![
                        ParamBinding::new(0, ParamKind::DevicePtr(1)),
                        ParamBinding::new(1, ParamKind::HostPtr(2)),
                        ParamBinding::new(2, ParamKind::DevicePtr(3)),
                    ],
                    1.0,
                ),
            ],
            outputs: vec![3],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(
            host_read_block,
            vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Host, 4),
                desc(3, Device::Device, 4),
            ],
        );
        let r = analyze(&p.blocks[0], &p);
        assert_eq!(r.causes.len(), 1);
        assert_eq!(r.causes[0].kind, CauseKind::CpuTensorParam);
        assert_eq!(r.causes[0].tensor, Some(2));

        // DeviceSync
        let sync_block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
            nodes: vec![
                Node {
                    id: 1,
                    op: NodeOp::Alloc { tensor: 2 },
                },
                copy_kernel_dev(2, 1, 2),
                Node {
                    id: 3,
                    op: NodeOp::DeviceSync,
                },
            ],
            outputs: vec![2],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(
            sync_block,
            vec![desc(1, Device::Device, 4), desc(2, Device::Device, 4)],
        );
        let r = analyze(&p.blocks[0], &p);
        assert_eq!(r.causes.len(), 1);
        assert_eq!(r.causes[0].kind, CauseKind::DeviceSync);

        // HostOutput attributed to the producing node
        let host_out_block = Block {
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
                    Opcode::Copy,
                    vec![
                        ParamBinding::new(0, ParamKind::DevicePtr(1)),
                        ParamBinding::new(1, ParamKind::HostPtr(2)),
                    ],
                    1.0,
                ),
            ],
            outputs: vec![2],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(
            host_out_block,
            vec![desc(1, Device::Device, 4), desc(2, Device::Host, 4)],
        );
        let r = analyze(&p.blocks[0], &p);
        assert_eq!(r.causes.len(), 1, "causes: {:?}", r.causes);
        assert_eq!(r.causes[0].kind, CauseKind::HostOutput);
        assert_eq!(r.causes[0].node, 2);

        // InputMutation
        let mut inplace = Node::kernel(
            1,
            1,
            Opcode::ScaleByScalar,
            vec![
                ParamBinding::new(0, ParamKind::DevicePtr(1)),
                ParamBinding::new(
                    1,
                    ParamKind::ScalarByValue {
                        value: 1.5,
                        input: None,
                    },
                ),
                ParamBinding::new(2, ParamKind::DevicePtr(1)),
            ],
            1.0,
        );
        if let NodeOp::KernelLaunch {
            in_place,
            reads,
            writes,
            ..
        } = &mut inplace.op
        {
            *in_place = true;
            reads.insert(1);
            writes.insert(1);
        }
        let mutation_block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
            nodes: vec![inplace],
            outputs: vec![1],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(mutation_block, vec![desc(1, Device::Device, 4)]);
        let r = analyze(&p.blocks[0], &p);
        let kinds: Vec<CauseKind> = r.causes.iter().map(|c| c.kind).collect();
        assert!(kinds.contains(&CauseKind::InputMutation));
        // The scalar param also reports, as it must: two distinct causes.
        assert!(kinds.contains(&CauseKind::CpuScalarParam));
    }

    fn copy_kernel_dev(id: NodeId, src: TensorId, dst: TensorId) -> Node {
        Node::kernel(
            id,
            id,
            Opcode::Copy,
            vec![
                ParamBinding::new(0, ParamKind::DevicePtr(src)),
                ParamBinding::new(1, ParamKind::DevicePtr(dst)),
            ],
            1.0,
        )
    }

    #[test]
    fn causes_sorted_and_deduped() {
        let block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
            nodes: vec![
                Node {
                    id: 5,
                    op: NodeOp::DeviceSync,
                },
                Node {
                    id: 2,
                    op: NodeOp::MemCopy {
                        src: 1,
                        dst: 2,
                        sync: true,
                    },
                },
            ],
            outputs: vec![],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let p = base_program(
            block,
            vec![desc(1, Device::Device, 4), desc(2, Device::Device, 4)],
        );
        let r = analyze(&p.blocks[0], &p);
        let nodes: Vec<NodeId> = r.causes.iter().map(|c| c.node).collect();
        assert_eq!(nodes, vec![2, 5]);
    }
}
