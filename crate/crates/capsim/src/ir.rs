//! Executable kernel-launch IR.
//!
//! A `Program` is one-time `init` work plus an ordered list of `Block`s
//! executed once per training iteration. Nodes carry enough semantics to be
//! interpreted (opcode algebra over f64 tensors) and enough structure to be
//! analyzed for graph capture (parameter bindings, read/write sets, sync
//! flags). Durations are microseconds; sizes are bytes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TensorId = u64;
pub type NodeId = u64;
pub type BlockId = u64;
pub type CellId = u64;

/// Where a tensor's bytes live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    Host,
    Device,
}

/// Shape and placement of one tensor. `total_bytes` is always derived,
/// never stored, so the two can't drift apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDesc {
    pub id: TensorId,
    pub device: Device,
    pub elem_size: u64,
    pub num_elems: u64,
    /// True iff the tensor has one element and originates from a host scalar.
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_scalar: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl TensorDesc {
    pub fn total_bytes(&self) -> u64 {
        self.elem_size * self.num_elems
    }
}

/// How a kernel parameter slot is filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Host scalar passed by value. `input` links the slot to a per-iteration
    /// scalar input; without it the value is a compile-time constant.
    ScalarByValue {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<u64>,
    },
    DevicePtr(TensorId),
    HostPtr(TensorId),
    PtrCell(CellId),
}

/// Assigned during capture: whether the bound value is supplied anew each
/// iteration or produced by a preceding node in the same block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutability {
    External,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBinding {
    pub slot: usize,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutability: Option<Mutability>,
}

impl ParamBinding {
    pub fn new(slot: usize, kind: ParamKind) -> Self {
        ParamBinding {
            slot,
            kind,
            mutability: None,
        }
    }

    /// Tensor referenced through a pointer kind, if any.
    pub fn tensor(&self) -> Option<TensorId> {
        match self.kind {
            ParamKind::DevicePtr(t) | ParamKind::HostPtr(t) => Some(t),
            _ => None,
        }
    }
}

/// Kernel computation over f64 tensors. Parameter convention: inputs in slot
/// order, output in the last pointer slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opcode {
    ElemAdd,
    ElemMul,
    /// out[i] = a[i] * s, scalar in the middle slot.
    ScaleByScalar,
    Copy,
    /// out[0] = sum of inputs, left to right.
    ReduceSum,
    /// Row-major (m x k) * (k x n), accumulation left to right over k.
    MatMulLite { m: u64, k: u64, n: u64 },
    /// Elementwise sum across replica inputs; stands in for NCCL-style
    /// collectives, which capture like any other kernel.
    CollectiveAllReduce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeOp {
    KernelLaunch {
        kernel_id: u64,
        opcode: Opcode,
        /// JIT-generated kernels can be rewritten to dereference pointer
        /// cells; vendor/opaque kernels can only be patched via a prelude.
        rewritable: bool,
        uses_rng: bool,
        params: Vec<ParamBinding>,
        reads: BTreeSet<TensorId>,
        writes: BTreeSet<TensorId>,
        #[serde(default, skip_serializing_if = "is_false")]
        in_place: bool,
        duration_us: f64,
    },
    MemCopy {
        src: TensorId,
        dst: TensorId,
        sync: bool,
    },
    Alloc {
        tensor: TensorId,
    },
    Free {
        tensor: TensorId,
    },
    DeviceSync,
    /// Patches recorded parameter buffers at the head of a replayed graph.
    /// Only ever created by the indirection pass.
    PreludeKernel {
        duration_us: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub op: NodeOp,
}

impl Node {
    pub fn kernel(
        id: NodeId,
        kernel_id: u64,
        opcode: Opcode,
        params: Vec<ParamBinding>,
        duration_us: f64,
    ) -> Self {
        let mut reads = BTreeSet::new();
        let mut writes = BTreeSet::new();
        if let Some((last, rest)) = split_output(&opcode, &params) {
            writes.insert(last);
            reads.extend(rest);
        }
        Node {
            id,
            op: NodeOp::KernelLaunch {
                kernel_id,
                opcode,
                rewritable: true,
                uses_rng: false,
                params,
                reads,
                writes,
                in_place: false,
                duration_us,
            },
        }
    }

    pub fn params(&self) -> &[ParamBinding] {
        match &self.op {
            NodeOp::KernelLaunch { params, .. } => params,
            _ => &[],
        }
    }

    /// Tensors this node reads, including memcopy sources.
    pub fn read_set(&self) -> BTreeSet<TensorId> {
        match &self.op {
            NodeOp::KernelLaunch { reads, .. } => reads.clone(),
            NodeOp::MemCopy { src, .. } => BTreeSet::from([*src]),
            _ => BTreeSet::new(),
        }
    }

    /// Tensors this node writes. Alloc counts as a (zero-filling) write.
    pub fn write_set(&self) -> BTreeSet<TensorId> {
        match &self.op {
            NodeOp::KernelLaunch { writes, .. } => writes.clone(),
            NodeOp::MemCopy { dst, .. } => BTreeSet::from([*dst]),
            NodeOp::Alloc { tensor } => BTreeSet::from([*tensor]),
            _ => BTreeSet::new(),
        }
    }

    pub fn is_kernel(&self) -> bool {
        matches!(self.op, NodeOp::KernelLaunch { .. })
    }
}

/// Derive (output tensor, input tensors) from the slot convention.
fn split_output(_opcode: &Opcode, params: &[ParamBinding]) -> Option<(TensorId, Vec<TensorId>)> {
    let ptr_tensors: Vec<TensorId> = params.iter().filter_map(|p| p.tensor()).collect();
    let (&out, ins) = ptr_tensors.split_last()?;
    Some((out, ins.to_vec()))
}

/// Per-iteration host-to-device write of a live scalar into a one-element
/// device tensor. Created by the scalar cast transform; runs before a block
/// (and before graph replay), outside any captured region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRefresh {
    pub tensor: TensorId,
    pub init_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<u64>,
}

/// Device-to-host copy appended after a block by output relocation; runs
/// outside any captured region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostReplayCopy {
    pub src: TensorId,
    pub dst: TensorId,
}

/// Unit of capture: a straight-line list of nodes executed once per
/// iteration. `nodes` order is execution order and must be def-before-use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    #[serde(default)]
    pub inputs: Vec<ParamBinding>,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub outputs: Vec<TensorId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scalar_refreshes: Vec<ScalarRefresh>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub post_replay_copies: Vec<PostReplayCopy>,
}

impl Block {
    pub fn input_tensors(&self) -> BTreeSet<TensorId> {
        self.inputs.iter().filter_map(|p| p.tensor()).collect()
    }

    pub fn kernel_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_kernel()).count()
    }
}

/// How a per-iteration input obtains its value each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRule {
    /// Generated once at init from the program seed, then left alone.
    Constant,
    /// Regenerated from (seed, identity, iteration) before every iteration.
    PerIteration,
}

/// Declares a value that the surrounding application supplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationInput {
    Tensor { tensor: TensorId, rule: ValueRule },
    ScalarInput { id: u64, rule: ValueRule },
}

/// Optional per-field overrides for the cost model, merged over defaults.
pub type CostOverrides = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Program {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cost_model: CostOverrides,
    pub tensors: Vec<TensorDesc>,
    #[serde(default)]
    pub init: Vec<Node>,
    pub blocks: Vec<Block>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iteration_inputs: Vec<IterationInput>,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_iterations() -> u64 {
    1
}

impl Program {
    pub fn tensor_map(&self) -> BTreeMap<TensorId, &TensorDesc> {
        self.tensors.iter().map(|t| (t.id, t)).collect()
    }

    pub fn tensor(&self, id: TensorId) -> Option<&TensorDesc> {
        self.tensors.iter().find(|t| t.id == id)
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> Option<&mut TensorDesc> {
        self.tensors.iter_mut().find(|t| t.id == id)
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn max_tensor_id(&self) -> TensorId {
        self.tensors.iter().map(|t| t.id).max().unwrap_or(0)
    }

    pub fn max_node_id(&self) -> NodeId {
        self.init
            .iter()
            .map(|n| n.id)
            .chain(self.blocks.iter().flat_map(|b| b.nodes.iter().map(|n| n.id)))
            .max()
            .unwrap_or(0)
    }

    /// Rule for a tensor-valued iteration input, if declared.
    pub fn tensor_rule(&self, id: TensorId) -> Option<ValueRule> {
        self.iteration_inputs.iter().find_map(|ii| match ii {
            IterationInput::Tensor { tensor, rule } if *tensor == id => Some(*rule),
            _ => None,
        })
    }

    /// Rule for a scalar input id, if declared.
    pub fn scalar_rule(&self, id: u64) -> Option<ValueRule> {
        self.iteration_inputs.iter().find_map(|ii| match ii {
            IterationInput::ScalarInput { id: s, rule } if *s == id => Some(*rule),
            _ => None,
        })
    }

    /// True iff the tensor's contents never change after init: not declared
    /// per-iteration, not a block input, and not written by any block node.
    pub fn tensor_is_constant(&self, id: TensorId) -> bool {
        if matches!(self.tensor_rule(id), Some(ValueRule::PerIteration)) {
            return false;
        }
        for b in &self.blocks {
            if b.input_tensors().contains(&id) {
                return false;
            }
            if b.scalar_refreshes.iter().any(|r| r.tensor == id) {
                return false;
            }
            for n in &b.nodes {
                if n.write_set().contains(&id) {
                    return false;
                }
            }
        }
        true
    }
}

// ── Fresh id allocation ─────────────────────────────────────────────────────

/// Disjoint id lanes so independent passes (and per-block parallel work)
/// mint fresh tensor/node ids without coordination.
#[derive(Debug, Clone, Copy)]
pub enum IdLane {
    Transform = 1,
    Capture = 2,
    Indirection = 3,
}

const LANE_SHIFT: u32 = 40;
const BLOCK_SHIFT: u32 = 20;

/// Deterministic fresh-id counter scoped to (program, lane, block index).
#[derive(Debug)]
pub struct IdAlloc {
    next: u64,
}

impl IdAlloc {
    pub fn new(program: &Program, lane: IdLane, block_index: usize) -> Self {
        let base = program.max_tensor_id().max(program.max_node_id()) + 1;
        let base = (base >> BLOCK_SHIFT).saturating_add(1) << BLOCK_SHIFT;
        IdAlloc {
            next: base + ((lane as u64) << LANE_SHIFT) + ((block_index as u64) << BLOCK_SHIFT),
        }
    }

    pub fn fresh(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

// ── Validation ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    /// A node or input references a tensor id absent from the tensor table.
    DanglingTensor { node: Option<NodeId>, tensor: TensorId },
    /// A tensor is read before any Alloc, block input, or prior write
    /// defines it.
    UseBeforeDef { node: NodeId, tensor: TensorId },
    /// Dependencies between nodes of a block are circular.
    CycleDetected { block: BlockId },
    /// reads and writes overlap without the in-place flag.
    UnflaggedOverlap { node: NodeId, tensor: TensorId },
    /// Kernel or prelude duration is not strictly positive.
    NonPositiveDuration { node: NodeId },
    /// elem_size or num_elems is zero.
    EmptyTensor { tensor: TensorId },
    /// A pointer parameter names a tensor missing from reads and writes.
    ParamOutsideAccessSets { node: NodeId, tensor: TensorId },
    /// Duplicate id within one namespace.
    DuplicateId { what: String, id: u64 },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural well-formedness over the whole program. Runs every check and
/// reports all findings rather than stopping at the first.
pub fn validate(program: &Program) -> ValidationReport {
    let mut v = Vec::new();
    let tensors = program.tensor_map();

    let mut seen_t = BTreeSet::new();
    for t in &program.tensors {
        if !seen_t.insert(t.id) {
            v.push(Violation::DuplicateId {
                what: "tensor".into(),
                id: t.id,
            });
        }
        if t.elem_size == 0 || t.num_elems == 0 {
            v.push(Violation::EmptyTensor { tensor: t.id });
        }
    }
    let mut seen_b = BTreeSet::new();
    for b in &program.blocks {
        if !seen_b.insert(b.id) {
            v.push(Violation::DuplicateId {
                what: "block".into(),
                id: b.id,
            });
        }
    }
    let mut seen_n = BTreeSet::new();
    for n in program
        .init
        .iter()
        .chain(program.blocks.iter().flat_map(|b| b.nodes.iter()))
    {
        if !seen_n.insert(n.id) {
            v.push(Violation::DuplicateId {
                what: "node".into(),
                id: n.id,
            });
        }
    }

    // Definedness follows execution order: constants declared as iteration
    // inputs materialize before init, init nodes run once, then blocks run
    // in listed order sharing machine state.
    let mut defined: BTreeSet<TensorId> = program
        .iteration_inputs
        .iter()
        .filter_map(|ii| match ii {
            IterationInput::Tensor {
                tensor,
                rule: ValueRule::Constant,
            } => Some(*tensor),
            _ => None,
        })
        .collect();
    for n in &program.init {
        check_node(n, &tensors, &defined, None, &mut v);
        defined.extend(n.write_set());
    }
    defined.extend(program.iteration_inputs.iter().filter_map(|ii| match ii {
        IterationInput::Tensor {
            tensor,
            rule: ValueRule::PerIteration,
        } => Some(*tensor),
        _ => None,
    }));

    for b in &program.blocks {
        for p in &b.inputs {
            if let Some(t) = p.tensor() {
                if !tensors.contains_key(&t) {
                    v.push(Violation::DanglingTensor {
                        node: None,
                        tensor: t,
                    });
                }
            }
        }
        defined.extend(b.input_tensors());
        defined.extend(b.scalar_refreshes.iter().map(|r| r.tensor));
        let entry = defined.clone();
        for n in &b.nodes {
            check_node(n, &tensors, &defined, Some(b), &mut v);
            defined.extend(n.write_set());
        }
        for t in &b.outputs {
            if !tensors.contains_key(t) {
                v.push(Violation::DanglingTensor {
                    node: None,
                    tensor: *t,
                });
            }
        }
        if topo_order(b, &entry).is_err() {
            v.push(Violation::CycleDetected { block: b.id });
        }
    }

    ValidationReport { violations: v }
}

fn check_node(
    n: &Node,
    tensors: &BTreeMap<TensorId, &TensorDesc>,
    defined: &BTreeSet<TensorId>,
    _block: Option<&Block>,
    v: &mut Vec<Violation>,
) {
    let touch = |t: TensorId, v: &mut Vec<Violation>| {
        if !tensors.contains_key(&t) {
            v.push(Violation::DanglingTensor {
                node: Some(n.id),
                tensor: t,
            });
        }
    };
    for t in n.read_set().iter().chain(n.write_set().iter()) {
        touch(*t, v);
    }
    for t in n.read_set() {
        if !defined.contains(&t) {
            v.push(Violation::UseBeforeDef { node: n.id, tensor: t });
        }
    }
    if let NodeOp::KernelLaunch {
        params,
        reads,
        writes,
        in_place,
        duration_us,
        ..
    } = &n.op
    {
        for p in params {
            if let Some(t) = p.tensor() {
                touch(t, v);
                if !reads.contains(&t) && !writes.contains(&t) {
                    v.push(Violation::ParamOutsideAccessSets { node: n.id, tensor: t });
                }
            }
        }
        if !in_place {
            if let Some(t) = reads.intersection(writes).next() {
                v.push(Violation::UnflaggedOverlap { node: n.id, tensor: *t });
            }
        }
        if *duration_us <= 0.0 {
            v.push(Violation::NonPositiveDuration { node: n.id });
        }
    }
    if let NodeOp::PreludeKernel { duration_us } = &n.op {
        if *duration_us <= 0.0 {
            v.push(Violation::NonPositiveDuration { node: n.id });
        }
    }
    if let NodeOp::Free { tensor } = &n.op {
        touch(*tensor, v);
    }
    if let NodeOp::Alloc { tensor } = &n.op {
        touch(*tensor, v);
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopoError {
    #[error("node dependencies in block {block} are cyclic")]
    CycleDetected { block: BlockId },
}

/// Deterministic topological order of a block's nodes.
///
/// `entry` lists tensors already defined when the block starts; block inputs
/// and scalar-refresh targets are implied. A read fed by an earlier in-block
/// write depends on the latest such write; a read of an entry value only
/// anti-depends on the next write; a read that neither follows a writer nor
/// names an entry tensor can only be fed by a later writer, which together
/// with the anti-dependence is circular. Multiple writers chain in list
/// order. Ties broken by ascending node id.
pub fn topo_order(block: &Block, entry: &BTreeSet<TensorId>) -> Result<Vec<NodeId>, TopoError> {
    let n = block.nodes.len();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut entry_defined = entry.clone();
    entry_defined.extend(block.input_tensors());
    entry_defined.extend(block.scalar_refreshes.iter().map(|r| r.tensor));

    let mut writers: BTreeMap<TensorId, Vec<usize>> = BTreeMap::new();
    let mut readers: BTreeMap<TensorId, Vec<usize>> = BTreeMap::new();
    for (i, nd) in block.nodes.iter().enumerate() {
        for t in nd.write_set() {
            writers.entry(t).or_default().push(i);
        }
        for t in nd.read_set() {
            if !nd.write_set().contains(&t) {
                readers.entry(t).or_default().push(i);
            }
        }
    }
    for (t, ws) in &writers {
        for pair in ws.windows(2) {
            edges.insert((pair[0], pair[1]));
        }
        for &r in readers.get(t).unwrap_or(&Vec::new()) {
            if let Some(&w) = ws.iter().rev().find(|&&w| w < r) {
                edges.insert((w, r));
            } else if !entry_defined.contains(t) {
                for &w in ws {
                    if w != r {
                        edges.insert((w, r));
                    }
                }
            }
            if let Some(&next_w) = ws.iter().find(|&&w| w > r) {
                edges.insert((r, next_w));
            }
        }
    }

    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &edges {
        out[a].push(b);
        indeg[b] += 1;
    }
    // Kahn's algorithm, min node id first.
    let mut ready: BTreeSet<(NodeId, usize)> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(|i| (block.nodes[i].id, i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&(id, i)) = ready.iter().next() {
        ready.remove(&(id, i));
        order.push(id);
        for &j in &out[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert((block.nodes[j].id, j));
            }
        }
    }
    if order.len() != n {
        return Err(TopoError::CycleDetected { block: block.id });
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(id: TensorId, device: Device, num_elems: u64) -> TensorDesc {
        TensorDesc {
            id,
            device,
            elem_size: 8,
            num_elems,
            is_scalar: false,
        }
    }

    fn add_kernel(id: NodeId, a: TensorId, b: TensorId, out: TensorId) -> Node {
        Node::kernel(
            id,
            id,
            Opcode::ElemAdd,
            vec![
                ParamBinding::new(0, ParamKind::DevicePtr(a)),
                ParamBinding::new(1, ParamKind::DevicePtr(b)),
                ParamBinding::new(2, ParamKind::DevicePtr(out)),
            ],
            1.0,
        )
    }

    fn prog_with_block(nodes: Vec<Node>, tensors: Vec<TensorDesc>, inputs: Vec<TensorId>) -> Program {
        Program {
            tensors,
            blocks: vec![Block {
                id: 1,
                inputs: inputs
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| ParamBinding::new(i, ParamKind::DevicePtr(t)))
                    .collect(),
                nodes,
                outputs: vec![],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            ..Default::default()
        }
    }

    #[test]
    fn total_bytes_is_derived() {
        let t = desc(1, Device::Device, 1024);
        assert_eq!(t.total_bytes(), 8192);
    }

    #[test]
    fn valid_chain_passes() {
        let p = prog_with_block(
            vec![
                Node {
                    id: 1,
                    op: NodeOp::Alloc { tensor: 3 },
                },
                add_kernel(2, 1, 2, 3),
            ],
            vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
            ],
            vec![1, 2],
        );
        let r = validate(&p);
        assert!(r.ok(), "unexpected violations: {:?}", r.violations);
    }

    #[test]
    fn dangling_tensor_reported() {
        let p = prog_with_block(
            vec![add_kernel(1, 1, 2, 99)],
            vec![desc(1, Device::Device, 4), desc(2, Device::Device, 4)],
            vec![1, 2],
        );
        let r = validate(&p);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DanglingTensor { tensor: 99, .. })));
    }

    #[test]
    fn use_before_def_reported() {
        // Kernel reads tensor 3, which is alloc'd only afterwards.
        let p = prog_with_block(
            vec![
                add_kernel(1, 3, 2, 4),
                Node {
                    id: 2,
                    op: NodeOp::Alloc { tensor: 3 },
                },
                Node {
                    id: 3,
                    op: NodeOp::Alloc { tensor: 4 },
                },
            ],
            vec![
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
                desc(4, Device::Device, 4),
            ],
            vec![2],
        );
        let r = validate(&p);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UseBeforeDef { tensor: 3, .. })));
    }

    #[test]
    fn unflagged_overlap_reported() {
        let mut n = add_kernel(1, 1, 2, 3);
        if let NodeOp::KernelLaunch { reads, .. } = &mut n.op {
            reads.insert(3);
        }
        let p = prog_with_block(
            vec![n],
            vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
            ],
            vec![1, 2, 3],
        );
        let r = validate(&p);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnflaggedOverlap { tensor: 3, .. })));
    }

    #[test]
    fn nonpositive_duration_reported() {
        let mut n = add_kernel(1, 1, 2, 3);
        if let NodeOp::KernelLaunch { duration_us, .. } = &mut n.op {
            *duration_us = 0.0;
        }
        let p = prog_with_block(
            vec![n],
            vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
            ],
            vec![1, 2, 3],
        );
        assert!(!validate(&p).ok());
    }

    #[test]
    fn topo_diamond_prefers_ascending_ids() {
        // n1 writes a; n2 and n3 read a, write b and c; n4 reads b and c.
        let block = Block {
            id: 1,
            inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(0))],
            nodes: vec![
                add_kernel(1, 0, 0, 10),
                add_kernel(3, 10, 10, 12),
                add_kernel(2, 10, 10, 11),
                add_kernel(4, 11, 12, 13),
            ],
            outputs: vec![],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        let order = topo_order(&block, &BTreeSet::new()).unwrap();
        assert_eq!(order, vec![1, 2, 3, 4]);
        // The result is one of the two valid orders and deterministic.
        let again = topo_order(&block, &BTreeSet::new()).unwrap();
        assert_eq!(order, again);
    }

    #[test]
    fn topo_cycle_detected() {
        // n1 reads a writes b; n2 reads b writes a: circular def-use.
        let block = Block {
            id: 9,
            inputs: vec![],
            nodes: vec![add_kernel(1, 100, 100, 101), add_kernel(2, 101, 101, 100)],
            outputs: vec![],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        };
        assert_eq!(
            topo_order(&block, &BTreeSet::new()),
            Err(TopoError::CycleDetected { block: 9 })
        );
    }

    #[test]
    fn json_roundtrip_preserves_program() {
        let p = prog_with_block(
            vec![
                Node {
                    id: 1,
                    op: NodeOp::Alloc { tensor: 3 },
                },
                add_kernel(2, 1, 2, 3),
                Node {
                    id: 3,
                    op: NodeOp::MemCopy {
                        src: 3,
                        dst: 4,
                        sync: true,
                    },
                },
            ],
            vec![
                desc(1, Device::Device, 4),
                desc(2, Device::Device, 4),
                desc(3, Device::Device, 4),
                desc(4, Device::Host, 4),
            ],
            vec![1, 2],
        );
        let s = serde_json::to_string_pretty(&p).unwrap();
        let back: Program = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn id_lanes_do_not_collide() {
        let p = prog_with_block(vec![], vec![desc(1, Device::Device, 1)], vec![]);
        let mut a = IdAlloc::new(&p, IdLane::Transform, 0);
        let mut b = IdAlloc::new(&p, IdLane::Capture, 0);
        let mut c = IdAlloc::new(&p, IdLane::Transform, 1);
        let mut seen = BTreeSet::new();
        for _ in 0..1000 {
            assert!(seen.insert(a.fresh()));
            assert!(seen.insert(b.fresh()));
            assert!(seen.insert(c.fresh()));
        }
    }
}
