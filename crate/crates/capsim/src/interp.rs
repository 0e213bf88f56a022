//! Reference interpreter for the launch IR.
//!
//! Executes programs eagerly and replays captured graphs over the same
//! machine state, so rewrites and capture plans can be checked for value
//! equivalence. Tensors hold f64 values; host and device memory are separate
//! maps keyed by tensor id. Results are bit-deterministic: summations run
//! left to right and all randomness is counter-based.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::capture::{CapturedGraph, CopySource, PlaceholderRole};
use crate::ir::*;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("node {node:?} reads tensor {tensor} which holds no value")]
    MissingValue { node: Option<NodeId>, tensor: TensorId },
    #[error("node {node} slot {slot}: binding kind does not match device of tensor {tensor}")]
    DeviceMismatch {
        node: NodeId,
        slot: usize,
        tensor: TensorId,
    },
    #[error("replayed node {node} touches host tensor {tensor} whose storage is gone")]
    DanglingHostRef { node: NodeId, tensor: TensorId },
    #[error("external input tensor {tensor} has no value for iteration {iteration}")]
    MissingInput { tensor: TensorId, iteration: u64 },
    #[error("tensor {tensor} is not declared anywhere")]
    UnknownTensor { tensor: TensorId },
    #[error("node {node} dereferences pointer cell {cell} which was never refreshed")]
    UnboundCell { node: NodeId, cell: CellId },
    #[error("node {node} is malformed: {msg}")]
    Malformed { node: NodeId, msg: String },
}

/// Widest numeric comparison a value may need. Values produced through
/// reassociating reductions carry `Accumulated`; everything else must match
/// bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceClass {
    Exact,
    Accumulated,
}

pub const ACCUMULATED_REL_TOL: f64 = 1e-12;

/// Supplies per-iteration input values. Defaults come from the program seed;
/// tests can pin explicit values or redirect an input to a different tensor
/// (a fresh allocation at another address, in hardware terms).
#[derive(Debug, Clone)]
pub struct InputPlan {
    pub seed: u64,
    pub scalar_overrides: BTreeMap<(u64, u64), f64>,
    pub tensor_overrides: BTreeMap<(TensorId, u64), Vec<f64>>,
    pub aliases: BTreeMap<(TensorId, u64), TensorId>,
    /// Descriptors for alias targets that are not program tensors.
    pub extra_tensors: Vec<TensorDesc>,
}

impl InputPlan {
    pub fn seeded(seed: u64) -> Self {
        InputPlan {
            seed,
            scalar_overrides: BTreeMap::new(),
            tensor_overrides: BTreeMap::new(),
            aliases: BTreeMap::new(),
            extra_tensors: Vec::new(),
        }
    }

    pub fn for_program(program: &Program) -> Self {
        Self::seeded(program.seed)
    }

    /// Live value of scalar input `id` at `iteration` (1-based). The first
    /// iteration sees the initial value; later iterations draw fresh values
    /// when the input is declared per-iteration.
    pub fn scalar(&self, program: &Program, id: u64, iteration: u64, init: f64) -> f64 {
        if let Some(v) = self.scalar_overrides.get(&(id, iteration)) {
            return *v;
        }
        match program.scalar_rule(id) {
            Some(ValueRule::PerIteration) if iteration > 1 => {
                rng::scalar_value(self.seed, id, iteration)
            }
            _ => init,
        }
    }

    pub fn alias(&self, tensor: TensorId, iteration: u64) -> TensorId {
        *self.aliases.get(&(tensor, iteration)).unwrap_or(&tensor)
    }

    fn generated(&self, tensor: TensorId, iteration: u64, n: u64) -> Vec<f64> {
        if let Some(v) = self.tensor_overrides.get(&(tensor, iteration)) {
            return v.clone();
        }
        (0..n)
            .map(|lane| rng::tensor_value(self.seed, tensor, iteration, lane))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputValue {
    pub tensor: TensorId,
    pub values: Vec<f64>,
    pub class: ToleranceClass,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockOutputs {
    pub block: BlockId,
    pub outputs: Vec<OutputValue>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// outputs[iteration][block position]
    pub iterations: Vec<Vec<BlockOutputs>>,
    pub exec_counts: BTreeMap<NodeId, u64>,
}

/// Compare two runs under per-value tolerance classes.
pub fn outputs_equivalent(a: &RunOutput, b: &RunOutput) -> Result<(), String> {
    if a.iterations.len() != b.iterations.len() {
        return Err(format!(
            "iteration count differs: {} vs {}",
            a.iterations.len(),
            b.iterations.len()
        ));
    }
    for (i, (ia, ib)) in a.iterations.iter().zip(&b.iterations).enumerate() {
        if ia.len() != ib.len() {
            return Err(format!("iteration {}: block count differs", i + 1));
        }
        for (ba, bb) in ia.iter().zip(ib) {
            if ba.block != bb.block || ba.outputs.len() != bb.outputs.len() {
                return Err(format!("iteration {}: block shape differs", i + 1));
            }
            for (oa, ob) in ba.outputs.iter().zip(&bb.outputs) {
                if oa.tensor != ob.tensor || oa.values.len() != ob.values.len() {
                    return Err(format!(
                        "iteration {} block {}: output shape differs",
                        i + 1,
                        ba.block
                    ));
                }
                let class = oa.class.max(ob.class);
                for (lane, (x, y)) in oa.values.iter().zip(&ob.values).enumerate() {
                    let ok = match class {
                        ToleranceClass::Exact => x.to_bits() == y.to_bits(),
                        ToleranceClass::Accumulated => {
                            x.to_bits() == y.to_bits()
                                || (x - y).abs() <= ACCUMULATED_REL_TOL * x.abs().max(y.abs())
                        }
                    };
                    if !ok {
                        return Err(format!(
                            "iteration {} block {} tensor {} lane {}: {} vs {}",
                            i + 1,
                            ba.block,
                            oa.tensor,
                            lane,
                            x,
                            y
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

// ── Machine ─────────────────────────────────────────────────────────────────

struct Machine<'a> {
    program: &'a Program,
    plan: &'a InputPlan,
    descs: BTreeMap<TensorId, TensorDesc>,
    host: BTreeMap<TensorId, Vec<f64>>,
    device: BTreeMap<TensorId, Vec<f64>>,
    cells: BTreeMap<CellId, TensorId>,
    class: BTreeMap<TensorId, ToleranceClass>,
    exec_counts: BTreeMap<NodeId, u64>,
    /// Per-iteration parameter overrides installed by a replay prelude.
    patches: BTreeMap<(NodeId, usize), TensorId>,
    replaying: bool,
    iteration: u64,
}

impl<'a> Machine<'a> {
    fn new(program: &'a Program, plan: &'a InputPlan) -> Self {
        let mut descs: BTreeMap<TensorId, TensorDesc> =
            program.tensors.iter().map(|t| (t.id, t.clone())).collect();
        for t in &plan.extra_tensors {
            descs.insert(t.id, t.clone());
        }
        Machine {
            program,
            plan,
            descs,
            host: BTreeMap::new(),
            device: BTreeMap::new(),
            cells: BTreeMap::new(),
            class: BTreeMap::new(),
            exec_counts: BTreeMap::new(),
            patches: BTreeMap::new(),
            replaying: false,
            iteration: 0,
        }
    }

    fn desc(&self, t: TensorId) -> Result<&TensorDesc, ExecError> {
        self.descs.get(&t).ok_or(ExecError::UnknownTensor { tensor: t })
    }

    fn mem(&mut self, dev: Device) -> &mut BTreeMap<TensorId, Vec<f64>> {
        match dev {
            Device::Host => &mut self.host,
            Device::Device => &mut self.device,
        }
    }

    fn read(&self, node: NodeId, t: TensorId) -> Result<&Vec<f64>, ExecError> {
        let d = self.desc(t)?;
        let map = match d.device {
            Device::Host => &self.host,
            Device::Device => &self.device,
        };
        map.get(&t).ok_or_else(|| {
            if d.device == Device::Host && self.replaying {
                ExecError::DanglingHostRef { node, tensor: t }
            } else {
                ExecError::MissingValue {
                    node: Some(node),
                    tensor: t,
                }
            }
        })
    }

    fn write(&mut self, t: TensorId, values: Vec<f64>, class: ToleranceClass) -> Result<(), ExecError> {
        let dev = self.desc(t)?.device;
        self.mem(dev).insert(t, values);
        self.class.insert(t, class);
        Ok(())
    }

    fn class_of(&self, t: TensorId) -> ToleranceClass {
        *self.class.get(&t).unwrap_or(&ToleranceClass::Exact)
    }

    /// Materialize constants declared in the workload, then run init once.
    fn run_init(&mut self) -> Result<(), ExecError> {
        for ii in &self.program.iteration_inputs {
            if let IterationInput::Tensor {
                tensor,
                rule: ValueRule::Constant,
            } = ii
            {
                let d = self.desc(*tensor)?.clone();
                let values = self.plan.generated(*tensor, 0, d.num_elems);
                self.write(*tensor, values, ToleranceClass::Exact)?;
            }
        }
        let init: Vec<Node> = self.program.init.clone();
        for n in &init {
            self.exec_node(n)?;
        }
        Ok(())
    }

    /// Supply per-iteration external tensors before running iteration `iter`.
    fn provision(&mut self, iter: u64) -> Result<(), ExecError> {
        self.iteration = iter;
        let mut fresh: BTreeSet<TensorId> = BTreeSet::new();
        for ii in &self.program.iteration_inputs {
            if let IterationInput::Tensor {
                tensor,
                rule: ValueRule::PerIteration,
            } = ii
            {
                fresh.insert(*tensor);
            }
        }
        for b in &self.program.blocks {
            for t in b.input_tensors() {
                // Block inputs default to per-iteration unless pinned constant.
                if !matches!(self.program.tensor_rule(t), Some(ValueRule::Constant)) {
                    fresh.insert(t);
                }
            }
        }
        for t in fresh {
            let target = self.plan.alias(t, iter);
            let d = self.desc(target)?.clone();
            if target == t {
                let values = self.plan.generated(t, iter, d.num_elems);
                self.write(t, values, ToleranceClass::Exact)?;
            } else if let Some(v) = self.plan.tensor_overrides.get(&(target, iter)) {
                let v = v.clone();
                self.write(target, v, ToleranceClass::Exact)?;
            } else {
                let present = match d.device {
                    Device::Host => self.host.contains_key(&target),
                    Device::Device => self.device.contains_key(&target),
                };
                if !present {
                    return Err(ExecError::MissingInput {
                        tensor: target,
                        iteration: iter,
                    });
                }
            }
        }
        Ok(())
    }

    fn apply_scalar_refreshes(&mut self, refreshes: &[ScalarRefresh]) -> Result<(), ExecError> {
        for r in refreshes {
            let v = match r.input {
                Some(id) => self.plan.scalar(self.program, id, self.iteration, r.init_value),
                None => r.init_value,
            };
            self.write(r.tensor, vec![v], ToleranceClass::Exact)?;
        }
        Ok(())
    }

    fn apply_post_replay_copies(&mut self, copies: &[PostReplayCopy]) -> Result<(), ExecError> {
        for c in copies {
            let values = self.read(0, c.src).map_err(|e| match e {
                ExecError::MissingValue { tensor, .. } => ExecError::MissingValue {
                    node: None,
                    tensor,
                },
                other => other,
            })?;
            let values = values.clone();
            let class = self.class_of(c.src);
            self.write(c.dst, values, class)?;
        }
        Ok(())
    }

    fn run_block_eager(&mut self, block: &Block) -> Result<(), ExecError> {
        self.apply_scalar_refreshes(&block.scalar_refreshes)?;
        let nodes = block.nodes.clone();
        for n in &nodes {
            self.exec_node(n)?;
        }
        self.apply_post_replay_copies(&block.post_replay_copies)?;
        Ok(())
    }

    fn collect_outputs(&self, block_id: BlockId, outputs: &[TensorId]) -> Result<BlockOutputs, ExecError> {
        let mut out = BlockOutputs {
            block: block_id,
            outputs: Vec::new(),
        };
        for &t in outputs {
            let values = self.read(0, t).map_err(|e| match e {
                ExecError::MissingValue { tensor, .. } => ExecError::MissingValue { node: None, tensor },
                other => other,
            })?;
            out.outputs.push(OutputValue {
                tensor: t,
                values: values.clone(),
                class: self.class_of(t),
            });
        }
        Ok(out)
    }

    fn bump(&mut self, node: NodeId) {
        *self.exec_counts.entry(node).or_insert(0) += 1;
    }

    fn exec_node(&mut self, n: &Node) -> Result<(), ExecError> {
        self.bump(n.id);
        match &n.op {
            NodeOp::Alloc { tensor } => {
                let d = self.desc(*tensor)?.clone();
                let map = self.mem(d.device);
                // Allocation only reserves storage; it never clobbers values
                // already supplied (constants materialize before init runs).
                map.entry(*tensor).or_insert_with(|| vec![0.0; d.num_elems as usize]);
                Ok(())
            }
            NodeOp::Free { tensor } => {
                let d = self.desc(*tensor)?.clone();
                self.mem(d.device).remove(tensor);
                self.class.remove(tensor);
                Ok(())
            }
            NodeOp::DeviceSync => Ok(()),
            NodeOp::PreludeKernel { .. } => Ok(()),
            NodeOp::MemCopy { src, dst, .. } => {
                let s = self.plan.alias(*src, self.iteration);
                let values = self.read(n.id, s)?.clone();
                let class = self.class_of(s);
                self.write(*dst, values, class)
            }
            NodeOp::KernelLaunch {
                opcode,
                uses_rng,
                params,
                ..
            } => self.exec_kernel(n.id, opcode, *uses_rng, params),
        }
    }

    fn resolve_pointer(&self, node: NodeId, p: &ParamBinding) -> Result<TensorId, ExecError> {
        if let Some(&patched) = self.patches.get(&(node, p.slot)) {
            return Ok(patched);
        }
        match &p.kind {
            ParamKind::DevicePtr(t) => {
                let d = self.desc(*t)?;
                if d.device != Device::Device {
                    return Err(ExecError::DeviceMismatch {
                        node,
                        slot: p.slot,
                        tensor: *t,
                    });
                }
                Ok(*t)
            }
            ParamKind::HostPtr(t) => {
                let d = self.desc(*t)?;
                if d.device != Device::Host {
                    return Err(ExecError::DeviceMismatch {
                        node,
                        slot: p.slot,
                        tensor: *t,
                    });
                }
                Ok(*t)
            }
            ParamKind::PtrCell(c) => self
                .cells
                .get(c)
                .copied()
                .ok_or(ExecError::UnboundCell { node, cell: *c }),
            ParamKind::ScalarByValue { .. } => Err(ExecError::Malformed {
                node,
                msg: "scalar slot used as pointer".into(),
            }),
        }
    }

    fn exec_kernel(
        &mut self,
        node: NodeId,
        opcode: &Opcode,
        uses_rng: bool,
        params: &[ParamBinding],
    ) -> Result<(), ExecError> {
        // Gather pointer slots in slot order and the scalar, if any.
        let mut ptr_slots: Vec<(usize, TensorId)> = Vec::new();
        let mut scalar: Option<f64> = None;
        for p in params {
            match &p.kind {
                ParamKind::ScalarByValue { value, input } => {
                    let v = match (input, self.replaying) {
                        (Some(id), false) => {
                            self.plan.scalar(self.program, *id, self.iteration, *value)
                        }
                        // Captured scalars replay the recorded value.
                        _ => *value,
                    };
                    scalar = Some(v);
                }
                _ => {
                    let t = self.resolve_pointer(node, p)?;
                    ptr_slots.push((p.slot, t));
                }
            }
        }
        let Some(((_, out_t), in_slots)) = ptr_slots.split_last().map(|(l, i)| (*l, i)) else {
            return Err(ExecError::Malformed {
                node,
                msg: "kernel has no pointer slots".into(),
            });
        };
        // When the scalar slot was cast to a one-element device tensor, the
        // scale value arrives through the middle pointer slot instead.
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut in_class = ToleranceClass::Exact;
        for (_, t) in in_slots {
            inputs.push(self.read(node, *t)?.clone());
            in_class = in_class.max(self.class_of(*t));
        }
        let (values, op_class) = eval_opcode(node, opcode, &inputs, scalar)?;
        let mut values = values;
        if uses_rng {
            for (lane, v) in values.iter_mut().enumerate() {
                *v += rng::kernel_noise(self.plan.seed, node, self.iteration, lane as u64);
            }
        }
        let out_len = self.desc(out_t)?.num_elems as usize;
        if values.len() != out_len {
            return Err(ExecError::Malformed {
                node,
                msg: format!(
                    "output tensor {out_t} holds {out_len} elems but kernel produced {}",
                    values.len()
                ),
            });
        }
        self.write(out_t, values, in_class.max(op_class))
    }
}

fn eval_opcode(
    node: NodeId,
    opcode: &Opcode,
    inputs: &[Vec<f64>],
    scalar: Option<f64>,
) -> Result<(Vec<f64>, ToleranceClass), ExecError> {
    let arity = |want: usize| -> Result<(), ExecError> {
        if inputs.len() != want {
            Err(ExecError::Malformed {
                node,
                msg: format!("{opcode:?} wants {want} tensor inputs, got {}", inputs.len()),
            })
        } else {
            Ok(())
        }
    };
    match opcode {
        Opcode::ElemAdd => {
            arity(2)?;
            same_len(node, inputs)?;
            Ok((
                inputs[0].iter().zip(&inputs[1]).map(|(a, b)| a + b).collect(),
                ToleranceClass::Exact,
            ))
        }
        Opcode::ElemMul => {
            arity(2)?;
            same_len(node, inputs)?;
            Ok((
                inputs[0].iter().zip(&inputs[1]).map(|(a, b)| a * b).collect(),
                ToleranceClass::Exact,
            ))
        }
        Opcode::ScaleByScalar => {
            // Scalar either passed by value or cast to a one-element tensor.
            let (data, s) = match (scalar, inputs.len()) {
                (Some(s), 1) => (&inputs[0], s),
                // Cast form: whichever input is the one-element tensor is the
                // scalar; ties resolve to the trailing slot.
                (None, 2) if inputs[1].len() == 1 => (&inputs[0], inputs[1][0]),
                (None, 2) if inputs[0].len() == 1 => (&inputs[1], inputs[0][0]),
                _ => {
                    return Err(ExecError::Malformed {
                        node,
                        msg: "scale needs one data input plus a scalar".into(),
                    })
                }
            };
            Ok((data.iter().map(|a| a * s).collect(), ToleranceClass::Exact))
        }
        Opcode::Copy => {
            arity(1)?;
            Ok((inputs[0].clone(), ToleranceClass::Exact))
        }
        Opcode::ReduceSum => {
            arity(1)?;
            let mut acc = 0.0;
            for v in &inputs[0] {
                acc += v;
            }
            Ok((vec![acc], ToleranceClass::Accumulated))
        }
        Opcode::MatMulLite { m, k, n } => {
            arity(2)?;
            let (m, k, n) = (*m as usize, *k as usize, *n as usize);
            if inputs[0].len() != m * k || inputs[1].len() != k * n {
                return Err(ExecError::Malformed {
                    node,
                    msg: format!("matmul {m}x{k}x{n} got {}x{} elems", inputs[0].len(), inputs[1].len()),
                });
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        acc += inputs[0][i * k + kk] * inputs[1][kk * n + j];
                    }
                    out[i * n + j] = acc;
                }
            }
            Ok((out, ToleranceClass::Accumulated))
        }
        Opcode::CollectiveAllReduce => {
            if inputs.is_empty() {
                return Err(ExecError::Malformed {
                    node,
                    msg: "all-reduce needs at least one replica".into(),
                });
            }
            same_len(node, inputs)?;
            let n = inputs[0].len();
            let mut out = vec![0.0; n];
            for replica in inputs {
                for (o, v) in out.iter_mut().zip(replica) {
                    *o += v;
                }
            }
            Ok((out, ToleranceClass::Accumulated))
        }
    }
}

fn same_len(node: NodeId, inputs: &[Vec<f64>]) -> Result<(), ExecError> {
    if inputs.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(ExecError::Malformed {
            node,
            msg: "input length mismatch".into(),
        });
    }
    Ok(())
}

// ── Entry points ────────────────────────────────────────────────────────────

/// Execute every block eagerly for `iterations` iterations.
pub fn run_eager(
    program: &Program,
    plan: &InputPlan,
    iterations: u64,
) -> Result<RunOutput, ExecError> {
    let mut m = Machine::new(program, plan);
    m.run_init()?;
    let mut out = RunOutput::default();
    for iter in 1..=iterations {
        m.provision(iter)?;
        let mut per_block = Vec::new();
        for b in &program.blocks {
            m.replaying = false;
            m.run_block_eager(b)?;
            per_block.push(m.collect_outputs(b.id, &b.outputs)?);
        }
        out.iterations.push(per_block);
    }
    out.exec_counts = m.exec_counts;
    Ok(out)
}

/// Execute the program with captured blocks replayed and the rest eager.
pub fn run_replay(
    program: &Program,
    captured: &BTreeMap<BlockId, CapturedGraph>,
    plan: &InputPlan,
    iterations: u64,
) -> Result<RunOutput, ExecError> {
    let mut m = Machine::new(program, plan);
    for cg in captured.values() {
        for d in &cg.placeholder_descs {
            m.descs.insert(d.id, d.clone());
        }
    }
    m.run_init()?;
    let mut out = RunOutput::default();
    for iter in 1..=iterations {
        m.provision(iter)?;
        let mut per_block = Vec::new();
        for b in &program.blocks {
            match captured.get(&b.id) {
                Some(cg) => {
                    replay_block(&mut m, cg)?;
                    per_block.push(m.collect_outputs(b.id, &cg.outputs)?);
                }
                None => {
                    m.replaying = false;
                    m.run_block_eager(b)?;
                    per_block.push(m.collect_outputs(b.id, &b.outputs)?);
                }
            }
        }
        out.iterations.push(per_block);
    }
    out.exec_counts = m.exec_counts;
    Ok(out)
}

fn replay_block(m: &mut Machine, cg: &CapturedGraph) -> Result<(), ExecError> {
    // Pre-replay work runs outside the captured region with live values.
    m.replaying = false;
    m.apply_scalar_refreshes(&cg.scalar_refreshes)?;

    // Refresh placeholders: data copies for data placeholders, pointer
    // updates for cells.
    for action in &cg.copy_plan {
        let ph = cg
            .placeholder(action.placeholder)
            .expect("copy action names a placeholder");
        let CopySource::InputTensor(src) = action.source;
        let actual = m.plan.alias(src, m.iteration);
        match ph.role {
            PlaceholderRole::Data => {
                let values = m
                    .read(0, actual)
                    .map_err(|_| ExecError::MissingInput {
                        tensor: actual,
                        iteration: m.iteration,
                    })?
                    .clone();
                let class = m.class_of(actual);
                m.write(ph.backing, values, class)?;
            }
            PlaceholderRole::PointerCell => {
                if !m.descs.contains_key(&actual) {
                    return Err(ExecError::MissingInput {
                        tensor: actual,
                        iteration: m.iteration,
                    });
                }
                let cell = ph.cell.expect("pointer-cell placeholder carries its cell");
                m.cells.insert(cell, actual);
            }
        }
    }

    // Prelude: translate patch table into per-iteration parameter overrides.
    m.patches.clear();
    if let Some(plan) = &cg.prelude {
        for patch in &plan.patches {
            let target = *m.cells.get(&patch.cell).ok_or(ExecError::UnboundCell {
                node: plan.prelude_node,
                cell: patch.cell,
            })?;
            let slot = cg
                .slot_of_offset(patch.kernel, patch.param_buffer_offset)
                .ok_or(ExecError::Malformed {
                    node: patch.kernel,
                    msg: format!("no slot at offset {}", patch.param_buffer_offset),
                })?;
            m.patches.insert((patch.kernel, slot), target);
        }
    }

    // The recorded nodes themselves: frozen bindings, stale scalars.
    m.replaying = true;
    for n in &cg.nodes {
        m.exec_node(n)?;
    }
    m.replaying = false;
    m.patches.clear();

    // Graph outputs land in pool storage; downstream consumers see them
    // through the original tensor ids.
    for (backing, original) in &cg.mirrors {
        if let Some(v) = m.device.get(backing).cloned() {
            let class = m.class_of(*backing);
            m.write(*original, v, class)?;
        }
    }

    m.apply_post_replay_copies(&cg.post_replay_copies)?;
    Ok(())
}
