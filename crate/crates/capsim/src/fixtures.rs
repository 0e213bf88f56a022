//! Workload builders: calibrated analogs of well-known launch-bound traces
//! plus a seeded random program generator spanning every blocking cause.
//!
//! The named analogs pin only counts, sizes, and durations that matter to
//! their scenario — kernel totals, external byte volumes, launch/compute
//! ratios — and keep everything else minimal. Same spec and seed always
//! build the identical program, byte for byte.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ir::{
    validate, Block, IterationInput, Node, NodeOp, Opcode, ParamBinding, ParamKind, Program,
    TensorDesc, TensorId, ValueRule,
};
use crate::ir::Device;
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn named(name: &str) -> FixtureSpec {
        FixtureSpec {
            name: name.to_string(),
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn seeded(name: &str, seed: u64) -> FixtureSpec {
        FixtureSpec {
            seed,
            ..Self::named(name)
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> FixtureSpec {
        self.params.insert(key.to_string(), value);
        self
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        *self.params.get(key).unwrap_or(&default)
    }
}

#[derive(Debug, Error)]
pub enum InvalidSpec {
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("parameter `{key}` = {value} is invalid: {why}")]
    BadParam {
        key: String,
        value: f64,
        why: String,
    },
    #[error("fixture `{name}` built an invalid program: {detail}")]
    BuildInvalid { name: String, detail: String },
}

/// Build a fixture. Every produced program passes structural validation.
pub fn build(spec: &FixtureSpec) -> Result<Program, InvalidSpec> {
    let program = match spec.name.as_str() {
        "empty" => Program::default(),
        "fig2" => fig2_analog(),
        "tiny_tensor" => tiny_tensor(),
        "eos" => eos_analog(),
        "dr_i" => dr_i_analog(),
        "xlnet_i" => xlnet_i_analog(),
        "st" => st_analog(),
        "dalle2" => dalle2_analog(),
        "dalle2_hoist" => dalle2_hoist_analog(),
        "vm" => vm_analog(),
        "corpus123" => corpus123(),
        "random" => random_program(spec)?,
        other => return Err(InvalidSpec::UnknownFixture(other.to_string())),
    };
    let report = validate(&program);
    if !report.ok() {
        return Err(InvalidSpec::BuildInvalid {
            name: spec.name.clone(),
            detail: serde_json::to_string(&report.violations).expect("violations serialize"),
        });
    }
    Ok(program)
}

/// The specs of every committed fixture, in file order.
pub fn named_specs() -> Vec<FixtureSpec> {
    [
        "corpus123",
        "dalle2",
        "dalle2_hoist",
        "dr_i",
        "empty",
        "eos",
        "fig2",
        "st",
        "tiny_tensor",
        "vm",
        "xlnet_i",
    ]
    .into_iter()
    .map(FixtureSpec::named)
    .collect()
}

/// All named fixtures, built.
pub fn corpus() -> Vec<(String, Program)> {
    named_specs()
        .iter()
        .map(|s| (s.name.clone(), build(s).expect("named fixtures build")))
        .collect()
}

// ── Construction helpers ────────────────────────────────────────────────────

#[derive(Debug, Default)]
struct Ids {
    tensor: TensorId,
    node: u64,
    kernel: u64,
}

impl Ids {
    fn t(&mut self) -> TensorId {
        self.tensor += 1;
        self.tensor
    }
    fn n(&mut self) -> u64 {
        self.node += 1;
        self.node
    }
    fn k(&mut self) -> u64 {
        self.kernel += 1;
        self.kernel
    }
}

fn dev(id: TensorId, num_elems: u64) -> TensorDesc {
    TensorDesc {
        id,
        device: Device::Device,
        elem_size: 8,
        num_elems,
        is_scalar: false,
    }
}

fn host(id: TensorId, num_elems: u64) -> TensorDesc {
    TensorDesc {
        id,
        device: Device::Host,
        elem_size: 8,
        num_elems,
        is_scalar: false,
    }
}

fn dptr(slot: usize, t: TensorId) -> ParamBinding {
    ParamBinding::new(slot, ParamKind::DevicePtr(t))
}

fn input_bindings(tensors: &[TensorId]) -> Vec<ParamBinding> {
    tensors
        .iter()
        .enumerate()
        .map(|(i, t)| dptr(i, *t))
        .collect()
}

/// Append `count` element-add kernels chaining `start` through fresh device
/// tensors, mixing in each of `exts` round-robin so every one is read.
/// Returns the last tensor in the chain.
fn chain(
    ids: &mut Ids,
    tensors: &mut Vec<TensorDesc>,
    nodes: &mut Vec<Node>,
    start: TensorId,
    exts: &[TensorId],
    count: usize,
    num_elems: u64,
    duration_us: f64,
) -> TensorId {
    let mut prev = start;
    for i in 0..count {
        let other = exts[(i + 1) % exts.len()];
        let out = ids.t();
        tensors.push(dev(out, num_elems));
        nodes.push(Node::kernel(
            ids.n(),
            ids.k(),
            Opcode::ElemAdd,
            vec![dptr(0, prev), dptr(1, other), dptr(2, out)],
            duration_us,
        ));
        prev = out;
    }
    prev
}

fn set_uses_rng(node: &mut Node) {
    if let NodeOp::KernelLaunch { uses_rng, .. } = &mut node.op {
        *uses_rng = true;
    }
}

// ── Named analogs ───────────────────────────────────────────────────────────

/// Training-style loop whose kernel takes a live host scalar by value.
/// Naive capture freezes the value recorded on the first iteration; the
/// scalar changes every iteration after that, so replay goes stale on
/// iteration 2. The scalar cast repairs it exactly.
fn fig2_analog() -> Program {
    let mut ids = Ids::default();
    let t1 = ids.t();
    let t2 = ids.t();
    let t3 = ids.t();
    let nodes = vec![
        Node::kernel(
            ids.n(),
            ids.k(),
            Opcode::ScaleByScalar,
            vec![
                dptr(0, t1),
                ParamBinding::new(
                    1,
                    ParamKind::ScalarByValue {
                        value: 0.5,
                        input: Some(900),
                    },
                ),
                dptr(2, t2),
            ],
            2.0,
        ),
        Node::kernel(
            ids.n(),
            ids.k(),
            Opcode::ElemAdd,
            vec![dptr(0, t2), dptr(1, t1), dptr(2, t3)],
            2.0,
        ),
    ];
    Program {
        tensors: vec![dev(t1, 256), dev(t2, 256), dev(t3, 256)],
        blocks: vec![Block {
            id: 1,
            inputs: input_bindings(&[t1]),
            nodes,
            outputs: vec![t3],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        }],
        iteration_inputs: vec![IterationInput::ScalarInput {
            id: 900,
            rule: ValueRule::PerIteration,
        }],
        iterations: 100,
        seed: 42,
        ..Default::default()
    }
}

/// Twenty 5 µs kernels over one 64-byte input. Replay beats eager on launch
/// latency alone, but the pointer cell's fixed host-copy cost exceeds the
/// 64-byte device copy it would replace, so plain graph wins over
/// graph-with-indirection.
fn tiny_tensor() -> Program {
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut nodes = Vec::new();
    let t1 = ids.t();
    tensors.push(dev(t1, 8));
    let last = chain(&mut ids, &mut tensors, &mut nodes, t1, &[t1], 20, 8, 5.0);
    Program {
        tensors,
        blocks: vec![Block {
            id: 1,
            inputs: input_bindings(&[t1]),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        }],
        iterations: 2,
        seed: 7,
        ..Default::default()
    }
}

/// Two 1 µs RNG kernels over three ~91 KiB inputs. Eager costs two launches;
/// replay pays three external refresh copies plus RNG reseeding, landing at
/// 1.29× eager — the constructed regression selective deployment must avoid.
fn eos_analog() -> Program {
    eos_block_program(5)
}

fn eos_block_program(seed: u64) -> Program {
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let (block, mut ts) = eos_block(&mut ids, 1);
    tensors.append(&mut ts);
    Program {
        tensors,
        blocks: vec![block],
        iterations: 3,
        seed,
        ..Default::default()
    }
}

/// One selection candidate shaped like a short-kernel HPC step: replay
/// overhead exceeds the launch latency it saves.
fn eos_block(ids: &mut Ids, block_id: u64) -> (Block, Vec<TensorDesc>) {
    const ELEMS: u64 = 11_666; // 93,328 B per external
    let e1 = ids.t();
    let e2 = ids.t();
    let e3 = ids.t();
    let a = ids.t();
    let b = ids.t();
    let tensors = vec![
        dev(e1, ELEMS),
        dev(e2, ELEMS),
        dev(e3, ELEMS),
        dev(a, ELEMS),
        dev(b, ELEMS),
    ];
    let mut k1 = Node::kernel(
        ids.n(),
        ids.k(),
        Opcode::ElemAdd,
        vec![dptr(0, e1), dptr(1, e2), dptr(2, a)],
        1.0,
    );
    let mut k2 = Node::kernel(
        ids.n(),
        ids.k(),
        Opcode::ElemAdd,
        vec![dptr(0, a), dptr(1, e3), dptr(2, b)],
        1.0,
    );
    set_uses_rng(&mut k1);
    set_uses_rng(&mut k2);
    let block = Block {
        id: block_id,
        inputs: input_bindings(&[e1, e2, e3]),
        nodes: vec![k1, k2],
        outputs: vec![b],
        scalar_refreshes: vec![],
        post_replay_copies: vec![],
    };
    (block, tensors)
}

/// Recommender-inference analog: fifty 1 µs kernels reading one 3 GiB
/// embedding table. The table never changes shape, so indirection replaces a
/// 3 GiB refresh copy with one 8-byte pointer. Descriptor-only — never run
/// through the interpreter.
fn dr_i_analog() -> Program {
    const TABLE_ELEMS: u64 = 402_653_184; // 3,221,225,472 B
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut nodes = Vec::new();
    let table = ids.t();
    tensors.push(dev(table, TABLE_ELEMS));
    let r = ids.t();
    tensors.push(dev(r, 1));
    nodes.push(Node::kernel(
        ids.n(),
        ids.k(),
        Opcode::ReduceSum,
        vec![dptr(0, table), dptr(1, r)],
        1.0,
    ));
    let last = chain(&mut ids, &mut tensors, &mut nodes, r, &[r], 49, 1, 1.0);
    Program {
        tensors,
        blocks: vec![Block {
            id: 1,
            inputs: input_bindings(&[table]),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        }],
        iterations: 1,
        seed: 11,
        ..Default::default()
    }
}

/// Language-model inference analog: a 413-kernel block whose only blocker is
/// a single host-resident weight read. One staging hoist unblocks the whole
/// block; externals are two 4 KiB activations (8,192 B → 16 B under
/// indirection).
fn xlnet_i_analog() -> Program {
    const ELEMS: u64 = 512; // 4,096 B
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut nodes = Vec::new();
    let in1 = ids.t();
    let in2 = ids.t();
    let w = ids.t();
    tensors.push(dev(in1, ELEMS));
    tensors.push(dev(in2, ELEMS));
    tensors.push(host(w, ELEMS));
    let a1 = ids.t();
    tensors.push(dev(a1, ELEMS));
    nodes.push(Node::kernel(
        ids.n(),
        ids.k(),
        Opcode::ElemAdd,
        vec![
            dptr(0, in1),
            ParamBinding::new(1, ParamKind::HostPtr(w)),
            dptr(2, a1),
        ],
        1.0,
    ));
    let last = chain(
        &mut ids,
        &mut tensors,
        &mut nodes,
        a1,
        &[in1, in2],
        412,
        ELEMS,
        1.0,
    );
    Program {
        tensors,
        blocks: vec![Block {
            id: 1,
            inputs: input_bindings(&[in1, in2]),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        }],
        iteration_inputs: vec![IterationInput::Tensor {
            tensor: w,
            rule: ValueRule::Constant,
        }],
        iterations: 2,
        seed: 13,
        ..Default::default()
    }
}

/// Speech-transformer analog: 5,000 kernels across four blocks. Block 1
/// (257 kernels) is capturable as written — 5.14% coverage. Rewrites unlock
/// blocks 2 and 3 (scalar cast, output relocation), lifting coverage to
/// 3,711/5,000 = 74.22%. Block 4 mutates an input in place and stays out.
/// External data per captured graph is 13/14/14 tensors of 33,248 B plus one
/// 8-byte scalar cell: 1,363,176 B per replay, 336 B after indirection.
fn st_analog() -> Program {
    const ELEMS: u64 = 4_156; // 33,248 B per external
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut blocks = Vec::new();

    // Block 1: eligible as written. 257 kernels over 13 externals.
    {
        let exts: Vec<TensorId> = (0..13).map(|_| ids.t()).collect();
        tensors.extend(exts.iter().map(|t| dev(*t, ELEMS)));
        let mut nodes = Vec::new();
        let last = chain(
            &mut ids,
            &mut tensors,
            &mut nodes,
            exts[0],
            &exts,
            257,
            ELEMS,
            1.0,
        );
        blocks.push(Block {
            id: 1,
            inputs: input_bindings(&exts),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        });
    }

    // Block 2: 1,727 kernels behind one live scalar parameter.
    {
        let exts: Vec<TensorId> = (0..14).map(|_| ids.t()).collect();
        tensors.extend(exts.iter().map(|t| dev(*t, ELEMS)));
        let b1 = ids.t();
        tensors.push(dev(b1, ELEMS));
        let mut nodes = vec![Node::kernel(
            ids.n(),
            ids.k(),
            Opcode::ScaleByScalar,
            vec![
                dptr(0, exts[0]),
                ParamBinding::new(
                    1,
                    ParamKind::ScalarByValue {
                        value: 2.0,
                        input: Some(910),
                    },
                ),
                dptr(2, b1),
            ],
            1.0,
        )];
        let last = chain(
            &mut ids,
            &mut tensors,
            &mut nodes,
            b1,
            &exts,
            1_726,
            ELEMS,
            1.0,
        );
        blocks.push(Block {
            id: 2,
            inputs: input_bindings(&exts),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        });
    }

    // Block 3: 1,727 kernels ending in a host-resident output.
    {
        let exts: Vec<TensorId> = (0..14).map(|_| ids.t()).collect();
        tensors.extend(exts.iter().map(|t| dev(*t, ELEMS)));
        let mut nodes = Vec::new();
        let prev = chain(
            &mut ids,
            &mut tensors,
            &mut nodes,
            exts[0],
            &exts,
            1_726,
            ELEMS,
            1.0,
        );
        let h_out = ids.t();
        tensors.push(host(h_out, ELEMS));
        nodes.push(Node::kernel(
            ids.n(),
            ids.k(),
            Opcode::ElemAdd,
            vec![
                dptr(0, prev),
                dptr(1, exts[0]),
                ParamBinding::new(2, ParamKind::HostPtr(h_out)),
            ],
            1.0,
        ));
        blocks.push(Block {
            id: 3,
            inputs: input_bindings(&exts),
            nodes,
            outputs: vec![h_out],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        });
    }

    // Block 4: 1,289 kernels poisoned by an in-place input mutation —
    // detected, never repaired, never captured.
    {
        let exts: Vec<TensorId> = (0..4).map(|_| ids.t()).collect();
        tensors.extend(exts.iter().map(|t| dev(*t, ELEMS)));
        let m1 = exts[0];
        let mut nodes = vec![Node {
            id: ids.n(),
            op: NodeOp::KernelLaunch {
                kernel_id: ids.k(),
                opcode: Opcode::ElemMul,
                rewritable: true,
                uses_rng: false,
                params: vec![dptr(0, m1), dptr(1, m1), dptr(2, m1)],
                reads: [m1].into(),
                writes: [m1].into(),
                in_place: true,
                duration_us: 1.0,
            },
        }];
        let last = chain(
            &mut ids,
            &mut tensors,
            &mut nodes,
            m1,
            &exts,
            1_288,
            ELEMS,
            1.0,
        );
        blocks.push(Block {
            id: 4,
            inputs: input_bindings(&exts),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        });
    }

    Program {
        tensors,
        blocks,
        iteration_inputs: vec![IterationInput::ScalarInput {
            id: 910,
            rule: ValueRule::PerIteration,
        }],
        iterations: 1,
        seed: 23,
        ..Default::default()
    }
}

/// Diffusion-inference analog: 740 short kernels totaling 3,400 µs of GPU
/// work under an 18.9 µs per-launch overhead — 14 ms eager, of which ~76% is
/// launch stall. The canonical launch-bound workload.
fn dalle2_analog() -> Program {
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut nodes = Vec::new();
    let t0 = ids.t();
    tensors.push(dev(t0, 16));
    let last = chain(
        &mut ids,
        &mut tensors,
        &mut nodes,
        t0,
        &[t0],
        740,
        16,
        3_400.0 / 740.0,
    );
    Program {
        cost_model: BTreeMap::from([("launch_latency_us".to_string(), 14_000.0 / 740.0)]),
        tensors,
        blocks: vec![Block {
            id: 1,
            inputs: input_bindings(&[t0]),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        }],
        iterations: 1,
        seed: 17,
        ..Default::default()
    }
}

/// A 314-kernel block blocked by a single synchronous host-to-device copy of
/// an iteration-invariant weight. One hoist moves the copy (and its alloc)
/// to init, unblocking the whole block: coverage 0% → 100%.
fn dalle2_hoist_analog() -> Program {
    const ELEMS: u64 = 128;
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let t0 = ids.t();
    let w = ids.t();
    let wd = ids.t();
    tensors.push(dev(t0, ELEMS));
    tensors.push(host(w, ELEMS));
    tensors.push(dev(wd, ELEMS));
    let a1 = ids.t();
    tensors.push(dev(a1, ELEMS));
    let mut nodes = vec![
        Node {
            id: ids.n(),
            op: NodeOp::Alloc { tensor: wd },
        },
        Node {
            id: ids.n(),
            op: NodeOp::MemCopy {
                src: w,
                dst: wd,
                sync: true,
            },
        },
        Node::kernel(
            ids.n(),
            ids.k(),
            Opcode::ElemAdd,
            vec![dptr(0, t0), dptr(1, wd), dptr(2, a1)],
            1.0,
        ),
    ];
    let last = chain(
        &mut ids,
        &mut tensors,
        &mut nodes,
        a1,
        &[t0],
        313,
        ELEMS,
        1.0,
    );
    Program {
        tensors,
        blocks: vec![Block {
            id: 1,
            inputs: input_bindings(&[t0]),
            nodes,
            outputs: vec![last],
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        }],
        iteration_inputs: vec![IterationInput::Tensor {
            tensor: w,
            rule: ValueRule::Constant,
        }],
        iterations: 2,
        seed: 19,
        ..Default::default()
    }
}

/// A pointer-indirection-favorable candidate: ten 1 µs kernels over one
/// 16 MiB input whose refresh copy dwarfs everything else.
fn pi_block(ids: &mut Ids, tensors: &mut Vec<TensorDesc>, block_id: u64) -> Block {
    const BIG: u64 = 2_097_152; // 16 MiB
    let big = ids.t();
    tensors.push(dev(big, BIG));
    let r = ids.t();
    tensors.push(dev(r, 1));
    let mut nodes = vec![Node::kernel(
        ids.n(),
        ids.k(),
        Opcode::ReduceSum,
        vec![dptr(0, big), dptr(1, r)],
        1.0,
    )];
    let last = chain(ids, tensors, &mut nodes, r, &[r], 9, 1, 1.0);
    Block {
        id: block_id,
        inputs: input_bindings(&[big]),
        nodes,
        outputs: vec![last],
        scalar_refreshes: vec![],
        post_replay_copies: vec![],
    }
}

/// A plain-graph-favorable candidate: the tiny-tensor shape.
fn graph_block(ids: &mut Ids, tensors: &mut Vec<TensorDesc>, block_id: u64) -> Block {
    let t1 = ids.t();
    tensors.push(dev(t1, 8));
    let mut nodes = Vec::new();
    let last = chain(ids, tensors, &mut nodes, t1, &[t1], 20, 8, 5.0);
    Block {
        id: block_id,
        inputs: input_bindings(&[t1]),
        nodes,
        outputs: vec![last],
        scalar_refreshes: vec![],
        post_replay_copies: vec![],
    }
}

/// Vision-model analog: 21 capture candidates of which only four pay off —
/// three of those only with indirection — and 17 would regress.
fn vm_analog() -> Program {
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut blocks = Vec::new();
    for b in 1..=3 {
        blocks.push(pi_block(&mut ids, &mut tensors, b));
    }
    blocks.push(graph_block(&mut ids, &mut tensors, 4));
    for b in 5..=21 {
        let (block, mut ts) = eos_block(&mut ids, b);
        tensors.append(&mut ts);
        blocks.push(block);
    }
    Program {
        tensors,
        blocks,
        iterations: 1,
        seed: 29,
        ..Default::default()
    }
}

/// Selection corpus: 123 capture candidates of which 97 are beneficial.
fn corpus123() -> Program {
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut blocks = Vec::new();
    for b in 1..=97 {
        blocks.push(graph_block(&mut ids, &mut tensors, b));
    }
    for b in 98..=123 {
        let (block, mut ts) = eos_block(&mut ids, b);
        tensors.append(&mut ts);
        blocks.push(block);
    }
    Program {
        tensors,
        blocks,
        iterations: 1,
        seed: 31,
        ..Default::default()
    }
}

// ── Random program generator ────────────────────────────────────────────────

/// Parameters (all optional, with defaults):
/// `blocks`, `kernels` (chain length per block), `max_elems`, and per-cause
/// injection probabilities `p_scalar`, `p_host_read`, `p_sync_copy`,
/// `p_host_out`, `p_input_mut`, `p_device_sync`, plus `p_per_iter` for
/// explicitly per-iteration inputs and `p_reduce` for reduction sinks.
pub fn random_program(spec: &FixtureSpec) -> Result<Program, InvalidSpec> {
    let blocks_n = spec.get("blocks", 4.0) as usize;
    let kernels_n = spec.get("kernels", 6.0) as usize;
    let max_elems = spec.get("max_elems", 32.0) as u64;
    if blocks_n == 0 || kernels_n == 0 || max_elems == 0 {
        return Err(InvalidSpec::BadParam {
            key: "blocks/kernels/max_elems".to_string(),
            value: 0.0,
            why: "must be at least 1".to_string(),
        });
    }
    for key in [
        "p_scalar",
        "p_host_read",
        "p_sync_copy",
        "p_host_out",
        "p_input_mut",
        "p_device_sync",
        "p_per_iter",
        "p_reduce",
    ] {
        let v = spec.get(key, 0.0);
        if !(0.0..=1.0).contains(&v) {
            return Err(InvalidSpec::BadParam {
                key: key.to_string(),
                value: v,
                why: "probability must lie in [0, 1]".to_string(),
            });
        }
    }
    let p_scalar = spec.get("p_scalar", 0.25);
    let p_host_read = spec.get("p_host_read", 0.2);
    let p_sync_copy = spec.get("p_sync_copy", 0.2);
    let p_host_out = spec.get("p_host_out", 0.2);
    let p_input_mut = spec.get("p_input_mut", 0.1);
    let p_device_sync = spec.get("p_device_sync", 0.1);
    let p_per_iter = spec.get("p_per_iter", 0.3);
    let p_reduce = spec.get("p_reduce", 0.15);

    let mut s = Stream::new(spec.seed, 7);
    let mut ids = Ids::default();
    let mut tensors = Vec::new();
    let mut blocks = Vec::new();
    let mut iteration_inputs = Vec::new();
    let mut scalar_input_id = 9_000u64;

    for bi in 0..blocks_n {
        let elems = 1 + s.below(max_elems);
        let n_inputs = s.range(1, 3) as usize;
        let inputs: Vec<TensorId> = (0..n_inputs).map(|_| ids.t()).collect();
        tensors.extend(inputs.iter().map(|t| dev(*t, elems)));
        if s.chance(p_per_iter) {
            iteration_inputs.push(IterationInput::Tensor {
                tensor: inputs[0],
                rule: ValueRule::PerIteration,
            });
        }

        let mut nodes: Vec<Node> = Vec::new();
        let mut outputs: Vec<TensorId> = Vec::new();
        let mut prev = inputs[0];

        // Chain of elementwise kernels with occasional cause injections.
        for ki in 0..kernels_n {
            let dur = 0.5 + 4.0 * s.next_unit();
            let other = inputs[s.below(inputs.len() as u64) as usize];
            let out = ids.t();
            tensors.push(dev(out, elems));
            if s.chance(p_scalar) {
                scalar_input_id += 1;
                let live = s.chance(0.5);
                if live {
                    iteration_inputs.push(IterationInput::ScalarInput {
                        id: scalar_input_id,
                        rule: ValueRule::PerIteration,
                    });
                }
                nodes.push(Node::kernel(
                    ids.n(),
                    ids.k(),
                    Opcode::ScaleByScalar,
                    vec![
                        dptr(0, prev),
                        ParamBinding::new(
                            1,
                            ParamKind::ScalarByValue {
                                value: 0.25 + s.next_unit(),
                                input: live.then_some(scalar_input_id),
                            },
                        ),
                        dptr(2, out),
                    ],
                    dur,
                ));
            } else if s.chance(p_host_read) {
                let w = ids.t();
                tensors.push(host(w, elems));
                iteration_inputs.push(IterationInput::Tensor {
                    tensor: w,
                    rule: ValueRule::Constant,
                });
                nodes.push(Node::kernel(
                    ids.n(),
                    ids.k(),
                    Opcode::ElemAdd,
                    vec![
                        dptr(0, prev),
                        ParamBinding::new(1, ParamKind::HostPtr(w)),
                        dptr(2, out),
                    ],
                    dur,
                ));
            } else if s.chance(p_sync_copy) {
                let w = ids.t();
                let wd = ids.t();
                tensors.push(host(w, elems));
                tensors.push(dev(wd, elems));
                iteration_inputs.push(IterationInput::Tensor {
                    tensor: w,
                    rule: ValueRule::Constant,
                });
                nodes.push(Node {
                    id: ids.n(),
                    op: NodeOp::Alloc { tensor: wd },
                });
                nodes.push(Node {
                    id: ids.n(),
                    op: NodeOp::MemCopy {
                        src: w,
                        dst: wd,
                        sync: true,
                    },
                });
                nodes.push(Node::kernel(
                    ids.n(),
                    ids.k(),
                    Opcode::ElemAdd,
                    vec![dptr(0, prev), dptr(1, wd), dptr(2, out)],
                    dur,
                ));
            } else {
                let op = match s.below(3) {
                    0 => Opcode::ElemAdd,
                    1 => Opcode::ElemMul,
                    _ => Opcode::Copy,
                };
                let params = if matches!(op, Opcode::Copy) {
                    vec![dptr(0, prev), dptr(1, out)]
                } else {
                    vec![dptr(0, prev), dptr(1, other), dptr(2, out)]
                };
                nodes.push(Node::kernel(ids.n(), ids.k(), op, params, dur));
            }
            prev = out;

            if ki + 1 == kernels_n / 2 && s.chance(p_device_sync) {
                nodes.push(Node {
                    id: ids.n(),
                    op: NodeOp::DeviceSync,
                });
            }
        }

        if s.chance(p_reduce) {
            let r = ids.t();
            tensors.push(dev(r, 1));
            nodes.push(Node::kernel(
                ids.n(),
                ids.k(),
                Opcode::ReduceSum,
                vec![dptr(0, prev), dptr(1, r)],
                0.5 + s.next_unit(),
            ));
            outputs.push(r);
        }

        if s.chance(p_input_mut) {
            let m = inputs[s.below(inputs.len() as u64) as usize];
            nodes.push(Node {
                id: ids.n(),
                op: NodeOp::KernelLaunch {
                    kernel_id: ids.k(),
                    opcode: Opcode::ElemMul,
                    rewritable: true,
                    uses_rng: false,
                    params: vec![dptr(0, m), dptr(1, m), dptr(2, m)],
                    reads: [m].into(),
                    writes: [m].into(),
                    in_place: true,
                    duration_us: 0.5 + s.next_unit(),
                },
            });
        }

        if s.chance(p_host_out) {
            let h = ids.t();
            tensors.push(host(h, elems));
            nodes.push(Node::kernel(
                ids.n(),
                ids.k(),
                Opcode::Copy,
                vec![dptr(0, prev), ParamBinding::new(1, ParamKind::HostPtr(h))],
                0.5 + s.next_unit(),
            ));
            outputs.push(h);
        } else {
            outputs.push(prev);
        }

        // Occasionally mark a kernel as RNG-consuming so replay must reseed.
        if s.chance(0.3) {
            let kernels: Vec<usize> = nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.is_kernel())
                .map(|(i, _)| i)
                .collect();
            let pick = kernels[s.below(kernels.len() as u64) as usize];
            set_uses_rng(&mut nodes[pick]);
        }

        blocks.push(Block {
            id: (bi + 1) as u64,
            inputs: input_bindings(&inputs),
            nodes,
            outputs,
            scalar_refreshes: vec![],
            post_replay_copies: vec![],
        });
    }

    Ok(Program {
        tensors,
        blocks,
        iteration_inputs,
        iterations: 2 + spec.seed % 2,
        seed: spec.seed,
        ..Default::default()
    })
}
