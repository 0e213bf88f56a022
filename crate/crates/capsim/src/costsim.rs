//! Calibrated launch-cost simulator.
//!
//! Two execution shapes are costed:
//!
//! * **eager** — every node is issued individually by the CPU. A two-resource
//!   pipeline tracks CPU issue time and GPU availability; kernels overlap
//!   with issue work, synchronous copies and device syncs stall the CPU.
//! * **replay** — one graph launch covers the whole block. Total cost is
//!   closed-form: placeholder refresh copies, the launch itself, optional
//!   prelude patching, per-node device dispatch, and per-replay fixed
//!   overheads (RNG state reset, host output rebuilding).
//!
//! All durations are microseconds; bandwidths are GB/s (= bytes/1000 per µs).

use serde::Serialize;
use thiserror::Error;

use crate::capture::{CapturedGraph, Direction};
use crate::ir::*;

// ── Cost model ──────────────────────────────────────────────────────────────

/// Tunable constants. Defaults are calibrated against published
/// measurements: 5–10 µs per CPU-issued launch (midpoint 7.5), NVLink-class
/// device bandwidth, PCIe-class host bandwidth with a fixed per-transfer
/// setup cost that dominates pointer-sized writes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostModel {
    pub launch_latency_us: f64,
    pub graph_launch_us: f64,
    pub device_dispatch_us: f64,
    #[serde(rename = "d2d_bandwidth_GBps")]
    pub d2d_bandwidth_gbps: f64,
    pub d2d_fixed_us: f64,
    #[serde(rename = "h2d_bandwidth_GBps")]
    pub h2d_bandwidth_gbps: f64,
    pub h2d_fixed_us: f64,
    pub prelude_base_us: f64,
    pub prelude_per_patch_us: f64,
    pub rng_reset_us: f64,
    pub host_obj_rebuild_us: f64,
    /// Per-kernel cost of loading a pointer through an indirection cell.
    pub ptr_deref_us: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            launch_latency_us: 7.5,
            graph_launch_us: 7.5,
            device_dispatch_us: 0.5,
            d2d_bandwidth_gbps: 2000.0,
            d2d_fixed_us: 1.0,
            h2d_bandwidth_gbps: 25.0,
            h2d_fixed_us: 1.5,
            prelude_base_us: 2.0,
            prelude_per_patch_us: 0.25,
            rng_reset_us: 5.0,
            host_obj_rebuild_us: 2.0,
            ptr_deref_us: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown cost model field: {0}")]
pub struct UnknownCostField(pub String);

impl CostModel {
    /// Defaults merged with per-field overrides (the workload file's
    /// `cost_model` object).
    pub fn with_overrides(overrides: &CostOverrides) -> Result<CostModel, UnknownCostField> {
        let mut m = CostModel::default();
        for (k, v) in overrides {
            match k.as_str() {
                "launch_latency_us" => m.launch_latency_us = *v,
                "graph_launch_us" => m.graph_launch_us = *v,
                "device_dispatch_us" => m.device_dispatch_us = *v,
                "d2d_bandwidth_GBps" => m.d2d_bandwidth_gbps = *v,
                "d2d_fixed_us" => m.d2d_fixed_us = *v,
                "h2d_bandwidth_GBps" => m.h2d_bandwidth_gbps = *v,
                "h2d_fixed_us" => m.h2d_fixed_us = *v,
                "prelude_base_us" => m.prelude_base_us = *v,
                "prelude_per_patch_us" => m.prelude_per_patch_us = *v,
                "rng_reset_us" => m.rng_reset_us = *v,
                "host_obj_rebuild_us" => m.host_obj_rebuild_us = *v,
                "ptr_deref_us" => m.ptr_deref_us = *v,
                other => return Err(UnknownCostField(other.to_string())),
            }
        }
        Ok(m)
    }

    pub fn for_program(p: &Program) -> Result<CostModel, UnknownCostField> {
        Self::with_overrides(&p.cost_model)
    }

    /// Time for one transfer. Host-crossing directions pay the host-link
    /// setup cost; device-to-device runs on the fast fabric.
    pub fn copy_cost_us(&self, bytes: u64, dir: Direction) -> f64 {
        let (gbps, fixed) = match dir {
            Direction::D2D => (self.d2d_bandwidth_gbps, self.d2d_fixed_us),
            _ => (self.h2d_bandwidth_gbps, self.h2d_fixed_us),
        };
        // 1 GB/s moves 1000 bytes per µs.
        fixed + bytes as f64 / (gbps * 1000.0)
    }
}

// ── Results ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Breakdown {
    /// Time attributable to CPU-side issue work: eager launch stalls, or the
    /// single graph launch under replay.
    pub cpu_launch_us: f64,
    pub gpu_compute_us: f64,
    pub copy_us: f64,
    /// Indirection overhead: prelude patching plus per-kernel dereferences.
    pub prelude_us: f64,
    /// Per-replay costs: device dispatch, RNG reset, host object rebuilds.
    pub fixed_overhead_us: f64,
}

impl Breakdown {
    pub fn sum(&self) -> f64 {
        self.cpu_launch_us
            + self.gpu_compute_us
            + self.copy_us
            + self.prelude_us
            + self.fixed_overhead_us
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimelineEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub label: String,
    pub cpu_issue_us: f64,
    pub gpu_start_us: f64,
    pub gpu_end_us: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub total_us: f64,
    pub breakdown: Breakdown,
    pub timeline: Vec<TimelineEntry>,
}

impl SimResult {
    /// Totals and breakdown only — decision records don't carry schedules.
    pub fn without_timeline(&self) -> SimResult {
        SimResult {
            total_us: self.total_us,
            breakdown: self.breakdown.clone(),
            timeline: Vec::new(),
        }
    }

    pub fn launch_bound_fraction(&self) -> f64 {
        if self.total_us <= 0.0 {
            0.0
        } else {
            self.breakdown.cpu_launch_us / self.total_us
        }
    }
}

// ── Eager simulation ────────────────────────────────────────────────────────

/// One eager iteration of a block: every kernel and copy issued from the
/// CPU, pipelined against a single device stream.
pub fn simulate_eager(block: &Block, program: &Program, cost: &CostModel) -> SimResult {
    let descs = program.tensor_map();
    let mut cpu = 0.0f64;
    let mut gpu_free = 0.0f64;
    let mut compute = 0.0f64;
    let mut copy = 0.0f64;
    let mut prelude = 0.0f64;
    let mut timeline = Vec::new();

    // Live scalar values land in their device cells before the block runs.
    for r in &block.scalar_refreshes {
        let c = cost.copy_cost_us(8, Direction::H2D);
        timeline.push(TimelineEntry {
            node: None,
            label: format!("scalar refresh → t{}", r.tensor),
            cpu_issue_us: cpu,
            gpu_start_us: cpu,
            gpu_end_us: cpu + c,
        });
        cpu += c;
        copy += c;
        gpu_free = gpu_free.max(cpu);
    }

    for n in &block.nodes {
        match &n.op {
            NodeOp::KernelLaunch { duration_us, .. } => {
                cpu += cost.launch_latency_us;
                let start = cpu.max(gpu_free);
                let end = start + duration_us;
                timeline.push(TimelineEntry {
                    node: Some(n.id),
                    label: "kernel".into(),
                    cpu_issue_us: cpu,
                    gpu_start_us: start,
                    gpu_end_us: end,
                });
                gpu_free = end;
                compute += duration_us;
            }
            NodeOp::PreludeKernel { duration_us } => {
                cpu += cost.launch_latency_us;
                let start = cpu.max(gpu_free);
                let end = start + duration_us;
                timeline.push(TimelineEntry {
                    node: Some(n.id),
                    label: "prelude".into(),
                    cpu_issue_us: cpu,
                    gpu_start_us: start,
                    gpu_end_us: end,
                });
                gpu_free = end;
                prelude += duration_us;
            }
            NodeOp::MemCopy { src, dst, sync } => {
                let bytes = descs.get(src).map(|d| d.total_bytes()).unwrap_or(0);
                let dir = dir_of(&descs, *src, *dst);
                let c = cost.copy_cost_us(bytes, dir);
                cpu += cost.launch_latency_us;
                let start = cpu.max(gpu_free);
                let end = start + c;
                timeline.push(TimelineEntry {
                    node: Some(n.id),
                    label: if *sync { "sync copy".into() } else { "async copy".into() },
                    cpu_issue_us: cpu,
                    gpu_start_us: start,
                    gpu_end_us: end,
                });
                gpu_free = end;
                copy += c;
                if *sync {
                    cpu = end; // CPU blocks until the transfer completes
                }
            }
            NodeOp::DeviceSync => {
                cpu = cpu.max(gpu_free);
                timeline.push(TimelineEntry {
                    node: Some(n.id),
                    label: "device sync".into(),
                    cpu_issue_us: cpu,
                    gpu_start_us: cpu,
                    gpu_end_us: cpu,
                });
            }
            // Steady-state blocks hit the allocation pool: free.
            NodeOp::Alloc { .. } | NodeOp::Free { .. } => {}
        }
    }

    // Output materialization back to the host blocks the CPU.
    for c in &block.post_replay_copies {
        let bytes = descs.get(&c.src).map(|d| d.total_bytes()).unwrap_or(0);
        let dir = dir_of(&descs, c.src, c.dst);
        let t = cost.copy_cost_us(bytes, dir);
        let start = cpu.max(gpu_free);
        let end = start + t;
        timeline.push(TimelineEntry {
            node: None,
            label: format!("output copy t{} → t{}", c.src, c.dst),
            cpu_issue_us: start,
            gpu_start_us: start,
            gpu_end_us: end,
        });
        cpu = end;
        gpu_free = end;
        copy += t;
    }

    let total = cpu.max(gpu_free);
    // Whatever is not compute, copy, or prelude time is CPU launch stall:
    // the conservation identity holds exactly by construction.
    let breakdown = Breakdown {
        cpu_launch_us: total - compute - copy - prelude,
        gpu_compute_us: compute,
        copy_us: copy,
        prelude_us: prelude,
        fixed_overhead_us: 0.0,
    };
    SimResult {
        total_us: total,
        breakdown,
        timeline,
    }
}

fn dir_of(
    descs: &std::collections::BTreeMap<TensorId, &TensorDesc>,
    src: TensorId,
    dst: TensorId,
) -> Direction {
    let s = descs.get(&src).map(|d| d.device).unwrap_or(Device::Device);
    let d = descs.get(&dst).map(|d| d.device).unwrap_or(Device::Device);
    crate::capture::direction(s, d)
}

// ── Replay simulation ───────────────────────────────────────────────────────

/// One replay of a captured graph. Closed form:
///
/// ```text
/// total = Σ refresh copies (data + pointer cells + scalar cells)
///       + graph_launch
///       + prelude (base + per_patch × patches) + deref × cell-consuming kernels
///       + Σ kernels (device_dispatch + duration)
///       + Σ recorded copy nodes (copy formula)
///       + rng_reset (if any kernel uses RNG)
///       + host_obj_rebuild × outputs
///       + Σ post-replay output copies
/// ```
pub fn simulate_replay(cg: &CapturedGraph, program: &Program, cost: &CostModel) -> SimResult {
    let descs = program.tensor_map();
    let mut t = 0.0f64;
    let mut timeline = Vec::new();
    let mut copy = 0.0f64;
    let mut compute = 0.0f64;
    let mut fixed = 0.0f64;
    let mut prelude = 0.0f64;

    let span = |timeline: &mut Vec<TimelineEntry>,
                    t: &mut f64,
                    node: Option<NodeId>,
                    label: String,
                    len: f64| {
        timeline.push(TimelineEntry {
            node,
            label,
            cpu_issue_us: *t,
            gpu_start_us: *t,
            gpu_end_us: *t + len,
        });
        *t += len;
    };

    for r in &cg.scalar_refreshes {
        let c = cost.copy_cost_us(8, Direction::H2D);
        span(
            &mut timeline,
            &mut t,
            None,
            format!("scalar refresh → t{}", r.tensor),
            c,
        );
        copy += c;
    }
    for action in &cg.copy_plan {
        let c = cost.copy_cost_us(action.bytes, action.direction);
        span(
            &mut timeline,
            &mut t,
            None,
            format!("refresh placeholder {}", action.placeholder),
            c,
        );
        copy += c;
    }

    span(
        &mut timeline,
        &mut t,
        None,
        "graph launch".into(),
        cost.graph_launch_us,
    );

    for n in &cg.nodes {
        match &n.op {
            NodeOp::PreludeKernel { duration_us } => {
                span(&mut timeline, &mut t, Some(n.id), "prelude".into(), *duration_us);
                prelude += duration_us;
            }
            NodeOp::KernelLaunch { duration_us, .. } => {
                let len = cost.device_dispatch_us + duration_us;
                span(&mut timeline, &mut t, Some(n.id), "kernel".into(), len);
                compute += duration_us;
                fixed += cost.device_dispatch_us;
            }
            NodeOp::MemCopy { .. } => {
                let c = cg
                    .node_copy_costs
                    .iter()
                    .find(|nc| nc.node == n.id)
                    .map(|nc| cost.copy_cost_us(nc.bytes, nc.direction))
                    .unwrap_or(0.0);
                span(&mut timeline, &mut t, Some(n.id), "recorded copy".into(), c);
                copy += c;
            }
            _ => {}
        }
    }

    // Rewritten kernels pay a pointer load per launch.
    let deref_kernels = cg
        .nodes
        .iter()
        .filter(|n| {
            n.params()
                .iter()
                .any(|p| matches!(p.kind, ParamKind::PtrCell(_)))
        })
        .count();
    if deref_kernels > 0 {
        let c = cost.ptr_deref_us * deref_kernels as f64;
        span(
            &mut timeline,
            &mut t,
            None,
            format!("pointer dereference × {deref_kernels}"),
            c,
        );
        prelude += c;
    }

    if cg.uses_rng {
        span(&mut timeline, &mut t, None, "rng state reset".into(), cost.rng_reset_us);
        fixed += cost.rng_reset_us;
    }
    if !cg.outputs.is_empty() {
        let c = cost.host_obj_rebuild_us * cg.outputs.len() as f64;
        span(
            &mut timeline,
            &mut t,
            None,
            format!("host object rebuild × {}", cg.outputs.len()),
            c,
        );
        fixed += c;
    }
    for c in &cg.post_replay_copies {
        let bytes = descs.get(&c.src).map(|d| d.total_bytes()).unwrap_or(0);
        let dir = dir_of(&descs, c.src, c.dst);
        let len = cost.copy_cost_us(bytes, dir);
        span(
            &mut timeline,
            &mut t,
            None,
            format!("output copy t{} → t{}", c.src, c.dst),
            len,
        );
        copy += len;
    }

    let breakdown = Breakdown {
        cpu_launch_us: cost.graph_launch_us,
        gpu_compute_us: compute,
        copy_us: copy,
        prelude_us: prelude,
        fixed_overhead_us: fixed,
    };
    SimResult {
        total_us: t,
        breakdown,
        timeline,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::capture;

    fn kernel_only_block(count: usize, duration: f64) -> (Program, BlockId) {
        // Chain of Copy kernels over an in-block alloc: no external inputs.
        let n = count as u64;
        let mut tensors = vec![TensorDesc {
            id: 1,
            device: Device::Device,
            elem_size: 8,
            num_elems: 4,
            is_scalar: false,
        }];
        let mut nodes = vec![Node {
            id: 1,
            op: NodeOp::Alloc { tensor: 1 },
        }];
        for i in 0..n {
            tensors.push(TensorDesc {
                id: 2 + i,
                device: Device::Device,
                elem_size: 8,
                num_elems: 4,
                is_scalar: false,
            });
            nodes.push(Node {
                id: 100 + 2 * i,
                op: NodeOp::Alloc { tensor: 2 + i },
            });
            nodes.push(Node::kernel(
                101 + 2 * i,
                101 + 2 * i,
                Opcode::Copy,
                vec![
                    ParamBinding::new(0, ParamKind::DevicePtr(1 + i)),
                    ParamBinding::new(1, ParamKind::DevicePtr(2 + i)),
                ],
                duration,
            ));
        }
        let p = Program {
            tensors,
            blocks: vec![Block {
                id: 1,
                inputs: vec![],
                nodes,
                outputs: vec![1 + n],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            iterations: 1,
            seed: 1,
            ..Default::default()
        };
        (p, 1)
    }

    #[test]
    fn defaults_are_documented_values() {
        let m = CostModel::default();
        assert_eq!(m.launch_latency_us, 7.5);
        assert_eq!(m.graph_launch_us, 7.5);
        assert_eq!(m.device_dispatch_us, 0.5);
        assert_eq!(m.d2d_bandwidth_gbps, 2000.0);
        assert_eq!(m.h2d_bandwidth_gbps, 25.0);
        assert_eq!(m.h2d_fixed_us, 1.5);
        assert_eq!(m.prelude_base_us, 2.0);
        assert_eq!(m.prelude_per_patch_us, 0.25);
        assert_eq!(m.rng_reset_us, 5.0);
        assert_eq!(m.host_obj_rebuild_us, 2.0);
    }

    #[test]
    fn overrides_merge_and_unknown_keys_fail() {
        let mut o = CostOverrides::new();
        o.insert("launch_latency_us".into(), 18.92);
        let m = CostModel::with_overrides(&o).unwrap();
        assert_eq!(m.launch_latency_us, 18.92);
        assert_eq!(m.graph_launch_us, 7.5, "untouched fields keep defaults");

        o.insert("warp_speed".into(), 9.0);
        let err = CostModel::with_overrides(&o).unwrap_err();
        assert_eq!(err, UnknownCostField("warp_speed".into()));
    }

    #[test]
    fn single_kernel_is_launch_plus_duration() {
        let (p, _) = kernel_only_block(1, 100.0);
        let cost = CostModel {
            launch_latency_us: 10.0,
            ..CostModel::default()
        };
        let r = simulate_eager(&p.blocks[0], &p, &cost);
        assert_eq!(r.total_us, 110.0);
        assert_eq!(r.breakdown.cpu_launch_us, 10.0);
        assert_eq!(r.breakdown.gpu_compute_us, 100.0);
    }

    #[test]
    fn gpu_bound_chain_hides_later_launches() {
        let (p, _) = kernel_only_block(10, 100.0);
        let cost = CostModel {
            launch_latency_us: 5.0,
            ..CostModel::default()
        };
        let r = simulate_eager(&p.blocks[0], &p, &cost);
        assert_eq!(r.total_us, 1005.0);
        assert!((r.breakdown.sum() - r.total_us).abs() < 1e-9);
    }

    #[test]
    fn launch_bound_chain_is_cpu_paced() {
        // 740 launches at 18.92 µs each dominate 3.4 ms of device work.
        let (p, _) = kernel_only_block(740, 3400.0 / 740.0);
        let cost = CostModel {
            launch_latency_us: 14_000.0 / 740.0,
            ..CostModel::default()
        };
        let r = simulate_eager(&p.blocks[0], &p, &cost);
        assert!((r.total_us - 14_000.0).abs() / 14_000.0 < 0.02, "{}", r.total_us);
        assert!(r.launch_bound_fraction() >= 0.73, "{}", r.launch_bound_fraction());
    }

    #[test]
    fn zero_copy_replay_closed_form() {
        let (p, _) = kernel_only_block(2, 10.0);
        let cg = capture(&p.blocks[0], &p).unwrap();
        assert!(cg.copy_plan.is_empty());
        let r = simulate_replay(&cg, &p, &CostModel::default());
        // 7.5 launch + 2 × (0.5 + 10) + 2 rebuild
        assert!((r.total_us - 30.5).abs() < 1e-12, "{}", r.total_us);
        assert!((r.breakdown.sum() - r.total_us).abs() < 1e-9);
        assert_eq!(r.breakdown.gpu_compute_us, 20.0);
        assert_eq!(r.breakdown.cpu_launch_us, 7.5);
    }

    #[test]
    fn copy_share_hits_engineered_ratio() {
        // One external input sized so the refresh copy is 24% of the total.
        let (mut p, _) = kernel_only_block(2, 10.0);
        p.tensors.push(TensorDesc {
            id: 50,
            device: Device::Device,
            elem_size: 1,
            num_elems: 17_263_158,
            is_scalar: false,
        });
        p.blocks[0].inputs = vec![ParamBinding::new(0, ParamKind::DevicePtr(50))];
        // Reference it from the first kernel so capture sees a consumer.
        let k = p.blocks[0].nodes.iter_mut().find(|n| n.is_kernel()).unwrap();
        if let NodeOp::KernelLaunch { params, reads, opcode, .. } = &mut k.op {
            *opcode = Opcode::ElemAdd;
            let out = params.pop().unwrap();
            params.push(ParamBinding::new(1, ParamKind::DevicePtr(50)));
            params.push(ParamBinding {
                slot: 2,
                ..out
            });
            reads.insert(50);
        }
        let cg = capture(&p.blocks[0], &p).unwrap();
        assert_eq!(cg.stats.bytes_copied_per_replay, 17_263_158);
        let r = simulate_replay(&cg, &p, &CostModel::default());
        let share = r.breakdown.copy_us / r.total_us;
        assert!((share - 0.24).abs() <= 0.01, "share {share}");
    }

    #[test]
    fn sync_copy_stalls_cpu() {
        let (mut p, _) = kernel_only_block(2, 10.0);
        // Host staging tensor + sync H2D copy between the kernels.
        p.tensors.push(TensorDesc {
            id: 60,
            device: Device::Host,
            elem_size: 8,
            num_elems: 125_000,
            is_scalar: false,
        });
        p.tensors.push(TensorDesc {
            id: 61,
            device: Device::Device,
            elem_size: 8,
            num_elems: 125_000,
            is_scalar: false,
        });
        p.init.push(Node {
            id: 200,
            op: NodeOp::Alloc { tensor: 60 },
        });
        p.blocks[0].nodes.insert(
            3,
            Node {
                id: 201,
                op: NodeOp::Alloc { tensor: 61 },
            },
        );
        p.blocks[0].nodes.insert(
            4,
            Node {
                id: 202,
                op: NodeOp::MemCopy {
                    src: 60,
                    dst: 61,
                    sync: true,
                },
            },
        );
        let r = simulate_eager(&p.blocks[0], &p, &CostModel::default());
        // k1: issue 7.5 → [7.5, 17.5]; copy: issue 15, start 17.5,
        // 1 MB H2D = 1.5 + 40 = 41.5 → ends 59; CPU stalls to 59;
        // k2: issue 66.5 → [66.5, 76.5].
        assert!((r.total_us - 76.5).abs() < 1e-9, "{}", r.total_us);
        assert!((r.breakdown.copy_us - 41.5).abs() < 1e-9);
        assert!((r.breakdown.sum() - r.total_us).abs() < 1e-9);
    }

    #[test]
    fn eager_total_bounded_below() {
        for (count, dur, latency) in [(1usize, 100.0, 10.0), (10, 100.0, 5.0), (7, 3.0, 7.5)] {
            let (p, _) = kernel_only_block(count, dur);
            let cost = CostModel {
                launch_latency_us: latency,
                ..CostModel::default()
            };
            let r = simulate_eager(&p.blocks[0], &p, &cost);
            let floor = (dur * count as f64).max(latency * count as f64);
            assert!(r.total_us >= floor - 1e-9);
        }
    }

    #[test]
    fn replay_shrinks_with_copy_bytes() {
        let (mut p, _) = kernel_only_block(2, 10.0);
        p.tensors.push(TensorDesc {
            id: 50,
            device: Device::Device,
            elem_size: 8,
            num_elems: 1000,
            is_scalar: false,
        });
        p.blocks[0].inputs = vec![ParamBinding::new(0, ParamKind::DevicePtr(50))];
        let k = p.blocks[0].nodes.iter_mut().find(|n| n.is_kernel()).unwrap();
        if let NodeOp::KernelLaunch { params, reads, opcode, .. } = &mut k.op {
            *opcode = Opcode::ElemAdd;
            let out = params.pop().unwrap();
            params.push(ParamBinding::new(1, ParamKind::DevicePtr(50)));
            params.push(ParamBinding { slot: 2, ..out });
            reads.insert(50);
        }
        let cg = capture(&p.blocks[0], &p).unwrap();
        let full = simulate_replay(&cg, &p, &CostModel::default());
        let mut smaller = cg.clone();
        smaller.copy_plan[0].bytes /= 2;
        let half = simulate_replay(&smaller, &p, &CostModel::default());
        assert!(half.total_us <= full.total_us);
    }

    #[test]
    fn rng_and_outputs_add_fixed_costs() {
        let (mut p, _) = kernel_only_block(1, 10.0);
        if let NodeOp::KernelLaunch { uses_rng, .. } =
            &mut p.blocks[0].nodes.iter_mut().find(|n| n.is_kernel()).unwrap().op
        {
            *uses_rng = true;
        }
        let cg = capture(&p.blocks[0], &p).unwrap();
        let r = simulate_replay(&cg, &p, &CostModel::default());
        // 7.5 + (0.5 + 10) + 5 rng + 2 rebuild
        assert!((r.total_us - 25.0).abs() < 1e-12, "{}", r.total_us);
    }
}
