//! Pipeline orchestration and the documents each stage emits.
//!
//! A full report embeds, byte for byte, the same JSON subtrees the
//! individual stage subcommands print: each stage has one constructor here
//! producing one serializable document, and both paths serialize the same
//! value with the same serializer. Stage inputs mirror how stages chain on
//! the command line — analysis, transformation, and selection read the
//! original program; capture, indirection, and simulation read the
//! transformed one.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::Serialize;

use crate::capture::{
    self, coverage, CaptureStats, CapturedGraph, CopyAction, CoverageReport, PiFallback,
    PointerCell, PreludePlan,
};
use crate::costsim::{simulate_eager, simulate_replay, CostModel, SimResult};
use crate::eligibility::{analyze_program, EligibilityReport};
use crate::indirection::apply_pi;
use crate::ir::{Block, BlockId, Program};
use crate::par::{map_collect, ExecMode};
use crate::selector::{select_program_with_baseline, Choice, ProgramSelection};
use crate::transform::{transform_until_eligible, TransformOutcome};

// ── Stage documents ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeDoc {
    pub blocks: Vec<EligibilityReport>,
}

pub fn analyze_doc(program: &Program) -> AnalyzeDoc {
    AnalyzeDoc {
        blocks: analyze_program(program),
    }
}

/// Capture metadata worth reporting: the external-parameter table, pointer
/// cells, prelude, and byte accounting. Frozen node lists stay in memory.
#[derive(Debug, Clone, Serialize)]
pub struct GraphDoc {
    pub block: BlockId,
    pub kernel_count: u64,
    pub copy_plan: Vec<CopyAction>,
    pub cells: Vec<PointerCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prelude: Option<PreludePlan>,
    pub fallbacks: Vec<PiFallback>,
    pub stats: CaptureStats,
}

impl GraphDoc {
    pub fn of(cg: &CapturedGraph) -> GraphDoc {
        GraphDoc {
            block: cg.block,
            kernel_count: cg.kernel_count() as u64,
            copy_plan: cg.copy_plan.clone(),
            cells: cg.cells.clone(),
            prelude: cg.prelude.clone(),
            fallbacks: cg.fallbacks.clone(),
            stats: cg.stats.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaptureDoc {
    pub graphs: Vec<GraphDoc>,
    pub coverage: CoverageReport,
}

/// Capture every eligible block of the given program as-is.
pub fn capture_stage(program: &Program, mode: ExecMode) -> BTreeMap<BlockId, CapturedGraph> {
    map_collect(mode, &program.blocks, |b| {
        capture::capture(b, program).ok().map(|cg| (b.id, cg))
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn capture_doc(program: &Program, captured: &BTreeMap<BlockId, CapturedGraph>) -> CaptureDoc {
    let ids: BTreeSet<BlockId> = captured.keys().copied().collect();
    CaptureDoc {
        graphs: captured.values().map(GraphDoc::of).collect(),
        coverage: coverage(program, &ids),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ByteRow {
    pub block: BlockId,
    pub before: u64,
    pub after: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PiDoc {
    pub graphs: Vec<GraphDoc>,
    pub bytes: Vec<ByteRow>,
}

pub fn pi_stage(
    program: &Program,
    captured: &BTreeMap<BlockId, CapturedGraph>,
    cost: &CostModel,
    mode: ExecMode,
) -> BTreeMap<BlockId, CapturedGraph> {
    let graphs: Vec<&CapturedGraph> = captured.values().collect();
    map_collect(mode, &graphs, |cg| apply_pi(cg, program, cost))
        .into_iter()
        .map(|cg| (cg.block, cg))
        .collect()
}

pub fn pi_doc(
    captured: &BTreeMap<BlockId, CapturedGraph>,
    pied: &BTreeMap<BlockId, CapturedGraph>,
) -> PiDoc {
    let bytes = captured
        .iter()
        .map(|(id, cg)| ByteRow {
            block: *id,
            before: cg.stats.bytes_copied_per_replay,
            after: pied[id].stats.bytes_copied_per_replay,
        })
        .collect();
    PiDoc {
        graphs: pied.values().map(GraphDoc::of).collect(),
        bytes,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub block: BlockId,
    pub eager: SimResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<SimResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_pi: Option<SimResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateDoc {
    pub blocks: Vec<ProfileRow>,
}

/// Simulate every block of the given program as-is: its eager schedule plus,
/// where capture succeeds, the replay and replay-with-indirection profiles.
pub fn simulate_doc(program: &Program, cost: &CostModel, mode: ExecMode) -> SimulateDoc {
    let rows = map_collect(mode, &program.blocks, |b: &Block| {
        let eager = simulate_eager(b, program, cost);
        let (graph, graph_pi) = match capture::capture(b, program) {
            Ok(cg) => {
                let pied = apply_pi(&cg, program, cost);
                (
                    Some(simulate_replay(&cg, program, cost)),
                    Some(simulate_replay(&pied, program, cost)),
                )
            }
            Err(_) => (None, None),
        };
        ProfileRow {
            block: b.id,
            eager,
            graph,
            graph_pi,
        }
    });
    SimulateDoc { blocks: rows }
}

/// The full decision procedure over an original program: transform first,
/// then pick per block against the original eager baseline.
pub fn select_doc(raw: &Program, cost: &CostModel, mode: ExecMode) -> ProgramSelection {
    let outcome = transform_until_eligible(raw);
    select_program_with_baseline(raw, &outcome.program, cost, mode)
}

// ── Full report ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct Stages {
    pub analyze: AnalyzeDoc,
    pub transform: TransformOutcome,
    pub capture: CaptureDoc,
    pub pi: PiDoc,
    pub simulate: SimulateDoc,
    pub select: ProgramSelection,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoveragePair {
    /// Kernel-launch coverage over blocks eligible as written.
    pub before: CoverageReport,
    /// Coverage after capture-safe rewrites.
    pub after: CoverageReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionRow {
    pub block: BlockId,
    pub choice: Choice,
    pub eager_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_pi_us: Option<f64>,
    pub chosen_us: f64,
    pub margin_us: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportDoc {
    pub stages: Stages,
    pub coverage: CoveragePair,
    pub bytes: Vec<ByteRow>,
    pub decisions: Vec<DecisionRow>,
}

/// Everything the pipeline computes, kept in full fidelity for callers that
/// need the frozen graphs or schedules rather than the documents.
pub struct Pipeline {
    pub transform: TransformOutcome,
    pub captured: BTreeMap<BlockId, CapturedGraph>,
    pub pied: BTreeMap<BlockId, CapturedGraph>,
    pub selection: ProgramSelection,
    pub report: ReportDoc,
}

pub fn run_pipeline(raw: &Program, cost: &CostModel, mode: ExecMode) -> Pipeline {
    let analyze = analyze_doc(raw);
    let transform = transform_until_eligible(raw);
    let transformed = &transform.program;

    let captured = capture_stage(transformed, mode);
    let capture_stage_doc = capture_doc(transformed, &captured);
    let pied = pi_stage(transformed, &captured, cost, mode);
    let pi_stage_doc = pi_doc(&captured, &pied);
    let simulate = simulate_doc(transformed, cost, mode);
    let selection = select_program_with_baseline(raw, transformed, cost, mode);

    let eligible_raw: BTreeSet<BlockId> = analyze
        .blocks
        .iter()
        .filter(|r| r.eligible)
        .map(|r| r.block)
        .collect();
    let coverage = CoveragePair {
        before: coverage(raw, &eligible_raw),
        after: capture_stage_doc.coverage.clone(),
    };

    let decisions = selection
        .decisions
        .iter()
        .map(|d| {
            let chosen = d.chosen().total_us;
            DecisionRow {
                block: d.block,
                choice: d.choice,
                eager_us: d.profiles.eager.total_us,
                graph_us: d.profiles.graph.as_ref().map(|r| r.total_us),
                graph_pi_us: d.profiles.graph_pi.as_ref().map(|r| r.total_us),
                chosen_us: chosen,
                margin_us: d.margin_us,
                speedup: if chosen > 0.0 {
                    d.profiles.eager.total_us / chosen
                } else {
                    1.0
                },
            }
        })
        .collect();

    let report = ReportDoc {
        stages: Stages {
            analyze,
            transform: transform.clone(),
            capture: capture_stage_doc,
            pi: pi_stage_doc,
            simulate,
            select: selection.clone(),
        },
        coverage,
        bytes: report_bytes(&captured, &pied),
        decisions,
    };

    Pipeline {
        transform,
        captured,
        pied,
        selection,
        report,
    }
}

fn report_bytes(
    captured: &BTreeMap<BlockId, CapturedGraph>,
    pied: &BTreeMap<BlockId, CapturedGraph>,
) -> Vec<ByteRow> {
    captured
        .iter()
        .map(|(id, cg)| ByteRow {
            block: *id,
            before: cg.stats.bytes_copied_per_replay,
            after: pied[id].stats.bytes_copied_per_replay,
        })
        .collect()
}

/// Compact single-line JSON with a trailing newline — the print format every
/// subcommand uses, so reports compose byte-identically from stages.
pub fn to_json_line<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string(doc).expect("documents serialize");
    s.push('\n');
    s
}
