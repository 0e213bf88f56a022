//! Per-graph deployment decision: eager, graph, or graph with indirection.
//!
//! Every candidate variant is simulated and the cheapest wins. Ties prefer
//! fewer mechanisms (eager over graph, graph over graph-with-indirection),
//! so machinery is only deployed when it pays. A block that cannot be
//! captured keeps its eager profile and costs nothing extra — selection is
//! never worse than either always-on policy.

use serde::Serialize;

use crate::capture::{capture, CapturedGraph};
use crate::costsim::{simulate_eager, simulate_replay, CostModel, SimResult};
use crate::indirection::apply_pi;
use crate::ir::*;
use crate::par::{map_collect, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    NoGraph,
    Graph,
    GraphWithPi,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockProfiles {
    pub eager: SimResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<SimResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_pi: Option<SimResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionDecision {
    pub block: BlockId,
    pub choice: Choice,
    pub profiles: BlockProfiles,
    /// Runner-up total minus chosen total; zero when nothing else competes.
    pub margin_us: f64,
}

impl SelectionDecision {
    pub fn chosen(&self) -> &SimResult {
        match self.choice {
            Choice::NoGraph => &self.profiles.eager,
            Choice::Graph => self.profiles.graph.as_ref().expect("chosen variant exists"),
            Choice::GraphWithPi => self
                .profiles
                .graph_pi
                .as_ref()
                .expect("chosen variant exists"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectionSummary {
    /// Blocks deployed as graphs (with or without indirection).
    pub enabled: u64,
    pub pi_enabled: u64,
    pub disabled: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProgramSelection {
    pub decisions: Vec<SelectionDecision>,
    pub summary: SelectionSummary,
    /// Per-iteration totals under three policies: everything eager, graphs
    /// wherever capturable, and the per-block choice.
    pub eager_total_us: f64,
    pub always_graph_total_us: f64,
    pub chosen_total_us: f64,
}

/// Decide one block. The graph variants exist only if the block is
/// capture-eligible as given (run transforms first to widen eligibility).
pub fn select(block: &Block, program: &Program, cost: &CostModel) -> SelectionDecision {
    select_with_baseline(block, program, block, program, cost)
}

/// Decide one block where the no-graph fallback differs from the captured
/// code: choosing NoGraph means running the ORIGINAL block (none of the
/// transformed form's refresh work), so the eager profile comes from the
/// pre-transform program and the graph variants from the transformed one.
pub fn select_with_baseline(
    raw_block: &Block,
    raw_program: &Program,
    block: &Block,
    program: &Program,
    cost: &CostModel,
) -> SelectionDecision {
    let eager = simulate_eager(raw_block, raw_program, cost);
    let (graph, graph_pi) = match capture(block, program) {
        Ok(cg) => {
            let pied: CapturedGraph = apply_pi(&cg, program, cost);
            (
                Some(simulate_replay(&cg, program, cost)),
                Some(simulate_replay(&pied, program, cost)),
            )
        }
        Err(_) => (None, None),
    };

    // Rank order doubles as the tie-break: strict improvement required to
    // adopt a heavier mechanism.
    let mut choice = Choice::NoGraph;
    let mut best = eager.total_us;
    let mut totals = vec![eager.total_us];
    if let Some(g) = &graph {
        totals.push(g.total_us);
        if g.total_us < best {
            best = g.total_us;
            choice = Choice::Graph;
        }
    }
    if let Some(g) = &graph_pi {
        totals.push(g.total_us);
        if g.total_us < best {
            best = g.total_us;
            choice = Choice::GraphWithPi;
        }
    }
    let runner_up = totals
        .iter()
        .copied()
        .filter(|t| *t > best)
        .fold(f64::INFINITY, f64::min);
    let margin_us = if runner_up.is_finite() {
        runner_up - best
    } else {
        0.0
    };

    SelectionDecision {
        block: block.id,
        choice,
        // Decision records keep totals and breakdowns; full schedules stay
        // with the simulation stage.
        profiles: BlockProfiles {
            eager: eager.without_timeline(),
            graph: graph.as_ref().map(SimResult::without_timeline),
            graph_pi: graph_pi.as_ref().map(SimResult::without_timeline),
        },
        margin_us,
    }
}

/// Decide every block of a program (blocks in parallel under the default
/// mode; ordering of results follows block order either way).
pub fn select_program(program: &Program, cost: &CostModel, mode: ExecMode) -> ProgramSelection {
    let decisions = map_collect(mode, &program.blocks, |b| select(b, program, cost));
    summarize(decisions)
}

/// Selection for a transformed program, measured against the untransformed
/// baseline block-by-block (blocks paired by id).
pub fn select_program_with_baseline(
    raw: &Program,
    transformed: &Program,
    cost: &CostModel,
    mode: ExecMode,
) -> ProgramSelection {
    let decisions = map_collect(mode, &raw.blocks, |rb| {
        let tb = transformed.block(rb.id).unwrap_or(rb);
        select_with_baseline(rb, raw, tb, transformed, cost)
    });
    summarize(decisions)
}

fn summarize(decisions: Vec<SelectionDecision>) -> ProgramSelection {

    let mut summary = SelectionSummary::default();
    let mut eager_total = 0.0;
    let mut always_graph = 0.0;
    let mut chosen_total = 0.0;
    for d in &decisions {
        match d.choice {
            Choice::NoGraph => summary.disabled += 1,
            Choice::Graph => summary.enabled += 1,
            Choice::GraphWithPi => {
                summary.enabled += 1;
                summary.pi_enabled += 1;
            }
        }
        eager_total += d.profiles.eager.total_us;
        always_graph += d
            .profiles
            .graph
            .as_ref()
            .map(|g| g.total_us)
            .unwrap_or(d.profiles.eager.total_us);
        chosen_total += d.chosen().total_us;
    }

    ProgramSelection {
        decisions,
        summary,
        eager_total_us: eager_total,
        always_graph_total_us: always_graph,
        chosen_total_us: chosen_total,
    }
}
