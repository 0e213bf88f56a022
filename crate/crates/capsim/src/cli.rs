//! Command-line driver: ingestion → analysis → rewrites → capture →
//! indirection → simulation → selection → reporting, plus corpus sweeps.
//!
//! Stdout carries exactly one document per invocation — compact JSON by
//! default — and is a pure function of the inputs and `--seed`. Progress
//! chatter, if requested, goes to stderr so piped output stays stable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::costsim::CostModel;
use crate::ir::Program;
use crate::par::ExecMode;
use crate::report::{
    analyze_doc, capture_doc, capture_stage, pi_doc, pi_stage, run_pipeline, select_doc,
    simulate_doc, to_json_line, AnalyzeDoc, CaptureDoc, PiDoc, ReportDoc, SimulateDoc,
};
use crate::selector::{Choice, ProgramSelection};
use crate::transform::{transform_until_eligible, TransformOutcome};
use crate::workload::{self, WorkloadError};

/// Env var naming the directory that relative `--cost-model` paths fall
/// back to when they don't resolve against the working directory.
pub const CONFIG_DIR_ENV: &str = "CAPSIM_CONFIG_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "capsim",
    version,
    about = "Kernel-launch graph capture analysis, rewrites, and cost simulation"
)]
pub struct RunConfig {
    /// Override the workload's RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output format for the document on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// JSON file of cost-model field overrides, merged over the workload's
    /// own `cost_model` map (file wins). Relative paths are tried against
    /// the working directory, then against $CAPSIM_CONFIG_DIR.
    #[arg(long = "cost-model", global = true, value_name = "PATH")]
    pub cost_model: Option<PathBuf>,

    /// Process blocks and sweep workloads single-threaded. Output bytes are
    /// identical either way.
    #[arg(long, global = true)]
    pub serial: bool,

    /// Print stage progress to stderr (stdout is unaffected).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Report per-block capture eligibility and blocking causes.
    Analyze { workload: PathBuf },
    /// Apply capture-safe rewrites until blocks are eligible or stuck.
    Transform { workload: PathBuf },
    /// Capture eligible blocks into frozen graphs with copy plans.
    Capture { workload: PathBuf },
    /// Replace data placeholders with pointer cells where safe.
    Pi { workload: PathBuf },
    /// Simulate eager and replay launch costs for every block.
    Simulate { workload: PathBuf },
    /// Choose no-graph, graph, or graph+indirection per block.
    Select { workload: PathBuf },
    /// Full pipeline document embedding every stage's output.
    Report { workload: PathBuf },
    /// Selection rows across many workloads (files or directories of .json).
    Sweep { paths: Vec<PathBuf> },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Analyze { .. } => "analyze",
            Cmd::Transform { .. } => "transform",
            Cmd::Capture { .. } => "capture",
            Cmd::Pi { .. } => "pi",
            Cmd::Simulate { .. } => "simulate",
            Cmd::Select { .. } => "select",
            Cmd::Report { .. } => "report",
            Cmd::Sweep { .. } => "sweep",
        }
    }
}

// ── Entry point ─────────────────────────────────────────────────────────────

/// Run one invocation; returns the process exit code. 0 = success, 1 =
/// schema/IO error (message names the offending field or path), 2 =
/// invariant violation in a well-formed workload.
pub fn run(config: &RunConfig) -> i32 {
    match dispatch(config) {
        Ok(output) => {
            print!("{output}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(config: &RunConfig) -> Result<String, WorkloadError> {
    let mode = if config.serial {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    if config.verbose > 0 {
        eprintln!("[capsim] {} ({mode:?})", config.cmd.name());
    }
    match &config.cmd {
        Cmd::Analyze { workload } => {
            let (p, _) = load_workload(config, workload)?;
            let doc = analyze_doc(&p);
            Ok(render(config.format, &doc, text_analyze, csv_analyze))
        }
        Cmd::Transform { workload } => {
            let (p, _) = load_workload(config, workload)?;
            let doc = transform_until_eligible(&p);
            Ok(render(config.format, &doc, text_transform, csv_transform))
        }
        Cmd::Capture { workload } => {
            let (p, _) = load_workload(config, workload)?;
            let captured = capture_stage(&p, mode);
            let doc = capture_doc(&p, &captured);
            Ok(render(config.format, &doc, text_capture, csv_capture))
        }
        Cmd::Pi { workload } => {
            let (p, cost) = load_workload(config, workload)?;
            let captured = capture_stage(&p, mode);
            let pied = pi_stage(&p, &captured, &cost, mode);
            let doc = pi_doc(&captured, &pied);
            Ok(render(config.format, &doc, text_pi, csv_pi))
        }
        Cmd::Simulate { workload } => {
            let (p, cost) = load_workload(config, workload)?;
            let doc = simulate_doc(&p, &cost, mode);
            Ok(render(config.format, &doc, text_simulate, csv_simulate))
        }
        Cmd::Select { workload } => {
            let (p, cost) = load_workload(config, workload)?;
            let doc = select_doc(&p, &cost, mode);
            Ok(render(config.format, &doc, text_select, csv_select))
        }
        Cmd::Report { workload } => {
            let (p, cost) = load_workload(config, workload)?;
            let doc = run_pipeline(&p, &cost, mode).report;
            Ok(render(config.format, &doc, text_report, csv_report))
        }
        Cmd::Sweep { paths } => sweep(config, paths, mode),
    }
}

fn render<T: serde::Serialize>(
    format: Format,
    doc: &T,
    text: impl Fn(&T) -> String,
    csv: impl Fn(&T) -> String,
) -> String {
    match format {
        Format::Json => to_json_line(doc),
        Format::Text => text(doc),
        Format::Csv => csv(doc),
    }
}

// ── Workload + cost model resolution ────────────────────────────────────────

fn load_workload(config: &RunConfig, path: &Path) -> Result<(Program, CostModel), WorkloadError> {
    let mut program = workload::load(path)?;
    if let Some(seed) = config.seed {
        program.seed = seed;
    }
    let cost = resolve_cost_model(config, &program)?;
    Ok((program, cost))
}

fn resolve_cost_model(config: &RunConfig, program: &Program) -> Result<CostModel, WorkloadError> {
    let mut merged = program.cost_model.clone();
    if let Some(path) = &config.cost_model {
        let resolved = resolve_config_path(path);
        let display = resolved.display().to_string();
        let s = fs::read_to_string(&resolved).map_err(|e| WorkloadError::Io {
            path: display.clone(),
            source: e,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&s);
        let overrides: BTreeMap<String, f64> =
            serde_path_to_error::deserialize(de).map_err(|e| WorkloadError::Schema {
                file: display.clone(),
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        merged.extend(overrides);
        return CostModel::with_overrides(&merged).map_err(|e| WorkloadError::Schema {
            file: display,
            path: format!("cost_model.{}", e.0),
            message: "unknown cost model field".to_string(),
        });
    }
    // The workload's own map was validated at load; this cannot fail.
    Ok(CostModel::with_overrides(&merged).expect("validated overrides"))
}

fn resolve_config_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os(CONFIG_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

// ── Sweep ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, serde::Serialize)]
struct SweepRow {
    workload: String,
    graph_id: u64,
    eager_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph_pi_us: Option<f64>,
    chosen: Choice,
    speedup: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
struct SweepDoc {
    rows: Vec<SweepRow>,
}

fn sweep(config: &RunConfig, paths: &[PathBuf], mode: ExecMode) -> Result<String, WorkloadError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| WorkloadError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            entries.sort();
            files.extend(entries.into_iter().map(|p| (stem_of(&p), p)));
        } else {
            files.push((stem_of(p), p.clone()));
        }
    }
    // Output ordering is by workload name regardless of completion order.
    files.sort();

    let results = crate::par::map_collect(mode, &files, |(name, path)| {
        let (program, cost) = load_workload(config, path)?;
        if config.verbose > 0 {
            eprintln!("[capsim] sweep: {name}");
        }
        // Per-workload pipelines are sequential; parallelism is across
        // workloads.
        let selection = select_doc(&program, &cost, ExecMode::Sequential);
        Ok::<_, WorkloadError>((name.clone(), selection))
    });

    let mut rows = Vec::new();
    for r in results {
        let (name, selection) = r?;
        for d in &selection.decisions {
            let chosen_us = d.chosen().total_us;
            rows.push(SweepRow {
                workload: name.clone(),
                graph_id: d.block,
                eager_us: d.profiles.eager.total_us,
                graph_us: d.profiles.graph.as_ref().map(|r| r.total_us),
                graph_pi_us: d.profiles.graph_pi.as_ref().map(|r| r.total_us),
                chosen: d.choice,
                speedup: if chosen_us > 0.0 {
                    d.profiles.eager.total_us / chosen_us
                } else {
                    1.0
                },
            });
        }
    }
    let doc = SweepDoc { rows };
    Ok(render(config.format, &doc, text_sweep, csv_sweep))
}

fn stem_of(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

// ── CSV renderers ───────────────────────────────────────────────────────────

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn choice_name(c: Choice) -> &'static str {
    match c {
        Choice::NoGraph => "no_graph",
        Choice::Graph => "graph",
        Choice::GraphWithPi => "graph_pi",
    }
}

fn csv_analyze(doc: &AnalyzeDoc) -> String {
    let mut out = String::from("block,eligible,causes\n");
    for b in &doc.blocks {
        out.push_str(&format!("{},{},{}\n", b.block, b.eligible, b.causes.len()));
    }
    out
}

fn csv_transform(doc: &TransformOutcome) -> String {
    let mut out = String::from("block,actions,unrepaired,eligible_after\n");
    for r in &doc.reports {
        let actions = doc.log.actions.iter().filter(|a| a.block == r.block).count();
        let stuck = doc
            .log
            .unrepaired
            .iter()
            .filter(|u| u.block == r.block)
            .count();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.block, actions, stuck, r.eligible
        ));
    }
    out
}

fn csv_capture(doc: &CaptureDoc) -> String {
    let mut out = String::from("block,kernels,external,internal,static,bytes_per_replay\n");
    for g in &doc.graphs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.block,
            g.kernel_count,
            g.stats.external_param_count,
            g.stats.internal_param_count,
            g.stats.static_param_count,
            g.stats.bytes_copied_per_replay,
        ));
    }
    out
}

fn csv_pi(doc: &PiDoc) -> String {
    let mut out = String::from("block,bytes_before,bytes_after,cells,patches,fallbacks\n");
    for (g, b) in doc.graphs.iter().zip(&doc.bytes) {
        let patches = g.prelude.as_ref().map_or(0, |p| p.patches.len());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.block,
            b.before,
            b.after,
            g.cells.len(),
            patches,
            g.fallbacks.len(),
        ));
    }
    out
}

fn csv_simulate(doc: &SimulateDoc) -> String {
    let mut out = String::from("block,eager_us,graph_us,graph_pi_us\n");
    for b in &doc.blocks {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b.block,
            b.eager.total_us,
            csv_field(b.graph.as_ref().map(|r| r.total_us)),
            csv_field(b.graph_pi.as_ref().map(|r| r.total_us)),
        ));
    }
    out
}

fn csv_select(doc: &ProgramSelection) -> String {
    let mut out = String::from("graph_id,eager_us,graph_us,graph_pi_us,chosen,speedup\n");
    for d in &doc.decisions {
        let chosen_us = d.chosen().total_us;
        let speedup = if chosen_us > 0.0 {
            d.profiles.eager.total_us / chosen_us
        } else {
            1.0
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.block,
            d.profiles.eager.total_us,
            csv_field(d.profiles.graph.as_ref().map(|r| r.total_us)),
            csv_field(d.profiles.graph_pi.as_ref().map(|r| r.total_us)),
            choice_name(d.choice),
            speedup,
        ));
    }
    out
}

fn csv_report(doc: &ReportDoc) -> String {
    let mut out = String::from("graph_id,eager_us,graph_us,graph_pi_us,chosen,speedup\n");
    for d in &doc.decisions {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.block,
            d.eager_us,
            csv_field(d.graph_us),
            csv_field(d.graph_pi_us),
            choice_name(d.choice),
            d.speedup,
        ));
    }
    out
}

fn csv_sweep(doc: &SweepDoc) -> String {
    let mut out = String::from("workload,graph_id,eager_us,graph_us,graph_pi_us,chosen,speedup\n");
    for r in &doc.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.workload,
            r.graph_id,
            r.eager_us,
            csv_field(r.graph_us),
            csv_field(r.graph_pi_us),
            choice_name(r.chosen),
            r.speedup,
        ));
    }
    out
}

// ── Text renderers ──────────────────────────────────────────────────────────

fn us(v: f64) -> String {
    format!("{v:.3} µs")
}

fn text_analyze(doc: &AnalyzeDoc) -> String {
    let mut out = String::new();
    for b in &doc.blocks {
        if b.eligible {
            out.push_str(&format!("block {}: eligible\n", b.block));
        } else {
            out.push_str(&format!(
                "block {}: blocked by {} cause(s)\n",
                b.block,
                b.causes.len()
            ));
            for c in &b.causes {
                let slot = c.slot.map(|s| format!(" slot {s}")).unwrap_or_default();
                out.push_str(&format!(
                    "  node {}{}: {:?}\n",
                    c.node, slot, c.kind
                ));
            }
        }
    }
    out
}

fn text_transform(doc: &TransformOutcome) -> String {
    let mut out = format!("{} rewrite(s) in {} pass(es)\n", doc.log.actions.len(), doc.log.passes);
    for a in &doc.log.actions {
        let node = a.node.map_or_else(|| "-".to_string(), |n| n.to_string());
        out.push_str(&format!(
            "  block {} node {node}: {:?} — {}\n",
            a.block, a.kind, a.detail
        ));
    }
    for u in &doc.log.unrepaired {
        out.push_str(&format!(
            "  block {} unrepaired {:?}: {}\n",
            u.block, u.cause, u.reason
        ));
    }
    let eligible = doc.reports.iter().filter(|r| r.eligible).count();
    out.push_str(&format!(
        "eligible after rewrites: {}/{} block(s)\n",
        eligible,
        doc.reports.len()
    ));
    out
}

fn text_capture(doc: &CaptureDoc) -> String {
    let mut out = String::new();
    for g in &doc.graphs {
        out.push_str(&format!(
            "block {}: {} kernel(s); params {} external / {} internal / {} static; {} B copied per replay\n",
            g.block,
            g.kernel_count,
            g.stats.external_param_count,
            g.stats.internal_param_count,
            g.stats.static_param_count,
            g.stats.bytes_copied_per_replay,
        ));
    }
    out.push_str(&format!(
        "coverage: {}/{} kernel launch(es) captured ({:.2}%)\n",
        doc.coverage.captured_kernels, doc.coverage.total_kernels, doc.coverage.percent
    ));
    out
}

fn text_pi(doc: &PiDoc) -> String {
    let mut out = format!("{} indirected graph(s)\n", doc.graphs.len());
    for (g, b) in doc.graphs.iter().zip(&doc.bytes) {
        let patches = g.prelude.as_ref().map_or(0, |p| p.patches.len());
        out.push_str(&format!(
            "block {}: {} B -> {} B per replay; {} cell(s), {} patch(es), {} fallback(s)\n",
            g.block,
            b.before,
            b.after,
            g.cells.len(),
            patches,
            g.fallbacks.len(),
        ));
    }
    out
}

fn text_simulate(doc: &SimulateDoc) -> String {
    let mut out = String::new();
    for b in &doc.blocks {
        out.push_str(&format!("block {}: eager {}", b.block, us(b.eager.total_us)));
        if let Some(g) = &b.graph {
            out.push_str(&format!(", graph {}", us(g.total_us)));
        }
        if let Some(g) = &b.graph_pi {
            out.push_str(&format!(", graph+pi {}", us(g.total_us)));
        }
        out.push('\n');
    }
    out
}

fn text_select(doc: &ProgramSelection) -> String {
    let mut out = String::new();
    for d in &doc.decisions {
        out.push_str(&format!(
            "block {}: {} ({}, margin {})\n",
            d.block,
            choice_name(d.choice),
            us(d.chosen().total_us),
            us(d.margin_us),
        ));
    }
    out.push_str(&format!(
        "summary: {} graph, {} graph+pi, {} eager\n",
        doc.summary.enabled, doc.summary.pi_enabled, doc.summary.disabled
    ));
    out.push_str(&format!(
        "program totals: eager {}, always-graph {}, chosen {}\n",
        us(doc.eager_total_us),
        us(doc.always_graph_total_us),
        us(doc.chosen_total_us),
    ));
    out
}

fn text_report(doc: &ReportDoc) -> String {
    let mut out = String::new();
    out.push_str("== eligibility ==\n");
    out.push_str(&text_analyze(&doc.stages.analyze));
    out.push_str("== rewrites ==\n");
    out.push_str(&text_transform(&doc.stages.transform));
    out.push_str("== capture ==\n");
    out.push_str(&text_capture(&doc.stages.capture));
    out.push_str("== indirection ==\n");
    out.push_str(&text_pi(&doc.stages.pi));
    out.push_str("== selection ==\n");
    out.push_str(&text_select(&doc.stages.select));
    out.push_str(&format!(
        "coverage before rewrites: {:.2}%, after: {:.2}%\n",
        doc.coverage.before.percent, doc.coverage.after.percent
    ));
    out
}

fn text_sweep(doc: &SweepDoc) -> String {
    let mut out = format!("{} selection row(s)\n", doc.rows.len());
    for r in &doc.rows {
        out.push_str(&format!(
            "{} block {}: {} eager {} speedup {:.3}\n",
            r.workload,
            r.graph_id,
            choice_name(r.chosen),
            us(r.eager_us),
            r.speedup,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn args_parse_with_globals() {
        let cfg = RunConfig::parse_from([
            "capsim",
            "--seed",
            "7",
            "--format",
            "csv",
            "--serial",
            "select",
            "w.json",
        ]);
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.format, Format::Csv);
        assert!(cfg.serial);
        assert!(matches!(cfg.cmd, Cmd::Select { .. }));
    }

    #[test]
    fn globals_accepted_after_subcommand() {
        let cfg = RunConfig::parse_from(["capsim", "sweep", "a.json", "b.json", "--format", "csv"]);
        assert_eq!(cfg.format, Format::Csv);
        let Cmd::Sweep { paths } = &cfg.cmd else {
            panic!("want sweep");
        };
        assert_eq!(paths.len(), 2);
    }

    #[test]
    fn csv_headers_match_contract() {
        let doc = SweepDoc { rows: vec![] };
        assert_eq!(
            csv_sweep(&doc),
            "workload,graph_id,eager_us,graph_us,graph_pi_us,chosen,speedup\n"
        );
    }
}
