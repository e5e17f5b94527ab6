//! Benchmark loading, scoring and reports.
//!
//! A run is *executed* when its status is anything but `ExecError` or
//! `Timeout`, and *correct* when its objective lies within 1% of the
//! reference (or within `abs_floor` of a near-zero reference).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cir::DomainTag;
use crate::pipeline::{run_dir_name, Pipeline, TerminalState};
use crate::runner::{RunnerResult, RunnerStatus};

pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;
pub const RELATIVE_TOLERANCE: f64 = 0.01;
/// Absorbs rounding in `objective - reference` so an exact 1% deviation
/// stays Correct.
pub const BOUNDARY_SLACK: f64 = 1e-12;
pub const DEFAULT_RUNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkProblem {
    pub problem_id: String,
    pub domain: DomainTag,
    pub description: String,
    pub reference_objective: f64,
    pub sense: Sense,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    ParseError { path: String, message: String },
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("duplicate problem id {0}")]
    DuplicateProblemId(String),
    #[error("benchmark has no problems")]
    EmptyBenchmark,
    #[error("problem {problem_id}: {reason}")]
    InvalidProblem { problem_id: String, reason: String },
    #[error("row {row} has {len} runs, expected {expected}")]
    RaggedMatrix { row: usize, len: usize, expected: usize },
    #[error("k = {k} exceeds run count {runs}")]
    KTooLarge { k: usize, runs: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkProblem>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_benchmark(&text, &path.display().to_string())
}

pub fn parse_benchmark(text: &str, origin: &str) -> Result<Vec<BenchmarkProblem>, EvalError> {
    let parse_err = |message: String| EvalError::ParseError { path: origin.to_string(), message };
    let raw: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if raw.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for (i, v) in raw.into_iter().enumerate() {
        if let Some(d) = v.get("domain").and_then(|d| d.as_str()) {
            if d.parse::<DomainTag>().is_err() {
                return Err(EvalError::UnknownDomain(d.to_string()));
            }
        }
        let p: BenchmarkProblem = serde_json::from_value(v).map_err(|e| parse_err(format!("record {i}: {e}")))?;
        let invalid = |reason: &str| EvalError::InvalidProblem { problem_id: p.problem_id.clone(), reason: reason.into() };
        if p.problem_id.trim().is_empty() {
            return Err(parse_err(format!("record {i}: empty problem_id")));
        }
        if p.description.trim().is_empty() {
            return Err(invalid("empty description"));
        }
        if !p.reference_objective.is_finite() {
            return Err(invalid("reference_objective is not finite"));
        }
        if !seen.insert(p.problem_id.clone()) {
            return Err(EvalError::DuplicateProblemId(p.problem_id));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Judgement {
    Correct,
    Incorrect,
}

/// Within 1% of `reference`, or within `abs_floor` when `|reference| <= abs_floor`.
/// The sense is not used: the tolerance is symmetric.
pub fn judge(objective: f64, reference: f64, _sense: Sense, abs_floor: f64) -> Judgement {
    let diff = (objective - reference).abs();
    let tol = if reference.abs() > abs_floor { RELATIVE_TOLERANCE * reference.abs() } else { abs_floor };
    if diff <= tol * (1.0 + BOUNDARY_SLACK) {
        Judgement::Correct
    } else {
        Judgement::Incorrect
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeStatus {
    Correct,
    Incorrect,
    ExecError,
    Timeout,
    Infeasible,
    NoObjective,
}

impl OutcomeStatus {
    pub fn executed(self) -> bool {
        !matches!(self, OutcomeStatus::ExecError | OutcomeStatus::Timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPolicy {
    /// Count solver-infeasible runs towards ER.
    pub infeasible_executed: bool,
}

impl Default for MetricPolicy {
    fn default() -> Self {
        MetricPolicy { infeasible_executed: true }
    }
}

impl MetricPolicy {
    pub fn executed(&self, s: OutcomeStatus) -> bool {
        s.executed() && (self.infeasible_executed || s != OutcomeStatus::Infeasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: OutcomeStatus,
    #[serde(default)]
    pub objective: Option<f64>,
    /// Kept out of reports so they stay byte-stable; run timings live in `meta.json`.
    #[serde(skip_serializing, default)]
    pub wall_time: f64,
}

impl SolveOutcome {
    pub fn of(status: OutcomeStatus) -> Self {
        SolveOutcome { status, objective: None, wall_time: 0.0 }
    }

    /// Scores a runner result against the problem's reference. A missing
    /// result (the pipeline aborted before execution) counts as `ExecError`.
    pub fn from_runner(result: Option<&RunnerResult>, problem: &BenchmarkProblem, abs_floor: f64, wall_time: f64) -> Self {
        let Some(r) = result else {
            return SolveOutcome { status: OutcomeStatus::ExecError, objective: None, wall_time };
        };
        let status = match (r.status, r.objective) {
            (RunnerStatus::Optimal, Some(obj)) => match judge(obj, problem.reference_objective, problem.sense, abs_floor) {
                Judgement::Correct => OutcomeStatus::Correct,
                Judgement::Incorrect => OutcomeStatus::Incorrect,
            },
            (RunnerStatus::Optimal, None) | (RunnerStatus::NoObjective, _) | (RunnerStatus::Other, _) => {
                OutcomeStatus::NoObjective
            }
            (RunnerStatus::Infeasible, _) => OutcomeStatus::Infeasible,
            (RunnerStatus::Error, _) => OutcomeStatus::ExecError,
            (RunnerStatus::Timeout, _) => OutcomeStatus::Timeout,
        };
        let objective = if r.status == RunnerStatus::Optimal { r.objective } else { None };
        SolveOutcome { status, objective, wall_time }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub problem_ids: Vec<String>,
    pub per_problem: Vec<Vec<SolveOutcome>>,
    pub ar: f64,
    pub er: f64,
    /// Per-run accuracy and execution rates, in percent.
    pub ar_per_run: Vec<f64>,
    pub er_per_run: Vec<f64>,
    pub pass_at_k: BTreeMap<usize, f64>,
    /// Average number of correct problems per run, by domain.
    pub per_domain: BTreeMap<String, f64>,
    pub run_count: usize,
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Aggregates a `[problem × run]` outcome matrix. `domains` gives each
/// row's domain and may be empty to skip the domain breakdown.
pub fn compute_metrics(
    problem_ids: &[String],
    domains: &[DomainTag],
    matrix: &[Vec<SolveOutcome>],
    ks: &[usize],
) -> Result<BenchmarkReport, EvalError> {
    compute_metrics_with(problem_ids, domains, matrix, ks, MetricPolicy::default())
}

pub fn compute_metrics_with(
    problem_ids: &[String],
    domains: &[DomainTag],
    matrix: &[Vec<SolveOutcome>],
    ks: &[usize],
    policy: MetricPolicy,
) -> Result<BenchmarkReport, EvalError> {
    let runs = matrix.first().map_or(0, Vec::len);
    for (row, r) in matrix.iter().enumerate() {
        if r.len() != runs {
            return Err(EvalError::RaggedMatrix { row, len: r.len(), expected: runs });
        }
    }
    for &k in ks {
        if k == 0 {
            return Err(EvalError::ZeroK);
        }
        if k > runs {
            return Err(EvalError::KTooLarge { k, runs });
        }
    }
    let n = matrix.len();
    let ar_per_run: Vec<f64> = (0..runs)
        .map(|j| percent(matrix.iter().filter(|r| r[j].status == OutcomeStatus::Correct).count(), n))
        .collect();
    let er_per_run: Vec<f64> =
        (0..runs).map(|j| percent(matrix.iter().filter(|r| policy.executed(r[j].status)).count(), n)).collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let pass_at_k = ks
        .iter()
        .map(|&k| {
            let solved = matrix.iter().filter(|r| r[..k].iter().any(|o| o.status == OutcomeStatus::Correct)).count();
            (k, percent(solved, n))
        })
        .collect();
    let mut per_domain = BTreeMap::new();
    if domains.len() == n && runs > 0 {
        for (d, row) in domains.iter().zip(matrix) {
            let correct = row.iter().filter(|o| o.status == OutcomeStatus::Correct).count();
            *per_domain.entry(d.as_str().to_string()).or_insert(0.0) += correct as f64 / runs as f64;
        }
    }
    Ok(BenchmarkReport {
        problem_ids: problem_ids.to_vec(),
        per_problem: matrix.to_vec(),
        ar: mean(&ar_per_run),
        er: mean(&er_per_run),
        ar_per_run,
        er_per_run,
        pass_at_k,
        per_domain,
        run_count: runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

/// `AR / ER` with one decimal each, e.g. `47.2 / 83.2`.
pub fn summary_line(report: &BenchmarkReport) -> String {
    format!("{:.1} / {:.1}", report.ar, report.er)
}

pub fn render_markdown(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Benchmark report\n");
    let _ = writeln!(out, "Problems: {}, runs: {}\n", report.per_problem.len(), report.run_count);
    let _ = writeln!(out, "| AR / ER (%) |");
    let _ = writeln!(out, "|---|");
    let _ = writeln!(out, "| {} |\n", summary_line(report));
    if !report.pass_at_k.is_empty() {
        let _ = writeln!(out, "| k | pass@k (%) |");
        let _ = writeln!(out, "|---|---|");
        for (k, v) in &report.pass_at_k {
            let _ = writeln!(out, "| {k} | {v:.1} |");
        }
        out.push('\n');
    }
    if report.per_domain.is_empty() {
        let _ = writeln!(out, "_No domain breakdown available._\n");
    } else {
        let _ = writeln!(out, "| Domain | Avg. correct per run |");
        let _ = writeln!(out, "|---|---|");
        for (d, v) in &report.per_domain {
            let _ = writeln!(out, "| {d} | {v:.2} |");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "| Problem | Outcomes |");
    let _ = writeln!(out, "|---|---|");
    for (id, row) in report.problem_ids.iter().zip(&report.per_problem) {
        let cells: Vec<String> = row.iter().map(|o| format!("{:?}", o.status)).collect();
        let _ = writeln!(out, "| {id} | {} |", cells.join(", "));
    }
    out
}

/// Writes `report.json` and/or `report.md` into `dir`, returning the paths.
pub fn emit_report(report: &BenchmarkReport, dir: &Path, formats: &[ReportFormat]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Json => ("report.json", serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
            ReportFormat::Markdown => ("report.md", render_markdown(report)),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub runs: usize,
    pub ks: Vec<usize>,
    pub workers: usize,
    pub abs_floor: f64,
    pub policy: MetricPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { runs: DEFAULT_RUNS, ks: vec![1], workers: 1, abs_floor: DEFAULT_ABS_FLOOR, policy: MetricPolicy::default() }
    }
}

#[derive(Debug, Error)]
pub enum BenchmarkRunError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("run {run_dir}: {source}")]
    Io { run_dir: String, source: std::io::Error },
}

/// Runs every problem `runs` times on a pool of `workers` threads and
/// aggregates the outcomes. Run directories are `<run_root>/<problem>-r<j>`.
pub fn run_benchmark(
    pipeline: &Pipeline,
    problems: &[BenchmarkProblem],
    run_root: &Path,
    opts: &EvalOptions,
) -> Result<BenchmarkReport, BenchmarkRunError> {
    if problems.is_empty() {
        return Err(EvalError::EmptyBenchmark.into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| BenchmarkRunError::Pool(e.to_string()))?;
    let jobs: Vec<(usize, usize)> = (0..problems.len()).flat_map(|i| (0..opts.runs).map(move |j| (i, j))).collect();
    type Cell = ((usize, usize), SolveOutcome);
    let results: Vec<Result<Cell, BenchmarkRunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, j)| {
                let p = &problems[i];
                let dir = run_root.join(run_dir_name(&p.problem_id, &format!("r{}", j + 1)));
                let io_err = |source| BenchmarkRunError::Io { run_dir: dir.display().to_string(), source };
                if dir.exists() {
                    std::fs::remove_dir_all(&dir).map_err(io_err)?;
                }
                let started = Instant::now();
                let outcome = pipeline
                    .run(&p.problem_id, &p.description, &dir)
                    .map_err(io_err)?;
                let executed = match outcome.run.terminal_state {
                    TerminalState::StageAborted { .. } => None,
                    _ => outcome.execution.as_ref(),
                };
                let o = SolveOutcome::from_runner(executed, p, opts.abs_floor, started.elapsed().as_secs_f64());
                Ok(((i, j), o))
            })
            .collect()
    });
    let mut matrix = vec![vec![SolveOutcome::of(OutcomeStatus::ExecError); opts.runs]; problems.len()];
    for r in results {
        let ((i, j), o) = r?;
        matrix[i][j] = o;
    }
    let ids: Vec<String> = problems.iter().map(|p| p.problem_id.clone()).collect();
    let domains: Vec<DomainTag> = problems.iter().map(|p| p.domain).collect();
    Ok(compute_metrics_with(&ids, &domains, &matrix, &opts.ks, opts.policy)?)
}
