//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the terminal.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use r2c::agents::prompts;
use r2c::cir::expr::parse;
use r2c::cir::oracle::{check_soundness, MicroFixture};
use r2c::cir::predicate::evaluate_predicate;
use r2c::eval::*;
use r2c::llm::Script;
use r2c::pipeline::{max_agent_calls_well_formed, Pipeline, PipelineOptions, Stage, TerminalState, HAPPY_PATH_CALLS};
use rand::{Rng, SeedableRng};

const METRIC_TOL: f64 = 1e-4;
const JUDGE_EPS: f64 = 1e-9;
const SOUNDNESS_BUDGET: Duration = Duration::from_secs(10);
const REFLECTION_CAP: u32 = 3;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;
type Reflected = (Vec<&'static str>, Vec<String>, TerminalState, usize);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn soundness() -> Check {
    let started = Instant::now();
    let kb = kb();
    let fixtures = MicroFixture::load_dir(&root().join("fixtures/micro")).map_err(|e| e.to_string())?;
    let checkable = kb.oracle_coverage().checkable;
    let domains: BTreeSet<&str> =
        kb.templates().filter(|t| checkable.contains(&t.template_id)).map(|t| t.domain_tag.as_str()).collect();
    ensure!(checkable.len() >= 6 && domains.len() >= 3, "{} archetypes over {} domains", checkable.len(), domains.len());
    let covered: BTreeSet<&String> = fixtures.iter().flat_map(|f| &f.archetypes).collect();
    for id in &checkable {
        ensure!(covered.contains(id), "no micro-instance for {id}");
    }
    let mut mutants = 0;
    for fx in &fixtures {
        let r = check_soundness(&fx.instance(&kb).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(r.holds, "{} does not hold: {:?}", fx.name, r.witness);
        for m in &fx.mutants {
            let inst = fx.mutant_instance(&kb, m).map_err(|e| e.to_string())?;
            let r = check_soundness(&inst).map_err(|e| e.to_string())?;
            let w = r.witness.ok_or_else(|| format!("{}/{}: no witness", fx.name, m.name))?;
            // re-check the witness outside the oracle
            for row in &inst.model_constraints {
                let lin = parse(row).and_then(|e| e.to_row()).map_err(|e| e.to_string())?;
                ensure!(lin.evaluate(|n| w.get(n).copied()) == Some(true), "{}/{}: witness breaks {row}", fx.name, m.name);
            }
            let violated = inst
                .rule_predicates
                .iter()
                .any(|p| evaluate_predicate(p.kind, &p.args, &w) == Ok(false));
            ensure!(violated, "{}/{}: witness violates no rule", fx.name, m.name);
            mutants += 1;
        }
    }
    let took = started.elapsed();
    ensure!(took < SOUNDNESS_BUDGET, "took {took:?}");
    Ok(format!("{} archetypes, {} domains, {} instances, {mutants} mutants refuted, {:.2}s", checkable.len(), domains.len(), fixtures.len(), took.as_secs_f64()))
}

fn outcomes(m: &[Vec<OutcomeStatus>]) -> Vec<Vec<SolveOutcome>> {
    m.iter().map(|r| r.iter().map(|s| SolveOutcome::of(*s)).collect()).collect()
}

fn metrics() -> Check {
    use OutcomeStatus::*;
    // Run j of problem i: Correct when i < 10 + 5j, ExecError when i >= 45 - j, else Incorrect.
    let m: Vec<Vec<OutcomeStatus>> = (0..50)
        .map(|i| (0..5).map(|j| if i < 10 + 5 * j { Correct } else if i >= 45 - j { ExecError } else { Incorrect }).collect())
        .collect();
    // Correct per run: 10,15,20,25,30 of 50 → mean 40%. Executed: 45,44,43,42,41 → mean 86%.
    let ids: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
    let r = compute_metrics(&ids, &[], &outcomes(&m), &[1, 5]).map_err(|e| e.to_string())?;
    ensure!((r.ar - 40.0).abs() <= METRIC_TOL && (r.er - 86.0).abs() <= METRIC_TOL, "AR/ER {} {}", r.ar, r.er);
    ensure!((r.pass_at_k[&5] - 60.0).abs() <= METRIC_TOL, "pass@5 {}", r.pass_at_k[&5]);

    let all = [Correct, Incorrect, ExecError, Timeout, Infeasible, NoObjective];
    let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
    for _ in 0..100 {
        let (n, runs) = (rng.gen_range(1..60), rng.gen_range(1..9));
        let m: Vec<Vec<OutcomeStatus>> = (0..n).map(|_| (0..runs).map(|_| all[rng.gen_range(0..6)]).collect()).collect();
        let ks: Vec<usize> = (1..=runs).collect();
        let r = compute_metrics(&vec!["p".into(); n], &[], &outcomes(&m), &ks).map_err(|e| e.to_string())?;
        ensure!(r.ar_per_run.iter().zip(&r.er_per_run).all(|(a, e)| a <= e), "per-run AR > ER");
        let p: Vec<f64> = r.pass_at_k.values().copied().collect();
        ensure!(p.windows(2).all(|w| w[0] <= w[1]), "pass@k not monotone: {p:?}");
    }
    Ok(format!("50x5 AR 40.0 / ER 86.0 within {METRIC_TOL}; 100 random matrices"))
}

fn judge_rule() -> Check {
    for reference in [100.0, -250.0, 7.5, 1e6] {
        for sense in [Sense::Min, Sense::Max] {
            let edge = reference + 0.01 * f64::abs(reference);
            let beyond = reference + (0.01 + JUDGE_EPS) * f64::abs(reference);
            ensure!(judge(edge, reference, sense, DEFAULT_ABS_FLOOR) == Judgement::Correct, "{edge} vs {reference} at 1%");
            ensure!(judge(beyond, reference, sense, DEFAULT_ABS_FLOOR) == Judgement::Incorrect, "{beyond} vs {reference} past 1%");
        }
    }
    Ok(format!("1% Correct, 1%+{JUDGE_EPS:e} Incorrect, both senses"))
}

fn offline_end_to_end() -> Check {
    let kb = kb();
    let opts = PipelineOptions::default();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for i in 0..2 {
        let backend = Recording::new(script("two_jobs"));
        let exec = stub_executor();
        let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };
        let dir = tmp.path().join(i.to_string()).join("two_jobs");
        let out = pipe.run("two_jobs", &problem("two_jobs"), &dir).map_err(|e| e.to_string())?;
        ensure!(out.run.terminal_state == TerminalState::Succeeded, "{:?}", out.run.terminal_state);
        ensure!(out.run.agent_calls == HAPPY_PATH_CALLS, "{} agent calls", out.run.agent_calls);
        ensure!(exec.invocations() == 1, "{} shim invocations", exec.invocations());
        trees.push(read_tree(&dir).into_iter().filter(|(n, _)| n != "meta.json").collect::<Vec<_>>());
    }
    ensure!(trees[0] == trees[1], "artifacts differ between invocations");
    Ok(format!("Succeeded, 6 agent calls, 1 shim call, {} identical artifacts", trees[0].len()))
}

fn gating() -> Check {
    let kb = kb();
    let opts = PipelineOptions::default();
    for (key, producer, stage) in [
        ("EXTRACTOR VALIDATION:", "extract", Stage::Extractor),
        ("MAPPER VALIDATION:", "map", Stage::Mapper),
        ("FORMALIZER VALIDATION:", "formalize", Stage::Formalizer),
    ] {
        let mut s = script("two_jobs");
        set_response(&mut s, key, "VALIDATION FAILED: missing rule");
        let backend = Recording::new(s);
        let exec = stub_executor();
        let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = pipe.run("two_jobs", &problem("two_jobs"), tmp.path()).map_err(|e| e.to_string())?;
        ensure!(
            matches!(&out.run.terminal_state, TerminalState::StageAborted { stage: s, .. } if *s == stage),
            "{key}: {:?}",
            out.run.terminal_state
        );
        let texts = backend.texts();
        let runs: Vec<&String> = texts.iter().filter(|t| classify(t) == producer).collect();
        ensure!(runs.len() == 2, "{producer} ran {} times", runs.len());
        ensure!(runs[1].contains("PREVIOUS ATTEMPT FAILED VALIDATION:\nmissing rule"), "{producer} retry lacks the verdict");
        ensure!(exec.invocations() == 0, "executed after abort");
    }
    let backend = Recording::new(script("two_jobs"));
    let exec = stub_executor();
    let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipe.run("two_jobs", &problem("two_jobs"), tmp.path()).map_err(|e| e.to_string())?;
    ensure!(backend.labels().iter().filter(|l| l.starts_with("check_")).count() == 3, "passing verdicts did not admit");
    Ok("3 phases: one retry then abort; PASSED admits".into())
}

fn reflect_run(edit: impl FnOnce(&mut Script)) -> Result<Reflected, String> {
    let kb = kb();
    let opts = PipelineOptions { reflection: true, reflection_cap: REFLECTION_CAP, ..PipelineOptions::default() };
    let mut s = script("two_jobs_reflection");
    edit(&mut s);
    let backend = Recording::new(s);
    let exec = stub_executor();
    let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = pipe.run("two_jobs", &problem("two_jobs_reflection"), tmp.path()).map_err(|e| e.to_string())?;
    Ok((backend.labels(), backend.texts(), out.run.terminal_state, out.run.agent_calls))
}

fn reflection() -> Check {
    const CLAIM: &str = r#"{"is_caused_by_you": true, "error_attribution": "misread", "hints": "Re-read R3."}"#;
    const DENY: &str = r#"{"is_caused_by_you": false, "error_attribution": "fine", "hints": ""}"#;
    const DENY_WITH_HINTS: &str = r#"{"is_caused_by_you": false, "error_attribution": "fine", "hints": "change it"}"#;

    let (labels, texts, state, _) = reflect_run(|_| {})?;
    ensure!(labels[6] == "backward_formalizer" && !labels.contains(&"backward_mapper"), "routing {labels:?}");
    ensure!(state == TerminalState::Succeeded, "{state:?}");
    ensure!(texts.iter().rfind(|t| classify(t) == "formalize").is_some_and(|t| t.contains("REFLECTION HINTS:")), "hints not delivered");

    let (labels, _, _, _) = reflect_run(|s| {
        set_response(s, BACKWARD_FORMALIZER_KEY, DENY);
        set_response(s, BACKWARD_EXTRACTOR_KEY, CLAIM);
    })?;
    let rerun = ["extract", "check_extraction", "map", "check_mapping", "formalize", "check_formalization"];
    ensure!(labels[9..15] == rerun, "downstream re-run {:?}", &labels[9..15]);

    let (_, _, state, _) = reflect_run(|s| set_response(s, BACKWARD_FORMALIZER_KEY, DENY_WITH_HINTS))?;
    ensure!(matches!(state, TerminalState::StageAborted { stage: Stage::Reflection, .. }), "false+hints accepted: {state:?}");

    let (labels, _, state, calls) = reflect_run(|s| {
        set_response(s, BACKWARD_FORMALIZER_KEY, DENY);
        set_response(s, BACKWARD_EXTRACTOR_KEY, CLAIM);
    })?;
    let rounds = labels.iter().filter(|l| **l == "backward_formalizer").count();
    ensure!(state == TerminalState::ReflectionExhausted && rounds == REFLECTION_CAP as usize, "{state:?} after {rounds} rounds");
    let bound = max_agent_calls_well_formed(0, REFLECTION_CAP);
    ensure!(calls == bound, "{calls} calls, bound {bound}");
    Ok(format!("formalizer-first, downstream re-run, false+hints rejected, stop at {REFLECTION_CAP}, {calls} calls = bound"))
}

fn golden(name: &str) -> String {
    let text = std::fs::read_to_string(root().join("tests/golden").join(format!("{name}.txt"))).unwrap();
    text.trim_end_matches('\n').to_string()
}

fn prompt_fidelity() -> Check {
    let names = ["extractor", "mapper", "formalizer", "checker_extraction", "checker_mapping", "checker_formalization"];
    for t in prompts::ALL.iter().filter(|t| names.contains(&t.name)) {
        let values: Vec<(&str, String)> = t.placeholders.iter().map(|p| (*p, format!("<<{p} sample>>"))).collect();
        let refs: Vec<(&str, &str)> = values.iter().map(|(k, v)| (*k, v.as_str())).collect();
        ensure!(t.render(&refs) == golden(t.name), "{} differs from golden", t.name);
    }
    ensure!(prompts::schema_text(prompts::EXTRACTOR_SCHEMA) == golden("extractor_schema"), "extractor schema differs");
    ensure!(prompts::schema_text(prompts::MAPPER_SCHEMA) == golden("mapper_schema"), "mapper schema differs");
    Ok(format!("{} prompts and 2 schemas byte-equal", names.len()))
}

fn main() {
    let checks: [(&str, CheckFn); 7] = [
        ("soundness oracle suite", soundness),
        ("metric arithmetic", metrics),
        ("judge rule", judge_rule),
        ("offline end-to-end", offline_end_to_end),
        ("checker gating", gating),
        ("reflection protocol", reflection),
        ("prompt fidelity", prompt_fidelity),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
