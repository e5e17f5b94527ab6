mod common;

use common::*;
use r2c::cir::DomainTag;
use r2c::eval::*;
use r2c::pipeline::{Pipeline, PipelineOptions};
use rand::{Rng, SeedableRng};

use OutcomeStatus::*;

const STATUSES: [OutcomeStatus; 6] = [Correct, Incorrect, ExecError, Timeout, Infeasible, NoObjective];

fn o(s: OutcomeStatus) -> SolveOutcome {
    SolveOutcome::of(s)
}

/// Pooled counts over the whole matrix. Equals the mean of per-run
/// percentages because every run covers every problem.
fn oracle(m: &[Vec<OutcomeStatus>], k: usize) -> (f64, f64, f64) {
    let cells = (m.len() * m[0].len()) as f64;
    let correct = m.iter().flatten().filter(|s| **s == Correct).count() as f64;
    let executed = m.iter().flatten().filter(|s| !matches!(s, ExecError | Timeout)).count() as f64;
    let solved = m.iter().filter(|r| r.iter().take(k).any(|s| *s == Correct)).count() as f64;
    (100.0 * correct / cells, 100.0 * executed / cells, 100.0 * solved / m.len() as f64)
}

fn report(m: &[Vec<OutcomeStatus>], ks: &[usize]) -> BenchmarkReport {
    let matrix: Vec<Vec<SolveOutcome>> = m.iter().map(|r| r.iter().map(|s| o(*s)).collect()).collect();
    let ids: Vec<String> = (0..m.len()).map(|i| format!("p{i}")).collect();
    compute_metrics(&ids, &[], &matrix, ks).unwrap()
}

#[test]
fn hand_built_fifty_by_five() {
    // Problem i is correct in its first (i % 6) runs, capped at 5; odd rows
    // fail the remaining runs with ExecError, even rows with Incorrect.
    let m: Vec<Vec<OutcomeStatus>> = (0..50)
        .map(|i| {
            let good = (i % 6).min(5);
            (0..5).map(|j| if j < good { Correct } else if i % 2 == 1 { ExecError } else { Incorrect }).collect()
        })
        .collect();
    // Correct cells: rows by i%6 = 0..5 → 0,1,2,3,4,5 correct; counts of
    // each residue in 0..50 are 9,9,8,8,8,8 → 0+9+16+24+32+40 = 121.
    let r = report(&m, &[1, 2, 3, 4, 5]);
    assert!((r.ar - 100.0 * 121.0 / 250.0).abs() < 1e-9, "{}", r.ar);
    // pass@1: rows with i%6 >= 1 → 50 - 9 = 41.
    assert!((r.pass_at_k[&1] - 82.0).abs() < 1e-9);
    let (ar, er, p3) = oracle(&m, 3);
    assert!((r.ar - ar).abs() < 1e-9 && (r.er - er).abs() < 1e-9 && (r.pass_at_k[&3] - p3).abs() < 1e-9);
}

#[test]
fn random_matrices_match_oracle() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let runs = rng.gen_range(1..8);
        let m: Vec<Vec<OutcomeStatus>> =
            (0..n).map(|_| (0..runs).map(|_| STATUSES[rng.gen_range(0..STATUSES.len())]).collect()).collect();
        let ks: Vec<usize> = (1..=runs).collect();
        let r = report(&m, &ks);
        for k in 1..=runs {
            let (ar, er, pk) = oracle(&m, k);
            assert!((r.ar - ar).abs() < 1e-9);
            assert!((r.er - er).abs() < 1e-9);
            assert!((r.pass_at_k[&k] - pk).abs() < 1e-9);
        }
        for (a, e) in r.ar_per_run.iter().zip(&r.er_per_run) {
            assert!(a <= e, "per-run AR exceeds ER");
        }
        let vals: Vec<f64> = r.pass_at_k.values().copied().collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]), "pass@k not monotone");
    }
}

#[test]
fn judge_boundaries() {
    let eps = 1e-9;
    for sense in [Sense::Min, Sense::Max] {
        assert_eq!(judge(101.0, 100.0, sense, DEFAULT_ABS_FLOOR), Judgement::Correct);
        assert_eq!(judge(99.0, 100.0, sense, DEFAULT_ABS_FLOOR), Judgement::Correct);
        assert_eq!(judge(101.0 + eps, 100.0, sense, DEFAULT_ABS_FLOOR), Judgement::Incorrect);
        assert_eq!(judge(99.0 - eps, 100.0, sense, DEFAULT_ABS_FLOOR), Judgement::Incorrect);
        assert_eq!(judge(1e-6, 0.0, sense, DEFAULT_ABS_FLOOR), Judgement::Correct);
        assert_eq!(judge(1e-6 + eps, 0.0, sense, DEFAULT_ABS_FLOOR), Judgement::Incorrect);
    }
}

#[test]
fn two_formats_agree() {
    let r = report(&[vec![Correct, ExecError], vec![Incorrect, Correct]], &[1, 2]);
    let tmp = tempfile::tempdir().unwrap();
    let files = emit_report(&r, tmp.path(), &[ReportFormat::Json, ReportFormat::Markdown]).unwrap();
    assert_eq!(files.len(), 2);
    let json: BenchmarkReport = serde_json::from_slice(&std::fs::read(&files[0]).unwrap()).unwrap();
    let md = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!((json.ar, json.er), (r.ar, r.er));
    assert!(md.contains(&format!("| {} |", summary_line(&json))));
    assert!(md.contains("No domain breakdown"));
}

#[test]
fn sample_benchmark_end_to_end() {
    let kb = kb();
    let problems = load_benchmark(&root().join("fixtures/bench/sample.json")).unwrap();
    let mut s: r2c::llm::Script =
        serde_json::from_str(&std::fs::read_to_string(root().join("fixtures/bench/sample_script.json")).unwrap()).unwrap();
    s.strict = true;
    let backend = Recording::new(s);
    let exec = stub_executor();
    let opts = PipelineOptions::default();
    let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };
    let tmp = tempfile::tempdir().unwrap();
    let eopts = EvalOptions { runs: 3, ks: vec![1, 3], workers: 4, ..EvalOptions::default() };
    let r = run_benchmark(&pipe, &problems, tmp.path(), &eopts).unwrap();
    let want = [Correct, Correct, Incorrect, ExecError, Correct];
    for (row, w) in r.per_problem.iter().zip(want) {
        assert!(row.iter().all(|o| o.status == w), "{row:?} vs {w:?}");
    }
    assert_eq!((r.ar, r.er), (60.0, 80.0));
    assert_eq!(r.per_domain["job shop"], 2.0);
    assert_eq!(r.per_domain["energy"], 1.0);
    assert_eq!(exec.invocations(), 15);
    assert_eq!(r.problem_ids[4], "en_battery");
    assert_eq!(problems[4].domain, DomainTag::Energy);
}
