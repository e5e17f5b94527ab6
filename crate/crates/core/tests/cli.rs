mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

fn r2c(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_r2c"));
    c.current_dir(root()).args(args);
    for k in ["R2C_API_BASE", "R2C_API_KEY", "R2C_MODEL", "R2C_CONFIG"] {
        c.env_remove(k);
    }
    c
}

fn run(c: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = c.output().unwrap();
    (status.code().unwrap(), String::from_utf8(stdout).unwrap(), String::from_utf8(stderr).unwrap())
}

const RUNNER: &str = "sh fixtures/shim/stub_runner.sh";

fn solve(script: &Path, problem: &str, out: &Path, extra: &[&str]) -> (i32, String, String) {
    let backend = format!("scripted:{}", script.display());
    let mut args = vec!["solve", problem, "--backend", &backend, "--kb", "kb", "--runner", RUNNER];
    let out = out.display().to_string();
    args.extend(["--out", &out]);
    args.extend(extra);
    run(&mut r2c(&args))
}

#[test]
fn kb_validate_seed() {
    let (code, stdout, _) = run(&mut r2c(&["kb", "validate", "kb"]));
    assert_eq!(code, 0);
    assert!(stdout.contains("10 templates"));
}

#[test]
fn kb_validate_rejects_broken_template() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("job shop");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("bad.json"), r#"{"template_id": "bad"}"#).unwrap();
    let (code, _, stderr) = run(&mut r2c(&["kb", "validate", tmp.path().to_str().unwrap()]));
    assert_eq!(code, 1);
    assert!(!stderr.is_empty());
}

#[test]
fn kb_search_ranks_machine_no_overlap_first() {
    let (code, stdout, _) = run(&mut r2c(&["kb", "search", "kb", "--domain", "job shop", "--query", "no-overlap", "-k", "3"]));
    assert_eq!(code, 0);
    assert!(stdout.lines().next().unwrap().starts_with("js_machine_no_overlap\t"), "{stdout}");
}

#[test]
fn missing_kb_root_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&mut r2c(&["solve", "fixtures/scripted/two_jobs/problem.txt", "--kb", "no/such/kb", "--out", tmp.path().to_str().unwrap()]));
    assert_eq!(code, 4);
    assert!(stderr.contains("kb root not found"), "{stderr}");
}

#[test]
fn http_backend_without_key_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&mut r2c(&["solve", "fixtures/scripted/two_jobs/problem.txt", "--kb", "kb", "--out", tmp.path().to_str().unwrap()]));
    assert_eq!(code, 4);
    assert!(stderr.contains("API key"), "{stderr}");
}

#[test]
fn credential_is_not_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = run(r2c(&[
        "solve",
        "fixtures/scripted/two_jobs/problem.txt",
        "--kb",
        "kb",
        "--api-base",
        "http://127.0.0.1:9",
        "--timeout",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ])
    .env("R2C_API_KEY", "sk-test-DO-NOT-PRINT"));
    assert_ne!(code, 0);
    assert!(!stdout.contains("DO-NOT-PRINT") && !stderr.contains("DO-NOT-PRINT"));
    for (_, bytes) in read_tree(tmp.path()) {
        assert!(!String::from_utf8_lossy(&bytes).contains("DO-NOT-PRINT"));
    }
}

#[test]
fn scripted_solve_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let script = root().join("fixtures/scripted/two_jobs/script.json");
    let (code, stdout, stderr) = solve(&script, "fixtures/scripted/two_jobs/problem.txt", tmp.path(), &[]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("formulation: ") && stdout.contains("code: "));
    assert!(stdout.contains("status: optimal objective: 5"));
}

#[test]
fn solve_reads_stdin() {
    let tmp = tempfile::tempdir().unwrap();
    let backend = format!("scripted:{}", root().join("fixtures/scripted/two_jobs/script.json").display());
    let mut c = r2c(&["solve", "--backend", &backend, "--kb", "kb", "--runner", RUNNER, "--out", tmp.path().to_str().unwrap()]);
    c.stdin(std::fs::File::open(root().join("fixtures/scripted/two_jobs/problem.txt")).unwrap());
    let (code, stdout, _) = run(&mut c);
    assert_eq!(code, 0);
    assert!(stdout.contains("stdin-1"));
}

#[test]
fn aborted_gate_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = script("two_jobs");
    set_response(&mut s, "MAPPER VALIDATION:", "VALIDATION FAILED: cluster scores are unjustified");
    let path = tmp.path().join("script.json");
    std::fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
    let (code, _, stderr) = solve(&path, "fixtures/scripted/two_jobs/problem.txt", &tmp.path().join("out"), &[]);
    assert_eq!(code, 2);
    assert!(stderr.contains("Mapper"), "{stderr}");
}

#[test]
fn infeasible_result_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let script = root().join("fixtures/scripted/two_jobs_reflection/script.json");
    let problem = "fixtures/scripted/two_jobs_reflection/problem.txt";
    let (code, stdout, _) = solve(&script, problem, tmp.path(), &[]);
    assert_eq!(code, 3);
    assert!(stdout.contains("status: infeasible"));
    let (code, stdout, _) = solve(&script, problem, tmp.path(), &["--reflection"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("reflection attempts: 1"));
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("r2c.toml");
    std::fs::write(&cfg, "kb_root = \"no/such/kb\"\n").unwrap();
    let script = root().join("fixtures/scripted/two_jobs/script.json");
    let backend = format!("scripted:{}", script.display());
    let out = tmp.path().join("out").display().to_string();
    let base = ["solve", "fixtures/scripted/two_jobs/problem.txt", "--backend", &backend, "--runner", RUNNER, "--out", &out];
    let (code, _, _) = run(r2c(&base).env("R2C_CONFIG", &cfg));
    assert_eq!(code, 4, "file layer applies");
    let mut with_flag = base.to_vec();
    with_flag.extend(["--kb", "kb"]);
    let (code, _, _) = run(r2c(&with_flag).env("R2C_CONFIG", &cfg));
    assert_eq!(code, 0, "flag beats file");
}

fn eval(out: &Path) -> (i32, String, String) {
    let backend = format!("scripted:{}", root().join("fixtures/bench/sample_script.json").display());
    let out = out.display().to_string();
    run(&mut r2c(&[
        "eval", "--bench", "fixtures/bench/sample.json", "--backend", &backend, "--kb", "kb", "--runner", RUNNER, "--out", &out,
        "--runs", "2", "--k", "1,2", "--workers", "3",
    ]))
}

#[test]
fn eval_writes_stable_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (code, stdout, stderr) = eval(&a);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("AR / ER: 60.0 / 80.0"), "{stdout}");
    assert_eq!(eval(&b).0, 0);
    for name in ["report.json", "report.md"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between invocations");
    }
    assert_eq!(eval(&a).0, 0, "re-running into the same directory works");
}
