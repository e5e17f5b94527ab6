//! Full Extractor → Mapper → Formalizer → Checker run against a scripted
//! backend and a stub runner. No network or solver needed.

use std::path::Path;

use r2c::kb::KnowledgeBase;
use r2c::llm::ScriptedBackend;
use r2c::pipeline::{Pipeline, PipelineOptions};
use r2c::runner::ShimExecutor;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let kb = KnowledgeBase::load(&root.join("kb")).expect("seed kb");
    let backend = ScriptedBackend::load(&root.join("fixtures/scripted/two_jobs/script.json")).expect("script");
    let exec = ShimExecutor::new("sh").with_args([root.join("fixtures/shim/stub_runner.sh").display().to_string()]);
    let problem = std::fs::read_to_string(root.join("fixtures/scripted/two_jobs/problem.txt")).unwrap();
    let opts = PipelineOptions { trace: true, ..PipelineOptions::default() };
    let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };

    let dir = std::env::temp_dir().join("r2c-offline-example");
    let _ = std::fs::remove_dir_all(&dir);
    let out = pipe.run("two_jobs", &problem, &dir).expect("run dir writable");

    println!("terminal state: {:?}", out.run.terminal_state);
    println!("agent calls: {}  executions: {}", out.run.agent_calls, out.run.executions);
    for c in &out.paradigms {
        println!("paradigm: {} -> {} ({})", c.cluster, c.paradigm, c.fit_score);
    }
    if let Some(r) = &out.execution {
        println!("runner: {} {:?}", r.status.as_str(), r.objective);
    }
    println!("\nartifacts in {}:", dir.display());
    for rec in &out.run.stage_artifacts {
        println!("  {:<12} {}", format!("{:?}", rec.stage), rec.artifact);
    }
    if let Some(f) = &out.formalization {
        println!("\n{}", f.formulation_text);
    }
}
