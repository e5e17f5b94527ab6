//! Backward reflection after an infeasible run: which agent claims the
//! error, and what gets re-run.

use std::path::Path;
use std::sync::Mutex;

use r2c::kb::KnowledgeBase;
use r2c::llm::{Backend, ChatRequest, ChatResponse, LlmError, ScriptedBackend};
use r2c::pipeline::{Pipeline, PipelineOptions};
use r2c::runner::ShimExecutor;

struct Labelled {
    inner: ScriptedBackend,
    order: Mutex<Vec<String>>,
}

impl Backend for Labelled {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let text = &request.user_text;
        let role = text.lines().map(str::trim).find(|l| l.starts_with("You are") || l.contains("VALIDATION:")).unwrap_or("");
        let tag = if text.contains("BACKWARD TASK (REFLECTION)") { "backward  " } else { "" };
        self.order.lock().unwrap().push(format!("{tag}{}", role.chars().take(70).collect::<String>()));
        self.inner.complete(request)
    }
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let kb = KnowledgeBase::load(&root.join("kb")).expect("seed kb");
    let backend = Labelled {
        inner: ScriptedBackend::load(&root.join("fixtures/scripted/two_jobs_reflection/script.json")).expect("script"),
        order: Mutex::new(Vec::new()),
    };
    let exec = ShimExecutor::new("sh").with_args([root.join("fixtures/shim/stub_runner.sh").display().to_string()]);
    let problem = std::fs::read_to_string(root.join("fixtures/scripted/two_jobs_reflection/problem.txt")).unwrap();
    let opts = PipelineOptions { reflection: true, ..PipelineOptions::default() };
    let pipe = Pipeline { backend: &backend, kb: &kb, executor: &exec, options: &opts };
    let dir = std::env::temp_dir().join("r2c-reflection-example");
    let _ = std::fs::remove_dir_all(&dir);
    let out = pipe.run("two_jobs", &problem, &dir).expect("run dir writable");

    for (i, line) in backend.order.lock().unwrap().iter().enumerate() {
        println!("{:>2}. {line}", i + 1);
    }
    println!("\nterminal state: {:?}, reflection attempts: {}, executions: {}", out.run.terminal_state, out.run.attempts, out.run.executions);
    let exec_files: Vec<_> = out.run.stage_artifacts.iter().filter(|r| r.artifact.ends_with("execution.json")).collect();
    for rec in exec_files {
        let body = std::fs::read_to_string(dir.join(&rec.artifact)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        println!("{}: {} {}", rec.artifact, v["status"], v["iis_constraints"]);
    }
}
