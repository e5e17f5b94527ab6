#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use r2c::kb::KnowledgeBase;
use r2c::llm::{Backend, ChatRequest, ChatResponse, LlmError, Script, ScriptedBackend};
use r2c::runner::ShimExecutor;

pub const EXTRACTOR_KEY: &str = "Universal Operations Problem Extractor";
pub const MAPPER_KEY: &str = "Modeling Mapper";
pub const FORMALIZER_KEY: &str = "I will provide you the Extraction and Mapper of the problem.";
pub const BACKWARD_FORMALIZER_KEY: &str = "You are a Code Generation expert";
pub const BACKWARD_MAPPER_KEY: &str = "You are a Mapper expert";
pub const BACKWARD_EXTRACTOR_KEY: &str = "BACKWARD TASK (REFLECTION)";

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn kb() -> KnowledgeBase {
    KnowledgeBase::load(&root().join("kb")).expect("seed kb loads")
}

pub fn stub_executor() -> ShimExecutor {
    let stub = root().join("fixtures/shim/stub_runner.sh");
    ShimExecutor::new("sh").with_args([stub.display().to_string()])
}

pub fn script(name: &str) -> Script {
    let text = std::fs::read_to_string(root().join("fixtures/scripted").join(name).join("script.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn problem(name: &str) -> String {
    std::fs::read_to_string(root().join("fixtures/scripted").join(name).join("problem.txt")).unwrap()
}

/// Replaces the response of the first entry whose matcher mentions `key`.
pub fn set_response(script: &mut Script, key: &str, response: &str) {
    let e = script
        .entries
        .iter_mut()
        .find(|e| serde_json::to_string(&e.matcher).unwrap().contains(key))
        .unwrap_or_else(|| panic!("no entry for {key}"));
    e.response = response.to_string();
}

/// Which agent a request was addressed to, judged by its prompt.
pub fn classify(text: &str) -> &'static str {
    if text.contains("EXTRACTOR VALIDATION:") {
        "check_extraction"
    } else if text.contains("MAPPER VALIDATION:") {
        "check_mapping"
    } else if text.contains("FORMALIZER VALIDATION:") {
        "check_formalization"
    } else if text.contains(BACKWARD_FORMALIZER_KEY) {
        "backward_formalizer"
    } else if text.contains(BACKWARD_MAPPER_KEY) {
        "backward_mapper"
    } else if text.contains(BACKWARD_EXTRACTOR_KEY) {
        "backward_extractor"
    } else if text.contains(FORMALIZER_KEY) {
        "formalize"
    } else if text.contains(MAPPER_KEY) {
        "map"
    } else if text.contains(EXTRACTOR_KEY) {
        "extract"
    } else {
        "unknown"
    }
}

/// Scripted backend that keeps the full text of every request.
pub struct Recording {
    pub inner: ScriptedBackend,
    pub seen: Mutex<Vec<String>>,
}

impl Recording {
    pub fn new(script: Script) -> Self {
        Recording { inner: ScriptedBackend::new(script), seen: Mutex::new(Vec::new()) }
    }

    pub fn texts(&self) -> Vec<String> {
        self.seen.lock().unwrap().clone()
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.texts().iter().map(|t| classify(t)).collect()
    }
}

impl Backend for Recording {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(request.user_text.clone());
        self.inner.complete(request)
    }
}

pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
