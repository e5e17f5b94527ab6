//! Extract → Check → Map → Check → Formalize → Check → Execute, with
//! post-execution reflection.
//!
//! Every exchange and stage output is written to `runs/<run_id>/NN_<label>.<ext>`
//! as soon as it exists. Timings and token usage go only to `meta.json`, so
//! the numbered artifacts of two runs over the scripted backend are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::{
    self, Amendments, BackwardInputs, CheckerContext, CheckerPhase, Exchange, ExecutionFeedback, Extraction,
    FormalizationResult, MapperOutput, ParadigmChoice, Producer, ReflectionAttribution, Session,
};
use crate::kb::KnowledgeBase;
use crate::llm::{Backend, Traced, Usage};
use crate::runner::{Executor, RunnerResult, RunnerStatus, DEFAULT_TIMEOUT};

pub const DEFAULT_REFLECTION_CAP: u32 = 3;
pub const DEFAULT_CHECKER_RETRIES: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub reflection: bool,
    pub reflection_cap: u32,
    /// Producer re-invocations allowed after a failed checker verdict.
    pub checker_retries: u32,
    pub timeout: Duration,
    /// Write `trace.jsonl` with every backend request and reply.
    pub trace: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            reflection: false,
            reflection_cap: DEFAULT_REFLECTION_CAP,
            checker_retries: DEFAULT_CHECKER_RETRIES,
            timeout: DEFAULT_TIMEOUT,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Extractor,
    Mapper,
    Formalizer,
    Executor,
    Reflection,
}

impl From<Producer> for Stage {
    fn from(p: Producer) -> Self {
        match p {
            Producer::Extractor => Stage::Extractor,
            Producer::Mapper => Stage::Mapper,
            Producer::Formalizer => Stage::Formalizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum TerminalState {
    /// All gates passed and the code was executed (whatever its result).
    Succeeded,
    StageAborted { stage: Stage, reason: String },
    ReflectionExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub artifact: String,
    pub duration_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub problem_id: String,
    pub run_dir: PathBuf,
    pub stage_artifacts: Vec<StageRecord>,
    pub terminal_state: TerminalState,
    /// Reflection iterations performed.
    pub attempts: u32,
    pub agent_calls: usize,
    pub executions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub run: PipelineRun,
    pub formalization: Option<FormalizationResult>,
    pub execution: Option<RunnerResult>,
    pub paradigms: Vec<ParadigmChoice>,
}

/// True while another reflection iteration is allowed.
pub fn enforce_reflection_cap(attempts: u32, cap: u32) -> bool {
    attempts < cap
}

/// Agent calls on a run where every reply is accepted at first try.
pub const HAPPY_PATH_CALLS: usize = 6;

/// Upper bound on agent calls for one problem. A gated stage costs at most
/// two producer and two checker calls (one re-ask each) per attempt; a
/// reflection round asks up to three backward prompts (each possibly
/// re-asked) and then re-runs all three stages.
pub fn max_agent_calls(checker_retries: u32, reflection_cap: u32) -> usize {
    let forward = 3 * 4 * (1 + checker_retries as usize);
    forward + reflection_cap as usize * (3 * 2 + forward)
}

/// Same bound without re-asks: each call succeeds syntactically.
pub fn max_agent_calls_well_formed(checker_retries: u32, reflection_cap: u32) -> usize {
    let forward = 3 * 2 * (1 + checker_retries as usize);
    forward + reflection_cap as usize * (3 + forward)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

struct RunDir {
    path: PathBuf,
    next: usize,
    records: Vec<StageRecord>,
}

impl RunDir {
    fn create(path: PathBuf) -> std::io::Result<Self> {
        fs::create_dir_all(&path)?;
        Ok(RunDir { path, next: 1, records: Vec::new() })
    }

    fn name(&mut self, label: &str, ext: &str) -> String {
        let n = format!("{:02}_{label}.{ext}", self.next);
        self.next += 1;
        n
    }

    fn write(&mut self, stage: Stage, label: &str, ext: &str, body: &str, started: Instant, usage: Option<Usage>) -> std::io::Result<String> {
        let name = self.name(label, ext);
        fs::write(self.path.join(&name), body)?;
        self.records.push(StageRecord { stage, artifact: name.clone(), duration_ms: started.elapsed().as_millis(), usage });
        Ok(name)
    }

    fn exchanges(&mut self, stage: Stage, list: Vec<Exchange>, started: Instant) -> std::io::Result<()> {
        for ex in list {
            let body = serde_json::to_string_pretty(&ex).expect("exchange serializes") + "\n";
            self.write(stage, &ex.label.clone(), "json", &body, started, None)?;
        }
        Ok(())
    }
}

enum Abort {
    Stage(Stage, String),
    Io(std::io::Error),
}

impl From<std::io::Error> for Abort {
    fn from(e: std::io::Error) -> Self {
        Abort::Io(e)
    }
}

struct Finished {
    state: TerminalState,
    formalization: FormalizationResult,
    execution: RunnerResult,
    paradigms: Vec<ParadigmChoice>,
}

struct Runner<'a> {
    session: Session<'a>,
    kb: &'a KnowledgeBase,
    executor: &'a dyn Executor,
    problem: &'a str,
    opts: &'a PipelineOptions,
    dir: RunDir,
    executions: usize,
    attempts: u32,
}

impl<'a> Runner<'a> {
    fn flush(&mut self, stage: Stage, started: Instant) -> std::io::Result<()> {
        let ex = self.session.drain();
        self.dir.exchanges(stage, ex, started)
    }

    /// Runs a producer behind its checker, re-invoking the producer with the
    /// failure detail until the retry budget is spent.
    fn gated<T>(
        &mut self,
        stage: Stage,
        phase: CheckerPhase,
        hints: Option<String>,
        produce: impl Fn(&mut Session, &Amendments) -> Result<T, agents::AgentError>,
        context: impl Fn(&T) -> CheckerContext,
    ) -> Result<T, Abort> {
        let mut amend = Amendments { reflection_hints: hints, failed_validation: None };
        let mut last = String::new();
        for _ in 0..=self.opts.checker_retries {
            let started = Instant::now();
            let produced = produce(&mut self.session, &amend);
            self.flush(stage, started)?;
            let out = produced.map_err(|e| Abort::Stage(stage, e.to_string()))?;
            let started = Instant::now();
            let verdict = agents::run_checker(&mut self.session, phase, &context(&out));
            self.flush(stage, started)?;
            let verdict = verdict.map_err(|e| Abort::Stage(stage, e.to_string()))?;
            if verdict.passed {
                return Ok(out);
            }
            last = verdict.detail.clone();
            amend.failed_validation = Some(verdict.detail);
        }
        Err(Abort::Stage(stage, format!("checker rejected output: {last}")))
    }

    fn extract(&mut self, hints: Option<String>) -> Result<Extraction, Abort> {
        let problem = self.problem;
        let e = self.gated(
            Stage::Extractor,
            CheckerPhase::ExtractorToMapper,
            hints,
            |s, a| agents::run_extractor(s, problem, a),
            |e| CheckerContext::extraction(problem, e),
        )?;
        self.dir.write(Stage::Extractor, "extraction", "json", &(e.to_pretty() + "\n"), Instant::now(), None)?;
        Ok(e)
    }

    fn map(&mut self, extraction: &Extraction, hints: Option<String>) -> Result<(MapperOutput, Vec<ParadigmChoice>), Abort> {
        let (problem, kb) = (self.problem, self.kb);
        let m = self.gated(
            Stage::Mapper,
            CheckerPhase::MapperToFormalizer,
            hints,
            |s, a| agents::run_mapper(s, problem, extraction, kb, a),
            |m| CheckerContext::mapping(problem, extraction, &m.spec),
        )?;
        let choices = agents::select_paradigm(&m.spec).map_err(|e| Abort::Stage(Stage::Mapper, e.to_string()))?;
        let now = Instant::now();
        self.dir.write(Stage::Mapper, "mapper", "json", &(m.spec.to_pretty() + "\n"), now, None)?;
        let summary = json!({"paradigms": choices, "coverage_gaps": m.spec.coverage_gaps});
        self.dir.write(Stage::Mapper, "paradigms", "json", &(serde_json::to_string_pretty(&summary).unwrap() + "\n"), now, None)?;
        Ok((m, choices))
    }

    fn formalize(&mut self, extraction: &Extraction, mapper: &MapperOutput, hints: Option<String>) -> Result<FormalizationResult, Abort> {
        let problem = self.problem;
        let f = self.gated(
            Stage::Formalizer,
            CheckerPhase::Formalization,
            hints,
            |s, a| agents::run_formalizer(s, problem, extraction, &mapper.spec, a),
            |f| CheckerContext::formalization(problem, extraction, &mapper.spec, f),
        )?;
        let now = Instant::now();
        self.dir.write(Stage::Formalizer, "formulation", "md", &(f.formulation_text.clone() + "\n"), now, None)?;
        self.dir.write(Stage::Formalizer, "code", "py", &(f.code_text.clone() + "\n"), now, None)?;
        Ok(f)
    }

    fn execute(&mut self, f: &FormalizationResult) -> Result<RunnerResult, Abort> {
        self.executions += 1;
        let started = Instant::now();
        let scratch = self.dir.path.join(format!("scratch_{}", self.executions));
        let result = self.executor.execute(&f.code_text, &scratch, self.opts.timeout);
        let body = serde_json::to_string_pretty(&result).expect("result serializes") + "\n";
        self.dir.write(Stage::Executor, "execution", "json", &body, started, None)?;
        Ok(result)
    }

    /// Backward prompts nearest-first; the first claim wins.
    fn reflect(&mut self, inputs: &BackwardInputs) -> Result<Option<(Producer, ReflectionAttribution)>, Abort> {
        for p in Producer::BACKWARD_ORDER {
            let started = Instant::now();
            let attr = agents::run_backward(&mut self.session, p, inputs);
            self.flush(Stage::Reflection, started)?;
            let attr = attr.map_err(|e| Abort::Stage(Stage::Reflection, e.to_string()))?;
            if attr.is_caused_by_you {
                return Ok(Some((p, attr)));
            }
        }
        Ok(None)
    }

    fn drive(&mut self) -> Result<Finished, Abort> {
        let mut from = Producer::Extractor;
        let mut hints: Option<String> = None;
        let mut extraction: Option<Extraction> = None;
        let mut mapper: Option<(MapperOutput, Vec<ParadigmChoice>)> = None;
        loop {
            let hint_for = |p: Producer| if p == from { hints.clone() } else { None };
            if from <= Producer::Extractor || extraction.is_none() {
                extraction = Some(self.extract(hint_for(Producer::Extractor))?);
            }
            let e = extraction.clone().expect("set above");
            if from <= Producer::Mapper || mapper.is_none() {
                mapper = Some(self.map(&e, hint_for(Producer::Mapper))?);
            }
            let (m, choices) = mapper.clone().expect("set above");
            let f = self.formalize(&e, &m, hint_for(Producer::Formalizer))?;
            let result = self.execute(&f)?;

            if result.status == RunnerStatus::Optimal || !self.opts.reflection {
                return Ok(Finished { state: TerminalState::Succeeded, formalization: f, execution: result, paradigms: choices });
            }
            if !enforce_reflection_cap(self.attempts, self.opts.reflection_cap) {
                return Ok(Finished { state: TerminalState::ReflectionExhausted, formalization: f, execution: result, paradigms: choices });
            }
            self.attempts += 1;
            let feedback = ExecutionFeedback {
                status: result.status.as_str().to_string(),
                stderr_tail: result.stderr_tail.clone(),
                stdout_tail: result.stdout_tail.clone(),
                iis_constraints: result.iis_constraints.clone(),
            };
            let inputs = BackwardInputs { problem_text: self.problem, extraction: &e, mapper: &m, formalization: &f, feedback: &feedback };
            match self.reflect(&inputs)? {
                Some((p, attr)) => {
                    from = p;
                    hints = Some(attr.hints);
                }
                None => {
                    from = Producer::Formalizer;
                    hints = None;
                }
            }
        }
    }
}

/// Shared, immutable pieces of a run; one value serves many concurrent runs.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub backend: &'a dyn Backend,
    pub kb: &'a KnowledgeBase,
    pub executor: &'a dyn Executor,
    pub options: &'a PipelineOptions,
}

impl<'a> Pipeline<'a> {
    /// Runs one problem end to end, writing artifacts into `run_dir` (whose
    /// file name is the run id). Only I/O failures on the run directory are
    /// errors; every other failure ends in a terminal state.
    pub fn run(&self, problem_id: &str, problem_text: &str, run_dir: &Path) -> std::io::Result<PipelineOutcome> {
        let run_id = run_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let dir = RunDir::create(run_dir.to_path_buf())?;
        let traced;
        let backend: &dyn Backend = if self.options.trace {
            traced = Traced::create(self.backend, &run_dir.join("trace.jsonl"))?;
            &traced
        } else {
            self.backend
        };
        let started = Instant::now();
        let mut r = Runner {
            session: Session::new(backend),
            kb: self.kb,
            executor: self.executor,
            problem: problem_text,
            opts: self.options,
            dir,
            executions: 0,
            attempts: 0,
        };
        let (terminal_state, formalization, execution, paradigms) = match r.drive() {
            Ok(f) => (f.state, Some(f.formalization), Some(f.execution), f.paradigms),
            Err(Abort::Io(e)) => return Err(e),
            Err(Abort::Stage(stage, reason)) => (TerminalState::StageAborted { stage, reason }, None, None, vec![]),
        };
        let attempts = r.attempts;
        let run = PipelineRun {
            run_id,
            problem_id: problem_id.to_string(),
            run_dir: run_dir.to_path_buf(),
            stage_artifacts: r.dir.records,
            terminal_state,
            attempts,
            agent_calls: r.session.calls(),
            executions: r.executions,
        };
        let meta = json!({
            "run_id": run.run_id,
            "problem_id": run.problem_id,
            "terminal_state": run.terminal_state,
            "attempts": run.attempts,
            "agent_calls": run.agent_calls,
            "executions": run.executions,
            "usage": r.session.usage(),
            "wall_time_ms": started.elapsed().as_millis(),
            "stages": run.stage_artifacts,
        });
        fs::write(run_dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")?;
        Ok(PipelineOutcome { run, formalization, execution, paradigms })
    }
}

/// Run directory name: sanitized problem id plus a caller-chosen suffix.
pub fn run_dir_name(problem_id: &str, suffix: &str) -> String {
    if suffix.is_empty() {
        sanitize(problem_id)
    } else {
        format!("{}-{}", sanitize(problem_id), sanitize(suffix))
    }
}
