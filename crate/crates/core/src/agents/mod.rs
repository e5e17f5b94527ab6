//! The Extractor, Mapper, Formalizer and Checker agents.
//!
//! Each `run_*` function renders its frozen prompt, calls the backend
//! through a [`Session`] (which records every exchange for the run
//! directory) and parses the reply. Unparseable replies get one re-ask.

pub mod prompts;
pub mod schema;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::kb::{render_domain_knowledge, KbError, KnowledgeBase, RetrievalHit, DEFAULT_TOP_K};
use crate::llm::{extract_structured, Backend, ChatRequest, LadderStep, LlmError, NoStructuredPayload, Usage};
use prompts::PromptTemplate;
pub use schema::{Extraction, MapperSpec, ParadigmCluster, ParadigmScore};

pub const REASK_SUFFIX: &str = "Return only the required format.";
pub const VALIDATION_HEADER: &str = "PREVIOUS ATTEMPT FAILED VALIDATION:";
pub const HINTS_HEADER: &str = "REFLECTION HINTS:";

pub const FORMULATION_START: &str = "#problem_formulation_start#";
pub const FORMULATION_END: &str = "#problem_formulation_end#";
pub const CODE_START: &str = "#Gurobi_code_start#";
pub const CODE_END: &str = "#Gurobi_code_end#";

/// Result-reporting contract appended to the Formalizer prompt; the runner
/// reads these lines from the candidate's output.
pub const SENTINEL_INSTRUCTIONS: &str = "\
## Result Reporting:
The generated code must end by printing exactly one of the following to standard output:
OBJECTIVE_VALUE: <decimal>
    when the model is solved to optimality, with the optimal objective value;
MODEL_STATUS: INFEASIBLE
    when the model is infeasible, optionally followed by one line `IIS_CONSTRAINT: <name>` per constraint of the irreducible inconsistent subsystem;
MODEL_STATUS: <status>
    for any other solver status.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    NoStructuredPayload(#[from] NoStructuredPayload),
    #[error("{agent} output violates schema: {}", violations.join("; "))]
    SchemaViolation { agent: &'static str, violations: Vec<String> },
    #[error("fit_score {score} of paradigm {paradigm} in cluster {cluster} is outside [0,1]")]
    FitScoreOutOfRange { cluster: String, paradigm: String, score: f64 },
    #[error("cluster {cluster} lists no paradigms")]
    EmptyParadigmList { cluster: String },
    #[error("missing marker {0}")]
    MissingMarker(&'static str),
    #[error("duplicate marker {0}")]
    DuplicateMarker(&'static str),
    #[error("generated code prints no OBJECTIVE_VALUE or MODEL_STATUS line")]
    MissingSentinel,
    #[error("checker reply has no verdict line: {raw:?}")]
    UnparseableVerdict { raw: String },
    #[error("malformed attribution: {0}")]
    MalformedAttribution(String),
    #[error("empty problem text")]
    EmptyProblem,
    #[error(transparent)]
    Kb(#[from] KbError),
}

impl AgentError {
    /// Format failures that earn one re-ask.
    pub fn is_unparseable(&self) -> bool {
        matches!(
            self,
            AgentError::NoStructuredPayload(_)
                | AgentError::MissingMarker(_)
                | AgentError::DuplicateMarker(_)
                | AgentError::MissingSentinel
                | AgentError::UnparseableVerdict { .. }
        )
    }
}

// ---------------------------------------------------------------------------
// Session

/// One request/reply pair as sent and received.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exchange {
    pub label: String,
    pub request: ChatRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Session<'a> {
    backend: &'a dyn Backend,
    exchanges: Vec<Exchange>,
    calls: usize,
    usage: Usage,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Session { backend, exchanges: Vec::new(), calls: 0, usage: Usage { prompt_tokens: 0, completion_tokens: 0 } }
    }

    pub fn call(&mut self, label: &str, request: ChatRequest) -> Result<String, LlmError> {
        self.calls += 1;
        let result = self.backend.complete(&request);
        let (response, error) = match &result {
            Ok(r) => (Some(r.text.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        self.exchanges.push(Exchange { label: label.to_string(), request, response, error });
        let r = result?;
        if let Some(u) = r.usage {
            self.usage.prompt_tokens += u.prompt_tokens;
            self.usage.completion_tokens += u.completion_tokens;
        }
        Ok(r.text)
    }

    /// Exchanges recorded since the last drain.
    pub fn drain(&mut self) -> Vec<Exchange> {
        std::mem::take(&mut self.exchanges)
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn usage(&self) -> Usage {
        self.usage
    }

    /// Sends `request`; if `parse` reports a format failure, re-sends once
    /// with the re-ask suffix.
    fn ask<T>(
        &mut self,
        label: &str,
        request: ChatRequest,
        parse: impl Fn(&str) -> Result<T, AgentError>,
    ) -> Result<T, AgentError> {
        let text = self.call(label, request.clone())?;
        match parse(&text) {
            Err(e) if e.is_unparseable() => {
                let mut again = request;
                again.user_text.push_str("\n\n");
                again.user_text.push_str(REASK_SUFFIX);
                let text = self.call(label, again)?;
                parse(&text)
            }
            other => other,
        }
    }
}

/// Text appended to a producer prompt on retries and reflection re-runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Amendments {
    pub reflection_hints: Option<String>,
    pub failed_validation: Option<String>,
}

impl Amendments {
    pub fn apply(&self, prompt: &mut String) {
        if let Some(h) = &self.reflection_hints {
            let _ = write!(prompt, "\n\n{HINTS_HEADER}\n{h}");
        }
        if let Some(d) = &self.failed_validation {
            let _ = write!(prompt, "\n\n{VALIDATION_HEADER}\n{d}");
        }
    }
}

// ---------------------------------------------------------------------------
// Extractor

pub fn extractor_request(problem_text: &str, amend: &Amendments) -> ChatRequest {
    let mut user = prompts::EXTRACTOR.render(&[("Entry", problem_text)]);
    amend.apply(&mut user);
    ChatRequest::new(user).with_system(prompts::schema_text(prompts::EXTRACTOR_SCHEMA))
}

pub fn parse_extraction(text: &str) -> Result<(Extraction, LadderStep), AgentError> {
    let s = extract_structured(text)?;
    Extraction::validate(s.value)
        .map(|e| (e, s.step))
        .map_err(|violations| AgentError::SchemaViolation { agent: "extractor", violations })
}

pub fn run_extractor(session: &mut Session, problem_text: &str, amend: &Amendments) -> Result<Extraction, AgentError> {
    if problem_text.trim().is_empty() {
        return Err(AgentError::EmptyProblem);
    }
    session.ask("extract", extractor_request(problem_text, amend), |t| parse_extraction(t).map(|(e, _)| e))
}

// ---------------------------------------------------------------------------
// Mapper

/// Retrieves per explicit rule and keeps each template once, in first-seen order.
pub fn gather_knowledge(kb: &KnowledgeBase, extraction: &Extraction) -> Result<Vec<RetrievalHit>, KbError> {
    let tags: Vec<&str> = extraction.domain_tags.iter().map(|t| t.as_str()).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rule in &extraction.explicit_rules {
        for hit in kb.retrieve(&tags, &rule.text, DEFAULT_TOP_K)? {
            if seen.insert(hit.template.template_id.clone()) {
                out.push(hit);
            }
        }
    }
    Ok(out)
}

pub fn mapper_request(problem_text: &str, extraction: &Extraction, knowledge: &str, amend: &Amendments) -> ChatRequest {
    let tags = extraction.domain_tag_text();
    let ext = extraction.to_pretty();
    let gran = extraction.granularity();
    let mut user = prompts::MAPPER.render(&[
        ("domain_tag", &tags),
        ("Original_Problem", problem_text),
        ("Extraction", &ext),
        ("Domain_Knowledge", knowledge),
        ("time_model.granularity", &gran),
    ]);
    amend.apply(&mut user);
    ChatRequest::new(user).with_system(prompts::schema_text(prompts::MAPPER_SCHEMA))
}

pub fn parse_mapper(text: &str, extraction: &Extraction) -> Result<MapperSpec, AgentError> {
    let s = extract_structured(text)?;
    MapperSpec::validate(s.value, extraction).map_err(|p| match p {
        schema::MapperProblem::Schema(violations) => AgentError::SchemaViolation { agent: "mapper", violations },
        schema::MapperProblem::FitScore { cluster, paradigm, score } => {
            AgentError::FitScoreOutOfRange { cluster, paradigm, score }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapperOutput {
    pub spec: MapperSpec,
    /// Rendered domain-knowledge block sent with the prompt.
    pub knowledge: String,
}

pub fn run_mapper(
    session: &mut Session,
    problem_text: &str,
    extraction: &Extraction,
    kb: &KnowledgeBase,
    amend: &Amendments,
) -> Result<MapperOutput, AgentError> {
    let knowledge = render_domain_knowledge(&gather_knowledge(kb, extraction)?);
    let request = mapper_request(problem_text, extraction, &knowledge, amend);
    let spec = session.ask("map", request, |t| parse_mapper(t, extraction))?;
    Ok(MapperOutput { spec, knowledge })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParadigmChoice {
    pub cluster: String,
    pub paradigm: String,
    pub fit_score: f64,
}

/// Highest fit score per cluster; ties go to the lexicographically smallest name.
pub fn select_paradigm(spec: &MapperSpec) -> Result<Vec<ParadigmChoice>, AgentError> {
    spec.clusters
        .iter()
        .map(|c| {
            let best = c
                .top_paradigms
                .iter()
                .min_by(|a, b| b.fit_score.total_cmp(&a.fit_score).then_with(|| a.name.cmp(&b.name)))
                .ok_or_else(|| AgentError::EmptyParadigmList { cluster: c.class_name.clone() })?;
            Ok(ParadigmChoice { cluster: c.class_name.clone(), paradigm: best.name.clone(), fit_score: best.fit_score })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Formalizer

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormalizationResult {
    pub formulation_text: String,
    pub code_text: String,
}

pub fn formalizer_request(problem_text: &str, extraction: &Extraction, spec: &MapperSpec, amend: &Amendments) -> ChatRequest {
    let ext = extraction.to_pretty();
    let map = spec.to_pretty();
    let mut user = prompts::FORMALIZER.render(&[
        ("Original_problem_description", problem_text),
        ("Extraction", &ext),
        ("Mapper", &map),
    ]);
    user.push_str("\n\n");
    user.push_str(SENTINEL_INSTRUCTIONS);
    amend.apply(&mut user);
    ChatRequest::new(user)
}

fn trim_blank_lines(s: &str) -> String {
    let lines: Vec<&str> = s.lines().collect();
    let first = lines.iter().position(|l| !l.trim().is_empty());
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    match (first, last) {
        (Some(a), Some(b)) => lines[a..=b].join("\n"),
        _ => String::new(),
    }
}

fn between(text: &str, start: &'static str, end: &'static str) -> Result<String, AgentError> {
    for m in [start, end] {
        match text.matches(m).count() {
            0 => return Err(AgentError::MissingMarker(m)),
            1 => {}
            _ => return Err(AgentError::DuplicateMarker(m)),
        }
    }
    let s = text.find(start).expect("counted") + start.len();
    let e = text.find(end).expect("counted");
    if e < s {
        return Err(AgentError::MissingMarker(end));
    }
    Ok(trim_blank_lines(&text[s..e]))
}

/// Locates both marker pairs and returns their trimmed payloads.
pub fn parse_formalization(text: &str) -> Result<FormalizationResult, AgentError> {
    let formulation_text = between(text, FORMULATION_START, FORMULATION_END)?;
    let code_text = between(text, CODE_START, CODE_END)?;
    if formulation_text.is_empty() {
        return Err(AgentError::MissingMarker(FORMULATION_END));
    }
    if code_text.is_empty() {
        return Err(AgentError::MissingMarker(CODE_END));
    }
    if !(code_text.contains("OBJECTIVE_VALUE") || code_text.contains("MODEL_STATUS")) {
        return Err(AgentError::MissingSentinel);
    }
    Ok(FormalizationResult { formulation_text, code_text })
}

pub fn run_formalizer(
    session: &mut Session,
    problem_text: &str,
    extraction: &Extraction,
    spec: &MapperSpec,
    amend: &Amendments,
) -> Result<FormalizationResult, AgentError> {
    session.ask("formalize", formalizer_request(problem_text, extraction, spec, amend), parse_formalization)
}

// ---------------------------------------------------------------------------
// Checker

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckerPhase {
    ExtractorToMapper,
    MapperToFormalizer,
    Formalization,
}

impl CheckerPhase {
    pub const ALL: [CheckerPhase; 3] =
        [CheckerPhase::ExtractorToMapper, CheckerPhase::MapperToFormalizer, CheckerPhase::Formalization];

    pub fn prompt(self) -> PromptTemplate {
        match self {
            CheckerPhase::ExtractorToMapper => prompts::CHECKER_EXTRACTION,
            CheckerPhase::MapperToFormalizer => prompts::CHECKER_MAPPING,
            CheckerPhase::Formalization => prompts::CHECKER_FORMALIZATION,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CheckerPhase::ExtractorToMapper => "check_extraction",
            CheckerPhase::MapperToFormalizer => "check_mapping",
            CheckerPhase::Formalization => "check_formalization",
        }
    }
}

/// Artifacts shown to a checker, appended after its prompt as `## heading` sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckerContext {
    pub sections: Vec<(String, String)>,
}

impl CheckerContext {
    fn with(mut self, heading: &str, body: String) -> Self {
        self.sections.push((heading.to_string(), body));
        self
    }

    pub fn extraction(problem_text: &str, extraction: &Extraction) -> Self {
        CheckerContext::default()
            .with("Original problem description", problem_text.to_string())
            .with("Extraction", extraction.to_pretty())
    }

    pub fn mapping(problem_text: &str, extraction: &Extraction, spec: &MapperSpec) -> Self {
        Self::extraction(problem_text, extraction).with("Mapper", spec.to_pretty())
    }

    pub fn formalization(
        problem_text: &str,
        extraction: &Extraction,
        spec: &MapperSpec,
        result: &FormalizationResult,
    ) -> Self {
        Self::mapping(problem_text, extraction, spec)
            .with("Mathematical formulation", result.formulation_text.clone())
            .with("Generated code", result.code_text.clone())
    }

    pub fn render(&self) -> String {
        self.sections.iter().map(|(h, b)| format!("## {h}\n{b}")).collect::<Vec<_>>().join("\n\n")
    }
}

pub fn checker_request(phase: CheckerPhase, context: &CheckerContext) -> ChatRequest {
    let mut user = phase.prompt().render(&[]);
    if !context.sections.is_empty() {
        user.push_str("\n\n");
        user.push_str(&context.render());
    }
    ChatRequest::new(user)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckerVerdict {
    pub passed: bool,
    pub detail: String,
}

/// The first line starting with a verdict decides.
pub fn parse_verdict(text: &str) -> Result<CheckerVerdict, AgentError> {
    for line in text.lines().map(str::trim) {
        if line.starts_with("VALIDATION PASSED") {
            return Ok(CheckerVerdict { passed: true, detail: String::new() });
        }
        if let Some(rest) = line.strip_prefix("VALIDATION FAILED:") {
            let detail = rest.trim();
            if detail.is_empty() {
                break;
            }
            return Ok(CheckerVerdict { passed: false, detail: detail.to_string() });
        }
    }
    Err(AgentError::UnparseableVerdict { raw: text.to_string() })
}

pub fn run_checker(session: &mut Session, phase: CheckerPhase, context: &CheckerContext) -> Result<CheckerVerdict, AgentError> {
    session.ask(phase.label(), checker_request(phase, context), parse_verdict)
}

// ---------------------------------------------------------------------------
// Reflection (backward prompts)

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Producer {
    Extractor,
    Mapper,
    Formalizer,
}

impl Producer {
    /// Order in which backward prompts are sent: nearest to the failure first.
    pub const BACKWARD_ORDER: [Producer; 3] = [Producer::Formalizer, Producer::Mapper, Producer::Extractor];

    pub fn label(self) -> &'static str {
        match self {
            Producer::Extractor => "extractor",
            Producer::Mapper => "mapper",
            Producer::Formalizer => "formalizer",
        }
    }
}

/// Execution outcome reported to the backward prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFeedback {
    pub status: String,
    pub stderr_tail: String,
    pub stdout_tail: String,
    pub iis_constraints: Vec<String>,
}

impl ExecutionFeedback {
    pub fn render(&self) -> String {
        let mut out = format!("Execution status: {}", self.status);
        if !self.iis_constraints.is_empty() {
            out.push_str("\nIIS constraints:");
            for c in &self.iis_constraints {
                let _ = write!(out, "\n- {c}");
            }
        }
        if !self.stderr_tail.is_empty() {
            let _ = write!(out, "\nstderr (tail):\n{}", self.stderr_tail);
        }
        if !self.stdout_tail.is_empty() {
            let _ = write!(out, "\nstdout (tail):\n{}", self.stdout_tail);
        }
        out
    }
}

/// Upstream artifacts available to the backward prompts.
#[derive(Debug, Clone, Copy)]
pub struct BackwardInputs<'a> {
    pub problem_text: &'a str,
    pub extraction: &'a Extraction,
    pub mapper: &'a MapperOutput,
    pub formalization: &'a FormalizationResult,
    pub feedback: &'a ExecutionFeedback,
}

pub fn backward_request(producer: Producer, inputs: &BackwardInputs) -> ChatRequest {
    let ext = inputs.extraction.to_pretty();
    let map = inputs.mapper.spec.to_pretty();
    let fb = inputs.feedback.render();
    let p = inputs.problem_text;
    let user = match producer {
        Producer::Extractor => prompts::BACKWARD_EXTRACTOR.render(&[
            ("problem_description", p),
            ("previous_extraction", &ext),
            ("feedback", &fb),
        ]),
        Producer::Mapper => prompts::BACKWARD_MAPPER.render(&[
            ("problem_description", p),
            ("extraction", &ext),
            ("previous_mapper", &map),
            ("feedback", &fb),
            ("knowledge", &inputs.mapper.knowledge),
        ]),
        Producer::Formalizer => prompts::BACKWARD_FORMALIZER.render(&[
            ("problem_description", p),
            ("extraction", &ext),
            ("mapper", &map),
            ("previous_code", &inputs.formalization.code_text),
            ("feedback", &fb),
        ]),
    };
    ChatRequest::new(user)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionAttribution {
    pub is_caused_by_you: bool,
    pub error_attribution: String,
    pub hints: String,
}

pub fn parse_attribution(text: &str) -> Result<ReflectionAttribution, AgentError> {
    let s = extract_structured(text)?;
    let field = |k: &str| s.value.get(k).ok_or_else(|| AgentError::MalformedAttribution(format!("missing field {k}")));
    let caused = match field("is_caused_by_you")? {
        Value::Bool(b) => *b,
        other => return Err(AgentError::MalformedAttribution(format!("is_caused_by_you is not a boolean: {other}"))),
    };
    let text_field = |k: &str| -> Result<String, AgentError> {
        field(k)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AgentError::MalformedAttribution(format!("{k} is not a string")))
    };
    let attribution = ReflectionAttribution {
        is_caused_by_you: caused,
        error_attribution: text_field("error_attribution")?,
        hints: text_field("hints")?,
    };
    if !attribution.is_caused_by_you && !attribution.hints.is_empty() {
        return Err(AgentError::MalformedAttribution("hints must be empty when is_caused_by_you is false".into()));
    }
    Ok(attribution)
}

pub fn run_backward(session: &mut Session, producer: Producer, inputs: &BackwardInputs) -> Result<ReflectionAttribution, AgentError> {
    let label = format!("backward_{}", producer.label());
    session.ask(&label, backward_request(producer, inputs), parse_attribution)
}

/// Standard single-prompt baseline request.
pub fn baseline_request(problem_text: &str) -> ChatRequest {
    ChatRequest::new(prompts::STANDARD_BASELINE.render(&[("problem_statement", problem_text)]))
}
