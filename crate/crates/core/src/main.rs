use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use r2c::config::{Config, ConfigError, ConfigLayer, ENV_CONFIG};
use r2c::eval::{self, EvalOptions, ReportFormat};
use r2c::kb::{render_domain_knowledge, KnowledgeBase};
use r2c::llm::{Backend, HttpBackend, RetryPolicy, ScriptedBackend};
use r2c::pipeline::{run_dir_name, Pipeline, PipelineOptions, TerminalState};
use r2c::runner::{RunnerStatus, ShimExecutor};

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_ABORTED: u8 = 2;
const EXIT_EXEC: u8 = 3;
const EXIT_CONFIG: u8 = 4;

const DEFAULT_RUNNER: &str = "r2c-runner";

#[derive(Parser)]
#[command(name = "r2c", version, about = "Turn natural-language operations problems into solver models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model and solve one problem (file, or stdin when omitted).
    Solve {
        problem: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark and write report.json and report.md.
    Eval {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        /// pass@k values; repeat or comma-separate.
        #[arg(long = "k", value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Do not count solver-infeasible runs as executed.
        #[arg(long)]
        infeasible_not_executed: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Knowledge base tools.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Load every template and report schema violations.
    Validate { root: PathBuf },
    /// Retrieve the best-matching templates for a query.
    Search {
        root: PathBuf,
        #[arg(long)]
        domain: Vec<String>,
        #[arg(long)]
        query: String,
        #[arg(short = 'k', default_value_t = r2c::kb::DEFAULT_TOP_K)]
        k: usize,
        /// Print the rendered domain-knowledge block too.
        #[arg(long)]
        render: bool,
    },
}

#[derive(Args)]
struct Common {
    /// `http` or `scripted:PATH`.
    #[arg(long, default_value = "http")]
    backend: String,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Per-execution timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    reflection: bool,
    #[arg(long)]
    reflection_cap: Option<u32>,
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runner command, e.g. `python3 runner.py`.
    #[arg(long)]
    runner: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_base: Option<String>,
    /// TOML config file (defaults to $R2C_CONFIG).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            api_base: self.api_base.clone(),
            model: self.model.clone(),
            kb_root: self.kb.clone(),
            out: self.out.clone(),
            runner: self.runner.clone(),
            timeout_secs: self.timeout,
            reflection_cap: self.reflection_cap,
            ..ConfigLayer::default()
        }
    }

    fn config(&self, extra: ConfigLayer) -> Result<Config, ConfigError> {
        let env = ConfigLayer::from_env(|k| std::env::var(k).ok());
        let file = match self.config.clone().or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from)) {
            Some(p) => Some(ConfigLayer::load(&p)?),
            None => None,
        };
        let cfg = Config::resolve(extra.over(self.layer()), env, file)?;
        cfg.check_kb_root()?;
        Ok(cfg)
    }

    fn options(&self, cfg: &Config) -> PipelineOptions {
        PipelineOptions {
            reflection: self.reflection,
            reflection_cap: cfg.reflection_cap,
            timeout: cfg.timeout,
            trace: self.trace,
            ..PipelineOptions::default()
        }
    }
}

enum Failure {
    Config(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn backend(spec: &str, cfg: &Config) -> Result<Box<dyn Backend>, Failure> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let b = ScriptedBackend::load(Path::new(path)).map_err(|e| Failure::Config(e.to_string()))?;
        return Ok(Box::new(b));
    }
    if spec != "http" {
        return Err(Failure::Config(format!("unknown backend {spec:?}; expected http or scripted:PATH")));
    }
    let key = cfg.api_key.as_ref().ok_or_else(|| Failure::Config("no API key configured (R2C_API_KEY)".into()))?;
    let b = HttpBackend::new(&cfg.api_base, key.expose(), &cfg.model, RetryPolicy::default(), cfg.timeout.max(std::time::Duration::from_secs(120)))
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok(Box::new(b))
}

fn executor(cfg: &Config) -> ShimExecutor {
    let line = cfg.runner.clone().unwrap_or_else(|| DEFAULT_RUNNER.to_string());
    let mut parts = line.split_whitespace();
    let program = parts.next().unwrap_or(DEFAULT_RUNNER);
    ShimExecutor::new(program).with_args(parts)
}

fn load_kb(cfg: &Config) -> Result<KnowledgeBase, Failure> {
    KnowledgeBase::load(&cfg.kb_root).map_err(|e| Failure::Config(e.to_string()))
}

fn fresh_dir(root: &Path, id: &str) -> PathBuf {
    (1..).map(|n| root.join(run_dir_name(id, &n.to_string()))).find(|p| !p.exists()).expect("unbounded")
}

fn solve(problem: Option<PathBuf>, common: Common) -> Result<u8, Failure> {
    let cfg = common.config(ConfigLayer::default())?;
    let kb = load_kb(&cfg)?;
    let backend = backend(&common.backend, &cfg)?;
    let (id, text) = match &problem {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Other(format!("{}: {e}", p.display())))?;
            (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "problem".into()), text)
        }
        None => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text).map_err(|e| Failure::Other(e.to_string()))?;
            ("stdin".to_string(), text)
        }
    };
    let exec = executor(&cfg);
    let opts = common.options(&cfg);
    let pipe = Pipeline { backend: backend.as_ref(), kb: &kb, executor: &exec, options: &opts };
    let dir = fresh_dir(&cfg.out, &id);
    let out = pipe.run(&id, &text, &dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;

    println!("run: {}", dir.display());
    for want in ["formulation.md", "code.py"] {
        if let Some(rec) = out.run.stage_artifacts.iter().rev().find(|r| r.artifact.ends_with(want)) {
            println!("{}: {}", want.split('.').next().unwrap_or(want), dir.join(&rec.artifact).display());
        }
    }
    for c in &out.paradigms {
        println!("paradigm: {} -> {} ({:.2})", c.cluster, c.paradigm, c.fit_score);
    }
    match &out.execution {
        Some(r) => match r.objective {
            Some(v) => println!("status: {} objective: {v}", r.status.as_str()),
            None => println!("status: {}", r.status.as_str()),
        },
        None => println!("status: not executed"),
    }
    println!("agent calls: {}, reflection attempts: {}", out.run.agent_calls, out.run.attempts);
    Ok(match &out.run.terminal_state {
        TerminalState::StageAborted { stage, reason } => {
            eprintln!("aborted at {stage:?}: {reason}");
            EXIT_ABORTED
        }
        TerminalState::Succeeded if out.execution.as_ref().is_some_and(|r| r.status == RunnerStatus::Optimal) => EXIT_OK,
        TerminalState::Succeeded => EXIT_EXEC,
        TerminalState::ReflectionExhausted => {
            eprintln!("reflection cap reached without an optimal solution");
            EXIT_EXEC
        }
    })
}

fn evaluate(bench: PathBuf, extra: ConfigLayer, infeasible_not_executed: bool, common: Common) -> Result<u8, Failure> {
    let cfg = common.config(extra)?;
    let kb = load_kb(&cfg)?;
    let problems = eval::load_benchmark(&bench).map_err(|e| Failure::Config(e.to_string()))?;
    let backend = backend(&common.backend, &cfg)?;
    let exec = executor(&cfg);
    let opts = common.options(&cfg);
    let pipe = Pipeline { backend: backend.as_ref(), kb: &kb, executor: &exec, options: &opts };
    let eval_opts = EvalOptions {
        runs: cfg.runs,
        ks: cfg.ks.clone(),
        workers: cfg.workers,
        policy: eval::MetricPolicy { infeasible_executed: !infeasible_not_executed },
        ..EvalOptions::default()
    };
    let report = eval::run_benchmark(&pipe, &problems, &cfg.out.join("runs"), &eval_opts).map_err(|e| Failure::Other(e.to_string()))?;
    let written = eval::emit_report(&report, &cfg.out, &[ReportFormat::Json, ReportFormat::Markdown])
        .map_err(|e| Failure::Other(e.to_string()))?;
    for p in written {
        println!("wrote {}", p.display());
    }
    println!("AR / ER: {}", eval::summary_line(&report));
    for (k, v) in &report.pass_at_k {
        println!("pass@{k}: {v:.1}");
    }
    Ok(EXIT_OK)
}

fn kb_command(cmd: KbCommand) -> Result<u8, Failure> {
    match cmd {
        KbCommand::Validate { root } => {
            if !root.is_dir() {
                return Err(Failure::Config(ConfigError::KbRootNotFound(root.display().to_string()).to_string()));
            }
            match KnowledgeBase::load(&root) {
                Ok(kb) => {
                    let cov = kb.oracle_coverage();
                    println!("ok: {} templates", kb.len());
                    println!("oracle-checkable: {}, opaque: {}", cov.checkable.len(), cov.excluded.len());
                    Ok(EXIT_OK)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(EXIT_FAILURE)
                }
            }
        }
        KbCommand::Search { root, domain, query, k, render } => {
            let kb = KnowledgeBase::load(&root).map_err(|e| Failure::Config(e.to_string()))?;
            let hits = kb.retrieve(&domain, &query, k).map_err(|e| Failure::Other(e.to_string()))?;
            for h in &hits {
                println!("{}\t{:.4}\t{}", h.template.template_id, h.score, h.matched_terms.join(","));
            }
            if render {
                println!("\n{}", render_domain_knowledge(&hits));
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { problem, common } => solve(problem, common),
        Command::Eval { bench, runs, ks, workers, infeasible_not_executed, common } => {
            let extra = ConfigLayer { runs, ks: (!ks.is_empty()).then_some(ks), workers, ..ConfigLayer::default() };
            evaluate(bench, extra, infeasible_not_executed, common)
        }
        Command::Kb { command } => kb_command(command),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
