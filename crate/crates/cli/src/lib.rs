//! Command-line harness over `guitest-core`: run agents against a bench
//! bundle, evaluate the recorded trajectories, synthesize bench tasks and
//! render reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use guitest_core::agents::remote::{
    RemoteAdapter, RemoteExecutor, RemoteMonitor, RemotePlanner, RemoteReflector, Role, TcpTransport, DEFAULT_TIMEOUT,
};
use guitest_core::agents::{BackendSet, ScriptedProfile};
use guitest_core::bundle::Bench;
use guitest_core::defect::{inject, DefectSpec};
use guitest_core::eval::{
    aggregate, evaluate_run, report_from_document, JudgeBackend, PassK, RemoteJudge, RuleJudge, DEFAULT_WINDOW,
};
use guitest_core::orchestrator::{run_task, RunOptions, DEFAULT_GLOBAL_BUDGET, DEFAULT_MAX_STEPS};
use guitest_core::persist::{
    read_document, write_document, APP_MODEL_SCHEMA, DEFECT_SCHEMA, REPRO_SCHEMA, RUN_MANIFEST_SCHEMA,
    SYNTH_LOG_SCHEMA, TRAJECTORY_SCHEMA,
};
use guitest_core::screen::{AppModel, NoiseConfig};
use guitest_core::synth::{
    synthesize_defect_oriented, synthesize_exploration_candidates, validate_candidate, ReproductionTrajectory,
    SynthLogEntry, TaskSpec, TemplateGenerator,
};
use guitest_core::trajectory::{Mode, RunRecord, RunStatus};
use guitest_core::{derive_seed, EvalReport};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const SYNTH_LOG_FILE: &str = "synth_log.json";
pub const ENDPOINT_ENV: &str = "GUITEST_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "guitest", version, about = "Exploratory GUI testing harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an agent over every task of a bench bundle.
    Run(RunArgs),
    /// Score recorded trajectories against their bench.
    Eval(EvalArgs),
    /// Build a bench bundle from an app model, defects and reproductions.
    Synth(SynthArgs),
    /// Check a bench bundle's hashes and consistency.
    Validate(ValidateArgs),
    /// Print the table of a saved report.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Oracle,
    Blind,
    Flaky,
    /// Single-agent baseline: the oracle navigator with its own defect heuristic.
    Baseline,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Orchestrated,
    Baseline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Orchestrated => Mode::Orchestrated,
            ModeArg::Baseline => Mode::Baseline,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub agent: AgentKind,
    #[arg(long, value_enum, default_value = "orchestrated")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub runs: u32,
    /// Retries per subtask before replanning.
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: usize,
    /// Environment actions per run.
    #[arg(long, default_value_t = DEFAULT_GLOBAL_BUDGET)]
    pub budget: usize,
    /// Maximum loading delay in observations; off when absent.
    #[arg(long)]
    pub noise_delay: Option<u32>,
    /// Slip probability of the flaky agent.
    #[arg(long, default_value_t = 0.3)]
    pub jitter: f64,
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of processors.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Output directory of a `run` invocation.
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long, default_value = "pass1")]
    pub pass_k: String,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: u64,
    /// Remote judge for multi-action defects; the rule judge otherwise.
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    /// Where to write the report; the trajectories directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// An `app_model_v1` file.
    #[arg(long)]
    pub app: PathBuf,
    /// A `defect_v1` file or a directory of them.
    #[arg(long)]
    pub defects: PathBuf,
    /// A `repro_v1` file or a directory of them.
    #[arg(long)]
    pub repro: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_pre: usize,
    #[arg(long, default_value_t = 3)]
    pub n_post: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub bench: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// A `report_v1` file.
    #[arg(long)]
    pub report: PathBuf,
}

/// Everything that determines the bytes of a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub bench_path: PathBuf,
    pub agent: AgentKind,
    pub mode: Mode,
    pub seed: u64,
    pub runs: u32,
    pub max_steps: usize,
    pub global_budget: usize,
    pub noise: Option<NoiseConfig>,
    pub jitter_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            bench_path: self.bench.clone(),
            agent: self.agent,
            mode: if self.agent == AgentKind::Baseline { Mode::Baseline } else { self.mode.into() },
            seed: self.seed,
            runs: self.runs,
            max_steps: self.max_steps,
            global_budget: self.budget,
            noise: self.noise_delay.map(|max_delay| NoiseConfig { max_delay }),
            jitter_probability: self.jitter,
            endpoint: self.endpoint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEntry {
    pub task_id: String,
    pub run_index: u32,
    pub seed: u64,
    /// Relative to the run output directory.
    pub path: String,
    pub content_hash: String,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub bench_hash: String,
    pub config: RunConfig,
    pub schemas: Vec<String>,
    pub runs: Vec<RunEntry>,
}

fn input(msg: impl Into<String>) -> anyhow::Error {
    guitest_core::Error::Input(msg.into()).into()
}

/// Exit status contract: 0 success, 1 execution failure, 2 input or hash problems.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use guitest_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Input(_)
                | E::Validation(_)
                | E::Schema { .. }
                | E::HashMismatch { .. }
                | E::Lookup { .. }
                | E::Json(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

fn connect(role: Role, endpoint: &str) -> anyhow::Result<RemoteAdapter> {
    let t = TcpTransport::connect(endpoint, DEFAULT_TIMEOUT)
        .with_context(|| format!("connecting {} to {endpoint}", role.as_str()))?;
    let mut a = RemoteAdapter::new(role, t);
    a.handshake()?;
    Ok(a)
}

fn backends(cfg: &RunConfig, model: &Arc<AppModel>, run_seed: u64) -> anyhow::Result<BackendSet> {
    let profile = match cfg.agent {
        AgentKind::Oracle | AgentKind::Baseline => ScriptedProfile::oracle(),
        AgentKind::Blind => ScriptedProfile::blind(),
        AgentKind::Flaky => ScriptedProfile::flaky(cfg.jitter_probability, run_seed),
        AgentKind::Remote => {
            let ep = cfg
                .endpoint
                .as_deref()
                .ok_or_else(|| input(format!("remote agent needs --endpoint or {ENDPOINT_ENV}")))?;
            return Ok(match cfg.mode {
                Mode::Baseline => BackendSet::baseline(RemoteExecutor(connect(Role::Executor, ep)?)),
                Mode::Orchestrated => BackendSet::orchestrated(
                    RemotePlanner(connect(Role::Planner, ep)?),
                    RemoteExecutor(connect(Role::Executor, ep)?),
                    RemoteMonitor(connect(Role::Monitor, ep)?),
                    RemoteReflector(connect(Role::Reflector, ep)?),
                ),
            });
        }
    };
    Ok(BackendSet::scripted(model.clone(), profile, cfg.mode))
}

pub fn trajectory_file(task_id: &str, run_index: u32) -> String {
    format!("{TRAJECTORY_DIR}/{task_id}__run{run_index}.jsonl")
}

/// Executes runs × tasks and writes one trajectory per run plus a manifest.
pub fn cmd_run(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> anyhow::Result<RunManifest> {
    if cfg.runs == 0 {
        return Err(input("--runs must be at least 1"));
    }
    let (bench, manifest) =
        Bench::load(&cfg.bench_path).with_context(|| format!("loading bench {}", cfg.bench_path.display()))?;
    let mut tasks: Vec<&TaskSpec> = bench.tasks.iter().collect();
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    let jobs: Vec<(&TaskSpec, u32)> = tasks.iter().flat_map(|t| (0..cfg.runs).map(move |k| (*t, k))).collect();
    fs::create_dir_all(out.join(TRAJECTORY_DIR))?;
    let entries: Vec<anyhow::Result<RunEntry>> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(task, k)| {
                let model = bench.instrumented(task)?;
                let seed = derive_seed(cfg.seed, &task.id, k);
                let mut b = backends(cfg, &Arc::new(model.model().clone()), seed)?;
                let opts = RunOptions {
                    max_steps: cfg.max_steps,
                    global_budget: cfg.global_budget,
                    noise: cfg.noise,
                    run_index: k,
                    bench_hash: manifest.bench_hash.clone(),
                };
                let run = run_task(task, &model, &mut b, seed, &opts)?;
                let path = trajectory_file(&task.id, k);
                run.write(out.join(&path))?;
                Ok(RunEntry {
                    task_id: task.id.clone(),
                    run_index: k,
                    seed,
                    path,
                    content_hash: run.content_hash()?,
                    status: run.status,
                })
            })
            .collect()
    });
    let runs = entries.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let m = RunManifest {
        bench_hash: manifest.bench_hash,
        config: cfg.clone(),
        schemas: vec![TRAJECTORY_SCHEMA.to_owned(), RUN_MANIFEST_SCHEMA.to_owned()],
        runs,
    };
    write_document(out.join(RUN_MANIFEST_FILE), RUN_MANIFEST_SCHEMA, &m)?;
    Ok(m)
}

pub fn read_run_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let p = dir.join(RUN_MANIFEST_FILE);
    read_document(&p, RUN_MANIFEST_SCHEMA)
        .map_err(|e| match e {
            guitest_core::Error::Io(io) => guitest_core::Error::Input(format!("{}: {io}", p.display())),
            other => other,
        })
        .map_err(Into::into)
}

/// Scores the runs recorded in `args.trajectories` and writes `report_v1` plus a table.
pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<EvalReport> {
    let pass_k = PassK::parse(&args.pass_k)?;
    let run_manifest = read_run_manifest(&args.trajectories)?;
    let (bench, manifest) = Bench::load(&args.bench)?;
    if run_manifest.bench_hash != manifest.bench_hash {
        return Err(guitest_core::Error::HashMismatch {
            recorded: run_manifest.bench_hash,
            actual: manifest.bench_hash,
        }
        .into());
    }
    let mut judge: Box<dyn JudgeBackend> = match &args.endpoint {
        Some(ep) => Box::new(RemoteJudge(connect(Role::Judge, ep)?)),
        None => Box::new(RuleJudge),
    };
    let mut results = Vec::with_capacity(run_manifest.runs.len());
    for entry in &run_manifest.runs {
        let run =
            RunRecord::read(args.trajectories.join(&entry.path)).with_context(|| format!("reading {}", entry.path))?;
        if run.bench_hash != manifest.bench_hash {
            return Err(
                guitest_core::Error::HashMismatch { recorded: run.bench_hash, actual: manifest.bench_hash }.into()
            );
        }
        let task =
            bench.task(&run.task_id).ok_or_else(|| input(format!("task `{}` is not in the bench", run.task_id)))?;
        let defect = bench
            .defect(&task.defect_id)
            .ok_or_else(|| input(format!("defect `{}` is not in the bench", task.defect_id)))?;
        results.push(evaluate_run(&run, defect, judge.as_mut(), args.window));
    }
    let mut report = aggregate::<f64>(&results, pass_k)?;
    report.bench_hash = manifest.bench_hash;
    report.seeds = run_manifest.runs.iter().map(|r| r.seed).collect();
    let out = args.out.clone().unwrap_or_else(|| args.trajectories.clone());
    fs::create_dir_all(&out)?;
    let mut doc = serde_json::to_string_pretty(&report.to_document()?)?;
    doc.push('\n');
    fs::write(out.join(REPORT_FILE), doc)?;
    fs::write(out.join(TABLE_FILE), report.render_table())?;
    Ok(report)
}

/// Documents of one schema from a file or from every `.json` file of a directory, by file name.
fn read_many<T: serde::de::DeserializeOwned>(path: &Path, schema: &'static str) -> anyhow::Result<Vec<T>> {
    let mut files = if path.is_dir() {
        fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect()
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(input(format!("{} does not exist", path.display())));
    };
    files.sort();
    files.iter().map(|p| read_document(p, schema).with_context(|| format!("reading {}", p.display()))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLog {
    pub app_id: String,
    pub n_pre: usize,
    pub n_post: usize,
    pub seed: u64,
    pub bench_hash: String,
    pub defects: Vec<SynthLogEntry>,
}

/// Builds a bundle of defect-oriented and retained exploration tasks in `args.out`.
pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<SynthLog> {
    if args.n_pre == 0 || args.n_post == 0 {
        return Err(input("--n-pre and --n-post must both be at least 1"));
    }
    let app: AppModel =
        read_document(&args.app, APP_MODEL_SCHEMA).with_context(|| format!("reading {}", args.app.display()))?;
    let defects: Vec<DefectSpec> = read_many(&args.defects, DEFECT_SCHEMA)?;
    let repros: Vec<ReproductionTrajectory> = read_many(&args.repro, REPRO_SCHEMA)?;
    let pool = pool(args.threads)?;
    let mut tasks = Vec::new();
    let mut log = Vec::new();
    let mut used_repros = Vec::new();
    for d in &defects {
        let repro = repros
            .iter()
            .find(|r| r.defect_id == d.id)
            .ok_or_else(|| input(format!("no reproduction for defect `{}`", d.id)))?;
        let model = inject(app.clone(), vec![d.clone()])?;
        tasks.push(synthesize_defect_oriented(repro, &model)?);
        let candidates =
            synthesize_exploration_candidates(repro, &model, &mut TemplateGenerator, args.n_pre, args.n_post)?;
        let shared = Arc::new(app.clone());
        let opts = RunOptions::default();
        let validated = pool.install(|| {
            candidates
                .par_iter()
                .map(|c| {
                    let mut v = BackendSet::scripted(shared.clone(), ScriptedProfile::oracle(), Mode::Baseline);
                    validate_candidate(c, &model, &mut v, derive_seed(args.seed, &c.id, 0), &opts)
                })
                .collect::<guitest_core::Result<Vec<_>>>()
        })?;
        let retained: Vec<TaskSpec> = validated.into_iter().filter(|v| v.retained).map(|v| v.task).collect();
        log.push(SynthLogEntry {
            defect_id: d.id.clone(),
            candidates: candidates.len(),
            retained: retained.len(),
            retained_ids: retained.iter().map(|t| t.id.clone()).collect(),
            warning: retained.is_empty().then(|| "no exploration candidate reached the trigger screen".to_owned()),
        });
        tasks.extend(retained);
        used_repros.push(repro.clone());
    }
    let bench = Bench { apps: vec![app.clone()], defects, repros: used_repros, tasks };
    let manifest = bench.write(&args.out)?;
    let log = SynthLog {
        app_id: app.id.to_string(),
        n_pre: args.n_pre,
        n_post: args.n_post,
        seed: args.seed,
        bench_hash: manifest.bench_hash,
        defects: log,
    };
    write_document(args.out.join(SYNTH_LOG_FILE), SYNTH_LOG_SCHEMA, &log)?;
    Ok(log)
}

pub fn cmd_validate(args: &ValidateArgs) -> anyhow::Result<String> {
    let (bench, manifest) = Bench::load(&args.bench)?;
    Ok(format!(
        "bench {}: {} apps, {} defects, {} tasks, hash {}",
        args.bench.display(),
        bench.apps.len(),
        bench.defects.len(),
        bench.tasks.len(),
        manifest.bench_hash
    ))
}

pub fn cmd_render(args: &RenderArgs) -> anyhow::Result<String> {
    let text = fs::read_to_string(&args.report).map_err(|e| input(format!("{}: {e}", args.report.display())))?;
    let report = report_from_document(serde_json::from_str(&text)?)?;
    Ok(report.render_table())
}

/// Runs one parsed command, printing its human-readable output.
pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let m = cmd_run(&args.config(), &args.out, args.threads)?;
            let aborted: Vec<&RunEntry> =
                m.runs.iter().filter(|r| matches!(r.status, RunStatus::Aborted { .. })).collect();
            println!("{} runs written to {}", m.runs.len(), args.out.display());
            if let Some(first) = aborted.first() {
                bail!("{} of {} runs aborted, first: {} {:?}", aborted.len(), m.runs.len(), first.path, first.status);
            }
        }
        Command::Eval(args) => print!("{}", cmd_eval(&args)?.render_table()),
        Command::Synth(args) => {
            let log = cmd_synth(&args)?;
            for d in &log.defects {
                if let Some(w) = &d.warning {
                    eprintln!("warning: {}: {w}", d.defect_id);
                }
                println!("{}", d.summary());
            }
        }
        Command::Validate(args) => println!("{}", cmd_validate(&args)?),
        Command::Render(args) => print!("{}", cmd_render(&args)?),
    }
    Ok(())
}

/// Parses `argv` and executes, mapping failures onto the exit status contract.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
