//! The `r2bc` command line.
//!
//! Every command resolves a [`RunConfig`] (defaults, `--config` file,
//! `R2BC_*` environment, flags), writes the resolved copy as `config.toml`
//! into its output directory and then runs in `f32`. `--dry-run` prints the
//! resolved config and stops.

pub mod config;

use clap::{Args, Parser, Subcommand};
use config::{nested, parse_override, ConfigError, RunConfig};
use r2bc::algorithms::{run, train_offline, Algorithm, PolicySet, RunOutput};
use r2bc::demo::Dataset;
use r2bc::eval::{loss_gap, rollouts, Labeler, References, SweepSpec, Sweeper};
use r2bc::experts::ExpertPolicy;
use r2bc::sim::TaskId;
use r2bc_teleop::{serve, Mode, Session};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;
use toml::{Table, Value};

/// Scalar type of every command.
pub type Real = f32;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Command-line parse failure; the message carries clap's usage text.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "r2bc", version, about = "Round-robin behavior cloning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect demonstrations and train with one algorithm.
    Collect(CollectArgs),
    /// Fit policies offline from a stored dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the evaluation seeds.
    Eval(EvalArgs),
    /// Run a grid of tasks, algorithms, budgets and seeds.
    Sweep(SweepArgs),
    /// Start the teleoperation websocket service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Extra override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// navigation, balance, buzzwire or transport.
    #[arg(long)]
    pub task: Option<TaskId>,
    /// r2bc, jbc, dec_jbc, dagger, dart, offline_r2bc_noop,
    /// offline_r2bc_random or centralized_r2bc.
    #[arg(long)]
    pub algo: Option<Algorithm>,
    /// Demonstration episodes.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run seed; drives resets, noise, weights and shuffling.
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run seed; drives resets, noise, weights and shuffling.
    #[arg(long)]
    pub seed: u64,
    /// Dataset written by `collect`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint directory (`agent_<i>.policy` or `joint.policy`).
    #[arg(long)]
    pub policies: PathBuf,
    /// Training dataset; adds the train/test loss gap.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Evaluation seeds `0..n`.
    #[arg(long)]
    pub eval_seeds: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// First training seed.
    #[arg(long)]
    pub seed: u64,
    /// Number of training seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Comma-separated tasks.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<TaskId>>,
    /// Comma-separated algorithms.
    #[arg(long, value_delimiter = ',')]
    pub algos: Option<Vec<Algorithm>>,
    /// Comma-separated demonstration budgets.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Listen address; port 0 picks a free port.
    #[arg(long)]
    pub addr: Option<String>,
    /// r2bc_demo, jbc_demo or eval_with_interventions.
    #[arg(long)]
    pub mode: Option<String>,
    /// Step only when the client acknowledges each state.
    #[arg(long)]
    pub sync: bool,
    /// Episodes per session.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Exit after this many client sessions.
    #[arg(long)]
    pub max_sessions: Option<usize>,
    /// Checkpoint driving the agents in evaluation mode.
    #[arg(long)]
    pub policies: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

struct Flags(Vec<Table>);

impl Flags {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn set(&mut self, path: &str, value: impl Into<Value>) {
        self.0.push(nested(path, value.into()));
    }

    fn opt<T: Into<Value>>(&mut self, path: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(path, v);
        }
    }

    fn run(&mut self, r: &RunArgs) {
        self.opt("env.task", r.task.map(|t| t.as_str()));
        self.opt("algo.algorithm", r.algo.map(|a| a.as_str()));
        self.opt("algo.demo_budget", r.budget.map(|b| b as i64));
    }

    fn common(&mut self, c: &Common) -> Result<(), ConfigError> {
        self.opt("out_dir", c.out.as_ref().map(|p| p.display().to_string()));
        self.opt("jobs", c.jobs.map(|j| j as i64));
        for s in &c.set {
            self.0.push(parse_override(s)?);
        }
        Ok(())
    }
}

fn resolve(common: &Common, flags: Flags) -> Result<RunConfig, ConfigError> {
    config::resolve(common.config.as_deref(), config::env_overrides(std::env::vars()), flags.0)
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            None
        }
        _ => Some(CliError::Usage(with_usage(e.to_string(), &args))),
    });
    match cli {
        Ok(cli) => execute(cli.command),
        Err(None) => Ok(()),
        Err(Some(e)) => Err(e),
    }
}

fn with_usage(msg: String, args: &[std::ffi::OsString]) -> String {
    if msg.contains("Usage:") {
        return msg;
    }
    let mut cmd = <Cli as clap::CommandFactory>::command();
    cmd.build();
    let sub = args.get(1).and_then(|a| a.to_str()).and_then(|name| cmd.find_subcommand_mut(name).cloned());
    let usage = match sub {
        Some(mut sub) => sub.render_usage(),
        None => cmd.render_usage(),
    };
    format!("{msg}\n{usage}\n")
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Collect(a) => {
            let mut f = Flags::new();
            f.run(&a.run);
            f.set("seed", a.seed as i64);
            f.common(&a.common)?;
            let cfg = resolve(&a.common, f)?;
            if dry_run(&a.common, &cfg) {
                return Ok(());
            }
            collect(&cfg)
        }
        Command::Train(a) => {
            let mut f = Flags::new();
            f.run(&a.run);
            f.set("seed", a.seed as i64);
            f.common(&a.common)?;
            let cfg = resolve(&a.common, f)?;
            if dry_run(&a.common, &cfg) {
                return Ok(());
            }
            train(&cfg, &a.dataset)
        }
        Command::Eval(a) => {
            let mut f = Flags::new();
            f.run(&a.run);
            f.opt("eval.n_seeds", a.eval_seeds.map(|n| n as i64));
            f.common(&a.common)?;
            let cfg = resolve(&a.common, f)?;
            if dry_run(&a.common, &cfg) {
                return Ok(());
            }
            eval(&cfg, &a.policies, a.dataset.as_deref())
        }
        Command::Sweep(a) => {
            let mut f = Flags::new();
            f.set("seed", a.seed as i64);
            f.opt("eval.sweep_seeds", a.seeds.map(|n| n as i64));
            f.opt("eval.tasks", a.tasks.as_ref().map(|ts| ts.iter().map(|t| t.as_str()).collect::<Vec<_>>()));
            f.opt("eval.algorithms", a.algos.as_ref().map(|xs| xs.iter().map(|x| x.as_str()).collect::<Vec<_>>()));
            f.opt("eval.budgets", a.budgets.as_ref().map(|bs| bs.iter().map(|&b| b as i64).collect::<Vec<_>>()));
            f.common(&a.common)?;
            let cfg = resolve(&a.common, f)?;
            if dry_run(&a.common, &cfg) {
                return Ok(());
            }
            sweep(&cfg)
        }
        Command::Serve(a) => {
            let mut f = Flags::new();
            f.run(&a.run);
            f.opt("seed", a.seed.map(|s| s as i64));
            f.opt("serve.addr", a.addr.clone());
            f.opt("serve.mode", a.mode.clone());
            if a.sync {
                f.set("serve.sync", true);
            }
            f.opt("serve.episodes", a.episodes.map(|n| n as i64));
            f.opt("serve.max_sessions", a.max_sessions.map(|n| n as i64));
            f.opt("serve.policies", a.policies.as_ref().map(|p| p.display().to_string()));
            f.common(&a.common)?;
            let cfg = resolve(&a.common, f)?;
            if dry_run(&a.common, &cfg) {
                return Ok(());
            }
            serve_cmd(&cfg)
        }
    }
}

fn dry_run(common: &Common, cfg: &RunConfig) -> bool {
    if common.dry_run {
        print!("{}", cfg.to_toml());
    }
    common.dry_run
}

fn prepare_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn expert(cfg: &RunConfig) -> ExpertPolicy {
    let mut expert = ExpertPolicy::with_defaults(cfg.env_config());
    expert.noise_sigma = cfg.expert.noise_sigma;
    expert
}

fn labeler(algorithm: Algorithm) -> Labeler {
    if algorithm.is_round_robin() {
        Labeler::Single
    } else {
        Labeler::Joint
    }
}

/// Writes `dataset.jsonl`, `episodes.jsonl`, `fits.jsonl` and `policies/`.
pub fn collect(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = prepare_out(cfg)?;
    let out: RunOutput<Real> = run(&cfg.env_config(), &expert(cfg), &cfg.algo_config(), &[]).map_err(runtime)?;
    out.dataset.save(&dir.join("dataset.jsonl")).map_err(runtime)?;
    write(&dir.join("episodes.jsonl"), &out.log.episodes_jsonl())?;
    write(&dir.join("fits.jsonl"), &out.log.fits_jsonl())?;
    out.policies.save(&dir.join("policies")).map_err(runtime)?;
    tracing::info!(records = out.dataset.total_records(), dir = %dir.display(), "collected");
    Ok(())
}

/// Writes `fits.jsonl` and `policies/`.
pub fn train(cfg: &RunConfig, dataset: &Path) -> Result<(), CliError> {
    let data = Dataset::load(dataset).map_err(runtime)?;
    let dir = prepare_out(cfg)?;
    let (policies, fits) = train_offline::<Real>(&cfg.env_config(), &cfg.algo_config(), &data).map_err(runtime)?;
    write(&dir.join("fits.jsonl"), &r2bc::algorithms::RunLog { episodes: vec![], fits }.fits_jsonl())?;
    policies.save(&dir.join("policies")).map_err(runtime)?;
    tracing::info!(dir = %dir.display(), "trained");
    Ok(())
}

/// Writes `eval.csv` (one row per evaluation seed) and, given a dataset,
/// `lossgap.csv`.
pub fn eval(cfg: &RunConfig, policies: &Path, dataset: Option<&Path>) -> Result<(), CliError> {
    let env = cfg.env_config();
    let set = PolicySet::<Real>::load(policies, env.n_agents).map_err(runtime)?;
    let data = dataset.map(Dataset::load).transpose().map_err(runtime)?;
    let dir = prepare_out(cfg)?;
    let expert = expert(cfg);
    let n = cfg.eval.n_seeds;
    let refs = References::measure(&env, &expert, n).map_err(runtime)?;
    let roll = rollouts(&env, &set, &expert, labeler(cfg.algo.algorithm), n).map_err(runtime)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["task", "seed", "return", "normalized"]).map_err(runtime)?;
    let mut norm = Vec::with_capacity(n);
    for (seed, &r) in roll.returns.per_seed.iter().enumerate() {
        let z = refs.normalize(r).map_err(runtime)?;
        norm.push(z);
        csv.write_record([env.task.as_str().to_string(), seed.to_string(), r.to_string(), z.to_string()]).map_err(runtime)?;
    }
    let bytes = csv.into_inner().map_err(runtime)?;
    std::fs::write(dir.join("eval.csv"), bytes).map_err(runtime)?;
    println!(
        "{} n={} return={:.4} normalized={:.4} ci99={:.4}",
        env.task,
        n,
        roll.returns.mean(),
        r2bc::eval::mean(&norm),
        r2bc::eval::ci99_half_width(&norm)
    );
    if let Some(data) = data {
        let gap = loss_gap(&env, &set, &data, &expert, labeler(cfg.algo.algorithm), n).map_err(runtime)?;
        let text = format!("train_loss,test_loss,gap\n{},{},{}\n", gap.train_loss, gap.test_loss, gap.gap);
        write(&dir.join("lossgap.csv"), &text)?;
        println!("train_loss={:.6} test_loss={:.6} gap={:.6}", gap.train_loss, gap.test_loss, gap.gap);
    }
    Ok(())
}

pub fn sweep_spec(cfg: &RunConfig) -> SweepSpec {
    SweepSpec {
        tasks: cfg.eval.tasks.clone(),
        algorithms: cfg.eval.algorithms.clone(),
        budgets: cfg.eval.budgets.clone(),
        seeds: (cfg.seed..cfg.seed + cfg.eval.sweep_seeds).collect(),
        eval_seeds: cfg.eval.n_seeds,
        accounting: cfg.eval.accounting,
        base: cfg.algo_config(),
    }
}

/// Runs the missing cells of the grid and rewrites the reports.
pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = sweep_spec(cfg);
    spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let dir = prepare_out(cfg)?;
    let sweeper = Sweeper::new(spec, dir, cfg.jobs).map_err(runtime)?;
    let pending = sweeper.pending().len();
    println!("{pending} cells to run");
    let results = sweeper.run::<Real>().map_err(runtime)?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {failed} failed, reports in {}", results.len(), dir.display());
    Ok(())
}

pub fn serve_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let env = cfg.env_config();
    let scfg = cfg.session_config();
    let policies = match (&cfg.serve.policies, scfg.mode) {
        (Some(p), _) => Some(PolicySet::<Real>::load(p, env.n_agents).map_err(runtime)?),
        (None, Mode::EvalWithInterventions) => return Err(ConfigError::Invalid("eval_with_interventions needs serve.policies".into()).into()),
        (None, _) => None,
    };
    let algo = cfg.algo_config();
    // fail on a bad session config before binding
    Session::<Real>::new(scfg.clone(), env.clone(), algo.clone(), policies.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let dir = prepare_out(cfg)?.to_path_buf();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.serve.addr).await.map_err(runtime)?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on ws://{addr}");
        std::io::stdout().flush().ok();
        let make = || Session::<Real>::new(scfg.clone(), env.clone(), algo.clone(), policies.clone());
        let summaries = serve(listener, make, Some(dir), cfg.serve.max_sessions).await.map_err(runtime)?;
        println!("{} sessions served", summaries.len());
        Ok(())
    })
}
