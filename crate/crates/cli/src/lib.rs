//! Command-line driver: bound certification, training, evaluation,
//! representation dumps and probes.

pub mod config;
mod svg;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use goalrepr::hrl::{train, Agent, TrainConfig};
use goalrepr::par::Exec;
use goalrepr::repr::{Encoder, ProbeReport};
use goalrepr::theory::{run_suite, SuiteConfig};
use serde::{Deserialize, Serialize};

use config::{parse_override, resolve, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_GUARD: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "goalrepr", version, about = "Goal representations for hierarchical RL: bound certification and point-maze training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify sub-optimality bounds on a suite of random tabular MDPs.
    VerifyBounds(Common),
    /// Train a two-level agent on the point maze.
    Train(Common),
    /// Evaluate a checkpoint with deterministic episodes.
    Eval(Inspect),
    /// Dump `f(obs)` for sampled states as CSV, optionally with an SVG scatter.
    DumpRepr(Inspect),
    /// Fit an affine probe from the representation to `(x, y)`.
    Probe(Inspect),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file (JSON when the extension is .json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set suite.count=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for verify-bounds; 0 picks one per core.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Inspect {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub workers: usize,
    pub suite: SuiteConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            suite: SuiteConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DumpSource {
    /// States drawn uniformly over free space.
    Uniform,
    /// States visited by deterministic evaluation episodes.
    Rollout,
}

/// Settings shared by `eval`, `dump-repr` and `probe`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InspectConfig {
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub episodes: usize,
    /// Number of states for `probe` and uniform dumps.
    pub states: usize,
    pub source: DumpSource,
    pub svg: bool,
}

impl Default for InspectConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            seed: 0,
            episodes: 20,
            states: 500,
            source: DumpSource::Uniform,
            svg: false,
        }
    }
}

/// How a command ended, before mapping to an exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Violations(usize),
    Refusals(usize),
    Other(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Violations(_) => EXIT_VIOLATION,
            Failure::Refusals(_) => EXIT_GUARD,
            Failure::Other(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Violations(n) => write!(f, "{n} bound violation(s)"),
            Failure::Refusals(n) => write!(f, "{n} instance(s) refused by the enumeration guard"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

impl From<goalrepr::Error> for Failure {
    fn from(e: goalrepr::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

/// Builds the override list: `--set` pairs first, then the dedicated flags.
fn overrides(common: &Common, extra: &[(&str, Option<serde_json::Value>)]) -> Result<Vec<(String, serde_json::Value)>, Failure> {
    let mut out = common.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = common.seed {
        out.push(("seed".into(), seed.into()));
    }
    for (k, v) in extra {
        if let Some(v) = v {
            out.push((k.to_string(), v.clone()));
        }
    }
    Ok(out)
}

/// Output directory that appears under its final name only once the
/// command has succeeded.
struct OutDir {
    tmp: PathBuf,
    target: PathBuf,
}

impl OutDir {
    fn create(target: &Path) -> Result<Self, Failure> {
        if target.exists() {
            let empty = target.is_dir() && std::fs::read_dir(target)?.next().is_none();
            if !empty {
                return Err(Failure::Config(format!("output directory {} already exists and is not empty", target.display())));
            }
        }
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent)?;
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir(&tmp)?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    fn path(&self) -> &Path {
        &self.tmp
    }

    fn commit(self) -> Result<PathBuf, Failure> {
        if self.target.exists() {
            std::fs::remove_dir(&self.target)?;
        }
        std::fs::rename(&self.tmp, &self.target)?;
        Ok(self.target)
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(v).context("serializing")?;
        std::fs::write(self.tmp.join(name), text + "\n")?;
        Ok(())
    }
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(default))
}

/// Runs one command, writing progress to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::VerifyBounds(c) => verify_bounds(&c, log),
        Command::Train(c) => cmd_train(&c, log),
        Command::Eval(i) => cmd_eval(&i, log),
        Command::DumpRepr(i) => cmd_dump(&i, log),
        Command::Probe(i) => cmd_probe(&i, log),
    }
}

pub const SUMMARY_HEADER: &str = "mdp_id,which,c,gamma,eps,C,subopt,slack,pass";

fn verify_bounds(common: &Common, log: &mut dyn Write) -> Result<(), Failure> {
    let ov = overrides(common, &[("workers", common.workers.map(Into::into))])?;
    let cfg: VerifyConfig = resolve(common.config.as_deref(), &ov)?;
    cfg.suite.validate().map_err(config_err)?;
    let out = OutDir::create(&out_path(common, "verify-bounds"))?;
    out.write_json("config.json", &cfg)?;
    let exec = match cfg.workers {
        1 => Exec::Sequential,
        w if cfg!(feature = "parallel") => Exec::Parallel(w),
        _ => Exec::Sequential,
    };
    let outcome = run_suite(&cfg.suite, cfg.seed, exec)?;
    let mut reports = std::io::BufWriter::new(std::fs::File::create(out.path().join("reports.jsonl"))?);
    let mut summary = std::io::BufWriter::new(std::fs::File::create(out.path().join("summary.csv"))?);
    writeln!(summary, "{SUMMARY_HEADER}")?;
    for r in &outcome.reports {
        writeln!(reports, "{}", serde_json::to_string(r).context("serializing report")?)?;
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            r.mdp_id,
            r.which.name(),
            r.c,
            r.gamma,
            r.eps,
            r.c_const,
            r.subopt,
            r.slack,
            r.pass
        )?;
    }
    reports.flush()?;
    summary.flush()?;
    let mut refusals = std::io::BufWriter::new(std::fs::File::create(out.path().join("refusals.jsonl"))?);
    for r in &outcome.refusals {
        writeln!(refusals, "{}", serde_json::to_string(r).context("serializing refusal")?)?;
    }
    refusals.flush()?;
    drop((reports, summary, refusals));
    let dir = out.commit()?;
    let violations = outcome.violations();
    writeln!(
        log,
        "{} reports, {} violations, {} refusals -> {}",
        outcome.reports.len(),
        violations,
        outcome.refusals.len(),
        dir.display()
    )?;
    if violations > 0 {
        Err(Failure::Violations(violations))
    } else if !outcome.refusals.is_empty() {
        Err(Failure::Refusals(outcome.refusals.len()))
    } else {
        Ok(())
    }
}

fn cmd_train(common: &Common, log: &mut dyn Write) -> Result<(), Failure> {
    if common.workers.is_some() {
        return Err(Failure::Config("--workers only applies to verify-bounds; run seeds as separate processes".into()));
    }
    let cfg: TrainConfig = resolve(common.config.as_deref(), &overrides(common, &[])?)?;
    cfg.validate().map_err(config_err)?;
    cfg.env.layout().map_err(config_err)?;
    let out = OutDir::create(&out_path(common, &format!("train-{}-seed{}", cfg.arm.name(), cfg.seed)))?;
    out.write_json("config.json", &cfg)?;
    let outcome = train(cfg, Some(out.path()), |row| {
        let _ = writeln!(
            log,
            "step {:>8}  success {:.2}  distance {:.3}  probe_r2 {}",
            row.step,
            row.eval_success_rate,
            row.eval_final_distance,
            row.probe_r2.map_or("-".into(), |v| format!("{v:.4}"))
        );
    })?;
    let dir = out.commit()?;
    writeln!(log, "{} metrics rows -> {}", outcome.rows.len(), dir.display())?;
    Ok(())
}

fn load_inspect(i: &Inspect) -> Result<(InspectConfig, Agent, u64), Failure> {
    let ck = i.checkpoint.as_ref().map(|p| serde_json::Value::String(p.display().to_string()));
    let cfg: InspectConfig = resolve(i.common.config.as_deref(), &overrides(&i.common, &[("checkpoint", ck)])?)?;
    if i.common.workers.is_some() {
        return Err(Failure::Config("--workers only applies to verify-bounds".into()));
    }
    let path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Failure::Config("a checkpoint is required (--checkpoint or --set checkpoint=PATH)".into()))?;
    if !path.is_file() {
        return Err(Failure::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let (agent, step) = Agent::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok((cfg, agent, step))
}

#[derive(Serialize)]
struct EvalReport {
    step: u64,
    arm: &'static str,
    episodes: usize,
    success_rate: f64,
    final_distance: f64,
}

fn cmd_eval(i: &Inspect, log: &mut dyn Write) -> Result<(), Failure> {
    let (cfg, agent, step) = load_inspect(i)?;
    if cfg.episodes == 0 {
        return Err(Failure::Config("episodes must be positive".into()));
    }
    let out = OutDir::create(&out_path(&i.common, "eval"))?;
    out.write_json("config.json", &cfg)?;
    let r = agent.evaluate(cfg.episodes, cfg.seed)?;
    let report = EvalReport {
        step,
        arm: agent.cfg.arm.name(),
        episodes: cfg.episodes,
        success_rate: r.success_rate,
        final_distance: r.final_distance,
    };
    out.write_json("eval.json", &report)?;
    let dir = out.commit()?;
    writeln!(log, "success {:.3}, final distance {:.3} -> {}", r.success_rate, r.final_distance, dir.display())?;
    Ok(())
}

#[derive(Serialize)]
struct ProbeOutput<'a> {
    step: u64,
    arm: &'static str,
    min_r2: Option<f64>,
    #[serde(flatten)]
    report: &'a ProbeReport,
}

fn cmd_probe(i: &Inspect, log: &mut dyn Write) -> Result<(), Failure> {
    let (cfg, agent, step) = load_inspect(i)?;
    if cfg.states < goalrepr::repr::MIN_PROBE_STATES {
        return Err(Failure::Config(format!("probe needs at least {} states", goalrepr::repr::MIN_PROBE_STATES)));
    }
    let out = OutDir::create(&out_path(&i.common, "probe"))?;
    out.write_json("config.json", &cfg)?;
    let report = agent.probe(cfg.states, cfg.seed)?;
    out.write_json(
        "probe.json",
        &ProbeOutput {
            step,
            arm: agent.cfg.arm.name(),
            min_r2: report.min_r2(),
            report: &report,
        },
    )?;
    let dir = out.commit()?;
    let r2: Vec<String> = report.r2.iter().map(|v| v.map_or("undefined".into(), |v| format!("{v:.6}"))).collect();
    writeln!(log, "R² per coordinate: [{}] -> {}", r2.join(", "), dir.display())?;
    Ok(())
}

/// One dumped state.
pub struct DumpRow {
    pub episode: Option<usize>,
    pub t: Option<usize>,
    pub obs: Vec<f64>,
    pub f: Vec<f64>,
    pub x: f64,
    pub y: f64,
}

fn cmd_dump(i: &Inspect, log: &mut dyn Write) -> Result<(), Failure> {
    let (cfg, agent, _) = load_inspect(i)?;
    let mut rows = Vec::new();
    match cfg.source {
        DumpSource::Uniform => {
            for (obs, x, y) in agent.labeled_states(cfg.states, cfg.seed)? {
                let f = agent.enc.encode(&obs)?;
                rows.push(DumpRow {
                    episode: None,
                    t: None,
                    obs,
                    f,
                    x,
                    y,
                });
            }
        }
        DumpSource::Rollout => {
            for e in 0..cfg.episodes {
                let ep = agent.rollout(goalrepr::par::mix_seed(cfg.seed, e as u64))?;
                for (t, (obs, x, y)) in ep.states.into_iter().enumerate() {
                    let f = agent.enc.encode(&obs)?;
                    rows.push(DumpRow {
                        episode: Some(e),
                        t: Some(t),
                        obs,
                        f,
                        x,
                        y,
                    });
                }
            }
        }
    }
    let out = OutDir::create(&out_path(&i.common, "dump-repr"))?;
    out.write_json("config.json", &cfg)?;
    let (obs_dim, d) = (agent.cfg.env.obs_dim, agent.enc.goal_dim());
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.path().join("repr.csv"))?);
    let header: Vec<String> = ["episode".to_string(), "t".to_string()]
        .into_iter()
        .chain((0..obs_dim).map(|j| format!("obs_{j}")))
        .chain((0..d).map(|j| format!("f_{j}")))
        .chain(["x".to_string(), "y".to_string()])
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &rows {
        let nums: Vec<String> = r.obs.iter().chain(&r.f).chain([&r.x, &r.y]).map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", opt(r.episode), opt(r.t), nums.join(","))?;
    }
    w.flush()?;
    drop(w);
    if cfg.svg {
        std::fs::write(out.path().join("repr.svg"), svg::scatter(&rows))?;
    }
    let dir = out.commit()?;
    writeln!(log, "{} states -> {}", rows.len(), dir.display())?;
    Ok(())
}
