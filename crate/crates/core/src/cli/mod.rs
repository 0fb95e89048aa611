//! Command-line front end: `train`, `eval`, `compare` and `plot`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::{train, Algorithm, LearnedPolicy, TRAINING_LOG_HEADER};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::evaluation::{curve_csv, learning_curve, monte_carlo, EpisodeLog, MetricsReport, Policy, PolicyKind};

pub use config::{EvalConfig, ExperimentConfig, Profile, CONFIG_SCHEMA_VERSION, PROFILE_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "icsrl", version, about = "UAV infiltration training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Curve,
    Trajectory,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a learned controller and write its checkpoint directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// icsrl, ca or ddqn.
        #[arg(long)]
        algo: String,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// desk or full; overrides ICSRL_PROFILE and the config file.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Greedy Monte-Carlo evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed_base: Option<u64>,
        #[arg(long)]
        report: PathBuf,
        /// Must resolve to the configuration the checkpoint was trained with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-episode JSONL; defaults to the report path with a .jsonl extension.
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate several policies on one shared seed set.
    Compare {
        /// Comma-separated: icsrl, ca, ddqn, pso, gt, greedy.
        #[arg(long, value_delimiter = ',')]
        algos: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Directory holding one checkpoint directory per learned policy,
        /// named icsrl, ca_ddqn or ddqn.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        seed_base: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Turn logs into plot data: a smoothed learning curve or an episode SVG.
    Plot {
        /// Training-log CSVs (curve, one per seed) or an episode JSONL (trajectory).
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
        /// Which episode of a multi-episode JSONL to draw.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Instants at which detection circles are drawn.
        #[arg(long, default_value_t = 6)]
        samples: usize,
    },
}

/// Written atomically once a command has produced all of its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn write_manifest(path: &Path, command: &str, hash: String, started: f64, seeds: Vec<u64>, artifacts: Vec<PathBuf>) -> Result<()> {
    let m = RunManifest {
        command: command.into(),
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: now(),
        seeds,
        artifacts,
    };
    write_json(path, &m)
}

fn parse_profile(p: Option<&str>) -> Result<Option<Profile>> {
    p.map(str::parse).transpose()
}

fn env_profile() -> Option<String> {
    std::env::var(PROFILE_ENV).ok()
}

/// The configuration stored next to a checkpoint.
pub fn checkpoint_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Validation(format!("checkpoint {} has no readable config.json: {e}", dir.display())))?;
    let doc = serde_json::from_str(&text)?;
    ExperimentConfig::from_document(&doc, None)
}

fn load_checkpoint(dir: &Path) -> Result<(LearnedPolicy, ExperimentConfig)> {
    if !dir.join("controller.json").is_file() {
        return Err(Error::Validation(format!("no checkpoint found in {}", dir.display())));
    }
    let cfg = checkpoint_config(dir)?;
    let (policy, meta) = LearnedPolicy::load(dir, &cfg.world)?;
    let hash = cfg.hash()?;
    if meta["config_hash"].as_str() != Some(hash.as_str()) {
        return Err(Error::Validation(format!(
            "checkpoint {} was trained with a different configuration",
            dir.display()
        )));
    }
    Ok((policy, cfg))
}

fn write_logs(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = BufWriter::new(&mut buf);
        for l in logs {
            l.write_jsonl(&mut w)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_train(
    config: Option<&Path>,
    algo: &str,
    seed: Option<u64>,
    out: &Path,
    profile: Option<&str>,
) -> Result<String> {
    let started = now();
    let algorithm: Algorithm = algo.parse()?;
    let cfg = ExperimentConfig::load(config, parse_profile(profile)?, env_profile().as_deref())?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let hash = cfg.hash()?;
    let outcome = train(&cfg.world, &cfg.train, algorithm, seed)?;
    fs::create_dir_all(out)?;
    let meta = json!({
        "config_hash": hash,
        "algorithm": algorithm,
        "seed": seed,
        "episodes": cfg.train.episodes,
    });
    let mut artifacts = outcome.policy.save(out, &meta)?;
    let cfg_path = out.join("config.json");
    write_json(&cfg_path, &cfg.to_document()?)?;
    artifacts.push(cfg_path);
    let mut csv = String::from(TRAINING_LOG_HEADER);
    csv.push('\n');
    for row in &outcome.log {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    let log_path = out.join("training_log.csv");
    write_atomic(&log_path, csv.as_bytes())?;
    artifacts.push(log_path);
    write_manifest(&out.join("manifest.json"), "train", hash, started, vec![seed], artifacts)?;
    let successes = outcome.log.iter().filter(|r| r.outcome == "success").count();
    Ok(format!(
        "trained {} for {} episodes (seed {seed}, training success {successes}/{}) into {}",
        algorithm,
        outcome.log.len(),
        outcome.log.len(),
        out.display()
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint: &Path,
    episodes: Option<usize>,
    seed_base: Option<u64>,
    report: &Path,
    config: Option<&Path>,
    logs: Option<&Path>,
    threads: Option<usize>,
) -> Result<String> {
    let started = now();
    let (policy, cfg) = load_checkpoint(checkpoint)?;
    if let Some(path) = config {
        let given = ExperimentConfig::load(Some(path), None, None)?;
        if given.hash()? != cfg.hash()? {
            return Err(Error::Validation(format!(
                "{} does not match the configuration of checkpoint {}",
                path.display(),
                checkpoint.display()
            )));
        }
    }
    let episodes = episodes.unwrap_or(cfg.eval.episodes);
    let seed_base = seed_base.unwrap_or(cfg.eval.seed_base);
    let env = Environment::new(cfg.world.clone())?;
    let mc = monte_carlo(
        &Policy::Learned(policy),
        &env,
        episodes,
        seed_base,
        threads.unwrap_or(cfg.eval.threads),
    )?;
    write_json(report, &mc.report)?;
    let log_path = logs.map_or_else(|| report.with_extension("jsonl"), Path::to_path_buf);
    write_logs(&log_path, &mc.logs)?;
    write_manifest(
        &with_suffix(report, ".manifest.json"),
        "eval",
        cfg.hash()?,
        started,
        mc.report.seeds.clone(),
        vec![report.to_path_buf(), log_path],
    )?;
    Ok(summary_line(&mc.report))
}

fn summary_line(r: &MetricsReport) -> String {
    let pa = r
        .prediction_accuracy
        .map_or_else(|| "n/a".to_string(), |p| format!("{p:.3}"));
    format!(
        "{}: {} episodes, SR {:.3}, AEC {:.3}, AET {:.2}s, PA {pa}, mean reward {:.2}",
        r.policy, r.episode_count, r.success_rate, r.aec, r.aet, r.reward.mean
    )
}

pub const COMPARISON_HEADER: &str =
    "algorithm,episodes,sr,aec,aet,pa,mean_reward,median_reward,mean_steps_to_success,fail_attack,fail_out_of_bounds,fail_timeout";
pub const PAIRED_HEADER: &str = "algorithm,seed,outcome,reward,steps,exposure_count,exposure_seconds";

#[allow(clippy::too_many_arguments)]
pub fn cmd_compare(
    algos: &[String],
    episodes: Option<usize>,
    out: &Path,
    checkpoints: Option<&Path>,
    config: Option<&Path>,
    profile: Option<&str>,
    seed_base: Option<u64>,
    threads: Option<usize>,
) -> Result<String> {
    let started = now();
    if algos.is_empty() {
        return Err(Error::validation("--algos: name at least one policy"));
    }
    let kinds: Vec<PolicyKind> = algos.iter().map(|a| a.trim().parse()).collect::<Result<_>>()?;
    let mut cfg = ExperimentConfig::load(config, parse_profile(profile)?, env_profile().as_deref())?;
    let mut learned = Vec::new();
    for &k in &kinds {
        if k.is_learned() {
            let root = checkpoints.ok_or_else(|| {
                Error::Validation(format!("{k} needs --checkpoints pointing at trained policies"))
            })?;
            let (policy, ck_cfg) = load_checkpoint(&root.join(k.as_str()))?;
            learned.push((k, policy, ck_cfg));
        }
    }
    if let Some((_, _, first)) = learned.first() {
        let world = first.world.clone();
        if learned.iter().any(|(_, _, c)| c.world != world) {
            return Err(Error::validation("checkpoints were trained on different worlds"));
        }
        if config.is_some() && cfg.world != world {
            return Err(Error::validation("--config world differs from the checkpoints' world"));
        }
        cfg.world = world;
    }
    let episodes = episodes.unwrap_or(cfg.eval.episodes);
    let seed_base = seed_base.unwrap_or(cfg.eval.seed_base);
    let threads = threads.unwrap_or(cfg.eval.threads);
    let env = Environment::new(cfg.world.clone())?;
    fs::create_dir_all(out)?;
    let mut table = String::from(COMPARISON_HEADER);
    table.push('\n');
    let mut paired = String::from(PAIRED_HEADER);
    paired.push('\n');
    let mut artifacts = Vec::new();
    let mut lines = Vec::new();
    let mut learned = learned.into_iter();
    for &k in &kinds {
        let policy = match k {
            PolicyKind::Pso => Policy::Pso(cfg.baselines.pso.clone()),
            PolicyKind::GameTheory => Policy::GameTheory(cfg.baselines.game_theory.clone()),
            PolicyKind::Greedy => Policy::Greedy,
            _ => Policy::Learned(learned.next().expect("loaded above").1),
        };
        let mc = monte_carlo(&policy, &env, episodes, seed_base, threads)?;
        let r = &mc.report;
        let report_path = out.join(format!("{k}_report.json"));
        write_json(&report_path, r)?;
        let log_path = out.join(format!("{k}_episodes.jsonl"));
        write_logs(&log_path, &mc.logs)?;
        artifacts.push(report_path);
        artifacts.push(log_path);
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        table.push_str(&format!(
            "{k},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.episode_count,
            r.success_rate,
            r.aec,
            r.aet,
            opt(r.prediction_accuracy),
            r.reward.mean,
            r.reward.median,
            opt(r.mean_steps_to_success),
            r.outcomes.fail_attack,
            r.outcomes.fail_out_of_bounds,
            r.outcomes.fail_timeout
        ));
        for e in &r.episodes {
            paired.push_str(&format!(
                "{k},{},{},{},{},{},{}\n",
                e.seed,
                e.outcome.as_str(),
                e.reward,
                e.steps,
                e.exposure_count,
                e.exposure_seconds
            ));
        }
        lines.push(summary_line(r));
    }
    let table_path = out.join("comparison.csv");
    write_atomic(&table_path, table.as_bytes())?;
    let paired_path = out.join("episodes.csv");
    write_atomic(&paired_path, paired.as_bytes())?;
    artifacts.push(table_path);
    artifacts.push(paired_path);
    let seeds = (0..episodes as u64).map(|i| seed_base + i).collect();
    write_manifest(&out.join("manifest.json"), "compare", cfg.hash()?, started, seeds, artifacts)?;
    Ok(lines.join("\n"))
}

pub fn cmd_plot(
    inputs: &[PathBuf],
    kind: PlotKind,
    out: &Path,
    window: usize,
    episode: usize,
    samples: usize,
) -> Result<String> {
    match kind {
        PlotKind::Curve => {
            let runs = inputs
                .iter()
                .map(|p| plot::training_rewards(&fs::read_to_string(p)?))
                .collect::<Result<Vec<_>>>()?;
            let curve = learning_curve(&runs, window)?;
            write_atomic(out, curve_csv(&curve).as_bytes())?;
            let svg = out.with_extension("svg");
            write_atomic(&svg, plot::curve_svg(&curve).as_bytes())?;
            Ok(format!("wrote {} points to {} and {}", curve.len(), out.display(), svg.display()))
        }
        PlotKind::Trajectory => {
            let [input] = inputs else {
                return Err(Error::validation("trajectory plots take exactly one --input"));
            };
            let file = fs::File::open(input)?;
            let logs = EpisodeLog::read_jsonl(BufReader::new(file))?;
            let log = logs.get(episode).ok_or_else(|| {
                Error::Validation(format!("{} holds {} episodes, asked for index {episode}", input.display(), logs.len()))
            })?;
            write_atomic(out, plot::trajectory_svg(log, samples).as_bytes())?;
            let csv = out.with_extension("csv");
            write_atomic(&csv, plot::trajectory_csv(log).as_bytes())?;
            Ok(format!(
                "drew episode seed {} ({}) to {} and {}",
                log.seed,
                log.outcome.as_str(),
                out.display(),
                csv.display()
            ))
        }
    }
}

pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train {
            config,
            algo,
            seed,
            out,
            profile,
        } => cmd_train(config.as_deref(), &algo, seed, &out, profile.as_deref()),
        Command::Eval {
            checkpoint,
            episodes,
            seed_base,
            report,
            config,
            logs,
            threads,
        } => cmd_eval(
            &checkpoint,
            episodes,
            seed_base,
            &report,
            config.as_deref(),
            logs.as_deref(),
            threads,
        ),
        Command::Compare {
            algos,
            episodes,
            out,
            checkpoints,
            config,
            profile,
            seed_base,
            threads,
        } => cmd_compare(
            &algos,
            episodes,
            &out,
            checkpoints.as_deref(),
            config.as_deref(),
            profile.as_deref(),
            seed_base,
            threads,
        ),
        Command::Plot {
            input,
            kind,
            out,
            window,
            episode,
            samples,
        } => cmd_plot(&input, kind, &out, window, episode, samples),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() || matches!(err, Error::Usage(_)) {
        EXIT_INVALID
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (program name first), runs the command and reports to
/// stdout/stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
