use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, AgentDescriptor, Checkpoint};
use super::config::{config_hash, parse_config_file, AgentIdentity, EnvName, ExperimentConfig, Inherited, RawConfig};
use crate::algorithms::{build_agent_parts, run_training_with, Algorithm, ApproximatorKind, EvalPoint, ParameterSnapshot};
use crate::analysis::{evaluate, robustness_sweep, sweep_rng, SweepKind};
use crate::approximators::Approximator;
use crate::environments::EnvConfig;
use crate::error::{Error, Result};
use crate::factored_actions::CombinationRule;
use crate::oracle::{greedy_policy_return, DEFAULT_TOL};

/// Training budget for `compare-combiners` when none is given.
pub const COMPARE_DEFAULT_STEPS: u64 = 1_000_000;

#[derive(Debug, Parser)]
#[command(name = "farl", version, about = "Factored-action actor-critic and Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent; writes eval.csv, best.ckpt, final.ckpt and run.json.
    Train(CommonArgs),
    /// Evaluate a checkpoint; writes evaluate.csv.
    Evaluate(CommonArgs),
    /// Best-k corruption sweep over epsilon; writes robustness.csv.
    AnalyzeBestk(CommonArgs),
    /// Temperature sweep over Z; writes robustness.csv.
    AnalyzeTemperature(CommonArgs),
    /// Train one factored actor-critic agent per combination rule from a shared
    /// seed; writes combiners.csv.
    CompareCombiners(CommonArgs),
    /// Solve the tabular model of the environment; writes oracle.csv.
    Oracle(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// a3c, fara3c, aql or faraql.
    #[arg(long)]
    pub algo: Option<String>,
    /// hunter or bandit.
    #[arg(long)]
    pub env: Option<String>,
    /// sum, product, amean, hmean, gmean or min.
    #[arg(long)]
    pub combination: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Total environment steps across all workers.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file and $FARL_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single worker, serialized updates, bit-reproducible.
    #[arg(long)]
    pub strict: bool,
    /// Load a checkpoint even if its config hash differs.
    #[arg(long)]
    pub force: bool,
    /// Checkpoint to evaluate or analyze.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl CommonArgs {
    /// Config file contents with the command-line flags laid over them.
    pub fn raw_config(&self) -> Result<RawConfig> {
        let mut raw = match &self.config {
            Some(path) => parse_config_file(path)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig {
            workers: self.workers,
            total_steps: self.steps,
            seed: self.seed,
            ..Default::default()
        };
        if let Some(a) = &self.algo {
            flags.algorithm = Some(a.parse::<Algorithm>()?);
        }
        if let Some(e) = &self.env {
            flags.env = Some(match e.as_str() {
                "hunter" => EnvName::Hunter,
                "bandit" => EnvName::Bandit,
                other => {
                    return Err(Error::validation("env", format!("unknown environment {other:?}; expected hunter or bandit")))
                }
            });
        }
        if let Some(c) = &self.combination {
            flags.combination = Some(c.parse::<CombinationRule>()?);
        }
        if self.strict {
            flags.strict = Some(true);
        }
        raw.overlay(flags);
        Ok(raw)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

impl From<&EvalPoint> for EvalRow {
    fn from(p: &EvalPoint) -> Self {
        EvalRow {
            step: p.step,
            mean_return: p.mean_return,
            std_return: p.std_return,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRow {
    pub checkpoint: String,
    pub global_step: u64,
    pub episodes: usize,
    pub cap: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub agent: String,
    pub env: String,
    pub sweep_kind: String,
    pub param_value: f64,
    pub raw_mean: f64,
    pub raw_std: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinerRow {
    pub rule: String,
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRow {
    pub env: String,
    pub gamma: f64,
    pub tol: f64,
    pub n_states: usize,
    pub n_actions: usize,
    pub sweeps: usize,
    pub v_star_mean: f64,
    pub v_star_min: f64,
    pub v_star_max: f64,
    pub v_star_start: f64,
    pub greedy_horizon: usize,
    pub greedy_return: f64,
}

/// Parse `argv` (including the program name), run the subcommand and return
/// the process exit status.
pub fn run_subcommand<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::AnalyzeBestk(a) => cmd_analyze(a, SweepKind::BestK),
        Command::AnalyzeTemperature(a) => cmd_analyze(a, SweepKind::Temperature),
        Command::CompareCombiners(a) => cmd_compare(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let run_json = cfg.out_dir.join("run.json");
    std::fs::write(&run_json, cfg.to_json() + "\n").map_err(|e| Error::io(&run_json, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn identity_for(cfg: &ExperimentConfig) -> Result<(AgentIdentity, Approximator)> {
    let (_, approximator) = build_agent_parts(&cfg.train, &cfg.env)?;
    Ok((
        AgentIdentity {
            algorithm: cfg.train.algorithm,
            combination: cfg.train.combination,
            approximator: approximator.clone(),
            env: cfg.env.clone(),
        },
        approximator,
    ))
}

pub fn checkpoint_from_snapshot(cfg: &ExperimentConfig, snapshot: &ParameterSnapshot) -> Result<Checkpoint> {
    let (identity, _) = identity_for(cfg)?;
    Ok(Checkpoint::new(
        AgentDescriptor {
            identity,
            rmsprop_decay: cfg.train.rmsprop_decay,
            rmsprop_damping: cfg.train.rmsprop_damping,
        },
        snapshot.step,
        snapshot.params.clone(),
        snapshot.mean_square.clone(),
        snapshot.rng_states.clone(),
    ))
}

/// Train with `cfg`, streaming eval rows to `eval.csv` and writing the best
/// and final checkpoints once the workers have stopped.
pub fn train(cfg: &ExperimentConfig) -> Result<crate::algorithms::TrainingOutcome> {
    prepare_out_dir(cfg)?;
    let eval_path = cfg.out_dir.join("eval.csv");
    let file = File::create(&eval_path).map_err(|e| Error::io(&eval_path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    writer.write_record(["step", "mean_return", "std_return"])?;
    writer.flush().map_err(|e| Error::io(&eval_path, e))?;
    let writer = Mutex::new(writer);
    let on_eval = |p: &EvalPoint| -> Result<()> {
        let mut w = writer.lock().expect("eval writer lock");
        w.serialize(EvalRow::from(p))?;
        w.flush().map_err(|e| Error::io(&eval_path, e))
    };
    let outcome = run_training_with(&cfg.train, &cfg.env, on_eval)?;
    if let Some(best) = &outcome.best {
        save_checkpoint(&cfg.out_dir.join("best.ckpt"), &checkpoint_from_snapshot(cfg, best)?)?;
    }
    save_checkpoint(&cfg.out_dir.join("final.ckpt"), &checkpoint_from_snapshot(cfg, &outcome.last)?)?;
    Ok(outcome)
}

fn cmd_train(args: &CommonArgs) -> Result<()> {
    let cfg = args.raw_config()?.resolve(None, args.out.as_deref())?;
    let outcome = train(&cfg)?;
    let r = &outcome.report;
    println!(
        "trained {} on {}: {} env steps in {:.1}s, {} eval points",
        cfg.train.algorithm,
        cfg.env.name(),
        r.total_env_steps,
        r.wall_time,
        r.eval_curve.len()
    );
    if let (Some(step), Some(best)) = (r.best_checkpoint_step, r.eval_curve.iter().map(|p| p.mean_return).reduce(f64::max)) {
        println!("best mean return {best:.4} at step {step}");
    }
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

/// Load `--checkpoint`, resolve the config against it and check the hashes.
fn checkpoint_and_config(args: &CommonArgs) -> Result<(Checkpoint, ExperimentConfig)> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::validation("checkpoint", "--checkpoint PATH is required"))?;
    let ckpt = load_checkpoint(path)?;
    let id = &ckpt.descriptor.identity;
    let inherit = Inherited {
        algorithm: id.algorithm,
        combination: id.combination,
        approximator: match id.approximator {
            Approximator::Network(_) => ApproximatorKind::Network,
            Approximator::Tabular(_) => ApproximatorKind::Tabular,
        },
        hidden: match &id.approximator {
            Approximator::Network(n) => Some(n.hidden.clone()),
            Approximator::Tabular(_) => None,
        },
        env: id.env.clone(),
    };
    let cfg = args.raw_config()?.resolve(Some(&inherit), args.out.as_deref())?;
    let (identity, _) = identity_for(&cfg)?;
    ckpt.verify_hash(&config_hash(&identity), args.force)?;
    Ok((ckpt, cfg))
}

fn cmd_evaluate(args: &CommonArgs) -> Result<()> {
    let (ckpt, cfg) = checkpoint_and_config(args)?;
    let agent = ckpt.agent()?;
    let (mean, std) = evaluate(
        &agent,
        &cfg.env,
        cfg.train.eval_episodes,
        cfg.train.eval_cap,
        &mut sweep_rng(cfg.train.seed),
    )?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let row = EvaluateRow {
        checkpoint: args.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        global_step: ckpt.global_step,
        episodes: cfg.train.eval_episodes,
        cap: cfg.train.eval_cap,
        mean_return: mean,
        std_return: std,
    };
    write_rows(&cfg.out_dir.join("evaluate.csv"), &[row])?;
    println!("mean return {mean:.6} (std {std:.6}) over {} episodes", cfg.train.eval_episodes);
    Ok(())
}

fn cmd_analyze(args: &CommonArgs, kind: SweepKind) -> Result<()> {
    let (ckpt, cfg) = checkpoint_and_config(args)?;
    let agent = ckpt.agent()?;
    let mut spec = cfg.sweep.spec(kind);
    if cfg.sweep.seed.is_none() {
        spec.seed = cfg.train.seed;
    }
    let curve = robustness_sweep(&agent, &cfg.env, &spec, cfg.train.eval_cap)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let rows: Vec<RobustnessRow> = curve
        .points
        .iter()
        .map(|p| RobustnessRow {
            agent: cfg.train.algorithm.to_string(),
            env: cfg.env.name().to_string(),
            sweep_kind: kind.name().to_string(),
            param_value: p.param,
            raw_mean: p.raw_mean,
            raw_std: p.raw_std,
            normalized: p.normalized,
        })
        .collect();
    write_rows(&cfg.out_dir.join("robustness.csv"), &rows)?;
    for p in &curve.points {
        println!("{} = {:.2}: mean {:.4}, normalized {:.4}", kind.name(), p.param, p.raw_mean, p.normalized);
    }
    Ok(())
}

/// One factored actor-critic run per combination rule, all from the same
/// seed and therefore the same initial parameters.
pub fn compare_combiners(cfg: &ExperimentConfig) -> Result<Vec<(CombinationRule, Vec<EvalPoint>)>> {
    if cfg.train.algorithm != Algorithm::Fara3c {
        return Err(Error::validation("algorithm", "compare-combiners trains fara3c agents"));
    }
    prepare_out_dir(cfg)?;
    let mut curves = Vec::with_capacity(CombinationRule::ALL.len());
    let mut rows = Vec::new();
    for rule in CombinationRule::ALL {
        let mut train = cfg.train.clone();
        train.combination = rule;
        let outcome = run_training_with(&train, &cfg.env, |_| Ok(()))?;
        log::info!("{rule}: {} eval points", outcome.report.eval_curve.len());
        rows.extend(outcome.report.eval_curve.iter().map(|p| CombinerRow {
            rule: rule.name().to_string(),
            step: p.step,
            mean_return: p.mean_return,
            std_return: p.std_return,
        }));
        curves.push((rule, outcome.report.eval_curve));
    }
    write_rows(&cfg.out_dir.join("combiners.csv"), &rows)?;
    Ok(curves)
}

fn cmd_compare(args: &CommonArgs) -> Result<()> {
    let mut raw = args.raw_config()?;
    raw.algorithm.get_or_insert(Algorithm::Fara3c);
    raw.env.get_or_insert(EnvName::Hunter);
    raw.total_steps.get_or_insert(COMPARE_DEFAULT_STEPS);
    let cfg = raw.resolve(None, args.out.as_deref())?;
    for (rule, curve) in compare_combiners(&cfg)? {
        match curve.last() {
            Some(p) => println!("{:>8}: final mean return {:.4} at step {}", rule.name(), p.mean_return, p.step),
            None => println!("{:>8}: no evaluation points", rule.name()),
        }
    }
    Ok(())
}

pub fn oracle_row(env: &EnvConfig, gamma: f64, tol: f64) -> Result<OracleRow> {
    let g = greedy_policy_return(env, gamma, tol)?;
    let mdp = crate::oracle::tabularize(env, gamma)?;
    let v = &g.solution.values;
    let live: Vec<f64> = v.iter().zip(&mdp.terminal).filter(|(_, t)| !**t).map(|(x, _)| *x).collect();
    Ok(OracleRow {
        env: env.name().to_string(),
        gamma,
        tol,
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        sweeps: g.solution.sweeps,
        v_star_mean: live.iter().sum::<f64>() / live.len() as f64,
        v_star_min: live.iter().copied().fold(f64::INFINITY, f64::min),
        v_star_max: live.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        v_star_start: crate::oracle::expected_start_value(&mdp, v),
        greedy_horizon: g.horizon,
        greedy_return: g.expected_return,
    })
}

fn cmd_oracle(args: &CommonArgs) -> Result<()> {
    let mut raw = args.raw_config()?;
    raw.algorithm.get_or_insert(Algorithm::Fara3c);
    let cfg = raw.resolve(None, args.out.as_deref())?;
    let row = oracle_row(&cfg.env, cfg.train.gamma, DEFAULT_TOL)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_rows(&cfg.out_dir.join("oracle.csv"), std::slice::from_ref(&row))?;
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.serialize(&row)?;
    out.flush().map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}
