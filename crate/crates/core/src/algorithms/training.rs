//! Asynchronous actor-learners sharing one parameter store.
//!
//! Each worker repeatedly snapshots the shared parameters, rolls out up to
//! `rollout_len` steps in its own environment, computes the segment gradient
//! and applies it through the shared RMSProp state. A global atomic step
//! counter gates termination, target refreshes and evaluation points.
//! Evaluation runs on a separate thread against parameter snapshots.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::agent::{Agent, AgentSpec, Algorithm, ApproximatorKind};
use super::gradients::{actor_critic_grads, q_learning_grads, Trajectory, Transition};
use super::schedule::{draw_final_epsilon, schedule_value, ScheduleKind};
use crate::analysis::evaluate;
use crate::approximators::{Approximator, Model, RmspropState, SharedParameters, SharedVector};
use crate::environments::EnvConfig;
use crate::error::{Error, Result};
use crate::factored_actions::{softmax, CombinationRule};
use crate::rng::{argmax, sample_categorical, stream_rng, RngState, STREAM_AGENT, STREAM_ENV, STREAM_EVAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub combination: CombinationRule,
    pub approximator: ApproximatorKind,
    pub hidden: Vec<usize>,
    pub workers: usize,
    pub total_steps: u64,
    pub rollout_len: usize,
    pub n_step: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_anneal_steps: u64,
    pub epsilon_final_set: Vec<f64>,
    pub epsilon_anneal_steps: u64,
    pub target_refresh_interval: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_cap: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_damping: f64,
    pub strict: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_TOTAL_STEPS: u64 = 2_000_000;

    pub fn defaults(algorithm: Algorithm) -> Self {
        let total_steps = Self::DEFAULT_TOTAL_STEPS;
        let rollout_len = if algorithm.is_actor_critic() { 20 } else { 5 };
        TrainConfig {
            algorithm,
            combination: CombinationRule::Sum,
            approximator: ApproximatorKind::Network,
            hidden: vec![64, 64],
            workers: 4,
            total_steps,
            rollout_len,
            n_step: rollout_len,
            gamma: 0.99,
            beta: 0.01,
            lr_initial: 7e-4,
            lr_final: 0.0,
            lr_anneal_steps: total_steps,
            epsilon_final_set: vec![0.05, 0.1, 0.5],
            epsilon_anneal_steps: total_steps / 5 * 4,
            target_refresh_interval: 10_000,
            eval_interval: 20_000,
            eval_episodes: 100,
            eval_cap: 200,
            rmsprop_decay: RmspropState::DEFAULT_DECAY,
            rmsprop_damping: RmspropState::DEFAULT_DAMPING,
            strict: false,
            seed: 0,
        }
    }

    /// Rescale the step-count horizons to a new `total_steps`.
    pub fn with_total_steps(mut self, total_steps: u64) -> Self {
        self.total_steps = total_steps;
        self.lr_anneal_steps = total_steps;
        self.epsilon_anneal_steps = total_steps / 5 * 4;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(Error::validation(key, msg));
        if self.rollout_len < 1 {
            return fail("rollout_len", "must be at least 1");
        }
        if self.total_steps < self.rollout_len as u64 {
            return fail("total_steps", "must be at least rollout_len (and at least 1)");
        }
        if self.n_step != self.rollout_len {
            return fail("n_step", "n-step returns span the rollout segment; must equal rollout_len");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma", "must lie in (0, 1]");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail("beta", "must be finite and >= 0");
        }
        if !(self.lr_initial >= 0.0 && self.lr_initial.is_finite()) {
            return fail("lr_initial", "must be finite and >= 0");
        }
        if !(self.lr_final >= 0.0 && self.lr_final.is_finite()) {
            return fail("lr_final", "must be finite and >= 0");
        }
        if self.workers < 1 {
            return fail("workers", "must be at least 1");
        }
        if self.strict && self.workers != 1 {
            return fail("workers", "strict mode runs exactly one worker");
        }
        if self.epsilon_final_set.is_empty() {
            return fail("epsilon_final_set", "must be nonempty");
        }
        if self.epsilon_final_set.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return fail("epsilon_final_set", "values must lie in [0, 1]");
        }
        if self.target_refresh_interval < 1 {
            return fail("target_refresh_interval", "must be at least 1");
        }
        if self.eval_interval < 1 {
            return fail("eval_interval", "must be at least 1");
        }
        if self.eval_episodes < 1 {
            return fail("eval_episodes", "must be at least 1");
        }
        if self.eval_cap < 1 {
            return fail("eval_cap", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return fail("rmsprop_decay", "must lie in [0, 1)");
        }
        if !(self.rmsprop_damping > 0.0 && self.rmsprop_damping.is_finite()) {
            return fail("rmsprop_damping", "must be finite and > 0");
        }
        if self.hidden.contains(&0) {
            return fail("hidden", "widths must be at least 1");
        }
        if !self.algorithm.is_actor_critic() && self.combination != CombinationRule::Sum && self.algorithm.is_factored() {
            return fail("combination", "Q-learning agents use the additive decomposition (\"sum\")");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSnapshot {
    pub step: u64,
    pub params: Vec<f64>,
    pub mean_square: Vec<f64>,
    pub rng_states: Vec<RngState>,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub eval_curve: Vec<EvalPoint>,
    pub best_checkpoint_step: Option<u64>,
    pub wall_time: f64,
    pub total_env_steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub report: TrainingReport,
    pub spec: AgentSpec,
    pub approximator: Approximator,
    pub best: Option<ParameterSnapshot>,
    pub last: ParameterSnapshot,
}

impl TrainingOutcome {
    pub fn agent(&self, snapshot: &ParameterSnapshot) -> Result<Agent> {
        Ok(Agent {
            spec: self.spec.clone(),
            model: self.approximator.build()?,
            params: snapshot.params.clone(),
        })
    }
}

pub fn build_agent_parts(config: &TrainConfig, env: &EnvConfig) -> Result<(AgentSpec, Approximator)> {
    let spec = AgentSpec::new(config.algorithm, config.combination, env.action_space()?)?;
    let approximator = spec.approximator(env, config.approximator, &config.hidden);
    approximator.validate()?;
    Ok((spec, approximator))
}

pub fn run_training(config: &TrainConfig, env: &EnvConfig) -> Result<TrainingOutcome> {
    run_training_with(config, env, |_| Ok(()))
}

/// Train, calling `on_eval` for every evaluation point as it is produced.
pub fn run_training_with<F>(config: &TrainConfig, env: &EnvConfig, on_eval: F) -> Result<TrainingOutcome>
where
    F: Fn(&EvalPoint) -> Result<()> + Sync,
{
    config.validate()?;
    env.validate()?;
    let started = Instant::now();
    let (spec, approximator) = build_agent_parts(config, env)?;
    let model = approximator.build()?;
    let init = model.init(config.seed).0;
    let run = Run {
        config,
        env,
        spec: &spec,
        model: &model,
        shared: SharedParameters::new(
            &init,
            RmspropState::new(init.len(), config.rmsprop_decay, config.rmsprop_damping),
            config.strict,
        ),
        target: (!config.algorithm.is_actor_critic()).then(|| SharedVector::new(&init)),
        target_version: AtomicU64::new(0),
        steps: AtomicU64::new(0),
        abort: AtomicBool::new(false),
    };

    let (curve, best, rng_states) = std::thread::scope(|scope| -> Result<_> {
        let (tx, rx) = channel::<EvalJob>();
        let run = &run;
        let on_eval = &on_eval;
        let evaluator = scope.spawn(move || run.evaluate_jobs(rx, on_eval));
        let workers: Vec<_> = (0..config.workers)
            .map(|w| {
                let tx = tx.clone();
                scope.spawn(move || {
                    let result = run.worker(w, tx);
                    if result.is_err() {
                        run.abort.store(true, Ordering::Relaxed);
                    }
                    result
                })
            })
            .collect();
        drop(tx);
        let mut first_err = None;
        let mut rng_states = Vec::with_capacity(config.workers);
        for handle in workers {
            match handle.join() {
                Ok(Ok(state)) => rng_states.push(state),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::WorkerPanic);
                }
            }
        }
        let eval_result = evaluator.join().map_err(|_| Error::WorkerPanic)?;
        if let Some(e) = first_err {
            return Err(e);
        }
        let (curve, best) = eval_result?;
        Ok((curve, best, rng_states))
    })?;

    let total_env_steps = run.steps.load(Ordering::SeqCst);
    let last = ParameterSnapshot {
        step: total_env_steps,
        params: run.shared.params.snapshot(),
        mean_square: run.shared.rmsprop.mean_square.snapshot(),
        rng_states,
    };
    Ok(TrainingOutcome {
        report: TrainingReport {
            best_checkpoint_step: best.as_ref().map(|b| b.step),
            eval_curve: curve,
            wall_time: started.elapsed().as_secs_f64(),
            total_env_steps,
        },
        spec,
        approximator,
        best,
        last,
    })
}

struct EvalJob {
    snapshot: ParameterSnapshot,
}

struct Run<'a> {
    config: &'a TrainConfig,
    env: &'a EnvConfig,
    spec: &'a AgentSpec,
    model: &'a Model,
    shared: SharedParameters,
    target: Option<SharedVector>,
    target_version: AtomicU64,
    steps: AtomicU64,
    abort: AtomicBool,
}

impl Run<'_> {
    fn snapshot(&self, step: u64, rng: &crate::rng::AgentRng) -> ParameterSnapshot {
        ParameterSnapshot {
            step,
            params: self.shared.params.snapshot(),
            mean_square: self.shared.rmsprop.mean_square.snapshot(),
            rng_states: vec![RngState::capture(rng)],
        }
    }

    fn on_global_step(&self, t: u64, rng: &crate::rng::AgentRng, tx: &Sender<EvalJob>) {
        if let Some(target) = &self.target {
            if t.is_multiple_of(self.config.target_refresh_interval) {
                target.copy_from_shared(&self.shared.params);
                self.target_version.fetch_add(1, Ordering::SeqCst);
            }
        }
        if t.is_multiple_of(self.config.eval_interval) && t <= self.config.total_steps {
            // The evaluator only disappears after a failure, which aborts the run anyway.
            let _ = tx.send(EvalJob {
                snapshot: self.snapshot(t, rng),
            });
        }
    }

    fn worker(&self, w: usize, tx: Sender<EvalJob>) -> Result<RngState> {
        let cfg = self.config;
        let actor_critic = cfg.algorithm.is_actor_critic();
        let n_actions = self.spec.env_space.total();
        let mut rng = stream_rng(cfg.seed, STREAM_AGENT + w as u64);
        let env_seed = stream_rng(cfg.seed, STREAM_ENV + w as u64).next_u64() ^ self.env.seed();
        let mut env = self.env.with_seed(env_seed).build()?;
        let final_epsilon = if actor_critic {
            0.0
        } else {
            draw_final_epsilon(&cfg.epsilon_final_set, &mut rng)
        };

        let mut obs = env.reset();
        let mut local = Vec::new();
        let mut local_target = Vec::new();
        let mut seen_target = u64::MAX;
        while !self.abort.load(Ordering::Relaxed) && self.steps.load(Ordering::SeqCst) < cfg.total_steps {
            self.shared.params.snapshot_into(&mut local);
            let mut traj = Trajectory {
                steps: Vec::with_capacity(cfg.rollout_len),
                bootstrap_observation: None,
            };
            let mut terminal = false;
            let mut last_t = 0;
            for _ in 0..cfg.rollout_len {
                let output = self.model.forward(&local, &obs)?;
                let scores = self.spec.scores(&output)?;
                let action = if actor_critic {
                    sample_categorical(&softmax(&scores), &mut rng)
                } else {
                    let eps = schedule_value(
                        ScheduleKind::Epsilon,
                        cfg,
                        self.steps.load(Ordering::Relaxed),
                        final_epsilon,
                    );
                    if rng.gen::<f64>() < eps {
                        rng.gen_range(0..n_actions)
                    } else {
                        argmax(&scores)
                    }
                };
                let outcome = env.step(action)?;
                let t = self.steps.fetch_add(1, Ordering::SeqCst) + 1;
                last_t = t;
                self.on_global_step(t, &rng, &tx);
                traj.steps.push(Transition {
                    observation: std::mem::replace(&mut obs, outcome.observation),
                    action,
                    reward: outcome.reward,
                    output,
                });
                if outcome.terminal {
                    obs = env.reset();
                    terminal = true;
                    break;
                }
            }
            if !terminal {
                traj.bootstrap_observation = Some(obs.clone());
            }

            let grad = if actor_critic {
                let (d_theta, d_w) = actor_critic_grads(&traj, &local, self.model, self.spec, cfg.beta, cfg.gamma)?;
                // Descend on the value loss, ascend on the actor objective.
                d_w.0.iter().zip(&d_theta.0).map(|(w, t)| w - t).collect::<Vec<f64>>()
            } else {
                let target = self.target.as_ref().expect("Q-learning runs keep a target");
                let version = self.target_version.load(Ordering::SeqCst);
                if version != seen_target {
                    target.snapshot_into(&mut local_target);
                    seen_target = version;
                }
                q_learning_grads(&traj, &local, self.model, self.spec, &local_target, cfg.gamma)?.0
            };
            let lr = schedule_value(ScheduleKind::LearningRate, cfg, last_t, 0.0);
            self.shared.apply(&grad, lr)?;
        }
        Ok(RngState::capture(&rng))
    }

    fn evaluate_jobs<F>(
        &self,
        rx: std::sync::mpsc::Receiver<EvalJob>,
        on_eval: &F,
    ) -> Result<(Vec<EvalPoint>, Option<ParameterSnapshot>)>
    where
        F: Fn(&EvalPoint) -> Result<()> + Sync,
    {
        let cfg = self.config;
        let mut curve = Vec::new();
        let mut best: Option<(f64, ParameterSnapshot)> = None;
        let mut failure = None;
        for job in rx {
            if failure.is_some() {
                continue;
            }
            let snapshot = job.snapshot;
            let agent = Agent {
                spec: self.spec.clone(),
                model: self.model.clone(),
                params: snapshot.params.clone(),
            };
            let mut rng = stream_rng(cfg.seed, STREAM_EVAL + snapshot.step / cfg.eval_interval);
            let result = evaluate(&agent, self.env, cfg.eval_episodes, cfg.eval_cap, &mut rng).and_then(|(mean, std)| {
                let point = EvalPoint {
                    step: snapshot.step,
                    mean_return: mean,
                    std_return: std,
                };
                on_eval(&point)?;
                Ok(point)
            });
            match result {
                Ok(point) => {
                    log::info!("step {} mean return {:.4} (std {:.4})", point.step, point.mean_return, point.std_return);
                    curve.push(point);
                    if best.as_ref().is_none_or(|(m, _)| point.mean_return > *m) {
                        best = Some((point.mean_return, snapshot));
                    }
                }
                Err(e) => {
                    self.abort.store(true, Ordering::Relaxed);
                    failure = Some(e);
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        curve.sort_by_key(|p| p.step);
        Ok((curve, best.map(|(_, s)| s)))
    }
}
