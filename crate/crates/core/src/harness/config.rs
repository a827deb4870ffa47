//! Experiment configuration: a flat JSON document plus CLI overrides,
//! resolved against per-algorithm defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{Algorithm, ApproximatorKind, TrainConfig};
use crate::analysis::{SweepKind, SweepSpec};
use crate::environments::{CompositeBanditConfig, EnvConfig, HunterGridConfig};
use crate::error::{Error, Result};
use crate::factored_actions::CombinationRule;

pub const OUT_ENV_VAR: &str = "FARL_OUT";
pub const DEFAULT_OUT_DIR: &str = "farl-out";

/// The on-disk document. Every key is optional here; `resolve` fills in
/// defaults and rejects anything inconsistent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hunter: Option<HunterGridConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandit: Option<CompositeBanditConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combination: Option<CombinationRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approximator: Option<ApproximatorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_anneal_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_final_set: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_anneal_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_refresh_interval: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_interval: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmsprop_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmsprop_damping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepOverrides>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Hunter,
    Bandit,
}

/// Sweep settings. `values` applies only to sweeps of the matching `kind`
/// (or to both kinds when `kind` is absent).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SweepKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes_per_point: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SweepOverrides {
    pub fn spec(&self, kind: SweepKind) -> SweepSpec {
        let mut spec = SweepSpec::default_for(kind);
        if self.kind.is_none_or(|k| k == kind) {
            if let Some(v) = &self.values {
                spec.values = v.clone();
            }
        }
        if let Some(k) = self.k {
            spec.k = k;
        }
        if let Some(n) = self.episodes_per_point {
            spec.episodes_per_point = n;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec
    }
}

/// Values inherited from a checkpoint when the document leaves them unset.
#[derive(Debug, Clone)]
pub struct Inherited {
    pub algorithm: Algorithm,
    pub combination: CombinationRule,
    pub approximator: ApproximatorKind,
    pub hidden: Option<Vec<usize>>,
    pub env: EnvConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub sweep: SweepOverrides,
}

pub fn parse_config_str(text: &str) -> Result<RawConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn parse_config_file(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

impl RawConfig {
    /// Later values win: every `Some` field of `other` replaces ours.
    pub fn overlay(&mut self, other: RawConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            label, out_dir, algorithm, env, hunter, bandit, combination, approximator, hidden, workers,
            total_steps, rollout_len, n_step, gamma, beta, lr_initial, lr_final, lr_anneal_steps,
            epsilon_final_set, epsilon_anneal_steps, target_refresh_interval, eval_interval, eval_episodes,
            eval_cap, rmsprop_decay, rmsprop_damping, strict, seed, sweep
        );
    }

    pub fn resolve(&self, inherit: Option<&Inherited>, out_override: Option<&Path>) -> Result<ExperimentConfig> {
        let algorithm = self
            .algorithm
            .or(inherit.map(|i| i.algorithm))
            .ok_or_else(|| Error::validation("algorithm", "required (a3c, fara3c, aql or faraql)"))?;
        let env = self.resolve_env(inherit)?;

        let mut t = TrainConfig::defaults(algorithm);
        if let Some(ts) = self.total_steps {
            t = t.with_total_steps(ts);
        }
        if let Some(i) = inherit {
            t.combination = i.combination;
            t.approximator = i.approximator;
            if let Some(h) = &i.hidden {
                t.hidden = h.clone();
            }
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { t.$f = v.clone(); } )* };
        }
        set!(
            combination, approximator, hidden, workers, rollout_len, gamma, beta, lr_initial, lr_final,
            lr_anneal_steps, epsilon_final_set, epsilon_anneal_steps, target_refresh_interval, eval_interval,
            eval_episodes, eval_cap, rmsprop_decay, rmsprop_damping, strict, seed
        );
        t.n_step = self.n_step.unwrap_or(t.rollout_len);
        if t.strict && self.workers.is_none() {
            t.workers = 1;
        }
        t.validate()?;

        let label = match &self.label {
            Some(l) if l.trim().is_empty() => return Err(Error::validation("label", "must be nonempty")),
            Some(l) => l.clone(),
            None => format!("{}-{}-seed{}", algorithm, env.name(), t.seed),
        };
        let out_dir = out_override
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let sweep = self.sweep.clone().unwrap_or_default();
        for kind in [SweepKind::BestK, SweepKind::Temperature] {
            if sweep.kind.is_none_or(|k| k == kind) {
                sweep.spec(kind).validate()?;
            }
        }
        Ok(ExperimentConfig {
            label,
            out_dir,
            train: t,
            env,
            sweep,
        })
    }

    fn resolve_env(&self, inherit: Option<&Inherited>) -> Result<EnvConfig> {
        let name = match (self.env, inherit) {
            (Some(n), _) => n,
            (None, Some(i)) if self.hunter.is_none() && self.bandit.is_none() => return Ok(i.env.clone()),
            (None, Some(i)) => match i.env {
                EnvConfig::Hunter(_) => EnvName::Hunter,
                EnvConfig::Bandit(_) => EnvName::Bandit,
            },
            (None, None) => return Err(Error::validation("env", "required (hunter or bandit)")),
        };
        let env = match name {
            EnvName::Hunter => {
                if self.bandit.is_some() {
                    return Err(Error::validation("bandit", "given but env is \"hunter\""));
                }
                EnvConfig::Hunter(self.hunter.clone().unwrap_or_default())
            }
            EnvName::Bandit => {
                if self.hunter.is_some() {
                    return Err(Error::validation("hunter", "given but env is \"bandit\""));
                }
                EnvConfig::Bandit(self.bandit.clone().unwrap_or_default())
            }
        };
        env.validate()?;
        Ok(env)
    }
}

impl ExperimentConfig {
    /// The fully populated document; resolving it again yields `self`.
    pub fn to_raw(&self) -> RawConfig {
        let t = &self.train;
        let (env, hunter, bandit) = match &self.env {
            EnvConfig::Hunter(h) => (EnvName::Hunter, Some(h.clone()), None),
            EnvConfig::Bandit(b) => (EnvName::Bandit, None, Some(b.clone())),
        };
        RawConfig {
            label: Some(self.label.clone()),
            out_dir: Some(self.out_dir.clone()),
            algorithm: Some(t.algorithm),
            env: Some(env),
            hunter,
            bandit,
            combination: Some(t.combination),
            approximator: Some(t.approximator),
            hidden: Some(t.hidden.clone()),
            workers: Some(t.workers),
            total_steps: Some(t.total_steps),
            rollout_len: Some(t.rollout_len),
            n_step: Some(t.n_step),
            gamma: Some(t.gamma),
            beta: Some(t.beta),
            lr_initial: Some(t.lr_initial),
            lr_final: Some(t.lr_final),
            lr_anneal_steps: Some(t.lr_anneal_steps),
            epsilon_final_set: Some(t.epsilon_final_set.clone()),
            epsilon_anneal_steps: Some(t.epsilon_anneal_steps),
            target_refresh_interval: Some(t.target_refresh_interval),
            eval_interval: Some(t.eval_interval),
            eval_episodes: Some(t.eval_episodes),
            eval_cap: Some(t.eval_cap),
            rmsprop_decay: Some(t.rmsprop_decay),
            rmsprop_damping: Some(t.rmsprop_damping),
            strict: Some(t.strict),
            seed: Some(t.seed),
            sweep: Some(self.sweep.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("config serializes")
    }

    pub fn inherited(&self) -> Inherited {
        Inherited {
            algorithm: self.train.algorithm,
            combination: self.train.combination,
            approximator: self.train.approximator,
            hidden: Some(self.train.hidden.clone()),
            env: self.env.clone(),
        }
    }
}

/// What a checkpoint binds to: the agent family and the environment it
/// acts in. Training-only settings are left out so a checkpoint can be
/// re-evaluated under a different budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub algorithm: Algorithm,
    pub combination: CombinationRule,
    pub approximator: crate::approximators::Approximator,
    pub env: EnvConfig,
}

pub fn config_hash(identity: &AgentIdentity) -> [u8; 32] {
    let bytes = serde_json::to_vec(identity).expect("identity serializes");
    Sha256::digest(&bytes).into()
}
