//! Policy robustness probes: best-k corruption, temperature noise, and
//! evaluation sweeps over the corruption strength.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::algorithms::Agent;
use crate::environments::EnvConfig;
use crate::error::{Error, Result};
use crate::factored_actions::softmax;
use crate::rng::{sample_categorical, stream_rng, STREAM_EVAL};

const DISTRIBUTION_TOL: f64 = 1e-9;

pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Distribution("empty distribution".into()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Distribution("entries must be finite and non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::Distribution(format!("entries sum to {total}, not 1")));
    }
    Ok(())
}

/// Indices of the `k` largest values, ties broken by lowest index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// `(1 - epsilon) * policy + epsilon * Uniform(top-k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestKMixture {
    policy: Vec<f64>,
    best: Vec<usize>,
    epsilon: f64,
}

impl BestKMixture {
    /// Ranks actions by `policy` itself.
    pub fn new(policy: &[f64], epsilon: f64, k: usize) -> Result<Self> {
        Self::with_ranking(policy, policy, epsilon, k)
    }

    /// Ranks actions by `ranking`, e.g. Q-values for a Q-learning agent.
    pub fn with_ranking(policy: &[f64], ranking: &[f64], epsilon: f64, k: usize) -> Result<Self> {
        validate_distribution(policy)?;
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::validation("epsilon", format!("{epsilon} outside [0, 1]")));
        }
        if k < 1 || k > policy.len() {
            return Err(Error::validation("k", format!("{k} outside [1, {}]", policy.len())));
        }
        if ranking.len() != policy.len() {
            return Err(Error::Shape {
                context: "best-k ranking",
                expected: policy.len(),
                actual: ranking.len(),
            });
        }
        Ok(BestKMixture {
            policy: policy.to_vec(),
            best: top_k(ranking, k),
            epsilon,
        })
    }

    pub fn best(&self) -> &[usize] {
        &self.best
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.policy.iter().map(|x| (1.0 - self.epsilon) * x).collect();
        let share = self.epsilon / self.best.len() as f64;
        for &i in &self.best {
            p[i] += share;
        }
        p
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if rng.gen::<f64>() < self.epsilon {
            self.best[rng.gen_range(0..self.best.len())]
        } else {
            sample_categorical(&self.policy, rng)
        }
    }
}

pub fn corrupt_best_k<R: Rng + ?Sized>(policy: &[f64], epsilon: f64, k: usize, rng: &mut R) -> Result<usize> {
    Ok(BestKMixture::new(policy, epsilon, k)?.sample(rng))
}

/// `softmax(logits / z)`.
pub fn temperature_policy(logits: &[f64], z: f64) -> Result<Vec<f64>> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::validation("temperature", format!("Z must be finite and > 0, got {z}")));
    }
    if logits.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let scaled: Vec<f64> = logits.iter().map(|g| g / z).collect();
    Ok(softmax(&scaled))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    None,
    BestK { epsilon: f64, k: usize },
    Temperature { z: f64 },
}

/// Mean and population std of undiscounted returns over `episodes` episodes,
/// each cut off after `cap` steps.
pub fn evaluate<R: RngCore>(
    agent: &Agent,
    env: &EnvConfig,
    episodes: usize,
    cap: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    evaluate_corrupted(agent, env, episodes, cap, Corruption::None, rng)
}

pub fn evaluate_corrupted<R: RngCore>(
    agent: &Agent,
    env: &EnvConfig,
    episodes: usize,
    cap: usize,
    corruption: Corruption,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if episodes < 1 {
        return Err(Error::validation("episodes", "must be at least 1"));
    }
    let mut env = env.with_seed(rng.next_u64() ^ env.seed()).build()?;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        for _ in 0..cap {
            let scores = agent.scores(&obs)?;
            let action = match corruption {
                Corruption::None => sample_categorical(&agent.policy(&scores), rng),
                Corruption::BestK { epsilon, k } => {
                    let policy = agent.policy(&scores);
                    let ranking = if agent.spec.algorithm.is_actor_critic() { &policy } else { &scores };
                    BestKMixture::with_ranking(&policy, ranking, epsilon, k)?.sample(rng)
                }
                Corruption::Temperature { z } => sample_categorical(&temperature_policy(&scores, z)?, rng),
            };
            let outcome = env.step(action)?;
            total += outcome.reward;
            obs = outcome.observation;
            if outcome.terminal {
                break;
            }
        }
        returns.push(total);
    }
    Ok(mean_and_std(&returns))
}

/// Mean and population standard deviation.
pub fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    BestK,
    Temperature,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::BestK => "best_k",
            SweepKind::Temperature => "temperature",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    pub k: usize,
    pub episodes_per_point: usize,
    pub seed: u64,
}

impl SweepSpec {
    /// epsilon in {0, 0.05, ..., 0.5} with k = 2.
    pub fn default_best_k() -> Self {
        SweepSpec {
            kind: SweepKind::BestK,
            values: (0..=10).map(|i| i as f64 / 20.0).collect(),
            k: 2,
            episodes_per_point: 100,
            seed: 0,
        }
    }

    /// Z in {1.0, 1.25, ..., 3.0}.
    pub fn default_temperature() -> Self {
        SweepSpec {
            kind: SweepKind::Temperature,
            values: (0..=8).map(|i| 1.0 + i as f64 * 0.25).collect(),
            k: 2,
            episodes_per_point: 100,
            seed: 0,
        }
    }

    pub fn default_for(kind: SweepKind) -> Self {
        match kind {
            SweepKind::BestK => Self::default_best_k(),
            SweepKind::Temperature => Self::default_temperature(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::validation("sweep.values", "must be nonempty"));
        }
        if self.episodes_per_point < 1 {
            return Err(Error::validation("sweep.episodes_per_point", "must be at least 1"));
        }
        match self.kind {
            SweepKind::BestK => {
                if self.values.iter().any(|e| !(0.0..=1.0).contains(e)) {
                    return Err(Error::validation("sweep.values", "epsilon values must lie in [0, 1]"));
                }
                if self.k < 1 {
                    return Err(Error::validation("sweep.k", "must be at least 1"));
                }
            }
            SweepKind::Temperature => {
                if self.values.iter().any(|z| !(*z >= 1.0 && z.is_finite())) {
                    return Err(Error::validation("sweep.values", "temperatures must be finite and >= 1"));
                }
            }
        }
        Ok(())
    }

    fn corruption(&self, value: f64) -> Corruption {
        match self.kind {
            SweepKind::BestK => Corruption::BestK {
                epsilon: value,
                k: self.k,
            },
            SweepKind::Temperature => Corruption::Temperature { z: value },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessPoint {
    pub param: f64,
    pub raw_mean: f64,
    pub raw_std: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCurve {
    pub kind: SweepKind,
    pub points: Vec<RobustnessPoint>,
}

/// Scores divided by the curve maximum. A non-positive maximum has no
/// meaningful relative scale and is rejected.
pub fn normalize_scores(raw: &[f64]) -> Result<Vec<f64>> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Distribution(format!(
            "cannot normalize by non-positive maximum score {max}"
        )));
    }
    Ok(raw.iter().map(|r| r / max).collect())
}

/// Evaluate `agent` once per sweep value. Every point replays the same
/// random stream so differences come from the corruption alone.
pub fn robustness_sweep(agent: &Agent, env: &EnvConfig, spec: &SweepSpec, cap: usize) -> Result<RobustnessCurve> {
    spec.validate()?;
    let mut raw = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let mut rng = sweep_rng(spec.seed);
        raw.push(evaluate_corrupted(
            agent,
            env,
            spec.episodes_per_point,
            cap,
            spec.corruption(value),
            &mut rng,
        )?);
    }
    let means: Vec<f64> = raw.iter().map(|r| r.0).collect();
    let normalized = normalize_scores(&means)?;
    Ok(RobustnessCurve {
        kind: spec.kind,
        points: spec
            .values
            .iter()
            .zip(raw)
            .zip(normalized)
            .map(|((&param, (raw_mean, raw_std)), normalized)| RobustnessPoint {
                param,
                raw_mean,
                raw_std,
                normalized,
            })
            .collect(),
    })
}

/// The stream each sweep point evaluates with.
pub fn sweep_rng(seed: u64) -> crate::rng::AgentRng {
    stream_rng(seed, STREAM_EVAL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{AgentSpec, Algorithm};
    use crate::approximators::{Approximator, TabularArch};
    use crate::environments::CompositeBanditConfig;
    use crate::factored_actions::{entropy, CombinationRule, FactoredActionSpace};

    fn bandit_agent(algorithm: Algorithm, params: Option<Vec<f64>>) -> (Agent, EnvConfig) {
        let env = EnvConfig::Bandit(CompositeBanditConfig::default());
        let spec = AgentSpec::new(algorithm, CombinationRule::Sum, FactoredActionSpace::move_and_fire()).unwrap();
        let arch = Approximator::Tabular(TabularArch {
            n_states: 1,
            head_sizes: spec.head_sizes(),
            value_head: algorithm.is_actor_critic(),
        });
        let model = arch.build().unwrap();
        let params = params.unwrap_or_else(|| vec![0.0; model.num_params()]);
        (Agent { spec, model, params }, env)
    }

    #[test]
    fn mixture_hand_example() {
        let m = BestKMixture::new(&[0.5, 0.3, 0.2], 0.5, 2).unwrap();
        let p = m.probabilities();
        for (a, b) in p.iter().zip([0.5, 0.4, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut rng = stream_rng(3, 0);
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[m.sample(&mut rng)] += 1;
        }
        for (c, q) in counts.iter().zip(&p) {
            let sigma = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((*c as f64 - n as f64 * q).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn mixture_degenerate_cases() {
        let policy = [0.1, 0.6, 0.3];
        assert_eq!(BestKMixture::new(&policy, 0.0, 2).unwrap().probabilities(), policy.to_vec());
        let mut rng = stream_rng(0, 0);
        for _ in 0..100 {
            assert_eq!(corrupt_best_k(&policy, 1.0, 1, &mut rng).unwrap(), 1);
        }
        assert!(corrupt_best_k(&[0.5, 0.6], 0.1, 1, &mut rng).is_err());
        assert!(corrupt_best_k(&policy, 0.1, 4, &mut rng).is_err());
        assert!(corrupt_best_k(&policy, 1.5, 1, &mut rng).is_err());
    }

    #[test]
    fn top_k_ties_go_low() {
        assert_eq!(top_k(&[0.2, 0.4, 0.4, 0.0], 2), vec![1, 2]);
        assert_eq!(top_k(&[0.25; 4], 3), vec![0, 1, 2]);
    }

    #[test]
    fn temperature_examples() {
        let g = [0.3, -1.2, 2.0, 0.0];
        let p = temperature_policy(&g, 1.0).unwrap();
        for (a, b) in p.iter().zip(softmax(&g)) {
            assert!((a - b).abs() <= 1e-15);
        }
        let u = temperature_policy(&g, 1e6).unwrap();
        assert!(u.iter().all(|x| (x - 0.25).abs() < 1e-5));
        let e = std::f64::consts::E;
        let two = temperature_policy(&[2.0, 0.0], 2.0).unwrap();
        assert!((two[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((two[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!(temperature_policy(&g, 0.0).is_err());
        assert!(temperature_policy(&g, -1.0).is_err());
    }

    #[test]
    fn temperature_entropy_and_argmax() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..200 {
            let g: Vec<f64> = (0..18).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut last = 0.0;
            for z in SweepSpec::default_temperature().values {
                let p = temperature_policy(&g, z).unwrap();
                assert_eq!(crate::rng::argmax(&p), crate::rng::argmax(&g));
                let h = entropy(&p);
                assert!(h >= last - 1e-12);
                last = h;
            }
        }
    }

    #[test]
    fn default_grids() {
        let b = SweepSpec::default_best_k();
        assert_eq!(b.values.len(), 11);
        assert_eq!(b.values[10], 0.5);
        assert_eq!(b.k, 2);
        let t = SweepSpec::default_temperature();
        assert_eq!(t.values.first(), Some(&1.0));
        assert_eq!(t.values.last(), Some(&3.0));
        b.validate().unwrap();
        t.validate().unwrap();
        let bad = SweepSpec {
            values: vec![0.5],
            ..SweepSpec::default_temperature()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_episode_has_zero_std() {
        let (agent, env) = bandit_agent(Algorithm::Fara3c, None);
        let (_, std) = evaluate(&agent, &env, 1, 10, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn uniform_policy_hits_table_average() {
        let (agent, env) = bandit_agent(Algorithm::Fara3c, None);
        let EnvConfig::Bandit(cfg) = &env else { unreachable!() };
        let n = 20_000;
        let (mean, _) = evaluate(&agent, &env, n, 10, &mut stream_rng(2, 0)).unwrap();
        let mu = cfg.mean_reward();
        let var = cfg.reward_table.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / 18.0;
        assert!((mean - mu).abs() < 3.0 * (var / n as f64).sqrt(), "{mean} vs {mu}");
    }

    #[test]
    fn z_one_matches_plain_evaluation() {
        let mut rng = stream_rng(9, 0);
        let (probe, _) = bandit_agent(Algorithm::Fara3c, None);
        let params: Vec<f64> = (0..probe.params.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (agent, env) = bandit_agent(Algorithm::Fara3c, Some(params));
        let spec = SweepSpec {
            episodes_per_point: 300,
            ..SweepSpec::default_temperature()
        };
        let curve = robustness_sweep(&agent, &env, &spec, 10).unwrap();
        let plain = evaluate(&agent, &env, 300, 10, &mut sweep_rng(spec.seed)).unwrap();
        assert_eq!(curve.points[0].raw_mean.to_bits(), plain.0.to_bits());
        assert_eq!(curve.points[0].raw_std.to_bits(), plain.1.to_bits());
        let ones = curve.points.iter().filter(|p| p.normalized == 1.0).count();
        assert!(ones >= 1);
        assert!(curve.points.iter().all(|p| p.normalized <= 1.0));
    }

    #[test]
    fn constant_scores_normalize_to_one() {
        assert_eq!(normalize_scores(&[2.0, 2.0, 2.0]).unwrap(), vec![1.0; 3]);
        assert!(normalize_scores(&[-1.0, -2.0]).is_err());
    }

    #[test]
    fn q_agent_best_k_ranks_by_q() {
        let (probe, env) = bandit_agent(Algorithm::Faraql, None);
        let mut params = vec![0.0; probe.params.len()];
        params[1] = 1.0;
        let (agent, _) = bandit_agent(Algorithm::Faraql, Some(params));
        let spec = SweepSpec {
            values: vec![0.0, 1.0],
            k: 1,
            episodes_per_point: 50,
            ..SweepSpec::default_best_k()
        };
        let curve = robustness_sweep(&agent, &env, &spec, 1).unwrap();
        let EnvConfig::Bandit(cfg) = &env else { unreachable!() };
        // Boosted horizontal entry 1, ties elsewhere resolve to value 0: arm (1, 0, 0).
        let best = agent.spec.env_space.compose_index(&[1, 0, 0]).unwrap();
        assert!(curve.points[1].raw_std < 1e-12);
        assert!((curve.points[1].raw_mean - cfg.reward_table[best]).abs() < 1e-12);
    }
}
