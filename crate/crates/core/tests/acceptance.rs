//! Acceptance criteria. Each test prints one `ACCEPTANCE <n> ... PASS|FAIL`
//! line straight to stdout (bypassing libtest capture) and then asserts.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use farl::algorithms::gradients::Trajectory;
use farl::algorithms::{
    actor_critic_grads, run_training, Agent, AgentSpec, Algorithm, ApproximatorKind, TrainConfig, Transition,
};
use farl::analysis::{evaluate, robustness_sweep, sweep_rng, temperature_policy, BestKMixture, SweepSpec};
use farl::approximators::{grad_check::grad_check, grad_check::LossSpec, Approximator, NetworkArch, TabularArch};
use farl::environments::{CompositeBanditConfig, EnvConfig, HunterGridConfig, Observation};
use farl::factored_actions::{composite_policy, entropy, softmax, CombinationRule, FactorLogits, FactoredActionSpace};
use farl::harness::{load_checkpoint, run_subcommand, save_checkpoint, AgentDescriptor, AgentIdentity, Checkpoint};
use farl::oracle::exact_product_distribution;
use farl::rng::{argmax, stream_rng, RngState};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout();
    let _ = writeln!(out, "ACCEPTANCE {id:>2} {name}: {status} ({detail})");
    let _ = out.flush();
}

fn fixture_greedy_return() -> f64 {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hunter5_oracle.csv");
    let mut rdr = csv::Reader::from_path(path).expect("fixture present");
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "greedy_return").expect("greedy_return column");
    let row = rdr.records().next().expect("one row").unwrap();
    row[col].parse().unwrap()
}

#[test]
fn criterion_01_additive_identity() {
    let start = Instant::now();
    let space = FactoredActionSpace::move_and_fire();
    let mut rng = stream_rng(101, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let per_factor: Vec<Vec<f64>> = space
            .sizes()
            .iter()
            .map(|&n| (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let factor_softmaxes: Vec<Vec<f64>> = per_factor.iter().map(|v| softmax(v)).collect();
        let product = exact_product_distribution(&factor_softmaxes).unwrap();
        let composite = composite_policy(CombinationRule::Sum, &FactorLogits::new(per_factor), &space).unwrap();
        for (a, b) in composite.iter().zip(&product) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-10 && elapsed < Duration::from_secs(5);
    report(1, "additive combination identity", pass, format!("max err {worst:.3e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let mut rng = stream_rng(202, 0);
    let mut worst = [0.0f64; 4];
    let instances = 100;
    for seed in 0..instances {
        let input_dim = rng.gen_range(1..6);
        let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(2..8)).collect();
        let algorithm_heads = vec![3, 3, 2];
        let ac = Approximator::Network(NetworkArch {
            input_dim,
            hidden: hidden.clone(),
            head_sizes: algorithm_heads.clone(),
            value_head: true,
        });
        let q = Approximator::Network(NetworkArch {
            input_dim,
            hidden,
            head_sizes: algorithm_heads,
            value_head: false,
        });
        let rule = CombinationRule::ALL[seed as usize % CombinationRule::ALL.len()];
        let checks = [
            grad_check(&ac, seed, LossSpec::PolicyGradient(rule)),
            grad_check(&ac, seed, LossSpec::ValueLoss),
            grad_check(&ac, seed, LossSpec::Entropy(rule)),
            grad_check(&q, seed, LossSpec::TdError),
        ];
        for (w, c) in worst.iter_mut().zip(checks) {
            *w = w.max(c.unwrap());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&w| w < 1e-4) && elapsed < Duration::from_secs(60);
    report(
        2,
        "gradient correctness",
        pass,
        format!(
            "{instances} instances each; max rel err pg {:.2e}, value {:.2e}, entropy {:.2e}, td {:.2e}; {elapsed:.2?}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_cross_factor_learning() {
    let env = EnvConfig::Hunter(HunterGridConfig::default());
    let space = env.action_space().unwrap();
    let spec = AgentSpec::new(Algorithm::Fara3c, CombinationRule::Sum, space.clone()).unwrap();
    let arch = spec.approximator(&env, ApproximatorKind::Network, &[16, 16]);
    let model = arch.build().unwrap();
    let params = model.init(3).0;
    let mut grid = env.build().unwrap();
    let obs: Observation = grid.reset();

    // Encoding: horizontal 0 = left, vertical 0 = up, fire 0 = hold.
    let (left, up, hold) = (0usize, 0usize, 0usize);
    let executed = space.compose_index(&[left, up, hold]).unwrap();
    let output = model.forward(&params, &obs).unwrap();
    let traj = Trajectory {
        steps: vec![Transition {
            observation: obs.clone(),
            action: executed,
            reward: 1.0,
            output: output.clone(),
        }],
        bootstrap_observation: None,
    };
    let (d_theta, _) = actor_critic_grads(&traj, &params, &model, &spec, 0.0, 0.99).unwrap();
    let lr = 0.1;
    let updated: Vec<f64> = params.iter().zip(&d_theta.0).map(|(p, g)| p + lr * g).collect();
    let after = model.forward(&updated, &obs).unwrap();

    let up_delta = after.factor_logits.per_factor[1][up] - output.factor_logits.per_factor[1][up];
    let sharing: Vec<usize> = (0..space.total()).filter(|&i| space.factor_value(i, 1) == up).collect();
    let deltas: Vec<f64> = sharing
        .iter()
        .map(|&i| {
            let v = space.decompose_index(i).unwrap().factor_values[1];
            after.factor_logits.per_factor[1][v] - output.factor_logits.per_factor[1][v]
        })
        .collect();
    let identical = deltas.iter().all(|d| d.to_bits() == up_delta.to_bits());
    let pass = up_delta != 0.0 && sharing.len() == 6 && sharing.contains(&executed) && identical;
    report(
        3,
        "cross-factor learning",
        pass,
        format!("up-entry delta {up_delta:.3e} shared by {} composites, identical = {identical}", sharing.len()),
    );
    assert!(pass);
}

fn tabular_config(algorithm: Algorithm, steps: u64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::defaults(algorithm).with_total_steps(steps);
    c.approximator = ApproximatorKind::Tabular;
    c.seed = seed;
    c
}

#[test]
fn criterion_04_q_oracle_convergence() {
    let start = Instant::now();
    let bandit = CompositeBanditConfig::default();
    let best = bandit.best_arm();
    let env = EnvConfig::Bandit(bandit);
    let mut arms = Vec::new();
    for seed in 0..3 {
        let mut c = tabular_config(Algorithm::Faraql, 50_000, seed);
        c.eval_interval = 10_000;
        let out = run_training(&c, &env).unwrap();
        let agent = out.agent(&out.last).unwrap();
        let q = agent.scores(&Observation {
            features: vec![1.0],
            state_index: 0,
        });
        arms.push(argmax(&q.unwrap()));
    }
    let elapsed = start.elapsed();
    let hits = arms.iter().filter(|&&a| a == best).count();
    let pass = hits == 3 && elapsed < Duration::from_secs(30);
    report(
        4,
        "Q-path oracle convergence",
        pass,
        format!("greedy arms {arms:?} vs optimal {best}: {hits}/3; {elapsed:.2?}"),
    );
    assert!(pass);
}

/// Learning rate for the tabular actor-critic run; see the README.
const TABULAR_AC_LR: f64 = 0.002;

#[test]
fn criterion_05_actor_critic_oracle_convergence() {
    let start = Instant::now();
    let target = fixture_greedy_return();
    let env = EnvConfig::Hunter(HunterGridConfig::default());
    let mut finals = Vec::new();
    for seed in 0..3 {
        let mut c = tabular_config(Algorithm::Fara3c, 2_000_000, seed);
        c.lr_initial = TABULAR_AC_LR;
        let out = run_training(&c, &env).unwrap();
        finals.push(out.report.eval_curve.last().expect("eval points").mean_return);
    }
    let elapsed = start.elapsed();
    let bar = 0.9 * target;
    let hits = finals.iter().filter(|&&m| m >= bar).count();
    let pass = hits >= 2 && elapsed < Duration::from_secs(600);
    report(
        5,
        "actor-critic oracle convergence",
        pass,
        format!("final means {finals:.3?} vs 0.9 x {target:.4} = {bar:.4}: {hits}/3; {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_combiner_comparison() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let status = run_subcommand(["farl", "compare-combiners", "--env", "hunter", "--steps", "1000000", "--seed", "0", "--out", &out]);
    let mut finals: Vec<(String, f64)> = Vec::new();
    if status == 0 {
        let mut rdr = csv::Reader::from_path(dir.path().join("combiners.csv")).unwrap();
        for row in rdr.deserialize::<farl::harness::CombinerRow>() {
            let row = row.unwrap();
            match finals.iter_mut().find(|(r, _)| *r == row.rule) {
                Some(entry) => entry.1 = row.mean_return,
                None => finals.push((row.rule.clone(), row.mean_return)),
            }
        }
    }
    let elapsed = start.elapsed();
    let mut scores: Vec<f64> = finals.iter().map(|f| f.1).collect();
    scores.sort_by(f64::total_cmp);
    let median = if scores.len() == 6 { (scores[2] + scores[3]) / 2.0 } else { f64::NAN };
    let sum = finals.iter().find(|f| f.0 == "sum").map(|f| f.1).unwrap_or(f64::NAN);
    let pass = status == 0 && finals.len() == 6 && sum >= median && elapsed < Duration::from_secs(1800);
    let listing: Vec<String> = finals.iter().map(|(r, m)| format!("{r} {m:.3}")).collect();
    report(
        6,
        "combiner comparison (sum >= median)",
        pass,
        format!("{}; median {median:.3}; {elapsed:.1?}", listing.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_07_temperature_structure() {
    // Bandit rewards are all positive, so an untrained agent normalizes.
    let env = EnvConfig::Bandit(CompositeBanditConfig::default());
    let spec = AgentSpec::new(Algorithm::Fara3c, CombinationRule::Sum, env.action_space().unwrap()).unwrap();
    let model = spec.approximator(&env, ApproximatorKind::Network, &[64, 64]).build().unwrap();
    let agent = Agent {
        params: model.init(17).0,
        spec,
        model,
    };
    let sweep = SweepSpec {
        episodes_per_point: 200,
        seed: 5,
        ..SweepSpec::default_temperature()
    };
    let curve = robustness_sweep(&agent, &env, &sweep, 200).unwrap();
    let plain = evaluate(&agent, &env, 200, 200, &mut sweep_rng(5)).unwrap();
    let z1 = curve.points[0];
    let bit_exact = z1.param == 1.0
        && z1.raw_mean.to_bits() == plain.0.to_bits()
        && z1.raw_std.to_bits() == plain.1.to_bits();

    let mut rng = stream_rng(707, 0);
    let mut monotone = 0;
    for _ in 0..1000 {
        let g: Vec<f64> = (0..18).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let hs: Vec<f64> = sweep.values.iter().map(|&z| entropy(&temperature_policy(&g, z).unwrap())).collect();
        if hs.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
    }
    let pass = bit_exact && monotone == 1000;
    report(
        7,
        "temperature structure",
        pass,
        format!("Z=1 bit-exact = {bit_exact}; entropy non-decreasing for {monotone}/1000 logit vectors"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_best_k_mixture() {
    let mut rng = stream_rng(808, 0);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 20.0).collect();
    let k = 2;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..18).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
        let z: f64 = raw.iter().sum();
        let policy: Vec<f64> = raw.iter().map(|x| x / z).collect();
        // Top two by scanning: first maximum, then first maximum of the rest.
        let first = argmax(&policy);
        let mut rest = policy.clone();
        rest[first] = f64::NEG_INFINITY;
        let second = argmax(&rest);
        for &eps in &grid {
            let expected: Vec<f64> = policy
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let bonus = if j == first || j == second { eps / k as f64 } else { 0.0 };
                    (1.0 - eps) * p + bonus
                })
                .collect();
            let got = BestKMixture::new(&policy, eps, k).unwrap().probabilities();
            if got.iter().zip(&expected).any(|(a, b)| a.to_bits() != b.to_bits()) {
                mismatches += 1;
            }
        }
    }
    let pass = mismatches == 0;
    report(
        8,
        "best-k mixture exactness",
        pass,
        format!("1000 policies x {} epsilons, {mismatches} mismatches", grid.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_09_strict_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut csvs = Vec::new();
    for d in &dirs {
        let out = d.path().to_str().unwrap();
        let status = run_subcommand([
            "farl", "train", "--algo", "fara3c", "--env", "hunter", "--steps", "100000", "--seed", "11", "--strict",
            "--out", out,
        ]);
        assert_eq!(status, 0);
        csvs.push(std::fs::read(d.path().join("eval.csv")).unwrap());
    }
    let rows = String::from_utf8_lossy(&csvs[0]).lines().count().saturating_sub(1);
    let pass = csvs[0] == csvs[1] && rows > 0;
    report(9, "strict-mode determinism", pass, format!("{rows} eval rows, identical = {}", csvs[0] == csvs[1]));
    assert!(pass);
}

fn random_checkpoint(rng: &mut impl Rng) -> Checkpoint {
    let env = if rng.gen_bool(0.5) {
        EnvConfig::Hunter(HunterGridConfig {
            width: rng.gen_range(2..5),
            height: rng.gen_range(2..5),
            seed: rng.gen(),
            ..Default::default()
        })
    } else {
        EnvConfig::Bandit(CompositeBanditConfig {
            seed: rng.gen(),
            ..Default::default()
        })
    };
    let algorithm = Algorithm::ALL[rng.gen_range(0..4)];
    let combination = if algorithm.is_actor_critic() {
        CombinationRule::ALL[rng.gen_range(0..6)]
    } else {
        CombinationRule::Sum
    };
    let spec = AgentSpec::new(algorithm, combination, env.action_space().unwrap()).unwrap();
    let approximator = if rng.gen_bool(0.5) {
        let hidden: Vec<usize> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..10)).collect();
        spec.approximator(&env, ApproximatorKind::Network, &hidden)
    } else {
        Approximator::Tabular(TabularArch {
            n_states: env.n_states(),
            head_sizes: spec.head_sizes(),
            value_head: algorithm.is_actor_critic(),
        })
    };
    let n = approximator.num_params();
    let mut floats = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from_bits(rng.next_u64())).collect() };
    let params = floats(n);
    let mean_square = floats(n);
    let rng_states = (0..rng.gen_range(0..5))
        .map(|_| RngState::capture(&stream_rng(rng.gen(), rng.gen())))
        .collect();
    Checkpoint::new(
        AgentDescriptor {
            identity: AgentIdentity {
                algorithm: spec.algorithm,
                combination: spec.rule,
                approximator,
                env,
            },
            rmsprop_decay: rng.gen_range(0.0..1.0),
            rmsprop_damping: rng.gen_range(1e-10..1e-6),
        },
        rng.gen(),
        params,
        mean_square,
        rng_states,
    )
}

#[test]
fn criterion_10_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = stream_rng(1010, 0);
    let mut identical = 0;
    for i in 0..100 {
        let ckpt = random_checkpoint(&mut rng);
        let a = dir.path().join(format!("{i}-a.ckpt"));
        let b = dir.path().join(format!("{i}-b.ckpt"));
        save_checkpoint(&a, &ckpt).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        save_checkpoint(&b, &loaded).unwrap();
        if std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() {
            identical += 1;
        }
    }
    let pass = identical == 100;
    report(10, "checkpoint round trip", pass, format!("{identical}/100 byte-identical"));
    assert!(pass);
}
