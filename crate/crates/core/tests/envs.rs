use pbl_core::blbm::{blbm_fit, BlbmConfig};
use pbl_core::dtr::{backward_induct, DecisionRule};
use pbl_core::envs::{oracle_policy, Env, EnvKind, EnvSpec};
use pbl_core::evaluation::{coverage_diagnostic, ope_importance_sampling, regret};
use pbl_core::features::FeatureMap;
use pbl_core::learner::{FeatureConfig, LearnerConfig, Method};
use pbl_core::numerics::{splitmix64, RandomSeed};
use pbl_core::pessimism::ClosedFormBound;
use pbl_core::Result;

struct AlwaysWrong(Env);

impl DecisionRule for AlwaysWrong {
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    fn act(&self, stage: usize, history: &[f64]) -> Result<usize> {
        Ok(1 - self.0.optimal_action(stage, history)?)
    }
}

/// Fair coin keyed on the state bits.
struct Coin;

impl DecisionRule for Coin {
    fn horizon(&self) -> usize {
        1
    }

    fn act(&self, _stage: usize, history: &[f64]) -> Result<usize> {
        Ok((splitmix64(history[0].to_bits() ^ history[1].to_bits()) >> 63) as usize)
    }
}

fn within(est: f64, se: f64, want: f64) {
    assert!((est - want).abs() <= 3.0 * se, "{est} ± {se} vs {want}");
}

#[test]
fn toy_regret_of_wrong_and_random_policies() {
    let env = Env::new(EnvSpec::new(EnvKind::Toy)).unwrap();
    let wrong = regret(&AlwaysWrong(env.clone()), &env, 200_000, RandomSeed(1)).unwrap();
    within(wrong.mean, wrong.se, 0.2 * 5f64.sqrt() * (2.0 / std::f64::consts::PI).sqrt());
    assert!((wrong.mean - 0.35682).abs() < 3.0 * wrong.se);
    let coin = regret(&Coin, &env, 200_000, RandomSeed(2)).unwrap();
    within(coin.mean, coin.se, 0.17841);
}

#[test]
fn regret_ignores_reward_noise() {
    let quiet = Env::new(EnvSpec::new(EnvKind::SingleLinear).with_noise(0.0)).unwrap();
    let loud = Env::new(EnvSpec::new(EnvKind::SingleLinear).with_noise(1.0)).unwrap();
    let rule = AlwaysWrong(quiet.clone());
    let a = regret(&rule, &quiet, 5000, RandomSeed(3)).unwrap();
    let b = regret(&rule, &loud, 5000, RandomSeed(3)).unwrap();
    assert_eq!(a.mean, b.mean);
}

#[test]
fn oracle_policy_artifact_has_zero_regret_on_every_kind() {
    for kind in [
        EnvKind::Toy,
        EnvKind::SingleLinear,
        EnvKind::SingleNonlinear,
        EnvKind::TwoStageLinear,
        EnvKind::TwoStageNonlinear,
    ] {
        let spec = EnvSpec {
            oracle_inner_draws: 200,
            ..EnvSpec::new(kind)
        };
        let env = Env::new(spec.clone()).unwrap();
        let r = regret(&oracle_policy(&spec).unwrap(), &env, 300, RandomSeed(4)).unwrap();
        assert_eq!(r.mean, 0.0, "{kind:?}");
    }
}

#[test]
fn importance_sampling_matches_oracle_value() {
    let env = Env::new(EnvSpec::new(EnvKind::SingleLinear)).unwrap();
    let data = env.gen_dataset(100_000, RandomSeed(5)).unwrap();
    let is = ope_importance_sampling(&data, &env).unwrap();
    let truth = env.oracle_value(200_000, RandomSeed(6)).unwrap();
    let se = (is.se * is.se + truth.se * truth.se).sqrt();
    within(is.mean, se, truth.mean);
}

#[test]
fn importance_sampling_is_unbiased_over_resamples() {
    let env = Env::new(EnvSpec::new(EnvKind::TwoStageLinear).with_epsilon(0.7)).unwrap();
    let rule = AlwaysWrong(env.clone());
    let draws: Vec<f64> = (0..200)
        .map(|r| {
            let data = env.gen_dataset(500, RandomSeed(100 + r)).unwrap();
            ope_importance_sampling(&data, &rule).unwrap().mean
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / 200.0;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    let truth = pbl_core::envs::Estimate::from_draws(&env.rollout_values(&rule, 400_000, RandomSeed(7)).unwrap());
    let se = ((sd * sd) / 200.0 + truth.se * truth.se).sqrt();
    within(mean, se, truth.mean);
}

#[test]
fn well_specified_blbm_with_many_samples_covers() {
    let env = Env::new(EnvSpec::new(EnvKind::SingleLinear)).unwrap();
    let data = env.gen_single(100_000, RandomSeed(8)).unwrap();
    let map = FeatureMap::linear(3, 2, true).unwrap();
    let post = blbm_fit(&data, &map, &BlbmConfig::default()).unwrap();
    let lb = ClosedFormBound::new(map, post, 0.1).unwrap();
    let cov = coverage_diagnostic(&lb, &env, 100, RandomSeed(9)).unwrap();
    assert!(cov.max_violation <= 1e-6, "{cov:?}");
    assert_eq!(cov.points, 100);
    assert_eq!(coverage_diagnostic(&lb, &env, 100, RandomSeed(9)).unwrap(), cov);
}

#[test]
fn two_stage_induction_learns_a_useful_policy() {
    let env = Env::new(EnvSpec::new(EnvKind::TwoStageLinear)).unwrap();
    let data = env.gen_dataset(2000, RandomSeed(10)).unwrap();
    let cfg = LearnerConfig {
        features: FeatureConfig::Linear { intercept: true },
        ..LearnerConfig::with_method(Method::PblBlbm)
    };
    let policy = backward_induct(&data, &cfg, RandomSeed(11)).unwrap();
    let learned = regret(&policy, &env, 5000, RandomSeed(12)).unwrap();
    let wrong = regret(&AlwaysWrong(env.clone()), &env, 5000, RandomSeed(12)).unwrap();
    assert!(learned.mean < 0.25 * wrong.mean, "{} vs {}", learned.mean, wrong.mean);
}
