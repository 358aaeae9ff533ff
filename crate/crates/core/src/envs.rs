//! Synthetic environments with oracle access to true means and optimal
//! actions.
//!
//! Actions are 0-based. Kinds:
//!
//! * `toy`: `S ~ N(0, I₂)`, mean `(1 + 0.2a)(S₁ + 2S₂)`, noise `σ z`.
//! * `single_linear`: `s ~ N(0, I₃)`, means `0.2s₁ + 0.25s₂ + 0.3s₃` and
//!   `0.25s₁ + 0.3s₂ + 0.35s₃`.
//! * `single_nonlinear`: `s ~ U[0,1]⁵`, means `f₁(s)` and `f₂(s) = 1.2 f₁(s)`.
//! * `two_stage_linear`: `s¹ ~ N(0, I₂)`, `s² = W_aᵀ s¹ + z ∈ R³`, terminal
//!   mean from the linear pair above.
//! * `two_stage_nonlinear`: `s¹ ~ N(0, I₂)`, `s² = W_aᵀ s¹ + z ∈ R⁵`, terminal
//!   mean `f_a(s² / 10)`.
//!
//! `W₀` has i.i.d. `N(0, 1)` entries drawn from the structural seed and
//! `W₁ = W₀ + 0.05`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StageRecords, TrajectoryDataset};
use crate::dtr::{DecisionRule, StagePolicySet};
use crate::error::{domain_err, shape_err, Result};
use crate::features::{encode_history, history_dim};
use crate::numerics::{
    dot, standard_normal, standard_normal_cdf, standard_normal_pdf, Matrix, RandomSeed,
};
use crate::learner::StageArtifact;
use crate::pessimism::{argmax, ActionValues};

const LINEAR_COEF: [[f64; 3]; 2] = [[0.2, 0.25, 0.3], [0.25, 0.3, 0.35]];
const TRANSITION_SHIFT: f64 = 0.05;
pub const DEFAULT_INNER_DRAWS: usize = 1000;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Toy,
    SingleLinear,
    SingleNonlinear,
    TwoStageLinear,
    TwoStageNonlinear,
}

impl EnvKind {
    pub fn label(self) -> &'static str {
        match self {
            EnvKind::Toy => "toy",
            EnvKind::SingleLinear => "single_linear",
            EnvKind::SingleNonlinear => "single_nonlinear",
            EnvKind::TwoStageLinear => "two_stage_linear",
            EnvKind::TwoStageNonlinear => "two_stage_nonlinear",
        }
    }

    pub fn state_dims(self) -> Vec<usize> {
        match self {
            EnvKind::Toy => vec![2],
            EnvKind::SingleLinear => vec![3],
            EnvKind::SingleNonlinear => vec![5],
            EnvKind::TwoStageLinear => vec![2, 3],
            EnvKind::TwoStageNonlinear => vec![2, 5],
        }
    }

    pub fn horizon(self) -> usize {
        self.state_dims().len()
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// How `ε` maps to the behavior policy's probability of the optimal action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorConvention {
    /// `P(a = a*) = ε`.
    #[default]
    OptimalWithProbEpsilon,
    /// `P(a = a*) = 1 − ε`.
    OptimalWithProbOneMinusEpsilon,
}

fn default_epsilon() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_STD
}

fn default_inner() -> usize {
    DEFAULT_INNER_DRAWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Standard deviation of the reward noise.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Fixes the transition matrices and the cached oracle draws.
    #[serde(default)]
    pub structural_seed: u64,
    #[serde(default)]
    pub behavior: BehaviorConvention,
    /// Inner Monte Carlo budget of the nonlinear stage-1 oracle.
    #[serde(default = "default_inner")]
    pub oracle_inner_draws: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            epsilon: default_epsilon(),
            noise_std: DEFAULT_NOISE_STD,
            structural_seed: 0,
            behavior: BehaviorConvention::default(),
            oracle_inner_draws: DEFAULT_INNER_DRAWS,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(domain_err(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(domain_err(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if self.oracle_inner_draws == 0 {
            return Err(domain_err("oracle_inner_draws must be positive"));
        }
        Ok(())
    }

    /// Probability that the behavior policy takes the optimal action.
    pub fn optimal_action_probability(&self) -> f64 {
        match self.behavior {
            BehaviorConvention::OptimalWithProbEpsilon => self.epsilon,
            BehaviorConvention::OptimalWithProbOneMinusEpsilon => 1.0 - self.epsilon,
        }
    }
}

/// `[0.1 e^{4x₁} + 4 / (1 + e^{−20(x₂ − 0.5)}) + 3x₃ + 2x₄ + x₅] / 2.5`.
pub fn friedman_signal(x: &[f64]) -> f64 {
    (0.1 * (4.0 * x[0]).exp() + 4.0 / (1.0 + (-20.0 * (x[1] - 0.5)).exp()) + 3.0 * x[2] + 2.0 * x[3] + x[4]) / 2.5
}

fn nonlinear_mean(x: &[f64], a: usize) -> f64 {
    let f = friedman_signal(x);
    if a == 0 {
        f
    } else {
        1.2 * f
    }
}

/// `E[max(Y, 0)]` for `Y ~ N(μ, s²)`.
fn expected_positive_part(mu: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mu.max(0.0);
    }
    let t = mu / sd;
    mu * standard_normal_cdf(t) + sd * standard_normal_pdf(t)
}

/// Value summary from Monte Carlo draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se, count: n }
    }
}

/// An environment instance: spec plus the structural randomness it fixes.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    /// `W_a` as `d₁ × d₂` matrices, one per first-stage action.
    transitions: Vec<Matrix>,
    /// Cached inner draws `z_m` of the nonlinear stage-1 oracle.
    inner_draws: Option<Matrix>,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.kind.state_dims();
        let root = RandomSeed(spec.structural_seed).derive(&[spec.kind.tag()]);
        let mut transitions = Vec::new();
        let mut inner_draws = None;
        if dims.len() == 2 {
            let mut rng = root.derive(&[0]).rng();
            let w0: Vec<f64> = (0..dims[0] * dims[1]).map(|_| standard_normal(&mut rng)).collect();
            let w1: Vec<f64> = w0.iter().map(|v| v + TRANSITION_SHIFT).collect();
            transitions.push(Matrix::from_row_major(dims[0], dims[1], w0)?);
            transitions.push(Matrix::from_row_major(dims[0], dims[1], w1)?);
            if spec.kind == EnvKind::TwoStageNonlinear {
                let mut rng = root.derive(&[1]).rng();
                let m = spec.oracle_inner_draws;
                let z: Vec<f64> = (0..m * dims[1]).map(|_| standard_normal(&mut rng)).collect();
                inner_draws = Some(Matrix::from_row_major(m, dims[1], z)?);
            }
        }
        Ok(Self {
            spec,
            transitions,
            inner_draws,
        })
    }

    /// Two-stage environment with explicit transition matrices.
    pub fn with_transitions(spec: EnvSpec, w0: Matrix, w1: Matrix) -> Result<Self> {
        let mut env = Env::new(spec)?;
        let dims = env.spec.kind.state_dims();
        if dims.len() != 2 {
            return Err(domain_err("transition matrices only apply to two-stage kinds"));
        }
        for w in [&w0, &w1] {
            if w.rows() != dims[0] || w.cols() != dims[1] {
                return Err(shape_err(format!("transition matrix must be {}×{}", dims[0], dims[1])));
            }
        }
        env.transitions = vec![w0, w1];
        Ok(env)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn kind(&self) -> EnvKind {
        self.spec.kind
    }

    pub fn action_count(&self) -> usize {
        2
    }

    pub fn horizon(&self) -> usize {
        self.spec.kind.horizon()
    }

    pub fn state_dims(&self) -> Vec<usize> {
        self.spec.kind.state_dims()
    }

    /// Encoded history length at `stage` (0-based).
    pub fn history_dim(&self, stage: usize) -> usize {
        history_dim(&self.state_dims()[..=stage], self.action_count())
    }

    pub fn transitions(&self) -> &[Matrix] {
        &self.transitions
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.action_count() {
            return Err(domain_err(format!("action {a} out of range")));
        }
        Ok(())
    }

    /// Mean reward of the last stage given its state.
    pub fn reward_mean(&self, state: &[f64], a: usize) -> Result<f64> {
        self.check_action(a)?;
        let d = *self.state_dims().last().expect("at least one stage");
        if state.len() != d {
            return Err(domain_err(format!(
                "{} expects a final-stage state of dimension {d}, got {}",
                self.kind().label(),
                state.len()
            )));
        }
        Ok(match self.kind() {
            EnvKind::Toy => (1.0 + 0.2 * a as f64) * (state[0] + 2.0 * state[1]),
            EnvKind::SingleLinear | EnvKind::TwoStageLinear => dot(&LINEAR_COEF[a], state),
            EnvKind::SingleNonlinear => nonlinear_mean(state, a),
            EnvKind::TwoStageNonlinear => {
                let x: Vec<f64> = state.iter().map(|v| v / 10.0).collect();
                nonlinear_mean(&x, a)
            }
        })
    }

    /// `W_aᵀ s¹`.
    pub fn transition_mean(&self, s1: &[f64], a: usize) -> Result<Vec<f64>> {
        self.check_action(a)?;
        let w = self.transitions.get(a).ok_or_else(|| domain_err("single-stage kinds have no transition"))?;
        if s1.len() != w.rows() {
            return Err(shape_err(format!("first-stage state must have dimension {}", w.rows())));
        }
        Ok(w.transpose().matvec(s1)?)
    }

    /// Expected optimal stage-2 value after taking `a` in `s¹`,
    /// `g(s¹, a) = E_z[max_b Q₂(W_aᵀ s¹ + z, b)]`.
    pub fn stage_one_value(&self, s1: &[f64], a: usize) -> Result<f64> {
        let m = self.transition_mean(s1, a)?;
        match self.kind() {
            EnvKind::TwoStageLinear => {
                // max(f₀, f₁) = f₀ + (f₁ − f₀)⁺ and f₁ − f₀ = 0.05 Σ s²_j
                let base = dot(&LINEAR_COEF[0], &m);
                let mu = 0.05 * m.iter().sum::<f64>();
                let sd = 0.05 * (m.len() as f64).sqrt();
                Ok(base + expected_positive_part(mu, sd))
            }
            EnvKind::TwoStageNonlinear => {
                let z = self.inner_draws.as_ref().expect("built with the environment");
                let mut x = vec![0.0; m.len()];
                let mut total = 0.0;
                for r in 0..z.rows() {
                    for ((xi, mi), zi) in x.iter_mut().zip(&m).zip(z.row(r)) {
                        *xi = (mi + zi) / 10.0;
                    }
                    let f = friedman_signal(&x);
                    total += f.max(1.2 * f);
                }
                Ok(total / z.rows() as f64)
            }
            _ => Err(domain_err("stage-one value is defined for two-stage kinds")),
        }
    }

    /// True `Q_t(h, a)` at `stage` (0-based) for an encoded history.
    pub fn q_value(&self, stage: usize, history: &[f64], a: usize) -> Result<f64> {
        let horizon = self.horizon();
        if stage >= horizon {
            return Err(domain_err(format!("stage {} out of range", stage + 1)));
        }
        let hd = self.history_dim(stage);
        if history.len() != hd {
            return Err(domain_err(format!(
                "{} stage {} expects a history of length {hd}, got {}",
                self.kind().label(),
                stage + 1,
                history.len()
            )));
        }
        if stage + 1 == horizon {
            let d = self.state_dims()[stage];
            self.reward_mean(&history[hd - d..], a)
        } else {
            self.stage_one_value(history, a)
        }
    }

    pub fn q_values(&self, stage: usize, history: &[f64]) -> Result<Vec<f64>> {
        (0..self.action_count()).map(|a| self.q_value(stage, history, a)).collect()
    }

    /// `argmax_a Q_t(h, a)`, ties to the lowest index.
    pub fn optimal_action(&self, stage: usize, history: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(stage, history)?))
    }

    fn sample_initial_state<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.state_dims()[0];
        match self.kind() {
            EnvKind::SingleNonlinear => (0..d).map(|_| rng.random::<f64>()).collect(),
            _ => (0..d).map(|_| standard_normal(rng)).collect(),
        }
    }

    /// Behavior action and its probability given the optimal action.
    fn behavior_action<R: Rng>(&self, optimal: usize, rng: &mut R) -> (usize, f64) {
        let k = self.action_count();
        let p_opt = self.spec.optimal_action_probability();
        let p_other = (1.0 - p_opt) / (k - 1) as f64;
        let u: f64 = rng.random();
        if u < p_opt {
            (optimal, p_opt)
        } else {
            let j = rng.random_range(0..k - 1);
            (if j >= optimal { j + 1 } else { j }, p_other)
        }
    }

    /// `n` trajectories logged by the ε-greedy behavior policy.
    pub fn gen_dataset(&self, n: usize, seed: RandomSeed) -> Result<TrajectoryDataset> {
        if n == 0 {
            return Err(domain_err("dataset size must be at least 1"));
        }
        let horizon = self.horizon();
        let mut rng = seed.rng();
        let mut stages: Vec<StageRecords> = (0..horizon)
            .map(|_| StageRecords {
                states: Vec::with_capacity(n),
                actions: Vec::with_capacity(n),
                propensities: Some(Vec::with_capacity(n)),
            })
            .collect();
        let mut rewards = Vec::with_capacity(n);
        for _ in 0..n {
            let mut states: Vec<Vec<f64>> = vec![self.sample_initial_state(&mut rng)];
            let mut actions: Vec<usize> = Vec::new();
            for t in 0..horizon {
                let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
                let h = encode_history(&refs, &actions, self.action_count())?;
                let opt = self.optimal_action(t, &h)?;
                let (a, prop) = self.behavior_action(opt, &mut rng);
                stages[t].states.push(states[t].clone());
                stages[t].actions.push(a);
                stages[t].propensities.as_mut().expect("set above").push(prop);
                actions.push(a);
                if t + 1 < horizon {
                    let mut next = self.transition_mean(&states[t], a)?;
                    next.iter_mut().for_each(|v| *v += standard_normal(&mut rng));
                    states.push(next);
                } else {
                    let z = standard_normal(&mut rng);
                    rewards.push(self.reward_mean(&states[t], a)? + self.spec.noise_std * z);
                }
            }
        }
        TrajectoryDataset::new(stages, rewards, self.action_count())
    }

    /// Single-stage dataset; errors for two-stage kinds.
    pub fn gen_single(&self, n: usize, seed: RandomSeed) -> Result<Dataset> {
        if self.horizon() != 1 {
            return Err(domain_err(format!("{} is a two-stage kind", self.kind().label())));
        }
        self.gen_dataset(n, seed)?.into_single_stage()
    }

    /// Noise-free per-draw values of `rule` on `count` fresh rollouts.
    ///
    /// The initial states and transition noise depend on `seed` only, so
    /// two rules evaluated with the same seed share their random numbers.
    pub fn rollout_values(&self, rule: &dyn DecisionRule, count: usize, seed: RandomSeed) -> Result<Vec<f64>> {
        if rule.horizon() != self.horizon() {
            return Err(shape_err(format!(
                "{}-stage rule applied to a {}-stage environment",
                rule.horizon(),
                self.horizon()
            )));
        }
        let mut rng = seed.rng();
        let s1: Vec<Vec<f64>> = (0..count).map(|_| self.sample_initial_state(&mut rng)).collect();
        let a1 = rule.act_batch(0, &s1)?;
        if self.horizon() == 1 {
            return s1.iter().zip(&a1).map(|(s, &a)| self.reward_mean(s, a)).collect();
        }
        let d2 = self.state_dims()[1];
        let mut histories = Vec::with_capacity(count);
        let mut s2s = Vec::with_capacity(count);
        for (s, &a) in s1.iter().zip(&a1) {
            let mut s2 = self.transition_mean(s, a)?;
            for v in s2.iter_mut() {
                *v += standard_normal(&mut rng);
            }
            debug_assert_eq!(s2.len(), d2);
            histories.push(encode_history(&[s, &s2], &[a], self.action_count())?);
            s2s.push(s2);
        }
        let a2 = rule.act_batch(1, &histories)?;
        s2s.iter().zip(&a2).map(|(s, &a)| self.reward_mean(s, a)).collect()
    }

    /// `V(π*) = E_{s¹}[max_a Q₁(s¹, a)]` by averaging the exact or cached
    /// stage-1 values over `count` initial states.
    pub fn oracle_value(&self, count: usize, seed: RandomSeed) -> Result<Estimate> {
        if count == 0 {
            return Err(domain_err("oracle value needs at least one draw"));
        }
        let mut rng = seed.rng();
        let draws: Vec<f64> = (0..count)
            .map(|_| {
                let s = self.sample_initial_state(&mut rng);
                let q = self.q_values(0, &s)?;
                Ok(q.into_iter().fold(f64::NEG_INFINITY, f64::max))
            })
            .collect::<Result<_>>()?;
        Ok(Estimate::from_draws(&draws))
    }
}

impl DecisionRule for Env {
    fn horizon(&self) -> usize {
        Env::horizon(self)
    }

    fn act(&self, stage: usize, history: &[f64]) -> Result<usize> {
        self.optimal_action(stage, history)
    }
}

/// `Q_t(h, ·)` of an environment as an evaluator.
#[derive(Debug, Clone)]
pub struct OracleValues {
    env: Env,
    stage: usize,
}

impl OracleValues {
    pub fn new(env: Env, stage: usize) -> Result<Self> {
        if stage >= env.horizon() {
            return Err(domain_err(format!("stage {} out of range", stage + 1)));
        }
        Ok(Self { env, stage })
    }
}

impl ActionValues for OracleValues {
    fn action_count(&self) -> usize {
        self.env.action_count()
    }

    fn action_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.env.q_values(self.stage, input)
    }
}

/// Stage policies that follow the true optimal rule.
pub fn oracle_policy(spec: &EnvSpec) -> Result<StagePolicySet> {
    let env = Env::new(spec.clone())?;
    let horizon = env.horizon();
    StagePolicySet::new(
        (0..horizon)
            .map(|stage| StageArtifact::Oracle {
                env: spec.clone(),
                stage,
            })
            .collect(),
        vec![0.0; horizon],
        env.action_count(),
    )
}

/// `V(π*)` of a two-stage kind with an explicit inner Monte Carlo budget.
pub fn two_stage_oracle_value(spec: &EnvSpec, inner_draws: usize, count: usize, seed: RandomSeed) -> Result<Estimate> {
    if spec.kind.horizon() != 2 {
        return Err(domain_err("two_stage_oracle_value needs a two-stage kind"));
    }
    let spec = EnvSpec {
        oracle_inner_draws: inner_draws,
        ..spec.clone()
    };
    Env::new(spec)?.oracle_value(count, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(kind: EnvKind) -> Env {
        Env::new(EnvSpec::new(kind)).unwrap()
    }

    #[test]
    fn formula_values() {
        let e = env(EnvKind::SingleLinear);
        assert!((e.reward_mean(&[1.0, 1.0, 1.0], 0).unwrap() - 0.75).abs() < 1e-15);
        assert!((e.reward_mean(&[1.0, 1.0, 1.0], 1).unwrap() - 0.90).abs() < 1e-15);
        assert_eq!(e.optimal_action(0, &[1.0, 1.0, 1.0]).unwrap(), 1);
        assert_eq!(e.optimal_action(0, &[0.0, 0.0, 0.0]).unwrap(), 0);
        let t = env(EnvKind::Toy);
        assert!((t.reward_mean(&[1.0, 1.0], 1).unwrap() - 3.6).abs() < 1e-15);
        assert_eq!(t.optimal_action(0, &[1.0, 0.0]).unwrap(), 1);
        assert_eq!(t.optimal_action(0, &[1.0, -1.0]).unwrap(), 0);
        let nl = env(EnvKind::SingleNonlinear);
        let v = nl.reward_mean(&[0.0; 5], 0).unwrap();
        assert!((v - 0.040_073).abs() < 1e-6, "{v}");
    }

    #[test]
    fn state_mismatch_rejected() {
        let e = env(EnvKind::SingleLinear);
        assert!(e.reward_mean(&[1.0, 1.0], 0).is_err());
        assert!(e.q_value(0, &[1.0; 5], 0).is_err());
        assert!(e.reward_mean(&[1.0; 3], 2).is_err());
    }

    #[test]
    fn transitions_shifted() {
        let e = env(EnvKind::TwoStageNonlinear);
        let w = e.transitions();
        assert_eq!((w[0].rows(), w[0].cols()), (2, 5));
        for (a, b) in w[0].as_slice().iter().zip(w[1].as_slice()) {
            assert!((b - a - 0.05).abs() < 1e-15);
        }
        assert_eq!(env(EnvKind::TwoStageNonlinear).transitions(), w);
    }

    #[test]
    fn greedy_behavior_is_optimal() {
        let e = Env::new(EnvSpec::new(EnvKind::TwoStageLinear).with_epsilon(1.0)).unwrap();
        let data = e.gen_dataset(50, RandomSeed(3)).unwrap();
        for t in 0..2 {
            for i in 0..50 {
                let h = data.history(i, t).unwrap();
                assert_eq!(data.stages[t].actions[i], e.optimal_action(t, &h).unwrap());
            }
        }
    }

    #[test]
    fn noiseless_rewards_are_means() {
        let e = Env::new(EnvSpec::new(EnvKind::SingleNonlinear).with_noise(0.0)).unwrap();
        let d = e.gen_single(20, RandomSeed(1)).unwrap();
        for i in 0..20 {
            assert_eq!(d.rewards[i], e.reward_mean(&d.states[i], d.actions[i]).unwrap());
        }
    }

    #[test]
    fn symmetric_transitions_tie() {
        let spec = EnvSpec::new(EnvKind::TwoStageLinear);
        let w = Matrix::from_rows(&[vec![0.3, -0.2, 1.0], vec![0.5, 0.1, -0.4]]).unwrap();
        let e = Env::with_transitions(spec, w.clone(), w).unwrap();
        let q = e.q_values(0, &[0.7, -1.2]).unwrap();
        assert_eq!(q[0], q[1]);
    }

    #[test]
    fn analytic_stage_one_matches_monte_carlo() {
        let e = env(EnvKind::TwoStageLinear);
        let s1 = [0.4, -0.9];
        let mut rng = RandomSeed(11).rng();
        for a in 0..2 {
            let m = e.transition_mean(&s1, a).unwrap();
            let n = 200_000;
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let s2: Vec<f64> = m.iter().map(|v| v + standard_normal(&mut rng)).collect();
                    e.reward_mean(&s2, 0).unwrap().max(e.reward_mean(&s2, 1).unwrap())
                })
                .collect();
            let est = Estimate::from_draws(&draws);
            let exact = e.stage_one_value(&s1, a).unwrap();
            assert!((est.mean - exact).abs() < 4.0 * est.se, "{} vs {exact}", est.mean);
        }
    }

    #[test]
    fn oracle_policy_matches_env() {
        let spec = EnvSpec::new(EnvKind::TwoStageLinear);
        let pol = oracle_policy(&spec).unwrap();
        let e = Env::new(spec).unwrap();
        let a = e.rollout_values(&pol, 200, RandomSeed(9)).unwrap();
        let b = e.rollout_values(&e, 200, RandomSeed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn propensities_match_convention() {
        let spec = EnvSpec {
            behavior: BehaviorConvention::OptimalWithProbOneMinusEpsilon,
            ..EnvSpec::new(EnvKind::SingleLinear).with_epsilon(0.8)
        };
        let e = Env::new(spec).unwrap();
        let d = e.gen_single(200, RandomSeed(2)).unwrap();
        for i in 0..200 {
            let opt = e.optimal_action(0, &d.states[i]).unwrap();
            let p = d.propensities.as_ref().unwrap()[i];
            let expected = if d.actions[i] == opt { 0.2 } else { 0.8 };
            assert!((p - expected).abs() < 1e-15);
        }
    }
}
