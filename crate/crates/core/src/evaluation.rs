//! Regret against environment oracles, importance-sampling off-policy
//! evaluation, lower-bound coverage and empirical rate fits.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_real, TrajectoryDataset};
use crate::dtr::DecisionRule;
use crate::envs::{Env, Estimate};
use crate::error::{domain_err, shape_err, PblError, Result};
use crate::numerics::RandomSeed;
use crate::pessimism::ActionValues;

/// Propensities are floored here before division.
pub const PROPENSITY_CLIP: f64 = 0.01;

/// `V(π*) − V(π̂)` over `mc_states` rollouts with common random numbers,
/// using noise-free means.
pub fn regret(rule: &dyn DecisionRule, env: &Env, mc_states: usize, seed: RandomSeed) -> Result<Estimate> {
    if mc_states == 0 {
        return Err(domain_err("mc_states must be positive"));
    }
    let best = env.rollout_values(env, mc_states, seed)?;
    let got = env.rollout_values(rule, mc_states, seed)?;
    let diffs: Vec<f64> = best.iter().zip(&got).map(|(b, g)| b - g).collect();
    Ok(Estimate::from_draws(&diffs))
}

/// Per-replication regrets of one method in one experimental cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub method: String,
    pub config_digest: String,
    pub env: String,
    pub n: usize,
    pub epsilon: f64,
    pub sigma: f64,
    /// Name of the method's tuning parameter (`alpha`, `c`, or empty).
    pub param: String,
    pub param_value: f64,
    pub regrets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub method: String,
    pub config_digest: String,
    pub env: String,
    pub n: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub param: String,
    pub param_value: f64,
    pub replications: usize,
    pub mean: f64,
    /// Absent with a single replication.
    pub se: Option<f64>,
}

/// Tuning parameter value as written to CSV; blank for untuned methods.
pub fn param_cell(param: &str, value: f64) -> String {
    if param.is_empty() {
        String::new()
    } else {
        fmt_real(value)
    }
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "config_digest",
    "method",
    "env",
    "n",
    "epsilon",
    "sigma",
    "param",
    "param_value",
    "replication",
    "regret",
];

impl RegretReport {
    pub fn mean(&self) -> f64 {
        Estimate::from_draws(&self.regrets).mean
    }

    /// Standard error of the mean over replications.
    pub fn se(&self) -> f64 {
        Estimate::from_draws(&self.regrets).se
    }

    pub fn summary(&self) -> RegretSummary {
        let est = Estimate::from_draws(&self.regrets);
        RegretSummary {
            method: self.method.clone(),
            config_digest: self.config_digest.clone(),
            env: self.env.clone(),
            n: self.n,
            epsilon: self.epsilon,
            sigma: self.sigma,
            param: self.param.clone(),
            param_value: self.param_value,
            replications: self.regrets.len(),
            mean: est.mean,
            se: est.se.is_finite().then_some(est.se),
        }
    }

    /// One row per replication.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
        for (i, r) in self.regrets.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                self.config_digest,
                self.method,
                self.env,
                self.n,
                fmt_real(self.epsilon),
                fmt_real(self.sigma),
                self.param,
                param_cell(&self.param, self.param_value),
                i,
                fmt_real(*r)
            )?;
        }
        Ok(())
    }
}

/// `(1/n) Σ_i r_i Π_t 1{π_t(h_iᵗ) = a_iᵗ} / max(b_iᵗ, 0.01)`.
pub fn ope_importance_sampling(data: &TrajectoryDataset, rule: &dyn DecisionRule) -> Result<Estimate> {
    if data.is_empty() {
        return Err(PblError::InsufficientData("importance sampling needs data".into()));
    }
    if rule.horizon() != data.horizon() {
        return Err(shape_err(format!(
            "{}-stage rule evaluated on {}-stage data",
            rule.horizon(),
            data.horizon()
        )));
    }
    let mut weights = vec![1.0; data.len()];
    for (t, st) in data.stages.iter().enumerate() {
        let props = st.propensities.as_ref().ok_or_else(|| {
            PblError::MissingPropensities(format!("stage {} has no behavior propensities", t + 1))
        })?;
        let chosen = rule.act_batch(t, &data.histories(t)?)?;
        for i in 0..data.len() {
            if chosen[i] == st.actions[i] {
                weights[i] /= props[i].max(PROPENSITY_CLIP);
            } else {
                weights[i] = 0.0;
            }
        }
    }
    let terms: Vec<f64> = weights.iter().zip(&data.rewards).map(|(w, r)| w * r).collect();
    Ok(Estimate::from_draws(&terms))
}

/// K-fold protocol: fit on the other folds, importance-sample on the held
/// out fold, and average the fold estimates.
pub fn cross_validated_ope<F>(data: &TrajectoryDataset, folds: usize, seed: RandomSeed, mut fit: F) -> Result<Estimate>
where
    F: FnMut(&TrajectoryDataset) -> Result<Box<dyn DecisionRule>>,
{
    if folds < 2 || folds > data.len() {
        return Err(domain_err(format!("need 2 <= folds <= n, got {folds} folds for n = {}", data.len())));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut seed.rng());
    let mut means = Vec::with_capacity(folds);
    let mut var_sum = 0.0;
    for k in 0..folds {
        let (mut test, mut train) = (Vec::new(), Vec::new());
        for (j, &i) in idx.iter().enumerate() {
            if j % folds == k {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        test.sort_unstable();
        train.sort_unstable();
        let rule = fit(&data.subset(&train))?;
        let est = ope_importance_sampling(&data.subset(&test), rule.as_ref())?;
        means.push(est.mean);
        var_sum += est.se * est.se;
    }
    Ok(Estimate {
        mean: means.iter().sum::<f64>() / folds as f64,
        se: var_sum.sqrt() / folds as f64,
        count: data.len(),
    })
}

/// Outcome of checking `f̂_L ≤ Q` on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// `f̂_L(s, a) ≤ Q(s, a)` at every grid point and action.
    pub covered: bool,
    /// `max (f̂_L − Q)`; nonpositive when covered.
    pub max_violation: f64,
    pub points: usize,
}

/// Checks a first-stage lower bound against the true Q-function on
/// `grid_size` states drawn from the environment's initial distribution.
pub fn coverage_diagnostic(lb: &dyn ActionValues, env: &Env, grid_size: usize, seed: RandomSeed) -> Result<Coverage> {
    if grid_size == 0 {
        return Err(domain_err("grid_size must be positive"));
    }
    if lb.action_count() != env.action_count() {
        return Err(shape_err("lower bound and environment action counts differ"));
    }
    let grid = env.gen_dataset(grid_size, seed)?.histories(0)?;
    let bounds = lb.action_values_batch(&grid)?;
    let mut worst = f64::NEG_INFINITY;
    for (s, b) in grid.iter().zip(&bounds) {
        for (a, v) in b.iter().enumerate() {
            worst = worst.max(v - env.q_value(0, s, a)?);
        }
    }
    Ok(Coverage {
        covered: worst <= 0.0,
        max_violation: worst,
        points: grid.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub used_points: usize,
}

/// OLS slope of `log(mean regret)` on `log(n)`. Points with nonpositive mean
/// regret are dropped with a warning.
pub fn rate_check(series: &[(usize, f64)]) -> Result<RateFit> {
    if series.len() < 4 {
        return Err(domain_err(format!("rate check needs at least 4 sample sizes, got {}", series.len())));
    }
    let mut pts = Vec::with_capacity(series.len());
    for &(n, r) in series {
        if n == 0 {
            return Err(domain_err("sample size 0 in rate series"));
        }
        if r > 0.0 {
            pts.push(((n as f64).ln(), r.ln()));
        } else {
            log::warn!("dropping n = {n} from the rate fit: mean regret {r} is not positive");
        }
    }
    if pts.len() < 2 {
        return Err(PblError::InsufficientData("fewer than 2 positive regrets for the rate fit".into()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(domain_err("rate fit needs at least two distinct sample sizes"));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        used_points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, StageRecords};
    use crate::dtr::StagePolicySet;
    use crate::envs::{EnvKind, EnvSpec};
    use crate::pessimism::ConstantValues;
    use std::sync::Arc;

    struct Fixed(usize);

    impl DecisionRule for Fixed {
        fn horizon(&self) -> usize {
            1
        }

        fn act(&self, _stage: usize, _history: &[f64]) -> Result<usize> {
            Ok(self.0)
        }
    }

    #[test]
    fn self_regret_is_zero() {
        let env = Env::new(EnvSpec::new(EnvKind::Toy)).unwrap();
        let r = regret(&env, &env, 1000, RandomSeed(1)).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn uniform_propensity_weight() {
        let data = Dataset::new(
            vec![vec![0.0]; 4],
            vec![0, 1, 0, 1],
            vec![1.0, 2.0, 3.0, 4.0],
            Some(vec![0.5; 4]),
            2,
        )
        .unwrap()
        .into_trajectories();
        let est = ope_importance_sampling(&data, &Fixed(0)).unwrap();
        assert!((est.mean - 2.0 * (1.0 + 3.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_behavior_gives_mean_reward() {
        let data = Dataset::new(vec![vec![0.0]; 3], vec![1; 3], vec![1.0, 2.0, 6.0], Some(vec![1.0; 3]), 2)
            .unwrap()
            .into_trajectories();
        assert!((ope_importance_sampling(&data, &Fixed(1)).unwrap().mean - 3.0).abs() < 1e-15);
    }

    #[test]
    fn propensities_are_clipped() {
        let data = Dataset::new(vec![vec![0.0]], vec![0], vec![1.0], Some(vec![1e-6]), 2)
            .unwrap()
            .into_trajectories();
        assert!((ope_importance_sampling(&data, &Fixed(0)).unwrap().mean - 100.0).abs() < 1e-9);
    }

    #[test]
    fn missing_propensities_error() {
        let data = Dataset::new(vec![vec![0.0]], vec![0], vec![1.0], None, 2)
            .unwrap()
            .into_trajectories();
        assert!(matches!(
            ope_importance_sampling(&data, &Fixed(0)),
            Err(PblError::MissingPropensities(_))
        ));
    }

    #[test]
    fn two_stage_product_of_ratios() {
        let st = |a: Vec<usize>, p: Vec<f64>| StageRecords {
            states: vec![vec![0.0]; 2],
            actions: a,
            propensities: Some(p),
        };
        let data = TrajectoryDataset::new(vec![st(vec![0, 0], vec![0.5, 0.5]), st(vec![1, 0], vec![0.25, 0.5])], vec![1.0, 1.0], 2)
            .unwrap();
        let rule = StagePolicySet::from_evaluators(vec![
            Arc::new(ConstantValues(vec![1.0, 0.0])),
            Arc::new(ConstantValues(vec![0.0, 1.0])),
        ])
        .unwrap();
        let est = ope_importance_sampling(&data, &rule).unwrap();
        assert!((est.mean - (2.0 * 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ultra_pessimistic_bound_covers() {
        let env = Env::new(EnvSpec::new(EnvKind::SingleLinear)).unwrap();
        let c = coverage_diagnostic(&ConstantValues(vec![-1e9, -1e9]), &env, 50, RandomSeed(2)).unwrap();
        assert!(c.covered);
        let again = coverage_diagnostic(&ConstantValues(vec![-1e9, -1e9]), &env, 50, RandomSeed(2)).unwrap();
        assert_eq!(c, again);
        let loose = coverage_diagnostic(&ConstantValues(vec![1e9, 1e9]), &env, 50, RandomSeed(2)).unwrap();
        assert!(!loose.covered);
    }

    #[test]
    fn constructed_rates() {
        let ns = [500usize, 1000, 2000, 4000, 8000];
        let s: Vec<(usize, f64)> = ns.iter().map(|&n| (n, 3.0 / (n as f64).sqrt())).collect();
        assert!((rate_check(&s).unwrap().slope + 0.5).abs() < 1e-12);
        let c: Vec<(usize, f64)> = ns.iter().map(|&n| (n, 0.7)).collect();
        assert!(rate_check(&c).unwrap().slope.abs() < 1e-12);
        let mut d = s.clone();
        d[0].1 = 0.0;
        assert_eq!(rate_check(&d).unwrap().used_points, 4);
        assert!(rate_check(&s[..3]).is_err());
    }

    #[test]
    fn report_csv_rows() {
        let rep = RegretReport {
            method: "pbl_blbm".into(),
            config_digest: "abc".into(),
            env: "toy".into(),
            n: 10,
            epsilon: 0.5,
            sigma: 0.1,
            param: "alpha".into(),
            param_value: 0.1,
            regrets: vec![0.5, 1.5],
        };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().starts_with("abc,pbl_blbm,toy,10,"));
        assert_eq!(rep.mean(), 1.0);
        assert!((rep.se() - 0.5).abs() < 1e-15);
    }
}
