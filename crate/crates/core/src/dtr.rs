//! Backward induction over `T` stages with pessimistic pseudo-rewards.
//!
//! For `K = T, …, 1` the stage-`K` data `(h⁽ᴷ⁾, a⁽ᴷ⁾, r⁽ᴷ⁾)` is fitted at level
//! `α / T` and the pseudo-reward passed down is
//! `r⁽ᴷ⁻¹⁾ = max_a f̂_L⁽ᴷ⁾(h⁽ᴷ⁾, a)`, starting from the observed terminal reward.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TrajectoryDataset};
use crate::error::{domain_err, shape_err, PblError, Result};
use crate::features::encode_history;
use crate::learner::{fit_stage, LearnerConfig, StageArtifact};
use crate::numerics::RandomSeed;
use crate::pessimism::{argmax, ActionValues};

/// Anything that picks an action from a stage and an encoded history.
pub trait DecisionRule: Send + Sync {
    fn horizon(&self) -> usize;

    fn act(&self, stage: usize, history: &[f64]) -> Result<usize>;

    fn act_batch(&self, stage: usize, histories: &[Vec<f64>]) -> Result<Vec<usize>> {
        histories.iter().map(|h| self.act(stage, h)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct StagePolicySetRepr {
    artifacts: Vec<StageArtifact>,
    stage_alphas: Vec<f64>,
    action_count: usize,
}

/// One greedy policy per stage plus the artifacts that define them.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "StagePolicySetRepr", into = "StagePolicySetRepr")]
pub struct StagePolicySet {
    artifacts: Vec<StageArtifact>,
    stage_alphas: Vec<f64>,
    action_count: usize,
    evaluators: Vec<Arc<dyn ActionValues>>,
}

impl std::fmt::Debug for StagePolicySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StagePolicySet")
            .field("artifacts", &self.artifacts)
            .field("stage_alphas", &self.stage_alphas)
            .field("action_count", &self.action_count)
            .finish()
    }
}

impl PartialEq for StagePolicySet {
    fn eq(&self, other: &Self) -> bool {
        self.artifacts == other.artifacts
            && self.stage_alphas == other.stage_alphas
            && self.action_count == other.action_count
    }
}

impl TryFrom<StagePolicySetRepr> for StagePolicySet {
    type Error = PblError;

    fn try_from(r: StagePolicySetRepr) -> Result<Self> {
        StagePolicySet::new(r.artifacts, r.stage_alphas, r.action_count)
    }
}

impl From<StagePolicySet> for StagePolicySetRepr {
    fn from(s: StagePolicySet) -> Self {
        StagePolicySetRepr {
            artifacts: s.artifacts,
            stage_alphas: s.stage_alphas,
            action_count: s.action_count,
        }
    }
}

impl StagePolicySet {
    /// Rebuilds every stage evaluator from its artifact.
    pub fn new(artifacts: Vec<StageArtifact>, stage_alphas: Vec<f64>, action_count: usize) -> Result<Self> {
        if artifacts.is_empty() || artifacts.len() != stage_alphas.len() {
            return Err(shape_err(format!(
                "{} stage artifacts and {} stage alphas",
                artifacts.len(),
                stage_alphas.len()
            )));
        }
        let evaluators = artifacts.iter().map(StageArtifact::evaluator).collect::<Result<Vec<_>>>()?;
        if evaluators.iter().any(|e| e.action_count() != action_count) {
            return Err(shape_err("stage evaluator action counts differ"));
        }
        Ok(Self {
            artifacts,
            stage_alphas,
            action_count,
            evaluators,
        })
    }

    /// Wraps ready-made evaluators that have no serializable artifact.
    pub fn from_evaluators(evaluators: Vec<Arc<dyn ActionValues>>) -> Result<Self> {
        let action_count = evaluators
            .first()
            .map(|e| e.action_count())
            .ok_or_else(|| shape_err("at least one stage evaluator is required"))?;
        Ok(Self {
            artifacts: Vec::new(),
            stage_alphas: vec![f64::NAN; evaluators.len()],
            action_count,
            evaluators,
        })
    }

    pub fn artifacts(&self) -> &[StageArtifact] {
        &self.artifacts
    }

    pub fn stage_alphas(&self) -> &[f64] {
        &self.stage_alphas
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// `f̂_L⁽ᵗ⁾`, `stage` 0-based.
    pub fn evaluator(&self, stage: usize) -> &Arc<dyn ActionValues> {
        &self.evaluators[stage]
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if stage >= self.evaluators.len() {
            return Err(shape_err(format!(
                "stage {} requested from a {}-stage policy",
                stage + 1,
                self.evaluators.len()
            )));
        }
        Ok(())
    }
}

impl DecisionRule for StagePolicySet {
    fn horizon(&self) -> usize {
        self.evaluators.len()
    }

    fn act(&self, stage: usize, history: &[f64]) -> Result<usize> {
        self.check_stage(stage)?;
        Ok(argmax(&self.evaluators[stage].action_values(history)?))
    }

    fn act_batch(&self, stage: usize, histories: &[Vec<f64>]) -> Result<Vec<usize>> {
        self.check_stage(stage)?;
        Ok(self.evaluators[stage]
            .action_values_batch(histories)?
            .iter()
            .map(|v| argmax(v))
            .collect())
    }
}

/// Applies `π̂_t` to a trajectory prefix `(s¹, a¹, …, sᵗ)`; `t` is read off
/// the number of states.
pub fn run_stage_policy(policies: &StagePolicySet, states: &[&[f64]], actions: &[usize]) -> Result<usize> {
    if states.is_empty() || states.len() > policies.horizon() {
        return Err(shape_err(format!(
            "prefix has {} states for a {}-stage policy",
            states.len(),
            policies.horizon()
        )));
    }
    let h = encode_history(states, actions, policies.action_count)?;
    policies.act(states.len() - 1, &h)
}

/// Trajectory indices used to fit each stage. With cross-fitting the
/// trajectories are shuffled and dealt into `T` folds, fold `t` fitting
/// stage `t`.
fn stage_folds(n: usize, horizon: usize, cross_fit: bool, seed: RandomSeed) -> Vec<Vec<usize>> {
    if !cross_fit || horizon == 1 {
        return vec![(0..n).collect(); horizon];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let mut folds = vec![Vec::new(); horizon];
    for (j, i) in idx.into_iter().enumerate() {
        folds[j % horizon].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// Stage-wise result of backward induction, including the pseudo-rewards
/// that were regressed at each stage.
pub struct InductionTrace {
    pub policies: StagePolicySet,
    /// `targets[t][i]`: regression target of trajectory `i` at stage `t`.
    pub targets: Vec<Vec<f64>>,
}

/// Backward induction with the learner in `config` at every stage.
pub fn backward_induct(data: &TrajectoryDataset, config: &LearnerConfig, seed: RandomSeed) -> Result<StagePolicySet> {
    Ok(backward_induct_traced(data, config, seed)?.policies)
}

pub fn backward_induct_traced(
    data: &TrajectoryDataset,
    config: &LearnerConfig,
    seed: RandomSeed,
) -> Result<InductionTrace> {
    let horizon = data.horizon();
    if horizon == 0 {
        return Err(domain_err("at least one stage is required"));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(domain_err(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    let stage_alpha = config.alpha / horizon as f64;
    let folds = stage_folds(data.len(), horizon, config.cross_fit, seed.derive(&[u64::MAX]));
    let mut targets = vec![Vec::new(); horizon];
    let mut pseudo = data.rewards.clone();
    let mut artifacts = Vec::with_capacity(horizon);
    let mut evaluators = Vec::with_capacity(horizon);
    for k in (0..horizon).rev() {
        let wrap = |e: PblError| PblError::StageFit {
            stage: k + 1,
            source: Box::new(e),
        };
        let histories = data.histories(k).map_err(wrap)?;
        let idx = &folds[k];
        let st = &data.stages[k];
        let ds = Dataset::new(
            idx.iter().map(|&i| histories[i].clone()).collect(),
            idx.iter().map(|&i| st.actions[i]).collect(),
            idx.iter().map(|&i| pseudo[i]).collect(),
            st.propensities.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
            data.action_count,
        )
        .map_err(wrap)?;
        let artifact = fit_stage(&ds, config, stage_alpha, seed.derive(&[k as u64])).map_err(wrap)?;
        let eval = artifact.evaluator().map_err(wrap)?;
        targets[k] = pseudo.clone();
        if k > 0 {
            pseudo = eval
                .action_values_batch(&histories)
                .map_err(wrap)?
                .into_iter()
                .map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max))
                .collect();
        }
        artifacts.push(artifact);
        evaluators.push(eval);
    }
    artifacts.reverse();
    evaluators.reverse();
    Ok(InductionTrace {
        policies: StagePolicySet {
            artifacts,
            stage_alphas: vec![stage_alpha; horizon],
            action_count: data.action_count,
            evaluators,
        },
        targets,
    })
}
