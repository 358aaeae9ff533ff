//! Sampling-based uniform lower bound on the Q-function and the greedy
//! policy with respect to it.
//!
//! `N` weight vectors are drawn from the Gaussian posterior once. The draws
//! inside the credible ellipsoid
//!
//! ```text
//! (w_j − ŵ)ᵀ Σ̂⁻¹ (w_j − ŵ) ≤ χ²_{1−α}(p)
//! ```
//!
//! are cached together with the centre `ŵ`, and `f̂_L(s, a)` is the minimum of
//! `f(s, a, w_j)` over that cache. Every `(s, a)` is evaluated against the
//! same cached set, which is what makes the bound uniform.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::model::QModel;
use crate::numerics::{chi2_quantile, Matrix, RandomSeed};
use crate::posterior::GaussianPosterior;

pub const DEFAULT_NUM_SAMPLES: usize = 10_000;

/// Anything that assigns a value to every action of an input.
pub trait ActionValues: Send + Sync {
    fn action_count(&self) -> usize;

    fn action_values(&self, input: &[f64]) -> Result<Vec<f64>>;

    fn action_values_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|s| self.action_values(s)).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Deterministic greedy policy over an attached evaluator.
#[derive(Clone)]
pub struct Policy {
    values: Arc<dyn ActionValues>,
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Policy")
            .field("action_count", &self.values.action_count())
            .finish()
    }
}

impl Policy {
    pub fn greedy(values: Arc<dyn ActionValues>) -> Self {
        Self { values }
    }

    pub fn evaluator(&self) -> &Arc<dyn ActionValues> {
        &self.values
    }

    pub fn action_count(&self) -> usize {
        self.values.action_count()
    }

    pub fn act(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.values.action_values(input)?))
    }

    pub fn act_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self
            .values
            .action_values_batch(inputs)?
            .iter()
            .map(|v| argmax(v))
            .collect())
    }
}

/// Rows of `samples` inside the `1 − alpha` credible ellipsoid (boundary
/// inclusive).
pub fn credible_filter(samples: &Matrix, post: &GaussianPosterior, alpha: f64) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain_err(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if samples.cols() != post.dim() {
        return Err(shape_err(format!(
            "samples have {} columns, posterior dimension is {}",
            samples.cols(),
            post.dim()
        )));
    }
    let threshold = chi2_quantile(1.0 - alpha, post.dim() as u32)?;
    let mut accepted = Vec::new();
    for j in 0..samples.rows() {
        if post.mahalanobis_sq(samples.row(j))? <= threshold {
            accepted.push(j);
        }
    }
    Ok(accepted)
}

/// Configuration of a sampled lower bound; the cache is rebuilt from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundSpec {
    pub model: QModel,
    pub posterior: GaussianPosterior,
    pub alpha: f64,
    pub num_samples: usize,
    pub seed: RandomSeed,
}

#[derive(Debug, Clone)]
pub struct LowerBoundFn {
    spec: LowerBoundSpec,
    cache: Matrix,
    accepted_draws: usize,
}

/// Draws the posterior sample once, filters it and caches the feasible set.
pub fn build_lower_bound(
    model: &QModel,
    post: &GaussianPosterior,
    alpha: f64,
    num_samples: usize,
    seed: RandomSeed,
) -> Result<LowerBoundFn> {
    LowerBoundFn::build(LowerBoundSpec {
        model: model.clone(),
        posterior: post.clone(),
        alpha,
        num_samples,
        seed,
    })
}

impl LowerBoundFn {
    pub fn build(spec: LowerBoundSpec) -> Result<Self> {
        if spec.num_samples < 1 {
            return Err(domain_err("number of posterior samples must be at least 1"));
        }
        if spec.model.param_dim() != spec.posterior.dim() {
            return Err(shape_err(format!(
                "model has {} parameters, posterior has dimension {}",
                spec.model.param_dim(),
                spec.posterior.dim()
            )));
        }
        let samples = spec.posterior.sample(spec.num_samples, spec.seed)?;
        let accepted = credible_filter(&samples, &spec.posterior, spec.alpha)?;
        if accepted.is_empty() {
            log::warn!(
                "no posterior draw out of {} fell inside the credible set; using the posterior mean only",
                spec.num_samples
            );
        }
        let p = spec.posterior.dim();
        let mut data = Vec::with_capacity((accepted.len() + 1) * p);
        data.extend_from_slice(spec.posterior.mean());
        for &j in &accepted {
            data.extend_from_slice(samples.row(j));
        }
        let cache = Matrix::from_row_major(accepted.len() + 1, p, data)?;
        Ok(Self {
            accepted_draws: accepted.len(),
            spec,
            cache,
        })
    }

    /// Lower bound over an explicitly supplied weight set.
    pub fn from_cache(spec: LowerBoundSpec, cache: Matrix) -> Result<Self> {
        if cache.cols() != spec.model.param_dim() || cache.rows() == 0 {
            return Err(shape_err("cache must be a non-empty matrix with one column per parameter"));
        }
        Ok(Self {
            accepted_draws: cache.rows(),
            spec,
            cache,
        })
    }

    pub fn spec(&self) -> &LowerBoundSpec {
        &self.spec
    }

    pub fn cache(&self) -> &Matrix {
        &self.cache
    }

    /// Number of posterior draws that passed the credible filter.
    pub fn accepted_draws(&self) -> usize {
        self.accepted_draws
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted_draws as f64 / self.spec.num_samples as f64
    }

    /// `f̂_L(s, a)`.
    pub fn evaluate(&self, s: &[f64], a: usize) -> Result<f64> {
        if a >= self.spec.model.action_count() {
            return Err(domain_err(format!("action {a} out of range")));
        }
        Ok(self.action_values(s)?[a])
    }
}

impl ActionValues for LowerBoundFn {
    fn action_count(&self) -> usize {
        self.spec.model.action_count()
    }

    fn action_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .spec
            .model
            .min_over_weights(&self.cache, std::slice::from_ref(&input.to_vec()))?
            .pop()
            .expect("one input"))
    }

    fn action_values_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.spec.model.min_over_weights(&self.cache, inputs)
    }
}

/// `π̂(s) = argmax_a f̂_L(s, a)`.
pub fn greedy_policy(lb: LowerBoundFn) -> Policy {
    Policy::greedy(Arc::new(lb))
}

/// Values given by the posterior-mean weights, `f(s, a, ŵ)`.
#[derive(Debug, Clone)]
pub struct PosteriorMeanValues {
    pub model: QModel,
    pub weights: Vec<f64>,
}

impl ActionValues for PosteriorMeanValues {
    fn action_count(&self) -> usize {
        self.model.action_count()
    }

    fn action_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.model.q_values(&self.weights, input)
    }
}

/// Closed-form ellipsoid minimum for linear models (see [`crate::blbm`]).
#[derive(Debug, Clone)]
pub struct ClosedFormBound {
    map: crate::features::FeatureMap,
    posterior: GaussianPosterior,
    radius: f64,
}

impl ClosedFormBound {
    pub fn new(map: crate::features::FeatureMap, posterior: GaussianPosterior, alpha: f64) -> Result<Self> {
        if map.joint_dim() != posterior.dim() {
            return Err(shape_err("feature map and posterior dimensions differ"));
        }
        posterior.factor()?;
        let radius = crate::blbm::credible_radius(alpha, posterior.dim())?;
        Ok(Self {
            map,
            posterior,
            radius,
        })
    }
}

impl ActionValues for ClosedFormBound {
    fn action_count(&self) -> usize {
        self.map.action_count()
    }

    fn action_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        let phi = self.map.encode_state(input)?;
        (0..self.map.action_count())
            .map(|a| {
                let full = self.map.place_block(&phi, a)?;
                let var = self.posterior.variance_along(&full)?.max(0.0);
                Ok(self.posterior.mean_prediction(&full) - self.radius * var.sqrt())
            })
            .collect()
    }
}

/// Fixed table of values, independent of the input.
#[derive(Debug, Clone)]
pub struct ConstantValues(pub Vec<f64>);

impl ActionValues for ConstantValues {
    fn action_count(&self) -> usize {
        self.0.len()
    }

    fn action_values(&self, _input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMap;
    use crate::numerics::SpdMatrix;
    use crate::posterior::Covariance;

    fn unit_post(p: usize) -> GaussianPosterior {
        GaussianPosterior::new(vec![0.0; p], Covariance::Full(SpdMatrix::identity(p))).unwrap()
    }

    #[test]
    fn centre_always_accepted() {
        let post = unit_post(3);
        let samples = Matrix::zeros(1, 3);
        assert_eq!(credible_filter(&samples, &post, 0.99).unwrap(), vec![0]);
    }

    #[test]
    fn median_boundary_inclusive() {
        let post = GaussianPosterior::new(vec![1.0], Covariance::Full(SpdMatrix::from_diag(&[4.0]).unwrap())).unwrap();
        let q = chi2_quantile(0.5, 1).unwrap();
        let inside = Matrix::from_rows(&[vec![1.0 + 2.0 * 0.674]]).unwrap();
        assert!(0.674_f64 * 0.674 <= q);
        assert_eq!(credible_filter(&inside, &post, 0.5).unwrap(), vec![0]);
        let exact = Matrix::from_rows(&[vec![1.0 + 2.0 * q.sqrt()]]).unwrap();
        // the point constructed exactly on the boundary may round either way by one ulp
        let m = post.mahalanobis_sq(exact.row(0)).unwrap();
        assert_eq!(credible_filter(&exact, &post, 0.5).unwrap().len(), usize::from(m <= q));
        let outside = Matrix::from_rows(&[vec![1.0 + 2.0 * 0.7]]).unwrap();
        assert!(credible_filter(&outside, &post, 0.5).unwrap().is_empty());
    }

    #[test]
    fn singleton_cache_gives_mean_prediction() {
        let map = FeatureMap::linear(2, 1, false).unwrap();
        let model = QModel::Linear { map };
        let post = GaussianPosterior::new(vec![0.5, -1.0], Covariance::Diagonal(vec![1.0, 1.0])).unwrap();
        let spec = LowerBoundSpec {
            model: model.clone(),
            posterior: post,
            alpha: 0.1,
            num_samples: 1,
            seed: RandomSeed(0),
        };
        let lb = LowerBoundFn::from_cache(spec, Matrix::from_rows(&[vec![0.5, -1.0]]).unwrap()).unwrap();
        assert_eq!(lb.evaluate(&[2.0, 1.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn hand_built_two_sample_cache() {
        let map = FeatureMap::linear(2, 1, false).unwrap();
        let model = QModel::Linear { map };
        let spec = LowerBoundSpec {
            model,
            posterior: unit_post(2),
            alpha: 0.1,
            num_samples: 2,
            seed: RandomSeed(0),
        };
        let cache = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let lb = LowerBoundFn::from_cache(spec, cache).unwrap();
        // φ(s, a) = s = (1, 2)
        assert_eq!(lb.evaluate(&[1.0, 2.0], 0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_zero_samples_and_mismatch() {
        let map = FeatureMap::linear(2, 1, false).unwrap();
        let model = QModel::Linear { map };
        assert!(build_lower_bound(&model, &unit_post(2), 0.1, 0, RandomSeed(0)).is_err());
        assert!(build_lower_bound(&model, &unit_post(3), 0.1, 10, RandomSeed(0)).is_err());
    }

    #[test]
    fn greedy_ties_and_shift() {
        let p = Policy::greedy(Arc::new(ConstantValues(vec![0.3, 0.7])));
        assert_eq!(p.act(&[]).unwrap(), 1);
        let p = Policy::greedy(Arc::new(ConstantValues(vec![0.5, 0.5])));
        assert_eq!(p.act(&[]).unwrap(), 0);
        let p = Policy::greedy(Arc::new(ConstantValues(vec![10.3, 10.7])));
        assert_eq!(p.act(&[]).unwrap(), 1);
    }
}
