//! Comparison methods: PEVI with a linear ridge model, and Q-learning on the
//! posterior mean without pessimism.
//!
//! PEVI penalizes the ridge prediction by
//!
//! ```text
//! Γ(s, a) = c · p · √(φᵀ Λ⁻¹ φ) · √(log(2 d n / ξ)),    Λ = Σ φφᵀ + λ I
//! ```
//!
//! with `d` taken equal to the feature dimension `p`.

use serde::{Deserialize, Serialize};

use crate::blbm::gram;
use crate::data::{Dataset, TrajectoryDataset};
use crate::dtr::{backward_induct, StagePolicySet};
use crate::error::{domain_err, shape_err, Result};
use crate::features::FeatureMap;
use crate::learner::{FeatureConfig, LearnerConfig, Method, PeviConfig};
use crate::numerics::{cholesky, dot, Cholesky, RandomSeed, SpdMatrix};
use crate::pessimism::ActionValues;

pub const DEFAULT_XI: f64 = 0.1;
pub const DEFAULT_RIDGE: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeviModel {
    pub weights: Vec<f64>,
    /// `Λ = ΦᵀΦ + λ I`.
    pub lambda_matrix: SpdMatrix,
    pub c: f64,
    pub xi: f64,
    pub ridge: f64,
    pub n: usize,
    #[serde(skip)]
    factor: Option<Cholesky>,
}

impl PartialEq for PeviModel {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.lambda_matrix == other.lambda_matrix
            && self.c == other.c
            && self.xi == other.xi
            && self.ridge == other.ridge
            && self.n == other.n
    }
}

impl PeviModel {
    pub fn new(weights: Vec<f64>, lambda_matrix: SpdMatrix, c: f64, xi: f64, ridge: f64, n: usize) -> Result<Self> {
        if weights.len() != lambda_matrix.dim() {
            return Err(shape_err("ridge weights and Λ dimensions differ"));
        }
        if !(c >= 0.0) || !(xi > 0.0 && xi < 1.0) || !(ridge > 0.0) {
            return Err(domain_err(format!("invalid PEVI hyperparameters c={c}, xi={xi}, lambda={ridge}")));
        }
        let factor = Some(cholesky(&lambda_matrix)?);
        Ok(Self {
            weights,
            lambda_matrix,
            c,
            xi,
            ridge,
            n,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn factor(&mut self) -> Result<&Cholesky> {
        if self.factor.is_none() {
            self.factor = Some(cholesky(&self.lambda_matrix)?);
        }
        Ok(self.factor.as_ref().expect("set above"))
    }

    /// Restores the cached factorization after deserialization.
    pub fn refactor(mut self) -> Result<Self> {
        self.factor()?;
        Ok(self)
    }

    pub fn ridge_prediction(&self, phi: &[f64]) -> f64 {
        dot(&self.weights, phi)
    }

    /// `Γ(φ)`.
    pub fn penalty(&self, phi: &[f64]) -> Result<f64> {
        let p = self.dim();
        if phi.len() != p {
            return Err(shape_err(format!("feature vector has length {}, expected {p}", phi.len())));
        }
        let log_arg = 2.0 * p as f64 * self.n as f64 / self.xi;
        if !(log_arg > 1.0) {
            return Err(domain_err(format!(
                "PEVI penalty needs log(2 d n / xi) > 0, but 2·{p}·{}/{} = {log_arg}; more data is required",
                self.n, self.xi
            )));
        }
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| domain_err("PEVI model has no factorization; call refactor()"))?;
        let q = factor.inv_quad_form(phi).max(0.0);
        Ok(self.c * p as f64 * q.sqrt() * log_arg.ln().sqrt())
    }
}

/// Ridge fit `ŵ = Λ⁻¹ Φᵀ r`.
pub fn pevi_fit(data: &Dataset, map: &FeatureMap, ridge: f64, c: f64, xi: f64) -> Result<PeviModel> {
    if !(ridge > 0.0) {
        return Err(domain_err(format!("ridge parameter must be positive, got {ridge}")));
    }
    let stats = gram(data, map)?;
    let mut lambda = stats.gram;
    lambda.add_diag(ridge);
    let lambda = SpdMatrix::new(lambda)?;
    let ch = cholesky(&lambda)?;
    let weights = ch.solve(&stats.xty);
    let mut m = PeviModel::new(weights, lambda, c, xi, ridge, stats.n)?;
    m.factor = Some(ch);
    Ok(m)
}

/// `ŵᵀφ − Γ(φ)`.
pub fn pevi_lower_bound(model: &PeviModel, phi: &[f64]) -> Result<f64> {
    Ok(model.ridge_prediction(phi) - model.penalty(phi)?)
}

/// PEVI bound evaluated on states through a feature map.
#[derive(Debug, Clone)]
pub struct PeviValues {
    pub map: FeatureMap,
    pub model: PeviModel,
}

impl ActionValues for PeviValues {
    fn action_count(&self) -> usize {
        self.map.action_count()
    }

    fn action_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        let phi = self.map.encode_state(input)?;
        (0..self.map.action_count())
            .map(|a| pevi_lower_bound(&self.model, &self.map.place_block(&phi, a)?))
            .collect()
    }
}

/// Greedy policy on the posterior-mean prediction (no pessimism), for the
/// given model family. `method` must be one of the non-pessimistic variants.
pub fn nonpessi_policy(
    data: &Dataset,
    config: &LearnerConfig,
    seed: RandomSeed,
) -> Result<StagePolicySet> {
    if !matches!(config.method, Method::NonpessiBlbm | Method::NonpessiBnn) {
        return Err(domain_err(format!("{:?} is not a non-pessimistic method", config.method)));
    }
    backward_induct(&data.clone().into_trajectories(), config, seed)
}

/// Backward induction with PEVI bounds as the per-stage evaluator and
/// pseudo-reward source.
pub fn pevi_policy_dtr(
    data: &TrajectoryDataset,
    features: FeatureConfig,
    pevi: PeviConfig,
    seed: RandomSeed,
) -> Result<StagePolicySet> {
    let config = LearnerConfig {
        method: Method::Pevi,
        features,
        pevi,
        ..LearnerConfig::default()
    };
    backward_induct(data, &config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_data_gives_identity() {
        let map = FeatureMap::linear(2, 1, false).unwrap();
        let m = pevi_fit(&Dataset::empty(1), &map, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(m.weights, vec![0.0, 0.0]);
        assert_eq!(m.lambda_matrix, SpdMatrix::identity(2));
        // n = 0 leaves the log argument at zero
        assert!(pevi_lower_bound(&m, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn hand_evaluated_penalty() {
        let mut m = PeviModel::new(vec![0.0, 0.0], SpdMatrix::identity(2), 1.0, 0.1, 1.0, 10).unwrap();
        let g = m.penalty(&[1.0, 0.0]).unwrap();
        assert!((g - 2.0 * 400.0_f64.ln().sqrt()).abs() < 1e-12);
        assert!((g - 4.8955).abs() < 1e-4);
        assert!((pevi_lower_bound(&m, &[1.0, 0.0]).unwrap() + g).abs() < 1e-15);
        m.c = 2.0;
        assert_eq!(m.penalty(&[1.0, 0.0]).unwrap(), 2.0 * g);
    }

    #[test]
    fn zero_c_is_ridge_prediction() {
        let map = FeatureMap::linear(1, 2, true).unwrap();
        let data = Dataset::new(
            vec![vec![0.5], vec![-1.0], vec![2.0]],
            vec![0, 1, 0],
            vec![1.0, 2.0, 3.0],
            None,
            2,
        )
        .unwrap();
        let m = pevi_fit(&data, &map, 1.0, 0.0, 0.1).unwrap();
        let phi = map.encode_state_action(&[0.3], 0).unwrap();
        assert_eq!(pevi_lower_bound(&m, &phi).unwrap(), m.ridge_prediction(&phi));
    }

    #[test]
    fn invalid_hyperparameters() {
        let map = FeatureMap::linear(1, 1, false).unwrap();
        assert!(pevi_fit(&Dataset::empty(1), &map, 0.0, 1.0, 0.1).is_err());
        assert!(pevi_fit(&Dataset::empty(1), &map, 1.0, -1.0, 0.1).is_err());
        assert!(pevi_fit(&Dataset::empty(1), &map, 1.0, 1.0, 1.5).is_err());
    }
}
