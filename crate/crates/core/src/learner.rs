//! One-stage fitting for every method, producing a serializable artifact
//! that rebuilds its evaluator deterministically.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{pevi_fit, PeviModel, PeviValues, DEFAULT_RIDGE, DEFAULT_XI};
use crate::blbm::{blbm_fit, BlbmConfig};
use crate::bnn::{bnn_fit, BnnTrainConfig, MlpArchitecture, VariationalParams};
use crate::data::Dataset;
use crate::envs::{Env, EnvSpec, OracleValues};
use crate::error::{domain_err, Result};
use crate::features::{make_feature_map, FeatureMap, DEFAULT_GAMMA, DEFAULT_NUM_FEATURES};
use crate::model::QModel;
use crate::numerics::RandomSeed;
use crate::pessimism::{
    ActionValues, ClosedFormBound, LowerBoundFn, LowerBoundSpec, PosteriorMeanValues, DEFAULT_NUM_SAMPLES,
};
use crate::posterior::GaussianPosterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PblBlbm,
    PblBnn,
    Pevi,
    NonpessiBlbm,
    NonpessiBnn,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::PblBlbm => "pbl_blbm",
            Method::PblBnn => "pbl_bnn",
            Method::Pevi => "pevi",
            Method::NonpessiBlbm => "nonpessi_blbm",
            Method::NonpessiBnn => "nonpessi_bnn",
        }
    }

    pub fn is_pessimistic_bayes(self) -> bool {
        matches!(self, Method::PblBlbm | Method::PblBnn)
    }
}

/// How the BLBM lower bound is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSolver {
    /// Exact minimum over the credible ellipsoid.
    ClosedForm,
    /// Minimum over a cached posterior sample.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    RandomFourier { num_features: usize, gamma: f64 },
    Linear { intercept: bool },
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig::RandomFourier {
            num_features: DEFAULT_NUM_FEATURES,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl FeatureConfig {
    pub fn build(&self, input_dim: usize, action_count: usize, seed: RandomSeed) -> Result<FeatureMap> {
        match *self {
            FeatureConfig::RandomFourier { num_features, gamma } => {
                make_feature_map(input_dim, num_features, gamma, action_count, seed)
            }
            FeatureConfig::Linear { intercept } => FeatureMap::linear(input_dim, action_count, intercept),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeviConfig {
    pub c: f64,
    pub xi: f64,
    pub lambda: f64,
}

impl Default for PeviConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            xi: DEFAULT_XI,
            lambda: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub method: Method,
    /// Overall significance level; split as `alpha / T` across stages.
    pub alpha: f64,
    pub num_samples: usize,
    pub solver: BoundSolver,
    pub features: FeatureConfig,
    pub blbm: BlbmConfig,
    pub hidden: Vec<usize>,
    pub bnn: BnnTrainConfig,
    pub pevi: PeviConfig,
    /// Fit each stage on its own fold of trajectories.
    pub cross_fit: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            method: Method::PblBlbm,
            alpha: 0.1,
            num_samples: DEFAULT_NUM_SAMPLES,
            solver: BoundSolver::MonteCarlo,
            features: FeatureConfig::default(),
            blbm: BlbmConfig::default(),
            hidden: vec![16, 16],
            bnn: BnnTrainConfig::default(),
            pevi: PeviConfig::default(),
            cross_fit: false,
        }
    }
}

impl LearnerConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

/// Everything needed to rebuild one stage's evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageArtifact {
    /// Sampled uniform lower bound; the cache is regenerated from the seed.
    SampledBound { bound: LowerBoundSpec },
    /// Closed-form BLBM bound.
    ClosedFormBound {
        map: FeatureMap,
        posterior: GaussianPosterior,
        alpha: f64,
    },
    /// Posterior-mean Q-values.
    PosteriorMean { model: QModel, posterior: GaussianPosterior },
    Pevi { map: FeatureMap, model: PeviModel },
    /// True Q-function of a synthetic environment at one stage.
    Oracle { env: EnvSpec, stage: usize },
}

impl StageArtifact {
    pub fn evaluator(&self) -> Result<Arc<dyn ActionValues>> {
        Ok(match self {
            StageArtifact::SampledBound { bound } => Arc::new(LowerBoundFn::build(bound.clone())?),
            StageArtifact::ClosedFormBound { map, posterior, alpha } => {
                Arc::new(ClosedFormBound::new(map.clone(), posterior.clone(), *alpha)?)
            }
            StageArtifact::PosteriorMean { model, posterior } => Arc::new(PosteriorMeanValues {
                model: model.clone(),
                weights: posterior.mean().to_vec(),
            }),
            StageArtifact::Pevi { map, model } => Arc::new(PeviValues {
                map: map.clone(),
                model: model.clone().refactor()?,
            }),
            StageArtifact::Oracle { env, stage } => Arc::new(OracleValues::new(Env::new(env.clone())?, *stage)?),
        })
    }

    pub fn posterior(&self) -> Option<&GaussianPosterior> {
        match self {
            StageArtifact::SampledBound { bound } => Some(&bound.posterior),
            StageArtifact::ClosedFormBound { posterior, .. } | StageArtifact::PosteriorMean { posterior, .. } => {
                Some(posterior)
            }
            StageArtifact::Pevi { .. } | StageArtifact::Oracle { .. } => None,
        }
    }
}

/// Result of fitting a Bayesian model family on one stage.
pub struct FittedModel {
    pub model: QModel,
    pub posterior: GaussianPosterior,
    pub variational: Option<VariationalParams>,
}

/// Fits BLBM or BNN according to `config.method`.
pub fn fit_posterior(data: &Dataset, config: &LearnerConfig, seed: RandomSeed) -> Result<FittedModel> {
    let input_dim = data
        .state_dim()
        .ok_or_else(|| crate::error::PblError::InsufficientData("empty dataset".into()))?;
    match config.method {
        Method::PblBlbm | Method::NonpessiBlbm => {
            let map = config.features.build(input_dim, data.action_count, seed.derive(&[0]))?;
            let posterior = blbm_fit(data, &map, &config.blbm)?;
            Ok(FittedModel {
                model: QModel::Linear { map },
                posterior,
                variational: None,
            })
        }
        Method::PblBnn | Method::NonpessiBnn => {
            let arch = MlpArchitecture::new(input_dim, config.hidden.clone(), data.action_count)?;
            let train = BnnTrainConfig {
                seed: seed.derive(&[1]).0,
                ..config.bnn.clone()
            };
            let fit = bnn_fit(data, &arch, &train)?;
            Ok(FittedModel {
                model: QModel::Mlp { arch },
                posterior: fit.posterior,
                variational: Some(fit.params),
            })
        }
        Method::Pevi => Err(domain_err("PEVI has no posterior")),
    }
}

/// Fits one stage at significance `alpha`.
pub fn fit_stage(data: &Dataset, config: &LearnerConfig, alpha: f64, seed: RandomSeed) -> Result<StageArtifact> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain_err(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    match config.method {
        Method::Pevi => {
            let input_dim = data
                .state_dim()
                .ok_or_else(|| crate::error::PblError::InsufficientData("empty dataset".into()))?;
            let map = config.features.build(input_dim, data.action_count, seed.derive(&[0]))?;
            let model = pevi_fit(data, &map, config.pevi.lambda, config.pevi.c, config.pevi.xi)?;
            Ok(StageArtifact::Pevi { map, model })
        }
        Method::NonpessiBlbm | Method::NonpessiBnn => {
            let fit = fit_posterior(data, config, seed)?;
            Ok(StageArtifact::PosteriorMean {
                model: fit.model,
                posterior: fit.posterior,
            })
        }
        Method::PblBlbm | Method::PblBnn => {
            let fit = fit_posterior(data, config, seed)?;
            match (&fit.model, config.solver, config.method) {
                (QModel::Linear { map }, BoundSolver::ClosedForm, Method::PblBlbm) => {
                    Ok(StageArtifact::ClosedFormBound {
                        map: map.clone(),
                        posterior: fit.posterior,
                        alpha,
                    })
                }
                _ => Ok(StageArtifact::SampledBound {
                    bound: LowerBoundSpec {
                        model: fit.model,
                        posterior: fit.posterior,
                        alpha,
                        num_samples: config.num_samples,
                        seed: seed.derive(&[2]),
                    },
                }),
            }
        }
    }
}
