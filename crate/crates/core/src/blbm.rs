//! Bayesian linear basis model with a conjugate Gaussian posterior.
//!
//! With prior `w ~ N(0, τ² I)` and Gaussian noise of variance `σ²`,
//!
//! ```text
//! Σ̂ = (ΦᵀΦ / σ² + I / τ²)⁻¹,    ŵ = Σ̂ Φᵀ r / σ²
//! ```
//!
//! where `Φ` stacks `φ(s_i, a_i)`. The credible ellipsoid
//! `{w : (w − ŵ)ᵀ Σ̂⁻¹ (w − ŵ) ≤ χ²_{1−α}(p)}` has a closed-form minimum of
//! `wᵀφ`, so the pessimistic bound needs no sampling.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{domain_err, PblError, Result};
use crate::features::FeatureMap;
use crate::numerics::{chi2_quantile, cholesky, dot, Matrix, SpdMatrix};
use crate::posterior::{Covariance, GaussianPosterior};

pub const NOISE_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariance {
    Fixed(f64),
    /// Residual variance of a preliminary ridge fit.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlbmConfig {
    pub prior_variance: f64,
    pub noise_variance: NoiseVariance,
}

impl Default for BlbmConfig {
    fn default() -> Self {
        Self {
            prior_variance: 1.0,
            noise_variance: NoiseVariance::Estimate,
        }
    }
}

/// Sufficient statistics `ΦᵀΦ` and `Φᵀr` of a dataset under a feature map.
pub(crate) struct Gram {
    pub gram: Matrix,
    pub xty: Vec<f64>,
    pub n: usize,
}

pub(crate) fn gram(data: &Dataset, map: &FeatureMap) -> Result<Gram> {
    if data.action_count != map.action_count() {
        return Err(domain_err(format!(
            "dataset has {} actions, feature map {}",
            data.action_count,
            map.action_count()
        )));
    }
    let p = map.joint_dim();
    let k = map.state_dim();
    let mut g = Matrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    let mut phi_full = vec![0.0; p];
    for ((s, &a), &r) in data.states.iter().zip(&data.actions).zip(&data.rewards) {
        let phi = map.encode_state(s)?;
        phi_full.iter_mut().for_each(|v| *v = 0.0);
        phi_full[a * k..(a + 1) * k].copy_from_slice(&phi);
        g.add_outer(&phi_full, 1.0);
        for (x, v) in xty[a * k..(a + 1) * k].iter_mut().zip(&phi) {
            *x += v * r;
        }
    }
    Ok(Gram {
        gram: g,
        xty,
        n: data.len(),
    })
}

/// Ridge residual variance `RSS / (n − tr H)`, floored.
fn estimate_noise_variance(data: &Dataset, map: &FeatureMap, stats: &Gram, ridge: f64) -> Result<f64> {
    let p = map.joint_dim();
    if stats.n < p + 1 {
        return Err(PblError::InsufficientData(format!(
            "noise variance estimation needs n >= p + 1 = {}, got n = {}",
            p + 1,
            stats.n
        )));
    }
    let mut a = stats.gram.clone();
    a.add_diag(ridge);
    let ch = cholesky(&SpdMatrix::new(a)?)?;
    let w = ch.solve(&stats.xty);
    let mut rss = 0.0;
    let k = map.state_dim();
    for ((s, &act), &r) in data.states.iter().zip(&data.actions).zip(&data.rewards) {
        let phi = map.encode_state(s)?;
        let pred = dot(&w[act * k..(act + 1) * k], &phi);
        rss += (r - pred) * (r - pred);
    }
    // tr H = tr((G + λI)⁻¹ G) = p − λ tr((G + λI)⁻¹)
    let inv = ch.inverse();
    let trace_inv: f64 = inv.matrix().diag().iter().sum();
    let dof = stats.n as f64 - (p as f64 - ridge * trace_inv);
    Ok((rss / dof.max(1.0)).max(NOISE_VARIANCE_FLOOR))
}

/// Conjugate posterior of the linear basis model. An empty dataset returns
/// the prior.
pub fn blbm_fit(data: &Dataset, map: &FeatureMap, config: &BlbmConfig) -> Result<GaussianPosterior> {
    let tau2 = config.prior_variance;
    if !(tau2 > 0.0) {
        return Err(domain_err(format!("prior variance must be positive, got {tau2}")));
    }
    let p = map.joint_dim();
    let stats = gram(data, map)?;
    let sigma2 = match config.noise_variance {
        NoiseVariance::Fixed(v) if v > 0.0 => v,
        NoiseVariance::Fixed(v) => {
            return Err(domain_err(format!("noise variance must be positive, got {v}")))
        }
        NoiseVariance::Estimate => estimate_noise_variance(data, map, &stats, 1.0 / tau2)?,
    };
    if data.is_empty() {
        return GaussianPosterior::new(
            vec![0.0; p],
            Covariance::Full(SpdMatrix::new(Matrix::identity(p).scale(tau2))?),
        );
    }
    let mut precision = stats.gram.scale(1.0 / sigma2);
    precision.add_diag(1.0 / tau2);
    let ch = cholesky(&SpdMatrix::new(precision)?)?;
    let rhs: Vec<f64> = stats.xty.iter().map(|v| v / sigma2).collect();
    let mean = ch.solve(&rhs);
    let cov = ch.inverse();
    GaussianPosterior::new(mean, Covariance::Full(cov))
}

/// Noise variance the fit would use, exposed for diagnostics.
pub fn fitted_noise_variance(data: &Dataset, map: &FeatureMap, config: &BlbmConfig) -> Result<f64> {
    match config.noise_variance {
        NoiseVariance::Fixed(v) => Ok(v),
        NoiseVariance::Estimate => {
            let stats = gram(data, map)?;
            estimate_noise_variance(data, map, &stats, 1.0 / config.prior_variance)
        }
    }
}

/// `√(χ²_{1−α}(p))`, the radius of the credible ellipsoid.
pub fn credible_radius(alpha: f64, p: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain_err(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(chi2_quantile(1.0 - alpha, p as u32)?.sqrt())
}

/// Exact minimum of `wᵀφ` over the credible ellipsoid:
/// `ŵᵀφ − √(χ²_{1−α}(p)) · √(φᵀ Σ̂ φ)`.
pub fn blbm_lower_bound(post: &GaussianPosterior, phi: &[f64], alpha: f64) -> Result<f64> {
    post.factor()?;
    let radius = credible_radius(alpha, post.dim())?;
    let var = post.variance_along(phi)?.max(0.0);
    Ok(post.mean_prediction(phi) - radius * var.sqrt())
}
