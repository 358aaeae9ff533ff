//! Gaussian posterior `N(ŵ, Σ̂)` over model parameters.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::numerics::{
    cholesky, dot, standard_normal, Cholesky, Factorization, Matrix, RandomSeed, SpdMatrix,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Covariance {
    Full(SpdMatrix),
    /// Positive variances of a mean-field posterior.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    covariance: Covariance,
    #[serde(skip)]
    factor: OnceLock<Cholesky>,
}

impl PartialEq for GaussianPosterior {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, covariance: Covariance) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(domain_err("posterior dimension must be positive"));
        }
        match &covariance {
            Covariance::Full(s) if s.dim() != p => {
                return Err(shape_err(format!("mean has length {p}, covariance is {0}x{0}", s.dim())))
            }
            Covariance::Diagonal(d) if d.len() != p => {
                return Err(shape_err(format!("mean has length {p}, diagonal has {}", d.len())))
            }
            Covariance::Diagonal(d) if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) => {
                return Err(domain_err("diagonal covariance entries must be positive"))
            }
            _ => {}
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(domain_err("posterior mean has non-finite entries"));
        }
        Ok(Self {
            mean,
            covariance,
            factor: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn covariance_matrix(&self) -> Matrix {
        match &self.covariance {
            Covariance::Full(s) => s.matrix().clone(),
            Covariance::Diagonal(d) => Matrix::from_diag(d),
        }
    }

    /// Cholesky factor of a full covariance, computed once.
    pub fn factor(&self) -> Result<Option<&Cholesky>> {
        match &self.covariance {
            Covariance::Diagonal(_) => Ok(None),
            Covariance::Full(s) => {
                if let Some(f) = self.factor.get() {
                    return Ok(Some(f));
                }
                let f = cholesky(s)?;
                Ok(Some(self.factor.get_or_init(|| f)))
            }
        }
    }

    /// `(w − ŵ)ᵀ Σ̂⁻¹ (w − ŵ)`, via a triangular solve for full covariances.
    pub fn mahalanobis_sq(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.dim() {
            return Err(shape_err(format!("weight vector has length {}, expected {}", w.len(), self.dim())));
        }
        let diff: Vec<f64> = w.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(match (&self.covariance, self.factor()?) {
            (_, Some(f)) => f.inv_quad_form(&diff),
            (Covariance::Diagonal(d), None) => diff.iter().zip(d).map(|(x, v)| x * x / v).sum(),
            (Covariance::Full(_), None) => unreachable!("full covariance always has a factor"),
        })
    }

    /// `φᵀ Σ̂ φ`; zero entries of `φ` are skipped.
    pub fn variance_along(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.dim() {
            return Err(shape_err(format!("feature vector has length {}, expected {}", phi.len(), self.dim())));
        }
        Ok(match &self.covariance {
            Covariance::Diagonal(d) => phi.iter().zip(d).map(|(x, v)| x * x * v).sum(),
            Covariance::Full(s) => {
                let m = s.matrix();
                let nz: Vec<usize> = (0..phi.len()).filter(|&i| phi[i] != 0.0).collect();
                let mut acc = 0.0;
                for &i in &nz {
                    let row = m.row(i);
                    let mut r = 0.0;
                    for &j in &nz {
                        r += row[j] * phi[j];
                    }
                    acc += phi[i] * r;
                }
                acc
            }
        })
    }

    pub fn mean_prediction(&self, phi: &[f64]) -> f64 {
        dot(&self.mean, phi)
    }

    /// `count × p` draws. Rows are generated sequentially from one stream,
    /// so the first `m` rows of a larger draw equal a draw of size `m`.
    pub fn sample(&self, count: usize, seed: RandomSeed) -> Result<Matrix> {
        match &self.covariance {
            Covariance::Full(s) => {
                // the factor is validated here so a non-SPD covariance surfaces
                // as a factorization error naming the pivot
                self.factor()?;
                Ok(crate::numerics::mvn_sample(
                    &self.mean,
                    s.matrix(),
                    count,
                    seed,
                    Factorization::Strict,
                )?)
            }
            Covariance::Diagonal(d) => {
                if count == 0 {
                    return Err(domain_err("sample count must be positive"));
                }
                let sd: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
                let mut rng = seed.rng();
                let p = self.dim();
                let mut out = Matrix::zeros(count, p);
                for r in 0..count {
                    let row = out.row_mut(r);
                    for j in 0..p {
                        row[j] = self.mean[j] + sd[j] * standard_normal(&mut rng);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_full_agree() {
        let d = vec![0.5, 2.0, 1.5];
        let a = GaussianPosterior::new(vec![1.0, 0.0, -1.0], Covariance::Diagonal(d.clone())).unwrap();
        let b = GaussianPosterior::new(
            vec![1.0, 0.0, -1.0],
            Covariance::Full(SpdMatrix::from_diag(&d).unwrap()),
        )
        .unwrap();
        let w = [0.3, 1.2, 0.4];
        assert!((a.mahalanobis_sq(&w).unwrap() - b.mahalanobis_sq(&w).unwrap()).abs() < 1e-12);
        let phi = [1.0, 0.0, 2.0];
        assert!((a.variance_along(&phi).unwrap() - 6.5).abs() < 1e-12);
        assert!((b.variance_along(&phi).unwrap() - 6.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_diagonal() {
        assert!(GaussianPosterior::new(vec![0.0], Covariance::Diagonal(vec![0.0])).is_err());
        assert!(GaussianPosterior::new(vec![0.0, 1.0], Covariance::Diagonal(vec![1.0])).is_err());
    }

    #[test]
    fn non_spd_fails_on_factor() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let p = GaussianPosterior::new(vec![0.0, 0.0], Covariance::Full(SpdMatrix::new(m).unwrap())).unwrap();
        assert!(p.sample(3, RandomSeed(0)).is_err());
        assert!(p.mahalanobis_sq(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn sample_prefix_property() {
        let p = GaussianPosterior::new(vec![0.0, 1.0], Covariance::Diagonal(vec![1.0, 4.0])).unwrap();
        let big = p.sample(50, RandomSeed(3)).unwrap();
        let small = p.sample(20, RandomSeed(3)).unwrap();
        for r in 0..20 {
            assert_eq!(big.row(r), small.row(r));
        }
    }

    #[test]
    fn serde_round_trip() {
        let p = GaussianPosterior::new(
            vec![0.25, -1.0],
            Covariance::Full(SpdMatrix::from_diag(&[1.0, 3.0]).unwrap()),
        )
        .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: GaussianPosterior = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
