//! Parametric Q-models `f(s, a, w)`.

use serde::{Deserialize, Serialize};

use crate::bnn::{self, MlpArchitecture};
use crate::error::{shape_err, Result};
use crate::features::FeatureMap;
use crate::numerics::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QModel {
    /// `f(s, a, w) = wᵀ φ(s, a)`.
    Linear { map: FeatureMap },
    /// One network output per action.
    Mlp { arch: MlpArchitecture },
}

impl QModel {
    pub fn param_dim(&self) -> usize {
        match self {
            QModel::Linear { map } => map.joint_dim(),
            QModel::Mlp { arch } => arch.param_count(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            QModel::Linear { map } => map.input_dim(),
            QModel::Mlp { arch } => arch.input_dim,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            QModel::Linear { map } => map.action_count(),
            QModel::Mlp { arch } => arch.output_dim,
        }
    }

    /// `f(s, ·, w)` for every action.
    pub fn q_values(&self, w: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.param_dim() {
            return Err(shape_err(format!(
                "weight vector has length {}, model needs {}",
                w.len(),
                self.param_dim()
            )));
        }
        match self {
            QModel::Linear { map } => {
                let phi = map.encode_state(s)?;
                let k = phi.len();
                Ok((0..map.action_count())
                    .map(|a| dot(&w[a * k..(a + 1) * k], &phi))
                    .collect())
            }
            QModel::Mlp { arch } => bnn::forward(w, arch, s),
        }
    }

    /// Elementwise minimum over the rows of `weights` of `f(s, a, w)`, for
    /// every input and action. Returns `inputs.len()` vectors of length |A|.
    pub fn min_over_weights(&self, weights: &Matrix, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if weights.cols() != self.param_dim() {
            return Err(shape_err(format!(
                "weight matrix has {} columns, model needs {}",
                weights.cols(),
                self.param_dim()
            )));
        }
        let na = self.action_count();
        let mut out = vec![vec![f64::INFINITY; na]; inputs.len()];
        match self {
            QModel::Linear { map } => {
                let phis: Vec<Vec<f64>> = inputs.iter().map(|s| map.encode_state(s)).collect::<Result<_>>()?;
                linear_min(weights, &phis, map.state_dim(), na, &mut out);
            }
            QModel::Mlp { arch } => {
                for r in 0..weights.rows() {
                    bnn::forward_each(weights.row(r), arch, inputs, |i, q| {
                        for (slot, v) in out[i].iter_mut().zip(q) {
                            if *v < *slot {
                                *slot = *v;
                            }
                        }
                    })?;
                }
            }
        }
        Ok(out)
    }
}

/// States per GEMM block.
const BLOCK: usize = 64;

/// Per-action `min_r w_r[a]ᵀ φ` via blocked matrix products.
fn linear_min(weights: &Matrix, phis: &[Vec<f64>], k: usize, na: usize, out: &mut [Vec<f64>]) {
    let rows = weights.rows();
    let p = weights.cols();
    if rows == 0 || k == 0 {
        return;
    }
    let mut block = vec![0.0; BLOCK * k];
    let mut prod = vec![0.0; BLOCK * rows];
    for (start, chunk) in (0..phis.len()).step_by(BLOCK).zip(phis.chunks(BLOCK)) {
        let m = chunk.len();
        for (dst, phi) in block.chunks_exact_mut(k).zip(chunk) {
            dst.copy_from_slice(phi);
        }
        for a in 0..na {
            // prod (m × rows) = block (m × k) · W_aᵀ (k × rows)
            // SAFETY: every pointer/stride pair stays inside its buffer for
            // the given dimensions; `prod` does not alias the inputs.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    rows,
                    1.0,
                    block.as_ptr(),
                    k as isize,
                    1,
                    weights.as_slice().as_ptr().add(a * k),
                    1,
                    p as isize,
                    0.0,
                    prod.as_mut_ptr(),
                    rows as isize,
                    1,
                );
            }
            for (i, row) in prod.chunks_exact(rows).take(m).enumerate() {
                let v = row.iter().copied().fold(f64::INFINITY, f64::min);
                out[start + i][a] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_q_values_use_blocks() {
        let map = FeatureMap::linear(2, 2, false).unwrap();
        let m = QModel::Linear { map };
        assert_eq!(m.param_dim(), 4);
        let q = m.q_values(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0]).unwrap();
        assert_eq!(q, vec![3.0, 7.0]);
    }

    #[test]
    fn min_over_weights_matches_brute_force() {
        let map = FeatureMap::linear(2, 2, true).unwrap();
        let m = QModel::Linear { map };
        let w = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0],
        ])
        .unwrap();
        let inputs = vec![vec![2.0, 3.0], vec![-1.0, 0.5]];
        let mins = m.min_over_weights(&w, &inputs).unwrap();
        for (s, got) in inputs.iter().zip(&mins) {
            let q0 = m.q_values(w.row(0), s).unwrap();
            let q1 = m.q_values(w.row(1), s).unwrap();
            for a in 0..2 {
                assert_eq!(got[a], q0[a].min(q1[a]));
            }
        }
    }

    #[test]
    fn blocked_min_matches_rowwise_dots() {
        use crate::numerics::{standard_normal_vec, RandomSeed};
        let map = crate::features::make_feature_map(3, 20, 1.0, 2, RandomSeed(4)).unwrap();
        let m = QModel::Linear { map };
        let mut rng = RandomSeed(5).rng();
        let w = Matrix::from_row_major(37, 40, standard_normal_vec(&mut rng, 37 * 40)).unwrap();
        let inputs: Vec<Vec<f64>> = (0..150).map(|_| standard_normal_vec(&mut rng, 3)).collect();
        let mins = m.min_over_weights(&w, &inputs).unwrap();
        for (s, got) in inputs.iter().zip(&mins) {
            for a in 0..2 {
                let want = (0..37)
                    .map(|r| m.q_values(w.row(r), s).unwrap()[a])
                    .fold(f64::INFINITY, f64::min);
                assert!((got[a] - want).abs() < 1e-12);
            }
        }
    }
}
