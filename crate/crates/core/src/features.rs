//! Basis functions for the linear Q-model.
//!
//! The default basis is random Fourier features approximating the Gaussian
//! kernel `exp(-gamma ‖x - y‖²)`:
//!
//! ```text
//! φ_j(s) = √(2/K) · cos(W_j · s + b_j),   W_j ~ N(0, 2·gamma·I),  b_j ~ U[0, 2π)
//! ```
//!
//! A raw linear basis (state plus optional intercept) is also provided for
//! environments whose mean reward is exactly linear in the state.
//!
//! State-action features use a per-action block layout: block `a` of
//! `φ(s, a)` holds `φ(s)` and every other block is zero, so each action
//! carries its own coefficients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::numerics::{standard_normal, RandomSeed};

pub const DEFAULT_NUM_FEATURES: usize = 100;
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    RandomFourier {
        gamma: f64,
        /// `K × d`, row-major.
        frequencies: Vec<f64>,
        offsets: Vec<f64>,
    },
    Linear {
        intercept: bool,
    },
}

/// Immutable basis map over states of dimension `input_dim` with
/// `action_count` actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    input_dim: usize,
    action_count: usize,
    basis: Basis,
}

/// Draws a random Fourier feature map.
pub fn make_feature_map(
    input_dim: usize,
    num_features: usize,
    gamma: f64,
    action_count: usize,
    seed: RandomSeed,
) -> Result<FeatureMap> {
    if input_dim == 0 || num_features == 0 || action_count == 0 {
        return Err(domain_err(format!(
            "feature map needs positive sizes, got d={input_dim}, K={num_features}, |A|={action_count}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(domain_err(format!("gamma must be positive, got {gamma}")));
    }
    let mut rng = seed.rng();
    let scale = (2.0 * gamma).sqrt();
    let frequencies = (0..num_features * input_dim)
        .map(|_| scale * standard_normal(&mut rng))
        .collect();
    let offsets = (0..num_features)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    Ok(FeatureMap {
        input_dim,
        action_count,
        basis: Basis::RandomFourier {
            gamma,
            frequencies,
            offsets,
        },
    })
}

impl FeatureMap {
    /// Random Fourier map built from explicit frequencies and offsets.
    pub fn from_parts(
        input_dim: usize,
        action_count: usize,
        gamma: f64,
        frequencies: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || action_count == 0 || offsets.is_empty() {
            return Err(domain_err("feature map sizes must be positive"));
        }
        if frequencies.len() != offsets.len() * input_dim {
            return Err(shape_err(format!(
                "frequencies have {} entries, expected {}",
                frequencies.len(),
                offsets.len() * input_dim
            )));
        }
        Ok(Self {
            input_dim,
            action_count,
            basis: Basis::RandomFourier {
                gamma,
                frequencies,
                offsets,
            },
        })
    }

    pub fn linear(input_dim: usize, action_count: usize, intercept: bool) -> Result<Self> {
        if input_dim == 0 || action_count == 0 {
            return Err(domain_err("feature map sizes must be positive"));
        }
        Ok(Self {
            input_dim,
            action_count,
            basis: Basis::Linear { intercept },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// Length of `φ(s)`.
    pub fn state_dim(&self) -> usize {
        match &self.basis {
            Basis::RandomFourier { offsets, .. } => offsets.len(),
            Basis::Linear { intercept } => self.input_dim + usize::from(*intercept),
        }
    }

    /// Length `p = K · |A|` of `φ(s, a)`.
    pub fn joint_dim(&self) -> usize {
        self.state_dim() * self.action_count
    }

    pub fn encode_state(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.input_dim {
            return Err(shape_err(format!(
                "state has length {}, feature map expects {}",
                s.len(),
                self.input_dim
            )));
        }
        Ok(match &self.basis {
            Basis::RandomFourier {
                frequencies,
                offsets,
                ..
            } => {
                let k = offsets.len();
                let amp = (2.0 / k as f64).sqrt();
                offsets
                    .iter()
                    .enumerate()
                    .map(|(j, b)| {
                        let w = &frequencies[j * self.input_dim..(j + 1) * self.input_dim];
                        let z: f64 = w.iter().zip(s).map(|(a, x)| a * x).sum();
                        amp * (z + b).cos()
                    })
                    .collect()
            }
            Basis::Linear { intercept } => {
                let mut v = Vec::with_capacity(self.state_dim());
                if *intercept {
                    v.push(1.0);
                }
                v.extend_from_slice(s);
                v
            }
        })
    }

    pub fn encode_state_action(&self, s: &[f64], a: usize) -> Result<Vec<f64>> {
        let phi = self.encode_state(s)?;
        self.place_block(&phi, a)
    }

    /// Embeds a state encoding into the block for action `a`.
    pub fn place_block(&self, phi: &[f64], a: usize) -> Result<Vec<f64>> {
        if a >= self.action_count {
            return Err(domain_err(format!(
                "action index {a} out of range for {} actions",
                self.action_count
            )));
        }
        let k = self.state_dim();
        let mut out = vec![0.0; k * self.action_count];
        out[a * k..(a + 1) * k].copy_from_slice(phi);
        Ok(out)
    }
}

/// Flattens a history `(s¹, a¹, …, sᵗ)` into `s¹ ‖ onehot(a¹) ‖ … ‖ sᵗ`.
///
/// `actions` holds one entry per stage before the last state.
pub fn encode_history(states: &[&[f64]], actions: &[usize], action_count: usize) -> Result<Vec<f64>> {
    if states.is_empty() || actions.len() + 1 != states.len() {
        return Err(shape_err(format!(
            "history needs one more state than actions, got {} states and {} actions",
            states.len(),
            actions.len()
        )));
    }
    let mut out = Vec::new();
    for (t, s) in states.iter().enumerate() {
        out.extend_from_slice(s);
        if let Some(&a) = actions.get(t) {
            if a >= action_count {
                return Err(domain_err(format!("action index {a} out of range")));
            }
            out.extend((0..action_count).map(|j| if j == a { 1.0 } else { 0.0 }));
        }
    }
    Ok(out)
}

/// Dimension of the encoded history at a stage, given per-stage state dims.
pub fn history_dim(state_dims: &[usize], action_count: usize) -> usize {
    state_dims.iter().sum::<usize>() + action_count * state_dims.len().saturating_sub(1)
}
