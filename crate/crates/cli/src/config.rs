//! Experiment configuration and its content digest.

use std::path::PathBuf;

use anyhow::{bail, ensure, Result};
use pbl_core::envs::EnvSpec;
use pbl_core::learner::{LearnerConfig, Method};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

fn default_mc_states() -> usize {
    2000
}

fn default_replications() -> usize {
    1
}

/// One method to run in every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    /// Output directory name; derived from the method and its tuning
    /// parameter when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub learner: LearnerConfig,
}

impl MethodEntry {
    pub fn new(learner: LearnerConfig) -> Self {
        Self { name: None, learner }
    }

    pub fn named(name: &str, learner: LearnerConfig) -> Self {
        Self {
            name: Some(name.to_string()),
            learner,
        }
    }

    /// Name of the method's tuning parameter and its value.
    pub fn param(&self) -> (&'static str, f64) {
        match self.learner.method {
            Method::PblBlbm | Method::PblBnn => ("alpha", self.learner.alpha),
            Method::Pevi => ("c", self.learner.pevi.c),
            Method::NonpessiBlbm | Method::NonpessiBnn => ("", 0.0),
        }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let (p, v) = self.param();
        if p.is_empty() {
            self.learner.method.label().to_string()
        } else {
            format!("{}_{p}{v}", self.learner.method.label())
        }
    }
}

/// Full-factorial experiment over `n × ε × σ`, replicated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Environment; its `epsilon` and `noise_std` are overridden per cell.
    pub env: EnvSpec,
    pub methods: Vec<MethodEntry>,
    pub n: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Rollouts per regret estimate.
    #[serde(default = "default_mc_states")]
    pub mc_states: usize,
    /// Not part of the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        ensure!(!self.methods.is_empty(), "at least one method is required");
        ensure!(!self.n.is_empty() && self.n.iter().all(|&n| n >= 1), "n must be a non-empty list of positive sizes");
        ensure!(
            !self.epsilon.is_empty() && self.epsilon.iter().all(|e| (0.0..=1.0).contains(e)),
            "epsilon must be a non-empty list of values in [0, 1]"
        );
        ensure!(
            !self.sigma.is_empty() && self.sigma.iter().all(|s| *s >= 0.0 && s.is_finite()),
            "sigma must be a non-empty list of nonnegative values"
        );
        ensure!(self.replications >= 1, "replications must be at least 1");
        ensure!(self.mc_states >= 1, "mc_states must be at least 1");
        let mut names = Vec::new();
        for m in &self.methods {
            let l = &m.learner;
            ensure!(l.alpha > 0.0 && l.alpha < 1.0, "alpha must lie in (0, 1), got {}", l.alpha);
            ensure!(l.num_samples >= 1, "num_samples must be at least 1");
            let name = m.label();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
                bail!("method name {name:?} must be non-empty and use only [A-Za-z0-9._-]");
            }
            if names.contains(&name) {
                bail!("duplicate method name {name:?}");
            }
            names.push(name);
        }
        Ok(())
    }

    /// Canonical JSON: sorted keys, output directory removed.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        // serde_json's default map is ordered by key
        let v = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
