use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{Layout, Perturbation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Grad,
    Random,
    RandomF,
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackMethod::Grad => "grad",
            AttackMethod::Random => "random",
            AttackMethod::RandomF => "random_f",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPerturbation {
    pub perturbation: Perturbation,
    /// Estimated objective; absent for random baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Ranked adversarial initial states with provenance. Stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub method: AttackMethod,
    pub layout: String,
    pub epsilon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
    /// Subset ranking was restricted to the best-scoring units.
    #[serde(default)]
    pub pruned: bool,
    pub states: Vec<ScoredPerturbation>,
}

#[derive(Debug, Error)]
pub enum ResultError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed attack result: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize attack result: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("state {index} ({perturbation}) violates the result's constraints: {reason}")]
    Invalid { index: usize, perturbation: String, reason: String },
}

impl AttackResult {
    pub fn new(method: AttackMethod, layout: &Layout, epsilon: usize, states: Vec<ScoredPerturbation>) -> AttackResult {
        AttackResult {
            method,
            layout: layout.name.clone(),
            epsilon,
            p_freq: None,
            policy_id: None,
            trajectory_seed: None,
            n_traj: None,
            sample_seed: None,
            pruned: false,
            states,
        }
    }

    pub fn perturbations(&self) -> Vec<Perturbation> {
        self.states.iter().map(|s| s.perturbation.clone()).collect()
    }

    pub fn to_toml(&self) -> Result<String, ResultError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<AttackResult, ResultError> {
        Ok(toml::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ResultError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AttackResult, ResultError> {
        AttackResult::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Every state is feasible on `layout`, within budget, and grad results
    /// are sorted by score.
    pub fn validate(&self, layout: &Layout) -> Result<(), ResultError> {
        let invalid = |index: usize, p: &Perturbation, reason: String| ResultError::Invalid {
            index,
            perturbation: p.to_string(),
            reason,
        };
        for (i, s) in self.states.iter().enumerate() {
            let p = &s.perturbation;
            if p.len() > self.epsilon {
                return Err(invalid(i, p, format!("{} units exceed budget {}", p.len(), self.epsilon)));
            }
            layout.reset(Some(p)).map_err(|e| invalid(i, p, e.to_string()))?;
        }
        if self.method == AttackMethod::Grad {
            for (i, w) in self.states.windows(2).enumerate() {
                if w[0].score < w[1].score {
                    return Err(invalid(i + 1, &w[1].perturbation, "scores not in descending order".into()));
                }
            }
        }
        Ok(())
    }
}
