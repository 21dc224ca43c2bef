//! PPO training: self-play, fictitious co-play against a frozen partner pool,
//! and training from a distribution of initial states.

mod gae;
mod policy;
mod pool;
mod ppo;
mod rollout;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridworld::{Layout, Perturbation, PerturbationError};
use crate::nn::{CheckpointError, NnError};

pub use gae::{gae, gae_and_returns, normalize};
pub use policy::{act, marginal, policy_terms, sample_index, ActStep, Control, PolicyTerms};
pub use pool::{Level, PartnerPool, PoolEntry, POOL_LEVELS, POOL_PARTNERS};
pub use ppo::{ppo_update, PpoConfig, PpoStats};
pub use rollout::{collect_rollouts, collect_with_partners, RolloutBatch, Shaping};
pub use train::{
    continue_fcp, continue_training, train_div_start, train_fcp, train_self_play, write_metrics_csv, ShapingConfig, TrainConfig,
    TrainMetrics, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("infeasible initial state: {0}")]
    Infeasible(#[from] PerturbationError),
    #[error("invalid initial-state distribution: {0}")]
    Distribution(String),
    #[error("invalid partner pool: {0}")]
    Pool(String),
    #[error("policy architecture {found:?} does not fit layout {layout} ({expected:?})")]
    LayoutMismatch { layout: String, found: (usize, usize, usize), expected: (usize, usize, usize) },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Weighted set of initial environmental states. `None` is the standard state.
#[derive(Clone, Debug, PartialEq)]
pub struct InitDistribution {
    entries: Vec<(Option<Perturbation>, f64)>,
}

impl InitDistribution {
    pub fn new(entries: Vec<(Option<Perturbation>, f64)>) -> Result<InitDistribution, RlError> {
        if entries.is_empty() {
            return Err(RlError::Distribution("no support points".into()));
        }
        if let Some((_, w)) = entries.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(RlError::Distribution(format!("bad weight {w}")));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(RlError::Distribution(format!("weights sum to {total}, expected 1")));
        }
        Ok(InitDistribution { entries })
    }

    /// Point mass on the standard initial state.
    pub fn standard() -> InitDistribution {
        InitDistribution { entries: vec![(None, 1.0)] }
    }

    /// Uniform over the standard state plus the given perturbations.
    pub fn uniform_with_standard(perturbations: &[Perturbation]) -> InitDistribution {
        let n = perturbations.len() + 1;
        let w = 1.0 / n as f64;
        let mut entries = vec![(None, w)];
        entries.extend(perturbations.iter().map(|p| (Some(p.clone()), w)));
        InitDistribution { entries }
    }

    pub fn entries(&self) -> &[(Option<Perturbation>, f64)] {
        &self.entries
    }

    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn is_point_mass_standard(&self) -> bool {
        self.entries.iter().all(|(p, w)| *w == 0.0 || p.as_ref().map_or(true, |p| p.is_empty()))
    }

    /// Checks every support point against the layout.
    pub fn validate(&self, layout: &Layout) -> Result<(), RlError> {
        for (p, _) in &self.entries {
            layout.reset(p.as_ref())?;
        }
        Ok(())
    }

    /// Draws exactly one uniform variate regardless of the support.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<&Perturbation> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (p, w) in &self.entries {
            acc += w;
            if u < acc {
                return p.as_ref();
            }
        }
        self.entries.iter().rev().find(|(_, w)| *w > 0.0).and_then(|(p, _)| p.as_ref())
    }
}

/// Independent random stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn check_layout_fit(arch: &crate::nn::ArchSpec, layout: &Layout) -> Result<(), RlError> {
    let expected = (crate::featurize::NUM_CHANNELS, layout.width, layout.height);
    let found = (arch.channels, arch.width, arch.height);
    if found != expected {
        return Err(RlError::LayoutMismatch { layout: layout.name.clone(), found, expected });
    }
    Ok(())
}
