//! Boosted adversarial training: distil the original policy onto perturbed
//! inputs (kick-start), then fine-tune with PPO on a mix of initial states.

mod kickstart;

use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{collect_attack_trajectories, random_attack, AttackError, AttackResult};
use crate::featurize::{env_delta, EnvDelta};
use crate::gridworld::{Layout, Perturbation, PerturbationError};
use crate::nn::{softmax, softmax_t, NnError, PolicyParams};
use crate::rl::{continue_training, stream_rng, InitDistribution, RlError, TrainConfig, TrainOutcome};

pub use kickstart::{kickstart_loss, train_kickstart, EpochLoss, KickstartReport, LossParts};

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("infeasible BAT perturbation: {0}")]
    Perturbation(#[from] PerturbationError),
    #[error("invalid BAT config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed BAT config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatConfig {
    /// Softmax temperature of the teacher targets on perturbed inputs.
    pub temperature: f64,
    /// Relative value slack before the perturbed value term is penalised.
    pub alpha: f64,
    /// Weight of the perturbed-input loss.
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Fraction of trajectories used for training; the rest validate.
    pub train_fraction: f64,
    pub n_traj: usize,
    pub horizon: usize,
    /// Top-scoring states taken from the attack result.
    pub n_adversarial: usize,
    /// Additional uniformly sampled states with the same budget.
    pub n_random: usize,
    pub epsilon: usize,
    pub finetune_steps: u64,
    /// Weights of the fine-tune distribution over standard + perturbed
    /// states; uniform when absent.
    pub init_weights: Option<Vec<f64>>,
}

impl Default for BatConfig {
    fn default() -> Self {
        BatConfig {
            temperature: 1.5,
            alpha: 0.05,
            beta: 1.0,
            lr: 0.001,
            epochs: 100,
            minibatch: 64,
            train_fraction: 0.7,
            n_traj: 20,
            horizon: 800,
            n_adversarial: 5,
            n_random: 5,
            epsilon: 3,
            finetune_steps: 8_000_000,
            init_weights: None,
        }
    }
}

impl BatConfig {
    pub fn validate(&self) -> Result<(), DefenseError> {
        let bad = |m: String| Err(DefenseError::Config(m));
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return bad(format!("alpha and beta must be nonnegative, got {} and {}", self.alpha, self.beta));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.n_traj < 2 || self.horizon == 0 {
            return bad("epochs, minibatch and horizon must be positive and n_traj at least 2".into());
        }
        if !(self.lr >= 0.0) {
            return bad(format!("learning rate must be nonnegative, got {}", self.lr));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BatConfig, DefenseError> {
        let cfg: BatConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fine-tune distribution over the standard state and `perturbations`.
    pub fn init_distribution(&self, perturbations: &[Perturbation]) -> Result<InitDistribution, DefenseError> {
        match &self.init_weights {
            None => Ok(InitDistribution::uniform_with_standard(perturbations)),
            Some(w) => {
                if w.len() != perturbations.len() + 1 {
                    return Err(DefenseError::Config(format!(
                        "{} init weights for {} support points",
                        w.len(),
                        perturbations.len() + 1
                    )));
                }
                let support = std::iter::once(None).chain(perturbations.iter().cloned().map(Some));
                Ok(InitDistribution::new(support.zip(w.iter().copied()).collect())?)
            }
        }
    }
}

/// Top `n_adversarial` states of `attack` followed by `n_random` distinct
/// uniformly sampled ones within the same budget.
pub fn bat_perturbations(
    layout: &Layout,
    attack: &AttackResult,
    cfg: &BatConfig,
    seed: u64,
) -> Result<Vec<Perturbation>, DefenseError> {
    let mut out: Vec<Perturbation> = attack.states.iter().take(cfg.n_adversarial).map(|s| s.perturbation.clone()).collect();
    if out.len() < cfg.n_adversarial {
        warn!("attack result has only {} states, wanted {}", out.len(), cfg.n_adversarial);
    }
    if cfg.n_random > 0 {
        let pool = random_attack(layout, cfg.epsilon, cfg.n_random + out.len(), None, seed)?;
        let fresh: Vec<Perturbation> =
            pool.perturbations().into_iter().filter(|p| !out.contains(p)).take(cfg.n_random).collect();
        out.extend(fresh);
    }
    for p in &out {
        layout.reset(Some(p))?;
    }
    Ok(out)
}

/// One original-trajectory step with teacher targets and its perturbed
/// counterparts.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillSample {
    pub obs: Vec<f32>,
    /// Teacher policy at T = 1 on the original observation.
    pub teacher_probs: Vec<f64>,
    /// Teacher policy at temperature T on the original observation.
    pub tempered_probs: Vec<f64>,
    pub teacher_value: f64,
    /// Original observation with environment channels shifted by each
    /// perturbation's delta.
    pub perturbed_obs: Vec<Vec<f32>>,
}

/// Distillation data with a trajectory-level train/validation split.
#[derive(Clone, Debug)]
pub struct DistillDataset {
    pub obs_dim: usize,
    obs: Vec<f32>,
    teacher_probs: Vec<f64>,
    tempered_probs: Vec<f64>,
    teacher_values: Vec<f64>,
    /// Trajectory index of each sample.
    pub trajectory: Vec<usize>,
    pub perturbations: Vec<Perturbation>,
    deltas: Vec<Vec<(usize, f32)>>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl DistillDataset {
    pub fn len(&self) -> usize {
        self.teacher_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teacher_values.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f32] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn sample(&self, i: usize) -> DistillSample {
        let obs = self.observation(i).to_vec();
        let perturbed_obs = self
            .deltas
            .iter()
            .map(|d| {
                let mut o = obs.clone();
                for &(k, v) in d {
                    o[k] += v;
                }
                o
            })
            .collect();
        DistillSample {
            obs,
            teacher_probs: self.teacher_probs[i * 36..(i + 1) * 36].to_vec(),
            tempered_probs: self.tempered_probs[i * 36..(i + 1) * 36].to_vec(),
            teacher_value: self.teacher_values[i],
            perturbed_obs,
        }
    }
}

/// Teacher trajectories from the standard state, teacher targets computed
/// once, and a split that keeps whole trajectories on one side.
pub fn build_distill_dataset(
    teacher: &PolicyParams<f32>,
    layout: &Layout,
    perturbations: &[Perturbation],
    cfg: &BatConfig,
    seed: u64,
) -> Result<DistillDataset, DefenseError> {
    cfg.validate()?;
    let deltas = perturbations
        .iter()
        .map(|p| env_delta(layout, p).map(|d: EnvDelta| d.flat(layout)))
        .collect::<Result<Vec<_>, _>>()?;
    let trajectories = collect_attack_trajectories(teacher, layout, cfg.n_traj, cfg.horizon, seed)?;
    let obs_dim = teacher.arch().input_dim();
    let n: usize = trajectories.iter().map(|t| t.steps.len()).sum();
    let mut ds = DistillDataset {
        obs_dim,
        obs: Vec::with_capacity(n * obs_dim),
        teacher_probs: Vec::with_capacity(n * 36),
        tempered_probs: Vec::with_capacity(n * 36),
        teacher_values: Vec::with_capacity(n),
        trajectory: Vec::with_capacity(n),
        perturbations: perturbations.to_vec(),
        deltas,
        train: Vec::new(),
        val: Vec::new(),
    };
    for (ti, traj) in trajectories.iter().enumerate() {
        for step in &traj.steps {
            let (logits, value) = teacher.forward(&step.obs)?;
            let z: Vec<f64> = logits.iter().map(|&x| x as f64).collect();
            ds.teacher_probs.extend(softmax(&z, 1.0));
            ds.tempered_probs.extend(softmax_t(&z, cfg.temperature)?.probs);
            ds.teacher_values.push(value as f64);
            ds.obs.extend_from_slice(&step.obs);
            ds.trajectory.push(ti);
        }
    }
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.shuffle(&mut stream_rng(seed, u64::MAX));
    let n_train = ((trajectories.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, trajectories.len() - 1);
    let train_traj = &order[..n_train];
    for i in 0..ds.len() {
        if train_traj.contains(&ds.trajectory[i]) {
            ds.train.push(i);
        } else {
            ds.val.push(i);
        }
    }
    Ok(ds)
}

/// PPO self-play fine-tuning of the kick-started policy from `init_dist`.
/// A point mass on the standard state is plain extra training.
pub fn bat_finetune(
    start: &PolicyParams<f32>,
    layout: &Layout,
    init_dist: &InitDistribution,
    steps: u64,
    seed: u64,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, DefenseError> {
    let algo = if init_dist.is_point_mass_standard() { "extra" } else { "bat" };
    Ok(continue_training(start, layout, init_dist, steps, seed, train_cfg, algo)?)
}

/// Everything produced by one BAT run.
#[derive(Clone, Debug)]
pub struct BatOutcome {
    pub perturbations: Vec<Perturbation>,
    pub start_policy: PolicyParams<f32>,
    pub report: KickstartReport,
    pub robust: TrainOutcome,
}

/// Kick-start then fine-tune.
pub fn run_bat(
    teacher: &PolicyParams<f32>,
    layout: &Layout,
    attack: &AttackResult,
    cfg: &BatConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<BatOutcome, DefenseError> {
    let perturbations = bat_perturbations(layout, attack, cfg, seed)?;
    let dataset = build_distill_dataset(teacher, layout, &perturbations, cfg, seed)?;
    let (start_policy, report) = train_kickstart(teacher, &dataset, cfg, seed)?;
    let init = cfg.init_distribution(&perturbations)?;
    let robust = bat_finetune(&start_policy, layout, &init, cfg.finetune_steps, seed, train_cfg)?;
    Ok(BatOutcome { perturbations, start_policy, report, robust })
}
