use std::io::Write;
use std::path::Path;

use log::info;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::gae::gae_and_returns;
use super::ppo::{ppo_update, PpoConfig, PpoStats};
use super::rollout::{collect, RewardSpec, Shaping};
use super::{check_layout_fit, stream_rng, InitDistribution, PartnerPool, RlError};
use crate::gridworld::Layout;
use crate::nn::{Activation, Adam, ArchSpec, CheckpointMeta, HeadKind, PolicyParams};

/// Training-loop settings shared by every regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub horizon: usize,
    pub episodes_per_update: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub shared_trunk: bool,
    /// Environment steps between retained checkpoints.
    pub checkpoint_every: u64,
    /// Multiplier on the training reward; reported scores are unscaled.
    pub reward_scale: f64,
    pub shaping: Option<ShapingConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ppo: PpoConfig::default(),
            horizon: 800,
            episodes_per_update: 5,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            shared_trunk: true,
            checkpoint_every: 100_000,
            reward_scale: 0.1,
            shaping: None,
        }
    }
}

/// Serializable mirror of [`Shaping`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingConfig {
    pub onion_in_pot: f64,
    pub dish_pickup: f64,
    pub soup_pickup: f64,
    pub anneal_steps: u64,
}

impl From<&ShapingConfig> for Shaping {
    fn from(c: &ShapingConfig) -> Shaping {
        Shaping {
            onion_in_pot: c.onion_in_pot,
            dish_pickup: c.dish_pickup,
            soup_pickup: c.soup_pickup,
            anneal_steps: c.anneal_steps,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self, layout: &Layout, head: HeadKind) -> ArchSpec {
        ArchSpec {
            hidden: self.hidden.clone(),
            activation: self.activation,
            shared_trunk: self.shared_trunk,
            head,
            ..ArchSpec::for_layout(layout)
        }
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.horizon * self.episodes_per_update.max(1)) as u64
    }
}

/// One row per PPO update.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainMetrics {
    pub step: u64,
    pub mean_score: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: PolicyParams<f32>,
    /// Retained checkpoints in increasing step order; the last is `policy`.
    pub history: Vec<PolicyParams<f32>>,
    pub metrics: Vec<TrainMetrics>,
}

/// Self-play from the standard initial state.
pub fn train_self_play(layout: &Layout, total_steps: u64, seed: u64, cfg: &TrainConfig) -> Result<TrainOutcome, RlError> {
    train_div_start(layout, &InitDistribution::standard(), total_steps, seed, cfg)
}

/// Self-play with each episode's initial state drawn from `init_dist`.
pub fn train_div_start(
    layout: &Layout,
    init_dist: &InitDistribution,
    total_steps: u64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RlError> {
    init_dist.validate(layout)?;
    let mut policy = PolicyParams::init(cfg.arch(layout, HeadKind::Joint), seed)?;
    policy.meta.algo = if init_dist.is_point_mass_standard() { "sp" } else { "div-start" }.into();
    run(policy, layout, init_dist, None, total_steps, seed, cfg)
}

/// Fictitious co-play: the learner (factorized head) is paired each episode
/// with a frozen partner drawn uniformly from `pool`.
pub fn train_fcp(
    layout: &Layout,
    pool: &PartnerPool,
    total_steps: u64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RlError> {
    for e in pool.entries() {
        check_layout_fit(e.params.arch(), layout)?;
    }
    let mut policy = PolicyParams::init(cfg.arch(layout, HeadKind::Factorized), seed)?;
    policy.meta.algo = "fcp".into();
    run(policy, layout, &InitDistribution::standard(), Some(pool), total_steps, seed, cfg)
}

/// More self-play PPO starting from an existing policy, with a fresh
/// optimizer. A point mass on the standard state gives plain extra training.
pub fn continue_training(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    init_dist: &InitDistribution,
    total_steps: u64,
    seed: u64,
    cfg: &TrainConfig,
    algo: &str,
) -> Result<TrainOutcome, RlError> {
    init_dist.validate(layout)?;
    check_layout_fit(policy.arch(), layout)?;
    let mut start = policy.clone();
    start.meta = CheckpointMeta {
        seed,
        steps: policy.meta.steps,
        algo: algo.into(),
        parent: Some(policy.id()),
    };
    run(start, layout, init_dist, None, total_steps, seed, cfg)
}

/// More fictitious co-play against `pool`, starting from an existing
/// learner, with a fresh optimizer.
pub fn continue_fcp(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    pool: &PartnerPool,
    total_steps: u64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RlError> {
    check_layout_fit(policy.arch(), layout)?;
    let mut start = policy.clone();
    start.meta = CheckpointMeta { seed, steps: policy.meta.steps, algo: "extra-fcp".into(), parent: Some(policy.id()) };
    run(start, layout, &InitDistribution::standard(), Some(pool), total_steps, seed, cfg)
}

fn sub_seed(seed: u64, tag: u64, iteration: u64) -> u64 {
    stream_rng(seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15), iteration).next_u64()
}

fn run(
    mut policy: PolicyParams<f32>,
    layout: &Layout,
    init_dist: &InitDistribution,
    pool: Option<&PartnerPool>,
    total_steps: u64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RlError> {
    const COLLECT: u64 = 1;
    const UPDATE: u64 = 2;
    let base_steps = policy.meta.steps;
    let mut optimizer = Adam::for_params(&policy);
    let mut history = Vec::new();
    let mut metrics = Vec::new();
    let shaping = cfg.shaping.as_ref().map(Shaping::from);
    let mut done = 0u64;
    let mut next_checkpoint = cfg.checkpoint_every.max(1);
    let mut iteration = 0u64;

    while done < total_steps {
        let remaining = total_steps - done;
        let episodes = (remaining.div_ceil(cfg.horizon as u64) as usize).min(cfg.episodes_per_update.max(1));
        let reward = RewardSpec {
            scale: cfg.reward_scale,
            shaping_weight: shaping.as_ref().map_or(0.0, |s| s.weight_at(base_steps + done)),
            shaping: shaping.clone(),
        };
        let mut batch = collect(
            &policy,
            layout,
            init_dist,
            pool,
            episodes,
            cfg.horizon,
            sub_seed(seed, COLLECT, iteration),
            &reward,
        )?;
        gae_and_returns(&mut batch, cfg.ppo.gamma, cfg.ppo.lambda);
        let stats: PpoStats = ppo_update(&mut policy, &mut optimizer, &batch, &cfg.ppo, sub_seed(seed, UPDATE, iteration))?;
        done += batch.len() as u64;
        policy.meta.steps = base_steps + done;
        let row = TrainMetrics {
            step: policy.meta.steps,
            mean_score: batch.mean_score(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
        };
        if iteration % 10 == 0 {
            info!(
                "{} step {} score {:.1} entropy {:.3} kl {:.4}",
                policy.meta.algo, row.step, row.mean_score, row.entropy, row.approx_kl
            );
        }
        metrics.push(row);
        if done >= next_checkpoint && done < total_steps {
            history.push(policy.clone());
            while next_checkpoint <= done {
                next_checkpoint += cfg.checkpoint_every.max(1);
            }
        }
        iteration += 1;
    }
    history.push(policy.clone());
    Ok(TrainOutcome { policy, history, metrics })
}

/// CSV with columns `step,mean_score,policy_loss,value_loss,entropy,approx_kl`.
pub fn write_metrics_csv(metrics: &[TrainMetrics], out: impl AsRef<Path>) -> Result<(), RlError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(f, "step,mean_score,policy_loss,value_loss,entropy,approx_kl")?;
    for m in metrics {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            m.step, m.mean_score, m.policy_loss, m.value_loss, m.entropy, m.approx_kl
        )?;
    }
    f.flush()?;
    Ok(())
}
