use log::warn;
use rand::Rng;

use super::policy::{marginal, sample_index, Control};
use super::{check_layout_fit, stream_rng, InitDistribution, PartnerPool, RlError};
use crate::featurize::{encode_into, NUM_CHANNELS};
use crate::gridworld::{joint_index, split_joint, Action, Event, Item, Layout, Perturbation, WorldState};
use crate::nn::{softmax, PolicyParams};

/// Optional dense reward terms for intermediate recipe progress, linearly
/// annealed to zero over the policy's first `anneal_steps` environment steps
/// (counted across continued training runs). Scores reported
/// anywhere are always the unshaped delivery reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Shaping {
    pub onion_in_pot: f64,
    pub dish_pickup: f64,
    pub soup_pickup: f64,
    pub anneal_steps: u64,
}

impl Default for Shaping {
    fn default() -> Self {
        Shaping { onion_in_pot: 3.0, dish_pickup: 3.0, soup_pickup: 5.0, anneal_steps: 1_000_000 }
    }
}

impl Shaping {
    pub fn weight_at(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 {
            return 0.0;
        }
        (1.0 - step as f64 / self.anneal_steps as f64).max(0.0)
    }

    fn bonus(&self, before: &WorldState, events: &[Event], soup_size: u8) -> f64 {
        let pot_busy = before.pots.values().any(|p| p.onions == soup_size);
        events
            .iter()
            .map(|e| match e {
                Event::PotLoaded { .. } => self.onion_in_pot,
                Event::Dispensed { item: Item::Dish, .. } if pot_busy => self.dish_pickup,
                Event::SoupPickedUp { .. } => self.soup_pickup,
                _ => 0.0,
            })
            .sum()
    }
}

/// Reward transformation applied while collecting training data.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RewardSpec {
    pub scale: f64,
    pub shaping: Option<Shaping>,
    pub shaping_weight: f64,
}

impl RewardSpec {
    pub(crate) fn raw() -> RewardSpec {
        RewardSpec { scale: 1.0, shaping: None, shaping_weight: 0.0 }
    }
}

/// Fixed-horizon episodes laid end to end.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs_dim: usize,
    /// `len() * obs_dim` observation values.
    pub obs: Vec<f32>,
    /// Joint action actually executed.
    pub actions: Vec<u16>,
    pub control: Vec<Control>,
    pub logp: Vec<f32>,
    pub values: Vec<f32>,
    /// Training reward (scaled, possibly shaped).
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
    pub episode_starts: Vec<usize>,
    /// Unshaped score per episode.
    pub episode_scores: Vec<f64>,
    pub episode_inits: Vec<Option<Perturbation>>,
    pub episode_partners: Vec<Option<usize>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f32] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn mean_score(&self) -> f64 {
        if self.episode_scores.is_empty() {
            return 0.0;
        }
        self.episode_scores.iter().sum::<f64>() / self.episode_scores.len() as f64
    }
}

/// Self-play rollouts: `n_steps / horizon` episodes (at least one), each
/// starting from a state drawn from `init_dist`. Deterministic in `seed`.
pub fn collect_rollouts(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    init_dist: &InitDistribution,
    n_steps: usize,
    horizon: usize,
    seed: u64,
) -> Result<RolloutBatch, RlError> {
    let episodes = (n_steps / horizon.max(1)).max(1);
    collect(policy, layout, init_dist, None, episodes, horizon, seed, &RewardSpec::raw())
}

/// Rollouts where the learner controls one randomly chosen character and a
/// frozen partner drawn uniformly from `pool` controls the other.
pub fn collect_with_partners(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    init_dist: &InitDistribution,
    pool: &PartnerPool,
    n_steps: usize,
    horizon: usize,
    seed: u64,
) -> Result<RolloutBatch, RlError> {
    let episodes = (n_steps / horizon.max(1)).max(1);
    collect(policy, layout, init_dist, Some(pool), episodes, horizon, seed, &RewardSpec::raw())
}

pub(crate) fn sample_initial_state<R: Rng>(
    layout: &Layout,
    init_dist: &InitDistribution,
    rng: &mut R,
) -> Result<(WorldState, Option<Perturbation>), RlError> {
    const ATTEMPTS: usize = 64;
    let mut last_err = None;
    for _ in 0..ATTEMPTS {
        let p = init_dist.sample(rng);
        match layout.reset(p) {
            Ok(state) => return Ok((state, p.cloned())),
            Err(e) => {
                warn!("skipping infeasible initial state {}: {e}", p.map(|p| p.to_string()).unwrap_or_default());
                last_err = Some(e);
            }
        }
    }
    Err(RlError::Infeasible(last_err.expect("at least one attempt")))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn collect(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    init_dist: &InitDistribution,
    pool: Option<&PartnerPool>,
    episodes: usize,
    horizon: usize,
    seed: u64,
    reward: &RewardSpec,
) -> Result<RolloutBatch, RlError> {
    check_layout_fit(policy.arch(), layout)?;
    let obs_dim = NUM_CHANNELS * layout.cell_count();
    let n = episodes * horizon;
    let mut batch = RolloutBatch {
        obs_dim,
        obs: Vec::with_capacity(n * obs_dim),
        actions: Vec::with_capacity(n),
        control: Vec::with_capacity(n),
        logp: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
        ..Default::default()
    };

    for e in 0..episodes {
        let mut rng = stream_rng(seed, e as u64);
        let (mut state, init) = sample_initial_state(layout, init_dist, &mut rng)?;
        let partner = pool.map(|p| (p.sample_index(&mut rng), rng.gen_range(0..2usize)));
        batch.episode_starts.push(batch.len());
        batch.episode_inits.push(init);
        batch.episode_partners.push(partner.map(|(i, _)| i));
        let mut score = 0.0;

        for t in 0..horizon {
            let start = batch.obs.len();
            batch.obs.resize(start + obs_dim, 0.0);
            encode_into(layout, &state, &mut batch.obs[start..]);
            let obs = &batch.obs[start..];
            let (logits, value) = policy.forward(obs)?;
            let probs = softmax(&logits, 1.0);

            let (joint, logp, control) = match (partner, pool) {
                (Some((pi, seat)), Some(pool)) => {
                    let mine = marginal(&probs, seat);
                    let a_mine = sample_index(&mine, &mut rng);
                    let (plogits, _) = pool.entries()[pi].params.forward(obs)?;
                    let theirs = marginal(&softmax(&plogits, 1.0), 1 - seat);
                    let a_theirs = sample_index(&theirs, &mut rng);
                    let mut pair = [Action::Wait; 2];
                    pair[seat] = Action::ALL[a_mine];
                    pair[1 - seat] = Action::ALL[a_theirs];
                    (joint_index(pair), mine[a_mine].max(f32::MIN_POSITIVE).ln(), Control::Seat(seat))
                }
                _ => {
                    let j = sample_index(&probs, &mut rng);
                    (j, probs[j].max(f32::MIN_POSITIVE).ln(), Control::Joint)
                }
            };

            let result = layout.step(&state, split_joint(joint));
            score += result.reward;
            let mut r = result.reward;
            if let Some(shaping) = &reward.shaping {
                if reward.shaping_weight > 0.0 {
                    r += reward.shaping_weight * shaping.bonus(&state, &result.events, layout.soup_size);
                }
            }
            batch.actions.push(joint as u16);
            batch.control.push(control);
            batch.logp.push(logp);
            batch.values.push(value);
            batch.rewards.push((r * reward.scale) as f32);
            batch.dones.push(t + 1 == horizon);
            state = result.state;
        }
        batch.episode_scores.push(score);
    }
    Ok(batch)
}
