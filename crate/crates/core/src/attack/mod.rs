//! Adversarial initial environmental states.
//!
//! The gradient attack scores every unit perturbation `u` with the
//! first-order estimate
//!
//! ```text
//! J(u) = Σ_t ⟨∂π(a*_t | obs_t) / ∂obs_t, −δ_u⟩
//! ```
//!
//! where `a*_t` is the policy's most likely joint action on a clean
//! trajectory and `δ_u` is the observation change the unit causes, applied
//! at every step as if the perturbation persisted. Read as a Taylor
//! expansion, `J` approximates the total drop in probability of the
//! original actions. Scores are additive over units, so a perturbation's
//! estimate is the sum of its members' scores.

mod result;

use log::{info, warn};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::featurize::{encode_into, env_delta, COUNTER_ITEM, ENV_CHANNELS_START, NUM_CHANNELS, POT_ONIONS};
use crate::gridworld::{
    enumerate_unit_perturbations, split_joint, Item, Layout, Perturbation, PerturbationError, UnitPerturbation,
};
use crate::nn::{argmax, grad_action_prob_wrt_input, softmax, NnError, PolicyParams};
use crate::rl::{check_layout_fit, sample_index, stream_rng, RlError};

pub use result::{AttackMethod, AttackResult, ResultError, ScoredPerturbation};

pub const DEFAULT_N_TRAJ: usize = 20;
pub const DEFAULT_HORIZON: usize = 800;
pub const DEFAULT_EPSILON: usize = 3;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_RANDOM_K: usize = 40;
pub const DEFAULT_P_FREQ: f64 = 0.05;

/// Unit count up to which all subsets are ranked without pruning.
pub const EXHAUSTIVE_UNITS: usize = 64;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error("invalid attack parameter: {0}")]
    Config(String),
    #[error("no candidate units left after frequency filtering (p_freq = {0})")]
    EmptyFiltered(f64),
}

/// One step of a clean self-play episode.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Full observation; agent channels first, then environment channels.
    pub obs: Vec<f32>,
    /// Most likely joint action.
    pub greedy: u16,
    /// Joint action actually taken.
    pub sampled: u16,
    pub value: f32,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub layout: String,
    pub policy_id: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    fn env_start(&self) -> usize {
        self.steps.first().map_or(0, |s| s.obs.len() / NUM_CHANNELS * ENV_CHANNELS_START)
    }

    pub fn agent_obs(&self, t: usize) -> &[f32] {
        &self.steps[t].obs[..self.env_start()]
    }

    pub fn env_obs(&self, t: usize) -> &[f32] {
        &self.steps[t].obs[self.env_start()..]
    }

    pub fn score(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// `n_traj` sampled self-play episodes from the standard initial state.
/// Trajectory `i` uses random stream `i` of `seed`.
pub fn collect_attack_trajectories(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, AttackError> {
    check_layout_fit(policy.arch(), layout)?;
    let obs_dim = NUM_CHANNELS * layout.cell_count();
    let policy_id = policy.id();
    let mut out = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let mut rng = stream_rng(seed, i as u64);
        let mut state = layout.standard_state();
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut obs = vec![0.0; obs_dim];
            encode_into(layout, &state, &mut obs);
            let (logits, value) = policy.forward(&obs)?;
            let probs = softmax(&logits, 1.0);
            let sampled = sample_index(&probs, &mut rng);
            let result = layout.step(&state, split_joint(sampled));
            steps.push(StepRecord {
                obs,
                greedy: argmax(&probs) as u16,
                sampled: sampled as u16,
                value,
                reward: result.reward,
            });
            state = result.state;
        }
        out.push(Trajectory { layout: layout.name.clone(), policy_id: policy_id.clone(), seed, steps });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitScore {
    pub unit: UnitPerturbation,
    pub score: f64,
    /// Fraction of trajectory steps where the unit's feature already holds.
    pub observed_frequency: f64,
}

/// `Σ_t ∂π(a*_t | obs_t)/∂obs_t` over every step of every trajectory, in
/// 64-bit precision. One backward pass per step.
pub fn summed_action_gradient(policy: &PolicyParams<f32>, trajectories: &[Trajectory]) -> Result<Vec<f64>, AttackError> {
    let p64 = policy.cast::<f64>();
    let mut total = vec![0.0f64; p64.arch().input_dim()];
    for traj in trajectories {
        for step in &traj.steps {
            let obs: Vec<f64> = step.obs.iter().map(|&x| x as f64).collect();
            let g = grad_action_prob_wrt_input(&p64, &obs, step.greedy as usize)?;
            for (t, gi) in total.iter_mut().zip(&g) {
                *t += gi;
            }
        }
    }
    Ok(total)
}

/// Whether the unit's feature (same item on the same counter, or the same
/// pot fill) is present in an observation.
pub fn feature_present(layout: &Layout, obs: &[f32], unit: &UnitPerturbation) -> bool {
    let plane = layout.cell_count();
    match *unit {
        UnitPerturbation::OnionOnCounter { cell } => {
            obs[(COUNTER_ITEM + Item::Onion.index()) * plane + layout.index(cell)] > 0.5
        }
        UnitPerturbation::DishOnCounter { cell } => {
            obs[(COUNTER_ITEM + Item::Dish.index()) * plane + layout.index(cell)] > 0.5
        }
        UnitPerturbation::OnionsInPot { cell, onions } => {
            let fill = obs[POT_ONIONS * plane + layout.index(cell)] * layout.soup_size as f32;
            fill.round() as u8 == onions
        }
    }
}

/// Per-unit fraction of trajectory steps in which the unit's feature holds.
pub fn unit_frequencies(layout: &Layout, trajectories: &[Trajectory], units: &[UnitPerturbation]) -> Vec<f64> {
    let total: usize = trajectories.iter().map(|t| t.steps.len()).sum();
    units
        .iter()
        .map(|u| {
            if total == 0 {
                return 0.0;
            }
            let hits: usize = trajectories
                .iter()
                .flat_map(|t| &t.steps)
                .filter(|s| feature_present(layout, &s.obs, u))
                .count();
            hits as f64 / total as f64
        })
        .collect()
}

/// First-order score and observed frequency for each unit.
pub fn score_units(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    trajectories: &[Trajectory],
    units: &[UnitPerturbation],
) -> Result<Vec<UnitScore>, AttackError> {
    if units.is_empty() {
        return Ok(Vec::new());
    }
    check_layout_fit(policy.arch(), layout)?;
    let grad = summed_action_gradient(policy, trajectories)?;
    let freqs = unit_frequencies(layout, trajectories, units);
    let mut out = Vec::with_capacity(units.len());
    for (unit, freq) in units.iter().zip(freqs) {
        let delta = env_delta(layout, &Perturbation::new(vec![*unit])?)?;
        let score: f64 = delta.flat(layout).iter().map(|&(i, d)| -grad[i] * d as f64).sum();
        out.push(UnitScore { unit: *unit, score, observed_frequency: freq });
    }
    Ok(out)
}

/// Keeps units observed in at most a `p_freq` fraction of steps.
pub fn frequency_filter(unit_scores: &[UnitScore], p_freq: f64) -> Vec<UnitScore> {
    unit_scores.iter().filter(|s| s.observed_frequency <= p_freq).cloned().collect()
}

/// All index subsets of `units` with 1..=epsilon members on distinct cells.
fn subsets(units: &[UnitPerturbation], epsilon: usize) -> Vec<Vec<usize>> {
    fn rec(units: &[UnitPerturbation], eps: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in start..units.len() {
            if cur.iter().any(|&j| units[j].target() == units[i].target()) {
                continue;
            }
            cur.push(i);
            out.push(cur.clone());
            if cur.len() < eps {
                rec(units, eps, i + 1, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(units, epsilon, 0, &mut Vec::new(), &mut out);
    out
}

/// Top-`k` perturbations of at most `epsilon` units by summed score.
///
/// Ties break by the members' ordinals. Above [`EXHAUSTIVE_UNITS`] units
/// only the best-scoring units are kept, enough that every subset dropped
/// is beaten by at least `k` retained ones, so the ranking stays exact.
pub fn compose_adversarial_states(
    layout: &Layout,
    scores: &[UnitScore],
    epsilon: usize,
    k: usize,
) -> Result<AttackResult, AttackError> {
    if epsilon == 0 || k == 0 {
        return Err(AttackError::Config(format!("epsilon and k must be at least 1 (got {epsilon}, {k})")));
    }
    let mut ranked: Vec<&UnitScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.unit.cmp(&b.unit)));
    let per_cell = layout.soup_size as usize + 1;
    let keep = EXHAUSTIVE_UNITS.max(k + epsilon * per_cell);
    let pruned = ranked.len() > keep;
    if pruned {
        info!("ranking subsets over the best {keep} of {} units", ranked.len());
        ranked.truncate(keep);
    }
    ranked.sort_by(|a, b| a.unit.cmp(&b.unit));
    let units: Vec<UnitPerturbation> = ranked.iter().map(|s| s.unit).collect();

    let mut candidates: Vec<(f64, Vec<usize>)> = subsets(&units, epsilon)
        .into_iter()
        .map(|s| (s.iter().map(|&i| ranked[i].score).sum(), s))
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    if candidates.len() < k {
        warn!("only {} feasible perturbations within budget {epsilon}, wanted {k}", candidates.len());
    }

    let mut states = Vec::new();
    for (score, idx) in candidates.into_iter().take(k) {
        let p = Perturbation::new(idx.iter().map(|&i| units[i]).collect())?;
        layout.reset(Some(&p))?;
        states.push(ScoredPerturbation { perturbation: p, score: Some(score) });
    }
    let mut result = AttackResult::new(AttackMethod::Grad, layout, epsilon, states);
    result.pruned = pruned;
    Ok(result)
}

/// Gradient attack end to end: trajectories, unit scores, filter, compose.
#[allow(clippy::too_many_arguments)]
pub fn grad_attack(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    epsilon: usize,
    k: usize,
    p_freq: f64,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<AttackResult, AttackError> {
    let trajectories = collect_attack_trajectories(policy, layout, n_traj, horizon, seed)?;
    let units = enumerate_unit_perturbations(layout);
    let scores = score_units(policy, layout, &trajectories, &units)?;
    let filtered = frequency_filter(&scores, p_freq);
    if filtered.is_empty() {
        return Err(AttackError::EmptyFiltered(p_freq));
    }
    let mut result = compose_adversarial_states(layout, &filtered, epsilon, k)?;
    result.policy_id = Some(policy.id());
    result.p_freq = Some(p_freq);
    result.trajectory_seed = Some(seed);
    result.n_traj = Some(n_traj);
    Ok(result)
}

/// `k` distinct perturbations drawn uniformly from all feasible ones with at
/// most `epsilon` units. With `filter`, only units passing the frequency
/// filter on the given trajectories are used (the Random_F baseline).
pub fn random_attack(
    layout: &Layout,
    epsilon: usize,
    k: usize,
    filter: Option<(&[Trajectory], f64)>,
    seed: u64,
) -> Result<AttackResult, AttackError> {
    if epsilon == 0 || k == 0 {
        return Err(AttackError::Config(format!("epsilon and k must be at least 1 (got {epsilon}, {k})")));
    }
    let mut units = enumerate_unit_perturbations(layout);
    if let Some((trajectories, p_freq)) = filter {
        let freqs = unit_frequencies(layout, trajectories, &units);
        units = units.into_iter().zip(freqs).filter(|(_, f)| *f <= p_freq).map(|(u, _)| u).collect();
        if units.is_empty() {
            return Err(AttackError::EmptyFiltered(p_freq));
        }
    }
    let all = subsets(&units, epsilon);
    if all.len() < k {
        warn!("only {} feasible perturbations within budget {epsilon}, wanted {k}", all.len());
    }
    let mut rng = stream_rng(seed, 0);
    let mut states = Vec::new();
    for idx in all.choose_multiple(&mut rng, k.min(all.len())) {
        let p = Perturbation::new(idx.iter().map(|&i| units[i]).collect())?;
        layout.reset(Some(&p))?;
        states.push(ScoredPerturbation { perturbation: p, score: None });
    }
    let mut result = match filter {
        Some((trajectories, p_freq)) => {
            let mut r = AttackResult::new(AttackMethod::RandomF, layout, epsilon, states);
            r.p_freq = Some(p_freq);
            r.n_traj = Some(trajectories.len());
            r.trajectory_seed = trajectories.first().map(|t| t.seed);
            r.policy_id = trajectories.first().map(|t| t.policy_id.clone());
            r
        }
        None => AttackResult::new(AttackMethod::Random, layout, epsilon, states),
    };
    result.sample_seed = Some(seed);
    Ok(result)
}

/// Whether an initial perturbation's effect on the environment persisted.
#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceReport {
    /// L1 distance between perturbed and clean environment channels at t = 0.
    pub initial: f64,
    /// Smallest such distance over the episode.
    pub minimum: f64,
    pub persisted: bool,
}

/// Runs the policy from the clean and the perturbed state with the same
/// random stream and tracks how far the environment channels drift apart.
/// Diagnostic only.
pub fn deviation_persistence(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    perturbation: &Perturbation,
    horizon: usize,
    seed: u64,
) -> Result<PersistenceReport, AttackError> {
    let obs_dim = NUM_CHANNELS * layout.cell_count();
    let env_start = layout.cell_count() * ENV_CHANNELS_START;
    let mut runs = Vec::new();
    for start in [None, Some(perturbation)] {
        let mut rng = stream_rng(seed, 0);
        let mut state = layout.reset(start)?;
        let mut envs = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut obs = vec![0.0; obs_dim];
            encode_into(layout, &state, &mut obs);
            let (logits, _) = policy.forward(&obs)?;
            let a = sample_index(&softmax(&logits, 1.0), &mut rng);
            envs.push(obs.split_off(env_start));
            state = layout.step(&state, split_joint(a)).state;
        }
        runs.push(envs);
    }
    let dist = |t: usize| -> f64 { runs[0][t].iter().zip(&runs[1][t]).map(|(a, b)| (a - b).abs() as f64).sum() };
    let initial = if horizon > 0 { dist(0) } else { 0.0 };
    let minimum = (0..horizon).map(dist).fold(f64::INFINITY, f64::min);
    let minimum = if minimum.is_finite() { minimum } else { 0.0 };
    let report = PersistenceReport { initial, minimum, persisted: minimum >= initial };
    info!("perturbation {perturbation}: initial deviation {initial:.3}, minimum {minimum:.3}");
    Ok(report)
}
