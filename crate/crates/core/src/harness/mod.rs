//! Evaluation protocol, score statistics, reports and experiment drivers.

mod experiment;
mod report;

use std::path::Path;

use thiserror::Error;

use crate::attack::{AttackError, ResultError};
use crate::defense::DefenseError;
use crate::featurize::{encode_into, NUM_CHANNELS};
use crate::gridworld::{split_joint, Layout, LayoutError, Perturbation, PerturbationError};
use crate::nn::{argmax, softmax, CheckpointError, NnError, PolicyParams};
use crate::rl::{check_layout_fit, sample_index, stream_rng, RlError};

pub use experiment::{
    load_or_train_agents, replay_report, run_attack_experiment, run_defense_experiment, AgentsConfig, AttackExperimentConfig, AttackParams,
    DefenseExperimentConfig, ExperimentOutput, FcpConfig, ATTACK_CONDITIONS, DEFENSE_METHODS,
};
pub use report::{emit_report, Format, Report, ReportRow, ReportSpec, RowSpec, RowValue};

pub const DEFAULT_GAMES: usize = 100;
pub const DEFAULT_HORIZON: usize = 800;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    AttackFile(#[from] ResultError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("infeasible initial state: {0}")]
    Perturbation(#[from] PerturbationError),
    #[error("invalid evaluation: {0}")]
    Config(String),
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("malformed episode log: {0}")]
    Log(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What to evaluate: every state in `states` is played `games` times.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    /// `None` is the standard initial state.
    pub states: Vec<Option<Perturbation>>,
    pub games: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Greedy actions instead of sampled ones.
    pub deterministic: bool,
}

impl EvalSpec {
    pub fn standard(games: usize, horizon: usize, seed: u64) -> EvalSpec {
        EvalSpec { states: vec![None], games, horizon, seed, deterministic: false }
    }

    pub fn over(states: &[Perturbation], games: usize, horizon: usize, seed: u64) -> EvalSpec {
        EvalSpec { states: states.iter().cloned().map(Some).collect(), games, horizon, seed, deterministic: false }
    }
}

pub fn state_label(state: &Option<Perturbation>) -> String {
    state.as_ref().map_or_else(|| "standard".to_string(), |p| p.to_string())
}

/// One played game.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub state_index: usize,
    pub state: String,
    pub game: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateStats {
    pub state: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Per-state means with standard errors, and the grand mean over states.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreStats {
    pub per_state: Vec<StateStats>,
    /// Mean of the per-state means.
    pub grand_mean: f64,
    /// Standard error of all episode scores pooled.
    pub pooled_stderr: f64,
    pub n: usize,
}

/// `(mean, sample stddev / sqrt(n))`; the error is 0 for fewer than two values.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ScoreStats {
    /// Statistics from raw episodes, grouped by state index in order.
    pub fn from_episodes(episodes: &[EpisodeRecord]) -> ScoreStats {
        let mut groups: Vec<(usize, String, Vec<f64>)> = Vec::new();
        for e in episodes {
            match groups.iter_mut().find(|g| g.0 == e.state_index) {
                Some(g) => g.2.push(e.score),
                None => groups.push((e.state_index, e.state.clone(), vec![e.score])),
            }
        }
        groups.sort_by_key(|g| g.0);
        let per_state: Vec<StateStats> = groups
            .into_iter()
            .map(|(_, state, xs)| {
                let (mean, stderr) = mean_stderr(&xs);
                StateStats { state, mean, stderr, n: xs.len() }
            })
            .collect();
        let all: Vec<f64> = episodes.iter().map(|e| e.score).collect();
        ScoreStats::assemble(per_state, &all)
    }

    /// Pools several agents: the grand mean is over every (agent, state) mean.
    pub fn combine(stats: &[(ScoreStats, Vec<EpisodeRecord>)]) -> ScoreStats {
        let per_state: Vec<StateStats> = stats.iter().flat_map(|(s, _)| s.per_state.clone()).collect();
        let all: Vec<f64> = stats.iter().flat_map(|(_, log)| log.iter().map(|e| e.score)).collect();
        ScoreStats::assemble(per_state, &all)
    }

    fn assemble(per_state: Vec<StateStats>, all: &[f64]) -> ScoreStats {
        let grand_mean = if per_state.is_empty() {
            0.0
        } else {
            per_state.iter().map(|s| s.mean).sum::<f64>() / per_state.len() as f64
        };
        ScoreStats { per_state, grand_mean, pooled_stderr: mean_stderr(all).1, n: all.len() }
    }
}

/// Plays `spec.games` episodes from each state. Game `g` of state `i` uses
/// random stream `(i << 32) | g` of `spec.seed`, so results do not depend on
/// evaluation order.
pub fn evaluate(
    policy: &PolicyParams<f32>,
    layout: &Layout,
    spec: &EvalSpec,
) -> Result<(ScoreStats, Vec<EpisodeRecord>), HarnessError> {
    if spec.games == 0 || spec.horizon == 0 {
        return Err(HarnessError::Config("games and horizon must be at least 1".into()));
    }
    check_layout_fit(policy.arch(), layout)?;
    for s in &spec.states {
        layout.reset(s.as_ref())?;
    }
    let obs_dim = NUM_CHANNELS * layout.cell_count();
    let mut obs = vec![0.0; obs_dim];
    let mut log = Vec::with_capacity(spec.states.len() * spec.games);
    for (si, start) in spec.states.iter().enumerate() {
        let label = state_label(start);
        for g in 0..spec.games {
            let mut rng = stream_rng(spec.seed, ((si as u64) << 32) | g as u64);
            let mut state = layout.reset(start.as_ref())?;
            let mut score = 0.0;
            for _ in 0..spec.horizon {
                encode_into(layout, &state, &mut obs);
                let (logits, _) = policy.forward(&obs)?;
                let probs = softmax(&logits, 1.0);
                let joint = if spec.deterministic { argmax(&probs) } else { sample_index(&probs, &mut rng) };
                let result = layout.step(&state, split_joint(joint));
                score += result.reward;
                state = result.state;
            }
            log.push(EpisodeRecord { state_index: si, state: label.clone(), game: g, score });
        }
    }
    Ok((ScoreStats::from_episodes(&log), log))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LogRow {
    group: String,
    state_index: usize,
    state: String,
    game: usize,
    score: f64,
}

/// CSV with columns `group,state_index,state,game,score`.
pub fn write_episode_log(path: impl AsRef<Path>, groups: &[(String, Vec<EpisodeRecord>)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Log(e.to_string()))?;
    for (group, log) in groups {
        for e in log {
            w.serialize(LogRow {
                group: group.clone(),
                state_index: e.state_index,
                state: e.state.clone(),
                game: e.game,
                score: e.score,
            })
            .map_err(|e| HarnessError::Log(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_episode_log`], preserving group order.
pub fn read_episode_log(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<EpisodeRecord>)>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Log(e.to_string()))?;
    let mut groups: Vec<(String, Vec<EpisodeRecord>)> = Vec::new();
    for row in r.deserialize() {
        let row: LogRow = row.map_err(|e| HarnessError::Log(e.to_string()))?;
        let rec = EpisodeRecord { state_index: row.state_index, state: row.state, game: row.game, score: row.score };
        match groups.last_mut() {
            Some((g, log)) if *g == row.group => log.push(rec),
            _ => groups.push((row.group, vec![rec])),
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_definition() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, n = 4
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn grand_mean_is_mean_of_state_means() {
        let log: Vec<EpisodeRecord> = [(0, 10.0), (0, 20.0), (1, 0.0), (1, 0.0), (1, 0.0), (1, 40.0)]
            .iter()
            .enumerate()
            .map(|(g, &(s, score))| EpisodeRecord { state_index: s, state: format!("s{s}"), game: g, score })
            .collect();
        let st = ScoreStats::from_episodes(&log);
        assert_eq!(st.per_state.len(), 2);
        assert_eq!(st.grand_mean, (15.0 + 10.0) / 2.0);
        assert_eq!(st.n, 6);
    }
}
