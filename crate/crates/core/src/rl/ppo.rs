use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::policy_terms;
use super::{stream_rng, RlError, RolloutBatch};
use crate::nn::{backward_and_update, Adam, NnError, PolicyParams};

/// PPO hyperparameters. Defaults follow common practice for small
/// actor-critic networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f32,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f32,
    pub vf_coef: f32,
    pub ent_coef: f32,
    pub max_grad_norm: f32,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 2000,
            lr: 1e-3,
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
        }
    }
}

/// Means over all minibatch updates of one call.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
    pub updates: usize,
}

/// Per-sample loss pieces and the gradient of the total loss with respect to
/// the logits and value.
pub(crate) struct SampleLoss {
    pub policy: f32,
    pub value: f32,
    pub entropy: f32,
    pub log_ratio: f32,
    pub clipped: bool,
    pub dlogits: Vec<f32>,
    pub dvalue: f32,
}

pub(crate) fn sample_loss(logits: &[f32], value: f32, batch: &RolloutBatch, i: usize, cfg: &PpoConfig) -> SampleLoss {
    let terms = policy_terms(logits, batch.control[i], batch.actions[i] as usize);
    let adv = batch.advantages[i];
    let log_ratio = terms.logp - batch.logp[i];
    let ratio = log_ratio.exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
    // the min picks the clipped branch, whose gradient is zero
    let clip_active = clipped < unclipped;
    let surrogate = if clip_active { clipped } else { unclipped };
    let dlogp = if clip_active { 0.0 } else { -adv * ratio };
    let dlogits = terms
        .dlogp
        .iter()
        .zip(&terms.dentropy)
        .map(|(&dl, &dh)| dlogp * dl - cfg.ent_coef * dh)
        .collect();
    let err = value - batch.returns[i];
    SampleLoss {
        policy: -surrogate,
        value: 0.5 * err * err,
        entropy: terms.entropy,
        log_ratio,
        clipped: (ratio - 1.0).abs() > cfg.clip,
        dlogits,
        dvalue: cfg.vf_coef * err,
    }
}

/// Clipped-surrogate PPO with value loss and entropy bonus over `epochs`
/// shuffled passes. The batch must already carry advantages and returns.
pub fn ppo_update(
    params: &mut PolicyParams<f32>,
    optimizer: &mut Adam<f32>,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<PpoStats, RlError> {
    let n = batch.len();
    if n == 0 {
        return Err(RlError::Nn(NnError::Config("empty rollout batch".into())));
    }
    if batch.advantages.len() != n || batch.returns.len() != n {
        return Err(RlError::Nn(NnError::Config("advantages/returns missing; run gae_and_returns first".into())));
    }
    let mb = cfg.minibatch.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0);
    let mut stats = PpoStats::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(mb) {
            let mut acc = PpoStats::default();
            let scale = 1.0 / chunk.len() as f32;
            let result = backward_and_update(params, optimizer, cfg.lr, Some(cfg.max_grad_norm), |p, grads| {
                let mut total = 0.0;
                for &i in chunk {
                    let cache = p.forward_cached(batch.observation(i)).expect("observation size checked at collection");
                    let s = sample_loss(&cache.logits, cache.value, batch, i, cfg);
                    total += s.policy + cfg.vf_coef * s.value - cfg.ent_coef * s.entropy;
                    acc.policy_loss += s.policy as f64;
                    acc.value_loss += s.value as f64;
                    acc.entropy += s.entropy as f64;
                    acc.approx_kl += ((s.log_ratio.exp() - 1.0) - s.log_ratio) as f64;
                    acc.clip_frac += s.clipped as u8 as f64;
                    let dl: Vec<f32> = s.dlogits.iter().map(|d| d * scale).collect();
                    p.backward(&cache, &dl, s.dvalue * scale, grads, false);
                }
                total * scale
            });
            let update = result.map_err(|e| {
                RlError::Nn(match e {
                    NnError::NonFinite { what, detail } => {
                        NnError::NonFinite { what, detail: format!("{detail} (ppo epoch {epoch})") }
                    }
                    other => other,
                })
            })?;
            let k = chunk.len() as f64;
            stats.policy_loss += acc.policy_loss / k;
            stats.value_loss += acc.value_loss / k;
            stats.entropy += acc.entropy / k;
            stats.approx_kl += acc.approx_kl / k;
            stats.clip_frac += acc.clip_frac / k;
            stats.grad_norm += update.grad_norm as f64;
            stats.updates += 1;
        }
    }
    if stats.updates > 0 {
        let u = stats.updates as f64;
        stats.policy_loss /= u;
        stats.value_loss /= u;
        stats.entropy /= u;
        stats.approx_kl /= u;
        stats.clip_frac /= u;
        stats.grad_norm /= u;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::Control;

    fn toy_batch(adv: f32, logp_shift: f32) -> RolloutBatch {
        let logits = vec![0.0f32; 36];
        let base = policy_terms(&logits, Control::Joint, 3).logp;
        RolloutBatch {
            obs_dim: 0,
            actions: vec![3],
            control: vec![Control::Joint],
            logp: vec![base + logp_shift],
            values: vec![0.0],
            rewards: vec![0.0],
            dones: vec![true],
            advantages: vec![adv],
            returns: vec![0.0],
            ..Default::default()
        }
    }

    #[test]
    fn zero_advantage_has_no_policy_gradient() {
        let cfg = PpoConfig { ent_coef: 0.0, ..Default::default() };
        let s = sample_loss(&[0.1; 36], 0.0, &toy_batch(0.0, 0.0), 0, &cfg);
        assert!(s.dlogits.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn clipped_ratio_has_no_gradient() {
        let cfg = PpoConfig { ent_coef: 0.0, ..Default::default() };
        let logits = vec![0.0f32; 36];
        // ratio = e^0.5 > 1.2 with positive advantage: clipped
        let s = sample_loss(&logits, 0.0, &toy_batch(1.0, -0.5), 0, &cfg);
        assert!(s.clipped);
        assert!(s.dlogits.iter().all(|&d| d == 0.0));
        // same ratio with negative advantage: the unclipped branch is the min
        let s = sample_loss(&logits, 0.0, &toy_batch(-1.0, -0.5), 0, &cfg);
        assert!(s.dlogits.iter().any(|&d| d != 0.0));
        // inside the trust region the gradient flows
        let s = sample_loss(&logits, 0.0, &toy_batch(1.0, 0.0), 0, &cfg);
        assert!(!s.clipped);
        assert!(s.dlogits[3] < 0.0);
    }
}
