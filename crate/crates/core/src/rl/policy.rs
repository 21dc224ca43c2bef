use rand::Rng;

use crate::gridworld::{Action, JOINT_ACTIONS};
use crate::nn::{argmax, softmax, PolicyParams, Scalar};

/// Which part of the joint action a sample's log-probability refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Control {
    /// Both characters (self-play).
    Joint,
    /// Only the given character's marginal (0 or 1); the other is a partner.
    Seat(usize),
}

/// Inverse-CDF draw from `probs` using one uniform variate.
pub fn sample_index<F: Scalar, R: Rng>(probs: &[F], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.to_f64().unwrap();
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > F::zero()).unwrap_or(probs.len() - 1)
}

/// Marginal distribution of one character's action under a joint distribution.
pub fn marginal<F: Scalar>(joint: &[F], seat: usize) -> [F; Action::COUNT] {
    let n = Action::COUNT;
    let mut m = [F::zero(); Action::COUNT];
    for (k, &p) in joint.iter().enumerate() {
        let i = if seat == 0 { k / n } else { k % n };
        m[i] = m[i] + p;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActStep {
    pub joint: usize,
    pub logp: f32,
    pub value: f32,
    /// Most likely joint action.
    pub greedy: usize,
}

/// Samples a joint action for self-play.
pub fn act<R: Rng>(params: &PolicyParams<f32>, obs: &[f32], rng: &mut R) -> Result<ActStep, crate::nn::NnError> {
    let (logits, value) = params.forward(obs)?;
    let probs = softmax(&logits, 1.0);
    let joint = sample_index(&probs, rng);
    Ok(ActStep { joint, logp: probs[joint].max(f32::MIN_POSITIVE).ln(), value, greedy: argmax(&probs) })
}

/// Log-probability, entropy and their gradients with respect to the 36 joint logits.
#[derive(Clone, Debug)]
pub struct PolicyTerms<F> {
    pub logp: F,
    pub entropy: F,
    pub dlogp: Vec<F>,
    pub dentropy: Vec<F>,
}

/// For `Control::Joint` these are the joint log-probability and entropy.
/// For `Control::Seat(s)` they refer to character `s`'s marginal.
pub fn policy_terms<F: Scalar>(logits: &[F], control: Control, joint_action: usize) -> PolicyTerms<F> {
    assert_eq!(logits.len(), JOINT_ACTIONS);
    let p = softmax(logits, F::one());
    let tiny = F::min_positive_value();
    match control {
        Control::Joint => {
            let logp_all: Vec<F> = p.iter().map(|&x| x.max(tiny).ln()).collect();
            let entropy = -p.iter().zip(&logp_all).map(|(&a, &b)| a * b).sum::<F>();
            let dlogp = p
                .iter()
                .enumerate()
                .map(|(k, &pk)| if k == joint_action { F::one() - pk } else { -pk })
                .collect();
            let dentropy = p.iter().zip(&logp_all).map(|(&pk, &lk)| -pk * (lk + entropy)).collect();
            PolicyTerms { logp: logp_all[joint_action], entropy, dlogp, dentropy }
        }
        Control::Seat(seat) => {
            let n = Action::COUNT;
            let group = |k: usize| if seat == 0 { k / n } else { k % n };
            let m = marginal(&p, seat);
            let log_m: Vec<F> = m.iter().map(|&x| x.max(tiny).ln()).collect();
            let entropy = -m.iter().zip(&log_m).map(|(&a, &b)| a * b).sum::<F>();
            let chosen = group(joint_action);
            let mc = m[chosen].max(tiny);
            let dlogp = p
                .iter()
                .enumerate()
                .map(|(k, &pk)| if group(k) == chosen { pk / mc - pk } else { -pk })
                .collect();
            let dentropy = p.iter().enumerate().map(|(k, &pk)| -pk * (log_m[group(k)] + entropy)).collect();
            PolicyTerms { logp: log_m[chosen], entropy, dlogp, dentropy }
        }
    }
}
