//! Minimal dense actor-critic network with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector so optimizers, gradient clipping and
//! checkpointing can treat them uniformly. Dense weights are stored input-major
//! (`w[i * outputs + j]`), which lets the forward pass skip zero inputs; the
//! one-hot observation is mostly zeros.

mod checkpoint;
mod dist;
mod optim;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};
pub use dist::{kl_divergence, log_softmax, softmax, softmax_t, ActionDistribution, KL_FLOOR};
pub use optim::{backward_and_update, global_norm, Adam, UpdateStats};

use crate::gridworld::{Action, JOINT_ACTIONS};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("input has {found} values, network expects {expected}")]
    InputDim { found: usize, expected: usize },
    #[error("action index {0} out of range")]
    ActionIndex(usize),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("non-finite {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(F::zero()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// Actor head shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// 36 logits, one per joint action.
    Joint,
    /// 6 + 6 per-character logits; joint logit is their sum.
    Factorized,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Joint => JOINT_ACTIONS,
            HeadKind::Factorized => 2 * Action::COUNT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: HeadKind,
    /// Whether actor and critic share the hidden trunk.
    pub shared_trunk: bool,
}

impl ArchSpec {
    pub fn new(channels: usize, width: usize, height: usize) -> ArchSpec {
        ArchSpec {
            channels,
            width,
            height,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            head: HeadKind::Joint,
            shared_trunk: true,
        }
    }

    pub fn for_layout(layout: &crate::gridworld::Layout) -> ArchSpec {
        ArchSpec::new(crate::featurize::NUM_CHANNELS, layout.width, layout.height)
    }

    pub fn input_dim(&self) -> usize {
        self.channels * self.width * self.height
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim() == 0 {
            return Err(NnError::Config("input has zero size".into()));
        }
        if let Some(i) = self.hidden.iter().position(|&h| h == 0) {
            return Err(NnError::Config(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DenseShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl DenseShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ParamMap {
    actor_trunk: Vec<DenseShape>,
    critic_trunk: Vec<DenseShape>,
    actor_head: DenseShape,
    critic_head: DenseShape,
    len: usize,
}

impl ParamMap {
    fn new(arch: &ArchSpec) -> ParamMap {
        let mut offset = 0;
        let mut dense = |inputs: usize, outputs: usize| {
            let d = DenseShape { inputs, outputs, offset };
            offset += d.len();
            d
        };
        let trunk = |dense: &mut dyn FnMut(usize, usize) -> DenseShape| {
            let mut prev = arch.input_dim();
            arch.hidden
                .iter()
                .map(|&h| {
                    let d = dense(prev, h);
                    prev = h;
                    d
                })
                .collect::<Vec<_>>()
        };
        let actor_trunk = trunk(&mut dense);
        let critic_trunk = if arch.shared_trunk { Vec::new() } else { trunk(&mut dense) };
        let last = arch.hidden.last().copied().unwrap_or(arch.input_dim());
        let actor_head = dense(last, arch.head.outputs());
        let critic_head = dense(last, 1);
        ParamMap { actor_trunk, critic_trunk, actor_head, critic_head, len: offset }
    }
}

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub steps: u64,
    pub algo: String,
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<F: Scalar = f32> {
    arch: ArchSpec,
    map: ParamMap,
    values: Vec<F>,
    pub meta: CheckpointMeta,
}

/// Activations kept from a forward pass for the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F: Scalar> {
    input: Vec<F>,
    actor: Vec<Vec<F>>,
    critic: Vec<Vec<F>>,
    pub logits: Vec<F>,
    pub value: F,
}

impl<F: Scalar> PolicyParams<F> {
    /// Seeded fan-in uniform initialisation. The actor head starts scaled
    /// down so the initial policy is close to uniform.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<PolicyParams<F>, NnError> {
        arch.validate()?;
        let map = ParamMap::new(&arch);
        let mut values = vec![F::zero(); map.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |d: &DenseShape, gain: f64| {
            let bound = gain / (d.inputs as f64).sqrt();
            for w in &mut values[d.weights()] {
                *w = F::lit(rng.gen_range(-bound..bound));
            }
        };
        for d in map.actor_trunk.iter().chain(&map.critic_trunk) {
            fill(d, 1.0);
        }
        fill(&map.actor_head, 0.01);
        fill(&map.critic_head, 1.0);
        Ok(PolicyParams { arch, map, values, meta: CheckpointMeta { seed, ..Default::default() } })
    }

    /// Rebuilds params from a flat vector; length must match the architecture.
    pub fn from_values(arch: ArchSpec, values: Vec<F>, meta: CheckpointMeta) -> Result<PolicyParams<F>, NnError> {
        arch.validate()?;
        let map = ParamMap::new(&arch);
        if values.len() != map.len {
            return Err(NnError::Config(format!("expected {} parameters, got {}", map.len, values.len())));
        }
        Ok(PolicyParams { arch, map, values, meta })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grads(&self) -> Vec<F> {
        vec![F::zero(); self.values.len()]
    }

    pub fn cast<G: Scalar>(&self) -> PolicyParams<G> {
        PolicyParams {
            arch: self.arch.clone(),
            map: self.map.clone(),
            values: self.values.iter().map(|v| G::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Full SHA-256 over the architecture and weights.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.arch).as_bytes());
        for v in &self.values {
            h.update(v.to_f64().unwrap().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Short identifier used in reports and provenance.
    pub fn id(&self) -> String {
        self.fingerprint()[..16].to_string()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn dense_forward(&self, d: &DenseShape, x: &[F], out: &mut Vec<F>) {
        let w = &self.values[d.weights()];
        out.clear();
        out.extend_from_slice(&self.values[d.bias()]);
        for (i, &xi) in x.iter().enumerate() {
            if xi == F::zero() {
                continue;
            }
            let row = &w[i * d.outputs..(i + 1) * d.outputs];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o = *o + xi * wij;
            }
        }
    }

    fn dense_backward(&self, d: &DenseShape, x: &[F], dy: &[F], grads: &mut [F], dx: Option<&mut [F]>) {
        {
            let gw = &mut grads[d.weights()];
            for (i, &xi) in x.iter().enumerate() {
                if xi == F::zero() {
                    continue;
                }
                let row = &mut gw[i * d.outputs..(i + 1) * d.outputs];
                for (g, &dyj) in row.iter_mut().zip(dy) {
                    *g = *g + xi * dyj;
                }
            }
        }
        for (g, &dyj) in grads[d.bias()].iter_mut().zip(dy) {
            *g = *g + dyj;
        }
        if let Some(dx) = dx {
            let w = &self.values[d.weights()];
            for (i, dxi) in dx.iter_mut().enumerate() {
                let row = &w[i * d.outputs..(i + 1) * d.outputs];
                let mut s = F::zero();
                for (&wij, &dyj) in row.iter().zip(dy) {
                    s = s + wij * dyj;
                }
                *dxi = *dxi + s;
            }
        }
    }

    fn trunk_forward(&self, layers: &[DenseShape], input: &[F]) -> Vec<Vec<F>> {
        let mut acts: Vec<Vec<F>> = Vec::with_capacity(layers.len());
        for d in layers {
            let x = acts.last().map_or(input, |a| a.as_slice());
            let mut out = Vec::with_capacity(d.outputs);
            self.dense_forward(d, x, &mut out);
            for v in &mut out {
                *v = self.arch.activation.apply(*v);
            }
            acts.push(out);
        }
        acts
    }

    fn check_input(&self, len: usize) -> Result<(), NnError> {
        let expected = self.arch.input_dim();
        if len != expected {
            return Err(NnError::InputDim { found: len, expected });
        }
        Ok(())
    }

    /// Forward pass keeping activations for [`PolicyParams::backward`].
    pub fn forward_cached(&self, input: &[F]) -> Result<ForwardCache<F>, NnError> {
        self.check_input(input.len())?;
        let actor = self.trunk_forward(&self.map.actor_trunk, input);
        let critic = if self.arch.shared_trunk { Vec::new() } else { self.trunk_forward(&self.map.critic_trunk, input) };
        let actor_last = actor.last().map_or(input, |a| a.as_slice());
        let critic_last = if self.arch.shared_trunk { actor_last } else { critic.last().map_or(input, |a| a.as_slice()) };

        let mut head = Vec::new();
        self.dense_forward(&self.map.actor_head, actor_last, &mut head);
        let mut value = Vec::new();
        self.dense_forward(&self.map.critic_head, critic_last, &mut value);

        let logits = match self.arch.head {
            HeadKind::Joint => head,
            HeadKind::Factorized => {
                let n = Action::COUNT;
                (0..JOINT_ACTIONS).map(|k| head[k / n] + head[n + k % n]).collect()
            }
        };
        Ok(ForwardCache { input: input.to_vec(), actor, critic, logits, value: value[0] })
    }

    /// Joint-action logits and state value.
    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, F), NnError> {
        let c = self.forward_cached(input)?;
        Ok((c.logits, c.value))
    }

    fn trunk_backward(
        &self,
        layers: &[DenseShape],
        acts: &[Vec<F>],
        input: &[F],
        mut d_out: Vec<F>,
        grads: &mut [F],
        dinput: Option<&mut [F]>,
    ) {
        let mut dinput = dinput;
        for (k, d) in layers.iter().enumerate().rev() {
            for (g, &y) in d_out.iter_mut().zip(&acts[k]) {
                *g = *g * self.arch.activation.derivative_from_output(y);
            }
            let x = if k == 0 { input } else { &acts[k - 1] };
            if k == 0 {
                self.dense_backward(d, x, &d_out, grads, dinput.take());
            } else {
                let mut dx = vec![F::zero(); d.inputs];
                self.dense_backward(d, x, &d_out, grads, Some(&mut dx));
                d_out = dx;
            }
        }
        if layers.is_empty() {
            if let Some(di) = dinput {
                for (a, b) in di.iter_mut().zip(&d_out) {
                    *a = *a + *b;
                }
            }
        }
    }

    /// Reverse pass: accumulates parameter gradients of
    /// `sum(dlogits * logits) + dvalue * value` into `grads` and, when
    /// asked, returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        dlogits: &[F],
        dvalue: F,
        grads: &mut [F],
        want_input_grad: bool,
    ) -> Option<Vec<F>> {
        assert_eq!(dlogits.len(), JOINT_ACTIONS);
        assert_eq!(grads.len(), self.values.len());
        let dhead: Vec<F> = match self.arch.head {
            HeadKind::Joint => dlogits.to_vec(),
            HeadKind::Factorized => {
                let n = Action::COUNT;
                let mut d = vec![F::zero(); 2 * n];
                for (k, &g) in dlogits.iter().enumerate() {
                    d[k / n] = d[k / n] + g;
                    d[n + k % n] = d[n + k % n] + g;
                }
                d
            }
        };
        let input = cache.input.as_slice();
        let actor_last = cache.actor.last().map_or(input, |a| a.as_slice());
        let shared = self.arch.shared_trunk;
        let critic_last = if shared { actor_last } else { cache.critic.last().map_or(input, |a| a.as_slice()) };

        let mut d_actor = vec![F::zero(); self.map.actor_head.inputs];
        self.dense_backward(&self.map.actor_head, actor_last, &dhead, grads, Some(&mut d_actor));
        let mut d_critic = vec![F::zero(); self.map.critic_head.inputs];
        self.dense_backward(&self.map.critic_head, critic_last, &[dvalue], grads, Some(&mut d_critic));

        let mut dinput = want_input_grad.then(|| vec![F::zero(); input.len()]);
        if shared {
            for (a, c) in d_actor.iter_mut().zip(&d_critic) {
                *a = *a + *c;
            }
        } else {
            self.trunk_backward(&self.map.critic_trunk, &cache.critic, input, d_critic, grads, dinput.as_deref_mut());
        }
        self.trunk_backward(&self.map.actor_trunk, &cache.actor, input, d_actor, grads, dinput.as_deref_mut());
        dinput
    }
}

/// Gradient of the T = 1 probability of `action` with respect to every input scalar.
pub fn grad_action_prob_wrt_input<F: Scalar>(
    params: &PolicyParams<F>,
    input: &[F],
    action: usize,
) -> Result<Vec<F>, NnError> {
    if action >= JOINT_ACTIONS {
        return Err(NnError::ActionIndex(action));
    }
    let cache = params.forward_cached(input)?;
    let p = softmax(&cache.logits, F::one());
    let pa = p[action];
    let dlogits: Vec<F> =
        p.iter().enumerate().map(|(j, &pj)| if j == action { pa * (F::one() - pj) } else { -pa * pj }).collect();
    let mut scratch = params.zero_grads();
    Ok(params.backward(&cache, &dlogits, F::zero(), &mut scratch, true).expect("input grad requested"))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch(head: HeadKind, shared: bool, act: Activation) -> ArchSpec {
        ArchSpec { channels: 2, width: 3, height: 2, hidden: vec![5, 4], activation: act, head, shared_trunk: shared }
    }

    #[test]
    fn init_is_deterministic() {
        let a = PolicyParams::<f32>::init(small_arch(HeadKind::Joint, true, Activation::Tanh), 7).unwrap();
        let b = PolicyParams::<f32>::init(small_arch(HeadKind::Joint, true, Activation::Tanh), 7).unwrap();
        let c = PolicyParams::<f32>::init(small_arch(HeadKind::Joint, true, Activation::Tanh), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn zero_width_rejected() {
        let mut arch = small_arch(HeadKind::Joint, true, Activation::Tanh);
        arch.hidden = vec![4, 0];
        assert!(matches!(PolicyParams::<f32>::init(arch, 0), Err(NnError::Config(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let p = PolicyParams::<f64>::init(small_arch(HeadKind::Joint, true, Activation::Tanh), 1).unwrap();
        assert_eq!(p.forward(&[0.0; 3]).unwrap_err(), NnError::InputDim { found: 3, expected: 12 });
        assert!(matches!(grad_action_prob_wrt_input(&p, &[0.0; 12], 36), Err(NnError::ActionIndex(36))));
    }

    #[test]
    fn zero_head_gives_uniform_and_zero_input_gradient() {
        let mut p = PolicyParams::<f64>::init(small_arch(HeadKind::Joint, true, Activation::Tanh), 1).unwrap();
        let head = p.map.actor_head;
        for v in &mut p.values[head.weights()] {
            *v = 0.0;
        }
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let (logits, _) = p.forward(&x).unwrap();
        let probs = softmax(&logits, 1.0);
        assert!(probs.iter().all(|&q| (q - 1.0 / 36.0).abs() < 1e-15));
        let g = grad_action_prob_wrt_input(&p, &x, 3).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factorized_logits_are_sums() {
        let p = PolicyParams::<f64>::init(small_arch(HeadKind::Factorized, false, Activation::Relu), 3).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let (z, _) = p.forward(&x).unwrap();
        // z[i][j] - z[i][0] does not depend on i when logits are sums
        for i in 1..6 {
            for j in 0..6 {
                let a = z[i * 6 + j] - z[i * 6];
                let b = z[j] - z[0];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let p = PolicyParams::<f32>::init(small_arch(HeadKind::Joint, true, Activation::Tanh), 5).unwrap();
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
