use super::{NnError, PolicyParams, Scalar};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F: Scalar> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(num_params: usize) -> Adam<F> {
        Adam {
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
            m: vec![F::zero(); num_params],
            v: vec![F::zero(); num_params],
            t: 0,
        }
    }

    pub fn for_params(params: &PolicyParams<F>) -> Adam<F> {
        Adam::new(params.num_params())
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, values: &mut [F], grads: &[F], lr: F) {
        assert_eq!(values.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let one = F::one();
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub fn global_norm<F: Scalar>(grads: &[F]) -> F {
    grads.iter().map(|&g| g * g).sum::<F>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats<F> {
    pub loss: F,
    pub grad_norm: F,
}

/// Runs one optimisation step.
///
/// `loss_fn` evaluates the loss for the current parameters and accumulates
/// its gradient into the zeroed buffer it receives. Gradients are rescaled
/// to `max_grad_norm` when given, then applied with Adam.
pub fn backward_and_update<F, L>(
    params: &mut PolicyParams<F>,
    optimizer: &mut Adam<F>,
    lr: F,
    max_grad_norm: Option<F>,
    loss_fn: L,
) -> Result<UpdateStats<F>, NnError>
where
    F: Scalar,
    L: FnOnce(&PolicyParams<F>, &mut [F]) -> F,
{
    let mut grads = params.zero_grads();
    let loss = loss_fn(params, &mut grads);
    if !loss.is_finite() {
        return Err(NnError::NonFinite { what: "loss", detail: format!("{loss:?} after {} steps", optimizer.steps()) });
    }
    let grad_norm = global_norm(&grads);
    if !grad_norm.is_finite() {
        let bad = grads.iter().position(|g| !g.is_finite());
        return Err(NnError::NonFinite { what: "gradient", detail: format!("first bad entry {bad:?}, loss {loss:?}") });
    }
    if let Some(max) = max_grad_norm {
        if grad_norm > max {
            let scale = max / grad_norm;
            for g in &mut grads {
                *g = *g * scale;
            }
        }
    }
    optimizer.step(params.values_mut(), &grads, lr);
    Ok(UpdateStats { loss, grad_norm })
}
