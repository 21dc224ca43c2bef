use super::{NnError, Scalar};

/// Lower clamp applied to the second argument of the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// Probabilities over the joint action space.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub temperature: f64,
}

impl ActionDistribution {
    pub fn argmax(&self) -> usize {
        super::argmax(&self.probs)
    }
}

/// Max-shifted softmax of `logits / t`.
pub fn softmax<F: Scalar>(logits: &[F], t: F) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits.iter().map(|&z| ((z - max) / t).exp()).collect();
    let sum: F = out.iter().copied().sum();
    for p in &mut out {
        *p = *p / sum;
    }
    out
}

pub fn log_softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Tempered policy: `exp(z_a / T) / sum exp(z / T)`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<ActionDistribution, NnError> {
    if !(temperature > 0.0) {
        return Err(NnError::Temperature(temperature));
    }
    Ok(ActionDistribution { probs: softmax(logits, temperature), temperature })
}

/// `KL(p || q) = sum p log(p / q)` with `q` clamped below by [`KL_FLOOR`].
pub fn kl_divergence(p: &ActionDistribution, q: &ActionDistribution) -> f64 {
    kl(&p.probs, &q.probs)
}

pub(crate) fn kl<F: Scalar>(p: &[F], q: &[F]) -> F {
    let floor = F::lit(KL_FLOOR);
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > F::zero())
        .map(|(&pi, &qi)| pi * (pi / qi.max(floor)).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_temperature_is_plain_softmax() {
        let z = [0.3, -1.2, 2.0, 0.0];
        let d = softmax_t(&z, 1.0).unwrap();
        let denom: f64 = z.iter().map(|v: &f64| v.exp()).sum();
        for (p, v) in d.probs.iter().zip(z) {
            assert!((p - v.exp() / denom).abs() < 1e-15);
        }
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_logits_are_uniform_at_any_temperature() {
        for t in [0.1, 1.0, 1.5, 10.0] {
            let d = softmax_t(&[2.5; 36], t).unwrap();
            assert!(d.probs.iter().all(|&p| (p - 1.0 / 36.0).abs() < 1e-15));
        }
    }

    #[test]
    fn non_positive_temperature_rejected() {
        assert_eq!(softmax_t(&[1.0], 0.0), Err(NnError::Temperature(0.0)));
        assert!(softmax_t(&[1.0], -1.0).is_err());
        assert!(softmax_t(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let d = softmax_t(&[1000.0, 999.0, -1000.0], 0.5).unwrap();
        assert!(d.probs.iter().all(|p| p.is_finite()));
        assert_eq!(d.argmax(), 0);
    }

    #[test]
    fn kl_basics() {
        let u = ActionDistribution { probs: vec![0.25; 4], temperature: 1.0 };
        assert_eq!(kl_divergence(&u, &u), 0.0);
        let peaked = ActionDistribution { probs: vec![0.97, 0.01, 0.01, 0.01], temperature: 1.0 };
        assert!(kl_divergence(&u, &peaked) > 0.0);
        let onehot = ActionDistribution { probs: vec![1.0, 0.0, 0.0, 0.0], temperature: 1.0 };
        // zero q entries are clamped, so the divergence stays finite
        assert!(kl_divergence(&u, &onehot).is_finite());
    }

    #[test]
    fn log_softmax_consistent() {
        let z = [0.5f64, -0.25, 3.0];
        let ls = log_softmax(&z);
        let p = softmax(&z, 1.0);
        for (a, b) in ls.iter().zip(p) {
            assert!((a.exp() - b).abs() < 1e-15);
        }
    }
}
