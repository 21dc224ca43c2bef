use super::RolloutBatch;

/// Generalized advantage estimates. A `done` step ends its episode: nothing
/// after it is bootstrapped into it. `last_value` bootstraps the final step
/// only when that step is not `done`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (last_value, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    adv
}

/// Fills `advantages` (normalised to zero mean, unit variance) and
/// `returns = raw advantages + values`. Every episode in a batch ends with
/// `done`, so no bootstrap value is needed.
pub fn gae_and_returns(batch: &mut RolloutBatch, gamma: f64, lambda: f64) {
    let rewards: Vec<f64> = batch.rewards.iter().map(|&r| r as f64).collect();
    let values: Vec<f64> = batch.values.iter().map(|&v| v as f64).collect();
    let adv = gae(&rewards, &values, &batch.dones, 0.0, gamma, lambda);
    batch.returns = adv.iter().zip(&values).map(|(a, v)| (a + v) as f32).collect();
    batch.advantages = normalize(&adv).into_iter().map(|a| a as f32).collect();
}

/// `(x - mean) / (std + 1e-8)` with the population standard deviation.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}
