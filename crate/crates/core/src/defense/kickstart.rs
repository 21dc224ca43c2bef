use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;

use super::{BatConfig, DefenseError, DistillDataset, DistillSample};
use crate::nn::{backward_and_update, softmax, Adam, NnError, PolicyParams, Scalar};
use crate::rl::stream_rng;

/// `total = l_o + beta * l_p`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub l_o: f64,
    pub l_p: f64,
}

fn kl_terms<F: Scalar>(target: &[f64], logits: &[F]) -> (F, Vec<F>) {
    let q = softmax(logits, F::one());
    let floor = F::lit(crate::nn::KL_FLOOR);
    let mut kl = F::zero();
    for (&p, &qi) in target.iter().zip(&q) {
        if p > 0.0 {
            let p = F::lit(p);
            kl = kl + p * (p / qi.max(floor)).ln();
        }
    }
    let grad = q.iter().zip(target).map(|(&qi, &p)| qi - F::lit(p)).collect();
    (kl, grad)
}

fn sign<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Kick-start loss of one sample:
///
/// ```text
/// L_o = KL(π(s) ‖ π_s(s)) + |V(s) − V_s(s)|
/// L_p = mean_ŝ [ KL(π^T(s) ‖ π_s(ŝ)) + max(|V(s) − V_s(ŝ)| − α|V(s)|, 0) ]
/// L   = L_o + β L_p
/// ```
///
/// When `grads` is given, `∂L/∂θ` is added to it.
pub fn kickstart_loss<F: Scalar>(
    student: &PolicyParams<F>,
    sample: &DistillSample,
    cfg: &BatConfig,
    mut grads: Option<&mut [F]>,
) -> Result<LossParts, NnError> {
    let v_t = F::lit(sample.teacher_value);
    let input: Vec<F> = sample.obs.iter().map(|&x| F::lit(x as f64)).collect();
    let cache = student.forward_cached(&input)?;
    let (kl, dlogits) = kl_terms(&sample.teacher_probs, &cache.logits);
    let l_o = kl + (v_t - cache.value).abs();
    if let Some(g) = grads.as_deref_mut() {
        student.backward(&cache, &dlogits, sign(cache.value - v_t), g, false);
    }

    let mut l_p = F::zero();
    let n = sample.perturbed_obs.len();
    if cfg.beta != 0.0 && n > 0 {
        let weight = F::lit(cfg.beta / n as f64);
        let slack = F::lit(cfg.alpha) * v_t.abs();
        for obs in &sample.perturbed_obs {
            let input: Vec<F> = obs.iter().map(|&x| F::lit(x as f64)).collect();
            let cache = student.forward_cached(&input)?;
            let (kl, dlogits) = kl_terms(&sample.tempered_probs, &cache.logits);
            let gap = (v_t - cache.value).abs() - slack;
            let active = gap > F::zero();
            l_p = l_p + kl + if active { gap } else { F::zero() };
            if let Some(g) = grads.as_deref_mut() {
                let dl: Vec<F> = dlogits.iter().map(|&d| d * weight).collect();
                let dv = if active { sign(cache.value - v_t) * weight } else { F::zero() };
                student.backward(&cache, &dl, dv, g, false);
            }
        }
        l_p = l_p / F::lit(n as f64);
    }
    let l_o = l_o.to_f64().unwrap();
    let l_p = l_p.to_f64().unwrap();
    Ok(LossParts { total: l_o + cfg.beta * l_p, l_o, l_p })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: LossParts,
    pub val: LossParts,
}

/// Per-epoch losses; epoch 0 is the untouched teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct KickstartReport {
    pub epochs: Vec<EpochLoss>,
    pub selected_epoch: usize,
    pub selected_val: f64,
}

impl KickstartReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_total,train_l_o,train_l_p,val_total,val_l_o,val_l_p,selected")?;
        for e in &self.epochs {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train.total,
                e.train.l_o,
                e.train.l_p,
                e.val.total,
                e.val.l_o,
                e.val.l_p,
                (e.epoch == self.selected_epoch) as u8
            )?;
        }
        f.flush()
    }
}

fn mean_loss(
    student: &PolicyParams<f32>,
    ds: &DistillDataset,
    idx: &[usize],
    cfg: &BatConfig,
) -> Result<LossParts, NnError> {
    let mut acc = LossParts::default();
    for &i in idx {
        let l = kickstart_loss(student, &ds.sample(i), cfg, None)?;
        acc.total += l.total;
        acc.l_o += l.l_o;
        acc.l_p += l.l_p;
    }
    let n = idx.len().max(1) as f64;
    Ok(LossParts { total: acc.total / n, l_o: acc.l_o / n, l_p: acc.l_p / n })
}

/// Minibatch Adam on the kick-start loss, starting from the teacher's own
/// weights. Returns the epoch with the lowest validation loss (earliest on
/// ties), so the result is never worse on validation than the teacher.
pub fn train_kickstart(
    teacher: &PolicyParams<f32>,
    ds: &DistillDataset,
    cfg: &BatConfig,
    seed: u64,
) -> Result<(PolicyParams<f32>, KickstartReport), DefenseError> {
    cfg.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(DefenseError::Config("distillation split has an empty side".into()));
    }
    let mut student = teacher.clone();
    student.meta.algo = "kickstart".into();
    student.meta.parent = Some(teacher.id());
    let mut optimizer = Adam::for_params(&student);
    let lr = cfg.lr as f32;

    let first = EpochLoss { epoch: 0, train: mean_loss(&student, ds, &ds.train, cfg)?, val: mean_loss(&student, ds, &ds.val, cfg)? };
    let mut best = (first.val.total, 0usize, student.clone());
    let mut epochs = vec![first];
    let mut order = ds.train.clone();
    let mut rng = stream_rng(seed, 1);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossParts::default();
        for chunk in order.chunks(cfg.minibatch) {
            let mut parts = LossParts::default();
            let mut failure = None;
            backward_and_update(&mut student, &mut optimizer, lr, None, |p, grads| {
                for &i in chunk {
                    match kickstart_loss(p, &ds.sample(i), cfg, Some(&mut *grads)) {
                        Ok(l) => {
                            parts.total += l.total;
                            parts.l_o += l.l_o;
                            parts.l_p += l.l_p;
                        }
                        Err(e) => failure = Some(e),
                    }
                }
                let scale = 1.0 / chunk.len() as f32;
                for g in grads.iter_mut() {
                    *g *= scale;
                }
                parts.total as f32 * scale
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            acc.total += parts.total;
            acc.l_o += parts.l_o;
            acc.l_p += parts.l_p;
        }
        let n = order.len() as f64;
        let train = LossParts { total: acc.total / n, l_o: acc.l_o / n, l_p: acc.l_p / n };
        let val = mean_loss(&student, ds, &ds.val, cfg)?;
        if !val.total.is_finite() {
            return Err(NnError::NonFinite { what: "validation loss", detail: format!("epoch {epoch}") }.into());
        }
        if val.total < best.0 {
            best = (val.total, epoch, student.clone());
        }
        info!("kickstart epoch {epoch}: train {:.5} val {:.5}", train.total, val.total);
        epochs.push(EpochLoss { epoch, train, val });
    }
    let (selected_val, selected_epoch, policy) = best;
    Ok((policy, KickstartReport { epochs, selected_epoch, selected_val }))
}
