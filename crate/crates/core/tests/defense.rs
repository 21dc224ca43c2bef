mod common;

use envrobust::attack::random_attack;
use envrobust::defense::{
    bat_finetune, bat_perturbations, build_distill_dataset, kickstart_loss, run_bat, train_kickstart, BatConfig,
    DistillSample,
};
use envrobust::gridworld::{Layout, Perturbation};
use envrobust::nn::{softmax, softmax_t, ArchSpec, PolicyParams};
use envrobust::rl::{continue_training, InitDistribution, PpoConfig, TrainConfig};
use rand::Rng;

use common::{dense_delta, random_perturbation, ring, rng};

fn teacher(layout: &Layout, seed: u64) -> PolicyParams<f32> {
    let mut arch = ArchSpec::for_layout(layout);
    arch.hidden = vec![16, 16];
    PolicyParams::init(arch, seed).unwrap()
}

fn small_cfg() -> BatConfig {
    BatConfig { n_traj: 4, horizon: 30, epochs: 3, minibatch: 16, n_adversarial: 2, n_random: 2, ..BatConfig::default() }
}

fn perturbations(layout: &Layout, n: usize, seed: u64) -> Vec<Perturbation> {
    let mut r = rng(seed);
    let mut out: Vec<Perturbation> = Vec::new();
    while out.len() < n {
        let p = random_perturbation(layout, 3, &mut r);
        if !p.is_empty() && !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Teacher targets on `obs` at temperature `t`, with the given perturbed copies.
fn sample_for(teacher: &PolicyParams<f32>, obs: Vec<f32>, t: f64, perturbed: Vec<Vec<f32>>) -> DistillSample {
    let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let (z, v) = teacher.cast::<f64>().forward(&x).unwrap();
    DistillSample {
        obs,
        teacher_probs: softmax(&z, 1.0),
        tempered_probs: softmax_t(&z, t).unwrap().probs,
        teacher_value: v,
        perturbed_obs: perturbed,
    }
}

fn random_obs<R: Rng>(layout: &Layout, r: &mut R) -> Vec<f32> {
    let s = &common::random_walk(layout, 30, 30, r.gen())[29];
    envrobust::featurize::encode(layout, s).data
}

#[test]
fn identity_scenario_has_zero_loss() {
    let layout = ring();
    let t = teacher(&layout, 1);
    let mut r = rng(1);
    let cfg = BatConfig { temperature: 1.0, ..BatConfig::default() };
    for _ in 0..20 {
        let obs = random_obs(&layout, &mut r);
        let s = sample_for(&t, obs.clone(), 1.0, vec![obs.clone(), obs]);
        let mut g = t.cast::<f64>().zero_grads();
        let l = kickstart_loss(&t.cast::<f64>(), &s, &cfg, Some(&mut g)).unwrap();
        assert!(l.total.abs() < 1e-9 && l.l_o.abs() < 1e-9 && l.l_p.abs() < 1e-9, "{l:?}");
    }
}

#[test]
fn beta_zero_ignores_perturbations() {
    let layout = ring();
    let t = teacher(&layout, 2);
    let student = teacher(&layout, 3).cast::<f64>();
    let mut r = rng(2);
    let obs = random_obs(&layout, &mut r);
    let other = random_obs(&layout, &mut r);
    let cfg = BatConfig { beta: 0.0, ..BatConfig::default() };
    let with = sample_for(&t, obs.clone(), 1.5, vec![other]);
    let without = sample_for(&t, obs, 1.5, Vec::new());
    let (mut g1, mut g2) = (student.zero_grads(), student.zero_grads());
    let a = kickstart_loss(&student, &with, &cfg, Some(&mut g1)).unwrap();
    let b = kickstart_loss(&student, &without, &cfg, Some(&mut g2)).unwrap();
    assert_eq!(a.total, b.total);
    assert_eq!(a.total, a.l_o);
    assert_eq!(g1, g2);
}

fn loss_only(p: &PolicyParams<f64>, s: &DistillSample, cfg: &BatConfig) -> f64 {
    kickstart_loss(p, s, cfg, None).unwrap().total
}

fn fd_gradient_error(student: &PolicyParams<f64>, s: &DistillSample, cfg: &BatConfig) -> f64 {
    let mut g = student.zero_grads();
    kickstart_loss(student, s, cfg, Some(&mut g)).unwrap();
    let mut p = student.clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..p.num_params() {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + h;
        let up = loss_only(&p, s, cfg);
        p.values_mut()[i] = orig - h;
        let down = loss_only(&p, s, cfg);
        p.values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4));
    }
    worst
}

#[test]
fn gradient_matches_finite_differences_with_and_without_hinge() {
    let layout = ring();
    let t = teacher(&layout, 4);
    let student = teacher(&layout, 5).cast::<f64>();
    let mut r = rng(4);
    let perts = perturbations(&layout, 3, 4);
    for alpha in [0.0, 1e6] {
        let cfg = BatConfig { alpha, ..BatConfig::default() };
        let obs = random_obs(&layout, &mut r);
        let perturbed = perts
            .iter()
            .map(|p| obs.iter().zip(dense_delta(&layout, p)).map(|(a, d)| a + d as f32).collect())
            .collect();
        let s = sample_for(&t, obs, cfg.temperature, perturbed);
        let e = fd_gradient_error(&student, &s, &cfg);
        assert!(e < 1e-4, "alpha {alpha}: {e}");
    }
}

#[test]
fn inactive_hinge_contributes_no_value_gradient() {
    let layout = ring();
    let t = teacher(&layout, 6);
    let student = teacher(&layout, 7).cast::<f64>();
    let mut r = rng(6);
    let obs = random_obs(&layout, &mut r);
    let pert = random_obs(&layout, &mut r);
    let slack = BatConfig { alpha: 1e6, ..BatConfig::default() };
    let s = sample_for(&t, obs, slack.temperature, vec![pert]);
    let l = kickstart_loss(&student, &s, &slack, None).unwrap();
    // with an inactive hinge, L_p is the KL term alone
    let q = softmax(&student.forward(&s.perturbed_obs[0].iter().map(|&x| x as f64).collect::<Vec<_>>()).unwrap().0, 1.0);
    let kl: f64 = s.tempered_probs.iter().zip(&q).map(|(p, q)| if *p > 0.0 { p * (p / q).ln() } else { 0.0 }).sum();
    assert!((l.l_p - kl).abs() < 1e-9);
    assert!(fd_gradient_error(&student, &s, &slack) < 1e-4);
}

#[test]
fn loss_decomposes_into_mean_over_perturbations() {
    let layout = ring();
    let t = teacher(&layout, 8);
    let student = teacher(&layout, 9).cast::<f64>();
    let mut r = rng(8);
    let obs = random_obs(&layout, &mut r);
    let perturbed: Vec<Vec<f32>> = (0..3).map(|_| random_obs(&layout, &mut r)).collect();
    let cfg = BatConfig { beta: 0.7, ..BatConfig::default() };
    let all = kickstart_loss(&student, &sample_for(&t, obs.clone(), 1.5, perturbed.clone()), &cfg, None).unwrap();
    let singles: Vec<f64> = perturbed
        .iter()
        .map(|p| kickstart_loss(&student, &sample_for(&t, obs.clone(), 1.5, vec![p.clone()]), &cfg, None).unwrap().l_p)
        .collect();
    assert!((all.l_p - singles.iter().sum::<f64>() / 3.0).abs() < 1e-9);
    assert!((all.total - (all.l_o + 0.7 * all.l_p)).abs() < 1e-9);
}

#[test]
fn dataset_targets_split_and_perturbed_inputs() {
    let layout = ring();
    let t = teacher(&layout, 10);
    let cfg = BatConfig { n_traj: 7, horizon: 25, ..small_cfg() };
    let perts = perturbations(&layout, 3, 10);
    let ds = build_distill_dataset(&t, &layout, &perts, &cfg, 3).unwrap();
    assert_eq!(ds.len(), 7 * 25);
    assert_eq!(ds.train.len() + ds.val.len(), ds.len());
    let train_traj: std::collections::BTreeSet<usize> = ds.train.iter().map(|&i| ds.trajectory[i]).collect();
    let val_traj: std::collections::BTreeSet<usize> = ds.val.iter().map(|&i| ds.trajectory[i]).collect();
    assert!(train_traj.is_disjoint(&val_traj));
    assert_eq!(train_traj.len(), 5); // round(0.7 * 7)
    assert_eq!(val_traj.len(), 2);
    let deltas: Vec<Vec<f64>> = perts.iter().map(|p| dense_delta(&layout, p)).collect();
    for i in (0..ds.len()).step_by(11) {
        let s = ds.sample(i);
        let (z, v) = t.forward(&s.obs).unwrap();
        let z: Vec<f64> = z.iter().map(|&x| x as f64).collect();
        assert_eq!(s.teacher_probs, softmax(&z, 1.0));
        assert_eq!(s.tempered_probs, softmax_t(&z, 1.5).unwrap().probs);
        assert_eq!(s.teacher_value, v as f64);
        for (po, d) in s.perturbed_obs.iter().zip(&deltas) {
            let want: Vec<f32> = s.obs.iter().zip(d).map(|(a, b)| a + *b as f32).collect();
            assert_eq!(po, &want);
        }
    }
}

#[test]
fn zero_learning_rate_returns_teacher() {
    let layout = ring();
    let t = teacher(&layout, 11);
    let cfg = BatConfig { lr: 0.0, ..small_cfg() };
    let ds = build_distill_dataset(&t, &layout, &perturbations(&layout, 2, 11), &cfg, 1).unwrap();
    let (student, report) = train_kickstart(&t, &ds, &cfg, 1).unwrap();
    assert_eq!(student.values(), t.values());
    assert_eq!(report.selected_epoch, 0);
    assert_eq!(report.epochs.len(), cfg.epochs + 1);
}

#[test]
fn kickstart_never_worse_than_teacher_on_validation() {
    let layout = ring();
    let t = teacher(&layout, 12);
    let cfg = small_cfg();
    let ds = build_distill_dataset(&t, &layout, &perturbations(&layout, 3, 12), &cfg, 2).unwrap();
    let (_, report) = train_kickstart(&t, &ds, &cfg, 2).unwrap();
    assert!(report.selected_val <= report.epochs[0].val.total);
    let min = report.epochs.iter().map(|e| e.val.total).fold(f64::INFINITY, f64::min);
    assert_eq!(report.selected_val, min);
    let dir = tempfile::tempdir().unwrap();
    report.write_csv(dir.path().join("k.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("k.csv")).unwrap();
    assert_eq!(text.lines().count(), cfg.epochs + 2);
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        ppo: PpoConfig { minibatch: 40, epochs: 1, ..PpoConfig::default() },
        horizon: 40,
        episodes_per_update: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn run_bat_leaves_teacher_untouched() {
    let layout = ring();
    let t = teacher(&layout, 13);
    let hash = t.fingerprint();
    let attack = random_attack(&layout, 3, 5, None, 13).unwrap();
    let cfg = BatConfig { finetune_steps: 80, ..small_cfg() };
    let out = run_bat(&t, &layout, &attack, &cfg, &tiny_train(), 5).unwrap();
    assert_eq!(t.fingerprint(), hash);
    assert_eq!(out.perturbations.len(), 4);
    assert_eq!(&out.perturbations[..2], &attack.perturbations()[..2]);
    assert_eq!(out.perturbations, bat_perturbations(&layout, &attack, &cfg, 5).unwrap());
    assert_eq!(out.robust.policy.meta.algo, "bat");
    assert_eq!(out.robust.policy.meta.parent.as_deref(), Some(out.start_policy.id().as_str()));
}

#[test]
fn point_mass_finetune_is_extra_training() {
    let layout = ring();
    let t = teacher(&layout, 14);
    let cfg = tiny_train();
    let a = bat_finetune(&t, &layout, &InitDistribution::standard(), 80, 3, &cfg).unwrap();
    let b = continue_training(&t, &layout, &InitDistribution::standard(), 80, 3, &cfg, "extra").unwrap();
    assert_eq!(a.policy, b.policy);
}
