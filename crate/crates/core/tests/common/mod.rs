#![allow(dead_code)]

use std::collections::HashMap;

use envrobust::gridworld::{
    builtin_layout, builtin_layout_names, enumerate_unit_perturbations, Action, Layout, Perturbation,
    UnitPerturbation, WorldState, JOINT_ACTIONS,
};
use envrobust::nn::{grad_action_prob_wrt_input, softmax, Activation, ArchSpec, HeadKind, PolicyParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn layouts() -> Vec<Layout> {
    builtin_layout_names().map(|n| builtin_layout(n).unwrap()).collect()
}

pub fn ring() -> Layout {
    builtin_layout("coordination_ring").unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_actions<R: Rng>(rng: &mut R) -> [Action; 2] {
    [Action::ALL[rng.gen_range(0..6)], Action::ALL[rng.gen_range(0..6)]]
}

/// Random feasible perturbation with at most `max_units` units.
pub fn random_perturbation<R: Rng>(layout: &Layout, max_units: usize, rng: &mut R) -> Perturbation {
    let mut units = enumerate_unit_perturbations(layout);
    units.shuffle(rng);
    let want = rng.gen_range(0..=max_units);
    let mut chosen: Vec<UnitPerturbation> = Vec::new();
    for u in units {
        if chosen.len() == want {
            break;
        }
        if chosen.iter().all(|c| c.target() != u.target()) {
            chosen.push(u);
        }
    }
    Perturbation::new(chosen).unwrap()
}

/// States visited by a uniformly random joint-action walk, restarting from a
/// random perturbed start every `restart` steps.
pub fn random_walk(layout: &Layout, n: usize, restart: usize, seed: u64) -> Vec<WorldState> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    let mut state = layout.reset(None).unwrap();
    for i in 0..n {
        if i % restart == 0 {
            let p = random_perturbation(layout, 3, &mut r);
            state = layout.reset(Some(&p)).unwrap();
        }
        out.push(state.clone());
        state = layout.step(&state, random_actions(&mut r)).state;
    }
    out
}

/// Every perturbation of at most `epsilon` units on distinct cells.
pub fn all_perturbations(layout: &Layout, epsilon: usize) -> Vec<Perturbation> {
    let units = enumerate_unit_perturbations(layout);
    let mut out = Vec::new();
    let mut stack: Vec<(usize, Vec<UnitPerturbation>)> = vec![(0, Vec::new())];
    while let Some((start, cur)) = stack.pop() {
        for i in start..units.len() {
            if cur.iter().any(|u| u.target() == units[i].target()) {
                continue;
            }
            let mut next = cur.clone();
            next.push(units[i]);
            out.push(Perturbation::new(next.clone()).unwrap());
            if next.len() < epsilon {
                stack.push((i + 1, next));
            }
        }
    }
    out
}

/// Observation difference between the perturbed and the standard start.
pub fn dense_delta(layout: &Layout, p: &Perturbation) -> Vec<f64> {
    use envrobust::featurize::encode;
    let a = encode(layout, &layout.reset(None).unwrap());
    let b = encode(layout, &layout.reset(Some(p)).unwrap());
    a.data.iter().zip(&b.data).map(|(x, y)| (*y - *x) as f64).collect()
}

/// Per-step gradients of the greedy action's probability, recomputed one
/// step at a time in 64-bit.
pub fn step_gradients(
    policy: &envrobust::nn::PolicyParams<f32>,
    trajectories: &[envrobust::attack::Trajectory],
) -> Vec<Vec<f64>> {
    let p64 = policy.cast::<f64>();
    trajectories
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| {
            let x: Vec<f64> = s.obs.iter().map(|&v| v as f64).collect();
            envrobust::nn::grad_action_prob_wrt_input(&p64, &x, s.greedy as usize).unwrap()
        })
        .collect()
}

/// First-order objective of a perturbation: minus the summed change in the
/// greedy-action probabilities.
pub fn naive_objective(grads: &[Vec<f64>], delta: &[f64]) -> f64 {
    -grads.iter().map(|g| g.iter().zip(delta).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
}

const STEP: f64 = 1e-5;

/// Relative error, with the denominator floored at 1e-6.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_arch<R: Rng>(r: &mut R) -> ArchSpec {
    let depth = r.gen_range(1..=3);
    ArchSpec {
        channels: r.gen_range(1..=4),
        width: r.gen_range(2..=4),
        height: r.gen_range(2..=4),
        hidden: (0..depth).map(|_| r.gen_range(3..=10)).collect(),
        activation: if r.gen_bool(0.5) { Activation::Tanh } else { Activation::Relu },
        head: if r.gen_bool(0.5) { HeadKind::Joint } else { HeadKind::Factorized },
        shared_trunk: r.gen_bool(0.5),
    }
}

fn objective(p: &PolicyParams<f64>, x: &[f64], w: &[f64], wv: f64) -> f64 {
    let (z, v) = p.forward(x).unwrap();
    z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + wv * v
}

/// Worst relative error of parameter and input gradients against central
/// differences for one random network and input.
pub fn fd_check(seed: u64) -> f64 {
    let mut r = rng(seed);
    let arch = random_arch(&mut r);
    let n_in = arch.input_dim();
    let mut p = PolicyParams::<f64>::init(arch, seed).unwrap();
    for v in p.values_mut() {
        *v += r.gen_range(-0.1..0.1);
    }
    let x: Vec<f64> = (0..n_in).map(|_| r.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..JOINT_ACTIONS).map(|_| r.gen_range(-1.0..1.0)).collect();
    let wv: f64 = r.gen_range(-1.0..1.0);

    let cache = p.forward_cached(&x).unwrap();
    let mut grads = p.zero_grads();
    let dx = p.backward(&cache, &w, wv, &mut grads, true).unwrap();

    let mut worst = 0.0f64;
    for i in 0..p.num_params() {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + STEP;
        let up = objective(&p, &x, &w, wv);
        p.values_mut()[i] = orig - STEP;
        let down = objective(&p, &x, &w, wv);
        p.values_mut()[i] = orig;
        worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * STEP)));
    }
    let mut xs = x.clone();
    for i in 0..n_in {
        xs[i] = x[i] + STEP;
        let up = objective(&p, &xs, &w, wv);
        xs[i] = x[i] - STEP;
        let down = objective(&p, &xs, &w, wv);
        xs[i] = x[i];
        worst = worst.max(rel_err(dx[i], (up - down) / (2.0 * STEP)));
    }

    // gradient of one action probability with respect to the input
    let a = r.gen_range(0..JOINT_ACTIONS);
    let g = grad_action_prob_wrt_input(&p, &x, a).unwrap();
    let prob = |x: &[f64]| softmax(&p.forward(x).unwrap().0, 1.0)[a];
    for i in 0..n_in {
        xs[i] = x[i] + STEP;
        let up = prob(&xs);
        xs[i] = x[i] - STEP;
        let down = prob(&xs);
        xs[i] = x[i];
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

/// Breadth-first search over compositions of unit perturbations from the
/// standard state, recording the depth at which each state is first seen.
pub fn bfs_depths(layout: &Layout, max_depth: usize) -> HashMap<WorldState, usize> {
    let units = enumerate_unit_perturbations(layout);
    let start = layout.reset(None).unwrap();
    let mut depth = HashMap::from([(start, 0usize)]);
    let mut frontier = vec![Vec::new()];
    for d in 1..=max_depth {
        let mut next = Vec::new();
        for applied in &frontier {
            for u in &units {
                let mut units: Vec<_> = applied.clone();
                units.push(*u);
                let Ok(p) = Perturbation::new(units.clone()) else { continue };
                let Ok(s) = layout.reset(Some(&p)) else { continue };
                if !depth.contains_key(&s) {
                    depth.insert(s, d);
                    next.push(units);
                }
            }
        }
        frontier = next;
    }
    depth
}
