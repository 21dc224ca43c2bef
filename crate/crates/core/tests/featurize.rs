mod common;

use envrobust::featurize::{decode, encode, env_delta, is_env_channel, ObsTensor, NUM_CHANNELS};
use envrobust::gridworld::WorldState;
use proptest::prelude::*;

use common::{layouts, random_perturbation, random_walk, rng};

#[test]
fn round_trip_on_random_walks() {
    for layout in layouts() {
        for s in random_walk(&layout, 10_000, 200, 17) {
            let obs = encode(&layout, &s);
            assert_eq!(obs.data.len(), NUM_CHANNELS * layout.cell_count());
            assert_eq!(decode(&obs, &layout).unwrap(), s.without_clock(), "{}", layout.name);
        }
    }
}

fn env_only(layout: &envrobust::gridworld::Layout, s: &WorldState) -> Vec<f32> {
    let obs = encode(layout, s);
    let plane = obs.plane();
    obs.data.iter().enumerate().filter(|(i, _)| is_env_channel(i / plane)).map(|(_, &v)| v).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_equals_observation_difference(layout_ix in 0usize..6, seed in any::<u64>()) {
        let layout = &layouts()[layout_ix];
        let p = random_perturbation(layout, 3, &mut rng(seed));
        let base = encode(layout, &layout.reset(None).unwrap());
        let pert = encode(layout, &layout.reset(Some(&p)).unwrap());
        let mut shifted = base.data.clone();
        env_delta(layout, &p).unwrap().add_to(layout, &mut shifted);
        prop_assert_eq!(&shifted, &pert.data);
        prop_assert_eq!(base.agent_part(), pert.agent_part());
    }

    #[test]
    fn bytes_round_trip(layout_ix in 0usize..6, seed in any::<u64>()) {
        let layout = &layouts()[layout_ix];
        let s = &random_walk(layout, 50, 50, seed)[49];
        let obs = encode(layout, s);
        prop_assert_eq!(ObsTensor::from_bytes(&obs.to_bytes()).unwrap(), obs);
    }
}

#[test]
fn agent_channels_do_not_see_counters() {
    let layout = common::ring();
    let mut r = rng(3);
    let p = random_perturbation(&layout, 3, &mut r);
    let a = encode(&layout, &layout.reset(None).unwrap());
    let b = encode(&layout, &layout.reset(Some(&p)).unwrap());
    assert_eq!(a.agent_part(), b.agent_part());
    if !p.is_empty() {
        assert_ne!(env_only(&layout, &layout.reset(None).unwrap()), env_only(&layout, &layout.reset(Some(&p)).unwrap()));
    }
}
