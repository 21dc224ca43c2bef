mod common;

use std::collections::BTreeSet;

use envrobust::gridworld::{perturbation_distance, Event, Item, Layout, Perturbation, TileKind, WorldState};
use proptest::prelude::*;

use common::{layouts, random_actions, random_perturbation, rng};

fn onion_mass(layout: &Layout, s: &WorldState) -> i64 {
    let soup = layout.soup_size as i64;
    let item = |i: &Item| match i {
        Item::Onion => 1,
        Item::Dish => 0,
        Item::Soup => soup,
    };
    s.players.iter().filter_map(|p| p.held.as_ref()).map(item).sum::<i64>()
        + s.counters.values().map(item).sum::<i64>()
        + s.pots.values().map(|p| p.onions as i64).sum::<i64>()
}

fn dish_mass(s: &WorldState) -> i64 {
    let item = |i: &Item| matches!(i, Item::Dish | Item::Soup) as i64;
    s.players.iter().filter_map(|p| p.held.as_ref()).map(item).sum::<i64>() + s.counters.values().map(item).sum::<i64>()
}

fn check_state(layout: &Layout, s: &WorldState) {
    assert_ne!(s.players[0].pos, s.players[1].pos, "characters overlap");
    for p in &s.players {
        assert_eq!(layout.tile(p.pos), TileKind::Floor, "character off the floor at {}", p.pos);
    }
    for c in s.counters.keys() {
        assert_eq!(layout.tile(*c), TileKind::Counter);
    }
    let pot_cells: BTreeSet<_> = layout.cells_of(TileKind::Pot).collect();
    assert_eq!(s.pots.keys().copied().collect::<BTreeSet<_>>(), pot_cells);
    for pot in s.pots.values() {
        assert!(pot.onions <= layout.soup_size);
        assert!(pot.cook_timer <= layout.cook_time);
        if pot.cook_timer > 0 {
            assert_eq!(pot.onions, layout.soup_size);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn walk_invariants(layout_ix in 0usize..6, seed in any::<u64>()) {
        let layout = &layouts()[layout_ix];
        let mut r = rng(seed);
        let p = random_perturbation(layout, 3, &mut r);
        let mut s = layout.reset(Some(&p)).unwrap();
        for _ in 0..400 {
            check_state(layout, &s);
            let a = random_actions(&mut r);
            let out = layout.step(&s, a);
            prop_assert_eq!(&out, &layout.step(&s, a));
            prop_assert_eq!(out.state.t, s.t + 1);

            let delivered = out.events.iter().filter(|e| matches!(e, Event::Delivered { .. })).count() as i64;
            let onions_in = out.events.iter().filter(|e| matches!(e, Event::Dispensed { item: Item::Onion, .. })).count() as i64;
            let dishes_in = out.events.iter().filter(|e| matches!(e, Event::Dispensed { item: Item::Dish, .. })).count() as i64;
            prop_assert_eq!(out.reward, delivered as f64 * layout.delivery_reward);
            prop_assert_eq!(
                onion_mass(layout, &out.state) - onion_mass(layout, &s),
                onions_in - layout.soup_size as i64 * delivered
            );
            prop_assert_eq!(dish_mass(&out.state) - dish_mass(&s), dishes_in - delivered);
            s = out.state;
        }
    }

    #[test]
    fn apply_then_distance(layout_ix in 0usize..6, seed in any::<u64>()) {
        let layout = &layouts()[layout_ix];
        let p = random_perturbation(layout, 4, &mut rng(seed));
        let standard = layout.reset(None).unwrap();
        let s = layout.reset(Some(&p)).unwrap();
        prop_assert_eq!(perturbation_distance(layout, &standard, &s), Ok(p.len()));
        prop_assert_eq!(&s.players, &standard.players);
    }
}

#[test]
fn wait_changes_only_cook_timers() {
    for layout in layouts() {
        let pot = layout.cells_of(TileKind::Pot).next().unwrap();
        let p = Perturbation::new(vec![envrobust::gridworld::UnitPerturbation::OnionsInPot {
            cell: pot,
            onions: layout.soup_size,
        }])
        .unwrap();
        let mut s = layout.reset(Some(&p)).unwrap();
        for k in 1..=layout.cook_time + 3 {
            let out = layout.step(&s, [envrobust::gridworld::Action::Wait; 2]);
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.state.players, s.players);
            assert_eq!(out.state.pots[&pot].cook_timer, layout.cook_time.saturating_sub(k));
            s = out.state;
        }
        assert!(s.pots[&pot].is_ready(layout.soup_size));
    }
}

#[test]
fn distance_matches_bfs_on_smallest_layout() {
    let mut all = layouts();
    all.sort_by_key(|l| l.cell_count());
    let layout = &all[0];
    let standard = layout.reset(None).unwrap();
    let depths = common::bfs_depths(layout, 2);
    assert!(depths.len() > 100);
    for (s, d) in &depths {
        assert_eq!(perturbation_distance(layout, &standard, s), Ok(*d));
    }
}

#[test]
fn distance_rejects_non_environment_changes() {
    let layout = common::ring();
    let standard = layout.reset(None).unwrap();
    let mut moved = standard.clone();
    moved.players[0].held = Some(Item::Onion);
    assert!(perturbation_distance(&layout, &standard, &moved).is_err());
}
