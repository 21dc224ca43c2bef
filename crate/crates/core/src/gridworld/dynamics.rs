use std::collections::{BTreeMap, BTreeSet};

use super::{
    Action, Direction, Item, Layout, Perturbation, PerturbationError, PlayerState, PotState, Pos, TileKind,
    UnitPerturbation, WorldState,
};

/// Something observable that happened during a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Dispensed { player: usize, item: Item },
    Placed { player: usize, cell: Pos, item: Item },
    PickedUp { player: usize, cell: Pos, item: Item },
    PotLoaded { player: usize, cell: Pos, onions: u8 },
    CookStarted { cell: Pos },
    SoupPickedUp { player: usize, cell: Pos },
    Delivered { player: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: WorldState,
    pub reward: f64,
    pub events: Vec<Event>,
}

impl Layout {
    /// Standard initial state: characters on their start cells facing up,
    /// every counter and pot empty.
    pub fn standard_state(&self) -> WorldState {
        let players = self.starts.map(|pos| PlayerState { pos, orientation: Direction::Up, held: None });
        let pots = self.cells_of(TileKind::Pot).map(|p| (p, PotState::default())).collect();
        WorldState { players, counters: BTreeMap::new(), pots, t: 0 }
    }

    /// Initial state, optionally with a perturbation applied to its environmental part.
    pub fn reset(&self, perturbation: Option<&Perturbation>) -> Result<WorldState, PerturbationError> {
        let mut state = self.standard_state();
        if let Some(p) = perturbation {
            let reachable = self.reachable_empty_counters(&state);
            for unit in p.units() {
                apply_unit(self, &mut state, *unit, &reachable)?;
            }
        }
        Ok(state)
    }

    /// Counter cells holding nothing that a character can stand next to.
    pub fn reachable_empty_counters(&self, state: &WorldState) -> BTreeSet<Pos> {
        self.reachable_counters().into_iter().filter(|c| !state.counters.contains_key(c)).collect()
    }

    /// Advances the world by one step. Never fails: inapplicable actions are no-ops.
    pub fn step(&self, state: &WorldState, actions: [Action; 2]) -> StepResult {
        let mut next = state.clone();
        let mut events = Vec::new();
        let mut reward = 0.0;

        for pot in next.pots.values_mut() {
            if pot.cook_timer > 0 {
                pot.cook_timer -= 1;
            }
        }

        for (i, action) in actions.iter().enumerate() {
            if *action == Action::Interact {
                reward += self.interact(&mut next, i, &mut events);
            }
        }

        let old = [state.players[0].pos, state.players[1].pos];
        let mut proposed = old;
        for (i, action) in actions.iter().enumerate() {
            if let Some(dir) = action.direction() {
                next.players[i].orientation = dir;
                if let Some(target) = old[i].step(dir) {
                    if self.get(target) == Some(TileKind::Floor) {
                        proposed[i] = target;
                    }
                }
            }
        }
        let collide = proposed[0] == proposed[1];
        let swap = proposed[0] == old[1] && proposed[1] == old[0];
        if !(collide || swap) {
            next.players[0].pos = proposed[0];
            next.players[1].pos = proposed[1];
        }

        next.t += 1;
        StepResult { state: next, reward, events }
    }

    fn interact(&self, state: &mut WorldState, i: usize, events: &mut Vec<Event>) -> f64 {
        let Some(cell) = state.players[i].facing() else { return 0.0 };
        let Some(tile) = self.get(cell) else { return 0.0 };
        let held = state.players[i].held;
        match (tile, held) {
            (TileKind::OnionDispenser, None) => {
                state.players[i].held = Some(Item::Onion);
                events.push(Event::Dispensed { player: i, item: Item::Onion });
            }
            (TileKind::DishDispenser, None) => {
                state.players[i].held = Some(Item::Dish);
                events.push(Event::Dispensed { player: i, item: Item::Dish });
            }
            (TileKind::Counter, Some(item)) => {
                if let std::collections::btree_map::Entry::Vacant(slot) = state.counters.entry(cell) {
                    slot.insert(item);
                    state.players[i].held = None;
                    events.push(Event::Placed { player: i, cell, item });
                }
            }
            (TileKind::Counter, None) => {
                if let Some(item) = state.counters.remove(&cell) {
                    state.players[i].held = Some(item);
                    events.push(Event::PickedUp { player: i, cell, item });
                }
            }
            (TileKind::Pot, Some(Item::Onion)) => {
                let pot = state.pots.get_mut(&cell).expect("pot cells are tracked");
                if pot.onions < self.soup_size && !pot.is_cooking() {
                    pot.onions += 1;
                    state.players[i].held = None;
                    events.push(Event::PotLoaded { player: i, cell, onions: pot.onions });
                    if pot.onions == self.soup_size {
                        pot.cook_timer = self.cook_time;
                        events.push(Event::CookStarted { cell });
                    }
                }
            }
            (TileKind::Pot, Some(Item::Dish)) => {
                let pot = state.pots.get_mut(&cell).expect("pot cells are tracked");
                if pot.is_ready(self.soup_size) {
                    *pot = PotState::default();
                    state.players[i].held = Some(Item::Soup);
                    events.push(Event::SoupPickedUp { player: i, cell });
                }
            }
            (TileKind::ServingLocation, Some(Item::Soup)) => {
                state.players[i].held = None;
                events.push(Event::Delivered { player: i });
                return self.delivery_reward;
            }
            _ => {}
        }
        0.0
    }
}

fn apply_unit(
    layout: &Layout,
    state: &mut WorldState,
    unit: UnitPerturbation,
    reachable: &BTreeSet<Pos>,
) -> Result<(), PerturbationError> {
    match unit {
        UnitPerturbation::OnionOnCounter { cell } | UnitPerturbation::DishOnCounter { cell } => {
            if !reachable.contains(&cell) || state.counters.contains_key(&cell) {
                return Err(PerturbationError::NotReachableEmptyCounter(cell));
            }
            let item = if matches!(unit, UnitPerturbation::OnionOnCounter { .. }) { Item::Onion } else { Item::Dish };
            state.counters.insert(cell, item);
        }
        UnitPerturbation::OnionsInPot { cell, onions } => {
            if onions == 0 || onions > layout.soup_size {
                return Err(PerturbationError::OnionCount { cell, onions });
            }
            let pot = state.pots.get_mut(&cell).ok_or(PerturbationError::NotAPot(cell))?;
            if pot.onions != 0 {
                return Err(PerturbationError::PotNotEmpty(cell));
            }
            pot.onions = onions;
            // a full pot starts cooking the moment its last onion lands
            if onions == layout.soup_size {
                pot.cook_timer = layout.cook_time;
            }
        }
    }
    Ok(())
}
