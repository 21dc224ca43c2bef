use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Item, Layout, Pos, PotState, WorldState};

/// One atomic edit of the standard initial environmental state.
///
/// Variant order doubles as the tie-breaking ordinal used when ranking
/// attacks: category first, then row-major cell, then onion count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitPerturbation {
    OnionOnCounter { cell: Pos },
    DishOnCounter { cell: Pos },
    OnionsInPot { cell: Pos, onions: u8 },
}

impl UnitPerturbation {
    pub fn target(&self) -> Pos {
        match *self {
            UnitPerturbation::OnionOnCounter { cell }
            | UnitPerturbation::DishOnCounter { cell }
            | UnitPerturbation::OnionsInPot { cell, .. } => cell,
        }
    }
}

impl fmt::Display for UnitPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitPerturbation::OnionOnCounter { cell } => write!(f, "onion@{cell}"),
            UnitPerturbation::DishOnCounter { cell } => write!(f, "dish@{cell}"),
            UnitPerturbation::OnionsInPot { cell, onions } => write!(f, "pot@{cell}x{onions}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbationError {
    #[error("two units target the same cell {0}")]
    DuplicateTarget(Pos),
    #[error("{0} is not a reachable empty counter")]
    NotReachableEmptyCounter(Pos),
    #[error("{0} is not a pot")]
    NotAPot(Pos),
    #[error("pot {0} is not empty")]
    PotNotEmpty(Pos),
    #[error("invalid onion count {onions} for pot {cell}")]
    OnionCount { cell: Pos, onions: u8 },
}

/// A set of unit perturbations with pairwise distinct target cells, kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<UnitPerturbation>", into = "Vec<UnitPerturbation>")]
pub struct Perturbation {
    units: Vec<UnitPerturbation>,
}

impl Perturbation {
    pub fn new(mut units: Vec<UnitPerturbation>) -> Result<Perturbation, PerturbationError> {
        units.sort();
        let mut cells = BTreeSet::new();
        for u in &units {
            if !cells.insert(u.target()) {
                return Err(PerturbationError::DuplicateTarget(u.target()));
            }
        }
        Ok(Perturbation { units })
    }

    pub fn empty() -> Perturbation {
        Perturbation::default()
    }

    pub fn units(&self) -> &[UnitPerturbation] {
        &self.units
    }

    /// Semantic distance from the standard initial state.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

impl TryFrom<Vec<UnitPerturbation>> for Perturbation {
    type Error = PerturbationError;

    fn try_from(units: Vec<UnitPerturbation>) -> Result<Self, Self::Error> {
        Perturbation::new(units)
    }
}

impl From<Perturbation> for Vec<UnitPerturbation> {
    fn from(p: Perturbation) -> Self {
        p.units
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.units.is_empty() {
            return write!(f, "standard");
        }
        let parts: Vec<String> = self.units.iter().map(|u| u.to_string()).collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Every feasible unit perturbation of the standard initial state, in ordinal order.
pub fn enumerate_unit_perturbations(layout: &Layout) -> Vec<UnitPerturbation> {
    let standard = layout.standard_state();
    let counters = layout.reachable_empty_counters(&standard);
    let mut units: Vec<UnitPerturbation> = Vec::new();
    units.extend(counters.iter().map(|&cell| UnitPerturbation::OnionOnCounter { cell }));
    units.extend(counters.iter().map(|&cell| UnitPerturbation::DishOnCounter { cell }));
    for (&cell, pot) in &standard.pots {
        if pot.onions == 0 {
            units.extend((1..=layout.soup_size).map(|onions| UnitPerturbation::OnionsInPot { cell, onions }));
        }
    }
    units.sort();
    units
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DistanceError {
    #[error("agent states differ; perturbations only touch the environment")]
    AgentStateDiffers,
    #[error("pot sets differ between states")]
    PotSetMismatch,
    #[error("cell {cell} cannot be reached by unit perturbations: {reason}")]
    Unreachable { cell: Pos, reason: &'static str },
}

/// Recovers the units mapping `base` onto `target`.
pub fn perturbation_between(
    layout: &Layout,
    base: &WorldState,
    target: &WorldState,
) -> Result<Perturbation, DistanceError> {
    if base.players != target.players {
        return Err(DistanceError::AgentStateDiffers);
    }
    if !base.pots.keys().eq(target.pots.keys()) {
        return Err(DistanceError::PotSetMismatch);
    }
    let reachable = layout.reachable_counters();
    let mut units = Vec::new();

    let cells: BTreeSet<Pos> = base.counters.keys().chain(target.counters.keys()).copied().collect();
    for cell in cells {
        match (base.counters.get(&cell), target.counters.get(&cell)) {
            (a, b) if a == b => {}
            (None, Some(item)) => {
                if !reachable.contains(&cell) {
                    return Err(DistanceError::Unreachable { cell, reason: "counter is not reachable" });
                }
                units.push(match item {
                    Item::Onion => UnitPerturbation::OnionOnCounter { cell },
                    Item::Dish => UnitPerturbation::DishOnCounter { cell },
                    Item::Soup => return Err(DistanceError::Unreachable { cell, reason: "soup cannot be placed" }),
                });
            }
            _ => return Err(DistanceError::Unreachable { cell, reason: "items cannot be removed or moved" }),
        }
    }

    for (&cell, before) in &base.pots {
        let after = target.pots[&cell];
        if *before == after {
            continue;
        }
        if *before != PotState::default() {
            return Err(DistanceError::Unreachable { cell, reason: "pot was not empty" });
        }
        let expected_timer = if after.onions == layout.soup_size { layout.cook_time } else { 0 };
        if after.onions == 0 || after.onions > layout.soup_size || after.cook_timer != expected_timer {
            return Err(DistanceError::Unreachable { cell, reason: "pot contents are not an initial fill" });
        }
        units.push(UnitPerturbation::OnionsInPot { cell, onions: after.onions });
    }

    Ok(Perturbation::new(units).expect("cells are distinct by construction"))
}

/// Minimal number of unit perturbations turning `standard` into `perturbed`.
///
/// Units are independent and each touches one cell, so the minimum is the
/// number of differing counter cells plus the number of differing pots.
pub fn perturbation_distance(
    layout: &Layout,
    standard: &WorldState,
    perturbed: &WorldState,
) -> Result<usize, DistanceError> {
    perturbation_between(layout, standard, perturbed).map(|p| p.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::builtin_layout;
    use std::collections::{HashMap, VecDeque};

    fn all_triples(layout: &Layout) -> Vec<UnitPerturbation> {
        let mut out = Vec::new();
        for cell in layout.cells() {
            out.push(UnitPerturbation::OnionOnCounter { cell });
            out.push(UnitPerturbation::DishOnCounter { cell });
            for n in 0..=layout.soup_size + 1 {
                out.push(UnitPerturbation::OnionsInPot { cell, onions: n });
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_exhaustive_filter() {
        for name in crate::gridworld::builtin_layout_names() {
            let l = builtin_layout(name).unwrap();
            let mut expected: Vec<_> = all_triples(&l)
                .into_iter()
                .filter(|u| l.reset(Some(&Perturbation::new(vec![*u]).unwrap())).is_ok())
                .collect();
            expected.sort();
            let units = enumerate_unit_perturbations(&l);
            assert_eq!(units, expected, "{name}");
            let m = l.reachable_empty_counters(&l.standard_state()).len();
            let q = l.cells_of(crate::gridworld::TileKind::Pot).count();
            assert_eq!(units.len(), 2 * m + 3 * q);
        }
    }

    #[test]
    fn duplicate_target_rejected() {
        let c = Pos::new(2, 2);
        let err = Perturbation::new(vec![
            UnitPerturbation::OnionOnCounter { cell: c },
            UnitPerturbation::DishOnCounter { cell: c },
        ])
        .unwrap_err();
        assert_eq!(err, PerturbationError::DuplicateTarget(c));
    }

    #[test]
    fn distance_basics() {
        let l = builtin_layout("coordination_ring").unwrap();
        let s = l.reset(None).unwrap();
        assert_eq!(perturbation_distance(&l, &s, &s), Ok(0));
        let one = Perturbation::new(vec![UnitPerturbation::OnionOnCounter { cell: Pos::new(2, 2) }]).unwrap();
        let s1 = l.reset(Some(&one)).unwrap();
        assert_eq!(perturbation_distance(&l, &s, &s1), Ok(1));

        let mut moved = s.clone();
        moved.players[0].pos = Pos::new(2, 1);
        assert_eq!(perturbation_distance(&l, &s, &moved), Err(DistanceError::AgentStateDiffers));
        let mut soup = s.clone();
        soup.counters.insert(Pos::new(2, 2), Item::Soup);
        assert!(matches!(perturbation_distance(&l, &s, &soup), Err(DistanceError::Unreachable { .. })));
        let mut cooking = s.clone();
        cooking.pots.insert(Pos::new(2, 0), PotState { onions: 3, cook_timer: 7 });
        assert!(matches!(perturbation_distance(&l, &s, &cooking), Err(DistanceError::Unreachable { .. })));
    }

    /// Shortest path over unit compositions, independent of the counting rule.
    fn bfs_distances(layout: &Layout, depth: usize) -> HashMap<WorldState, usize> {
        let start = layout.standard_state();
        let mut dist = HashMap::from([(start.clone(), 0usize)]);
        let mut queue = VecDeque::from([start]);
        let candidates = all_triples(layout);
        while let Some(state) = queue.pop_front() {
            let d = dist[&state];
            if d == depth {
                continue;
            }
            let reachable = layout.reachable_counters();
            for unit in &candidates {
                let mut next = state.clone();
                let ok = match *unit {
                    UnitPerturbation::OnionOnCounter { cell } | UnitPerturbation::DishOnCounter { cell } => {
                        if reachable.contains(&cell) && !next.counters.contains_key(&cell) {
                            let item = if matches!(unit, UnitPerturbation::OnionOnCounter { .. }) {
                                Item::Onion
                            } else {
                                Item::Dish
                            };
                            next.counters.insert(cell, item);
                            true
                        } else {
                            false
                        }
                    }
                    UnitPerturbation::OnionsInPot { cell, onions } => match next.pots.get_mut(&cell) {
                        Some(pot) if pot.onions == 0 && onions >= 1 && onions <= layout.soup_size => {
                            pot.onions = onions;
                            if onions == layout.soup_size {
                                pot.cook_timer = layout.cook_time;
                            }
                            true
                        }
                        _ => false,
                    },
                };
                if ok && !dist.contains_key(&next) {
                    dist.insert(next.clone(), d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    #[test]
    fn distance_matches_bfs_on_ring() {
        let l = builtin_layout("coordination_ring").unwrap();
        let standard = l.standard_state();
        let dist = bfs_distances(&l, 2);
        for (state, d) in &dist {
            assert_eq!(perturbation_distance(&l, &standard, state), Ok(*d));
        }
    }
}
