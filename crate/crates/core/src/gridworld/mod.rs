//! Deterministic two-character cooking gridworld.
//!
//! The world is split into an agent part (both characters' poses and held
//! items) and an environmental part (counter contents and pots). Only the
//! environmental part of the initial state is ever perturbed.

mod dynamics;
mod layout;
mod perturb;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use dynamics::{Event, StepResult};
pub use layout::{builtin_layout, builtin_layout_names, Layout, LayoutError, TileKind};
pub use perturb::{
    enumerate_unit_perturbations, perturbation_distance, DistanceError, Perturbation,
    PerturbationError, UnitPerturbation,
};

/// Grid cell. Ordering is row-major (row first, then column).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Ord for Pos {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Pos {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Pos { x, y }
    }

    /// Neighbour in `dir`, or `None` when it would leave the non-negative quadrant.
    pub fn step(self, dir: Direction) -> Option<Pos> {
        let (dx, dy) = dir.delta();
        let x = self.x.checked_add_signed(dx)?;
        let y = self.y.checked_add_signed(dy)?;
        Some(Pos::new(x, y))
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    Onion,
    Dish,
    /// A dish holding finished soup.
    Soup,
}

impl Item {
    pub const ALL: [Item; 3] = [Item::Onion, Item::Dish, Item::Soup];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-character action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Wait,
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    Interact,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; Action::COUNT] = [
        Action::Wait,
        Action::MoveUp,
        Action::MoveDown,
        Action::MoveLeft,
        Action::MoveRight,
        Action::Interact,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::MoveUp => Some(Direction::Up),
            Action::MoveDown => Some(Direction::Down),
            Action::MoveLeft => Some(Direction::Left),
            Action::MoveRight => Some(Direction::Right),
            Action::Wait | Action::Interact => None,
        }
    }
}

/// Number of joint actions when one policy drives both characters.
pub const JOINT_ACTIONS: usize = Action::COUNT * Action::COUNT;

/// Joint action index: character 1 is the major index.
pub fn joint_index(actions: [Action; 2]) -> usize {
    actions[0].index() * Action::COUNT + actions[1].index()
}

pub fn split_joint(index: usize) -> [Action; 2] {
    assert!(index < JOINT_ACTIONS, "joint action index {index} out of range");
    [Action::ALL[index / Action::COUNT], Action::ALL[index % Action::COUNT]]
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PlayerState {
    pub pos: Pos,
    pub orientation: Direction,
    pub held: Option<Item>,
}

impl PlayerState {
    pub fn facing(&self) -> Option<Pos> {
        self.pos.step(self.orientation)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PotState {
    pub onions: u8,
    /// Steps left until the soup is done; 0 means ready (when full) or not started.
    pub cook_timer: u32,
}

impl PotState {
    pub fn is_ready(&self, soup_size: u8) -> bool {
        self.onions == soup_size && self.cook_timer == 0
    }

    pub fn is_cooking(&self) -> bool {
        self.cook_timer > 0
    }
}

/// Full dynamic state. `counters` only stores occupied counter cells.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub players: [PlayerState; 2],
    pub counters: std::collections::BTreeMap<Pos, Item>,
    pub pots: std::collections::BTreeMap<Pos, PotState>,
    pub t: u32,
}

impl WorldState {
    /// Same state with the timestep cleared. Observations carry no clock.
    pub fn without_clock(&self) -> WorldState {
        WorldState { t: 0, ..self.clone() }
    }
}
