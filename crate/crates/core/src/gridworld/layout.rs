use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::{Direction, Pos};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TileKind {
    Floor,
    Counter,
    Pot,
    OnionDispenser,
    DishDispenser,
    ServingLocation,
}

impl TileKind {
    fn from_char(c: char) -> Option<TileKind> {
        Some(match c {
            ' ' | '1' | '2' => TileKind::Floor,
            'X' => TileKind::Counter,
            'P' => TileKind::Pot,
            'O' => TileKind::OnionDispenser,
            'D' => TileKind::DishDispenser,
            'S' => TileKind::ServingLocation,
            _ => return None,
        })
    }

    fn to_char(self) -> char {
        match self {
            TileKind::Floor => ' ',
            TileKind::Counter => 'X',
            TileKind::Pot => 'P',
            TileKind::OnionDispenser => 'O',
            TileKind::DishDispenser => 'D',
            TileKind::ServingLocation => 'S',
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("empty layout")]
    Empty,
    #[error("malformed grid: row {row} has width {found}, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("malformed grid: unknown tile character {ch:?} at {pos}")]
    UnknownTile { ch: char, pos: Pos },
    #[error("malformed header line {line:?}")]
    BadHeader { line: String },
    #[error("unknown header key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("missing {0}")]
    MissingTile(&'static str),
    #[error("expected 2 starts, found {0}")]
    StartCount(usize),
    #[error("border cell {0} is floor; the grid must be enclosed")]
    OpenBorder(Pos),
    #[error("cannot read layout file: {0}")]
    Io(String),
}

/// Static grid description plus per-layout dynamics constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    tiles: Vec<TileKind>,
    pub starts: [Pos; 2],
    pub cook_time: u32,
    pub delivery_reward: f64,
    pub soup_size: u8,
}

const DEFAULT_COOK_TIME: u32 = 20;
const DEFAULT_DELIVERY_REWARD: f64 = 20.0;
const DEFAULT_SOUP_SIZE: u8 = 3;

impl Layout {
    /// Parses the layout text format: optional `key = value` header lines,
    /// followed by a rectangular grid.
    pub fn parse(text: &str) -> Result<Layout, LayoutError> {
        let mut name = String::from("unnamed");
        let mut cook_time = DEFAULT_COOK_TIME;
        let mut delivery_reward = DEFAULT_DELIVERY_REWARD;
        let mut soup_size = DEFAULT_SOUP_SIZE;

        let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).peekable();
        while let Some(line) = lines.peek() {
            if line.trim().is_empty() {
                lines.next();
                continue;
            }
            if !line.contains('=') {
                break;
            }
            let line = lines.next().unwrap();
            let (key, value) = line.split_once('=').ok_or_else(|| LayoutError::BadHeader { line: line.into() })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || LayoutError::BadValue { key: key.into(), value: value.into() };
            match key {
                "name" => {
                    if value.is_empty() {
                        return Err(bad());
                    }
                    name = value.to_string();
                }
                "cook_time" => {
                    cook_time = value.parse().map_err(|_| bad())?;
                    if cook_time == 0 {
                        return Err(bad());
                    }
                }
                "delivery_reward" => {
                    delivery_reward = value.parse().map_err(|_| bad())?;
                    if !delivery_reward.is_finite() {
                        return Err(bad());
                    }
                }
                "soup_size" => {
                    soup_size = value.parse().map_err(|_| bad())?;
                    if soup_size == 0 {
                        return Err(bad());
                    }
                }
                _ => return Err(LayoutError::UnknownKey(key.into())),
            }
        }

        let rows: Vec<&str> = lines.collect();
        let rows: Vec<&str> = {
            // trailing blank lines are tolerated
            let end = rows.iter().rposition(|r| !r.is_empty()).map_or(0, |i| i + 1);
            rows[..end].to_vec()
        };
        if rows.is_empty() {
            return Err(LayoutError::Empty);
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut tiles = Vec::with_capacity(width * height);
        let mut starts: Vec<(char, Pos)> = Vec::new();
        for (y, row) in rows.iter().enumerate() {
            let found = row.chars().count();
            if found != width {
                return Err(LayoutError::Ragged { row: y, found, expected: width });
            }
            for (x, ch) in row.chars().enumerate() {
                let pos = Pos::new(x, y);
                let tile = TileKind::from_char(ch).ok_or(LayoutError::UnknownTile { ch, pos })?;
                if ch == '1' || ch == '2' {
                    starts.push((ch, pos));
                }
                tiles.push(tile);
            }
        }
        if width == 0 {
            return Err(LayoutError::Empty);
        }

        if starts.len() != 2 {
            return Err(LayoutError::StartCount(starts.len()));
        }
        let first = starts.iter().find(|(c, _)| *c == '1');
        let second = starts.iter().find(|(c, _)| *c == '2');
        let (Some(first), Some(second)) = (first, second) else {
            // e.g. two '1' markers
            return Err(LayoutError::StartCount(starts.iter().filter(|(c, _)| *c == '1').count().max(1)));
        };

        let layout = Layout {
            name,
            width,
            height,
            tiles,
            starts: [first.1, second.1],
            cook_time,
            delivery_reward,
            soup_size,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Layout, LayoutError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LayoutError::Io(format!("{}: {e}", path.display())))?;
        let mut layout = Layout::parse(&text)?;
        if layout.name == "unnamed" {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                layout.name = stem.to_string();
            }
        }
        Ok(layout)
    }

    /// Resolves a builtin layout name or, failing that, a file path.
    pub fn load(name_or_path: &str) -> Result<Layout, LayoutError> {
        match builtin_layout(name_or_path) {
            Some(layout) => Ok(layout),
            None => Layout::from_file(name_or_path),
        }
    }

    fn validate(&self) -> Result<(), LayoutError> {
        for y in 0..self.height {
            for x in 0..self.width {
                let on_border = x == 0 || y == 0 || x + 1 == self.width || y + 1 == self.height;
                let pos = Pos::new(x, y);
                if on_border && self.tile(pos) == TileKind::Floor {
                    return Err(LayoutError::OpenBorder(pos));
                }
            }
        }
        for (kind, label) in [
            (TileKind::Pot, "pot"),
            (TileKind::OnionDispenser, "onion dispenser"),
            (TileKind::DishDispenser, "dish dispenser"),
            (TileKind::ServingLocation, "serving location"),
        ] {
            if self.cells_of(kind).next().is_none() {
                return Err(LayoutError::MissingTile(label));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    /// Row-major ordinal of a cell.
    pub fn index(&self, pos: Pos) -> usize {
        pos.y * self.width + pos.x
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        Pos::new(index % self.width, index / self.width)
    }

    pub fn in_bounds(&self, pos: Pos) -> bool {
        pos.x < self.width && pos.y < self.height
    }

    pub fn tile(&self, pos: Pos) -> TileKind {
        self.tiles[self.index(pos)]
    }

    /// Tile at `pos`, or `None` outside the grid.
    pub fn get(&self, pos: Pos) -> Option<TileKind> {
        self.in_bounds(pos).then(|| self.tile(pos))
    }

    pub fn cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.cell_count()).map(|i| self.pos_of(i))
    }

    pub fn cells_of(&self, kind: TileKind) -> impl Iterator<Item = Pos> + '_ {
        self.cells().filter(move |&p| self.tile(p) == kind)
    }

    pub fn neighbors(&self, pos: Pos) -> impl Iterator<Item = Pos> + '_ {
        Direction::ALL.into_iter().filter_map(move |d| pos.step(d)).filter(|&p| self.in_bounds(p))
    }

    /// Floor cells connected to either start cell.
    pub fn reachable_floor(&self) -> BTreeSet<Pos> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<Pos> = self.starts.iter().copied().collect();
        seen.extend(self.starts);
        while let Some(p) = queue.pop_front() {
            for n in self.neighbors(p) {
                if self.tile(n) == TileKind::Floor && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    /// Counter cells adjacent to reachable floor, regardless of contents.
    pub fn reachable_counters(&self) -> BTreeSet<Pos> {
        let floor = self.reachable_floor();
        self.cells_of(TileKind::Counter)
            .filter(|&c| self.neighbors(c).any(|n| floor.contains(&n)))
            .collect()
    }

    /// Renders the layout back into its file format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "name = {}\ncook_time = {}\ndelivery_reward = {}\nsoup_size = {}\n",
            self.name, self.cook_time, self.delivery_reward, self.soup_size
        );
        for y in 0..self.height {
            for x in 0..self.width {
                let pos = Pos::new(x, y);
                let ch = if pos == self.starts[0] {
                    '1'
                } else if pos == self.starts[1] {
                    '2'
                } else {
                    self.tile(pos).to_char()
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}x{})", self.name, self.width, self.height)
    }
}

const BUILTIN: [(&str, &str); 6] = [
    ("coordination_ring", include_str!("../../layouts/coordination_ring.layout")),
    ("cross", include_str!("../../layouts/cross.layout")),
    ("double_rings", include_str!("../../layouts/double_rings.layout")),
    ("double_counters", include_str!("../../layouts/double_counters.layout")),
    ("matrix", include_str!("../../layouts/matrix.layout")),
    ("clear_division", include_str!("../../layouts/clear_division.layout")),
];

pub fn builtin_layout_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin_layout(name: &str) -> Option<Layout> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Layout::parse(text).expect("builtin layouts are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "XPXXX\nO1 2X\nXDXSX\nXXXXX\n";

    #[test]
    fn parses_small_grid() {
        let l = Layout::parse("XXPXX\nO1 2X\nXD SX\nXXXXX").unwrap();
        assert_eq!((l.width, l.height), (5, 4));
        assert_eq!(l.starts, [Pos::new(1, 1), Pos::new(3, 1)]);
        assert_eq!(l.tile(Pos::new(2, 0)), TileKind::Pot);
        assert_eq!(l.cook_time, 20);
        let l = Layout::parse(SMALL).unwrap();
        assert_eq!(l.width, 5);
    }

    #[test]
    fn header_overrides_constants() {
        let l = Layout::parse("name = tiny\ncook_time = 5\ndelivery_reward = 7.5\nsoup_size = 2\nXXPXX\nO1 2X\nXD SX\nXXXXX").unwrap();
        assert_eq!(l.name, "tiny");
        assert_eq!(l.cook_time, 5);
        assert_eq!(l.delivery_reward, 7.5);
        assert_eq!(l.soup_size, 2);
    }

    #[test]
    fn missing_pot_is_rejected() {
        let err = Layout::parse("XXXXX\nO1 2X\nXD SX\nXXXXX").unwrap_err();
        assert_eq!(err, LayoutError::MissingTile("pot"));
        assert_eq!(err.to_string(), "missing pot");
    }

    #[test]
    fn start_count_checked() {
        let err = Layout::parse("XXPXXX\nO1 22X\nXD S X\nXXXXXX").unwrap_err();
        assert_eq!(err.to_string(), "expected 2 starts, found 3");
        assert!(matches!(Layout::parse("XXPXX\nO1  X\nXD SX\nXXXXX"), Err(LayoutError::StartCount(1))));
        assert!(matches!(Layout::parse("XXPXX\nO1 1X\nXD SX\nXXXXX"), Err(LayoutError::StartCount(_))));
    }

    #[test]
    fn malformed_grids() {
        assert!(matches!(Layout::parse("XXPXX\nO1 2\nXD SX\nXXXXX"), Err(LayoutError::Ragged { row: 1, .. })));
        assert!(matches!(Layout::parse("XXPXX\nO1 2Q\nXD SX\nXXXXX"), Err(LayoutError::UnknownTile { ch: 'Q', .. })));
        assert!(matches!(Layout::parse("XXPXX\n 1 2X\nXD SO\nXXXXX"), Err(LayoutError::OpenBorder(_))));
        assert!(matches!(Layout::parse("cook_time = 0\nXXPXX\nO1 2X\nXD SX\nXXXXX"), Err(LayoutError::BadValue { .. })));
        assert!(matches!(Layout::parse("speed = 3\nXXPXX"), Err(LayoutError::UnknownKey(_))));
        assert_eq!(Layout::parse(""), Err(LayoutError::Empty));
    }

    #[test]
    fn builtins_parse_and_round_trip() {
        for name in builtin_layout_names() {
            let l = builtin_layout(name).unwrap();
            assert_eq!(l.name, name);
            assert_eq!(Layout::parse(&l.to_text()).unwrap(), l);
        }
        assert_eq!(builtin_layout_names().count(), 6);
    }

    #[test]
    fn enclosed_counters_are_unreachable() {
        let l = builtin_layout("coordination_ring").unwrap();
        let reach = l.reachable_counters();
        assert!(!reach.contains(&Pos::new(0, 0)));
        assert!(reach.contains(&Pos::new(2, 2)));
        assert!(reach.contains(&Pos::new(1, 0)));
    }
}
