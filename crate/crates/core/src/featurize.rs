//! Lossless 26-channel observation encoding.
//!
//! Channel map (each channel is a `width x height` plane, row-major):
//!
//! | index  | meaning                                         | class |
//! |--------|-------------------------------------------------|-------|
//! | 0, 1   | character 1 / 2 position                        | agent |
//! | 2..6   | character 1 orientation (up, down, left, right) | agent |
//! | 6..10  | character 2 orientation                         | agent |
//! | 10..13 | character 1 held item (onion, dish, soup)       | agent |
//! | 13..16 | character 2 held item                           | agent |
//! | 16..21 | counter, pot, onion dispenser, dish dispenser, serving location masks | env |
//! | 21..24 | item on counter (onion, dish, soup)             | env   |
//! | 24     | pot onion count / soup size                     | env   |
//! | 25     | pot cook timer / cook time                      | env   |
//!
//! Orientation and held-item bits sit on the character's own cell. The
//! timestep is not observed.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gridworld::{
    Direction, Item, Layout, Perturbation, PerturbationError, PlayerState, PotState, Pos, TileKind, WorldState,
};

pub const NUM_CHANNELS: usize = 26;

pub const PLAYER_POS: usize = 0;
pub const ORIENTATION: usize = 2;
pub const HELD: usize = 10;
pub const STATIC_TILES: usize = 16;
pub const COUNTER_ITEM: usize = 21;
pub const POT_ONIONS: usize = 24;
pub const COOK_TIMER: usize = 25;

/// First environmental channel; everything below belongs to the agents.
pub const ENV_CHANNELS_START: usize = STATIC_TILES;

const STATIC_KINDS: [TileKind; 5] = [
    TileKind::Counter,
    TileKind::Pot,
    TileKind::OnionDispenser,
    TileKind::DishDispenser,
    TileKind::ServingLocation,
];

pub fn is_env_channel(channel: usize) -> bool {
    (ENV_CHANNELS_START..NUM_CHANNELS).contains(&channel)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObsTensor {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Channel-major: `data[c * width * height + y * width + x]`.
    pub data: Vec<f32>,
}

impl ObsTensor {
    pub fn zeros(width: usize, height: usize) -> ObsTensor {
        ObsTensor { channels: NUM_CHANNELS, width, height, data: vec![0.0; NUM_CHANNELS * width * height] }
    }

    pub fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn offset(&self, channel: usize, pos: Pos) -> usize {
        channel * self.plane() + pos.y * self.width + pos.x
    }

    pub fn get(&self, channel: usize, pos: Pos) -> f32 {
        self.data[self.offset(channel, pos)]
    }

    pub fn set(&mut self, channel: usize, pos: Pos, value: f32) {
        let i = self.offset(channel, pos);
        self.data[i] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat slice of the agent channels.
    pub fn agent_part(&self) -> &[f32] {
        &self.data[..ENV_CHANNELS_START * self.plane()]
    }

    /// Flat slice of the environmental channels.
    pub fn env_part(&self) -> &[f32] {
        &self.data[ENV_CHANNELS_START * self.plane()..]
    }

    /// Serialization for trajectory logs: `(C, w, h)` header as little-endian
    /// u32 followed by the channel-major f32 array.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        for d in [self.channels, self.width, self.height] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ObsTensor, DecodeError> {
        let word = |i: usize| -> Result<[u8; 4], DecodeError> {
            bytes.get(i * 4..i * 4 + 4).map(|b| b.try_into().unwrap()).ok_or(DecodeError::Truncated)
        };
        let channels = u32::from_le_bytes(word(0)?) as usize;
        let width = u32::from_le_bytes(word(1)?) as usize;
        let height = u32::from_le_bytes(word(2)?) as usize;
        let n = channels * width * height;
        if bytes.len() != 12 + 4 * n {
            return Err(DecodeError::Truncated);
        }
        let data = (0..n).map(|i| word(3 + i).map(f32::from_le_bytes)).collect::<Result<_, _>>()?;
        Ok(ObsTensor { channels, width, height, data })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("tensor shape {found:?} does not match layout {expected:?}")]
    Shape { found: (usize, usize, usize), expected: (usize, usize, usize) },
    #[error("channel {channel}: {reason}")]
    Inconsistent { channel: usize, reason: String },
    #[error("truncated tensor bytes")]
    Truncated,
}

fn inconsistent(channel: usize, reason: impl Into<String>) -> DecodeError {
    DecodeError::Inconsistent { channel, reason: reason.into() }
}

pub fn encode(layout: &Layout, state: &WorldState) -> ObsTensor {
    let mut obs = ObsTensor::zeros(layout.width, layout.height);
    encode_into(layout, state, &mut obs.data);
    obs
}

/// Writes the encoding into a zero-initialised or reused buffer.
pub fn encode_into(layout: &Layout, state: &WorldState, out: &mut [f32]) {
    let plane = layout.cell_count();
    assert_eq!(out.len(), NUM_CHANNELS * plane, "observation buffer has wrong length");
    out.fill(0.0);
    let at = |c: usize, p: Pos| c * plane + layout.index(p);

    for (i, player) in state.players.iter().enumerate() {
        out[at(PLAYER_POS + i, player.pos)] = 1.0;
        out[at(ORIENTATION + 4 * i + player.orientation.index(), player.pos)] = 1.0;
        if let Some(item) = player.held {
            out[at(HELD + 3 * i + item.index(), player.pos)] = 1.0;
        }
    }
    for pos in layout.cells() {
        if let Some(k) = STATIC_KINDS.iter().position(|&k| k == layout.tile(pos)) {
            out[at(STATIC_TILES + k, pos)] = 1.0;
        }
    }
    for (&pos, item) in &state.counters {
        out[at(COUNTER_ITEM + item.index(), pos)] = 1.0;
    }
    for (&pos, pot) in &state.pots {
        out[at(POT_ONIONS, pos)] = pot.onions as f32 / layout.soup_size as f32;
        out[at(COOK_TIMER, pos)] = pot.cook_timer as f32 / layout.cook_time as f32;
    }
}

fn binary(v: f32, channel: usize) -> Result<bool, DecodeError> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(inconsistent(channel, format!("non-binary value {v}")))
    }
}

fn scaled_count(v: f32, scale: u32, channel: usize) -> Result<u32, DecodeError> {
    let x = v as f64 * scale as f64;
    let r = x.round();
    if !(0.0..=scale as f64).contains(&r) || (x - r).abs() > 1e-3 {
        return Err(inconsistent(channel, format!("value {v} is not a multiple of 1/{scale}")));
    }
    Ok(r as u32)
}

/// Inverse of [`encode`]. The decoded state has `t = 0`.
pub fn decode(obs: &ObsTensor, layout: &Layout) -> Result<WorldState, DecodeError> {
    let expected = (NUM_CHANNELS, layout.width, layout.height);
    let found = (obs.channels, obs.width, obs.height);
    if found != expected || obs.data.len() != NUM_CHANNELS * layout.cell_count() {
        return Err(DecodeError::Shape { found, expected });
    }

    for (k, &kind) in STATIC_KINDS.iter().enumerate() {
        let c = STATIC_TILES + k;
        for pos in layout.cells() {
            if binary(obs.get(c, pos), c)? != (layout.tile(pos) == kind) {
                return Err(inconsistent(c, format!("static mask disagrees with layout at {pos}")));
            }
        }
    }

    let mut players = Vec::with_capacity(2);
    for i in 0..2 {
        let c = PLAYER_POS + i;
        let mut found = None;
        for pos in layout.cells() {
            if binary(obs.get(c, pos), c)? {
                if found.is_some() {
                    return Err(inconsistent(c, "more than one position bit"));
                }
                found = Some(pos);
            }
        }
        let pos = found.ok_or_else(|| inconsistent(c, "no position bit"))?;
        if layout.tile(pos) != TileKind::Floor {
            return Err(inconsistent(c, format!("character on non-floor cell {pos}")));
        }

        let mut orientation = None;
        for (d, dir) in Direction::ALL.iter().enumerate() {
            let c = ORIENTATION + 4 * i + d;
            for cell in layout.cells() {
                if binary(obs.get(c, cell), c)? {
                    if cell != pos || orientation.is_some() {
                        return Err(inconsistent(c, "stray orientation bit"));
                    }
                    orientation = Some(*dir);
                }
            }
        }
        let orientation = orientation.ok_or_else(|| inconsistent(ORIENTATION + 4 * i, "no orientation"))?;

        let mut held = None;
        for (k, item) in Item::ALL.iter().enumerate() {
            let c = HELD + 3 * i + k;
            for cell in layout.cells() {
                if binary(obs.get(c, cell), c)? {
                    if cell != pos || held.is_some() {
                        return Err(inconsistent(c, "stray held-item bit"));
                    }
                    held = Some(*item);
                }
            }
        }
        players.push(PlayerState { pos, orientation, held });
    }
    if players[0].pos == players[1].pos {
        return Err(inconsistent(PLAYER_POS, "characters share a cell"));
    }

    let mut counters = BTreeMap::new();
    for (k, item) in Item::ALL.iter().enumerate() {
        let c = COUNTER_ITEM + k;
        for pos in layout.cells() {
            if binary(obs.get(c, pos), c)? {
                if layout.tile(pos) != TileKind::Counter {
                    return Err(inconsistent(c, format!("item on non-counter cell {pos}")));
                }
                if counters.insert(pos, *item).is_some() {
                    return Err(inconsistent(c, format!("two items on counter {pos}")));
                }
            }
        }
    }

    let mut pots = BTreeMap::new();
    for pos in layout.cells() {
        let onions_v = obs.get(POT_ONIONS, pos);
        let timer_v = obs.get(COOK_TIMER, pos);
        if layout.tile(pos) != TileKind::Pot {
            if onions_v != 0.0 || timer_v != 0.0 {
                return Err(inconsistent(POT_ONIONS, format!("pot data on non-pot cell {pos}")));
            }
            continue;
        }
        let onions = scaled_count(onions_v, layout.soup_size as u32, POT_ONIONS)? as u8;
        let cook_timer = scaled_count(timer_v, layout.cook_time, COOK_TIMER)?;
        if cook_timer > 0 && onions != layout.soup_size {
            return Err(inconsistent(COOK_TIMER, format!("pot {pos} cooking without a full load")));
        }
        pots.insert(pos, PotState { onions, cook_timer });
    }

    let players: [PlayerState; 2] = players.try_into().expect("two players");
    Ok(WorldState { players, counters, pots, t: 0 })
}

/// Sparse observation-space change caused by a perturbation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvDelta {
    pub entries: Vec<DeltaEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaEntry {
    pub channel: usize,
    pub cell: Pos,
    pub change: f32,
}

impl EnvDelta {
    /// Dense form over the full observation, for adding onto a tensor.
    pub fn to_dense(&self, layout: &Layout) -> Vec<f32> {
        let mut out = vec![0.0; NUM_CHANNELS * layout.cell_count()];
        self.add_to(layout, &mut out);
        out
    }

    pub fn add_to(&self, layout: &Layout, obs: &mut [f32]) {
        let plane = layout.cell_count();
        for e in &self.entries {
            obs[e.channel * plane + layout.index(e.cell)] += e.change;
        }
    }

    /// Flat indices and changes, for dot products against gradients.
    pub fn flat(&self, layout: &Layout) -> Vec<(usize, f32)> {
        let plane = layout.cell_count();
        self.entries.iter().map(|e| (e.channel * plane + layout.index(e.cell), e.change)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `encode(reset(P)) - encode(reset(None))`, built unit by unit.
pub fn env_delta(layout: &Layout, perturbation: &Perturbation) -> Result<EnvDelta, PerturbationError> {
    use crate::gridworld::UnitPerturbation as U;
    layout.reset(Some(perturbation))?;
    let mut entries = Vec::new();
    for unit in perturbation.units() {
        match *unit {
            U::OnionOnCounter { cell } => {
                entries.push(DeltaEntry { channel: COUNTER_ITEM + Item::Onion.index(), cell, change: 1.0 })
            }
            U::DishOnCounter { cell } => {
                entries.push(DeltaEntry { channel: COUNTER_ITEM + Item::Dish.index(), cell, change: 1.0 })
            }
            U::OnionsInPot { cell, onions } => {
                entries.push(DeltaEntry {
                    channel: POT_ONIONS,
                    cell,
                    change: onions as f32 / layout.soup_size as f32,
                });
                if onions == layout.soup_size {
                    entries.push(DeltaEntry { channel: COOK_TIMER, cell, change: 1.0 });
                }
            }
        }
    }
    Ok(EnvDelta { entries })
}
