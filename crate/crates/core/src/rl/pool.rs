use std::fmt;
use std::path::Path;

use rand::Rng;

use super::RlError;
use crate::nn::{load_checkpoint, save_checkpoint, PolicyParams};

pub const POOL_PARTNERS: usize = 4;
pub const POOL_LEVELS: usize = 3;

/// Ability level of a pool checkpoint, by position in its training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Early,
    Mid,
    Final,
}

impl Level {
    pub const ALL: [Level; POOL_LEVELS] = [Level::Early, Level::Mid, Level::Final];

    fn tag(self) -> &'static str {
        match self {
            Level::Early => "early",
            Level::Mid => "mid",
            Level::Final => "final",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub partner: usize,
    pub level: Level,
    pub params: PolicyParams<f32>,
}

/// Frozen partners for fictitious co-play: 4 training runs × 3 levels.
#[derive(Clone, Debug, PartialEq)]
pub struct PartnerPool {
    entries: Vec<PoolEntry>,
}

impl PartnerPool {
    pub fn new(mut entries: Vec<PoolEntry>) -> Result<PartnerPool, RlError> {
        if entries.len() != POOL_PARTNERS * POOL_LEVELS {
            return Err(RlError::Pool(format!("expected {} entries, got {}", POOL_PARTNERS * POOL_LEVELS, entries.len())));
        }
        entries.sort_by_key(|e| (e.partner, e.level));
        for (i, e) in entries.iter().enumerate() {
            if e.partner != i / POOL_LEVELS || e.level != Level::ALL[i % POOL_LEVELS] {
                return Err(RlError::Pool(format!("missing or duplicate entry near partner {} {}", e.partner, e.level)));
            }
            if e.params.arch() != entries[0].params.arch() {
                return Err(RlError::Pool("partners have different architectures".into()));
            }
        }
        Ok(PartnerPool { entries })
    }

    /// Early, mid and final checkpoints from each of four training histories
    /// (each ordered by step count, final last).
    pub fn from_histories(histories: &[Vec<PolicyParams<f32>>]) -> Result<PartnerPool, RlError> {
        if histories.len() != POOL_PARTNERS {
            return Err(RlError::Pool(format!("expected {POOL_PARTNERS} partner histories, got {}", histories.len())));
        }
        let mut entries = Vec::new();
        for (partner, h) in histories.iter().enumerate() {
            if h.len() < POOL_LEVELS {
                return Err(RlError::Pool(format!("partner {partner} has only {} checkpoints", h.len())));
            }
            let last = h.len() - 1;
            for (level, idx) in Level::ALL.into_iter().zip([last / 3, 2 * last / 3, last]) {
                entries.push(PoolEntry { partner, level, params: h[idx].clone() });
            }
        }
        PartnerPool::new(entries)
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniform draw over entries.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.entries.len())
    }

    fn file_name(partner: usize, level: Level) -> String {
        format!("partner{partner}_{level}.ckpt")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RlError> {
        for e in &self.entries {
            save_checkpoint(&e.params, dir.as_ref().join(Self::file_name(e.partner, e.level)))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<PartnerPool, RlError> {
        let mut entries = Vec::new();
        for partner in 0..POOL_PARTNERS {
            for level in Level::ALL {
                let params = load_checkpoint(dir.as_ref().join(Self::file_name(partner, level)))?;
                entries.push(PoolEntry { partner, level, params });
            }
        }
        PartnerPool::new(entries)
    }
}
