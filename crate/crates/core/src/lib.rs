//! Environmental-state robustness workbench for embodied DRL agents.
//!
//! Agents are trained with PPO in a two-character cooking gridworld,
//! attacked by perturbing the initial environmental state within a semantic
//! budget, and hardened with a distill-then-fine-tune defense.

pub mod gridworld;
pub mod featurize;
pub mod nn;
pub mod rl;
pub mod attack;
pub mod defense;
pub mod harness;
