//! Optimal adversary-aware policy iteration (OA-PI) on finite action-adversarial
//! MDPs, OA-TD3 and OA-PPO trainers for small continuous-control tasks, and a
//! bench of action attacks for measuring robustness.

pub mod error;
pub mod agents;
pub mod attack;
pub mod cli;
pub mod envs;
pub mod mdp;
pub mod nn;
pub mod oapi;

pub use error::{Error, Result};
