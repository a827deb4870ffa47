//! Factored action representations for asynchronous actor-critic and n-step
//! Q-learning agents.
//!
//! A composite action is one value per factor (horizontal move, vertical
//! move, fire). Factored agents keep one output head per factor and fuse the
//! heads with a [`CombinationRule`](factored_actions::CombinationRule);
//! baselines keep one head over all composite actions.

pub mod algorithms;
pub mod analysis;
pub mod approximators;
pub mod environments;
pub mod error;
pub mod factored_actions;
pub mod harness;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
