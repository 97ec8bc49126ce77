//! Two-stage retrieval and attention model for click-through-rate
//! prediction over very long user behavior histories.

pub mod behavior_store;
pub mod cli;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod esu;
pub mod eval;
pub mod gsu;
pub mod model;
pub mod nn;
pub mod serving;
pub mod trainer;

pub use error::{Result, SimError};
