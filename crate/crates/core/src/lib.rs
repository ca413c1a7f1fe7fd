pub mod analysis;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod game;
pub mod mcts;
pub mod neural;
pub mod oracle;
pub mod par;
pub mod report;
pub mod training;

pub use error::{Error, Result};
