//! Online learning in unknown episodic two-player zero-sum Markov games.

pub mod error;
pub mod game;
pub mod hard;
pub mod harness;
pub mod learner;
pub mod matrix;
pub mod opponents;
pub mod oracle;
pub mod qol;
pub mod vol;
