//! Deterministic, replayable harness for repeated trust-game experiments.

pub mod agents;
pub mod analysis;
pub mod game;
pub mod gateway;
pub mod llm_sender;
pub mod money;
pub mod observation;
pub mod prompting;
pub mod runner;

pub use money::Cents;
