//! Core of the conversational-recommendation simulation harness.

pub mod agents;
pub mod corpus;
pub mod engine;
pub mod io;
pub mod metrics;
pub mod parallel;
pub mod persona;
pub mod prompt;
pub mod protocol;
pub mod record;
pub mod text;
