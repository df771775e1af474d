//! Discrete-event simulation of a permissionless blockchain network whose
//! nodes keep abandoned fork branches, turn the transactions found on them
//! into attack sequences, share those sequences with their peers and use
//! them to filter incoming blocks.

pub mod chain;
pub mod encoding;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod threat;
