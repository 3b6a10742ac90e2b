//! Verification of parameterized networks whose topologies are generated by
//! hyperedge-replacement grammars.

pub mod behaviors;
pub mod counting;
pub mod export;
pub mod grammar;
pub mod oracle;
pub mod pebble;
pub mod petri;
pub mod systems;
