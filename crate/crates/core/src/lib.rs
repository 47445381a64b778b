//! In-situ coupling framework: an in-memory tensor store with a binary wire
//! protocol, a blocking client library, reference model executors, producer
//! and consumer reproducers, a local deployment orchestrator and a benchmark
//! harness for co-located and clustered topologies.

pub mod exec;
pub mod prng;
pub mod store;
pub mod wire;
pub mod client;
pub mod timing;
pub mod repro;
pub mod orchestrator;
pub mod bench;
