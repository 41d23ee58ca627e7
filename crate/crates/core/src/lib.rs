//! Model-driven detection of cryptographic API misuse, with the benchmark
//! tooling needed to measure it.

pub mod bench;
pub mod detect;
pub mod extract;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod refinery;
pub mod report;
pub mod signature;
pub mod taxonomy;
