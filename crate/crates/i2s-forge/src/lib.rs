//! A self-contained input-to-state (I2S) comparison-solving engine with a
//! desk-scale benchmark harness.
//!
//! The crate reimplements the comparison-logging fuzz stage — colorize the
//! input, log comparison operands, and splice each comparison's expected
//! value over the bytes that feed it — against deterministic in-process
//! targets, so its execution cost can be measured exactly. On low-entropy
//! inputs the faithful stage degenerates into an execution explosion; the
//! engine also implements the countermeasures (taint-to-comparison mapping,
//! a stricter extension condition, identical-byte skipping and replacement
//! caching) as independently switchable configuration, plus a campaign
//! driver and benchmark matrix to compare them.

pub mod bench;
pub mod cache;
pub mod campaign;
pub mod cli;
pub mod cmplog;
pub mod color;
pub mod coverage;
pub mod error;
pub mod exec;
pub mod i2s;
pub mod taint;
pub mod targets;
