//! Cycle-detailed, trace-driven simulator for a message-interface based
//! memory system and its comparison baselines (direct DDR, buffer-on-board,
//! and one-request-per-packet messaging).
//!
//! All simulator time is integer picoseconds ([`Ps`]). The CPU and the
//! serial links run on a 370 ps clock; the DRAM command bus and the buffer
//! schedulers run on the 1500 ps DDR3-1333 clock.

pub mod bufsched;
pub mod codec;
pub mod compress;
pub mod config;
pub mod controller;
pub mod cpu;
pub mod dram;
pub mod error;
pub mod experiments;
pub mod power;
pub mod stats;
pub mod system;
pub mod trace;

pub use config::{Mode, SimConfig};
pub use error::{Error, Result};
pub use stats::RunReport;

/// Simulator time in picoseconds.
pub type Ps = u64;

/// CPU and link clock period (2.7 GHz, rounded to an integer picosecond).
pub const CPU_CYCLE_PS: Ps = 370;

/// DRAM command clock period for DDR3-1333.
pub const DRAM_TCK_PS: Ps = 1500;
