//! Separation quality metrics.
//!
//! [`bss_eval`] decomposes an estimate into target, interference and
//! artifact components with zero-delay projections (no distortion
//! filters), so absolute values are not comparable with filtered BSS
//! toolkits; orderings between reconstructions are. [`stoi`] follows the
//! short-time objective intelligibility recipe with a fixed 40 dB energy
//! threshold for silent-frame removal.

mod bss;
mod stoi;

pub use bss::{bss_eval, BssResult, DB_CAP};
pub use stoi::{resample, stoi};
