//! Audio-visual speech enhancement.
//!
//! A noisy magnitude spectrogram is filtered by a soft mask predicted from
//! the audio and a visual feature stream of the target speaker, and the
//! noisy phase is refined by a residual sub-network. The crate contains
//! everything needed to run that pipeline at desk scale:
//!
//! * [`dsp`]: STFT/ISTFT, magnitude/phase split, mel filterbank, Griffin-Lim.
//! * [`wav`]: 16-bit mono PCM WAV reading and writing.
//! * [`synthdata`]: a deterministic harmonic "speech" corpus with visual features.
//! * [`mixgen`]: energy-normalized multi-speaker mixtures.
//! * [`autograd`]: a small reverse-mode differentiation engine.
//! * [`model`]: the enhancement network.
//! * [`training`]: loss, optimizer and the three-phase curriculum.
//! * [`metrics`]: SDR/SIR/SAR and STOI.
//! * [`checkpoint`] and [`config`]: on-disk formats used by the CLI.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod mixgen;
pub mod model;
mod seed;
pub mod synthdata;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
