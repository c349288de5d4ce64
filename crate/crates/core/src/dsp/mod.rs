//! Time-frequency analysis and synthesis.
//!
//! All computation here is double precision. Spectrograms are stored
//! time-major (`T x F`), which is also the layout the network consumes:
//! frequency bins are channels, frames are time steps.

mod griffin_lim;
mod mel;
mod stft;

pub use griffin_lim::{griffin_lim, griffin_lim_trace, inconsistency};
pub use mel::{apply_mel, hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use stft::{
    hann_window, istft, merge_mag_phase, split_mag_phase, stft, ComplexSpectrogram,
    MagnitudeSpectrogram, PhaseSpectrogram, StftConfig, PHASE_EPS,
};

use crate::error::{invalid, Result};

/// Mono audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub const DEFAULT_RATE: u32 = 16_000;

    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return invalid(format!("non-finite sample at index {i}"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sample-wise sum. Both signals must have the same rate and length.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        if self.sample_rate != other.sample_rate || self.len() != other.len() {
            return invalid(format!(
                "cannot add waveforms of {} samples @ {} Hz and {} samples @ {} Hz",
                self.len(),
                self.sample_rate,
                other.len(),
                other.sample_rate
            ));
        }
        Ok(Self {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            sample_rate: self.sample_rate,
        })
    }
}
