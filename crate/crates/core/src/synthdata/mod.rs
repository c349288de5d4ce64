//! Deterministic stand-in for a recorded audio-visual corpus.
//!
//! Each synthetic speaker produces harmonic "speech": a pitch contour
//! around a speaker-specific fundamental, gated into syllables separated
//! by silent gaps. Visual features pair an envelope code (what a lip
//! front-end sees move) with a speaker voice code.

mod corpus;

pub use corpus::{build_corpus, read_avf, write_avf, Corpus, CorpusConfig, CorpusSpeaker, CorpusUtterance, Split};

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::Waveform;
use crate::error::{invalid, Result};
use crate::model::VisualFeatureSequence;
use crate::seed;

pub const SAMPLE_RATE: u32 = 16_000;
/// Audio samples per 25 fps video frame.
pub const SAMPLES_PER_FRAME: usize = 640;

const F0_RANGE: (f64, f64) = (100.0, 300.0);
const GAP_FRAMES: (usize, usize) = (2, 5);
const SYLLABLE_FRAMES: (usize, usize) = (3, 8);
const RAMP: usize = 160;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub speaker_seed: u64,
    pub f0_base: f64,
    pub n_harmonics: usize,
    pub modulation_rate: f64,
    /// Spectral tilt exponent of the harmonic amplitudes.
    pub tilt: f64,
}

impl SyntheticSpeaker {
    pub fn from_seed(speaker_seed: u64) -> Self {
        let mut rng = seed::rng(speaker_seed, &[0x5EA1]);
        Self {
            speaker_seed,
            f0_base: rng.random_range(F0_RANGE.0..F0_RANGE.1),
            n_harmonics: rng.random_range(3..=8),
            modulation_rate: rng.random_range(2.0..6.0),
            tilt: rng.random_range(0.4..1.2),
        }
    }

    /// Fixed identity vector of length `dim`.
    ///
    /// A radial-basis code of the speaker's log pitch across `dim` units,
    /// plus a speaker-specific random offset. Speakers with similar voices
    /// get similar codes, so the code carries over to unseen speakers.
    pub fn embedding(&self, dim: usize) -> Vec<f64> {
        let mut rng = seed::rng(self.speaker_seed, &[0xE3B0]);
        let pos = (self.f0_base / F0_RANGE.0).ln() / (F0_RANGE.1 / F0_RANGE.0).ln();
        let width = 1.0 / dim.max(2) as f64;
        (0..dim)
            .map(|i| {
                let center = if dim == 1 { 0.5 } else { i as f64 / (dim - 1) as f64 };
                let d = (pos - center) / width;
                (-0.5 * d * d).exp() + 0.15 * rng.random_range(-1.0..1.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub waveform: Waveform,
    /// Mean amplitude envelope per video frame, in `[0, 1]`.
    pub envelope: Vec<f64>,
    pub speaker: SyntheticSpeaker,
    pub utterance_seed: u64,
}

// Frame-level on/off gate: gaps of 2-5 frames before syllables of 3-8, so
// at least a fifth of any utterance is silent.
fn syllable_gate(frames: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut gate = Vec::with_capacity(frames);
    while gate.len() < frames {
        let gap = rng.random_range(GAP_FRAMES.0..=GAP_FRAMES.1);
        gate.extend(std::iter::repeat_n(0.0, gap));
        let len = rng.random_range(SYLLABLE_FRAMES.0..=SYLLABLE_FRAMES.1);
        let level = rng.random_range(0.5..1.0);
        gate.extend(std::iter::repeat_n(level, len));
    }
    gate.truncate(frames);
    gate
}

/// Generates `duration_frames` video frames worth of audio (640 samples each).
pub fn synth_utterance(speaker: &SyntheticSpeaker, duration_frames: usize, utterance_seed: u64) -> Result<SyntheticUtterance> {
    if duration_frames == 0 {
        return invalid("utterance must span at least one frame");
    }
    let mut rng = seed::rng(speaker.speaker_seed, &[0xA0D1, utterance_seed]);
    let n = duration_frames * SAMPLES_PER_FRAME;
    let sr = SAMPLE_RATE as f64;

    // Sample-level envelope: the frame gate with linear ramps across each
    // boundary, times a slow amplitude modulation.
    let gate = syllable_gate(duration_frames, &mut rng);
    let step: Vec<f64> = (0..n).map(|i| gate[i / SAMPLES_PER_FRAME]).collect();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + step[i];
    }
    let mod_phase = rng.random_range(0.0..2.0 * PI);
    let amp: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(RAMP / 2);
            let hi = (i + RAMP / 2 + 1).min(n);
            let smooth = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            let t = i as f64 / sr;
            smooth * (0.8 + 0.2 * (2.0 * PI * speaker.modulation_rate * t + mod_phase).sin())
        })
        .collect();

    // Pitch contour: two slow sinusoidal drifts around the base frequency.
    let (r1, r2) = (rng.random_range(0.3..1.0), rng.random_range(1.0..3.0));
    let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let (d1, d2) = (rng.random_range(0.02..0.05), rng.random_range(0.01..0.03));
    let harmonics: Vec<(f64, f64)> = (1..=speaker.n_harmonics)
        .map(|k| {
            let gain = (k as f64).powf(-speaker.tilt) * rng.random_range(0.8..1.2);
            (gain, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let mut theta = 0.0;
    let mut samples = Vec::with_capacity(n);
    for (i, a) in amp.iter().enumerate() {
        let t = i as f64 / sr;
        let f0 = speaker.f0_base * (1.0 + d1 * (2.0 * PI * r1 * t + p1).sin() + d2 * (2.0 * PI * r2 * t + p2).sin());
        theta += 2.0 * PI * f0 / sr;
        let mut v = 0.0;
        for (k, (gain, phase)) in harmonics.iter().enumerate() {
            let h = (k + 1) as f64;
            if h * f0 < 0.47 * sr {
                v += gain * (h * theta + phase).sin();
            }
        }
        samples.push(a * v);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|s| *s *= 0.5 / peak);
    }
    let envelope = (0..duration_frames)
        .map(|f| amp[f * SAMPLES_PER_FRAME..(f + 1) * SAMPLES_PER_FRAME].iter().sum::<f64>() / SAMPLES_PER_FRAME as f64)
        .collect();
    Ok(SyntheticUtterance {
        waveform: Waveform { samples, sample_rate: SAMPLE_RATE },
        envelope,
        speaker: speaker.clone(),
        utterance_seed,
    })
}

/// Visual features for an utterance: the first half of every row tiles
/// (envelope, first difference of envelope), the second half is the
/// speaker embedding; Gaussian noise of std `noise_scale` is added on top.
pub fn synth_visual_features(utt: &SyntheticUtterance, dim: usize, noise_scale: f64) -> Result<VisualFeatureSequence> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return invalid(format!("visual dimension must be even and positive, got {dim}"));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return invalid(format!("noise scale must be a finite non-negative number, got {noise_scale}"));
    }
    let half = dim / 2;
    let embedding = utt.speaker.embedding(half);
    let frames = utt.envelope.len();
    let mut values = Array2::zeros((frames, dim));
    for t in 0..frames {
        let e = utt.envelope[t];
        let d = e - if t == 0 { 0.0 } else { utt.envelope[t - 1] };
        for i in 0..half {
            values[[t, i]] = if i % 2 == 0 { e } else { d };
            values[[t, half + i]] = embedding[i];
        }
    }
    if noise_scale > 0.0 {
        let mut rng = seed::rng(utt.speaker.speaker_seed, &[0x7151, utt.utterance_seed]);
        let normal = Normal::new(0.0, noise_scale).expect("validated scale");
        values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    VisualFeatureSequence::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{split_mag_phase, stft, StftConfig};

    #[test]
    fn utterance_lengths_and_determinism() {
        let spk = SyntheticSpeaker::from_seed(42);
        assert!((100.0..300.0).contains(&spk.f0_base));
        assert!((3..=8).contains(&spk.n_harmonics));
        let a = synth_utterance(&spk, 60, 7).unwrap();
        assert_eq!(a.waveform.len(), 38_400);
        assert_eq!(a.envelope.len(), 60);
        let b = synth_utterance(&spk, 60, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.waveform.peak() - 0.5).abs() < 1e-12);
        let silent = a.envelope.iter().filter(|e| **e < 0.05).count();
        assert!(silent as f64 >= 0.15 * 60.0, "{silent} silent frames");
        assert!(synth_utterance(&spk, 0, 7).is_err());
    }

    #[test]
    fn envelope_tracks_waveform_energy() {
        let spk = SyntheticSpeaker::from_seed(3);
        let u = synth_utterance(&spk, 40, 1).unwrap();
        for (t, e) in u.envelope.iter().enumerate() {
            let frame = &u.waveform.samples[t * 640..(t + 1) * 640];
            let rms = (frame.iter().map(|v| v * v).sum::<f64>() / 640.0).sqrt();
            if *e < 1e-3 {
                assert!(rms < 1e-3, "frame {t}: env {e}, rms {rms}");
            }
            if *e > 0.4 {
                assert!(rms > 0.02, "frame {t}: env {e}, rms {rms}");
            }
        }
    }

    fn peak_bin(utt: &SyntheticUtterance) -> usize {
        let (m, _) = split_mag_phase(&stft(&utt.waveform, &StftConfig::default()).unwrap());
        let totals = m.values.sum_axis(ndarray::Axis(0));
        totals.iter().enumerate().fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b }).0
    }

    #[test]
    fn different_pitch_different_peak() {
        let mut low = SyntheticSpeaker::from_seed(1);
        low.f0_base = 120.0;
        low.tilt = 1.0;
        let mut high = low.clone();
        high.f0_base = 260.0;
        let a = synth_utterance(&low, 50, 1).unwrap();
        let b = synth_utterance(&high, 50, 1).unwrap();
        assert_ne!(peak_bin(&a), peak_bin(&b));
    }

    #[test]
    fn visual_features_layout() {
        let spk = SyntheticSpeaker::from_seed(5);
        let u1 = synth_utterance(&spk, 30, 1).unwrap();
        let u2 = synth_utterance(&spk, 30, 2).unwrap();
        let v1 = synth_visual_features(&u1, 32, 0.0).unwrap();
        let v2 = synth_visual_features(&u2, 32, 0.0).unwrap();
        assert_eq!(v1.values.dim(), (30, 32));
        assert_eq!(v1, synth_visual_features(&u1, 32, 0.0).unwrap());
        for t in 0..30 {
            assert_eq!(v1.values[[t, 0]], u1.envelope[t]);
            assert_eq!(v1.values.row(t).slice(ndarray::s![16..]), v2.values.row(t).slice(ndarray::s![16..]));
            if u1.envelope[t] == 0.0 && (t == 0 || u1.envelope[t - 1] == 0.0) {
                assert!(v1.values.row(t).slice(ndarray::s![..16]).iter().all(|v| *v == 0.0));
            }
        }
        assert_ne!(v1.values.slice(ndarray::s![.., ..16]), v2.values.slice(ndarray::s![.., ..16]));
        let noisy = synth_visual_features(&u1, 32, 0.05).unwrap();
        assert_ne!(noisy, v1);
        assert_eq!(noisy, synth_visual_features(&u1, 32, 0.05).unwrap());
        assert!(synth_visual_features(&u1, 31, 0.0).is_err());
    }

    #[test]
    fn embedding_reflects_pitch() {
        let mut a = SyntheticSpeaker::from_seed(10);
        let mut b = SyntheticSpeaker::from_seed(11);
        a.f0_base = 110.0;
        b.f0_base = 280.0;
        let ea = a.embedding(16);
        let eb = b.embedding(16);
        let argmax = |v: &[f64]| v.iter().enumerate().fold((0, f64::MIN), |m, (i, x)| if *x > m.1 { (i, *x) } else { m }).0;
        assert!(argmax(&ea) < argmax(&eb));
    }
}
