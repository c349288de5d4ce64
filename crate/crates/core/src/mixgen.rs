//! Multi-speaker mixtures.
//!
//! Interferers are rescaled so their time-domain RMS equals the
//! reference's, then added to the reference in the STFT domain.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::dsp::{stft, ComplexSpectrogram, StftConfig, Waveform};
use crate::error::{invalid, Result};
use crate::model::{VisualFeatureSequence, FRAMES_PER_VIDEO_FRAME};
use crate::seed;
use crate::synthdata::{Corpus, Split, SAMPLES_PER_FRAME};

/// Frames per training segment (2.4 s of video).
pub const SEGMENT_FRAMES: usize = 60;

pub fn rms(x: &Waveform) -> Result<f64> {
    if x.is_empty() {
        return invalid("rms of an empty signal");
    }
    Ok((x.samples.iter().map(|s| s * s).sum::<f64>() / x.len() as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct Mixed {
    pub mixture: ComplexSpectrogram,
    /// Gain applied to each interferer.
    pub scales: Vec<f64>,
    /// Interferer spectrograms after scaling.
    pub scaled_sources: Vec<ComplexSpectrogram>,
}

/// Adds each `(spectrogram, waveform)` interferer onto the reference
/// spectrogram, scaled by `rms(reference_wave) / rms(waveform)`.
pub fn mix_spectrograms(
    reference: &ComplexSpectrogram,
    reference_wave: &Waveform,
    noises: &[(ComplexSpectrogram, Waveform)],
) -> Result<Mixed> {
    let target = rms(reference_wave)?;
    let mut mixture = reference.clone();
    let mut scales = Vec::with_capacity(noises.len());
    let mut scaled_sources = Vec::with_capacity(noises.len());
    for (i, (spec, wave)) in noises.iter().enumerate() {
        if !spec.same_shape(reference) {
            return invalid(format!(
                "interferer {i} spectrogram {:?} does not match reference {:?}",
                spec.re.dim(),
                reference.re.dim()
            ));
        }
        let level = rms(wave)?;
        if level == 0.0 {
            return invalid(format!("interferer {i} is silent (zero rms)"));
        }
        let scale = target / level;
        mixture.add_scaled(spec, scale)?;
        scales.push(scale);
        scaled_sources.push(spec.scaled(scale));
    }
    Ok(Mixed { mixture, scales, scaled_sources })
}

/// One training or evaluation example: a reference speaker with its aligned
/// visual features, and the mixture of that speaker with `n_interferers`
/// others.
#[derive(Debug, Clone)]
pub struct MixtureExample {
    pub reference: ComplexSpectrogram,
    pub mixture: ComplexSpectrogram,
    pub visual: VisualFeatureSequence,
    pub n_interferers: usize,
    pub interferer_sources: Vec<ComplexSpectrogram>,
    /// Visual features aligned with each interferer segment.
    pub interferer_visuals: Vec<VisualFeatureSequence>,
    pub reference_wave: Waveform,
    /// Interferer waveforms after scaling.
    pub interferer_waves: Vec<Waveform>,
    pub scales: Vec<f64>,
    /// Speaker seeds, reference first.
    pub speaker_seeds: Vec<u64>,
}

impl MixtureExample {
    /// Time-domain mixture (the sum the mixture spectrogram analyses).
    pub fn mixture_wave(&self) -> Waveform {
        self.interferer_waves
            .iter()
            .fold(self.reference_wave.clone(), |acc, w| acc.add(w).expect("aligned sources"))
    }
}

/// Samples a reference segment and `n_interferers` segments from distinct
/// other speakers of `split`, all `segment_frames` video frames long.
/// Deterministic for a given corpus and seed.
pub fn sample_training_example(
    corpus: &Corpus,
    split: Split,
    n_interferers: usize,
    segment_frames: usize,
    rng_seed: u64,
    cfg: &StftConfig,
) -> Result<MixtureExample> {
    let speakers = corpus.speakers_in(split);
    if speakers.len() < n_interferers + 1 {
        return invalid(format!(
            "{} {} speakers cannot supply a reference and {n_interferers} interferers",
            speakers.len(),
            split.as_str()
        ));
    }
    if segment_frames == 0 || corpus.min_frames() < segment_frames {
        return invalid(format!(
            "segment of {segment_frames} frames does not fit utterances of {} frames",
            corpus.min_frames()
        ));
    }
    if SAMPLES_PER_FRAME != FRAMES_PER_VIDEO_FRAME * cfg.hop {
        return invalid(format!("hop {} does not give four frames per video frame", cfg.hop));
    }
    let mut rng = seed::rng(rng_seed, &[0x313C]);
    let chosen: Vec<_> = speakers.choose_multiple(&mut rng, n_interferers + 1).collect();

    let mut segment = |idx: usize| {
        let spk = chosen[idx];
        let utt = spk.utterances.choose(&mut rng).expect("speakers have utterances");
        let start = rng.random_range(0..=utt.visual.n_frames() - segment_frames);
        let a = start * SAMPLES_PER_FRAME;
        let wave = Waveform {
            samples: utt.waveform.samples[a..a + segment_frames * SAMPLES_PER_FRAME].to_vec(),
            sample_rate: utt.waveform.sample_rate,
        };
        (wave, utt.visual.segment(start, segment_frames), spk.speaker.speaker_seed)
    };

    let (reference_wave, visual, ref_seed) = segment(0);
    let visual = visual?;
    let reference = stft(&reference_wave, cfg)?;
    let mut noises = Vec::with_capacity(n_interferers);
    let mut speaker_seeds = vec![ref_seed];
    let mut interferer_visuals = Vec::with_capacity(n_interferers);
    for i in 1..=n_interferers {
        let (wave, vis, s) = segment(i);
        noises.push((stft(&wave, cfg)?, wave));
        interferer_visuals.push(vis?);
        speaker_seeds.push(s);
    }
    let mixed = mix_spectrograms(&reference, &reference_wave, &noises)?;
    let interferer_waves = noises.iter().zip(&mixed.scales).map(|((_, w), s)| w.scaled(*s)).collect();
    Ok(MixtureExample {
        reference,
        mixture: mixed.mixture,
        visual,
        n_interferers,
        interferer_sources: mixed.scaled_sources,
        interferer_visuals,
        reference_wave,
        interferer_waves,
        scales: mixed.scales,
        speaker_seeds,
    })
}
