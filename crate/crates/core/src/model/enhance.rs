use ndarray::{Array2, Axis};

use super::{EnhancementNet, Modes, VisualFeatureSequence};
use crate::autograd::{Graph, Scalar};
use crate::dsp::{
    griffin_lim, istft, merge_mag_phase, split_mag_phase, stft, ComplexSpectrogram, MagnitudeSpectrogram, PhaseSpectrogram,
    Waveform,
};
use crate::error::{invalid, Result};

/// Where the phase of the reconstructed signal comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseSource {
    /// Output of the phase sub-network.
    Predicted,
    /// Phase of the mixture.
    Mixture,
    /// Griffin-Lim on the enhanced magnitude.
    GriffinLim { iters: usize },
    /// Phase of a reference signal.
    GroundTruth(Waveform),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementResult {
    /// `T x F`, every entry in `(0, 1)`.
    pub mask: Array2<f64>,
    pub magnitude: MagnitudeSpectrogram,
    /// Phase used for reconstruction.
    pub phase: PhaseSpectrogram,
    pub waveform: Waveform,
}

fn first<T: Scalar>(a: &ndarray::Array3<T>) -> Array2<f64> {
    a.index_axis(Axis(0), 0).mapv(|v| v.to_f64().expect("finite"))
}

/// Runs the network in inference mode on a mixture spectrogram.
pub fn enhance_spectrogram<T: Scalar>(
    net: &EnhancementNet<T>,
    mixture: &ComplexSpectrogram,
    visual: &VisualFeatureSequence,
    source: &PhaseSource,
) -> Result<EnhancementResult> {
    let inputs = net.prepare(mixture, visual)?;
    let mut bn = net.bn.clone();
    let mut g = Graph::new(&net.params);
    let modes = Modes { phase: matches!(source, PhaseSource::Predicted).then_some(crate::autograd::BnMode::Eval), ..Modes::INFERENCE };
    let out = net.layout.forward(&mut g, &mut bn, &inputs, modes)?;
    let mask = first(g.value(out.mask));
    let magnitude = MagnitudeSpectrogram { values: first(g.value(out.magnitude)) };
    let phase = match source {
        PhaseSource::Predicted => PhaseSpectrogram { values: first(g.value(out.phase.expect("phase requested"))) },
        PhaseSource::Mixture => split_mag_phase(mixture).1,
        PhaseSource::GriffinLim { iters } => {
            let wave = griffin_lim(&magnitude, *iters, &net.stft)?;
            split_mag_phase(&stft(&wave, &net.stft)?).1
        }
        PhaseSource::GroundTruth(reference) => {
            let spec = stft(reference, &net.stft)?;
            if !spec.same_shape(mixture) {
                return invalid(format!(
                    "reference has {} frames, mixture has {}",
                    spec.n_frames(),
                    mixture.n_frames()
                ));
            }
            split_mag_phase(&spec).1
        }
    };
    let waveform = istft(&merge_mag_phase(&magnitude, &phase, net.stft)?)?;
    Ok(EnhancementResult { mask, magnitude, phase, waveform })
}

/// Enhances a mixture waveform given the target speaker's visual features.
/// The mixture must span exactly four STFT frames per video frame.
pub fn enhance<T: Scalar>(
    net: &EnhancementNet<T>,
    mixture: &Waveform,
    visual: &VisualFeatureSequence,
    source: &PhaseSource,
) -> Result<EnhancementResult> {
    let expected = visual.n_frames() * super::FRAMES_PER_VIDEO_FRAME * net.stft.hop;
    if mixture.len() != expected {
        return invalid(format!(
            "mixture has {} samples but {} video frames need {expected}",
            mixture.len(),
            visual.n_frames()
        ));
    }
    if let PhaseSource::GroundTruth(r) = source {
        if r.len() != mixture.len() {
            return invalid(format!("reference has {} samples, mixture has {}", r.len(), mixture.len()));
        }
    }
    enhance_spectrogram(net, &stft(mixture, &net.stft)?, visual, source)
}
