//! The enhancement network.
//!
//! A visual stream and a log-mel audio stream meet at video rate, a fused
//! stack upsamples back to the spectrogram rate and predicts a soft mask on
//! the noisy magnitude, and a phase stack predicts a residual on the noisy
//! phase. All temporal layers are depthwise-separable pre-activation
//! residual blocks.

mod enhance;
mod features;
mod net;

pub use enhance::{enhance, enhance_spectrogram, EnhancementResult, PhaseSource};
pub use features::{VisualFeatureSequence, FRAMES_PER_VIDEO_FRAME, VIDEO_FPS};
pub use net::{conv_block, ConvBlock, Init, Layout, Modes, NetInputs, Outputs, Upsample, PHASE_INIT_BOUND, PHASE_PREFIX};

use ndarray::{Array2, Array3, Axis};

use crate::autograd::{BnStore, ParamStore, Scalar};
use crate::dsp::{apply_mel, mel_filterbank, split_mag_phase, ComplexSpectrogram, MelFilterbank, StftConfig};
use crate::error::{invalid, Result};

const BLOCKS: [usize; 4] = [10, 5, 15, 6];
const KERNEL_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub visual_dim: usize,
    pub mag_channels: usize,
    pub phase_channels: usize,
    pub n_visual_blocks: usize,
    pub n_audio_blocks: usize,
    pub n_fusion_blocks: usize,
    pub n_phase_blocks: usize,
    pub kernel_width: usize,
    pub n_mels: usize,
    pub n_freqs: usize,
}

impl NetConfig {
    /// Full-size network.
    pub fn full() -> Self {
        Self {
            visual_dim: 512,
            mag_channels: 1536,
            phase_channels: 1024,
            n_visual_blocks: BLOCKS[0],
            n_audio_blocks: BLOCKS[1],
            n_fusion_blocks: BLOCKS[2],
            n_phase_blocks: BLOCKS[3],
            kernel_width: KERNEL_WIDTH,
            n_mels: 80,
            n_freqs: 321,
        }
    }

    /// Same depth with narrow layers, small enough to train on a CPU.
    pub fn toy() -> Self {
        Self { visual_dim: 32, mag_channels: 128, phase_channels: 96, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.n_visual_blocks, self.n_audio_blocks, self.n_fusion_blocks, self.n_phase_blocks];
        if counts != BLOCKS || self.kernel_width != KERNEL_WIDTH {
            return invalid(format!(
                "block counts {counts:?} and kernel width {} must be {BLOCKS:?} and {KERNEL_WIDTH}",
                self.kernel_width
            ));
        }
        let sizes = [self.visual_dim, self.mag_channels, self.phase_channels, self.n_mels, self.n_freqs];
        if sizes.contains(&0) {
            return invalid("network dimensions must be positive");
        }
        Ok(())
    }

    /// Audio blocks (0-based) that halve the time axis: the second and fourth.
    pub fn audio_stride_blocks(&self) -> Vec<usize> {
        vec![1, 3]
    }

    /// Fusion blocks (0-based) followed by a 2x upsampling: the fifth and tenth.
    pub fn fusion_upsample_after(&self) -> Vec<usize> {
        vec![4, 9]
    }
}

/// Parameters, normalization statistics and fixed front-end of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementNet<T> {
    pub config: NetConfig,
    pub params: ParamStore<T>,
    pub bn: BnStore<T>,
    pub layout: Layout,
    pub mel: MelFilterbank,
    pub stft: StftConfig,
}

pub(crate) fn to_batch<T: Scalar>(m: &Array2<f64>) -> Array3<T> {
    m.mapv(T::of).insert_axis(Axis(0))
}

impl<T: Scalar> EnhancementNet<T> {
    pub fn new(config: NetConfig, init_seed: u64) -> Result<Self> {
        let stft = StftConfig::default();
        if config.n_freqs != stft.n_freqs() {
            return invalid(format!("{} bins do not match the {}-bin STFT", config.n_freqs, stft.n_freqs()));
        }
        let mut params = ParamStore::new();
        let mut bn = BnStore::default();
        let layout = Layout::build(&config, &mut params, &mut bn, init_seed)?;
        let mel = mel_filterbank(&stft, config.n_mels)?;
        Ok(Self { config, params, bn, layout, mel, stft })
    }

    /// Single-example network inputs from a mixture spectrogram and the
    /// aligned visual features.
    pub fn prepare(&self, mixture: &ComplexSpectrogram, visual: &VisualFeatureSequence) -> Result<NetInputs<T>> {
        let t = mixture.n_frames();
        if t != FRAMES_PER_VIDEO_FRAME * visual.n_frames() {
            return invalid(format!(
                "{t} spectrogram frames do not match {} video frames (need {})",
                visual.n_frames(),
                FRAMES_PER_VIDEO_FRAME * visual.n_frames()
            ));
        }
        if visual.dim() != self.config.visual_dim {
            return invalid(format!("visual dimension {} differs from {}", visual.dim(), self.config.visual_dim));
        }
        let (mag, phase) = split_mag_phase(mixture);
        let mel = apply_mel(&self.mel, &mag)?.mapv(f64::ln_1p);
        Ok(NetInputs {
            visual: to_batch(&visual.values),
            log_mel: to_batch(&mel),
            noisy_magnitude: to_batch(&mag.values),
            noisy_phase: to_batch(&phase.values),
        })
    }

    /// Whether a parameter belongs to the phase sub-network.
    pub fn is_phase_param(name: &str) -> bool {
        name.starts_with(PHASE_PREFIX)
    }
}

/// Concatenates single-example inputs along the batch axis.
pub fn stack_inputs<T: Scalar>(items: &[NetInputs<T>]) -> Result<NetInputs<T>> {
    if items.is_empty() {
        return invalid("cannot batch zero examples");
    }
    let cat = |f: fn(&NetInputs<T>) -> &Array3<T>| -> Result<Array3<T>> {
        let views: Vec<_> = items.iter().map(|i| f(i).view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| crate::Error::InvalidArgument(format!("batch shapes differ: {e}")))
    };
    Ok(NetInputs {
        visual: cat(|i| &i.visual)?,
        log_mel: cat(|i| &i.log_mel)?,
        noisy_magnitude: cat(|i| &i.noisy_magnitude)?,
        noisy_phase: cat(|i| &i.noisy_phase)?,
    })
}
