use ndarray::Array3;
use rand::Rng;

use super::NetConfig;
use crate::autograd::{BnMode, BnStore, Graph, ParamId, ParamStore, Scalar, Var};
use crate::error::{invalid, Result};
use crate::seed;

/// Prefix of every phase sub-network parameter; everything else belongs to
/// the magnitude sub-network.
pub const PHASE_PREFIX: &str = "phase/";

/// Bound of the uniform initialization of the phase sub-network weights.
pub const PHASE_INIT_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn,
    /// Uniform in `±bound`.
    Small(f64),
}

impl Init {
    fn bound(self, fan_in: usize) -> f64 {
        match self {
            Init::FanIn => 1.0 / (fan_in.max(1) as f64).sqrt(),
            Init::Small(b) => b,
        }
    }
}

/// Pre-activation residual block:
/// `skip(x) + project(depthwise(relu(bn(x)), stride))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the model's [`BnStore`].
    pub bn: usize,
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    /// Channel projection on the shortcut, present iff the channel count changes.
    pub skip: Option<ParamId>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        params: &mut ParamStore<T>,
        bn: &mut BnStore<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        kernel_width: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_width.is_multiple_of(2) || !(stride == 1 || stride == 2) {
            return invalid(format!(
                "{prefix}: invalid block {in_channels}->{out_channels}, kernel {kernel_width}, stride {stride}"
            ));
        }
        let gamma = params.add_filled(format!("{prefix}/bn_gamma"), &[in_channels], T::one())?;
        let beta = params.add_filled(format!("{prefix}/bn_beta"), &[in_channels], T::zero())?;
        let bn = bn.add(format!("{prefix}/bn"), in_channels);
        let depthwise =
            params.add_uniform(format!("{prefix}/depthwise"), &[kernel_width, in_channels], init.bound(kernel_width), rng)?;
        let pointwise =
            params.add_uniform(format!("{prefix}/pointwise"), &[in_channels, out_channels], init.bound(in_channels), rng)?;
        let skip = if in_channels != out_channels {
            Some(params.add_uniform(format!("{prefix}/skip"), &[in_channels, out_channels], init.bound(in_channels), rng)?)
        } else {
            None
        };
        Ok(Self { in_channels, out_channels, stride, gamma, beta, bn, depthwise, pointwise, skip })
    }

    /// Parameter ids of the block, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.gamma, self.beta, self.depthwise, self.pointwise];
        ids.extend(self.skip);
        ids
    }
}

pub fn conv_block<T: Scalar>(g: &mut Graph<'_, T>, bn: &mut BnStore<T>, block: &ConvBlock, x: Var, mode: BnMode) -> Result<Var> {
    let (_, t, c) = g.shape(x);
    if c != block.in_channels {
        return invalid(format!("block expects {} channels, got {c}", block.in_channels));
    }
    if t % block.stride != 0 {
        return invalid(format!("stride {} does not divide {t} frames", block.stride));
    }
    let (gamma, beta) = (g.param(block.gamma), g.param(block.beta));
    let h = g.batch_norm(x, gamma, beta, bn.get_mut(block.bn), mode)?;
    let h = g.relu(h);
    let (dw, pw) = (g.param(block.depthwise), g.param(block.pointwise));
    let h = g.sep_conv1d(h, dw, pw, block.stride)?;
    let mut skip = x;
    if block.stride == 2 {
        skip = g.avg_pool2(skip)?;
    }
    if let Some(w) = block.skip {
        let w = g.param(w);
        skip = g.project(skip, w)?;
    }
    g.add(skip, h)
}

fn run_blocks<T: Scalar>(g: &mut Graph<'_, T>, bn: &mut BnStore<T>, blocks: &[ConvBlock], mut x: Var, mode: BnMode) -> Result<Var> {
    for b in blocks {
        x = conv_block(g, bn, b, x, mode)?;
    }
    Ok(x)
}

/// Doubles the time axis: `repeat2(x) + transposed_conv(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Upsample {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
}

/// Parameter handles of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub visual: Vec<ConvBlock>,
    pub audio: Vec<ConvBlock>,
    pub fusion: Vec<ConvBlock>,
    /// Upsampling layers, applied after the fusion blocks at the same index
    /// in `upsample_after`.
    pub upsample: Vec<Upsample>,
    pub upsample_after: Vec<usize>,
    pub mask_weight: ParamId,
    pub mask_bias: ParamId,
    pub phase_from_magnitude: ParamId,
    pub phase_from_noisy: ParamId,
    pub phase_blocks: Vec<ConvBlock>,
    pub phase_out_weight: ParamId,
    pub phase_out_bias: ParamId,
}

/// Batch-normalization modes of the two sub-networks, and whether the phase
/// sub-network runs at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modes {
    pub magnitude: BnMode,
    pub phase: Option<BnMode>,
}

impl Modes {
    pub const INFERENCE: Modes = Modes { magnitude: BnMode::Eval, phase: Some(BnMode::Eval) };
}

/// Network inputs for a batch, all `B x time x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInputs<T> {
    /// `B x T_v x D_v`.
    pub visual: Array3<T>,
    /// `log(1 + mel(M_n))`, `B x T x n_mels`.
    pub log_mel: Array3<T>,
    /// Noisy magnitude `M_n`, `B x T x F`.
    pub noisy_magnitude: Array3<T>,
    /// Noisy phase pairs `Φ_n`, `B x T x 2F`.
    pub noisy_phase: Array3<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub mask: Var,
    pub magnitude: Var,
    pub phase: Option<Var>,
}

impl Layout {
    /// Registers every parameter of a network with the given configuration.
    pub fn build<T: Scalar>(cfg: &NetConfig, params: &mut ParamStore<T>, bn: &mut BnStore<T>, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(init_seed, &[0x1A7]);
        let (c, k) = (cfg.mag_channels, cfg.kernel_width);
        let mut blocks = |prefix: &str, n: usize, c_in: usize, c: usize, stride_at: &[usize], init: Init, rng: &mut _| {
            (0..n)
                .map(|i| {
                    let cin = if i == 0 { c_in } else { c };
                    let stride = if stride_at.contains(&i) { 2 } else { 1 };
                    ConvBlock::register(params, bn, &format!("{prefix}/{i}"), cin, c, stride, k, init, rng)
                })
                .collect::<Result<Vec<_>>>()
        };
        let visual = blocks("visual", cfg.n_visual_blocks, cfg.visual_dim, c, &[], Init::FanIn, &mut rng)?;
        let audio = blocks("audio", cfg.n_audio_blocks, cfg.n_mels, c, &cfg.audio_stride_blocks(), Init::FanIn, &mut rng)?;
        let fusion = blocks("fusion", cfg.n_fusion_blocks, 2 * c, c, &[], Init::FanIn, &mut rng)?;
        let p = cfg.phase_channels;
        let small = Init::Small(PHASE_INIT_BOUND);
        let phase_blocks = blocks("phase", cfg.n_phase_blocks, 2 * p, p, &[], small, &mut rng)?;

        let upsample_after = cfg.fusion_upsample_after();
        let upsample = upsample_after
            .iter()
            .enumerate()
            .map(|(i, _)| {
                Ok(Upsample {
                    depthwise: params.add_uniform(format!("fusion/up{i}/depthwise"), &[k, c], Init::FanIn.bound(k), &mut rng)?,
                    pointwise: params.add_uniform(format!("fusion/up{i}/pointwise"), &[c, c], Init::FanIn.bound(c), &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let f = cfg.n_freqs;
        let mask_weight = params.add_uniform("mask/weight", &[c, f], Init::FanIn.bound(c), &mut rng)?;
        let mask_bias = params.add_filled("mask/bias", &[f], T::zero())?;
        let phase_from_magnitude = params.add_uniform("phase/from_magnitude", &[f, p], PHASE_INIT_BOUND, &mut rng)?;
        let phase_from_noisy = params.add_uniform("phase/from_noisy", &[2 * f, p], PHASE_INIT_BOUND, &mut rng)?;
        let phase_out_weight = params.add_uniform("phase/out_weight", &[p, 2 * f], PHASE_INIT_BOUND, &mut rng)?;
        let phase_out_bias = params.add_filled("phase/out_bias", &[2 * f], T::zero())?;
        Ok(Self {
            visual,
            audio,
            fusion,
            upsample,
            upsample_after,
            mask_weight,
            mask_bias,
            phase_from_magnitude,
            phase_from_noisy,
            phase_blocks,
            phase_out_weight,
            phase_out_bias,
        })
    }

    /// `f^v`: visual features at video rate, `B x T_v x C`.
    pub fn visual_stream<T: Scalar>(&self, g: &mut Graph<'_, T>, bn: &mut BnStore<T>, v: Var, mode: BnMode) -> Result<Var> {
        let d = self.visual[0].in_channels;
        if g.shape(v).2 != d {
            return invalid(format!("visual features have dimension {}, expected {d}", g.shape(v).2));
        }
        run_blocks(g, bn, &self.visual, v, mode)
    }

    /// `f^a`: log-mel features downsampled by 4 to video rate.
    pub fn audio_stream<T: Scalar>(&self, g: &mut Graph<'_, T>, bn: &mut BnStore<T>, mel: Var, mode: BnMode) -> Result<Var> {
        let (_, t, m) = g.shape(mel);
        let factor: usize = self.audio.iter().map(|b| b.stride).product();
        if t % factor != 0 {
            return invalid(format!("{t} audio frames are not divisible by {factor}"));
        }
        if m != self.audio[0].in_channels {
            return invalid(format!("{m} mel bands, expected {}", self.audio[0].in_channels));
        }
        run_blocks(g, bn, &self.audio, mel, mode)
    }

    /// Fused stack and mask: returns `(mask, mask * M_n)`.
    pub fn fusion_and_mask<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        bn: &mut BnStore<T>,
        fv: Var,
        fa: Var,
        noisy_magnitude: Var,
        mode: BnMode,
    ) -> Result<(Var, Var)> {
        let (b, tv, _) = g.shape(fv);
        let (ba, ta, _) = g.shape(fa);
        let (bm, tm, fm) = g.shape(noisy_magnitude);
        let up = 1usize << self.upsample.len();
        if (b, tv) != (ba, ta) || bm != b || tm != up * tv {
            return invalid(format!(
                "resolution mismatch: visual {b}x{tv}, audio {ba}x{ta}, magnitude {bm}x{tm} (needs {}x{})",
                b,
                up * tv
            ));
        }
        let mut x = g.concat(fv, fa)?;
        for (i, block) in self.fusion.iter().enumerate() {
            x = conv_block(g, bn, block, x, mode)?;
            if let Some(u) = self.upsample_after.iter().position(|a| *a == i) {
                let layer = &self.upsample[u];
                let (dw, pw) = (g.param(layer.depthwise), g.param(layer.pointwise));
                let learned = g.transposed_conv1d(x, dw, pw)?;
                let repeated = g.repeat2(x);
                x = g.add(repeated, learned)?;
            }
        }
        let (w, bias) = (g.param(self.mask_weight), g.param(self.mask_bias));
        if g.shape(w).2 != fm {
            return invalid(format!("mask has {} bins, magnitude has {fm}", g.shape(w).2));
        }
        let logits = g.project(x, w)?;
        let logits = g.add_bias(logits, bias)?;
        let mask = g.sigmoid(logits);
        let magnitude = g.mul(mask, noisy_magnitude)?;
        Ok((mask, magnitude))
    }

    /// Refined phase: unit pairs `normalize(W_φ φ + b + Φ_n)`, where `φ` is
    /// the block stack over projections of `log(1 + M̂)` and `Φ_n`.
    pub fn phase_subnet<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        bn: &mut BnStore<T>,
        magnitude: Var,
        noisy_phase: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let (bm, tm, f) = g.shape(magnitude);
        if g.shape(noisy_phase) != (bm, tm, 2 * f) {
            return invalid(format!("phase {:?} does not pair with magnitude {:?}", g.shape(noisy_phase), (bm, tm, f)));
        }
        let compressed = g.log1p(magnitude)?;
        let (wm, wn) = (g.param(self.phase_from_magnitude), g.param(self.phase_from_noisy));
        let a = g.project(compressed, wm)?;
        let n = g.project(noisy_phase, wn)?;
        let x = g.concat(a, n)?;
        let x = run_blocks(g, bn, &self.phase_blocks, x, mode)?;
        let (wo, bo) = (g.param(self.phase_out_weight), g.param(self.phase_out_bias));
        let r = g.project(x, wo)?;
        let r = g.add_bias(r, bo)?;
        let r = g.add(r, noisy_phase)?;
        g.pair_normalize(r)
    }

    /// The whole network on one batch.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, bn: &mut BnStore<T>, inputs: &NetInputs<T>, modes: Modes) -> Result<Outputs> {
        let v = g.constant(inputs.visual.clone());
        let mel = g.constant(inputs.log_mel.clone());
        let mn = g.constant(inputs.noisy_magnitude.clone());
        let fv = self.visual_stream(g, bn, v, modes.magnitude)?;
        let fa = self.audio_stream(g, bn, mel, modes.magnitude)?;
        let (mask, magnitude) = self.fusion_and_mask(g, bn, fv, fa, mn, modes.magnitude)?;
        let phase = match modes.phase {
            Some(mode) => {
                let pn = g.constant(inputs.noisy_phase.clone());
                Some(self.phase_subnet(g, bn, magnitude, pn, mode)?)
            }
            None => None,
        };
        Ok(Outputs { mask, magnitude, phase })
    }
}
