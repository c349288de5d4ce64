use ndarray::Array2;

use super::{istft, merge_mag_phase, split_mag_phase, stft, MagnitudeSpectrogram, PhaseSpectrogram};
use super::{StftConfig, Waveform};
use crate::error::{invalid, Result};

/// Griffin-Lim phase estimation for a fixed magnitude.
///
/// Starts from the `(1, 0)` phase pair in every bin and alternates
/// synthesis with re-analysis `iters` times.
pub fn griffin_lim(m: &MagnitudeSpectrogram, iters: usize, cfg: &StftConfig) -> Result<Waveform> {
    Ok(run(m, iters, cfg, false)?.0)
}

/// Like [`griffin_lim`], additionally returning [`inconsistency`] after
/// every iteration (entry `k` is measured on the signal after `k` updates,
/// entry 0 on the initial synthesis).
pub fn griffin_lim_trace(
    m: &MagnitudeSpectrogram,
    iters: usize,
    cfg: &StftConfig,
) -> Result<(Waveform, Vec<f64>)> {
    run(m, iters, cfg, true)
}

fn run(
    m: &MagnitudeSpectrogram,
    iters: usize,
    cfg: &StftConfig,
    trace: bool,
) -> Result<(Waveform, Vec<f64>)> {
    let (t, nf) = m.values.dim();
    let mut conv = Array2::zeros((t, 2 * nf));
    conv.slice_mut(ndarray::s![.., ..nf]).fill(1.0);
    let mut x = istft(&merge_mag_phase(m, &PhaseSpectrogram { values: conv }, *cfg)?)?;
    let mut history = Vec::new();
    for _ in 0..iters {
        let (_, phase) = split_mag_phase(&stft(&x, cfg)?);
        if trace {
            history.push(inconsistency(&x, m, cfg)?);
        }
        x = istft(&merge_mag_phase(m, &phase, *cfg)?)?;
    }
    if trace {
        history.push(inconsistency(&x, m, cfg)?);
    }
    Ok((x, history))
}

/// Distance between `|stft(x)|` and a target magnitude, measured over the
/// full two-sided spectrum: bins other than DC and Nyquist count twice,
/// as they do in the mirrored half. This is the norm in which the
/// overlap-add synthesis is a least-squares projection, so Griffin-Lim
/// iterates never increase it.
pub fn inconsistency(x: &Waveform, m: &MagnitudeSpectrogram, cfg: &StftConfig) -> Result<f64> {
    let (mag, _) = split_mag_phase(&stft(x, cfg)?);
    let nf = cfg.n_freqs();
    if mag.values.dim() != m.values.dim() {
        return invalid(format!(
            "signal analysis {:?} does not match magnitude {:?}",
            mag.values.dim(),
            m.values.dim()
        ));
    }
    let mut acc = 0.0;
    for ((t, f), a) in mag.values.indexed_iter() {
        let w = if f == 0 || f == nf - 1 { 1.0 } else { 2.0 };
        let d = a - m.values[[t, f]];
        acc += w * d * d;
    }
    Ok(acc.sqrt())
}
