use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{hann_window, Waveform};
use crate::error::{invalid, Result};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate intelligibility segment (384 ms at 10 kHz / 128 hop).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    // Cutoff in cycles per input sample.
    let fc = 0.5 * ratio.min(1.0);
    let half = (16.0 / ratio.min(1.0)).ceil() as isize;
    let out_len = (x.len() as f64 * ratio).ceil() as usize;
    let kernel = |t: f64| {
        if t.abs() >= half as f64 {
            return 0.0;
        }
        let sinc = if t == 0.0 { 1.0 } else { (2.0 * PI * fc * t).sin() / (2.0 * PI * fc * t) };
        let u = (t / half as f64 + 1.0) * 0.5;
        let window = 0.42 - 0.5 * (2.0 * PI * u).cos() + 0.08 * (4.0 * PI * u).cos();
        2.0 * fc * sinc * window
    };
    (0..out_len)
        .map(|n| {
            let tau = n as f64 / ratio;
            let center = tau.floor() as isize;
            let mut acc = 0.0;
            for i in (center - half + 1)..=(center + half) {
                if i >= 0 && (i as usize) < x.len() {
                    acc += x[i as usize] * kernel(tau - i as f64);
                }
            }
            acc
        })
        .collect()
}

// Windowed frames of `x`, hop FRAME / 2.
fn frames(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    let hop = FRAME / 2;
    if x.len() < FRAME {
        return Vec::new();
    }
    (0..=(x.len() - FRAME) / hop)
        .map(|m| x[m * hop..m * hop + FRAME].iter().zip(window).map(|(a, w)| a * w).collect())
        .collect()
}

// One-third octave band index ranges over the NFFT/2+1 bins.
fn band_ranges() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .fold((0, f64::MAX), |b, (i, f)| if (f - target).abs() < b.1 { (i, (f - target).abs()) } else { b })
            .0
    };
    (0..N_BANDS)
        .map(|j| {
            let cf = MIN_FREQ * 2f64.powf(j as f64 / 3.0);
            (nearest(cf * 2f64.powf(-1.0 / 6.0)), nearest(cf * 2f64.powf(1.0 / 6.0)))
        })
        .collect()
}

// Band envelopes, `frames x bands`.
fn band_envelopes(frames: &[&Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    frames
        .iter()
        .map(|frame| {
            let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
            for (b, v) in buf.iter_mut().zip(frame.iter()) {
                b.re = *v;
            }
            fft.process(&mut buf);
            bands
                .iter()
                .map(|&(lo, hi)| buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Short-time objective intelligibility of `estimate` relative to `clean`.
///
/// Both signals are resampled to 10 kHz. Frames of the clean signal more
/// than 40 dB below its loudest frame are dropped from both; at least
/// 384 ms of remaining signal is required.
pub fn stoi(estimate: &Waveform, clean: &Waveform) -> Result<f64> {
    if estimate.len() != clean.len() || estimate.sample_rate != clean.sample_rate {
        return invalid(format!(
            "signals differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            estimate.len(),
            estimate.sample_rate,
            clean.len(),
            clean.sample_rate
        ));
    }
    let min_len = (0.384 * clean.sample_rate as f64).ceil() as usize;
    if clean.len() < min_len {
        return invalid(format!("need at least {min_len} samples (384 ms), got {}", clean.len()));
    }
    let x = resample(&clean.samples, clean.sample_rate, FS);
    let y = resample(&estimate.samples, estimate.sample_rate, FS);
    let window = hann_window(FRAME)?;
    let xf = frames(&x, &window);
    let yf = frames(&y, &window);

    let energies: Vec<f64> = xf.iter().map(|f| 20.0 * (norm(f) + f64::EPSILON).log10()).collect();
    let max_e = energies.iter().cloned().fold(f64::MIN, f64::max);
    let keep: Vec<usize> = (0..xf.len()).filter(|&m| energies[m] > max_e - DYN_RANGE_DB).collect();
    if keep.len() < SEGMENT {
        return invalid(format!(
            "only {} non-silent frames, need {SEGMENT} (384 ms)",
            keep.len()
        ));
    }
    let bands = band_ranges();
    let xb = band_envelopes(&keep.iter().map(|&m| &xf[m]).collect::<Vec<_>>(), &bands);
    let yb = band_envelopes(&keep.iter().map(|&m| &yf[m]).collect::<Vec<_>>(), &bands);

    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for end in SEGMENT..=keep.len() {
        for j in 0..N_BANDS {
            let xs: Vec<f64> = (end - SEGMENT..end).map(|m| xb[m][j]).collect();
            let ys: Vec<f64> = (end - SEGMENT..end).map(|m| yb[m][j]).collect();
            let alpha = norm(&xs) / (norm(&ys) + f64::MIN_POSITIVE);
            let yc: Vec<f64> = ys.iter().zip(&xs).map(|(y, x)| (alpha * y).min(clip * x)).collect();
            let mx = xs.iter().sum::<f64>() / SEGMENT as f64;
            let my = yc.iter().sum::<f64>() / SEGMENT as f64;
            let xd: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yd: Vec<f64> = yc.iter().map(|v| v - my).collect();
            let denom = norm(&xd) * norm(&yd);
            let d = if denom > 0.0 {
                xd.iter().zip(&yd).map(|(a, b)| a * b).sum::<f64>() / denom
            } else {
                0.0
            };
            total += d;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn speechy(len: usize, f0: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rate: f64 = rng.random_range(3.0..5.0);
        let x = (0..len)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                let env = 0.6 + 0.4 * (2.0 * PI * rate * t).sin();
                env * (1..=6).map(|k| (2.0 * PI * f0 * k as f64 * t).sin() / k as f64).sum::<f64>()
            })
            .collect();
        Waveform::new(x, 16_000).unwrap()
    }

    #[test]
    fn resampler_preserves_low_tones() {
        let x: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin()).collect();
        let y = resample(&x, 16_000, 10_000);
        assert_eq!(y.len(), 10_000);
        for n in 200..9_800 {
            let expect = (2.0 * PI * 440.0 * n as f64 / 10_000.0).sin();
            assert!((y[n] - expect).abs() < 1e-3, "{n}: {} vs {expect}", y[n]);
        }
    }

    #[test]
    fn identical_signals_score_one() {
        let x = speechy(32_000, 140.0, 1);
        assert!((stoi(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        let louder = x.scaled(3.0);
        assert!((stoi(&louder, &x).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noise_scores_low() {
        let x = speechy(32_000, 140.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = Waveform::new((0..32_000).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000).unwrap();
        let score = stoi(&n, &x).unwrap();
        assert!(score < 0.3, "{score}");
    }

    #[test]
    fn rejects_short_or_mismatched() {
        let x = speechy(3_000, 140.0, 1);
        assert!(stoi(&x, &x).is_err());
        let y = speechy(32_000, 140.0, 1);
        assert!(stoi(&x, &y).is_err());
    }
}
