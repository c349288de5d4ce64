use ndarray::Array2;

use super::{MagnitudeSpectrogram, StftConfig};
use crate::error::{invalid, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale, `n_mels x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    /// Bin index of each filter's peak.
    pub fn peak_bins(&self) -> Vec<usize> {
        self.weights
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b })
                    .0
            })
            .collect()
    }
}

/// Builds `n_mels` triangular filters whose centers are equally spaced in
/// mel between 0 Hz and Nyquist.
///
/// Centers are snapped to FFT bins and forced strictly increasing, so the
/// narrow low-frequency filters never collapse onto a shared (or empty) bin.
/// Each triangle rises from the previous center to its own and falls to the
/// next, with peak weight 1.
pub fn mel_filterbank(cfg: &StftConfig, n_mels: usize) -> Result<MelFilterbank> {
    cfg.validate()?;
    let nf = cfg.n_freqs();
    if n_mels == 0 {
        return invalid("n_mels must be at least 1");
    }
    if n_mels > nf {
        return invalid(format!("n_mels {n_mels} exceeds the {nf} frequency bins"));
    }
    let f_min = 0.0;
    let f_max = cfg.sample_rate as f64 / 2.0;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let step = (m_hi - m_lo) / (n_mels + 1) as f64;
    let last = nf - 1;

    let mut centers = Vec::with_capacity(n_mels);
    for i in 1..=n_mels {
        let bin = (mel_to_hz(m_lo + step * i as f64) / cfg.bin_hz()).round() as usize;
        let floor = centers.last().map_or(0, |c: &usize| c + 1);
        centers.push(bin.max(floor));
    }
    // Pull the top end back inside the spectrum if the forced increments overflowed.
    for i in (0..n_mels).rev() {
        let ceiling = last - (n_mels - 1 - i);
        if centers[i] > ceiling {
            centers[i] = ceiling;
        }
    }

    let mut weights = Array2::zeros((n_mels, nf));
    for (i, &c) in centers.iter().enumerate() {
        let lo = if i == 0 { 0 } else { centers[i - 1] };
        let hi = if i + 1 == n_mels { last } else { centers[i + 1] };
        weights[[i, c]] = 1.0;
        for k in lo.min(c)..c {
            weights[[i, k]] = (k - lo) as f64 / (c - lo) as f64;
        }
        for k in c + 1..=hi {
            weights[[i, k]] = (hi - k) as f64 / (hi - c) as f64;
        }
    }
    Ok(MelFilterbank { weights, n_mels, f_min, f_max })
}

/// Projects linear magnitudes onto the mel bands: `M * W^T`, `T x n_mels`.
pub fn apply_mel(fb: &MelFilterbank, m: &MagnitudeSpectrogram) -> Result<Array2<f64>> {
    if m.values.ncols() != fb.weights.ncols() {
        return invalid(format!(
            "magnitude width {} does not match filterbank width {}",
            m.values.ncols(),
            fb.weights.ncols()
        ));
    }
    Ok(m.values.dot(&fb.weights.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_bank_shape_and_rows() {
        let fb = mel_filterbank(&StftConfig::default(), 80).unwrap();
        assert_eq!(fb.weights.dim(), (80, 321));
        for row in fb.weights.rows() {
            assert!(row.sum() > 0.0);
            assert!(row.iter().all(|v| *v >= 0.0));
            // one contiguous support interval
            let nz: Vec<usize> = row.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| i).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len());
        }
        let peaks = fb.peak_bins();
        assert!(peaks.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_filter_spans_band() {
        let fb = mel_filterbank(&StftConfig::default(), 1).unwrap();
        let row = fb.weights.row(0);
        assert!(row[1] > 0.0 && row[319] > 0.0);
        assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
    }

    #[test]
    fn rejects_bad_counts() {
        let cfg = StftConfig::default();
        assert!(mel_filterbank(&cfg, 0).is_err());
        assert!(mel_filterbank(&cfg, 322).is_err());
        let full = mel_filterbank(&cfg, 321).unwrap();
        assert!(full.peak_bins().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert_abs_diff_eq!(mel_to_hz(hz_to_mel(hz)), hz, epsilon = 1e-9);
        }
    }

    #[test]
    fn apply_matches_naive_loop() {
        let fb = mel_filterbank(&StftConfig::default(), 80).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = MagnitudeSpectrogram {
            values: Array2::from_shape_fn((5, 321), |_| rng.random_range(0.0..3.0)),
        };
        let out = apply_mel(&fb, &m).unwrap();
        for t in 0..5 {
            for j in 0..80 {
                let mut acc = 0.0;
                for f in 0..321 {
                    acc += m.values[[t, f]] * fb.weights[[j, f]];
                }
                assert_abs_diff_eq!(out[[t, j]], acc, epsilon = 1e-10);
            }
        }
        let zero = MagnitudeSpectrogram { values: Array2::zeros((3, 321)) };
        assert!(apply_mel(&fb, &zero).unwrap().iter().all(|v| *v == 0.0));

        let mut basis = Array2::zeros((1, 321));
        basis[[0, 50]] = 2.0;
        let out = apply_mel(&fb, &MagnitudeSpectrogram { values: basis }).unwrap();
        for j in 0..80 {
            assert_abs_diff_eq!(out[[0, j]], 2.0 * fb.weights[[j, 50]], epsilon = 1e-12);
        }
        assert!(apply_mel(&fb, &MagnitudeSpectrogram { values: Array2::zeros((1, 10)) }).is_err());
    }
}
