use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{invalid, Result};

/// Magnitudes at or below this are treated as zero when extracting phase.
pub const PHASE_EPS: f64 = 1e-12;

/// Analysis parameters. The defaults give 40 ms windows with a 10 ms hop
/// at 16 kHz, i.e. four spectrogram frames per 25 fps video frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_len: 640, hop: 160, fft_size: 640, sample_rate: 16_000 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.sample_rate == 0 {
            return invalid("hop and sample rate must be positive");
        }
        if self.window_len != 4 * self.hop {
            return invalid(format!(
                "window length {} must be exactly four hops ({})",
                self.window_len,
                4 * self.hop
            ));
        }
        if self.fft_size < self.window_len || !self.fft_size.is_multiple_of(2) {
            return invalid(format!(
                "fft size {} must be even and at least the window length {}",
                self.fft_size, self.window_len
            ));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn n_freqs(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size as f64
    }

    fn pad(&self) -> usize {
        self.window_len / 2
    }
}

/// Complex STFT, `T x F` real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let f = config.n_freqs();
        Self { re: Array2::zeros((frames, f)), im: Array2::zeros((frames, f)), config }
    }

    pub fn n_frames(&self) -> usize {
        self.re.nrows()
    }

    pub fn n_freqs(&self) -> usize {
        self.re.ncols()
    }

    pub fn same_shape(&self, other: &ComplexSpectrogram) -> bool {
        self.config == other.config && self.re.dim() == other.re.dim()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { re: &self.re * gain, im: &self.im * gain, config: self.config }
    }

    /// `self + gain * other`, in place.
    pub fn add_scaled(&mut self, other: &ComplexSpectrogram, gain: f64) -> Result<()> {
        if !self.same_shape(other) {
            return invalid(format!(
                "spectrogram shapes differ: {:?} vs {:?}",
                self.re.dim(),
                other.re.dim()
            ));
        }
        self.re.scaled_add(gain, &other.re);
        self.im.scaled_add(gain, &other.im);
        Ok(())
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        split_mag_phase(self).0
    }
}

/// Non-negative `T x F` magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub values: Array2<f64>,
}

/// `T x 2F` phase, real parts in the first `F` columns and imaginary parts in
/// the last `F`. Column `f` and `F + f` together form one unit 2-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub values: Array2<f64>,
}

impl PhaseSpectrogram {
    pub fn n_freqs(&self) -> usize {
        self.values.ncols() / 2
    }

    pub fn pair(&self, t: usize, f: usize) -> (f64, f64) {
        let nf = self.n_freqs();
        (self.values[[t, f]], self.values[[t, nf + f]])
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return invalid(format!("window length must be at least 2, got {n}"));
    }
    Ok((0..n).map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos())).collect())
}

struct Plan {
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plan {
    fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: hann_window(cfg.window_len)?,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }
}

// Index into the signal for position `i` of the reflect-padded signal.
fn reflect(i: usize, pad: usize, len: usize) -> usize {
    let j = i as isize - pad as isize;
    let last = len as isize - 1;
    let j = if j < 0 { -j } else if j > last { 2 * last - j } else { j };
    j as usize
}

/// Short-time Fourier transform with reflection padding of half a window
/// on each side, so frame `t` is centered on sample `t * hop` and the
/// signal yields exactly `len / hop` frames.
pub fn stft(x: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let plan = Plan::new(cfg)?;
    let len = x.len();
    if len == 0 || !len.is_multiple_of(cfg.hop) {
        return invalid(format!(
            "signal length {len} is not a positive multiple of the hop {}",
            cfg.hop
        ));
    }
    if len <= cfg.pad() {
        return invalid(format!(
            "signal length {len} is too short to reflect-pad by {}",
            cfg.pad()
        ));
    }
    let frames = len / cfg.hop;
    let nf = cfg.n_freqs();
    let mut out = ComplexSpectrogram::zeros(frames, *cfg);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.forward.get_inplace_scratch_len()];
    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        let start = t * cfg.hop;
        for (n, w) in plan.window.iter().enumerate() {
            buf[n].re = w * x.samples[reflect(start + n, cfg.pad(), len)];
        }
        plan.forward.process_with_scratch(&mut buf, &mut scratch);
        for f in 0..nf {
            out.re[[t, f]] = buf[f].re;
            out.im[[t, f]] = buf[f].im;
        }
    }
    Ok(out)
}

/// Inverse STFT by weighted overlap-add.
///
/// Each frame is windowed again, overlap-added into the padded domain, the
/// padded margins are folded back onto the samples they reflect, and the
/// result is divided by the equally folded sum of squared windows. This is
/// the least-squares signal for an arbitrary (possibly inconsistent)
/// spectrogram, and recovers `x` exactly from `stft(x)`.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = s.config;
    let plan = Plan::new(&cfg)?;
    let nf = cfg.n_freqs();
    if s.re.dim() != s.im.dim() || s.n_freqs() != nf {
        return invalid(format!(
            "spectrogram planes {:?}/{:?} do not match {} bins",
            s.re.dim(),
            s.im.dim(),
            nf
        ));
    }
    let frames = s.n_frames();
    let len = frames * cfg.hop;
    if frames == 0 || len <= cfg.pad() {
        return invalid(format!("{frames} frames are too few to invert"));
    }
    let n = cfg.fft_size;
    let padded_len = len + 2 * cfg.pad();
    let mut acc = vec![0.0; padded_len];
    let mut wsum = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.inverse.get_inplace_scratch_len()];
    for t in 0..frames {
        for f in 0..nf {
            buf[f] = Complex64::new(s.re[[t, f]], s.im[[t, f]]);
        }
        // Hermitian completion; the DC and Nyquist bins keep only their real part.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for f in 1..n / 2 {
            buf[n - f] = buf[f].conj();
        }
        plan.inverse.process_with_scratch(&mut buf, &mut scratch);
        let start = t * cfg.hop;
        for (k, w) in plan.window.iter().enumerate() {
            acc[start + k] += w * buf[k].re / n as f64;
            wsum[start + k] += w * w;
        }
    }
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    for i in 0..padded_len {
        let j = reflect(i, cfg.pad(), len);
        num[j] += acc[i];
        den[j] += wsum[i];
    }
    let samples = num
        .iter()
        .zip(&den)
        .map(|(a, d)| if *d > 0.0 { a / d } else { 0.0 })
        .collect();
    Ok(Waveform { samples, sample_rate: cfg.sample_rate })
}

/// Polar decomposition. Bins with magnitude `<= PHASE_EPS` get the phase
/// pair `(1, 0)`.
pub fn split_mag_phase(s: &ComplexSpectrogram) -> (MagnitudeSpectrogram, PhaseSpectrogram) {
    let (t, nf) = s.re.dim();
    let mut mag = Array2::zeros((t, nf));
    let mut phase = Array2::zeros((t, 2 * nf));
    for i in 0..t {
        for f in 0..nf {
            let (re, im) = (s.re[[i, f]], s.im[[i, f]]);
            let m = re.hypot(im);
            mag[[i, f]] = m;
            if m > PHASE_EPS {
                phase[[i, f]] = re / m;
                phase[[i, nf + f]] = im / m;
            } else {
                phase[[i, f]] = 1.0;
            }
        }
    }
    (MagnitudeSpectrogram { values: mag }, PhaseSpectrogram { values: phase })
}

pub fn merge_mag_phase(
    m: &MagnitudeSpectrogram,
    p: &PhaseSpectrogram,
    config: StftConfig,
) -> Result<ComplexSpectrogram> {
    let (t, nf) = m.values.dim();
    if p.values.dim() != (t, 2 * nf) {
        return invalid(format!(
            "phase shape {:?} does not match magnitude shape {:?} (expected {:?})",
            p.values.dim(),
            (t, nf),
            (t, 2 * nf)
        ));
    }
    if nf != config.n_freqs() {
        return invalid(format!("{nf} bins do not match config ({})", config.n_freqs()));
    }
    let re = &m.values * &p.values.slice(ndarray::s![.., ..nf]);
    let im = &m.values * &p.values.slice(ndarray::s![.., nf..]);
    Ok(ComplexSpectrogram { re, im, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    #[test]
    fn hann_small_cases() {
        let w = hann_window(4).unwrap();
        for (a, b) in w.iter().zip([0.0, 0.5, 1.0, 0.5]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let w = hann_window(2).unwrap();
        assert_abs_diff_eq!(w[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-15);
        assert!(hann_window(1).is_err());
        assert!(hann_window(0).is_err());
    }

    #[test]
    fn squared_window_overlap_is_constant() {
        // Brute force: sum w^2 over every shift that covers a sample.
        let w = hann_window(640).unwrap();
        let hop = 160;
        let len = 640 * 4;
        let mut total = vec![0.0; len];
        let mut start = 0;
        while start + 640 <= len {
            for k in 0..640 {
                total[start + k] += w[k] * w[k];
            }
            start += hop;
        }
        for v in &total[640..len - 640] {
            assert_abs_diff_eq!(*v, 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn config_rejects_bad_geometry() {
        assert!(StftConfig { hop: 100, ..Default::default() }.validate().is_err());
        assert!(StftConfig { fft_size: 512, ..Default::default() }.validate().is_err());
        assert!(StftConfig { fft_size: 1024, ..Default::default() }.validate().is_ok());
        assert_eq!(StftConfig::default().n_freqs(), 321);
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let x = Waveform::zeros(38_400, 16_000);
        let s = stft(&x, &StftConfig::default()).unwrap();
        assert_eq!(s.re.dim(), (240, 321));
        assert!(s.re.iter().chain(s.im.iter()).all(|v| *v == 0.0));
        let y = istft(&s).unwrap();
        assert_eq!(y.len(), 38_400);
        assert!(y.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn length_must_be_hop_multiple() {
        let x = Waveform::zeros(16_001, 16_000);
        assert!(stft(&x, &StftConfig::default()).is_err());
        let x = Waveform::zeros(160, 16_000);
        assert!(stft(&x, &StftConfig::default()).is_err());
    }

    #[test]
    fn cosine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).cos()).collect();
        let x = Waveform::new(x, 16_000).unwrap();
        let cfg = StftConfig::default();
        let s = stft(&x, &cfg).unwrap();
        let (mag, _) = split_mag_phase(&s);
        let w = hann_window(640).unwrap();
        for t in 4..s.n_frames() - 4 {
            let row = mag.values.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b })
                .0;
            assert_eq!(argmax, 40);
            // Direct DFT of the same frame at bin 40.
            let start = t * cfg.hop - cfg.window_len / 2;
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..640 {
                let v = w[n] * x.samples[start + n];
                let ang = -2.0 * PI * 40.0 * n as f64 / 640.0;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            assert_abs_diff_eq!(s.re[[t, 40]], re, epsilon = 1e-8);
            assert_abs_diff_eq!(s.im[[t, 40]], im, epsilon = 1e-8);
        }
    }

    #[test]
    fn round_trip_and_linearity() {
        let cfg = StftConfig::default();
        let a = random_wave(16_000, 1);
        let b = random_wave(16_000, 2);
        let sa = stft(&a, &cfg).unwrap();
        let back = istft(&sa).unwrap();
        let peak = a.peak();
        for (x, y) in a.samples.iter().zip(&back.samples) {
            assert!((x - y).abs() < 1e-6 * peak);
        }
        let doubled = istft(&sa.scaled(2.0)).unwrap();
        for (x, y) in a.samples.iter().zip(&doubled.samples) {
            assert!((2.0 * x - y).abs() < 1e-9);
        }
        let sb = stft(&b, &cfg).unwrap();
        let mix = a.scaled(0.3).add(&b.scaled(-1.7)).unwrap();
        let smix = stft(&mix, &cfg).unwrap();
        for ((m, x), y) in smix.re.iter().zip(sa.re.iter()).zip(sb.re.iter()) {
            assert!((m - (0.3 * x - 1.7 * y)).abs() <= 1e-9 * (1.0 + m.abs()));
        }
    }

    #[test]
    fn energy_grows_with_gain() {
        let cfg = StftConfig::default();
        let x = random_wave(8_000, 7);
        let energy = |g: f64| {
            let s = stft(&x.scaled(g), &cfg).unwrap();
            s.re.iter().chain(s.im.iter()).map(|v| v * v).sum::<f64>()
        };
        let e: Vec<f64> = [0.1, 0.5, 1.0, 2.0].iter().map(|g| energy(*g)).collect();
        assert!(e.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn split_and_merge() {
        let cfg = StftConfig { window_len: 8, hop: 2, fft_size: 8, sample_rate: 16_000 };
        let mut s = ComplexSpectrogram::zeros(2, cfg);
        s.re[[0, 0]] = 3.0;
        s.im[[0, 0]] = 4.0;
        let (m, p) = split_mag_phase(&s);
        assert_abs_diff_eq!(m.values[[0, 0]], 5.0);
        assert_eq!(p.pair(0, 0), (0.6, 0.8));
        assert_eq!(m.values[[1, 2]], 0.0);
        assert_eq!(p.pair(1, 2), (1.0, 0.0));

        let ones = MagnitudeSpectrogram { values: Array2::ones((2, 5)) };
        let mut conv = Array2::zeros((2, 10));
        conv.slice_mut(ndarray::s![.., ..5]).fill(1.0);
        let merged = merge_mag_phase(&ones, &PhaseSpectrogram { values: conv.clone() }, cfg).unwrap();
        assert!(merged.re.iter().all(|v| *v == 1.0));
        assert!(merged.im.iter().all(|v| *v == 0.0));

        let mut single = MagnitudeSpectrogram { values: Array2::zeros((2, 5)) };
        single.values[[1, 3]] = 2.0;
        let mut up = conv;
        up[[1, 3]] = 0.0;
        up[[1, 8]] = 1.0;
        let merged = merge_mag_phase(&single, &PhaseSpectrogram { values: up }, cfg).unwrap();
        assert_eq!((merged.re[[1, 3]], merged.im[[1, 3]]), (0.0, 2.0));

        let bad = PhaseSpectrogram { values: Array2::zeros((2, 9)) };
        assert!(merge_mag_phase(&single, &bad, cfg).is_err());
    }

    #[test]
    fn split_merge_round_trip_on_random_spectrogram() {
        let cfg = StftConfig::default();
        let s = stft(&random_wave(3_200, 3), &cfg).unwrap();
        let (m, p) = split_mag_phase(&s);
        let nf = cfg.n_freqs();
        for t in 0..s.n_frames() {
            for f in 0..nf {
                let (a, b) = p.pair(t, f);
                assert_abs_diff_eq!(a.hypot(b), 1.0, epsilon = 1e-12);
            }
        }
        let back = merge_mag_phase(&m, &p, cfg).unwrap();
        for (x, y) in back.re.iter().chain(back.im.iter()).zip(s.re.iter().chain(s.im.iter())) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }
}
