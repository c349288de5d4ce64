use nalgebra::{DMatrix, DVector};

use crate::dsp::Waveform;
use crate::error::{invalid, Result};

/// Every ratio is clamped to `[-DB_CAP, DB_CAP]`.
pub const DB_CAP: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssResult {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
}

/// The three orthogonal parts an estimate is split into.
#[derive(Debug, Clone)]
pub(crate) struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifacts: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return DB_CAP;
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

pub(crate) fn decompose(estimate: &[f64], target: &[f64], interferers: &[&[f64]]) -> Decomposition {
    let scale = dot(estimate, target) / energy(target);
    let s_target: Vec<f64> = target.iter().map(|v| v * scale).collect();

    // Least-squares projection onto span{target, interferers}. The
    // pseudo-inverse tolerates linearly dependent references.
    let mut refs: Vec<&[f64]> = vec![target];
    refs.extend_from_slice(interferers);
    let k = refs.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(refs[i], refs[j]));
    let rhs = DVector::from_fn(k, |i, _| dot(refs[i], estimate));
    let max_diag = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let coef = gram
        .svd(true, true)
        .solve(&rhs, max_diag * 1e-12)
        .unwrap_or_else(|_| DVector::zeros(k));
    let mut proj = vec![0.0; estimate.len()];
    for (c, r) in coef.iter().zip(&refs) {
        for (p, v) in proj.iter_mut().zip(r.iter()) {
            *p += c * v;
        }
    }
    let interference = proj.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let artifacts = estimate.iter().zip(&proj).map(|(e, p)| e - p).collect();
    Decomposition { target: s_target, interference, artifacts }
}

/// SDR, SIR and SAR of `estimate` against `target`, treating everything in
/// the span of `interferers` (and not explained by the target) as
/// interference and the remainder as artifacts.
pub fn bss_eval(estimate: &Waveform, target: &Waveform, interferers: &[Waveform]) -> Result<BssResult> {
    let n = estimate.len();
    if target.len() != n || interferers.iter().any(|w| w.len() != n) {
        return invalid(format!(
            "length mismatch: estimate {n}, target {}, interferers {:?}",
            target.len(),
            interferers.iter().map(Waveform::len).collect::<Vec<_>>()
        ));
    }
    if energy(&target.samples) == 0.0 {
        return invalid("target signal is identically zero");
    }
    let refs: Vec<&[f64]> = interferers.iter().map(|w| w.samples.as_slice()).collect();
    let d = decompose(&estimate.samples, &target.samples, &refs);
    let e_target = energy(&d.target);
    let e_interf = energy(&d.interference);
    let e_artif = energy(&d.artifacts);
    let distortion: Vec<f64> = d.interference.iter().zip(&d.artifacts).map(|(a, b)| a + b).collect();
    let signal: Vec<f64> = d.target.iter().zip(&d.interference).map(|(a, b)| a + b).collect();
    Ok(BssResult {
        sdr_db: ratio_db(e_target, energy(&distortion)),
        sir_db: ratio_db(e_target, e_interf),
        sar_db: ratio_db(energy(&signal), e_artif),
    })
}
