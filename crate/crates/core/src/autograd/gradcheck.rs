//! Central finite-difference verification of graph gradients.

use ndarray::Array3;

use super::{Graph, ParamStore, Var};
use crate::error::{invalid, Result};

pub const STEP: f64 = 1e-5;

/// Gradient norms below this are compared absolutely.
const NORM_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Largest norm-wise relative error over all checked tensors.
    pub max_rel_error: f64,
    /// Name of the tensor with the largest error.
    pub worst: String,
    pub n_values: usize,
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

fn scalar_loss<F>(inputs: &[Array3<f64>], params: &ParamStore<f64>, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return invalid(format!("gradient check needs a scalar loss, got {:?}", v.dim()));
    }
    Ok(v[[0, 0, 0]])
}

/// Compares the backward pass of `build` against central differences with
/// respect to every element of `inputs` and of every trainable parameter.
pub fn check<F>(inputs: &[Array3<f64>], params: &ParamStore<f64>, mut build: F) -> Result<Report>
where
    F: FnMut(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let (input_grads, param_grads) = {
        let mut g = Graph::new(params);
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
        let loss = build(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        let ig: Vec<Array3<f64>> =
            vars.iter().zip(inputs).map(|(v, x)| grads.wrt(*v).cloned().unwrap_or_else(|| Array3::zeros(x.dim()))).collect();
        let pg: Vec<_> = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, p)| (id, grads.param(id).cloned().unwrap_or_else(|| Array3::zeros(p.value.dim()))))
            .collect();
        (ig, pg)
    };

    let mut report = Report { max_rel_error: 0.0, worst: String::new(), n_values: 0 };
    let mut note = |name: String, analytic: &Array3<f64>, numeric: &[f64]| {
        let e = relative_error(analytic.as_slice().expect("contiguous"), numeric);
        report.n_values += numeric.len();
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = name;
        }
    };

    let mut probe = inputs.to_vec();
    for (i, analytic) in input_grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let orig = probe[i].as_slice().unwrap()[k];
            probe[i].as_slice_mut().unwrap()[k] = orig + STEP;
            let up = scalar_loss(&probe, params, &mut build)?;
            probe[i].as_slice_mut().unwrap()[k] = orig - STEP;
            let down = scalar_loss(&probe, params, &mut build)?;
            probe[i].as_slice_mut().unwrap()[k] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
        note(format!("input {i}"), analytic, &numeric);
    }

    let mut store = params.clone();
    for (id, analytic) in &param_grads {
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let orig = store.get(*id).value.as_slice().unwrap()[k];
            store.get_mut(*id).value.as_slice_mut().unwrap()[k] = orig + STEP;
            let up = scalar_loss(inputs, &store, &mut build)?;
            store.get_mut(*id).value.as_slice_mut().unwrap()[k] = orig - STEP;
            let down = scalar_loss(inputs, &store, &mut build)?;
            store.get_mut(*id).value.as_slice_mut().unwrap()[k] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
        note(params.get(*id).name.clone(), analytic, &numeric);
    }
    Ok(report)
}
