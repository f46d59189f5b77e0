use std::collections::BTreeMap;

use serde::Serialize;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the denominator of the relative error, so parameters whose true
    /// gradient vanishes are judged by absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let value = f(inputs)?.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("gradient_check objective".into()));
    }
    Ok(value)
}

/// Compares autodiff gradients of the scalar `f` against central differences.
///
/// The error for a parameter is `‖g_auto − g_num‖ / max(‖g_auto‖, ‖g_num‖, floor)`.
/// `f` must be deterministic: it is re-evaluated twice per scalar parameter.
pub fn gradient_check<F>(
    f: F,
    params: &[(String, Tensor)],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = params
        .iter()
        .map(|(_, t)| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<_>>()?;
    let loss = f(&leaves)?;
    if !loss.item()?.is_finite() {
        return Err(Error::NonFinite("gradient_check objective".into()));
    }
    loss.backward()?;

    let mut constants: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
    let mut per_parameter_errors = BTreeMap::new();
    for (p, (name, _)) in params.iter().enumerate() {
        let analytic = leaves[p]
            .grad()
            .unwrap_or_else(|| vec![0.0; leaves[p].numel()]);
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        let base = leaves[p].to_vec();
        let shape = leaves[p].shape().to_vec();
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + opts.step;
            constants[p] = Tensor::new(&shape, probe.clone())?;
            let plus = eval_scalar(&f, &constants)?;
            probe[i] = base[i] - opts.step;
            constants[p] = Tensor::new(&shape, probe)?;
            let minus = eval_scalar(&f, &constants)?;
            numeric.push((plus - minus) / (2.0 * opts.step));
        }
        constants[p] = Tensor::new(&shape, base)?;
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.iter().copied())
            .max(norm(numeric.iter().copied()))
            .max(opts.floor);
        per_parameter_errors.insert(name.clone(), diff / scale);
    }
    let max_relative_error = per_parameter_errors.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_parameter_errors,
    })
}
