//! Central finite differences, used to check tape gradients.

use crate::params::ParamSet;

/// Numerical gradient of `loss` with respect to every scalar in `params`,
/// by central differences with step `h`.
pub fn numeric_gradient(
    params: &ParamSet,
    h: f64,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> Vec<f64> {
    let base = params.flatten();
    let mut work = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        work.assign_flat(&probe);
        let up = loss(&work);
        probe[i] = base[i] - h;
        work.assign_flat(&probe);
        let down = loss(&work);
        probe[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Largest per-component relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
