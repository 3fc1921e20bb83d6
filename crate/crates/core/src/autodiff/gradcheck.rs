//! Central finite differences, the reference against which analytic
//! gradients are checked.

use super::Tensor;

/// Step used by all gradient checks.
pub const STEP: f64 = 1e-5;
/// Per-coordinate relative error budget.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: coordinates whose gradients are both below this
/// magnitude are compared on an absolute scale of `TOLERANCE * FLOOR`.
pub const FLOOR: f64 = 1e-4;

/// Numerical gradient of `f` with respect to every coordinate of every input.
pub fn central_difference<F>(mut f: F, inputs: &[Tensor], step: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut probe = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[t].numel());
        for i in 0..inputs[t].numel() {
            let orig = probe[t].values()[i];
            probe[t].values_mut()[i] = orig + step;
            let up = f(&probe);
            probe[t].values_mut()[i] = orig - step;
            let down = f(&probe);
            probe[t].values_mut()[i] = orig;
            g.push((up - down) / (2.0 * step));
        }
        grads.push(g);
    }
    grads
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest per-coordinate relative error between two gradient sets.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.len(), n.len());
            a.iter().zip(n).map(|(x, y)| relative_error(*x, *y))
        })
        .fold(0.0, f64::max)
}
