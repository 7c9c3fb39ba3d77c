//! Finite-difference oracle for gradient tests. Nothing here touches the
//! tape's backward path; tests compare its output against analytic gradients
//! so the two derivations stay independent.

/// Central difference d f / d x_i at every coordinate. `step` is the probe
/// half-width in input units.
pub fn central_diff<F>(x: &[f64], mut f: F, step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    out
}

/// Central difference for a single coordinate; used for spot checks where a
/// full sweep would be wasteful.
pub fn central_diff_at<F>(x: &[f64], i: usize, mut f: F, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    probe[i] = x[i] + step;
    let hi = f(&probe);
    probe[i] = x[i] - step;
    let lo = f(&probe);
    (hi - lo) / (2.0 * step)
}

/// Worst relative disagreement between two gradient vectors. Denominators
/// are floored (default 1e-2) so coordinates near zero are judged on an
/// absolute scale of `floor * tolerance` instead of exploding.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Default denominator floor for [`max_rel_err`].
pub const REL_ERR_FLOOR: f64 = 1e-2;
