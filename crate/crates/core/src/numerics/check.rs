//! Gradient verification against central finite differences.
//!
//! The checker only evaluates the provided closure, so it stays
//! independent of how the closure computes its value.

/// Central-difference partial derivatives of `f` at `x`, one coordinate
/// at a time.
pub fn central_difference_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error with a small absolute guard for near-zero pairs.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare an analytic gradient against central differences on the given
/// coordinates; returns the worst relative error seen.
pub fn max_gradient_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    worst
}
