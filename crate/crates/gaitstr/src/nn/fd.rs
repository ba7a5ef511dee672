//! Finite-difference utilities shared by the gradient-check suites.

/// Relative error with a floor so near-zero gradients compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Central difference of a scalar function at `x0` with step `h`.
pub fn central_difference(f: &mut dyn FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Step size scaled to the magnitude of the coordinate.
pub fn step_for(x0: f64) -> f64 {
    1e-5 * x0.abs().max(1.0)
}

/// Deterministic subsample of coordinate indices: all of them when the
/// tensor is small, otherwise an evenly spaced selection.
pub fn sample_coords(len: usize, max_n: usize) -> Vec<usize> {
    if len <= max_n {
        (0..len).collect()
    } else {
        (0..max_n)
            .map(|i| i * len / max_n + (len / (2 * max_n)).min(len - 1))
            .map(|i| i.min(len - 1))
            .collect()
    }
}
