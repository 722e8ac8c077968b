//! Helpers shared by unit tests.

use ndarray::Array2;
use rand::Rng;

pub fn central_difference(step: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(step) - f(-step)) / (2.0 * step)
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂); 0 when both vectors vanish.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

pub fn random_unit_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = random_matrix(rng, rows, cols, 1.0);
    for mut row in m.outer_iter_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}
