use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::approx::map::ParamMap;
use crate::error::{LabError, Result};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Central finite differences of a scalar function.
pub fn finite_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares analytic input and parameter gradients of `u . map(x)` against
/// central differences at `n_probes` random inputs and upstream vectors.
/// Returns the largest relative error seen.
pub fn gradient_check<R: Rng + ?Sized>(map: &ParamMap, n_probes: usize, h: f64, rng: &mut R) -> Result<f64> {
    if !map.all_finite() {
        return Err(LabError::NonFinite("map parameters"));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes {
        let x: Vec<f64> = (0..map.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..map.output_dim()).map(|_| StandardNormal.sample(rng)).collect();
        let (_, ig, pg) = map.forward_backward(&x, &u)?;
        let scalar = |m: &ParamMap, input: &[f64]| -> f64 {
            m.forward(input)
                .expect("shape checked above")
                .iter()
                .zip(&u)
                .map(|(o, w)| o * w)
                .sum()
        };
        let num_ig = finite_difference(|xi| scalar(map, xi), &x, h);
        let mut probe = map.clone();
        let num_pg = finite_difference(
            |p| {
                probe.params_mut().copy_from_slice(p);
                scalar(&probe, &x)
            },
            map.params(),
            h,
        );
        worst = worst
            .max(max_relative_error(&ig, &num_ig))
            .max(max_relative_error(&pg, &num_pg));
    }
    if !worst.is_finite() {
        return Err(LabError::NonFinite("gradient check"));
    }
    Ok(worst)
}
