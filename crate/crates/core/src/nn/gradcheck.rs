use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ModelParams};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a floor of `1e-6` on the denominator, so that two
/// vanishing derivatives compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Checks `f`'s tape gradient against central finite differences with step
/// `eps` on every parameter coordinate, or on a seeded random subsample of
/// `max_coords` coordinates when there are more.
pub fn grad_check<F>(f: F, params: &ModelParams, eps: f64, max_coords: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<_> = bound
        .vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = f(&mut tape, &bound)?;
        Ok(tape.value(loss).item())
    };

    let mut coords: Vec<(usize, usize)> = params
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), max_coords).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|k| coords[k]).collect();
    }

    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, coordinates_checked: coords.len(), worst: None };
    for (i, j) in coords {
        let orig = work.tensors()[i].data()[j];
        work.tensors_mut()[i].data_mut()[j] = orig + eps;
        let up = eval(&work)?;
        work.tensors_mut()[i].data_mut()[j] = orig - eps;
        let down = eval(&work)?;
        work.tensors_mut()[i].data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i].data()[j];
        let err = relative_error(a, numeric);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((params.names()[i].clone(), j, a, numeric));
        }
    }
    Ok(report)
}
