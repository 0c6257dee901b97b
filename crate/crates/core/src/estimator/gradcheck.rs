//! Central-difference verification of [`loss_gradient`].
//!
//! The numerical side only calls [`nll_loss`], so it shares no code with the
//! backpropagation it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{loss_gradient, nll_loss, Dof, EstimatorError, FitConfig, SampleSet, StudentTEstimator};
use crate::types::time_grid;

/// Perturbation used for the central differences.
pub const STEP: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
///
/// Gradient entries below the floor are compared in absolute terms; central
/// differences of a loss of size L carry rounding noise near `ε·L/STEP`.
pub const REL_FLOOR: f64 = 1e-3;

/// Acceptance bound on the per-parameter relative error.
pub const MAX_REL_ERROR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub dof: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_param: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every parameter's analytic derivative with a central difference.
pub fn check(samples: &SampleSet, estimator: &StudentTEstimator) -> Result<GradCheckReport, EstimatorError> {
    let analytic = loss_gradient(samples, estimator)?;
    let base = estimator.params();
    let mut probe = estimator.clone();
    let mut params = base.clone();
    let (mut worst, mut worst_param) = (0.0f64, 0);
    for i in 0..base.len() {
        params[i] = base[i] + STEP;
        probe.set_params(&params);
        let up = nll_loss(samples, &probe)?;
        params[i] = base[i] - STEP;
        probe.set_params(&params);
        let down = nll_loss(samples, &probe)?;
        params[i] = base[i];
        let err = relative_error(analytic[i], (up - down) / (2.0 * STEP));
        if err > worst {
            worst = err;
            worst_param = i;
        }
    }
    Ok(GradCheckReport { dof: estimator.dof().to_string(), params: base.len(), max_rel_error: worst, worst_param })
}

/// A random small problem: random network weights, random bundle, given ν.
///
/// The networks are kept narrow so the check stays fast; the bundle has a
/// couple of planted outliers so heavy-tail terms are exercised.
pub fn random_problem(seed: u64, dof: Dof) -> (SampleSet, StudentTEstimator) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(2..=5);
    let steps = rng.random_range(3..=8);
    let channels = rng.random_range(1..=3);
    let grid = time_grid(steps).expect("steps >= 3");
    let mut values = Vec::with_capacity(count * steps * channels);
    for q in 0..count {
        let outlier = if q == 0 { rng.random_range(2.0..5.0) } else { 0.0 };
        for t in 0..steps {
            for c in 0..channels {
                let base = (grid[t] * (c as f64 + 1.0) * 2.0).sin();
                values.push(base + outlier + 0.2 * rng.random_range(-1.0..1.0));
            }
        }
    }
    let samples = SampleSet::new(grid, channels, values).expect("well-formed");
    let config = FitConfig { hidden: vec![8, 6], harmonics: 2, dof, ..FitConfig::default() };
    let mean: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..channels).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut est = StudentTEstimator::initialize(&config, &mean, &var, &mut rng).expect("valid config");
    // Full-scale random weights on every layer, not the small output init used for training.
    let params: Vec<f64> = est.params().iter().map(|p| p + 0.3 * rng.random_range(-1.0..1.0)).collect();
    est.set_params(&params);
    (samples, est)
}
