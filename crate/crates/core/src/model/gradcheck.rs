use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params, Architecture, ForwardCache, ModelParams};
use crate::error::Result;
use crate::linalg::Matrix;

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub parameters: usize,
    /// Largest relative error over entries with magnitude above `1e-6`.
    pub max_relative_error: f64,
    /// Largest absolute error over the remaining near-zero entries.
    pub max_small_abs_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

const STEP: f64 = 1e-5;
const MAGNITUDE_FLOOR: f64 = 1e-6;
const BATCH: usize = 4;

/// Finite-difference check of [`ModelParams::backward`] on a random batch.
pub fn gradient_check(arch: &Architecture, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    gradient_check_with(arch, seed, tolerance, |p, cache, g| p.backward(cache, g))
}

/// Same as [`gradient_check`] with a caller-supplied backward pass.
pub fn gradient_check_with<F>(
    arch: &Architecture,
    seed: u64,
    tolerance: f64,
    backward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams, &ForwardCache, &Matrix) -> Result<Vec<f64>>,
{
    let mut params = init_params(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // non-zero biases so the check also exercises bias paths away from init
    for v in params.values_mut() {
        if *v == 0.0 {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let t = arch.tasks.len();
    let x = Matrix::from_vec(
        BATCH,
        arch.input_dim,
        (0..BATCH * arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let weights = Matrix::from_vec(BATCH, t, (0..BATCH * t).map(|_| rng.random_range(-1.0..1.0)).collect());

    let (_, cache) = params.forward(&x)?;
    let analytic = backward(&params, &cache, &weights)?;

    let objective = |p: &ModelParams| -> Result<f64> {
        let (out, _) = p.forward(&x)?;
        Ok(out
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(o, w)| o * w)
            .sum())
    };

    let mut max_rel: f64 = 0.0;
    let mut max_small: f64 = 0.0;
    let mut worst = None;
    for i in 0..params.len() {
        let orig = params.values()[i];
        params.values_mut()[i] = orig + STEP;
        let plus = objective(&params)?;
        params.values_mut()[i] = orig - STEP;
        let minus = objective(&params)?;
        params.values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic.get(i).copied().unwrap_or(f64::NAN);
        let diff = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        if scale > MAGNITUDE_FLOOR {
            let rel = diff / scale;
            if !(rel <= max_rel) {
                max_rel = rel;
                worst = Some(i);
            }
        } else if !(diff <= max_small) {
            max_small = diff;
        }
    }
    let passed = analytic.len() == params.len() && max_rel < tolerance && max_small < MAGNITUDE_FLOOR;
    Ok(GradCheckReport {
        parameters: params.len(),
        max_relative_error: max_rel,
        max_small_abs_error: max_small,
        worst_index: worst,
        tolerance,
        passed,
    })
}
