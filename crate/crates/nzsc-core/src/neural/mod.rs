//! Recurrent actor-critic networks with exact reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod policy;
pub mod tape;

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, TraitDescriptor};
pub use policy::{PolicyNetwork, PolicyShape};
pub use tape::{Scalar, Tape, Var};

/// Central finite-difference gradient of `f` at `params`; the independent
/// check the analytic backward pass is verified against.
pub fn finite_difference_gradient<F>(f: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let original = work[i];
        work[i] = original + step;
        let plus = f(&work);
        work[i] = original - step;
        let minus = f(&work);
        work[i] = original;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Largest relative disagreement between two gradient vectors; small
/// entries compare against an absolute floor so noise below `1e-4` cannot
/// dominate the ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(1e-4))
        .fold(0.0, f64::max)
}
