//! Generic Bayesian computation: the target-density contract, parameter
//! transforms, an HMC sampler with warmup adaptation, and convergence
//! diagnostics.

mod convergence;
mod draws;
mod hmc;
pub mod transform;

pub use convergence::{convergence, ess_bulk, split_rhat, Convergence};
pub use draws::{summarize_draws, ParamSummary, PosteriorDraws, SamplerStats};
pub use hmc::{sample, SamplerConfig};

/// A log density over an unconstrained real vector, with its gradient.
///
/// Implementations fold every transform Jacobian into `logp_grad`, so the
/// sampler never sees constrained values. They must be shareable read-only
/// across chains running on different threads.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn logp_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    fn logp(&self, position: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.logp_grad(position, &mut grad)
    }

    /// Labels of the constrained parameters returned by [`constrain`](Self::constrain).
    fn param_names(&self) -> Vec<String>;

    /// Constrained parameter values, in [`param_names`](Self::param_names) order.
    fn constrain(&self, position: &[f64]) -> Vec<f64>;

    fn constrain_named(&self, position: &[f64]) -> Vec<(String, f64)> {
        self.param_names().into_iter().zip(self.constrain(position)).collect()
    }

    /// Labels of per-draw derived quantities.
    fn derived_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Derived quantities computed from constrained parameters.
    fn derived(&self, _params: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// Labels of the unconstrained coordinates, used in error messages.
    fn unconstrained_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("v[{i}]")).collect()
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Central finite-difference gradient with step `h`.
pub fn finite_difference_gradient<T: TargetDensity + ?Sized>(target: &T, position: &[f64], h: f64) -> Vec<f64> {
    let mut x = position.to_vec();
    (0..position.len())
        .map(|i| {
            x[i] = position[i] + h;
            let up = target.logp(&x);
            x[i] = position[i] - h;
            let down = target.logp(&x);
            x[i] = position[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate discrepancy `|g - fd| / max(1, |g|)` between the
/// analytic gradient and central finite differences.
pub fn gradient_error<T: TargetDensity + ?Sized>(target: &T, position: &[f64], h: f64) -> f64 {
    let mut grad = vec![0.0; target.dim()];
    target.logp_grad(position, &mut grad);
    let fd = finite_difference_gradient(target, position, h);
    grad.iter()
        .zip(&fd)
        .map(|(g, f)| (g - f).abs() / g.abs().max(1.0))
        .fold(0.0, f64::max)
}
