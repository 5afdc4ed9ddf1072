//! Static-trajectory Hamiltonian Monte Carlo.
//!
//! Warmup follows the usual windowed scheme: a fast initial buffer for step
//! size only, doubling slow windows that re-estimate a diagonal inverse
//! metric, and a terminal buffer that settles the step size. The number of
//! leapfrog steps is `trajectory_length / step_size`, capped at
//! `max_leapfrog` and jittered by +-20% per iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draws::{PosteriorDraws, SamplerStats};
use super::TargetDensity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    pub sampling_iters: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_leapfrog: usize,
    /// Integration time in metric-scaled units.
    pub trajectory_length: f64,
    /// Half-width of the uniform perturbation applied to each chain's start.
    pub init_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup_iters: 1000,
            sampling_iters: 1000,
            seed: 1,
            target_accept: 0.8,
            max_leapfrog: 64,
            trajectory_length: 1.5,
            init_jitter: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.sampling_iters == 0 {
            return Err(Error::InvalidParameter("chains and sampling_iters must be positive".into()));
        }
        if !(self.target_accept > 0.5 && self.target_accept < 0.99) {
            return Err(Error::InvalidParameter(format!(
                "target_accept {} outside (0.5, 0.99)",
                self.target_accept
            )));
        }
        if self.max_leapfrog == 0 || !(self.trajectory_length > 0.0) {
            return Err(Error::InvalidParameter("max_leapfrog and trajectory_length must be positive".into()));
        }
        Ok(())
    }
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;
const DIVERGENCE_WARN_RATE: f64 = 0.1;

struct DualAveraging {
    mu: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), log_eps_bar: 0.0, h_bar: 0.0, count: 0.0, target }
    }

    /// Returns the next step size to use.
    fn update(&mut self, accept: f64) -> f64 {
        self.count += 1.0;
        let w = 1.0 / (self.count + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        let log_eps = self.mu - self.count.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.count.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warmup phases: initial buffer, slow-window ends, terminal buffer start.
struct Schedule {
    init_buffer: usize,
    window_ends: Vec<usize>,
}

impl Schedule {
    fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
        if warmup < 20 {
            return Self { init_buffer: warmup, window_ends: Vec::new() };
        }
        if init + term + base > warmup {
            init = warmup * 15 / 100;
            term = warmup / 10;
            base = warmup - init - term;
        }
        let slow_end = warmup - term;
        let mut ends = Vec::new();
        let mut start = init;
        while start < slow_end {
            let mut end = start + base;
            // the last window absorbs anything too short to double
            if end + 2 * base > slow_end {
                end = slow_end;
            }
            ends.push(end);
            start = end;
            base *= 2;
        }
        Self { init_buffer: init, window_ends: ends }
    }
}

struct Chain<'a, T: TargetDensity + ?Sized> {
    target: &'a T,
    rng: ChaCha8Rng,
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    inv_metric: Vec<f64>,
    // scratch
    q_new: Vec<f64>,
    p: Vec<f64>,
    grad_new: Vec<f64>,
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

impl<'a, T: TargetDensity + ?Sized> Chain<'a, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    fn draw_momentum(&mut self) {
        for (pi, m) in self.p.iter_mut().zip(&self.inv_metric) {
            let z: f64 = self.rng.sample(StandardNormal);
            *pi = z / m.sqrt();
        }
    }

    /// Runs `steps` leapfrog steps from the current state into the scratch
    /// buffers and returns the proposal's log density.
    fn leapfrog(&mut self, eps: f64, steps: usize) -> f64 {
        self.q_new.copy_from_slice(&self.q);
        self.grad_new.copy_from_slice(&self.grad);
        let mut logp = self.logp;
        for _ in 0..steps {
            for (p, g) in self.p.iter_mut().zip(&self.grad_new) {
                *p += 0.5 * eps * g;
            }
            for ((q, p), m) in self.q_new.iter_mut().zip(&self.p).zip(&self.inv_metric) {
                *q += eps * m * p;
            }
            logp = self.target.logp_grad(&self.q_new, &mut self.grad_new);
            if !logp.is_finite() {
                return f64::NEG_INFINITY;
            }
            for (p, g) in self.p.iter_mut().zip(&self.grad_new) {
                *p += 0.5 * eps * g;
            }
        }
        logp
    }

    fn transition(&mut self, eps: f64, steps: usize) -> Transition {
        self.draw_momentum();
        let h0 = -self.logp + self.kinetic(&self.p);
        let logp_new = self.leapfrog(eps, steps);
        let h1 = -logp_new + self.kinetic(&self.p);
        let delta = h1 - h0;
        let divergent = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
        let accept_prob = if divergent { 0.0 } else { (-delta).exp().min(1.0) };
        let u: f64 = self.rng.random();
        if !divergent && u < accept_prob {
            std::mem::swap(&mut self.q, &mut self.q_new);
            std::mem::swap(&mut self.grad, &mut self.grad_new);
            self.logp = logp_new;
        }
        Transition { accept_prob, divergent }
    }

    /// Doubles or halves a step size until a single step's acceptance
    /// probability crosses one half.
    fn reasonable_step(&mut self, mut eps: f64) -> f64 {
        let accept = |chain: &mut Self, eps: f64| {
            chain.draw_momentum();
            let h0 = -chain.logp + chain.kinetic(&chain.p);
            let lp = chain.leapfrog(eps, 1);
            let h1 = -lp + chain.kinetic(&chain.p);
            let a = (h0 - h1).exp();
            if a.is_nan() {
                0.0
            } else {
                a
            }
        };
        let up = accept(self, eps) > 0.5;
        for _ in 0..100 {
            let a = accept(self, eps);
            if up && a <= 0.5 {
                return eps / 2.0;
            }
            if !up && a > 0.5 {
                return eps;
            }
            eps = if up { eps * 2.0 } else { eps / 2.0 };
        }
        eps
    }
}

fn steps_for(config: &SamplerConfig, eps: f64, rng: &mut ChaCha8Rng) -> usize {
    let base = (config.trajectory_length / eps).ceil().clamp(1.0, config.max_leapfrog as f64);
    let jittered = base * rng.random_range(0.8..=1.2);
    // stochastic rounding keeps the jitter alive when the base count is small
    let frac = jittered - jittered.floor();
    let n = jittered.floor() as usize + usize::from(rng.random::<f64>() < frac);
    n.clamp(1, config.max_leapfrog)
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    derived: Vec<Vec<f64>>,
    step_size: f64,
    divergences: usize,
    mean_accept: f64,
    leapfrog_steps: usize,
}

fn run_chain<T: TargetDensity + ?Sized>(target: &T, config: &SamplerConfig, chain_id: usize) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_id as u64 + 1);

    let mut q = target.initial_point();
    for x in q.iter_mut() {
        *x += rng.random_range(-1.0..=1.0) * config.init_jitter;
    }
    let mut grad = vec![0.0; dim];
    let logp = target.logp_grad(&q, &mut grad);
    if !logp.is_finite() {
        return Err(Error::Sampler(format!("non-finite log density at initialization (chain {chain_id})")));
    }
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        let name = target.unconstrained_names().get(bad).cloned().unwrap_or_else(|| format!("v[{bad}]"));
        return Err(Error::Sampler(format!("non-finite gradient at initialization for `{name}` (chain {chain_id})")));
    }

    let mut chain = Chain {
        target,
        rng,
        q,
        grad,
        logp,
        inv_metric: vec![1.0; dim],
        q_new: vec![0.0; dim],
        p: vec![0.0; dim],
        grad_new: vec![0.0; dim],
    };

    let schedule = Schedule::new(config.warmup_iters);
    let mut eps = chain.reasonable_step(1.0);
    let mut adapt = DualAveraging::new(eps, config.target_accept);
    let mut window: Vec<Vec<f64>> = Vec::new();
    let mut next_window = 0;

    for it in 0..config.warmup_iters {
        let steps = steps_for(config, eps, &mut chain.rng);
        let t = chain.transition(eps, steps);
        eps = adapt.update(t.accept_prob);

        let in_slow = it >= schedule.init_buffer && next_window < schedule.window_ends.len();
        if in_slow {
            window.push(chain.q.clone());
            if it + 1 == schedule.window_ends[next_window] {
                let n = window.len() as f64;
                for j in 0..dim {
                    let m = window.iter().map(|w| w[j]).sum::<f64>() / n;
                    let v = window.iter().map(|w| (w[j] - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                    // shrink toward a small constant, as in the standard scheme
                    chain.inv_metric[j] = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
                }
                window.clear();
                next_window += 1;
                eps = chain.reasonable_step(eps);
                adapt = DualAveraging::new(eps, config.target_accept);
            }
        }
    }
    if config.warmup_iters > 0 {
        eps = adapt.final_step();
    }

    let mut draws = Vec::with_capacity(config.sampling_iters);
    let mut derived = Vec::with_capacity(config.sampling_iters);
    let (mut divergences, mut accept_sum, mut leapfrog_steps) = (0usize, 0.0, 0usize);
    for _ in 0..config.sampling_iters {
        let steps = steps_for(config, eps, &mut chain.rng);
        leapfrog_steps += steps;
        let t = chain.transition(eps, steps);
        divergences += usize::from(t.divergent);
        accept_sum += t.accept_prob;
        let params = target.constrain(&chain.q);
        derived.push(target.derived(&params));
        draws.push(params);
    }
    Ok(ChainOutput {
        draws,
        derived,
        step_size: eps,
        divergences,
        mean_accept: accept_sum / config.sampling_iters as f64,
        leapfrog_steps,
    })
}

/// Runs `config.chains` independent chains. Each chain owns an RNG stream
/// derived from `(seed, chain index)`, so results do not depend on thread
/// scheduling.
pub fn sample<T: TargetDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let outputs = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<Vec<_>>>()?;

    let mut stats = SamplerStats::default();
    let mut draws = Vec::with_capacity(outputs.len());
    let mut derived = Vec::with_capacity(outputs.len());
    for o in outputs {
        stats.step_size.push(o.step_size);
        stats.divergences.push(o.divergences);
        stats.mean_accept.push(o.mean_accept);
        stats.leapfrog_steps.push(o.leapfrog_steps);
        draws.push(o.draws);
        derived.push(o.derived);
    }
    let total = (config.chains * config.sampling_iters) as f64;
    let rate = stats.divergences.iter().sum::<usize>() as f64 / total;
    if rate > DIVERGENCE_WARN_RATE {
        let msg = format!("{:.1}% of post-warmup transitions diverged", 100.0 * rate);
        log::warn!("{msg}");
        stats.warnings.push(msg);
    }
    Ok(PosteriorDraws {
        names: target.param_names(),
        derived_names: target.derived_names(),
        draws,
        derived,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_windows_cover_slow_phase() {
        let s = Schedule::new(1000);
        assert_eq!(s.init_buffer, 75);
        assert_eq!(s.window_ends, vec![100, 150, 250, 450, 950]);
        let short = Schedule::new(100);
        assert_eq!(short.init_buffer, 15);
        assert_eq!(short.window_ends, vec![90]);
        assert!(Schedule::new(10).window_ends.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig { target_accept: 0.3, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    use crate::inference::transform::{positive, simplex, simplex_pullback};
    use crate::inference::{convergence, gradient_error};
    use crate::stats::normal_cdf;

    struct Gaussian {
        rho: f64,
        dim: usize,
    }

    impl TargetDensity for Gaussian {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            if self.dim == 1 {
                g[0] = -x[0];
                return -0.5 * x[0] * x[0];
            }
            let det = 1.0 - self.rho * self.rho;
            let (a, b) = (x[0], x[1]);
            g[0] = -(a - self.rho * b) / det;
            g[1] = -(b - self.rho * a) / det;
            -0.5 * (a * a - 2.0 * self.rho * a * b + b * b) / det
        }
        fn param_names(&self) -> Vec<String> {
            (0..self.dim).map(|i| format!("x{i}")).collect()
        }
        fn constrain(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }

    /// Dirichlet(2, 2, 2) pushed through the simplex transform.
    struct Dirichlet;

    impl TargetDensity for Dirichlet {
        fn dim(&self) -> usize {
            2
        }
        fn logp_grad(&self, v: &[f64], g: &mut [f64]) -> f64 {
            let (p, lj) = simplex(v);
            // density prod p^(a-1) with a = 2, plus the Jacobian sum ln p
            let lp: f64 = p.iter().map(|x| x.ln()).sum();
            let gp: Vec<f64> = p.iter().map(|x| 2.0 / x).collect();
            simplex_pullback(&p, &gp, g);
            lp + lj
        }
        fn param_names(&self) -> Vec<String> {
            vec!["a".into(), "b".into(), "c".into()]
        }
        fn constrain(&self, v: &[f64]) -> Vec<f64> {
            simplex(v).0
        }
    }

    /// Gamma(3, 2) on a log-transformed coordinate.
    struct GammaLog;

    impl TargetDensity for GammaLog {
        fn dim(&self) -> usize {
            1
        }
        fn logp_grad(&self, v: &[f64], g: &mut [f64]) -> f64 {
            let (x, lj) = positive(v[0]);
            g[0] = (2.0 / x - 2.0) * x + 1.0;
            2.0 * x.ln() - 2.0 * x + lj
        }
        fn param_names(&self) -> Vec<String> {
            vec!["x".into()]
        }
        fn constrain(&self, v: &[f64]) -> Vec<f64> {
            vec![v[0].exp()]
        }
    }

    fn cfg(seed: u64) -> SamplerConfig {
        SamplerConfig { seed, ..Default::default() }
    }

    #[test]
    fn standard_normal_moments() {
        let draws = sample(&Gaussian { rho: 0.0, dim: 1 }, &cfg(3)).unwrap();
        assert_eq!((draws.chains(), draws.iters()), (4, 1000));
        let conv = &convergence(&draws).unwrap()[0];
        let x = draws.pooled("x0").unwrap();
        let s = ParamSummaryLite::of(&x);
        assert!(s.mean.abs() < 3.0 * conv.mcse_mean, "{} vs {}", s.mean, conv.mcse_mean);
        assert!((s.sd - 1.0).abs() < 0.05, "{}", s.sd);
        assert!(conv.split_rhat < 1.01);
    }

    #[test]
    fn correlated_gaussian() {
        let draws = sample(&Gaussian { rho: 0.8, dim: 2 }, &cfg(4)).unwrap();
        let a = draws.pooled("x0").unwrap();
        let b = draws.pooled("x1").unwrap();
        let (sa, sb) = (ParamSummaryLite::of(&a), ParamSummaryLite::of(&b));
        let cov = a.iter().zip(&b).map(|(x, y)| (x - sa.mean) * (y - sb.mean)).sum::<f64>() / (a.len() as f64 - 1.0);
        let r = cov / (sa.sd * sb.sd);
        assert!((r - 0.8).abs() < 0.05, "{r}");
        for c in convergence(&draws).unwrap() {
            assert!(c.split_rhat < 1.01, "{c:?}");
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let t = Gaussian { rho: 0.5, dim: 2 };
        let small = SamplerConfig { warmup_iters: 200, sampling_iters: 200, seed: 77, ..Default::default() };
        let a = sample(&t, &small).unwrap();
        let b = sample(&t, &small).unwrap();
        assert_eq!(a, b);
        let c = sample(&t, &SamplerConfig { seed: 78, ..small }).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn kolmogorov_smirnov_standard_normal() {
        let config = SamplerConfig { chains: 4, sampling_iters: 2500, seed: 2024, ..Default::default() };
        let draws = sample(&Gaussian { rho: 0.0, dim: 1 }, &config).unwrap();
        let mut x = draws.pooled("x0").unwrap();
        assert_eq!(x.len(), 10_000);
        // Thin to roughly independent draws before applying the iid KS bound.
        let ess = convergence(&draws).unwrap()[0].ess_mean.min(x.len() as f64);
        let stride = ((x.len() as f64 / ess).ceil() as usize).max(1);
        let mut thinned: Vec<f64> = x.iter().step_by(stride).copied().collect();
        thinned.sort_by(f64::total_cmp);
        let n = thinned.len() as f64;
        let d = thinned
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = normal_cdf(*v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic critical value at alpha = 0.01
        assert!(d < 1.628 / n.sqrt(), "D = {d}, n = {n}");
        x.clear();
    }

    #[test]
    fn dirichlet_through_simplex_transform() {
        let draws = sample(&Dirichlet, &cfg(9)).unwrap();
        let conv = convergence(&draws).unwrap();
        for (name, c) in ["a", "b", "c"].iter().zip(&conv) {
            let v = draws.pooled(name).unwrap();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            assert!((m - 1.0 / 3.0).abs() < 3.0 * c.mcse_mean, "{name}: {m} mcse {}", c.mcse_mean);
        }
        for chain in &draws.draws {
            for d in chain {
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn positive_transform_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v = [rng.random_range(-3.0..3.0)];
            assert!(gradient_error(&GammaLog, &v, 1e-5) < 1e-6);
        }
        let draws = sample(&GammaLog, &cfg(12)).unwrap();
        let x = draws.pooled("x").unwrap();
        let c = &convergence(&draws).unwrap()[0];
        let m = x.iter().sum::<f64>() / x.len() as f64;
        assert!((m - 1.5).abs() < 3.0 * c.mcse_mean, "{m}");
    }

    #[test]
    fn bad_start_names_parameter() {
        struct Broken;
        impl TargetDensity for Broken {
            fn dim(&self) -> usize {
                2
            }
            fn logp_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                g[1] = f64::NAN;
                0.0
            }
            fn param_names(&self) -> Vec<String> {
                vec!["a".into(), "b".into()]
            }
            fn constrain(&self, v: &[f64]) -> Vec<f64> {
                v.to_vec()
            }
            fn unconstrained_names(&self) -> Vec<String> {
                vec!["alpha".into(), "log_sigma".into()]
            }
        }
        let err = sample(&Broken, &cfg(1)).unwrap_err().to_string();
        assert!(err.contains("log_sigma"), "{err}");
    }

    struct ParamSummaryLite {
        mean: f64,
        sd: f64,
    }

    impl ParamSummaryLite {
        fn of(x: &[f64]) -> Self {
            Self { mean: crate::stats::mean(x), sd: crate::stats::std_dev(x) }
        }
    }
}
