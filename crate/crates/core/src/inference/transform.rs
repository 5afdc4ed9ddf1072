//! Bijections from unconstrained space onto parameter supports.

/// Maps `k - 1` free values onto the interior of the `k`-simplex by a
/// softmax with the last logit pinned at zero. Returns the simplex and the
/// log-Jacobian `sum_i ln p_i`.
pub fn simplex(free: &[f64]) -> (Vec<f64>, f64) {
    let m = free.iter().copied().fold(0.0_f64, f64::max);
    let mut p: Vec<f64> = free.iter().map(|v| (v - m).exp()).collect();
    p.push((-m).exp());
    let total: f64 = p.iter().sum();
    let log_total = total.ln();
    let mut log_jac = 0.0;
    for (i, pi) in p.iter_mut().enumerate() {
        let logit = if i < free.len() { free[i] } else { 0.0 };
        log_jac += logit - m - log_total;
        *pi /= total;
    }
    (p, log_jac)
}

/// Inverse of [`simplex`]: `v_j = ln p_j - ln p_k`.
pub fn simplex_inverse(p: &[f64]) -> Vec<f64> {
    let last = p[p.len() - 1].ln();
    p[..p.len() - 1].iter().map(|x| x.ln() - last).collect()
}

/// Pulls a gradient with respect to the simplex back to the free values:
/// `d/dv_j = p_j (g_j - sum_i p_i g_i)`.
pub fn simplex_pullback(p: &[f64], grad_p: &[f64], out: &mut [f64]) {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    for (j, o) in out.iter_mut().enumerate() {
        *o = p[j] * (grad_p[j] - dot);
    }
}

/// Exponential map onto `(0, inf)`; the log-Jacobian is the input itself.
#[inline]
pub fn positive(free: f64) -> (f64, f64) {
    (free.exp(), free)
}

#[inline]
pub fn positive_inverse(x: f64) -> f64 {
    x.ln()
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(logistic(x))`, stable for large `|x|`.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_maps_to_uniform() {
        let (p, _) = simplex(&[0.0, 0.0, 0.0]);
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn positive_map() {
        assert_eq!(positive(0.0), (1.0, 0.0));
        assert!((positive(2f64.ln()).0 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_thousand_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let v: Vec<f64> = (0..2).map(|_| rng.random_range(-8.0..8.0)).collect();
            let back = simplex_inverse(&simplex(&v).0);
            for (a, b) in v.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn log_jacobian_matches_determinant() {
        // k = 3: Jacobian of (p1, p2) w.r.t. (v1, v2) is diag(p) - p p^T
        let v = [0.3, -1.2];
        let (p, lj) = simplex(&v);
        let det = (p[0] * (1.0 - p[0])) * (p[1] * (1.0 - p[1])) - (p[0] * p[1]).powi(2);
        assert!((lj - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let f = |p: &[f64]| 2.0 * p[0].ln() + 3.0 * p[1] - p[2] * p[2];
        let v = [0.4, -0.7];
        let (p, _) = simplex(&v);
        let g = [2.0 / p[0], 3.0, -2.0 * p[2]];
        let mut out = [0.0; 2];
        simplex_pullback(&p, &g, &mut out);
        for j in 0..2 {
            let mut hi = v;
            let mut lo = v;
            hi[j] += 1e-6;
            lo[j] -= 1e-6;
            let fd = (f(&simplex(&hi).0) - f(&simplex(&lo).0)) / 2e-6;
            assert!((fd - out[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn logistic_helpers() {
        assert!((logistic(logit(0.3)) - 0.3).abs() < 1e-15);
        assert!((log_logistic(-800.0) + 800.0).abs() < 1e-9);
        assert!((log_logistic(0.5) - logistic(0.5).ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn simplex_is_valid(v in proptest::collection::vec(-30.0f64..30.0, 1..6)) {
            let (p, lj) = simplex(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(lj.is_finite());
        }
    }
}
