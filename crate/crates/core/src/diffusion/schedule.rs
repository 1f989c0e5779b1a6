//! Linear noise schedule and the closed-form forward/posterior identities.

use rand::Rng;

use crate::cloud::Point5D;
use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Variance used for the noise injected by each reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseVariance {
    /// `beta_t`, the forward-step variance.
    #[default]
    Beta,
    /// `gamma_t`, the true posterior variance.
    Posterior,
}

/// All per-step vectors are indexed by `t - 1` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior variances; `gamma_1 = 0` because `x_0` is then known exactly.
    pub gamma: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Domain(format!("need at least 2 diffusion steps, got {steps}")));
        }
        if !(0.0 < beta_1 && beta_1 < beta_t && beta_t < 1.0) {
            return Err(Error::Domain(format!("need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_t}")));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64)
            .collect();
        Ok(Self::from_betas(beta))
    }

    /// Single-step schedule, used to exercise the degenerate `T = 1` chain.
    pub fn single(beta: f64) -> Result<Self> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(Error::Domain(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self::from_betas(vec![beta]))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let gamma = (0..beta.len())
            .map(|i| if i == 0 { 0.0 } else { (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i] })
            .collect();
        DiffusionSchedule { steps: beta.len(), beta, alpha, alpha_bar, gamma }
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.idx(t)]
    }

    /// `alpha_bar_{t-1}`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar(t - 1)
        }
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[self.idx(t)]
    }

    /// Weight `beta_t / (2 alpha_t (1 - alpha_bar_t))` of the noise-matching loss.
    pub fn loss_weight(&self, t: usize) -> f64 {
        self.beta(t) / (2.0 * self.alpha(t) * (1.0 - self.alpha_bar(t)))
    }

    pub fn reverse_std(&self, t: usize, variance: ReverseVariance) -> f64 {
        match variance {
            ReverseVariance::Beta => self.beta(t).sqrt(),
            ReverseVariance::Posterior => self.gamma(t).sqrt(),
        }
    }
}

/// Step-`t` marginal `sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps` with the
/// noise actually drawn.
pub fn forward_sample<R: Rng + ?Sized>(x0: &Point5D, t: usize, sched: &DiffusionSchedule, rng: &mut R) -> (Point5D, [f64; 5]) {
    let eps: [f64; 5] = std::array::from_fn(|_| standard_normal(rng));
    (noised(x0, &eps, sched.alpha_bar(t)), eps)
}

pub(crate) fn noised(x0: &Point5D, eps: &[f64; 5], alpha_bar: f64) -> Point5D {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Point5D(std::array::from_fn(|i| a * x0.0[i] + s * eps[i]))
}

/// Inverse of [`forward_sample`] given its noise.
pub fn reconstruct_x0(x_t: &Point5D, eps: &[f64; 5], t: usize, sched: &DiffusionSchedule) -> Point5D {
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Point5D(std::array::from_fn(|i| (x_t.0[i] - s * eps[i]) / a))
}

/// Mean of `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_mean(x_t: &Point5D, x0: &Point5D, t: usize, sched: &DiffusionSchedule) -> Point5D {
    let (ab, ab_prev, b, a) = (sched.alpha_bar(t), sched.alpha_bar_prev(t), sched.beta(t), sched.alpha(t));
    let c0 = ab_prev.sqrt() * b / (1.0 - ab);
    let ct = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    Point5D(std::array::from_fn(|i| c0 * x0.0[i] + ct * x_t.0[i]))
}

/// Reverse-step mean written in terms of the predicted noise.
pub fn reverse_mean(x_t: &Point5D, eps: &[f64; 5], t: usize, sched: &DiffusionSchedule) -> Point5D {
    let (a, b, ab) = (sched.alpha(t), sched.beta(t), sched.alpha_bar(t));
    let k = b / (1.0 - ab).sqrt();
    Point5D(std::array::from_fn(|i| (x_t.0[i] - k * eps[i]) / a.sqrt()))
}

/// `[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]`.
pub fn positional_encode(p: f64, l_bar: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * l_bar + 1);
    out.push(p);
    for k in 0..l_bar {
        let w = std::f64::consts::PI * (1u64 << k) as f64 * p;
        out.push(w.sin());
        out.push(w.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    /// Direct product of `1 - beta_t` for the 200-step, 1e-4 to 0.05 schedule.
    const ALPHA_BAR_200: f64 = 0.006_121_965_241_292_836;

    fn paper_schedule() -> DiffusionSchedule {
        DiffusionSchedule::linear(200, 1e-4, 0.05).unwrap()
    }

    #[test]
    fn frozen_terminal_alpha_bar() {
        let s = paper_schedule();
        assert!((s.alpha_bar(200) - ALPHA_BAR_200).abs() <= 1e-12, "{:.18}", s.alpha_bar(200));
        assert!(s.alpha_bar(200) < 0.02);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(200) - 0.05).abs() < 1e-17);
    }

    #[test]
    fn schedule_identities() {
        let s = paper_schedule();
        for t in 1..=200 {
            assert!((s.alpha(t) - (1.0 - s.beta(t))).abs() <= 1e-15);
            assert!((s.alpha_bar(t) - s.alpha_bar_prev(t) * s.alpha(t)).abs() <= 1e-15);
            if t >= 2 {
                let g = (1.0 - s.alpha_bar(t - 1)) * s.beta(t) / (1.0 - s.alpha_bar(t));
                assert!((s.gamma(t) - g).abs() <= 1e-15);
                assert!(s.gamma(t) > 0.0);
                assert!(s.beta(t) > s.beta(t - 1));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
            assert!(s.loss_weight(t) > 0.0);
        }
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(DiffusionSchedule::linear(200, 0.05, 0.05).is_err());
        assert!(DiffusionSchedule::linear(200, 0.0, 0.05).is_err());
        assert!(DiffusionSchedule::linear(200, 0.1, 1.0).is_err());
        assert!(DiffusionSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(DiffusionSchedule::single(1.0).is_err());
    }

    #[test]
    fn forward_moments() {
        let s = paper_schedule();
        let x0 = Point5D([0.5, -1.0, 2.0, 3.0, 0.1]);
        let t = 60;
        let mut rng = stream(17);
        let n = 100_000;
        let mut sum = [0.0; 5];
        let mut sq = [0.0; 5];
        for _ in 0..n {
            let (x, _) = forward_sample(&x0, t, &s, &mut rng);
            for i in 0..5 {
                sum[i] += x.0[i];
                sq[i] += x.0[i] * x.0[i];
            }
        }
        let var_true = 1.0 - s.alpha_bar(t);
        for i in 0..5 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se = (var_true / n as f64).sqrt();
            assert!((mean - s.alpha_bar(t).sqrt() * x0.0[i]).abs() < 4.0 * se);
            assert!((var / var_true - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn two_transitions_match_marginal() {
        let s = paper_schedule();
        let x0 = 1.5;
        let mut rng = stream(3);
        let n = 100_000;
        let (mut m, mut q) = (0.0, 0.0);
        for _ in 0..n {
            let x1 = s.alpha(1).sqrt() * x0 + s.beta(1).sqrt() * standard_normal(&mut rng);
            let x2 = s.alpha(2).sqrt() * x1 + s.beta(2).sqrt() * standard_normal(&mut rng);
            m += x2;
            q += x2 * x2;
        }
        let mean = m / n as f64;
        let var = q / n as f64 - mean * mean;
        let var_true = 1.0 - s.alpha_bar(2);
        assert!((mean - s.alpha_bar(2).sqrt() * x0).abs() < 4.0 * (var_true / n as f64).sqrt());
        assert!((var / var_true - 1.0).abs() < 0.05);
    }

    #[test]
    fn no_noise_limit_is_identity() {
        let x0 = Point5D([1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(noised(&x0, &[9.0; 5], 1.0), x0);
    }

    #[test]
    fn reconstruct_with_zero_noise_divides() {
        let s = paper_schedule();
        let x = Point5D([1.0, -2.0, 0.5, 3.0, 0.0]);
        let r = reconstruct_x0(&x, &[0.0; 5], 10, &s);
        for i in 0..5 {
            assert!((r.0[i] - x.0[i] / s.alpha_bar(10).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn encoding_values() {
        let e = positional_encode(0.0, 10);
        assert_eq!(e.len(), 21);
        assert_eq!(e[0], 0.0);
        for k in 0..10 {
            assert_eq!((e[1 + 2 * k], e[2 + 2 * k]), (0.0, 1.0));
        }
        let e = positional_encode(1.0, 4);
        for k in 0..4 {
            assert!(e[1 + 2 * k].abs() < 1e-12);
            let expect = if k == 0 { -1.0 } else { 1.0 };
            assert!((e[2 + 2 * k] - expect).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn reconstruct_inverts_forward(x in prop::array::uniform5(-5.0f64..5.0), t in 1usize..=200, seed in any::<u64>()) {
            let s = paper_schedule();
            let x0 = Point5D(x);
            let (xt, eps) = forward_sample(&x0, t, &s, &mut stream(seed));
            let r = reconstruct_x0(&xt, &eps, t, &s);
            for i in 0..5 {
                prop_assert!((r.0[i] - x0.0[i]).abs() <= 1e-12 * (1.0 + x0.0[i].abs()) / s.alpha_bar(t).sqrt());
            }
        }

        #[test]
        fn posterior_mean_matches_noise_form(x in prop::array::uniform5(-5.0f64..5.0), t in 1usize..=200, seed in any::<u64>()) {
            let s = paper_schedule();
            let x0 = Point5D(x);
            let (xt, eps) = forward_sample(&x0, t, &s, &mut stream(seed));
            let a = posterior_mean(&xt, &x0, t, &s);
            let b = reverse_mean(&xt, &eps, t, &s);
            for i in 0..5 {
                prop_assert!((a.0[i] - b.0[i]).abs() <= 1e-12 * (1.0 + a.0[i].abs()));
            }
        }

        #[test]
        fn reconstruct_is_linear(a in prop::array::uniform5(-3.0f64..3.0), b in prop::array::uniform5(-3.0f64..3.0), t in 1usize..=200) {
            let s = paper_schedule();
            let eps = [0.0; 5];
            let sum = Point5D(std::array::from_fn(|i| a[i] + b[i]));
            let (ra, rb, rs) = (reconstruct_x0(&Point5D(a), &eps, t, &s), reconstruct_x0(&Point5D(b), &eps, t, &s), reconstruct_x0(&sum, &eps, t, &s));
            for i in 0..5 {
                prop_assert!((rs.0[i] - ra.0[i] - rb.0[i]).abs() <= 1e-12 * (1.0 + rs.0[i].abs()));
            }
        }

        #[test]
        fn encoding_length(p in -10.0f64..10.0, l in 1usize..16) {
            prop_assert_eq!(positional_encode(p, l).len(), 2 * l + 1);
        }
    }
}
