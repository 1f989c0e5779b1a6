//! Rate-constrained CRB-minimizing transmit design.
//!
//! The relaxed problem
//!
//! ```text
//! minimize    tr(S^{-1})
//! subject to  tr(S) <= P
//!             (1 + Gamma) h_k^H R_k h_k >= sigma_k^2 + h_k^H S h_k      for every UE k
//!             S - sum_k R_k >= 0,  R_k >= 0
//! ```
//!
//! is solved over `R_s = S - sum R_k` and the `R_k` with a primal log-barrier
//! interior-point method (damped Newton steps on an analytic Hessian). A
//! phase-I problem either finds a strictly feasible start or certifies that the
//! rate targets cannot be met at power `P`. Rank-one communication beamformers
//! are then extracted from the relaxed solution, which keeps every constraint
//! satisfied.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::cmatrix::{cholesky_pd, hermitian_eigen, hermitian_part, quad_form, CMat};
use crate::error::{Error, Result};

type RMat = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformProblem {
    pub channels: Vec<DVector<Complex64>>,
    pub noise_powers: Vec<f64>,
    pub max_power: f64,
    pub min_rate: f64,
    /// `1 / (2^min_rate - 1)`; infinite when `min_rate = 0`.
    pub gamma: f64,
}

impl BeamformProblem {
    pub fn new(channels: Vec<DVector<Complex64>>, noise_powers: Vec<f64>, max_power: f64, min_rate: f64) -> Result<Self> {
        if channels.len() != noise_powers.len() {
            return Err(Error::Dimension(format!("{} channels but {} noise powers", channels.len(), noise_powers.len())));
        }
        if !(max_power > 0.0) {
            return Err(Error::Domain(format!("power budget must be positive, got {max_power}")));
        }
        if !(min_rate >= 0.0) || !min_rate.is_finite() {
            return Err(Error::Domain(format!("minimum rate must be finite and non-negative, got {min_rate}")));
        }
        if noise_powers.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("noise powers must be positive".into()));
        }
        if let Some(h) = channels.first() {
            let n = h.len();
            if n == 0 || channels.iter().any(|c| c.len() != n) {
                return Err(Error::Dimension("channels must share a non-zero length".into()));
            }
        }
        let gamma = 1.0 / (2f64.powf(min_rate) - 1.0);
        Ok(BeamformProblem { channels, noise_powers, max_power, min_rate, gamma })
    }

    pub fn ue_count(&self) -> usize {
        self.channels.len()
    }

    /// SINR target `2^R - 1` equivalent to the rate constraint.
    pub fn sinr_target(&self) -> f64 {
        2f64.powf(self.min_rate) - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdrOptions {
    /// Relative bound on the duality gap at termination.
    pub tol: f64,
    /// Cap on the total number of Newton steps (both phases).
    pub max_newton_steps: usize,
}

impl Default for SdrOptions {
    fn default() -> Self {
        SdrOptions { tol: 1e-9, max_newton_steps: 5000 }
    }
}

/// Relaxed (rank-unconstrained) optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrSolution {
    pub s_x: CMat,
    pub r_s: CMat,
    pub r_k: Vec<CMat>,
    pub objective: f64,
    /// Bound on `objective - optimum` guaranteed by the barrier path.
    pub gap_bound: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: String,
    pub residual: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Fixed-width text table, one constraint per row.
    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:>14} {:>14} {:>6}\n", "constraint", "residual", "limit", "status");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<14} {:>14.6e} {:>14.6e} {:>6}",
                c.name,
                c.residual,
                c.limit,
                if c.pass { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

/// Per-constraint acceptance thresholds, each relative to a natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityTolerances {
    /// `tr(S_x) - P <= power * P`.
    pub power: f64,
    /// Rate residual `<= rate * sigma_k^2`.
    pub rate: f64,
    /// Eigenvalues of `S_x - sum R_k` and `R_k` `>= -psd * tr(S_x)`.
    pub psd: f64,
    /// Second eigenvalue of each `R_k` `<= rank * lambda_max`.
    pub rank: f64,
}

impl Default for FeasibilityTolerances {
    fn default() -> Self {
        FeasibilityTolerances { power: 1e-6, rate: 1e-6, psd: 1e-7, rank: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformDesign {
    pub s_x: CMat,
    /// Extracted rank-one Gram matrices `w_k w_k^H`.
    pub r_k: Vec<CMat>,
    /// Columns are the communication beamformers `w_k`.
    pub w_c: CMat,
    /// `W_s W_s^H = S_x - sum_k R_k`.
    pub w_s: CMat,
    pub objective: f64,
    pub feasibility: FeasibilityReport,
}

// ---------------------------------------------------------------------------
// Hermitian matrices as real coordinate vectors.
//
// Orthonormal basis under <A, B> = Re tr(A B): the n diagonal units, then for
// each i < j the pair (E_ij + E_ji)/sqrt 2 and i (E_ij - E_ji)/sqrt 2.

struct HermBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl HermBasis {
    fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        HermBasis { n, pairs }
    }

    fn dim(&self) -> usize {
        self.n * self.n
    }

    /// `Re tr(M B_q)` for every basis element; the coordinates of `M` when
    /// `M` is Hermitian.
    fn project(&self, m: &CMat, out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = m[(i, i)].re;
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            out[n + 2 * p] = (m[(i, j)].re + m[(j, i)].re) / SQRT_2;
            out[n + 2 * p + 1] = (m[(i, j)].im - m[(j, i)].im) / SQRT_2;
        }
    }

    fn to_mat(&self, v: &[f64]) -> CMat {
        let n = self.n;
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(v[i], 0.0);
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let z = Complex64::new(v[n + 2 * p], v[n + 2 * p + 1]) / SQRT_2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
        m
    }

    /// Nonzero entries `(row, col, value)` of basis element `q`.
    fn entries(&self, q: usize) -> ([(usize, usize, Complex64); 2], usize) {
        let n = self.n;
        let one = Complex64::new(1.0, 0.0);
        let zero = (0, 0, Complex64::new(0.0, 0.0));
        if q < n {
            return ([(q, q, one), zero], 1);
        }
        let (i, j) = self.pairs[(q - n) / 2];
        let s = 1.0 / SQRT_2;
        if (q - n) % 2 == 0 {
            ([(i, j, one * s), (j, i, one * s)], 2)
        } else {
            ([(i, j, Complex64::new(0.0, s)), (j, i, Complex64::new(0.0, -s))], 2)
        }
    }

    /// Matrix `H_pq = Re tr(X B_p Y B_q)`, symmetrized.
    fn sandwich_hessian(&self, x: &CMat, y: &CMat) -> RMat {
        let d = self.dim();
        let n = self.n;
        let mut h = RMat::zeros(d, d);
        let mut buf = vec![0.0; d];
        let mut m = CMat::zeros(n, n);
        for p in 0..d {
            m.fill(Complex64::new(0.0, 0.0));
            let (ents, cnt) = self.entries(p);
            for &(a, b, v) in &ents[..cnt] {
                // X E_ab Y = x_col(a) * y_row(b)
                for r in 0..n {
                    let xa = x[(r, a)] * v;
                    for c in 0..n {
                        m[(r, c)] += xa * y[(b, c)];
                    }
                }
            }
            self.project(&m, &mut buf);
            for q in 0..d {
                h[(p, q)] = buf[q];
            }
        }
        (&h + h.transpose()) * 0.5
    }
}

// ---------------------------------------------------------------------------
// Barrier machinery on the normalized problem (P = 1, h scaled by sqrt(P)/sigma).

struct Normalized {
    n: usize,
    k: usize,
    gamma: f64,
    basis: HermBasis,
    /// Coordinates of `h_k h_k^H` for each UE.
    u: Vec<Vec<f64>>,
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    /// Phase-I slack; `None` in phase II.
    s: Option<f64>,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
    hess: RMat,
}

impl Normalized {
    fn new(prob: &BeamformProblem) -> Self {
        let n = prob.channels[0].len();
        let basis = HermBasis::new(n);
        let scale = prob.max_power.sqrt();
        let u = prob
            .channels
            .iter()
            .zip(&prob.noise_powers)
            .map(|(h, s2)| {
                let ht = h * Complex64::new(scale / s2.sqrt(), 0.0);
                let mut v = vec![0.0; n * n];
                basis.project(&(&ht * ht.adjoint()), &mut v);
                v
            })
            .collect();
        Normalized { n, k: prob.ue_count(), gamma: prob.gamma, basis, u }
    }

    fn blocks(&self) -> usize {
        self.k + 1
    }

    fn block(&self, x: &[f64], b: usize) -> CMat {
        let d = self.basis.dim();
        self.basis.to_mat(&x[b * d..(b + 1) * d])
    }

    fn sum_matrix(&self, x: &[f64]) -> CMat {
        let d = self.basis.dim();
        let mut acc = vec![0.0; d];
        for b in 0..self.blocks() {
            for (a, v) in acc.iter_mut().zip(&x[b * d..(b + 1) * d]) {
                *a += v;
            }
        }
        self.basis.to_mat(&acc)
    }

    fn trace_sum(&self, x: &[f64]) -> f64 {
        let d = self.basis.dim();
        (0..self.blocks()).map(|b| x[b * d..b * d + self.n].iter().sum::<f64>()).sum()
    }

    /// Rate margins `c_k = Gamma q(R_k) - q(R_s) - sum_{j != k} q(R_j) - 1`.
    fn margins(&self, x: &[f64]) -> Vec<f64> {
        let d = self.basis.dim();
        (0..self.k)
            .map(|k| {
                let q = |b: usize| -> f64 { x[b * d..(b + 1) * d].iter().zip(&self.u[k]).map(|(a, b)| a * b).sum() };
                let mut c = -1.0;
                for b in 0..self.blocks() {
                    c += if b == k + 1 { self.gamma * q(b) } else { -q(b) };
                }
                c
            })
            .collect()
    }

    /// Gradient coefficients of `c_k` in the full variable vector.
    fn margin_coeffs(&self, k: usize, nv: usize) -> Vec<f64> {
        let d = self.basis.dim();
        let mut a = vec![0.0; nv];
        for b in 0..self.blocks() {
            let w = if b == k + 1 { self.gamma } else { -1.0 };
            for (i, v) in self.u[k].iter().enumerate() {
                a[b * d + i] = w * v;
            }
        }
        a
    }

    fn barrier_dims(&self) -> f64 {
        (self.n * self.blocks() + self.k + 1) as f64
    }

    /// `t f0 + barrier` with gradient and Hessian; `None` outside the domain.
    fn evaluate(&self, p: &Point, t: f64, need_derivs: bool) -> Option<Eval> {
        let d = self.basis.dim();
        let nb = self.blocks();
        let nv = nb * d + usize::from(p.s.is_some());
        let power_slack = 1.0 - self.trace_sum(&p.x);
        if !(power_slack > 0.0) {
            return None;
        }
        let mut margins = self.margins(&p.x);
        if let Some(s) = p.s {
            margins.iter_mut().for_each(|c| *c += s);
        }
        if margins.iter().any(|c| !(*c > 0.0)) {
            return None;
        }
        let mut chols = Vec::with_capacity(nb);
        let mut logdet = 0.0;
        for b in 0..nb {
            let m = self.block(&p.x, b);
            let ch = cholesky_pd(&m)?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
            chols.push(ch);
        }
        let (f0, s_inv) = match p.s {
            Some(s) => (s, None),
            None => {
                let inv = cholesky_pd(&self.sum_matrix(&p.x))?.inverse();
                let tr: f64 = (0..self.n).map(|i| inv[(i, i)].re).sum();
                (tr, Some(inv))
            }
        };
        let value = t * f0 - logdet - margins.iter().map(|c| c.ln()).sum::<f64>() - power_slack.ln();
        if !value.is_finite() {
            return None;
        }
        if !need_derivs {
            return Some(Eval { value, grad: Vec::new(), hess: RMat::zeros(0, 0) });
        }

        let mut grad = vec![0.0; nv];
        let mut hess = RMat::zeros(nv, nv);
        let mut buf = vec![0.0; d];

        // Objective and power terms depend on S only: shared by every block pair.
        let mut shared_grad = vec![0.0; d];
        let mut shared_hess = RMat::zeros(d, d);
        if let Some(inv) = &s_inv {
            let inv2 = inv * inv;
            self.basis.project(&inv2, &mut buf);
            for (g, v) in shared_grad.iter_mut().zip(&buf) {
                *g -= t * v;
            }
            shared_hess += self.basis.sandwich_hessian(&inv2, inv) * (2.0 * t);
        }
        for i in 0..self.n {
            shared_grad[i] += 1.0 / power_slack;
            for j in 0..self.n {
                shared_hess[(i, j)] += 1.0 / (power_slack * power_slack);
            }
        }
        for b1 in 0..nb {
            for (i, g) in shared_grad.iter().enumerate() {
                grad[b1 * d + i] += g;
            }
            for b2 in 0..nb {
                let mut view = hess.view_mut((b1 * d, b2 * d), (d, d));
                view += &shared_hess;
            }
        }
        // -log det of each block.
        for (b, ch) in chols.iter().enumerate() {
            let inv = ch.inverse();
            self.basis.project(&inv, &mut buf);
            for (i, v) in buf.iter().enumerate() {
                grad[b * d + i] -= v;
            }
            let mut view = hess.view_mut((b * d, b * d), (d, d));
            view += self.basis.sandwich_hessian(&inv, &inv);
        }
        // Rate margins.
        for (k, c) in margins.iter().enumerate() {
            let mut a = self.margin_coeffs(k, nv);
            if p.s.is_some() {
                a[nv - 1] = 1.0;
            }
            for i in 0..nv {
                if a[i] == 0.0 {
                    continue;
                }
                grad[i] -= a[i] / c;
                for j in 0..nv {
                    hess[(i, j)] += a[i] * a[j] / (c * c);
                }
            }
        }
        if p.s.is_some() {
            grad[nv - 1] += t;
        }
        Some(Eval { value, grad, hess })
    }

    fn step(&self, p: &Point, dir: &[f64], alpha: f64) -> Point {
        let d = self.basis.dim() * self.blocks();
        Point {
            x: p.x.iter().zip(&dir[..d]).map(|(a, b)| a + alpha * b).collect(),
            s: p.s.map(|s| s + alpha * dir[d]),
        }
    }

    /// Damped Newton centering at fixed `t`, stopping early once `stop` holds.
    fn center(&self, p: &mut Point, t: f64, budget: &mut usize, stop: &dyn Fn(&Point) -> bool) -> Result<()> {
        loop {
            if *budget == 0 {
                return Err(Error::NonConvergence { iterations: 0, residual: f64::NAN });
            }
            *budget -= 1;
            let ev = self
                .evaluate(p, t, true)
                .ok_or_else(|| Error::Domain("barrier iterate left the feasible set".into()))?;
            let g = DVector::from_column_slice(&ev.grad);
            let dir = match ev.hess.clone().cholesky() {
                Some(ch) => -ch.solve(&g),
                None => {
                    // Regularize a numerically indefinite Hessian.
                    let scale = ev.hess.diagonal().amax().max(1.0);
                    let reg = &ev.hess + RMat::identity(g.len(), g.len()) * (1e-10 * scale);
                    match reg.cholesky() {
                        Some(ch) => -ch.solve(&g),
                        None => return Err(Error::NonConvergence { iterations: 0, residual: f64::NAN }),
                    }
                }
            };
            let decrement = -g.dot(&dir);
            if decrement / 2.0 <= 1e-9 {
                return Ok(());
            }
            let mut alpha = 1.0;
            let accepted = loop {
                let cand = self.step(p, dir.as_slice(), alpha);
                if let Some(e) = self.evaluate(&cand, t, false) {
                    // Strict decrease guards against stalling at the rounding floor.
                    if e.value <= ev.value - 0.01 * alpha * decrement && e.value < ev.value {
                        break Some(cand);
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    break None;
                }
            };
            match accepted {
                Some(c) => *p = c,
                // No further progress is possible in floating point.
                None => return Ok(()),
            }
            if stop(p) {
                return Ok(());
            }
        }
    }

    fn initial_point(&self) -> Vec<f64> {
        let d = self.basis.dim();
        let nb = self.blocks();
        let share = 0.5 / (self.n * nb) as f64;
        let mut x = vec![0.0; nb * d];
        for b in 0..nb {
            for i in 0..self.n {
                x[b * d + i] = share;
            }
        }
        x
    }
}

enum PhaseOne {
    Feasible(Vec<f64>),
    /// Certified lower bound on the optimal phase-I slack (strictly positive).
    Infeasible(f64),
}

fn phase_one(np: &Normalized, budget: &mut usize) -> Result<PhaseOne> {
    let x = np.initial_point();
    let worst = np.margins(&x).iter().fold(f64::INFINITY, |a, &c| a.min(c));
    if worst > 0.0 {
        return Ok(PhaseOne::Feasible(x));
    }
    let mut p = Point { x, s: Some(1.0 - worst) };
    let m = np.barrier_dims() + 1.0;
    let mut t = 1.0;
    let feasible = |q: &Point| q.s.is_some_and(|s| s < 0.0);
    loop {
        np.center(&mut p, t, budget, &feasible)?;
        let s = p.s.unwrap_or(0.0);
        if s < 0.0 {
            return Ok(PhaseOne::Feasible(p.x));
        }
        // On the central path the optimal slack is at least s - m / t.
        let lower = s - m / t;
        if lower > 0.0 {
            return Ok(PhaseOne::Infeasible(lower));
        }
        if t > 1e14 {
            // The optimum is zero to within floating precision: the rate
            // constraints are only met on the boundary, never strictly.
            return Ok(PhaseOne::Infeasible(0.0));
        }
        t *= 10.0;
    }
}

/// The duality power floor when it already rules the problem out. Far past
/// the threshold the phase-I margins fall below double precision, so this
/// exact certificate is checked first.
fn beyond_power_floor(prob: &BeamformProblem) -> Option<f64> {
    min_power_for_rate(prob).ok().filter(|&p| p >= prob.max_power)
}

/// Whether the relaxed problem admits a strictly feasible point, decided by
/// the phase-I barrier problem.
pub fn is_feasible(prob: &BeamformProblem, opts: &SdrOptions) -> Result<bool> {
    if prob.ue_count() == 0 || prob.min_rate == 0.0 {
        return Ok(true);
    }
    if beyond_power_floor(prob).is_some() {
        return Ok(false);
    }
    let np = Normalized::new(prob);
    let mut budget = opts.max_newton_steps;
    Ok(matches!(phase_one(&np, &mut budget)?, PhaseOne::Feasible(_)))
}

/// Solves the relaxed design problem.
pub fn solve_sdr(prob: &BeamformProblem, opts: &SdrOptions) -> Result<SdrSolution> {
    let n = prob.channels.first().map(|h| h.len());
    let p_max = prob.max_power;
    if prob.ue_count() == 0 {
        return Err(Error::Domain("no UEs: use design_beamformers, which returns (P/N_t) I".into()));
    }
    let n = n.unwrap_or(0);
    if n < prob.ue_count() {
        return Err(Error::Domain(format!("N_t = {n} < K = {}", prob.ue_count())));
    }
    if prob.min_rate == 0.0 {
        return Ok(zero_rate_solution(prob));
    }
    if let Some(p_min) = beyond_power_floor(prob) {
        return Err(Error::Infeasible(format!(
            "rate {} bps/Hz for all {} UEs needs at least {p_min:.6e} W, budget is {p_max:.6e} W",
            prob.min_rate,
            prob.ue_count()
        )));
    }
    let np = Normalized::new(prob);
    let mut budget = opts.max_newton_steps;
    let x0 = match phase_one(&np, &mut budget)? {
        PhaseOne::Feasible(x) => x,
        PhaseOne::Infeasible(bound) => {
            return Err(Error::Infeasible(format!(
                "rate {} bps/Hz cannot be met for all {} UEs at power {:.6e} W (phase-I slack >= {:.3e})",
                prob.min_rate,
                prob.ue_count(),
                p_max,
                bound
            )))
        }
    };
    let mut p = Point { x: x0, s: None };
    let m = np.barrier_dims();
    let inv_trace = |q: &Point| -> f64 {
        let s = np.sum_matrix(&q.x);
        cholesky_pd(&s).map(|c| (0..n).map(|i| c.inverse()[(i, i)].re).sum()).unwrap_or(f64::INFINITY)
    };
    let mut t = m / inv_trace(&p).max(1e-300);
    let never = |_: &Point| false;
    loop {
        np.center(&mut p, t, &mut budget, &never)?;
        let obj = inv_trace(&p);
        if m / t <= opts.tol * obj {
            break;
        }
        t *= 20.0;
    }
    let objective_norm = inv_trace(&p);
    let scale = Complex64::new(p_max, 0.0);
    let r_s = hermitian_part(&np.block(&p.x, 0)) * scale;
    let r_k: Vec<CMat> = (1..=prob.ue_count()).map(|b| hermitian_part(&np.block(&p.x, b)) * scale).collect();
    let s_x = r_k.iter().fold(r_s.clone(), |acc, r| acc + r);
    Ok(SdrSolution {
        objective: objective_norm / p_max,
        gap_bound: m / t / p_max,
        s_x,
        r_s,
        r_k,
        newton_steps: opts.max_newton_steps - budget,
    })
}

/// Vacuous rate constraints: the scaled identity is optimal, with each UE
/// given a rank-one slice of it.
fn zero_rate_solution(prob: &BeamformProblem) -> SdrSolution {
    let n = prob.channels[0].len();
    let k = prob.ue_count();
    let s_x = CMat::identity(n, n) * Complex64::new(prob.max_power / n as f64, 0.0);
    let r_k: Vec<CMat> = prob
        .channels
        .iter()
        .map(|h| {
            let v = &s_x * h;
            let g = quad_form(&s_x, h);
            if g > 0.0 {
                &v * v.adjoint() * Complex64::new(1.0 / (k as f64 * g), 0.0)
            } else {
                CMat::zeros(n, n)
            }
        })
        .collect();
    let r_s = r_k.iter().fold(s_x.clone(), |acc, r| acc - r);
    SdrSolution {
        objective: (n * n) as f64 / prob.max_power,
        gap_bound: 0.0,
        s_x,
        r_s,
        r_k,
        newton_steps: 0,
    }
}

/// Rank-one extraction `w_k = R_k h_k / sqrt(h_k^H R_k h_k)` and the sensing
/// factor `W_s = U sqrt(Lambda)` of `S_x - sum_k w_k w_k^H`.
pub fn extract_beamformers(s_tilde: &CMat, r_tilde: &[CMat], prob: &BeamformProblem) -> Result<BeamformDesign> {
    let n = s_tilde.nrows();
    if r_tilde.len() != prob.ue_count() || prob.channels.iter().any(|h| h.len() != n) {
        return Err(Error::Dimension("design and problem disagree in size".into()));
    }
    let mut w_c = CMat::zeros(n, prob.ue_count());
    let mut r_hat = Vec::with_capacity(prob.ue_count());
    for (k, (r, h)) in r_tilde.iter().zip(&prob.channels).enumerate() {
        let gain = quad_form(r, h);
        if !(gain > 1e-14 * prob.noise_powers[k]) {
            return Err(Error::ZeroGain(k));
        }
        let w = r * h / Complex64::new(gain.sqrt(), 0.0);
        w_c.set_column(k, &w);
        r_hat.push(&w * w.adjoint());
    }
    let r_s = r_hat.iter().fold(hermitian_part(s_tilde), |acc, r| acc - r);
    let (vals, vecs) = hermitian_eigen(&r_s);
    let mut w_s = CMat::zeros(n, n);
    for (j, &v) in vals.iter().enumerate() {
        let root = Complex64::new(v.max(0.0).sqrt(), 0.0);
        w_s.set_column(j, &(vecs.column(j) * root));
    }
    let objective = cholesky_pd(s_tilde)
        .map(|c| c.inverse().diagonal().iter().map(|z| z.re).sum())
        .unwrap_or(f64::INFINITY);
    let mut design = BeamformDesign { s_x: s_tilde.clone(), r_k: r_hat, w_c, w_s, objective, feasibility: FeasibilityReport::default() };
    design.feasibility = validate_feasibility(&design, prob, &FeasibilityTolerances::default());
    Ok(design)
}

/// Evaluates every constraint of the rank-constrained problem.
pub fn validate_feasibility(design: &BeamformDesign, prob: &BeamformProblem, tol: &FeasibilityTolerances) -> FeasibilityReport {
    let mut checks = Vec::new();
    let mut push = |name: String, residual: f64, limit: f64| {
        checks.push(ConstraintCheck { pass: residual <= limit, name, residual, limit });
    };
    let s = &design.s_x;
    let tr = s.diagonal().iter().map(|z| z.re).sum::<f64>();
    let herm = (s - s.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    push("hermitian".into(), herm, 1e-12 * tr.abs().max(f64::MIN_POSITIVE));
    push("power".into(), tr - prob.max_power, tol.power * prob.max_power);
    for (k, (h, r)) in prob.channels.iter().zip(&design.r_k).enumerate() {
        let sigma2 = prob.noise_powers[k];
        // sigma^2 + h^H S h - (1 + Gamma) h^H R h, written for finite and infinite Gamma.
        let gain = quad_form(r, h);
        let residual = if prob.gamma.is_finite() {
            sigma2 + quad_form(s, h) - (1.0 + prob.gamma) * gain
        } else if gain > 0.0 {
            f64::NEG_INFINITY
        } else {
            sigma2
        };
        push(format!("rate_{k}"), residual, tol.rate * sigma2);
        let (vals, _) = hermitian_eigen(r);
        let top = vals.last().copied().unwrap_or(0.0);
        let second = if vals.len() >= 2 { vals[vals.len() - 2] } else { 0.0 };
        push(format!("rank_one_{k}"), second, tol.rank * top.abs());
        push(format!("psd_r_{k}"), -vals[0], tol.psd * tr.abs());
    }
    let r_s = design.r_k.iter().fold(s.clone(), |acc, r| acc - r);
    let (vals, _) = hermitian_eigen(&r_s);
    push("psd_sensing".into(), -vals[0], tol.psd * tr.abs());
    FeasibilityReport { checks }
}

/// Relaxed solve followed by extraction; `K = 0` returns `(P/N_t) I`.
pub fn design_beamformers(prob: &BeamformProblem, n_tx: usize, opts: &SdrOptions) -> Result<BeamformDesign> {
    if prob.ue_count() == 0 {
        let s_x = CMat::identity(n_tx, n_tx) * Complex64::new(prob.max_power / n_tx as f64, 0.0);
        let w_s = CMat::identity(n_tx, n_tx) * Complex64::new((prob.max_power / n_tx as f64).sqrt(), 0.0);
        let mut d = BeamformDesign {
            objective: (n_tx * n_tx) as f64 / prob.max_power,
            s_x,
            r_k: Vec::new(),
            w_c: CMat::zeros(n_tx, 0),
            w_s,
            feasibility: FeasibilityReport::default(),
        };
        d.feasibility = validate_feasibility(&d, prob, &FeasibilityTolerances::default());
        return Ok(d);
    }
    let sol = solve_sdr(prob, opts)?;
    extract_beamformers(&sol.s_x, &sol.r_k, prob)
}

/// Minimum total power meeting every SINR target with no sensing power,
/// from the uplink-downlink duality fixed point
/// `lambda_k = (gamma / (1 + gamma)) / (h_k^H A^{-1} h_k)`,
/// `A = I + sum_j lambda_j h_j h_j^H` (channels whitened by the UE noise).
/// The relaxed problem is strictly feasible exactly when this is below `P`.
///
/// Newton's method on the fixed-point equations, started from a
/// zero-forcing point where every uplink SINR already meets the target.
/// The plain iteration from zero needs on the order of `gamma` steps, which
/// is hopeless at high rates.
pub fn min_power_for_rate(prob: &BeamformProblem) -> Result<f64> {
    let k = prob.ue_count();
    if k == 0 || prob.min_rate == 0.0 {
        return Ok(0.0);
    }
    let n = prob.channels[0].len();
    let gamma = prob.sinr_target();
    let c = gamma / (1.0 + gamma);
    let hs: Vec<DVector<Complex64>> = prob
        .channels
        .iter()
        .zip(&prob.noise_powers)
        .map(|(h, s2)| h / Complex64::new(s2.sqrt(), 0.0))
        .collect();
    // With dependent channels there is no zero-forcing point; start at zero.
    let mut lambda = zero_forcing_start(&hs, gamma).unwrap_or_else(|| vec![0.0; k]);
    // Returns (f(lambda), Jacobian of f).
    let eval = |lambda: &[f64]| -> Result<(Vec<f64>, RMat)> {
        let mut a = CMat::identity(n, n);
        for (h, l) in hs.iter().zip(lambda) {
            a += h * h.adjoint() * Complex64::new(*l, 0.0);
        }
        let ch = cholesky_pd(&a).ok_or_else(|| Error::Domain("duality matrix not positive definite".into()))?;
        let y: Vec<DVector<Complex64>> = hs.iter().map(|h| ch.solve(h)).collect();
        let q: Vec<f64> = hs.iter().zip(&y).map(|(h, y)| h.dotc(y).re).collect();
        let f: Vec<f64> = q.iter().map(|q| c / q).collect();
        let jac = RMat::from_fn(k, k, |i, j| c * hs[i].dotc(&y[j]).norm_sqr() / (q[i] * q[i]));
        Ok((f, jac))
    };
    let mut last = f64::NAN;
    for _ in 0..200 {
        let (f, jac) = eval(&lambda)?;
        let resid: Vec<f64> = lambda.iter().zip(&f).map(|(l, f)| l - f).collect();
        let size = lambda.iter().chain(&f).fold(0.0f64, |a, &b| a.max(b));
        last = resid.iter().fold(0.0f64, |a, &b| a.max(b.abs())) / size;
        if last <= 1e-13 {
            return Ok(f.iter().sum());
        }
        let sys = RMat::identity(k, k) - jac;
        let step = sys.lu().solve(&DVector::from_column_slice(&resid));
        let mut next = match step {
            Some(d) => lambda.iter().zip(d.iter()).map(|(l, d)| l - d).collect::<Vec<_>>(),
            None => f.clone(),
        };
        // Fall back to the monotone fixed-point step if Newton leaves the orthant.
        if next.iter().any(|v| !(*v > 0.0)) {
            next = f;
        }
        lambda = next;
    }
    Err(Error::NonConvergence { iterations: 200, residual: last })
}

/// `lambda_k = gamma / (h_k^H P_k h_k)` with `P_k` the projector orthogonal to
/// the other channels; `None` when some channel lies in the span of the rest.
fn zero_forcing_start(hs: &[DVector<Complex64>], gamma: f64) -> Option<Vec<f64>> {
    let n = hs[0].len();
    (0..hs.len())
        .map(|k| {
            let others: Vec<&DVector<Complex64>> = hs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, h)| h).collect();
            let h = &hs[k];
            let residual = if others.is_empty() {
                h.norm_squared()
            } else {
                let m = CMat::from_fn(n, others.len(), |i, j| others[j][i]);
                let (q, _) = m.qr().unpack();
                let proj = q.adjoint() * h;
                h.norm_squared() - proj.norm_squared()
            };
            (residual > 1e-12 * h.norm_squared()).then(|| gamma / residual)
        })
        .collect()
}

/// Largest minimum rate (within `tol` bps/Hz) for which the solver finds a
/// strictly feasible design, by bisection on `[0, hi]`.
pub fn rate_threshold(
    channels: &[DVector<Complex64>],
    noise_powers: &[f64],
    max_power: f64,
    hi: f64,
    tol: f64,
    opts: &SdrOptions,
) -> Result<f64> {
    let feasible = |r: f64| -> Result<bool> {
        is_feasible(&BeamformProblem::new(channels.to_vec(), noise_powers.to_vec(), max_power, r)?, opts)
    };
    let (mut lo, mut hi) = (0.0, hi);
    if feasible(hi)? {
        return Err(Error::Domain(format!("rate {hi} is still feasible; raise the bisection bracket")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests;
