//! Stabilized bi-conjugate gradient for complex non-Hermitian systems.
//!
//! Unpreconditioned van der Vorst iteration with a shadow-residual restart
//! when `<r0, r>` collapses. Convergence is declared on the true residual,
//! recomputed from scratch before returning.

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b` starting from `x = 0`.
pub fn bicgstab<F>(mut apply: F, b: &[Complex64], tol: f64, max_iter: usize) -> (Vec<Complex64>, SolveReport)
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return (vec![zero; n], SolveReport { iterations: 0, final_relative_residual: 0.0, converged: true });
    }
    let mut x = vec![zero; n];
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let mut p = vec![zero; n];
    let mut v = vec![zero; n];
    let (mut rho_prev, mut alpha, mut omega) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
    let mut iterations = 0;
    let mut rel = 1.0;

    while iterations < max_iter {
        iterations += 1;
        let mut rho = dotc(&r_hat, &r);
        if rho.norm() < 1e-30 * b_norm * b_norm {
            // Shadow residual became orthogonal: restart from the current residual.
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|c| *c = zero);
            v.iter_mut().for_each(|c| *c = zero);
            rho_prev = Complex64::new(1.0, 0.0);
            alpha = Complex64::new(1.0, 0.0);
            omega = Complex64::new(1.0, 0.0);
            rho = dotc(&r_hat, &r);
        }
        let beta = (rho / rho_prev) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = apply(&p);
        alpha = rho / dotc(&r_hat, &v);
        let s: Vec<Complex64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) / b_norm <= tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            rel = true_residual(&mut apply, &x, b, b_norm);
            if rel <= tol {
                break;
            }
            r = b.iter().zip(apply(&x)).map(|(bi, ai)| bi - ai).collect();
            rho_prev = rho;
            continue;
        }
        let t = apply(&s);
        let tt = dotc(&t, &t);
        omega = if tt.norm() > 0.0 { dotc(&t, &s) / tt } else { zero };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        rho_prev = rho;
        rel = norm(&r) / b_norm;
        if rel <= tol {
            rel = true_residual(&mut apply, &x, b, b_norm);
            if rel <= tol {
                break;
            }
            r = b.iter().zip(apply(&x)).map(|(bi, ai)| bi - ai).collect();
        }
        if !rel.is_finite() {
            break;
        }
    }
    let converged = rel <= tol;
    (x, SolveReport { iterations, final_relative_residual: rel, converged })
}

fn true_residual<F>(apply: &mut F, x: &[Complex64], b: &[Complex64], b_norm: f64) -> f64
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let ax = apply(x);
    let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    norm(&r) / b_norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_step() {
        let b: Vec<Complex64> = (0..10).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let (x, rep) = bicgstab(|v| v.to_vec(), &b, 1e-10, 10);
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let b = vec![Complex64::new(0.0, 0.0); 4];
        let (x, rep) = bicgstab(|v| v.to_vec(), &b, 1e-10, 10);
        assert!(x.iter().all(|c| c.norm() == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn solves_random_nonsymmetric_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { Complex64::new(4.0, 1.0) } else { Complex64::new(0.0, 0.0) };
            d + Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))
        });
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64).cos(), 0.5)).collect();
        let (x, rep) = bicgstab(
            |v| (&a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec(),
            &b,
            1e-12,
            500,
        );
        assert!(rep.converged);
        let exact = a.clone().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let err: f64 = x.iter().zip(exact.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / exact.norm() < 1e-10);
        assert!(rep.final_relative_residual <= 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let b = vec![Complex64::new(1.0, 0.0); n];
        let (_, rep) = bicgstab(|v| (&a * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec(), &b, 1e-14, 3);
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
    }
}
