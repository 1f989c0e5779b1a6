use super::*;
use crate::rng::{complex_gaussian, stream};
use approx::assert_relative_eq;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn random_channels(n: usize, k: usize, seed: u64) -> Vec<DVector<Complex64>> {
    let mut rng = stream(seed);
    (0..k).map(|_| DVector::from_fn(n, |_, _| complex_gaussian(&mut rng, 1.0))).collect()
}

fn random_hermitian(n: usize, seed: u64) -> CMat {
    let mut rng = stream(seed);
    let a = CMat::from_fn(n, n, |_, _| complex_gaussian(&mut rng, 1.0));
    hermitian_part(&a)
}

#[test]
fn basis_round_trip_and_orthonormality() {
    let b = HermBasis::new(4);
    let m = random_hermitian(4, 1);
    let mut v = vec![0.0; 16];
    b.project(&m, &mut v);
    let back = b.to_mat(&v);
    assert!((back - &m).norm() < 1e-14);
    // Re tr(A B) equals the coordinate dot product.
    let m2 = random_hermitian(4, 2);
    let mut v2 = vec![0.0; 16];
    b.project(&m2, &mut v2);
    let direct = (&m * &m2).trace().re;
    let dot: f64 = v.iter().zip(&v2).map(|(a, b)| a * b).sum();
    assert_relative_eq!(direct, dot, epsilon = 1e-12);
}

#[test]
fn sandwich_hessian_matches_trace_formula() {
    let b = HermBasis::new(3);
    let x = random_hermitian(3, 4);
    let y = random_hermitian(3, 5);
    let h = b.sandwich_hessian(&x, &y);
    let (a, bb) = (random_hermitian(3, 6), random_hermitian(3, 7));
    let (mut va, mut vb) = (vec![0.0; 9], vec![0.0; 9]);
    b.project(&a, &mut va);
    b.project(&bb, &mut vb);
    let quad = (DVector::from_column_slice(&va).transpose() * &h * DVector::from_column_slice(&vb))[(0, 0)];
    let expect = 0.5 * ((&x * &a * &y * &bb).trace().re + (&x * &bb * &y * &a).trace().re);
    assert_relative_eq!(quad, expect, epsilon = 1e-12);
}

fn small_problem(min_rate: f64) -> BeamformProblem {
    BeamformProblem::new(random_channels(3, 2, 11), vec![1.0, 2.0], 40.0, min_rate).unwrap()
}

#[test]
fn barrier_derivatives_match_finite_differences() {
    for phase_one in [false, true] {
        let prob = small_problem(0.5);
        let np = Normalized::new(&prob);
        let x = np.initial_point();
        let worst = np.margins(&x).iter().fold(f64::INFINITY, |a, &c| a.min(c));
        let p = Point { x, s: phase_one.then_some(1.0 - worst.min(0.0)) };
        let t = 3.0;
        let ev = np.evaluate(&p, t, true).unwrap();
        let nv = ev.grad.len();
        let mut rng = stream(99);
        let dir: Vec<f64> = (0..nv).map(|_| rng.random_range(-1.0..1.0) * 1e-3).collect();
        let eps = 1e-4;
        let fwd = np.step(&p, &dir, eps);
        let bwd = np.step(&p, &dir, -eps);
        let (ef, eb) = (np.evaluate(&fwd, t, true).unwrap(), np.evaluate(&bwd, t, true).unwrap());
        let fd_grad = (ef.value - eb.value) / (2.0 * eps);
        let an_grad: f64 = ev.grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert_relative_eq!(fd_grad, an_grad, max_relative = 1e-6);
        let d = DVector::from_column_slice(&dir);
        let fd_hd = (DVector::from_column_slice(&ef.grad) - DVector::from_column_slice(&eb.grad)) / (2.0 * eps);
        let an_hd = &ev.hess * &d;
        assert!((&fd_hd - &an_hd).norm() <= 1e-6 * an_hd.norm(), "phase_one={phase_one}");
    }
}
use rand::Rng;

/// Grid search over 2x2 covariances with the trace active; for one UE the
/// best sensing split is R_1 = S, leaving the constraint h^H S h >= sigma^2 / Gamma.
fn brute_force_two_by_one(h: &DVector<Complex64>, sigma2: f64, p: f64, gamma: f64) -> f64 {
    let need = sigma2 / gamma;
    let mut best = f64::INFINITY;
    let (na, nb, nphi) = (400, 400, 360);
    for ia in 1..na {
        let a = p * ia as f64 / na as f64;
        let cc = p - a;
        let bmax = (a * cc).sqrt();
        for ib in 0..nb {
            let b = bmax * ib as f64 / nb as f64;
            let obj = p / (a * cc - b * b);
            if obj >= best {
                continue;
            }
            for ip in 0..nphi {
                let phi = std::f64::consts::TAU * ip as f64 / nphi as f64;
                let off = Complex64::from_polar(b, phi);
                let q = a * h[0].norm_sqr() + cc * h[1].norm_sqr() + 2.0 * (h[0].conj() * off * h[1]).re;
                if q >= need {
                    best = obj;
                    break;
                }
            }
        }
    }
    best
}

#[test]
fn two_antenna_single_ue_matches_brute_force() {
    let h = DVector::from_vec(vec![Complex64::new(0.9, 0.3), Complex64::new(-0.2, 0.5)]);
    for rate in [0.5, 1.5, 2.5] {
        let prob = BeamformProblem::new(vec![h.clone()], vec![0.1], 1.0, rate).unwrap();
        let sol = solve_sdr(&prob, &SdrOptions::default()).unwrap();
        let oracle = brute_force_two_by_one(&h, 0.1, 1.0, prob.gamma);
        assert!(sol.objective <= oracle * 1.0 + 1e-9, "rate {rate}: {} vs {oracle}", sol.objective);
        assert!((sol.objective - oracle).abs() <= 0.01 * oracle, "rate {rate}: {} vs {oracle}", sol.objective);
    }
}

#[test]
fn unit_channel_feasibility_threshold() {
    // h = (1, 0), sigma^2 = 1, P = 2 is feasible iff 2^R - 1 < 2.
    let h = DVector::from_vec(vec![c(1.0), c(0.0)]);
    let opts = SdrOptions::default();
    let feasible = BeamformProblem::new(vec![h.clone()], vec![1.0], 2.0, 1.5).unwrap();
    let d = design_beamformers(&feasible, 2, &opts).unwrap();
    assert!(d.feasibility.all_pass(), "{}", d.feasibility.table());
    let tight = BeamformProblem::new(vec![h.clone()], vec![1.0], 2.0, 3f64.log2() - 1e-3).unwrap();
    let near = solve_sdr(&tight, &opts).unwrap();
    assert!(near.objective > 10.0 * d.objective, "objective must blow up near the boundary");
    let infeasible = BeamformProblem::new(vec![h], vec![1.0], 2.0, 1.7).unwrap();
    assert!(matches!(solve_sdr(&infeasible, &opts), Err(Error::Infeasible(_))));
    assert!(!is_feasible(&infeasible, &opts).unwrap());
    assert_relative_eq!(min_power_for_rate(&infeasible).unwrap(), 2f64.powf(1.7) - 1.0, max_relative = 1e-10);
}

#[test]
fn power_floor_at_high_rates() {
    // One UE: maximum-ratio transmission is optimal, so P_min = (2^R - 1) sigma^2 / |h|^2.
    let h = random_channels(8, 1, 7);
    for rate in [2.0, 20.0, 40.0] {
        let prob = BeamformProblem::new(h.clone(), vec![3e-3], 1.0, rate).unwrap();
        let expected = (2f64.powf(rate) - 1.0) * 3e-3 / h[0].norm_squared();
        assert_relative_eq!(min_power_for_rate(&prob).unwrap(), expected, max_relative = 1e-10);
    }
    // Orthogonal channels do not interact.
    let a = DVector::from_vec(vec![c(2.0), c(0.0), c(0.0)]);
    let b = DVector::from_vec(vec![c(0.0), Complex64::new(0.0, 0.5), c(0.0)]);
    let prob = BeamformProblem::new(vec![a, b], vec![1.0, 1.0], 1.0, 30.0).unwrap();
    let g = 2f64.powf(30.0) - 1.0;
    assert_relative_eq!(min_power_for_rate(&prob).unwrap(), g / 4.0 + g / 0.25, max_relative = 1e-10);
    // Far past the threshold the pre-check certifies infeasibility.
    let prob = BeamformProblem::new(h, vec![3e-3], 1e-3, 40.0).unwrap();
    assert!(matches!(solve_sdr(&prob, &SdrOptions::default()), Err(Error::Infeasible(_))));
}

#[test]
fn phase_one_agrees_with_duality() {
    let opts = SdrOptions::default();
    let mut checked = 0;
    for seed in 0..12u64 {
        let k = 1 + (seed as usize % 3);
        let chans = random_channels(4, k, 100 + seed);
        let noise = vec![1.0; k];
        for rate in [1.0, 2.0, 3.0, 4.0] {
            let prob = BeamformProblem::new(chans.clone(), noise.clone(), 20.0, rate).unwrap();
            let p_min = min_power_for_rate(&prob).unwrap();
            let ratio = p_min / prob.max_power;
            if (ratio - 1.0).abs() < 0.02 {
                continue;
            }
            // Phase I on its own, without the duality pre-check.
            let mut budget = opts.max_newton_steps;
            let phase = phase_one(&Normalized::new(&prob), &mut budget).unwrap();
            assert_eq!(matches!(phase, PhaseOne::Feasible(_)), ratio < 1.0, "seed {seed} rate {rate} ratio {ratio}");
            assert_eq!(is_feasible(&prob, &opts).unwrap(), ratio < 1.0);
            checked += 1;
        }
    }
    assert!(checked > 30);
}

#[test]
fn extracted_design_is_feasible_and_rank_one() {
    let chans = random_channels(8, 3, 7);
    let prob = BeamformProblem::new(chans, vec![1e-3; 3], 1.0, 3.0).unwrap();
    let sol = solve_sdr(&prob, &SdrOptions::default()).unwrap();
    let d = extract_beamformers(&sol.s_x, &sol.r_k, &prob).unwrap();
    assert!(d.feasibility.all_pass(), "{}", d.feasibility.table());
    for (k, h) in prob.channels.iter().enumerate() {
        let before = quad_form(&sol.r_k[k], h);
        let after = quad_form(&d.r_k[k], h);
        assert!((before - after).abs() <= 1e-9 * before);
        let w = d.w_c.column(k).into_owned();
        assert!((&w * w.adjoint() - &d.r_k[k]).norm() <= 1e-12 * d.r_k[k].norm());
    }
    let rebuilt = &d.w_c * d.w_c.adjoint() + &d.w_s * d.w_s.adjoint();
    assert!((rebuilt - &d.s_x).norm() <= 1e-9 * d.s_x.norm());
    assert_relative_eq!(d.objective, sol.objective, max_relative = 1e-9);
    let tr: f64 = d.s_x.diagonal().iter().map(|z| z.re).sum();
    assert!(tr <= prob.max_power * (1.0 + 1e-9));
}

#[test]
fn design_scales_with_power_and_noise() {
    let chans = random_channels(4, 2, 21);
    let base = BeamformProblem::new(chans.clone(), vec![0.5, 0.25], 3.0, 2.0).unwrap();
    let scaled = BeamformProblem::new(chans, vec![5.0, 2.5], 30.0, 2.0).unwrap();
    let opts = SdrOptions::default();
    let (a, b) = (solve_sdr(&base, &opts).unwrap(), solve_sdr(&scaled, &opts).unwrap());
    assert_relative_eq!(a.objective, 10.0 * b.objective, max_relative = 1e-6);
    assert!((&a.s_x * c(10.0) - &b.s_x).norm() <= 1e-4 * b.s_x.norm());
}

#[test]
fn objective_grows_with_rate() {
    let chans = random_channels(6, 2, 31);
    let opts = SdrOptions::default();
    let objs: Vec<f64> = [0.5, 2.0, 3.5]
        .iter()
        .map(|&r| solve_sdr(&BeamformProblem::new(chans.clone(), vec![0.1; 2], 1.0, r).unwrap(), &opts).unwrap().objective)
        .collect();
    assert!(objs[0] >= 36.0 - 1e-6);
    assert!(objs[0] < objs[1] && objs[1] < objs[2], "{objs:?}");
}

#[test]
fn no_users_or_zero_rate_gives_scaled_identity() {
    let opts = SdrOptions::default();
    let empty = BeamformProblem::new(Vec::new(), Vec::new(), 4.0, 5.0).unwrap();
    let d = design_beamformers(&empty, 4, &opts).unwrap();
    assert!((&d.s_x - CMat::identity(4, 4)).norm() < 1e-15);
    assert!(d.feasibility.all_pass());
    assert_relative_eq!(d.objective, 4.0);

    let prob = BeamformProblem::new(random_channels(4, 2, 3), vec![1.0; 2], 4.0, 0.0).unwrap();
    let d = design_beamformers(&prob, 4, &opts).unwrap();
    assert!((&d.s_x - CMat::identity(4, 4)).norm() < 1e-14);
    assert!(d.feasibility.all_pass(), "{}", d.feasibility.table());
}

#[test]
fn zero_gain_is_reported() {
    let h = DVector::from_vec(vec![c(1.0), c(0.0)]);
    let prob = BeamformProblem::new(vec![h], vec![1.0], 1.0, 1.0).unwrap();
    let s = CMat::identity(2, 2) * c(0.5);
    let mut r = CMat::zeros(2, 2);
    r[(1, 1)] = c(0.5);
    assert!(matches!(extract_beamformers(&s, &[r], &prob), Err(Error::ZeroGain(0))));
}

#[test]
fn hand_built_violations_are_flagged() {
    let h = DVector::from_vec(vec![c(1.0), c(0.0)]);
    let prob = BeamformProblem::new(vec![h.clone()], vec![1.0], 2.0, 1.0).unwrap();
    let good = design_beamformers(&prob, 2, &SdrOptions::default()).unwrap();
    let tol = FeasibilityTolerances::default();

    let mut over = good.clone();
    let tr: f64 = over.s_x.diagonal().iter().map(|z| z.re).sum();
    over.s_x *= c(1.01 * prob.max_power / tr);
    let rep = validate_feasibility(&over, &prob, &tol);
    let power = rep.get("power").unwrap();
    assert!(!power.pass);
    assert_relative_eq!(power.residual, 0.01 * prob.max_power, max_relative = 1e-9);

    let mut starved = good.clone();
    starved.r_k[0] *= c(0.5);
    assert!(!validate_feasibility(&starved, &prob, &tol).get("rate_0").unwrap().pass);

    let mut ranky = good.clone();
    ranky.r_k[0] += CMat::identity(2, 2) * c(0.05);
    let rep = validate_feasibility(&ranky, &prob, &tol);
    assert!(!rep.get("rank_one_0").unwrap().pass);

    let mut excess = good;
    excess.r_k[0] = &excess.s_x * c(1.5);
    assert!(!validate_feasibility(&excess, &prob, &tol).get("psd_sensing").unwrap().pass);
    assert!(validate_feasibility(&excess, &prob, &tol).table().contains("FAIL"));
}

#[test]
fn rejects_bad_inputs() {
    let h = DVector::from_vec(vec![c(1.0)]);
    assert!(BeamformProblem::new(vec![h.clone()], vec![1.0, 2.0], 1.0, 1.0).is_err());
    assert!(BeamformProblem::new(vec![h.clone()], vec![1.0], 0.0, 1.0).is_err());
    assert!(BeamformProblem::new(vec![h.clone()], vec![0.0], 1.0, 1.0).is_err());
    assert!(BeamformProblem::new(vec![h.clone()], vec![1.0], 1.0, -1.0).is_err());
    let two = random_channels(1, 2, 1);
    let prob = BeamformProblem::new(two, vec![1.0; 2], 1.0, 1.0).unwrap();
    assert!(solve_sdr(&prob, &SdrOptions::default()).is_err());
}

#[test]
fn threshold_shrinks_when_users_are_added() {
    let opts = SdrOptions::default();
    let chans = random_channels(4, 3, 55);
    let one = rate_threshold(&chans[..1], &[1.0], 10.0, 12.0, 1e-3, &opts).unwrap();
    let three = rate_threshold(&chans, &[1.0; 3], 10.0, 12.0, 1e-3, &opts).unwrap();
    assert!(three < one, "{three} vs {one}");
    // Matches the closed form for a single user: 2^R - 1 = P |h|^2 / sigma^2.
    assert_relative_eq!(one, (1.0 + 10.0 * chans[0].norm_squared()).log2(), epsilon = 2e-3);
}

#[test]
fn relaxed_blocks_stay_positive_semidefinite() {
    let opts = SdrOptions::default();
    for seed in 0..12 {
        let prob = BeamformProblem::new(random_channels(8, 3, 300 + seed), vec![0.1; 3], 1.0, 2.5).unwrap();
        let sol = solve_sdr(&prob, &opts).unwrap();
        let tr: f64 = sol.s_x.diagonal().iter().map(|z| z.re).sum();
        for m in sol.r_k.iter().chain([&sol.r_s]) {
            assert!(hermitian_eigen(m).0[0] >= -1e-9 * tr, "seed {seed}");
        }
    }
}
