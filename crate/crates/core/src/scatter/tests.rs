use super::operator::kernel_entry;
use super::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Explicitly assembled `I - K diag(chi)` on the flat layout.
fn dense_operator(grid: &VoxelContrast, k: f64) -> DMatrix<Complex64> {
    let n = grid.len();
    let mut a = DMatrix::<Complex64>::identity(3 * n, 3 * n);
    for v in 0..n {
        let cv = grid.coords(v);
        for w in 0..n {
            let cw = grid.coords(w);
            let off = [cv[0] as i64 - cw[0] as i64, cv[1] as i64 - cw[1] as i64, cv[2] as i64 - cw[2] as i64];
            let kern = kernel_entry(off, grid.voxel_edge_m, k);
            for p in 0..3 {
                for q in 0..3 {
                    a[(3 * v + p, 3 * w + q)] -= kern[p][q] * grid.chi[w];
                }
            }
        }
    }
    a
}

fn random_field(n: usize, seed: u64) -> FieldOnGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e_field = (0..n)
        .map(|_| std::array::from_fn(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
        .collect();
    let side = (n as f64).cbrt().round() as usize;
    FieldOnGrid { grid_dims: [side; 3], e_field }
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

// 6^3 grid over the desk-scale domain at the reference location.
fn small_setup(chi: Complex64) -> (VoxelContrast, f64) {
    let cfg = SystemConfig::desk_scale();
    (VoxelContrast::centered_cube(cfg.reference_location, cfg.domain_extent_m, 6).uniform(chi), cfg.wavenumber)
}

#[test]
fn fft_operator_matches_dense_assembly() {
    let (grid, k) = small_setup(c(0.5, 0.0));
    let field = random_field(grid.len(), 1);
    let fast = apply_ls_operator(&grid, &field, k).unwrap().to_flat();
    let dense = dense_operator(&grid, k) * DVector::from_column_slice(&field.to_flat());
    assert!(rel_err(&fast, dense.as_slice()) < 1e-10);
}

#[test]
fn fft_operator_matches_dense_with_lossy_heterogeneous_contrast() {
    let (mut grid, k) = small_setup(c(0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for chi in grid.chi.iter_mut() {
        if rng.random_bool(0.6) {
            *chi = c(rng.random_range(0.0..1.5), -rng.random_range(0.0..0.3));
        }
    }
    let field = random_field(grid.len(), 2);
    let fast = apply_ls_operator(&grid, &field, k).unwrap().to_flat();
    let dense = dense_operator(&grid, k) * DVector::from_column_slice(&field.to_flat());
    let re: Vec<Complex64> = fast.iter().map(|z| c(z.re, 0.0)).collect();
    let re_d: Vec<Complex64> = dense.iter().map(|z| c(z.re, 0.0)).collect();
    let im: Vec<Complex64> = fast.iter().map(|z| c(z.im, 0.0)).collect();
    let im_d: Vec<Complex64> = dense.iter().map(|z| c(z.im, 0.0)).collect();
    assert!(rel_err(&re, &re_d) < 1e-10);
    assert!(rel_err(&im, &im_d) < 1e-10);
}

#[test]
fn zero_contrast_operator_is_identity() {
    let (grid, k) = small_setup(c(0.0, 0.0));
    let field = random_field(grid.len(), 3);
    assert_eq!(apply_ls_operator(&grid, &field, k).unwrap(), field);
}

#[test]
fn operator_is_linear() {
    let (grid, k) = small_setup(c(0.3, -0.1));
    let u = random_field(grid.len(), 4);
    let v = random_field(grid.len(), 5);
    let (a, b) = (c(0.7, -1.2), c(-2.0, 0.4));
    let lhs = apply_ls_operator(&grid, &u.scaled(a).axpy(b, &v), k).unwrap();
    let rhs = apply_ls_operator(&grid, &u, k).unwrap().scaled(a).axpy(b, &apply_ls_operator(&grid, &v, k).unwrap());
    assert!(rel_err(&lhs.to_flat(), &rhs.to_flat()) < 1e-12);
}

#[test]
fn mismatched_grids_are_rejected() {
    let (grid, k) = small_setup(c(0.5, 0.0));
    let field = FieldOnGrid::zeros([5, 5, 5]);
    assert!(matches!(apply_ls_operator(&grid, &field, k), Err(Error::Dimension(_))));
}

#[test]
fn krylov_solution_matches_dense_lu() {
    let cfg = SystemConfig::desk_scale();
    let (grid, k) = small_setup(c(0.5, 0.0));
    let inc = incident_field(3, &cfg, &grid).unwrap();
    let (total, rep) = solve_total_field(&grid, &inc, k, 1e-11, 500).unwrap();
    assert!(rep.converged && rep.final_relative_residual <= 1e-11);
    let lu = dense_operator(&grid, k).lu();
    let exact = lu.solve(&DVector::from_column_slice(&inc.to_flat())).unwrap();
    assert!(rel_err(&total.to_flat(), exact.as_slice()) < 1e-8);
}

#[test]
fn zero_contrast_solve_returns_incident() {
    let cfg = SystemConfig::default();
    let grid = VoxelContrast::centered_cube([3.0, 0.0, 0.0], 1.0, 4);
    let inc = incident_field(0, &cfg, &grid).unwrap();
    let (total, rep) = solve_total_field(&grid, &inc, cfg.wavenumber, 1e-6, 10).unwrap();
    assert_eq!(total, inc);
    assert!(rep.iterations <= 1);
}

#[test]
fn solve_rejects_bad_tolerance_and_reports_non_convergence() {
    let (grid, k) = small_setup(c(0.5, 0.0));
    let inc = random_field(grid.len(), 6);
    assert!(matches!(solve_total_field(&grid, &inc, k, 0.0, 10), Err(Error::Domain(_))));
    assert!(matches!(solve_total_field(&grid, &inc, k, 1e-6, 0), Err(Error::Domain(_))));
    assert!(matches!(solve_total_field(&grid, &inc, k, 1e-14, 2), Err(Error::NonConvergence { .. })));
}

#[test]
fn incident_field_matches_pointwise_evaluation() {
    let cfg = SystemConfig::default();
    let grid = VoxelContrast::centered_cube([3.0, 0.0, 0.0], 1.0, 4);
    let inc = incident_field(2, &cfg, &grid).unwrap();
    let k = cfg.wavenumber;
    for v in [0, 17, 63] {
        let g = dyadic_green(&grid.center_of(v), &cfg.tx_antenna_positions[2], k).unwrap();
        for a in 0..3 {
            let expect = g.0[a][2] * k * k * cfg.tx_gain.sqrt() * cfg.source_amplitude;
            assert!((inc.e_field[v][a] - expect).norm() <= 1e-14 * expect.norm().max(1e-300));
        }
    }
    let mut doubled = cfg.clone();
    doubled.source_amplitude *= 2.0;
    let inc2 = incident_field(2, &doubled, &grid).unwrap();
    for (a, b) in inc.e_field.iter().zip(&inc2.e_field) {
        for i in 0..3 {
            assert!((b[i] - a[i] * 2.0).norm() <= 1e-15 * b[i].norm());
        }
    }
    assert!(matches!(incident_field(8, &cfg, &grid), Err(Error::Dimension(_))));
}

#[test]
fn incident_field_has_dipole_symmetry() {
    // Voxel centres mirrored through the z = 0 plane share |E| for a z dipole at the origin.
    let mut cfg = SystemConfig::default();
    cfg.tx_antenna_positions = vec![[0.0; 3]];
    cfg.n_tx = 1;
    let grid = VoxelContrast::centered_cube([3.0, 0.0, 0.0], 1.0, 4);
    let inc = incident_field(0, &cfg, &grid).unwrap();
    for v in 0..grid.len() {
        let [i, j, kk] = grid.coords(v);
        let m = grid.index(i, j, 3 - kk);
        let na: f64 = inc.e_field[v].iter().map(|z| z.norm_sqr()).sum();
        let nb: f64 = inc.e_field[m].iter().map(|z| z.norm_sqr()).sum();
        assert!((na - nb).abs() <= 1e-12 * na);
    }
}

#[test]
fn scattered_field_single_voxel_oracle() {
    let cfg = SystemConfig::default();
    let k = cfg.wavenumber;
    let mut grid = VoxelContrast::centered_cube([3.0, 0.0, 0.0], 1.0, 4);
    let chi = c(1.2, -0.3);
    grid.chi[21] = chi;
    let total = random_field(grid.len(), 7);
    let rx = [0.0, 0.1, 0.2];
    let es = scattered_field_at(&grid, &total, &rx, k).unwrap();
    let g = dyadic_green(&rx, &grid.center_of(21), k).unwrap();
    let j = total.e_field[21].map(|e| e * chi * k * k * grid.voxel_volume());
    let expect = g.apply(&j);
    for a in 0..3 {
        assert!((es[a] - expect[a]).norm() <= 1e-14 * expect[a].norm());
    }
    // Linear in chi with the field held fixed.
    grid.chi[21] = chi * 3.0;
    let es3 = scattered_field_at(&grid, &total, &rx, k).unwrap();
    for a in 0..3 {
        assert!((es3[a] - es[a] * 3.0).norm() <= 1e-13 * es3[a].norm());
    }
    let empty = VoxelContrast::centered_cube([3.0, 0.0, 0.0], 1.0, 4);
    assert_eq!(scattered_field_at(&empty, &total, &rx, k).unwrap(), [ZERO; 3]);
    assert!(matches!(
        scattered_field_at(&grid, &total, &[3.0, 0.0, 0.0], k),
        Err(Error::ReceiverInsideDomain(..))
    ));
}

fn toy_cfg() -> SystemConfig {
    let mut cfg = SystemConfig::desk_scale();
    cfg.voxels_per_axis = 4;
    cfg
}

#[test]
fn zero_contrast_gives_zero_channel() {
    let cfg = toy_cfg();
    let grid = VoxelContrast::centered_cube(cfg.reference_location, cfg.domain_extent_m, 4);
    let h = synthesize_channel(&grid, &cfg, ScatterMode::Full).unwrap();
    assert!(h.0.iter().all(|z| *z == ZERO));
    assert_eq!((h.n_rx(), h.n_tx()), (cfg.n_rx, cfg.n_tx));
}

#[test]
fn born_channel_is_linear() {
    let cfg = toy_cfg();
    let base = VoxelContrast::centered_cube(cfg.reference_location, cfg.domain_extent_m, 4);
    let mut a = base.clone();
    let mut b = base.clone();
    for v in 0..base.len() {
        if v % 3 == 0 {
            a.chi[v] = c(0.8, -0.1);
        } else if v % 5 == 1 {
            b.chi[v] = c(0.4, 0.0);
        }
    }
    let mut ab = a.clone();
    for v in 0..base.len() {
        ab.chi[v] += b.chi[v];
    }
    let two_a = VoxelContrast { chi: a.chi.iter().map(|z| z * 2.0).collect(), ..a.clone() };
    let h_a = synthesize_channel(&a, &cfg, ScatterMode::Born).unwrap().0;
    let h_b = synthesize_channel(&b, &cfg, ScatterMode::Born).unwrap().0;
    let h_ab = synthesize_channel(&ab, &cfg, ScatterMode::Born).unwrap().0;
    let h_2a = synthesize_channel(&two_a, &cfg, ScatterMode::Born).unwrap().0;
    assert!((&h_ab - &h_a - &h_b).norm() <= 1e-12 * h_ab.norm());
    assert!((&h_2a - &h_a * c(2.0, 0.0)).norm() <= 1e-12 * h_2a.norm());
}

#[test]
fn full_channel_matches_manual_assembly() {
    let cfg = toy_cfg();
    let grid = VoxelContrast::centered_cube(cfg.reference_location, cfg.domain_extent_m, 4).uniform(c(0.3, -0.05));
    let h = synthesize_channel(&grid, &cfg, ScatterMode::Full).unwrap();
    let m = 5;
    let inc = incident_field(m, &cfg, &grid).unwrap();
    let (total, _) = solve_total_field(&grid, &inc, cfg.wavenumber, cfg.solver_tol, cfg.solver_max_iter).unwrap();
    for n in [0, 7] {
        let es = scattered_field_at(&grid, &total, &cfg.rx_antenna_positions[n], cfg.wavenumber).unwrap();
        let p = cfg.rx_polarization;
        let expect = (es[0] * p[0] + es[1] * p[1] + es[2] * p[2]) * cfg.rx_gain;
        assert!((h.0[(n, m)] - expect).norm() <= 1e-12 * expect.norm());
    }
}

#[test]
fn synthesis_is_deterministic_and_rejects_wrong_grid() {
    let cfg = toy_cfg();
    let grid = VoxelContrast::centered_cube(cfg.reference_location, cfg.domain_extent_m, 4).uniform(c(0.2, 0.0));
    let model = ForwardModel::new(&cfg);
    let (h1, reps) = model.synthesize(&grid, ScatterMode::Full).unwrap();
    let (h2, _) = model.synthesize(&grid, ScatterMode::Full).unwrap();
    assert_eq!(h1, h2);
    assert!(reps.iter().all(|r| r.converged && r.final_relative_residual <= cfg.solver_tol));
    let wrong = VoxelContrast::centered_cube(cfg.reference_location, cfg.domain_extent_m, 5);
    assert!(matches!(model.synthesize(&wrong, ScatterMode::Born), Err(Error::Dimension(_))));
}
