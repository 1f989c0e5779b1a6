//! Volume-integral-equation forward model: incident dipole fields, the
//! FFT-accelerated Lippmann-Schwinger solve, and synthesis of the sensing
//! channel seen by the receive array.

pub mod bicgstab;
pub mod fft3;
pub mod green;
pub mod operator;

use num_complex::Complex64;
use rayon::prelude::*;

pub use bicgstab::SolveReport;
pub use green::{dyadic_green, scalar_green, DyadicGreen};
pub use operator::LsOperator;

use crate::cmatrix::ChannelMatrix;
use crate::config::{SystemConfig, Vec3};
use crate::error::{Error, Result};
use crate::grid::{FieldOnGrid, VoxelContrast};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// How the field inside the target is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterMode {
    /// Full Lippmann-Schwinger solve.
    Full,
    /// First Born approximation: total field replaced by the incident field.
    Born,
}

/// Field of transmit dipole `tx_index` at every voxel centre:
/// `k^2 G(r, r_m) p_t sqrt(G_t) a`, with `a` the configured source amplitude.
pub fn incident_field(tx_index: usize, cfg: &SystemConfig, grid: &VoxelContrast) -> Result<FieldOnGrid> {
    let Some(src) = cfg.tx_antenna_positions.get(tx_index) else {
        return Err(Error::Dimension(format!("tx index {tx_index} >= n_tx {}", cfg.n_tx)));
    };
    let k = cfg.wavenumber;
    let amp = Complex64::new(k * k * cfg.tx_gain.sqrt() * cfg.source_amplitude, 0.0);
    let e_field = (0..grid.len())
        .map(|v| {
            let g = dyadic_green(&grid.center_of(v), src, k)?;
            let e = g.apply_real(&cfg.tx_polarization);
            Ok([e[0] * amp, e[1] * amp, e[2] * amp])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldOnGrid { grid_dims: grid.grid_dims, e_field })
}

fn check_matching(grid: &VoxelContrast, field: &FieldOnGrid) -> Result<()> {
    if !grid.same_grid(field.grid_dims, field.len()) {
        return Err(Error::Dimension(format!(
            "grid {:?} ({} voxels) vs field {:?} ({} voxels)",
            grid.grid_dims,
            grid.len(),
            field.grid_dims,
            field.len()
        )));
    }
    Ok(())
}

/// `E - k^2 G[chi E]` evaluated through the FFT-accelerated convolution.
pub fn apply_ls_operator(grid: &VoxelContrast, field: &FieldOnGrid, k_b: f64) -> Result<FieldOnGrid> {
    check_matching(grid, field)?;
    let op = LsOperator::new(grid.grid_dims, grid.voxel_edge_m, k_b);
    Ok(FieldOnGrid { grid_dims: grid.grid_dims, e_field: op.apply(&grid.chi, &field.e_field) })
}

/// Solves the discretized Lippmann-Schwinger equation for the total field.
pub fn solve_total_field(
    grid: &VoxelContrast,
    incident: &FieldOnGrid,
    k_b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(FieldOnGrid, SolveReport)> {
    check_matching(grid, incident)?;
    let op = LsOperator::new(grid.grid_dims, grid.voxel_edge_m, k_b);
    solve_with(&op, grid, incident, tol, max_iter)
}

/// Like [`solve_total_field`] with a prebuilt operator.
pub fn solve_with(
    op: &LsOperator,
    grid: &VoxelContrast,
    incident: &FieldOnGrid,
    tol: f64,
    max_iter: usize,
) -> Result<(FieldOnGrid, SolveReport)> {
    check_matching(grid, incident)?;
    if op.dims() != grid.grid_dims {
        return Err(Error::Dimension("operator built for a different grid".into()));
    }
    if !(tol > 0.0 && tol < 1.0) || max_iter == 0 {
        return Err(Error::Domain("tol must lie in (0,1) and max_iter >= 1".into()));
    }
    if grid.chi.iter().all(|c| *c == ZERO) {
        return Ok((incident.clone(), SolveReport { iterations: 0, final_relative_residual: 0.0, converged: true }));
    }
    let b = incident.to_flat();
    let (x, report) = bicgstab::bicgstab(|v| op.apply_flat(&grid.chi, v), &b, tol, max_iter);
    if !report.converged {
        return Err(Error::NonConvergence { iterations: report.iterations, residual: report.final_relative_residual });
    }
    Ok((FieldOnGrid::from_flat(grid.grid_dims, &x), report))
}

/// Field scattered to `rx_point` by the contrast currents (midpoint rule).
pub fn scattered_field_at(grid: &VoxelContrast, total: &FieldOnGrid, rx_point: &Vec3, k_b: f64) -> Result<[Complex64; 3]> {
    check_matching(grid, total)?;
    if grid.contains_point(*rx_point) {
        return Err(Error::ReceiverInsideDomain(rx_point[0], rx_point[1], rx_point[2]));
    }
    let scale = Complex64::new(k_b * k_b * grid.voxel_volume(), 0.0);
    let mut acc = [ZERO; 3];
    for (v, chi) in grid.chi.iter().enumerate() {
        if *chi == ZERO {
            continue;
        }
        let e = total.e_field[v];
        let j = [chi * e[0], chi * e[1], chi * e[2]];
        let s = dyadic_green(rx_point, &grid.center_of(v), k_b)?.apply(&j);
        for a in 0..3 {
            acc[a] += s[a] * scale;
        }
    }
    Ok(acc)
}

/// Reusable forward model for one system configuration. The kernel spectra
/// depend only on the grid shape, voxel size, and wavenumber, so they are
/// shared by all targets rasterized on the configured grid.
pub struct ForwardModel {
    cfg: SystemConfig,
    op: LsOperator,
}

impl ForwardModel {
    pub fn new(cfg: &SystemConfig) -> Self {
        let n = cfg.voxels_per_axis;
        ForwardModel { cfg: cfg.clone(), op: LsOperator::new([n; 3], cfg.voxel_edge_m(), cfg.wavenumber) }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &LsOperator {
        &self.op
    }

    /// Target echo channel `H_s`; entry `(n, m)` is `G_r p_r^T E^s_nm(r_n)`.
    /// The direct transmit-to-receive path is excluded.
    pub fn synthesize(&self, grid: &VoxelContrast, mode: ScatterMode) -> Result<(ChannelMatrix, Vec<SolveReport>)> {
        let cfg = &self.cfg;
        let k = cfg.wavenumber;
        if grid.grid_dims != self.op.dims() || (grid.voxel_edge_m - cfg.voxel_edge_m()).abs() > 1e-12 * cfg.voxel_edge_m() {
            return Err(Error::Dimension("grid does not match the configured voxelization".into()));
        }
        for rx in &cfg.rx_antenna_positions {
            if grid.contains_point(*rx) {
                return Err(Error::ReceiverInsideDomain(rx[0], rx[1], rx[2]));
            }
        }
        let active: Vec<usize> = (0..grid.len()).filter(|&v| grid.chi[v] != ZERO).collect();
        let mut h = ChannelMatrix::zeros(cfg.n_rx, cfg.n_tx);
        if active.is_empty() {
            return Ok((h, vec![SolveReport { iterations: 0, final_relative_residual: 0.0, converged: true }; cfg.n_tx]));
        }
        // Receiver-side dyads projected onto the receive polarization: p^T G(r_n, r_v).
        let scale = k * k * grid.voxel_volume() * cfg.rx_gain;
        let rx_rows: Vec<Vec<[Complex64; 3]>> = cfg
            .rx_antenna_positions
            .iter()
            .map(|rx| {
                active
                    .iter()
                    .map(|&v| {
                        let g = dyadic_green(rx, &grid.center_of(v), k)?;
                        // G is symmetric, so p^T G = (G p)^T.
                        let row = g.apply_real(&cfg.rx_polarization);
                        Ok(row.map(|c| c * scale))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let columns: Vec<Result<(Vec<Complex64>, SolveReport)>> = (0..cfg.n_tx)
            .into_par_iter()
            .map(|m| {
                let inc = incident_field(m, cfg, grid)?;
                let (total, report) = match mode {
                    ScatterMode::Born => (inc, SolveReport { iterations: 0, final_relative_residual: 0.0, converged: true }),
                    ScatterMode::Full => solve_with(&self.op, grid, &inc, cfg.solver_tol, cfg.solver_max_iter)?,
                };
                let currents: Vec<[Complex64; 3]> = active
                    .iter()
                    .map(|&v| {
                        let (c, e) = (grid.chi[v], total.e_field[v]);
                        [c * e[0], c * e[1], c * e[2]]
                    })
                    .collect();
                let col = rx_rows
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&currents)
                            .map(|(g, j)| g[0] * j[0] + g[1] * j[1] + g[2] * j[2])
                            .sum::<Complex64>()
                    })
                    .collect();
                Ok((col, report))
            })
            .collect();

        let mut reports = Vec::with_capacity(cfg.n_tx);
        for (m, col) in columns.into_iter().enumerate() {
            let (col, rep) = col?;
            for (n, v) in col.into_iter().enumerate() {
                h.0[(n, m)] = v;
            }
            reports.push(rep);
        }
        Ok((h, reports))
    }
}

/// Convenience wrapper building a [`ForwardModel`] for a single synthesis.
pub fn synthesize_channel(grid: &VoxelContrast, cfg: &SystemConfig, mode: ScatterMode) -> Result<ChannelMatrix> {
    ForwardModel::new(cfg).synthesize(grid, mode).map(|(h, _)| h)
}

#[cfg(test)]
mod tests;
