//! Discretized Lippmann-Schwinger operator `E - k^2 G[chi E]`.
//!
//! Pulse basis with point matching on the voxel grid. The volume convolution
//! is block Toeplitz, so it is embedded in a circulant of twice the size per
//! axis and applied with 3D FFTs.

use num_complex::Complex64;

use super::fft3::Fft3;
use super::green::{dyadic_green, self_cell_coefficient};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Storage order of the six independent entries of the symmetric kernel.
const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

#[inline]
fn pair_slot(a: usize, b: usize) -> usize {
    match (a.min(b), a.max(b)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        _ => 5,
    }
}

/// Interaction dyad between two voxel centres separated by integer offset
/// `(di, dj, dk)` voxels: `k^2 dV G` off the diagonal and the analytic
/// self-cell integral on it.
pub fn kernel_entry(offset: [i64; 3], voxel_edge_m: f64, k_b: f64) -> [[Complex64; 3]; 3] {
    let dv = voxel_edge_m.powi(3);
    if offset == [0, 0, 0] {
        let s = self_cell_coefficient(k_b, dv) * (k_b * k_b);
        let mut m = [[ZERO; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            row[a] = s;
        }
        return m;
    }
    let r = [
        offset[0] as f64 * voxel_edge_m,
        offset[1] as f64 * voxel_edge_m,
        offset[2] as f64 * voxel_edge_m,
    ];
    let g = dyadic_green(&r, &[0.0; 3], k_b).expect("non-zero offset");
    g.scaled(Complex64::new(k_b * k_b * dv, 0.0)).0
}

/// Precomputed kernel spectra for one grid shape, voxel size, and wavenumber.
pub struct LsOperator {
    dims: [usize; 3],
    padded: [usize; 3],
    fft: Fft3,
    spectra: [Vec<Complex64>; 6],
}

impl LsOperator {
    pub fn new(dims: [usize; 3], voxel_edge_m: f64, k_b: f64) -> Self {
        let padded = dims.map(|n| 2 * n);
        let fft = Fft3::new(padded);
        let len = fft.len();
        let mut spectra: [Vec<Complex64>; 6] = std::array::from_fn(|_| vec![ZERO; len]);
        let wrap = |p: usize, n: usize| -> Option<i64> {
            match p.cmp(&n) {
                std::cmp::Ordering::Less => Some(p as i64),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(p as i64 - 2 * n as i64),
            }
        };
        for r in 0..padded[2] {
            for q in 0..padded[1] {
                for p in 0..padded[0] {
                    let (Some(di), Some(dj), Some(dk)) = (wrap(p, dims[0]), wrap(q, dims[1]), wrap(r, dims[2])) else {
                        continue;
                    };
                    let m = kernel_entry([di, dj, dk], voxel_edge_m, k_b);
                    let idx = p + padded[0] * (q + padded[1] * r);
                    for (slot, &(a, b)) in PAIRS.iter().enumerate() {
                        spectra[slot][idx] = m[a][b];
                    }
                }
            }
        }
        for s in spectra.iter_mut() {
            fft.forward(s);
        }
        LsOperator { dims, padded, fft, spectra }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// `sum_v' K(v - v') j(v')` for a current density sampled on the grid.
    pub fn convolve(&self, current: &[[Complex64; 3]]) -> Vec<[Complex64; 3]> {
        let [nx, ny, nz] = self.dims;
        let [px, py, _] = self.padded;
        assert_eq!(current.len(), nx * ny * nz);
        let len = self.fft.len();
        let mut src: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![ZERO; len]);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let v = current[i + nx * (j + ny * k)];
                    let idx = i + px * (j + py * k);
                    for b in 0..3 {
                        src[b][idx] = v[b];
                    }
                }
            }
        }
        for s in src.iter_mut() {
            self.fft.forward(s);
        }
        let mut out: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![ZERO; len]);
        for (a, o) in out.iter_mut().enumerate() {
            let k0 = &self.spectra[pair_slot(a, 0)];
            let k1 = &self.spectra[pair_slot(a, 1)];
            let k2 = &self.spectra[pair_slot(a, 2)];
            for idx in 0..len {
                o[idx] = k0[idx] * src[0][idx] + k1[idx] * src[1][idx] + k2[idx] * src[2][idx];
            }
            self.fft.inverse(o);
        }
        let mut result = vec![[ZERO; 3]; nx * ny * nz];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + px * (j + py * k);
                    result[i + nx * (j + ny * k)] = [out[0][idx], out[1][idx], out[2][idx]];
                }
            }
        }
        result
    }

    /// `E - K * (chi E)`.
    pub fn apply(&self, chi: &[Complex64], field: &[[Complex64; 3]]) -> Vec<[Complex64; 3]> {
        assert_eq!(chi.len(), field.len());
        if chi.iter().all(|c| *c == ZERO) {
            return field.to_vec();
        }
        let current: Vec<[Complex64; 3]> =
            chi.iter().zip(field).map(|(c, e)| [c * e[0], c * e[1], c * e[2]]).collect();
        let scattered = self.convolve(&current);
        field
            .iter()
            .zip(&scattered)
            .map(|(e, s)| [e[0] - s[0], e[1] - s[1], e[2] - s[2]])
            .collect()
    }

    /// Same as [`apply`](Self::apply) on the flat `[Ex0, Ey0, Ez0, Ex1, ...]` layout.
    pub fn apply_flat(&self, chi: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
        let field: Vec<[Complex64; 3]> = x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        self.apply(chi, &field).into_iter().flatten().collect()
    }
}
