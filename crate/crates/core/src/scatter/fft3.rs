//! In-place 3D FFT built from 1D `rustfft` passes (x-fastest storage).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Fft3 { dims, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        assert_eq!(data.len(), self.len());
        let [nx, ny, nz] = self.dims;
        // x lines are contiguous.
        plans[0].process(data);
        let mut line = vec![Complex64::new(0.0, 0.0); ny.max(nz)];
        for k in 0..nz {
            for i in 0..nx {
                let buf = &mut line[..ny];
                for j in 0..ny {
                    buf[j] = data[i + nx * (j + ny * k)];
                }
                plans[1].process(buf);
                for j in 0..ny {
                    data[i + nx * (j + ny * k)] = buf[j];
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let buf = &mut line[..nz];
                for k in 0..nz {
                    buf[k] = data[i + nx * (j + ny * k)];
                }
                plans[2].process(buf);
                for k in 0..nz {
                    data[i + nx * (j + ny * k)] = buf[k];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_naive_dft() {
        let dims = [3, 4, 2];
        let n: usize = dims.iter().product();
        let data: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut fast = data.clone();
        Fft3::new(dims).forward(&mut fast);
        for (out, kk) in fast.iter().enumerate() {
            let (u, v, w) = (out % 3, (out / 3) % 4, out / 12);
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, x) in data.iter().enumerate() {
                let (i, j, k) = (idx % 3, (idx / 3) % 4, idx / 12);
                let ph = -2.0 * PI * (u * i) as f64 / 3.0 - 2.0 * PI * (v * j) as f64 / 4.0 - 2.0 * PI * (w * k) as f64 / 2.0;
                acc += x * Complex64::new(ph.cos(), ph.sin());
            }
            assert!((acc - kk).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let dims = [4, 4, 4];
        let data: Vec<Complex64> = (0..64).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let mut x = data.clone();
        let f = Fft3::new(dims);
        f.forward(&mut x);
        f.inverse(&mut x);
        for (a, b) in x.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
