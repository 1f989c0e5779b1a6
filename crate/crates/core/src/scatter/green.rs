//! Free-space scalar and dyadic Green's functions (`exp(-j omega t)` convention).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::config::Vec3;
use crate::error::{Error, Result};

const J: Complex64 = Complex64::new(0.0, 1.0);
const MIN_SEPARATION_M: f64 = 1e-12;

/// 3x3 complex dyad, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicGreen(pub [[Complex64; 3]; 3]);

impl DyadicGreen {
    pub fn apply(&self, v: &[Complex64; 3]) -> [Complex64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn apply_real(&self, v: &Vec3) -> [Complex64; 3] {
        self.apply(&[v[0].into(), v[1].into(), v[2].into()])
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|c| *c *= s);
        DyadicGreen(out)
    }
}

fn separation(r: &Vec3, r_prime: &Vec3) -> Result<(f64, Vec3)> {
    let d = [r[0] - r_prime[0], r[1] - r_prime[1], r[2] - r_prime[2]];
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if dist < MIN_SEPARATION_M {
        return Err(Error::Singularity(dist));
    }
    Ok((dist, [d[0] / dist, d[1] / dist, d[2] / dist]))
}

/// `exp(j k R) / (4 pi R)`.
pub fn scalar_green(r: &Vec3, r_prime: &Vec3, k_b: f64) -> Result<Complex64> {
    let (dist, _) = separation(r, r_prime)?;
    Ok(scalar_green_at(dist, k_b))
}

#[inline]
fn scalar_green_at(dist: f64, k_b: f64) -> Complex64 {
    (J * (k_b * dist)).exp() / (4.0 * PI * dist)
}

/// Closed-form dyadic Green's function `(I + grad grad / k^2) g`.
pub fn dyadic_green(r: &Vec3, r_prime: &Vec3, k_b: f64) -> Result<DyadicGreen> {
    let (dist, rhat) = separation(r, r_prime)?;
    let g = scalar_green_at(dist, k_b);
    let kr = k_b * dist;
    let inv = 1.0 / kr;
    let inv2 = inv * inv;
    let longitudinal = (Complex64::new(3.0 * inv2 - 1.0, -3.0 * inv)) * g;
    let diag = -(Complex64::new(inv2 - 1.0, -inv)) * g;
    let mut m = [[Complex64::new(0.0, 0.0); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            m[a][b] = longitudinal * (rhat[a] * rhat[b]);
        }
        m[a][a] += diag;
    }
    // Enforce exact symmetry; the products above already agree bitwise for a != b.
    Ok(DyadicGreen(m))
}

/// `\int g dV` over a sphere of radius `a` centred on the observation point,
/// `[(1 - j k a) exp(j k a) - 1] / k^2`.
pub fn sphere_scalar_integral(k_b: f64, radius: f64) -> Complex64 {
    let ka = k_b * radius;
    ((Complex64::new(1.0, -ka)) * (J * ka).exp() - 1.0) / (k_b * k_b)
}

/// Radius of the sphere with the same volume as a voxel.
pub fn equivalent_radius(voxel_volume: f64) -> f64 {
    (3.0 * voxel_volume / (4.0 * PI)).cbrt()
}

/// Scalar `s` such that the self-cell integral of the dyadic kernel is `s I`:
/// the principal-volume part `(2/3) \int g dV` plus the depolarization term
/// `-(1/3) I / k^2`.
pub fn self_cell_coefficient(k_b: f64, voxel_volume: f64) -> Complex64 {
    let a = equivalent_radius(voxel_volume);
    sphere_scalar_integral(k_b, a) * (2.0 / 3.0) - 1.0 / (3.0 * k_b * k_b)
}
