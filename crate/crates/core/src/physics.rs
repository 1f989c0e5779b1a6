//! Physical constants and the material contrast function.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Complex contrast `eps_r - j sigma / (eps0 omega) - 1` of an isotropic
/// medium relative to air, under the `exp(-j omega t)` convention.
pub fn contrast_of(eps_r: f64, sigma_s_per_m: f64, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!("angular frequency must be positive, got {omega}")));
    }
    if !(eps_r >= 1.0) || !eps_r.is_finite() {
        return Err(Error::Domain(format!("relative permittivity below 1: {eps_r}")));
    }
    if !(sigma_s_per_m >= 0.0) || !sigma_s_per_m.is_finite() {
        return Err(Error::Domain(format!("negative conductivity: {sigma_s_per_m}")));
    }
    Ok(Complex64::new(
        eps_r - 1.0,
        -sigma_s_per_m / (VACUUM_PERMITTIVITY * omega),
    ))
}

/// Non-dimensional conductivity `sigma / (eps0 omega)` carried by 5D points.
pub fn normalized_conductivity(sigma_s_per_m: f64, omega: f64) -> f64 {
    sigma_s_per_m / (VACUUM_PERMITTIVITY * omega)
}

pub fn conductivity_from_normalized(value: f64, omega: f64) -> f64 {
    value * VACUUM_PERMITTIVITY * omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn air_has_zero_contrast() {
        for omega in [1.0, 2.0 * PI * 2.99e9, 1e12] {
            assert_eq!(contrast_of(1.0, 0.0, omega).unwrap(), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn lossless_contrast_is_real() {
        assert_eq!(contrast_of(2.0, 0.0, 5.0).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn lossy_contrast_value() {
        let omega = 2.0 * PI * 2.99e9;
        let chi = contrast_of(2.0, 0.01, omega).unwrap();
        // 0.01 / (8.8541878128e-12 * 1.878672407e10)
        let expected_im = -0.01 / (8.8541878128e-12 * 18_786_724_068.8);
        assert!((chi.re - 1.0).abs() < 1e-15);
        assert!((chi.im - expected_im).abs() < 1e-9 * expected_im.abs());
        assert!((chi.im + 0.060_117_6).abs() < 1e-6);
    }

    #[test]
    fn unphysical_inputs_rejected() {
        assert!(contrast_of(0.5, 0.0, 1.0).is_err());
        assert!(contrast_of(2.0, -1e-3, 1.0).is_err());
        assert!(contrast_of(2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn power_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((watts_to_dbm(1e-3)).abs() < 1e-12);
        assert!((db_to_linear(3.0) - 1.995_262_314_968_88).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn contrast_signs(eps in 1.0f64..80.0, sigma in 0.0f64..10.0, f in 1e6f64..1e11) {
            let chi = contrast_of(eps, sigma, 2.0 * PI * f).unwrap();
            proptest::prop_assert!(chi.re >= 0.0);
            proptest::prop_assert!(chi.im <= 0.0);
        }
    }
}
