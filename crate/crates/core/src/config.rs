//! System configuration and its flat `key = value` text format.
//!
//! Every key has a default, so an empty file yields the desk-scale system.
//! Unknown keys are rejected. Powers are given in dBm and gains in dBi in
//! the file; the struct stores linear watts and linear gains.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physics::{db_to_linear, dbm_to_watts, watts_to_dbm, SPEED_OF_LIGHT};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingSector {
    pub radius_m: f64,
    pub half_angle_deg: f64,
    /// Targets closer than this are never drawn, so the cube D stays clear of the arrays.
    pub min_radius_m: f64,
}

impl SensingSector {
    pub fn contains(&self, p: Vec3) -> bool {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let angle = p[1].atan2(p[0]).to_degrees();
        p[2].abs() < 1e-9 && r <= self.radius_m + 1e-9 && angle.abs() <= self.half_angle_deg + 1e-9
    }

    /// Euclidean distance from `p` to the nearest admissible target centre,
    /// i.e. to the annular sector `min_radius <= r <= radius`, `|angle| <= half_angle`, `z = 0`.
    pub fn distance_to_centers(&self, p: Vec3) -> f64 {
        let rho = p[0].hypot(p[1]);
        let phi = p[1].atan2(p[0]);
        let half = self.half_angle_deg.to_radians();
        let horizontal = if phi.abs() <= half {
            (self.min_radius_m - rho).max(rho - self.radius_m).max(0.0)
        } else {
            // Nearest point lies on one of the two bounding radial segments.
            let edge = half.copysign(phi);
            let (ux, uy) = (edge.cos(), edge.sin());
            let t = (p[0] * ux + p[1] * uy).clamp(self.min_radius_m, self.radius_m);
            (p[0] - t * ux).hypot(p[1] - t * uy)
        };
        horizontal.hypot(p[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub carrier_frequency_hz: f64,
    pub wavelength_m: f64,
    pub wavenumber: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub symbol_count: usize,
    pub noise_power_sensing: f64,
    pub noise_power_ue: f64,
    pub max_power: f64,
    pub min_rate_bps_hz: f64,
    pub ue_count: usize,
    pub ue_distance_range_m: (f64, f64),
    pub tx_gain: f64,
    pub rx_gain: f64,
    pub tx_antenna_positions: Vec<Vec3>,
    pub rx_antenna_positions: Vec<Vec3>,
    pub tx_polarization: Vec3,
    pub rx_polarization: Vec3,
    /// Multiplies the dipole radiation `k^2 G p`; the default `lambda / k^2`
    /// makes the one-way far-field amplitude follow the Friis law.
    pub source_amplitude: f64,
    pub domain_extent_m: f64,
    pub voxels_per_axis: usize,
    pub sensing_sector: SensingSector,
    pub reference_location: Vec3,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Normalization scale used for an axis of a flat target.
    pub fallback_scale_m: f64,
    pub eps_r_range: (f64, f64),
    pub sigma_range: (f64, f64),
}

/// Array element positions for a ULA centred at the origin along `axis`.
pub fn ula_positions(count: usize, spacing_m: f64, axis: usize) -> Vec<Vec3> {
    (0..count)
        .map(|i| {
            let mut p = [0.0; 3];
            p[axis] = (i as f64 - (count as f64 - 1.0) / 2.0) * spacing_m;
            p
        })
        .collect()
}

impl Default for SystemConfig {
    fn default() -> Self {
        let f = 2.99e9;
        let lambda = SPEED_OF_LIGHT / f;
        let k = 2.0 * PI / lambda;
        let n_tx = 8;
        let n_rx = 8;
        SystemConfig {
            carrier_frequency_hz: f,
            wavelength_m: lambda,
            wavenumber: k,
            n_tx,
            n_rx,
            symbol_count: 160,
            noise_power_sensing: dbm_to_watts(-104.0),
            noise_power_ue: dbm_to_watts(-104.0),
            max_power: dbm_to_watts(15.0),
            min_rate_bps_hz: 5.0,
            ue_count: 2,
            ue_distance_range_m: (50.0, 150.0),
            tx_gain: db_to_linear(3.0),
            rx_gain: db_to_linear(3.0),
            tx_antenna_positions: ula_positions(n_tx, lambda / 2.0, 1),
            rx_antenna_positions: ula_positions(n_rx, lambda / 2.0, 2),
            tx_polarization: [0.0, 0.0, 1.0],
            rx_polarization: [0.0, 1.0, 0.0],
            source_amplitude: lambda / (k * k),
            domain_extent_m: 1.0,
            voxels_per_axis: 8,
            sensing_sector: SensingSector { radius_m: 30.0, half_angle_deg: 60.0, min_radius_m: 2.0 },
            reference_location: [3.0, 0.0, 0.0],
            solver_tol: 1e-6,
            solver_max_iter: 500,
            fallback_scale_m: 0.5,
            eps_r_range: (1.5, 5.0),
            sigma_range: (0.0, 0.05),
        }
    }
}

const KEYS: &[&str] = &[
    "carrier_frequency_hz",
    "n_tx",
    "n_rx",
    "symbol_count",
    "noise_power_sensing_dbm",
    "noise_power_ue_dbm",
    "max_power_dbm",
    "min_rate_bps_hz",
    "ue_count",
    "ue_distance_range_m",
    "tx_gain_dbi",
    "rx_gain_dbi",
    "array_spacing_m",
    "tx_antenna_positions",
    "rx_antenna_positions",
    "tx_polarization",
    "rx_polarization",
    "source_amplitude",
    "domain_extent_m",
    "voxels_per_axis",
    "sector_radius_m",
    "sector_half_angle_deg",
    "sector_min_radius_m",
    "reference_location",
    "solver_tol",
    "solver_max_iter",
    "fallback_scale_m",
    "eps_r_range",
    "sigma_range",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_f64(key, s)).collect()
}

fn parse_vec3(key: &str, v: &str) -> Result<Vec3> {
    let xs = parse_list(key, v)?;
    xs.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected three comma-separated numbers")))
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key}: expected two comma-separated numbers"))),
    }
}

/// `x,y,z; x,y,z; ...`
fn parse_points(key: &str, v: &str) -> Result<Vec<Vec3>> {
    v.split(';').filter(|s| !s.trim().is_empty()).map(|s| parse_vec3(key, s)).collect()
}

/// Rounds a decibel value to 1e-10 dB so that text round trips are stable.
fn decibel(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

fn fmt_vec3(p: &Vec3) -> String {
    format!("{:?},{:?},{:?}", p[0], p[1], p[2])
}

/// Overrides applied on top of the defaults by [`SystemConfig::desk_scale`].
pub const DESK_SCALE_OVERRIDES: &str = "\
carrier_frequency_hz = 149896229.0
sigma_range = 0.0,0.005
";

impl SystemConfig {
    /// Desk-scale preset. The default carrier makes the 1 m domain ten
    /// wavelengths wide, far beyond what an 8^3 grid can resolve; this preset
    /// lowers the carrier to a 2 m wavelength (voxel edge lambda/16) and
    /// scales the conductivity range so that the normalized loss
    /// `sigma / (eps0 omega)` stays below about 0.6.
    pub fn desk_scale() -> Self {
        Self::from_kv_str(DESK_SCALE_OVERRIDES).expect("valid preset")
    }

    /// Parses the `key = value` format. Blank lines and `#` comments are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key '{k}'", lineno + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
        }
        Self::from_map(&map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = SystemConfig::default();
        let get = |k: &str| map.get(k).map(String::as_str);
        if let Some(v) = get("carrier_frequency_hz") {
            c.carrier_frequency_hz = parse_f64("carrier_frequency_hz", v)?;
        }
        c.wavelength_m = SPEED_OF_LIGHT / c.carrier_frequency_hz;
        c.wavenumber = 2.0 * PI / c.wavelength_m;
        if let Some(v) = get("n_tx") {
            c.n_tx = parse_usize("n_tx", v)?;
        }
        if let Some(v) = get("n_rx") {
            c.n_rx = parse_usize("n_rx", v)?;
        }
        if let Some(v) = get("symbol_count") {
            c.symbol_count = parse_usize("symbol_count", v)?;
        }
        if let Some(v) = get("noise_power_sensing_dbm") {
            c.noise_power_sensing = dbm_to_watts(parse_f64("noise_power_sensing_dbm", v)?);
        }
        if let Some(v) = get("noise_power_ue_dbm") {
            c.noise_power_ue = dbm_to_watts(parse_f64("noise_power_ue_dbm", v)?);
        }
        if let Some(v) = get("max_power_dbm") {
            c.max_power = dbm_to_watts(parse_f64("max_power_dbm", v)?);
        }
        if let Some(v) = get("min_rate_bps_hz") {
            c.min_rate_bps_hz = parse_f64("min_rate_bps_hz", v)?;
        }
        if let Some(v) = get("ue_count") {
            c.ue_count = parse_usize("ue_count", v)?;
        }
        if let Some(v) = get("ue_distance_range_m") {
            c.ue_distance_range_m = parse_pair("ue_distance_range_m", v)?;
        }
        if let Some(v) = get("tx_gain_dbi") {
            c.tx_gain = db_to_linear(parse_f64("tx_gain_dbi", v)?);
        }
        if let Some(v) = get("rx_gain_dbi") {
            c.rx_gain = db_to_linear(parse_f64("rx_gain_dbi", v)?);
        }
        let spacing = match get("array_spacing_m") {
            Some(v) => parse_f64("array_spacing_m", v)?,
            None => c.wavelength_m / 2.0,
        };
        c.tx_antenna_positions = match get("tx_antenna_positions") {
            Some(v) => parse_points("tx_antenna_positions", v)?,
            None => ula_positions(c.n_tx, spacing, 1),
        };
        c.rx_antenna_positions = match get("rx_antenna_positions") {
            Some(v) => parse_points("rx_antenna_positions", v)?,
            None => ula_positions(c.n_rx, spacing, 2),
        };
        if let Some(v) = get("tx_polarization") {
            c.tx_polarization = parse_vec3("tx_polarization", v)?;
        }
        if let Some(v) = get("rx_polarization") {
            c.rx_polarization = parse_vec3("rx_polarization", v)?;
        }
        c.source_amplitude = match get("source_amplitude") {
            Some(v) => parse_f64("source_amplitude", v)?,
            None => c.wavelength_m / (c.wavenumber * c.wavenumber),
        };
        if let Some(v) = get("domain_extent_m") {
            c.domain_extent_m = parse_f64("domain_extent_m", v)?;
        }
        if let Some(v) = get("voxels_per_axis") {
            c.voxels_per_axis = parse_usize("voxels_per_axis", v)?;
        }
        if let Some(v) = get("sector_radius_m") {
            c.sensing_sector.radius_m = parse_f64("sector_radius_m", v)?;
        }
        if let Some(v) = get("sector_half_angle_deg") {
            c.sensing_sector.half_angle_deg = parse_f64("sector_half_angle_deg", v)?;
        }
        if let Some(v) = get("sector_min_radius_m") {
            c.sensing_sector.min_radius_m = parse_f64("sector_min_radius_m", v)?;
        }
        if let Some(v) = get("reference_location") {
            c.reference_location = parse_vec3("reference_location", v)?;
        }
        if let Some(v) = get("solver_tol") {
            c.solver_tol = parse_f64("solver_tol", v)?;
        }
        if let Some(v) = get("solver_max_iter") {
            c.solver_max_iter = parse_usize("solver_max_iter", v)?;
        }
        if let Some(v) = get("fallback_scale_m") {
            c.fallback_scale_m = parse_f64("fallback_scale_m", v)?;
        }
        if let Some(v) = get("eps_r_range") {
            c.eps_r_range = parse_pair("eps_r_range", v)?;
        }
        if let Some(v) = get("sigma_range") {
            c.sigma_range = parse_pair("sigma_range", v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.carrier_frequency_hz
    }

    pub fn voxel_edge_m(&self) -> f64 {
        self.domain_extent_m / self.voxels_per_axis as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.carrier_frequency_hz > 0.0) {
            return bad("carrier frequency must be positive".into());
        }
        if ((self.wavelength_m - SPEED_OF_LIGHT / self.carrier_frequency_hz) / self.wavelength_m).abs() > 1e-9 {
            return bad("wavelength inconsistent with carrier frequency".into());
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return bad("antenna counts must be at least 1".into());
        }
        if self.tx_antenna_positions.len() != self.n_tx {
            return bad(format!("{} tx positions for n_tx = {}", self.tx_antenna_positions.len(), self.n_tx));
        }
        if self.rx_antenna_positions.len() != self.n_rx {
            return bad(format!("{} rx positions for n_rx = {}", self.rx_antenna_positions.len(), self.n_rx));
        }
        for (name, p) in [("tx", self.tx_polarization), ("rx", self.rx_polarization)] {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if (n - 1.0).abs() > 1e-12 {
                return bad(format!("{name} polarization must have unit norm, got {n}"));
            }
        }
        for (name, p) in [
            ("sensing noise", self.noise_power_sensing),
            ("UE noise", self.noise_power_ue),
            ("max power", self.max_power),
            ("tx gain", self.tx_gain),
            ("rx gain", self.rx_gain),
        ] {
            if !(p > 0.0) || !p.is_finite() {
                return bad(format!("{name} must be strictly positive"));
            }
        }
        if self.voxels_per_axis < 2 {
            return bad("voxels_per_axis must be at least 2".into());
        }
        if !(self.domain_extent_m > 0.0) {
            return bad("domain extent must be positive".into());
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) || self.solver_max_iter == 0 {
            return bad("solver_tol must lie in (0,1) and solver_max_iter >= 1".into());
        }
        if !(self.eps_r_range.0 >= 1.0 && self.eps_r_range.1 >= self.eps_r_range.0) {
            return bad("eps_r_range must satisfy 1 <= lo <= hi".into());
        }
        if !(self.sigma_range.0 >= 0.0 && self.sigma_range.1 >= self.sigma_range.0) {
            return bad("sigma_range must satisfy 0 <= lo <= hi".into());
        }
        let s = &self.sensing_sector;
        if !(s.radius_m > s.min_radius_m && s.min_radius_m >= 0.0) {
            return bad("sector radius must exceed its minimum radius".into());
        }
        // Antennas must stay outside every domain the data generator can place.
        let half = self.domain_extent_m / 2.0;
        let reach = half * 3f64.sqrt();
        for p in self.tx_antenna_positions.iter().chain(&self.rx_antenna_positions) {
            let r = |c: Vec3| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            if r(self.reference_location) <= reach {
                return bad("an antenna lies inside the domain at the reference location".into());
            }
            if s.distance_to_centers(*p) <= reach {
                return bad("sector_min_radius_m too small: domains could enclose an antenna".into());
            }
        }
        Ok(())
    }

    /// Canonical text form; parses back to an identical config.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let pts = |v: &[Vec3]| v.iter().map(fmt_vec3).collect::<Vec<_>>().join("; ");
        let _ = writeln!(s, "carrier_frequency_hz = {:?}", self.carrier_frequency_hz);
        let _ = writeln!(s, "n_tx = {}", self.n_tx);
        let _ = writeln!(s, "n_rx = {}", self.n_rx);
        let _ = writeln!(s, "symbol_count = {}", self.symbol_count);
        let _ = writeln!(s, "noise_power_sensing_dbm = {:?}", decibel(watts_to_dbm(self.noise_power_sensing)));
        let _ = writeln!(s, "noise_power_ue_dbm = {:?}", decibel(watts_to_dbm(self.noise_power_ue)));
        let _ = writeln!(s, "max_power_dbm = {:?}", decibel(watts_to_dbm(self.max_power)));
        let _ = writeln!(s, "min_rate_bps_hz = {:?}", self.min_rate_bps_hz);
        let _ = writeln!(s, "ue_count = {}", self.ue_count);
        let _ = writeln!(s, "ue_distance_range_m = {:?},{:?}", self.ue_distance_range_m.0, self.ue_distance_range_m.1);
        let _ = writeln!(s, "tx_gain_dbi = {:?}", decibel(10.0 * self.tx_gain.log10()));
        let _ = writeln!(s, "rx_gain_dbi = {:?}", decibel(10.0 * self.rx_gain.log10()));
        let _ = writeln!(s, "tx_antenna_positions = {}", pts(&self.tx_antenna_positions));
        let _ = writeln!(s, "rx_antenna_positions = {}", pts(&self.rx_antenna_positions));
        let _ = writeln!(s, "tx_polarization = {}", fmt_vec3(&self.tx_polarization));
        let _ = writeln!(s, "rx_polarization = {}", fmt_vec3(&self.rx_polarization));
        let _ = writeln!(s, "source_amplitude = {:?}", self.source_amplitude);
        let _ = writeln!(s, "domain_extent_m = {:?}", self.domain_extent_m);
        let _ = writeln!(s, "voxels_per_axis = {}", self.voxels_per_axis);
        let _ = writeln!(s, "sector_radius_m = {:?}", self.sensing_sector.radius_m);
        let _ = writeln!(s, "sector_half_angle_deg = {:?}", self.sensing_sector.half_angle_deg);
        let _ = writeln!(s, "sector_min_radius_m = {:?}", self.sensing_sector.min_radius_m);
        let _ = writeln!(s, "reference_location = {}", fmt_vec3(&self.reference_location));
        let _ = writeln!(s, "solver_tol = {:?}", self.solver_tol);
        let _ = writeln!(s, "solver_max_iter = {}", self.solver_max_iter);
        let _ = writeln!(s, "fallback_scale_m = {:?}", self.fallback_scale_m);
        let _ = writeln!(s, "eps_r_range = {:?},{:?}", self.eps_r_range.0, self.eps_r_range.1);
        let _ = writeln!(s, "sigma_range = {:?},{:?}", self.sigma_range.0, self.sigma_range.1);
        s
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv_string().as_bytes()))
    }
}
