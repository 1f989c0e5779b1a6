//! 5D point clouds: normalized coordinates plus EM properties.

use std::io::{BufRead, BufReader, Read, Write};

use crate::config::Vec3;
use crate::error::{Error, Result};
use crate::physics::{conductivity_from_normalized, normalized_conductivity};

/// Normalized `(x, y, z, eps_r, sigma / (eps0 omega))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point5D(pub [f64; 5]);

impl Point5D {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A point in physical units: metres, relative permittivity, S/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalPoint {
    pub position_m: Vec3,
    pub eps_r: f64,
    pub sigma_s_per_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud5D {
    pub points: Vec<Point5D>,
    pub center_m: Vec3,
    pub scale_m: Vec3,
}

/// How per-axis normalization scales are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// Per-axis population standard deviation, falling back to a fixed
    /// scale on axes flatter than 1e-12 m. `None` makes flat axes an error.
    StdDev { fallback_m: Option<f64> },
    Fixed(Vec3),
}

impl Default for ScaleRule {
    fn default() -> Self {
        ScaleRule::StdDev { fallback_m: None }
    }
}

const DEGENERATE_STD_M: f64 = 1e-12;

pub fn normalize_cloud(points: &[PhysicalPoint], omega: f64, rule: ScaleRule) -> Result<PointCloud5D> {
    if points.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 points, got {}", points.len())));
    }
    if !(omega > 0.0) {
        return Err(Error::Domain("angular frequency must be positive".into()));
    }
    let n = points.len() as f64;
    let mut center = [0.0; 3];
    for p in points {
        for a in 0..3 {
            center[a] += p.position_m[a];
        }
    }
    center.iter_mut().for_each(|c| *c /= n);

    let scale = match rule {
        ScaleRule::Fixed(s) => {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Domain("fixed scales must be positive".into()));
            }
            s
        }
        ScaleRule::StdDev { fallback_m } => {
            let mut s = [0.0; 3];
            for a in 0..3 {
                let var = points.iter().map(|p| (p.position_m[a] - center[a]).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                s[a] = if std >= DEGENERATE_STD_M {
                    std
                } else {
                    match fallback_m {
                        Some(f) if f > 0.0 => f,
                        _ => return Err(Error::DegenerateAxis { axis: a, std }),
                    }
                };
            }
            s
        }
    };

    let points = points
        .iter()
        .map(|p| {
            Point5D([
                (p.position_m[0] - center[0]) / scale[0],
                (p.position_m[1] - center[1]) / scale[1],
                (p.position_m[2] - center[2]) / scale[2],
                p.eps_r,
                normalized_conductivity(p.sigma_s_per_m, omega),
            ])
        })
        .collect();
    Ok(PointCloud5D { points, center_m: center, scale_m: scale })
}

pub fn denormalize_cloud(cloud: &PointCloud5D, omega: f64) -> Vec<PhysicalPoint> {
    cloud
        .points
        .iter()
        .map(|p| PhysicalPoint {
            position_m: [
                cloud.center_m[0] + p.0[0] * cloud.scale_m[0],
                cloud.center_m[1] + p.0[1] * cloud.scale_m[1],
                cloud.center_m[2] + p.0[2] * cloud.scale_m[2],
            ],
            eps_r: p.0[3],
            sigma_s_per_m: conductivity_from_normalized(p.0[4], omega),
        })
        .collect()
}

pub const CSV_HEADER: &str = "x,y,z,eps_r,sigma_S_per_m";

/// Writes physical points as CSV. Values use the shortest round-trip float form.
pub fn write_csv<W: Write>(mut w: W, points: &[PhysicalPoint]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?}",
            p.position_m[0], p.position_m[1], p.position_m[2], p.eps_r, p.sigma_s_per_m
        )?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<PhysicalPoint>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format(format!("missing CSV header '{CSV_HEADER}'")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("CSV row {}: {e}", i + 2)))?;
        if vals.len() != 5 {
            return Err(Error::Format(format!("CSV row {}: expected 5 columns", i + 2)));
        }
        out.push(PhysicalPoint {
            position_m: [vals[0], vals[1], vals[2]],
            eps_r: vals[3],
            sigma_s_per_m: vals[4],
        });
    }
    Ok(out)
}

/// ASCII PLY with positions and the two EM properties as vertex scalars.
pub fn write_ply<W: Write>(mut w: W, points: &[PhysicalPoint]) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    for name in ["x", "y", "z", "eps_r", "sigma"] {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(
            w,
            "{:?} {:?} {:?} {:?} {:?}",
            p.position_m[0], p.position_m[1], p.position_m[2], p.eps_r, p.sigma_s_per_m
        )?;
    }
    Ok(())
}
