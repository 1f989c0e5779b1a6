//! Synthetic targets and datasets: parametric primitives, surface point
//! sampling, voxel rasterization, communication-channel draws, and the
//! on-disk record layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::cloud::{normalize_cloud, read_csv, write_csv, PhysicalPoint, PointCloud5D, ScaleRule};
use crate::cmatrix::ChannelMatrix;
use crate::config::{SystemConfig, Vec3};
use crate::error::{Error, Result};
use crate::grid::VoxelContrast;
use crate::physics::contrast_of;
use crate::rng::{complex_gaussian, derive_seed, standard_normal, sub_stream};
use crate::scatter::{ForwardModel, ScatterMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Half extents along the body axes.
    Box { half: Vec3 },
    Ellipsoid { semi: Vec3 },
}

impl Primitive {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Primitive::Sphere { radius } => p.norm_squared() <= radius * radius,
            Primitive::Box { half } => (0..3).all(|a| p[a].abs() <= half[a]),
            Primitive::Ellipsoid { semi } => (0..3).map(|a| (p[a] / semi[a]).powi(2)).sum::<f64>() <= 1.0,
        }
    }

    fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => radius,
            Primitive::Box { half } => Vector3::from(half).norm(),
            Primitive::Ellipsoid { semi } => semi.iter().fold(0.0, |a: f64, &b| a.max(b)),
        }
    }

    fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Primitive::Sphere { radius } => 4.0 * PI * radius * radius,
            Primitive::Box { half: [a, b, c] } => 8.0 * (a * b + b * c + c * a),
            Primitive::Ellipsoid { semi: [a, b, c] } => {
                // Thomsen's approximation; only used to weight union parts.
                let p = 1.6075;
                4.0 * PI * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0).powf(1.0 / p)
            }
        }
    }

    fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        match *self {
            Primitive::Sphere { radius } => unit_vector(rng) * radius,
            Primitive::Box { half: [a, b, c] } => {
                // Faces weighted by area: normal axis x has area 4bc per face, etc.
                let w = [b * c, a * c, a * b];
                let total = w.iter().sum::<f64>();
                let mut u = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        axis = i;
                        break;
                    }
                    u -= wi;
                }
                let half = [a, b, c];
                let mut p = Vector3::zeros();
                for i in 0..3 {
                    p[i] = if i == axis {
                        if rng.random_bool(0.5) { half[i] } else { -half[i] }
                    } else {
                        rng.random_range(-half[i]..=half[i])
                    };
                }
                p
            }
            Primitive::Ellipsoid { semi: [a, b, c] } => {
                // Map the unit sphere and accept in proportion to the area stretch.
                let g_max = (a * b).max(a * c).max(b * c);
                loop {
                    let u = unit_vector(rng);
                    let g = ((b * c * u[0]).powi(2) + (a * c * u[1]).powi(2) + (a * b * u[2]).powi(2)).sqrt();
                    if rng.random_range(0.0..g_max) < g {
                        return Vector3::new(a * u[0], b * u[1], c * u[2]);
                    }
                }
            }
        }
    }

    fn encode(&self) -> String {
        match *self {
            Primitive::Sphere { radius } => format!("sphere {radius:?}"),
            Primitive::Box { half: [a, b, c] } => format!("box {a:?} {b:?} {c:?}"),
            Primitive::Ellipsoid { semi: [a, b, c] } => format!("ellipsoid {a:?} {b:?} {c:?}"),
        }
    }

    fn decode(words: &[&str]) -> Result<Self> {
        let nums = words[1..]
            .iter()
            .map(|w| w.parse::<f64>().map_err(|_| Error::Format(format!("bad primitive size '{w}'"))))
            .collect::<Result<Vec<_>>>()?;
        match (words.first().copied(), nums.len()) {
            (Some("sphere"), 1) => Ok(Primitive::Sphere { radius: nums[0] }),
            (Some("box"), 3) => Ok(Primitive::Box { half: [nums[0], nums[1], nums[2]] }),
            (Some("ellipsoid"), 3) => Ok(Primitive::Ellipsoid { semi: [nums[0], nums[1], nums[2]] }),
            _ => Err(Error::Format(format!("unknown primitive '{}'", words.join(" ")))),
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(standard_normal(rng), standard_normal(rng), standard_normal(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TargetClass {
    Sphere,
    Box,
    Ellipsoid,
    Union,
}

impl TargetClass {
    pub const ALL: [TargetClass; 4] = [TargetClass::Sphere, TargetClass::Box, TargetClass::Ellipsoid, TargetClass::Union];
    pub const SOLIDS: [TargetClass; 3] = [TargetClass::Sphere, TargetClass::Box, TargetClass::Ellipsoid];

    pub fn name(self) -> &'static str {
        match self {
            TargetClass::Sphere => "sphere",
            TargetClass::Box => "box",
            TargetClass::Ellipsoid => "ellipsoid",
            TargetClass::Union => "union",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown target class '{s}'")))
    }
}

/// A homogeneous target: a union of primitives in a rotated body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub class: TargetClass,
    /// Primitives with their body-frame offsets; empty means no target.
    pub parts: Vec<(Primitive, Vec3)>,
    pub eps_r: f64,
    pub sigma_s_per_m: f64,
    /// Body-to-world rotation.
    pub rotation: Matrix3<f64>,
    pub center_m: Vec3,
}

impl TargetSpec {
    pub fn empty(center_m: Vec3) -> Self {
        TargetSpec {
            class: TargetClass::Union,
            parts: Vec::new(),
            eps_r: 1.0,
            sigma_s_per_m: 0.0,
            rotation: Matrix3::identity(),
            center_m,
        }
    }

    /// Same shape, pose, and properties at another centre.
    pub fn moved_to(&self, center_m: Vec3) -> Self {
        TargetSpec { center_m, ..self.clone() }
    }

    fn contains_body(&self, p: &Vector3<f64>) -> bool {
        self.parts.iter().any(|(prim, off)| prim.contains(&(p - Vector3::from(*off))))
    }

    /// Whether a point given relative to the centre (world axes) is inside.
    pub fn contains_offset(&self, offset: &Vec3) -> bool {
        self.contains_body(&(self.rotation.transpose() * Vector3::from(*offset)))
    }

    pub fn bounding_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|(p, off)| Vector3::from(*off).norm() + p.bounding_radius())
            .fold(0.0, f64::max)
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(standard_normal(rng), standard_normal(rng), standard_normal(rng), standard_normal(rng));
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn random_primitive<R: Rng + ?Sized>(class: TargetClass, half_extent: f64, rng: &mut R) -> Primitive {
    let s = half_extent;
    match class {
        TargetClass::Sphere => Primitive::Sphere { radius: rng.random_range(0.5 * s..0.9 * s) },
        TargetClass::Box => Primitive::Box { half: std::array::from_fn(|_| rng.random_range(0.24 * s..0.54 * s)) },
        _ => Primitive::Ellipsoid { semi: std::array::from_fn(|_| rng.random_range(0.3 * s..0.9 * s)) },
    }
}

/// Uniform target centre over the annular sector at `z = 0`.
pub fn sample_center<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec3 {
    let s = &cfg.sensing_sector;
    let r = rng.random_range(s.min_radius_m.powi(2)..=s.radius_m.powi(2)).sqrt();
    let half = s.half_angle_deg.to_radians();
    let phi = rng.random_range(-half..=half);
    [r * phi.cos(), r * phi.sin(), 0.0]
}

/// Random target of one of `classes`, sized to fit the sensing cube under any
/// rotation. `center` overrides the random sector draw.
pub fn generate_target<R: Rng + ?Sized>(cfg: &SystemConfig, classes: &[TargetClass], center: Option<Vec3>, rng: &mut R) -> TargetSpec {
    let classes = if classes.is_empty() { &TargetClass::ALL[..] } else { classes };
    let class = classes[rng.random_range(0..classes.len())];
    // Bounding radius stays below 96% of the half extent.
    let half = 0.5 * cfg.domain_extent_m;
    let limit = 0.96 * half;
    let mut parts = match class {
        TargetClass::Union => {
            let n = rng.random_range(2..=3);
            (0..n)
                .map(|_| {
                    let sub = TargetClass::SOLIDS[rng.random_range(0..3)];
                    let prim = random_primitive(sub, 0.6 * half, rng);
                    let off: Vec3 = std::array::from_fn(|_| rng.random_range(-0.3 * half..0.3 * half));
                    (prim, off)
                })
                .collect()
        }
        c => vec![(random_primitive(c, half, rng), [0.0; 3])],
    };
    let spec_r = parts.iter().map(|(p, o)| Vector3::from(*o).norm() + p.bounding_radius()).fold(0.0, f64::max);
    if spec_r > limit {
        let k = limit / spec_r;
        for (p, o) in &mut parts {
            *o = o.map(|v| v * k);
            *p = match *p {
                Primitive::Sphere { radius } => Primitive::Sphere { radius: radius * k },
                Primitive::Box { half } => Primitive::Box { half: half.map(|v| v * k) },
                Primitive::Ellipsoid { semi } => Primitive::Ellipsoid { semi: semi.map(|v| v * k) },
            };
        }
    }
    let eps_r = rng.random_range(cfg.eps_r_range.0..=cfg.eps_r_range.1);
    let sigma = rng.random_range(cfg.sigma_range.0..=cfg.sigma_range.1);
    let rotation = random_rotation(rng);
    let center_m = center.unwrap_or_else(|| sample_center(cfg, rng));
    TargetSpec { class, parts, eps_r, sigma_s_per_m: sigma, rotation, center_m }
}

/// `n` points uniform over the target's outer surface, in world coordinates.
pub fn sample_surface_points<R: Rng + ?Sized>(spec: &TargetSpec, n: usize, rng: &mut R) -> Result<Vec<PhysicalPoint>> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 points, got {n}")));
    }
    if spec.parts.is_empty() {
        return Err(Error::Domain("cannot sample an empty target".into()));
    }
    let areas: Vec<f64> = spec.parts.iter().map(|(p, _)| p.area()).collect();
    let total: f64 = areas.iter().sum();
    let c = Vector3::from(spec.center_m);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(Error::Domain("surface sampling rejected too many candidates".into()));
        }
        let mut u = rng.random_range(0.0..total);
        let mut k = areas.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if u < *a {
                k = i;
                break;
            }
            u -= a;
        }
        let (prim, off) = &spec.parts[k];
        let body = prim.sample_surface(rng) + Vector3::from(*off);
        // Keep only the outer surface of a union.
        let buried = spec.parts.iter().enumerate().any(|(j, (q, o))| {
            if j == k {
                return false;
            }
            let local = body - Vector3::from(*o);
            q.contains(&local) && !on_boundary(q, &local)
        });
        if buried {
            continue;
        }
        let w = c + spec.rotation * body;
        out.push(PhysicalPoint { position_m: [w[0], w[1], w[2]], eps_r: spec.eps_r, sigma_s_per_m: spec.sigma_s_per_m });
    }
    Ok(out)
}

fn on_boundary(p: &Primitive, local: &Vector3<f64>) -> bool {
    let shrunk = match *p {
        Primitive::Sphere { radius } => Primitive::Sphere { radius: radius * (1.0 - 1e-9) },
        Primitive::Box { half } => Primitive::Box { half: half.map(|v| v * (1.0 - 1e-9)) },
        Primitive::Ellipsoid { semi } => Primitive::Ellipsoid { semi: semi.map(|v| v * (1.0 - 1e-9)) },
    };
    !shrunk.contains(local)
}

/// Surface samples normalized into a 5D cloud.
pub fn sample_points<R: Rng + ?Sized>(spec: &TargetSpec, n: usize, cfg: &SystemConfig, rng: &mut R) -> Result<(Vec<PhysicalPoint>, PointCloud5D)> {
    let phys = sample_surface_points(spec, n, rng)?;
    let cloud = normalize_cloud(&phys, cfg.omega(), ScaleRule::StdDev { fallback_m: Some(cfg.fallback_scale_m) })?;
    Ok((phys, cloud))
}

/// Voxel contrast of the target on the configured cube centred on the target.
/// Inside-tests use offsets from the cube centre, so the pattern does not
/// depend on where the cube sits.
pub fn rasterize(spec: &TargetSpec, cfg: &SystemConfig) -> Result<VoxelContrast> {
    let n = cfg.voxels_per_axis;
    let extent = cfg.domain_extent_m;
    let mut grid = VoxelContrast::centered_cube(spec.center_m, extent, n);
    if spec.parts.is_empty() {
        return Ok(grid);
    }
    let chi = contrast_of(spec.eps_r, spec.sigma_s_per_m, cfg.omega())?;
    let h = extent / n as f64;
    for idx in 0..grid.len() {
        let [i, j, k] = grid.coords(idx);
        let off = [i, j, k].map(|q| (q as f64 + 0.5) * h - 0.5 * extent);
        if spec.contains_offset(&off) {
            grid.chi[idx] = chi;
        }
    }
    Ok(grid)
}

/// Friis pathloss `G_t G_r lambda^2 / (4 pi d)^2`.
pub fn pathloss(cfg: &SystemConfig, distance_m: f64) -> f64 {
    cfg.tx_gain * cfg.rx_gain * (cfg.wavelength_m / (4.0 * std::f64::consts::PI * distance_m)).powi(2)
}

/// CSCG user channels with per-entry variance set by the pathloss at a
/// uniformly drawn distance. Returns the channels and the distances.
pub fn draw_comm_channels<R: Rng + ?Sized>(k: usize, cfg: &SystemConfig, rng: &mut R) -> Result<(Vec<DVector<Complex64>>, Vec<f64>)> {
    if k == 0 {
        return Err(Error::Domain("need at least one UE".into()));
    }
    let (lo, hi) = cfg.ue_distance_range_m;
    let mut chans = Vec::with_capacity(k);
    let mut dists = Vec::with_capacity(k);
    for _ in 0..k {
        let d = rng.random_range(lo..=hi);
        let var = pathloss(cfg, d);
        chans.push(DVector::from_fn(cfg.n_tx, |_, _| complex_gaussian(rng, var)));
        dists.push(d);
    }
    Ok((chans, dists))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: usize,
    pub target: TargetSpec,
    pub points: Vec<PhysicalPoint>,
    pub cloud: PointCloud5D,
    pub h_s: ChannelMatrix,
    pub h_s_ref: ChannelMatrix,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub quarantined: Vec<(usize, String)>,
    pub split: Split,
    pub fingerprint: String,
    pub seed: u64,
}

impl Dataset {
    pub fn record(&self, id: usize) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn subset(&self, ids: &[usize]) -> Vec<&DatasetRecord> {
        ids.iter().filter_map(|&i| self.record(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub n_records: usize,
    pub points_per_cloud: usize,
    pub classes: Vec<TargetClass>,
    /// Place every target here instead of drawing centres from the sector.
    pub fixed_center: Option<Vec3>,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { n_records: 64, points_per_cloud: 128, classes: TargetClass::ALL.to_vec(), fixed_center: None, seed: 0 }
    }
}

/// 80/10/10 split of surviving ids ordered by a hash of the id.
pub fn split_ids(ids: &[usize]) -> Split {
    let mut keyed: Vec<(u64, usize)> = ids.iter().map(|&i| (derive_seed(0x5B117, &[i as u64]), i)).collect();
    keyed.sort_unstable();
    let n = ids.len();
    let n_train = n * 8 / 10;
    let n_test = n / 10;
    let mut s = Split::default();
    for (pos, (_, id)) in keyed.into_iter().enumerate() {
        if pos < n_train {
            s.train.push(id);
        } else if pos < n_train + n_test {
            s.test.push(id);
        } else {
            s.validation.push(id);
        }
    }
    s.train.sort_unstable();
    s.test.sort_unstable();
    s.validation.sort_unstable();
    s
}

/// Builds one record; deterministic in `(seed, id)`.
pub fn build_record(model: &ForwardModel, opts: &DatasetOptions, id: usize) -> Result<DatasetRecord> {
    let cfg = model.config();
    let mut rng = sub_stream(opts.seed, &[0xDA7A, id as u64]);
    let target = generate_target(cfg, &opts.classes, opts.fixed_center, &mut rng);
    let (points, cloud) = sample_points(&target, opts.points_per_cloud, cfg, &mut rng)?;
    let (h_s, _) = model.synthesize(&rasterize(&target, cfg)?, ScatterMode::Full)?;
    let reference = target.moved_to(cfg.reference_location);
    let h_s_ref = if reference == target {
        h_s.clone()
    } else {
        model.synthesize(&rasterize(&reference, cfg)?, ScatterMode::Full)?.0
    };
    Ok(DatasetRecord { id, target, points, cloud, h_s, h_s_ref, fingerprint: cfg.fingerprint() })
}

/// Generates every record (in parallel), quarantining solver failures.
pub fn build_dataset(cfg: &SystemConfig, opts: &DatasetOptions) -> Result<Dataset> {
    cfg.validate()?;
    let model = ForwardModel::new(cfg);
    let results: Vec<(usize, Result<DatasetRecord>)> =
        (0..opts.n_records).into_par_iter().map(|id| (id, build_record(&model, opts, id))).collect();
    let mut records = Vec::new();
    let mut quarantined = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e @ Error::NonConvergence { .. }) => {
                log::warn!("record {id} quarantined: {e}");
                quarantined.push((id, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let ids: Vec<usize> = records.iter().map(|r| r.id).collect();
    Ok(Dataset { split: split_ids(&ids), records, quarantined, fingerprint: cfg.fingerprint(), seed: opts.seed })
}

// ---------------------------------------------------------------------------
// On-disk layout.

fn record_stem(id: usize) -> String {
    format!("{id:06}")
}

fn fmt3(v: &Vec3) -> String {
    format!("{:?},{:?},{:?}", v[0], v[1], v[2])
}

fn parse_floats(s: &str, n: usize, key: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|w| w.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad {key} value '{w}'"))))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != n {
        return Err(Error::Format(format!("{key} needs {n} values, got {}", v.len())));
    }
    Ok(v)
}

fn write_meta(rec: &DatasetRecord) -> String {
    let t = &rec.target;
    let mut s = String::new();
    let _ = writeln!(s, "id = {}", rec.id);
    let _ = writeln!(s, "class = {}", t.class.name());
    let _ = writeln!(s, "center_m = {}", fmt3(&t.center_m));
    let _ = writeln!(s, "eps_r = {:?}", t.eps_r);
    let _ = writeln!(s, "sigma_s_per_m = {:?}", t.sigma_s_per_m);
    let r: Vec<String> = t.rotation.row_iter().flat_map(|row| row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()).collect();
    let _ = writeln!(s, "rotation = {}", r.join(","));
    for (p, off) in &t.parts {
        let _ = writeln!(s, "part = {} @ {}", p.encode(), fmt3(off));
    }
    let _ = writeln!(s, "cloud_center_m = {}", fmt3(&rec.cloud.center_m));
    let _ = writeln!(s, "cloud_scale_m = {}", fmt3(&rec.cloud.scale_m));
    let _ = writeln!(s, "fingerprint = {}", rec.fingerprint);
    s
}

fn parse_meta(text: &str, cfg: &SystemConfig, points: Vec<PhysicalPoint>, h_s: ChannelMatrix, h_s_ref: ChannelMatrix) -> Result<DatasetRecord> {
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    let mut parts = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad meta line '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "part" {
            let (prim, off) = v.split_once('@').ok_or_else(|| Error::Format(format!("bad part '{v}'")))?;
            let words: Vec<&str> = prim.split_whitespace().collect();
            let o = parse_floats(off, 3, "part offset")?;
            parts.push((Primitive::decode(&words)?, [o[0], o[1], o[2]]));
        } else {
            kv.insert(k, v);
        }
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Format(format!("meta lacks {k}")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
    let c = parse_floats(get("center_m")?, 3, "center_m")?;
    let r = parse_floats(get("rotation")?, 9, "rotation")?;
    let target = TargetSpec {
        class: TargetClass::parse(get("class")?)?,
        parts,
        eps_r: num("eps_r")?,
        sigma_s_per_m: num("sigma_s_per_m")?,
        rotation: Matrix3::from_row_slice(&r),
        center_m: [c[0], c[1], c[2]],
    };
    let cloud = normalize_cloud(&points, cfg.omega(), ScaleRule::StdDev { fallback_m: Some(cfg.fallback_scale_m) })?;
    Ok(DatasetRecord {
        id: get("id")?.parse().map_err(|_| Error::Format("bad id".into()))?,
        target,
        points,
        cloud,
        h_s,
        h_s_ref,
        fingerprint: get("fingerprint")?.to_string(),
    })
}

fn id_list(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn manifest_text(ds: &Dataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fingerprint = {}", ds.fingerprint);
    let _ = writeln!(s, "seed = {}", ds.seed);
    let _ = writeln!(s, "records = {}", ds.records.len());
    let _ = writeln!(s, "quarantined = {}", id_list(&ds.quarantined.iter().map(|q| q.0).collect::<Vec<_>>()));
    let _ = writeln!(s, "train = {}", id_list(&ds.split.train));
    let _ = writeln!(s, "test = {}", id_list(&ds.split.test));
    let _ = writeln!(s, "validation = {}", id_list(&ds.split.validation));
    s
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let rec_dir = dir.join("records");
    fs::create_dir_all(&rec_dir)?;
    for rec in &ds.records {
        let stem = rec_dir.join(record_stem(rec.id));
        write_csv(fs::File::create(stem.with_extension("csv"))?, &rec.points)?;
        rec.h_s.write(fs::File::create(stem.with_extension("chan"))?)?;
        rec.h_s_ref.write(fs::File::create(stem.with_extension("chanref"))?)?;
        fs::write(stem.with_extension("meta"), write_meta(rec))?;
    }
    fs::write(dir.join("manifest.txt"), manifest_text(ds))?;
    Ok(())
}

/// Loads a dataset written by [`write_dataset`]; the configuration must have
/// the fingerprint recorded in the manifest.
pub fn read_dataset(dir: &Path, cfg: &SystemConfig) -> Result<Dataset> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut kv = BTreeMap::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad manifest line '{line}'")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Format(format!("manifest lacks {k}")));
    let ids = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| Error::Format(format!("bad id in {k}"))))
            .collect()
    };
    let fingerprint = get("fingerprint")?;
    if fingerprint != cfg.fingerprint() {
        return Err(Error::Config(format!(
            "dataset was generated with config {fingerprint}, current config is {}",
            cfg.fingerprint()
        )));
    }
    let split = Split { train: ids("train")?, test: ids("test")?, validation: ids("validation")? };
    let mut all: Vec<usize> = split.train.iter().chain(&split.test).chain(&split.validation).copied().collect();
    all.sort_unstable();
    let rec_dir = dir.join("records");
    let records = all
        .iter()
        .map(|&id| {
            let stem = rec_dir.join(record_stem(id));
            let points = read_csv(fs::File::open(stem.with_extension("csv"))?)?;
            let h_s = ChannelMatrix::read(fs::File::open(stem.with_extension("chan"))?)?;
            let h_ref = ChannelMatrix::read(fs::File::open(stem.with_extension("chanref"))?)?;
            parse_meta(&fs::read_to_string(stem.with_extension("meta"))?, cfg, points, h_s, h_ref)
        })
        .collect::<Result<Vec<_>>>()?;
    let quarantined = ids("quarantined")?.into_iter().map(|i| (i, String::from("quarantined at generation"))).collect();
    let seed = get("seed")?.parse().map_err(|_| Error::Format("bad seed".into()))?;
    Ok(Dataset { records, quarantined, split, fingerprint, seed })
}

#[cfg(test)]
mod tests;
