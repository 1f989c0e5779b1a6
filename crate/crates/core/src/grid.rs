//! Regular voxel grids over the sensing cube and fields sampled on them.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::config::Vec3;
use crate::error::{Error, Result};

pub const VOXEL_MAGIC: &[u8; 8] = b"ISACVX1\0";

/// Complex contrast per voxel, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelContrast {
    pub grid_dims: [usize; 3],
    pub voxel_edge_m: f64,
    /// Corner of the grid (minimum x, y, z).
    pub origin_m: Vec3,
    pub chi: Vec<Complex64>,
}

impl VoxelContrast {
    pub fn zeros(grid_dims: [usize; 3], voxel_edge_m: f64, origin_m: Vec3) -> Self {
        let n = grid_dims.iter().product();
        VoxelContrast { grid_dims, voxel_edge_m, origin_m, chi: vec![Complex64::new(0.0, 0.0); n] }
    }

    /// Cubic grid of edge `extent` centred at `center`.
    pub fn centered_cube(center: Vec3, extent: f64, per_axis: usize) -> Self {
        let h = extent / 2.0;
        Self::zeros([per_axis; 3], extent / per_axis as f64, [center[0] - h, center[1] - h, center[2] - h])
    }

    pub fn uniform(mut self, chi: Complex64) -> Self {
        self.chi.iter_mut().for_each(|c| *c = chi);
        self
    }

    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_edge_m.powi(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.grid_dims[0] * (j + self.grid_dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.grid_dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn center_of(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        let h = self.voxel_edge_m;
        [
            self.origin_m[0] + (c[0] as f64 + 0.5) * h,
            self.origin_m[1] + (c[1] as f64 + 0.5) * h,
            self.origin_m[2] + (c[2] as f64 + 0.5) * h,
        ]
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        (0..3).all(|a| {
            let lo = self.origin_m[a];
            let hi = lo + self.grid_dims[a] as f64 * self.voxel_edge_m;
            p[a] >= lo && p[a] <= hi
        })
    }

    /// Same contrast pattern with the grid moved by `offset`.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut g = self.clone();
        for a in 0..3 {
            g.origin_m[a] += offset[a];
        }
        g
    }

    pub fn same_grid(&self, other_dims: [usize; 3], other_len: usize) -> bool {
        self.grid_dims == other_dims && self.len() == other_len
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(VOXEL_MAGIC)?;
        for d in self.grid_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.voxel_edge_m.to_le_bytes())?;
        for o in self.origin_m {
            w.write_all(&o.to_le_bytes())?;
        }
        for c in &self.chi {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != VOXEL_MAGIC {
            return Err(Error::Format("bad voxel magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u32(&mut r)? as usize;
        }
        let edge = read_f64(&mut r)?;
        let mut origin = [0.0; 3];
        for o in &mut origin {
            *o = read_f64(&mut r)?;
        }
        let n = dims.iter().product();
        let mut chi = Vec::with_capacity(n);
        for _ in 0..n {
            chi.push(Complex64::new(read_f64(&mut r)?, read_f64(&mut r)?));
        }
        Ok(VoxelContrast { grid_dims: dims, voxel_edge_m: edge, origin_m: origin, chi })
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Complex 3-vector electric field at each voxel centre.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOnGrid {
    pub grid_dims: [usize; 3],
    pub e_field: Vec<[Complex64; 3]>,
}

impl FieldOnGrid {
    pub fn zeros(grid_dims: [usize; 3]) -> Self {
        let n = grid_dims.iter().product();
        FieldOnGrid { grid_dims, e_field: vec![[Complex64::new(0.0, 0.0); 3]; n] }
    }

    pub fn len(&self) -> usize {
        self.e_field.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_field.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.e_field.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Flattened as `[Ex0, Ey0, Ez0, Ex1, ...]`.
    pub fn to_flat(&self) -> Vec<Complex64> {
        self.e_field.iter().flatten().copied().collect()
    }

    pub fn from_flat(grid_dims: [usize; 3], flat: &[Complex64]) -> Self {
        let e_field = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        FieldOnGrid { grid_dims, e_field }
    }

    pub fn norm(&self) -> f64 {
        self.e_field.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        FieldOnGrid {
            grid_dims: self.grid_dims,
            e_field: self.e_field.iter().map(|v| [v[0] * s, v[1] * s, v[2] * s]).collect(),
        }
    }

    pub fn axpy(&self, a: Complex64, other: &FieldOnGrid) -> Self {
        FieldOnGrid {
            grid_dims: self.grid_dims,
            e_field: self
                .e_field
                .iter()
                .zip(&other.e_field)
                .map(|(u, v)| [u[0] + a * v[0], u[1] + a * v[1], u[2] + a * v[2]])
                .collect(),
        }
    }
}
