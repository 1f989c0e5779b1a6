//! Evaluation metrics: Chamfer distance, mean Chamfer distance in dB, and
//! channel NMSE.

use std::io::Write;

use rayon::prelude::*;

use crate::cloud::{PhysicalPoint, Point5D};
use crate::cmatrix::ChannelMatrix;
use crate::error::{Error, Result};

/// Smallest mean Chamfer value passed to the logarithm.
pub const MCD_FLOOR: f64 = 1e-12;

/// Which coordinates enter the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChamferSpace {
    /// Normalized position plus both EM properties.
    #[default]
    Full,
    /// Normalized position only.
    Position,
}

impl ChamferSpace {
    fn dims(self) -> usize {
        match self {
            ChamferSpace::Full => 5,
            ChamferSpace::Position => 3,
        }
    }
}

#[inline]
fn dist2(a: &[f64; 5], b: &[f64; 5], dims: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dims {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Static k-d tree over a point set for exact nearest-neighbour distances.
pub struct KdTree<'a> {
    points: &'a [Point5D],
    dims: usize,
    /// Implicit balanced tree: `order[lo..hi]` with the median at the node.
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point5D], space: ChamferSpace) -> Self {
        let dims = space.dims();
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::partition(points, dims, &mut order, 0);
        KdTree { points, dims, order }
    }

    fn partition(points: &[Point5D], dims: usize, idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % dims;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| points[a].0[axis].total_cmp(&points[b].0[axis]));
        let (left, right) = idx.split_at_mut(mid);
        Self::partition(points, dims, left, depth + 1);
        Self::partition(points, dims, &mut right[1..], depth + 1);
    }

    /// Squared distance from `q` to its nearest neighbour; infinite when empty.
    pub fn nearest_dist2(&self, q: &Point5D) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&q.0, 0, self.order.len(), 0, &mut best);
        best
    }

    fn search(&self, q: &[f64; 5], lo: usize, hi: usize, depth: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[self.order[mid]].0;
        let d = dist2(q, p, self.dims);
        if d < *best {
            *best = d;
        }
        let axis = depth % self.dims;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        // Any point across the plane is at least diff^2 away; rounding is
        // monotone, so this bound also holds for the computed distances.
        if diff * diff < *best {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

fn check_nonempty(a: &[Point5D], b: &[Point5D]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("Chamfer distance needs two non-empty clouds".into()));
    }
    Ok(())
}

fn directed_mean(from: &[Point5D], nn: impl Fn(&Point5D) -> f64) -> f64 {
    from.iter().map(nn).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance (sum of both directed mean squared
/// nearest-neighbour distances), via k-d trees.
pub fn chamfer(a: &[Point5D], b: &[Point5D], space: ChamferSpace) -> Result<f64> {
    check_nonempty(a, b)?;
    let (ta, tb) = (KdTree::build(a, space), KdTree::build(b, space));
    Ok(directed_mean(a, |p| tb.nearest_dist2(p)) + directed_mean(b, |p| ta.nearest_dist2(p)))
}

/// Reference O(N_a N_b) scan; identical arithmetic to [`chamfer`].
pub fn chamfer_brute_force(a: &[Point5D], b: &[Point5D], space: ChamferSpace) -> Result<f64> {
    check_nonempty(a, b)?;
    let dims = space.dims();
    let scan = |q: &Point5D, set: &[Point5D]| set.iter().map(|p| dist2(&q.0, &p.0, dims)).fold(f64::INFINITY, f64::min);
    Ok(directed_mean(a, |p| scan(p, b)) + directed_mean(b, |p| scan(p, a)))
}

/// `10 log10` of the mean Chamfer value, clamped at [`MCD_FLOOR`].
pub fn mcd_from_chamfers(chamfers: &[f64]) -> Result<f64> {
    if chamfers.is_empty() {
        return Err(Error::Domain("MCD of an empty set".into()));
    }
    let mean = chamfers.iter().sum::<f64>() / chamfers.len() as f64;
    Ok(10.0 * mean.max(MCD_FLOOR).log10())
}

/// MCD in dB over (truth, estimate) pairs.
pub fn mcd(pairs: &[(&[Point5D], &[Point5D])], space: ChamferSpace) -> Result<f64> {
    let ch: Vec<f64> = pairs.par_iter().map(|(t, e)| chamfer(t, e, space)).collect::<Result<_>>()?;
    mcd_from_chamfers(&ch)
}

/// Channel NMSE; the evaluation-facing name of the transfer loss.
pub fn nmse(truth: &ChannelMatrix, estimate: &ChannelMatrix) -> Result<f64> {
    crate::diffusion::loss2(truth, estimate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sample_ids: Vec<String>,
    pub chamfer: Vec<f64>,
    pub mcd_db: f64,
    pub channel_nmse: Option<f64>,
    pub space: ChamferSpace,
}

impl EvalReport {
    pub fn new(sample_ids: Vec<String>, chamfer: Vec<f64>, channel_nmse: Option<f64>, space: ChamferSpace) -> Result<Self> {
        if sample_ids.len() != chamfer.len() {
            return Err(Error::Dimension("one id per Chamfer value".into()));
        }
        let mcd_db = mcd_from_chamfers(&chamfer)?;
        Ok(EvalReport { sample_ids, chamfer, mcd_db, channel_nmse, space })
    }

    pub fn mean_chamfer(&self) -> f64 {
        self.chamfer.iter().sum::<f64>() / self.chamfer.len() as f64
    }

    /// Per-sample rows, where `mcd_contribution` is the sample's share of the
    /// mean, then a `#` summary line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample_id,chamfer,mcd_contribution")?;
        let n = self.chamfer.len() as f64;
        for (id, c) in self.sample_ids.iter().zip(&self.chamfer) {
            writeln!(w, "{id},{c:?},{:?}", c / n)?;
        }
        write!(w, "# count={} mean_chamfer={:?} mcd_db={:?}", self.chamfer.len(), self.mean_chamfer(), self.mcd_db)?;
        if let Some(e) = self.channel_nmse {
            write!(w, " channel_nmse={e:?}")?;
        }
        writeln!(w)?;
        Ok(())
    }
}

/// One ASCII PLY holding both clouds, tagged by a `source` vertex property
/// (0 = truth, 1 = estimate).
pub fn write_ply_pair<W: Write>(mut w: W, truth: &[PhysicalPoint], estimate: &[PhysicalPoint]) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", truth.len() + estimate.len())?;
    for name in ["x", "y", "z", "eps_r", "sigma"] {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "property uchar source")?;
    writeln!(w, "end_header")?;
    for (tag, set) in [(0, truth), (1, estimate)] {
        for p in set {
            let [x, y, z] = p.position_m;
            writeln!(w, "{x:?} {y:?} {z:?} {:?} {:?} {tag}", p.eps_r, p.sigma_s_per_m)?;
        }
    }
    Ok(())
}
