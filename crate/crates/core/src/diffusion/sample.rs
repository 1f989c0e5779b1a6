//! Ancestral sampler. Every point owns a random stream derived from
//! `(seed, point index, t)`, so a cloud is the union of independent
//! single-point chains sharing one context.

use ndarray::Array2;

use super::noise_net::{context_vector, NoiseInput};
use super::schedule::{DiffusionSchedule, ReverseVariance};
use super::NoiseEstimator;
use crate::cloud::{Point5D, PointCloud5D};
use crate::cmatrix::ChannelMatrix;
use crate::config::Vec3;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, sub_stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub n_points: usize,
    pub seed: u64,
    /// Index of the first point; lets a cloud be produced in pieces.
    pub first_point: usize,
    pub variance: ReverseVariance,
}

fn draw5(seed: u64, point: usize, t: usize) -> [f64; 5] {
    let mut rng = sub_stream(seed, &[0x5A3, point as u64, t as u64]);
    std::array::from_fn(|_| standard_normal(&mut rng))
}

/// Runs the reverse chain conditioned on a given reference channel.
pub fn sample_with_reference(
    model: &NoiseEstimator,
    h_ref: &ChannelMatrix,
    sched: &DiffusionSchedule,
    opts: &SampleOptions,
) -> Result<Vec<Point5D>> {
    if h_ref.n_rx() != model.n_rx() || h_ref.n_tx() != model.n_tx() {
        return Err(Error::Dimension("reference channel does not match the network".into()));
    }
    let n = opts.n_points;
    let mut x = Array2::<f64>::zeros((n, 5));
    for r in 0..n {
        let z = draw5(opts.seed, opts.first_point + r, sched.steps + 1);
        for c in 0..5 {
            x[(r, c)] = z[c];
        }
    }
    let owner = vec![0usize; n];
    for t in (1..=sched.steps).rev() {
        let ctx = Array2::from_shape_vec((1, model.noise.ctx_dim), context_vector(t, h_ref, model.rms_ref)).expect("row");
        let eps = model.noise.forward(&NoiseInput { contexts: ctx.view(), points: x.view(), owner: &owner })?;
        let (a, b, ab) = (sched.alpha(t), sched.beta(t), sched.alpha_bar(t));
        let k = b / (1.0 - ab).sqrt();
        let inv = 1.0 / a.sqrt();
        let sd = sched.reverse_std(t, opts.variance);
        for r in 0..n {
            let z = if t > 1 { draw5(opts.seed, opts.first_point + r, t) } else { [0.0; 5] };
            for c in 0..5 {
                x[(r, c)] = inv * (x[(r, c)] - k * eps[(r, c)]) + sd * z[c];
            }
        }
    }
    let pts: Vec<Point5D> = (0..n).map(|r| Point5D(std::array::from_fn(|c| x[(r, c)]))).collect();
    if pts.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteLoss("sampled cloud contains non-finite points".into()));
    }
    Ok(pts)
}

/// Full estimation: transfer the channel estimate to the reference location
/// once, then sample.
pub fn sample(
    model: &NoiseEstimator,
    h_hat: &ChannelMatrix,
    center_m: &Vec3,
    sched: &DiffusionSchedule,
    opts: &SampleOptions,
) -> Result<PointCloud5D> {
    let h_ref = model.transfer_channel(h_hat, center_m)?;
    let points = sample_with_reference(model, &h_ref, sched, opts)?;
    Ok(PointCloud5D { points, center_m: *center_m, scale_m: model.scale_hint_m })
}
