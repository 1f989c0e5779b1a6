//! Conditional denoising diffusion over 5D point clouds.
//!
//! A noise estimator built from two independently trained networks: the
//! channel-transfer network maps an estimated sensing channel to the
//! reference-location channel, and the pointwise noise network predicts the
//! injected noise from a noisy point, the step index, and that reference
//! channel. Sampling runs the ancestral reverse chain from pure noise.

pub mod checkpoint;
pub mod nn;
pub mod noise_net;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod transfer;

use ndarray::Array2;

pub use noise_net::{context_len, context_vector, NoiseNet, NOISE_NET_DIMS};
pub use sample::{sample, sample_with_reference, SampleOptions};
pub use schedule::{
    forward_sample, positional_encode, posterior_mean, reconstruct_x0, reverse_mean, DiffusionSchedule, ReverseVariance,
};
pub use train::{train, train_noise_net, train_transfer, TrainConfig, TrainReport, TrainingExample};
pub use transfer::{ChannelTransfer, Propagation, CENTER_ENCODING_LEVELS, TRANSFER_BLOCKS, TRANSFER_WIDTH};

use crate::cloud::Point5D;
use crate::cmatrix::ChannelMatrix;
use crate::config::{SystemConfig, Vec3};
use crate::error::{Error, Result};
use crate::rng::sub_stream;

/// Architecture sizes; the defaults are the full-size networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub noise_dims: Vec<usize>,
    pub transfer_width: usize,
    pub transfer_blocks: usize,
    pub l_bar: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            noise_dims: NOISE_NET_DIMS.to_vec(),
            transfer_width: TRANSFER_WIDTH,
            transfer_blocks: TRANSFER_BLOCKS,
            l_bar: CENTER_ENCODING_LEVELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimator {
    pub noise: NoiseNet,
    pub transfer: ChannelTransfer,
    /// Divides reference channels before they enter the noise-net context.
    pub rms_ref: f64,
    /// Mean per-axis normalization scale of the training clouds, used when a
    /// sampled cloud is mapped back to metres.
    pub scale_hint_m: Vec3,
}

impl NoiseEstimator {
    pub fn new(n_rx: usize, n_tx: usize, center_scale_m: f64, arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.noise_dims.len() < 2 || arch.noise_dims[0] != 5 || *arch.noise_dims.last().unwrap() != 5 {
            return Err(Error::Dimension("noise network must map 5 -> 5".into()));
        }
        if !(center_scale_m > 0.0) || n_rx == 0 || n_tx == 0 {
            return Err(Error::Domain("array sizes and centre scale must be positive".into()));
        }
        let noise = NoiseNet::new(&arch.noise_dims, context_len(n_rx, n_tx), &mut sub_stream(seed, &[0xD1F, 1]));
        let transfer = ChannelTransfer::new(
            n_rx,
            n_tx,
            arch.transfer_width,
            arch.transfer_blocks,
            arch.l_bar,
            center_scale_m,
            &mut sub_stream(seed, &[0xD1F, 2]),
        );
        Ok(NoiseEstimator { noise, transfer, rms_ref: 1.0, scale_hint_m: [1.0; 3] })
    }

    /// Enables round-trip compensation with the array of `cfg`.
    pub fn set_array(&mut self, cfg: &SystemConfig) -> Result<()> {
        if cfg.n_rx != self.n_rx() || cfg.n_tx != self.n_tx() {
            return Err(Error::Dimension("config array does not match the network".into()));
        }
        self.transfer.propagation = Some(Propagation::from_config(cfg));
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            noise_dims: self.noise.dims.clone(),
            transfer_width: self.transfer.width,
            transfer_blocks: self.transfer.blocks,
            l_bar: self.transfer.l_bar,
        }
    }

    pub fn n_rx(&self) -> usize {
        self.transfer.n_rx
    }

    pub fn n_tx(&self) -> usize {
        self.transfer.n_tx
    }

    /// Predicted noise for each point of one cloud at step `t`.
    pub fn predict_noise(&self, x_t: &[Point5D], t: usize, h_ref: &ChannelMatrix) -> Result<Vec<[f64; 5]>> {
        if h_ref.n_rx() != self.n_rx() || h_ref.n_tx() != self.n_tx() {
            return Err(Error::Dimension("reference channel does not match the network".into()));
        }
        let ctx = Array2::from_shape_vec((1, self.noise.ctx_dim), context_vector(t, h_ref, self.rms_ref)).expect("row");
        let pts = points_matrix(x_t);
        let owner = vec![0; x_t.len()];
        let out = self.noise.forward(&noise_net::NoiseInput { contexts: ctx.view(), points: pts.view(), owner: &owner })?;
        Ok(out.rows().into_iter().map(|r| std::array::from_fn(|i| r[i])).collect())
    }

    pub fn transfer_channel(&self, h_hat: &ChannelMatrix, center: &Vec3) -> Result<ChannelMatrix> {
        self.transfer.forward(h_hat, center)
    }
}

pub(crate) fn points_matrix(points: &[Point5D]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 5), |(r, c)| points[r].0[c])
}

/// One element of a noise-matching batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub x0: Vec<Point5D>,
    pub t: usize,
    pub eps: Vec<[f64; 5]>,
    pub h_ref: ChannelMatrix,
}

/// Weighted noise-matching loss averaged over every point of the batch,
/// conditioned on each sample's true reference channel.
pub fn loss1(model: &NoiseEstimator, batch: &[NoiseSample], sched: &DiffusionSchedule) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for s in batch {
        if s.x0.len() != s.eps.len() {
            return Err(Error::Dimension("points and noise draws differ in count".into()));
        }
        let ab = sched.alpha_bar(s.t);
        let xt: Vec<Point5D> = s.x0.iter().zip(&s.eps).map(|(p, e)| schedule::noised(p, e, ab)).collect();
        let pred = model.predict_noise(&xt, s.t, &s.h_ref)?;
        let w = sched.loss_weight(s.t);
        for (e, p) in s.eps.iter().zip(&pred) {
            total += w * e.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        count += s.x0.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Normalized squared error `|H - H_hat|_F^2 / |H|_F^2`.
pub fn loss2(h_true: &ChannelMatrix, h_hat: &ChannelMatrix) -> Result<f64> {
    if h_true.n_rx() != h_hat.n_rx() || h_true.n_tx() != h_hat.n_tx() {
        return Err(Error::Dimension("channel shapes differ".into()));
    }
    let denom = h_true.frobenius_sq();
    if !(denom > 0.0) {
        return Err(Error::Domain("reference channel has zero norm".into()));
    }
    Ok((&h_true.0 - &h_hat.0).norm_squared() / denom)
}
