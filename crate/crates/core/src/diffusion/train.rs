//! Two independent training phases: noise matching for the noise network
//! (conditioned on true reference channels), then NMSE regression for the
//! channel-transfer network.

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::nn::Adam;
use super::noise_net::{context_vector, weighted_mse_and_grad, NoiseInput};
use super::schedule::{noised, DiffusionSchedule};
use super::NoiseEstimator;
use crate::cloud::Point5D;
use crate::cmatrix::ChannelMatrix;
use crate::config::Vec3;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, sub_stream};

/// A borrowed training record.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub points: &'a [Point5D],
    pub scale_m: Vec3,
    /// Channel fed to the transfer network (true or estimated).
    pub h_in: &'a ChannelMatrix,
    pub h_ref: &'a ChannelMatrix,
    pub center_m: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_clouds: usize,
    /// Points drawn (without replacement) from each cloud per step.
    pub points_per_cloud: usize,
    /// Adam step of the noise phase.
    pub learning_rate: f64,
    /// Adam step of the transfer phase.
    pub transfer_learning_rate: f64,
    /// Records per transfer-network step.
    pub transfer_batch: usize,
    pub noise_epochs: usize,
    pub transfer_epochs: usize,
    /// Stop when the epoch-mean loss improves by less than this fraction...
    pub convergence_tol: f64,
    /// ...for this many consecutive epochs.
    pub convergence_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_clouds: 8,
            points_per_cloud: 32,
            learning_rate: 1e-4,
            transfer_learning_rate: 1e-3,
            transfer_batch: 32,
            noise_epochs: 500,
            transfer_epochs: 500,
            convergence_tol: 1e-4,
            convergence_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub noise_loss: Vec<f64>,
    pub transfer_loss: Vec<f64>,
    pub noise_converged: bool,
    pub transfer_converged: bool,
}

/// True once the last `window` epochs each improved by less than `tol`.
pub fn converged(curve: &[f64], tol: f64, window: usize) -> bool {
    if window == 0 || curve.len() <= window {
        return false;
    }
    curve.windows(2).rev().take(window).all(|w| (w[0] - w[1]) < tol * w[0].abs())
}

fn rms_of(channels: impl Iterator<Item = f64>) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in channels {
        s += v;
        n += 1;
    }
    let r = (s / n.max(1) as f64).sqrt();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain("training channels have zero or non-finite RMS".into()));
    }
    Ok(r)
}

/// Sets the channel normalization constants and the scale hint from data.
pub fn fit_scales(model: &mut NoiseEstimator, examples: &[TrainingExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Domain("empty training set".into()));
    }
    let rms_ref = rms_of(examples.iter().flat_map(|e| e.h_ref.0.iter().map(|z| z.norm_sqr())))?;
    model.rms_ref = rms_ref;
    model.transfer.rms_out = rms_ref;
    // Start the transfer gain at the mean log ratio of output to input size.
    let mut log_ratio = 0.0;
    for e in examples {
        let (i, o) = (model.transfer.compensated(e.h_in, &e.center_m)?.frobenius_sq(), e.h_ref.frobenius_sq());
        if !(i > 0.0 && o > 0.0) {
            return Err(Error::Domain("training channel with zero norm".into()));
        }
        log_ratio += 0.5 * (o / i).ln();
    }
    model.transfer.set_log_gain_offset(log_ratio / examples.len() as f64);
    let n = examples.len() as f64;
    model.scale_hint_m = std::array::from_fn(|a| examples.iter().map(|e| e.scale_m[a]).sum::<f64>() / n);
    Ok(())
}

/// Scales, then both phases in order.
pub fn train(
    model: &mut NoiseEstimator,
    examples: &[TrainingExample],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    fit_scales(model, examples)?;
    let (noise_loss, noise_converged) = train_noise_net(model, examples, sched, cfg, seed)?;
    let (transfer_loss, transfer_converged) = train_transfer(model, examples, cfg, seed)?;
    Ok(TrainReport { noise_loss, transfer_loss, noise_converged, transfer_converged })
}

/// Phase one. Returns the epoch-mean loss curve and whether the
/// convergence rule fired before the epoch cap.
pub fn train_noise_net(
    model: &mut NoiseEstimator,
    examples: &[TrainingExample],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<f64>, bool)> {
    if examples.is_empty() || cfg.batch_clouds == 0 || cfg.points_per_cloud == 0 {
        return Err(Error::Domain("need examples, a positive batch, and points per cloud".into()));
    }
    let mut opt = Adam::new(&model.noise.params, cfg.learning_rate);
    let ctx_dim = model.noise.ctx_dim;
    let mut curve = Vec::new();
    for epoch in 0..cfg.noise_epochs {
        let mut rng = sub_stream(seed, &[0x7A1, 1, epoch as u64]);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut weight) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_clouds) {
            let mut ctx = Array2::<f64>::zeros((chunk.len(), ctx_dim));
            let mut rows: Vec<[f64; 5]> = Vec::new();
            let mut eps_rows: Vec<[f64; 5]> = Vec::new();
            let mut owner = Vec::new();
            let mut weights = Vec::with_capacity(chunk.len());
            for (j, &ei) in chunk.iter().enumerate() {
                let ex = &examples[ei];
                let t = rng.random_range(1..=sched.steps);
                ctx.row_mut(j).assign(&ndarray::Array1::from(context_vector(t, ex.h_ref, model.rms_ref)));
                weights.push(sched.loss_weight(t));
                let m = cfg.points_per_cloud.min(ex.points.len());
                let picks = index::sample(&mut rng, ex.points.len(), m);
                let ab = sched.alpha_bar(t);
                for pi in picks.iter() {
                    let eps: [f64; 5] = std::array::from_fn(|_| standard_normal(&mut rng));
                    rows.push(noised(&ex.points[pi], &eps, ab).0);
                    eps_rows.push(eps);
                    owner.push(j);
                }
            }
            let pts = Array2::from_shape_fn((rows.len(), 5), |(r, c)| rows[r][c]);
            let eps = Array2::from_shape_fn((rows.len(), 5), |(r, c)| eps_rows[r][c]);
            let input = NoiseInput { contexts: ctx.view(), points: pts.view(), owner: &owner };
            let (loss, grads) = weighted_mse_and_grad(&model.noise, &input, eps.view(), &weights)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss(format!("noise phase, epoch {epoch}, loss {loss}")));
            }
            opt.update(&mut model.noise.params, &grads);
            total += loss * rows.len() as f64;
            weight += rows.len() as f64;
        }
        curve.push(total / weight);
        log::debug!("noise epoch {epoch}: loss {:.6e}", curve[epoch]);
        if converged(&curve, cfg.convergence_tol, cfg.convergence_window) {
            return Ok((curve, true));
        }
    }
    Ok((curve, false))
}

/// Phase two. Only the transfer network's parameters change.
pub fn train_transfer(
    model: &mut NoiseEstimator,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<f64>, bool)> {
    if examples.is_empty() || cfg.transfer_batch == 0 {
        return Err(Error::Domain("need examples and a positive batch".into()));
    }
    let net = &mut model.transfer;
    let inputs: Vec<Vec<f64>> = examples.iter().map(|e| net.encode(e.h_in, &e.center_m)).collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = examples.iter().map(|e| net.target_row(e.h_ref)).collect();
    let mut opt = Adam::new(&net.params, cfg.transfer_learning_rate);
    let (din, dout) = (net.input_dim(), net.channel_dim());
    let mut curve = Vec::new();
    for epoch in 0..cfg.transfer_epochs {
        let mut rng = sub_stream(seed, &[0x7A1, 2, epoch as u64]);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0.0);
        for chunk in order.chunks(cfg.transfer_batch) {
            let x = Array2::from_shape_fn((chunk.len(), din), |(r, c)| inputs[chunk[r]][c]);
            let y = Array2::from_shape_fn((chunk.len(), dout), |(r, c)| targets[chunk[r]][c]);
            let (loss, grads) = net.nmse_and_grad(x.view(), y.view())?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss(format!("transfer phase, epoch {epoch}, loss {loss}")));
            }
            opt.update(&mut net.params, &grads);
            total += loss * chunk.len() as f64;
            count += chunk.len() as f64;
        }
        curve.push(total / count);
        log::debug!("transfer epoch {epoch}: loss {:.6e}", curve[epoch]);
        if converged(&curve, cfg.convergence_tol, cfg.convergence_window) {
            return Ok((curve, true));
        }
    }
    Ok((curve, false))
}

/// Loss curve as `epoch,loss` CSV.
pub fn write_loss_csv<W: std::io::Write>(mut w: W, curve: &[f64]) -> Result<()> {
    writeln!(w, "epoch,loss")?;
    for (e, l) in curve.iter().enumerate() {
        writeln!(w, "{e},{l:?}")?;
    }
    Ok(())
}
