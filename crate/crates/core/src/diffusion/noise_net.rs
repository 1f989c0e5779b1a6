//! Pointwise noise estimator: a stack of concatsquash layers
//! `e' = (W1 e + b1) * sigmoid(W2 c + b2) + W3 c` with swish in between.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::nn::{col_sums, sigmoid, swish, swish_grad, uniform_init, ParamSet};
use crate::cmatrix::ChannelMatrix;
use crate::error::{Error, Result};

pub const NOISE_NET_DIMS: [usize; 11] = [5, 16, 64, 128, 256, 512, 256, 128, 64, 16, 5];

/// `[t, sin t, cos t, sin 2t, cos 2t, vec(Re H) / rms, vec(Im H) / rms]`.
pub fn context_vector(t: usize, h_ref: &ChannelMatrix, rms: f64) -> Vec<f64> {
    let tf = t as f64;
    let mut c = vec![tf, tf.sin(), tf.cos(), (2.0 * tf).sin(), (2.0 * tf).cos()];
    c.extend(h_ref.0.iter().map(|z| z.re / rms));
    c.extend(h_ref.0.iter().map(|z| z.im / rms));
    c
}

/// The raw step index reaches the hundreds. The network reads it scaled by
/// this constant so Adam-sized updates to its weights stay comparable to the
/// other context entries.
pub const STEP_INPUT_SCALE: f64 = 1e-2;

fn scaled_contexts(c: ArrayView2<f64>) -> Array2<f64> {
    let mut c = c.to_owned();
    c.column_mut(0).mapv_inplace(|t| t * STEP_INPUT_SCALE);
    c
}

pub fn context_len(n_rx: usize, n_tx: usize) -> usize {
    5 + 2 * n_rx * n_tx
}

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseNet {
    pub params: ParamSet,
    pub dims: Vec<usize>,
    pub ctx_dim: usize,
}

/// Points grouped by cloud; every cloud carries one context row.
pub struct NoiseInput<'a> {
    pub contexts: ArrayView2<'a, f64>,
    pub points: ArrayView2<'a, f64>,
    /// Cloud (context row) of each point.
    pub owner: &'a [usize],
}

pub struct NoiseCache {
    contexts: Array2<f64>,
    inputs: Vec<Array2<f64>>,
    pre_gate: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    pre_act: Vec<Array2<f64>>,
}

impl NoiseNet {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], ctx_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::default();
        for l in 0..dims.len() - 1 {
            let (i, o) = (dims[l], dims[l + 1]);
            // Gain 3 keeps the point signal alive through ten gated layers;
            // the additive context path starts small so it does not drown it.
            let bi = 3.0 / (i as f64).sqrt();
            let bc = 1.0 / (ctx_dim as f64).sqrt();
            params.push(format!("noise.l{l}.w1"), vec![i, o], uniform_init(rng, i * o, bi));
            params.push(format!("noise.l{l}.b1"), vec![o], vec![0.0; o]);
            let w2 = uniform_init(rng, ctx_dim * o, bc);
            let w3 = uniform_init(rng, ctx_dim * o, 0.1 * bc);
            params.push(format!("noise.l{l}.w2"), vec![ctx_dim, o], w2);
            params.push(format!("noise.l{l}.b2"), vec![o], vec![0.0; o]);
            params.push(format!("noise.l{l}.w3"), vec![ctx_dim, o], w3);
        }
        NoiseNet { params, dims: dims.to_vec(), ctx_dim }
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn idx(l: usize) -> LayerIdx {
        LayerIdx { w1: 5 * l, b1: 5 * l + 1, w2: 5 * l + 2, b2: 5 * l + 3, w3: 5 * l + 4 }
    }

    fn check(&self, input: &NoiseInput) -> Result<()> {
        if input.contexts.ncols() != self.ctx_dim {
            return Err(Error::Dimension(format!("context length {} != {}", input.contexts.ncols(), self.ctx_dim)));
        }
        if input.points.ncols() != self.dims[0] || input.owner.len() != input.points.nrows() {
            return Err(Error::Dimension("point batch does not match the network input".into()));
        }
        if input.owner.iter().any(|&o| o >= input.contexts.nrows()) {
            return Err(Error::Dimension("point owner outside the context batch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &NoiseInput) -> Result<Array2<f64>> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, input: &NoiseInput) -> Result<(Array2<f64>, NoiseCache)> {
        self.check(input)?;
        let p = &self.params;
        let last = self.layers() - 1;
        let ctx = scaled_contexts(input.contexts);
        let mut cache = NoiseCache { contexts: Array2::zeros((0, 0)), inputs: Vec::new(), pre_gate: Vec::new(), gates: Vec::new(), pre_act: Vec::new() };
        let mut e = input.points.to_owned();
        for l in 0..self.layers() {
            let ix = Self::idx(l);
            let mut z = e.dot(&p.mat(ix.w1));
            z += &p.vec(ix.b1);
            let mut g = ctx.dot(&p.mat(ix.w2));
            g += &p.vec(ix.b2);
            g.mapv_inplace(sigmoid);
            let hc = ctx.dot(&p.mat(ix.w3));
            let mut a = z.clone();
            for (r, &o) in input.owner.iter().enumerate() {
                let mut row = a.row_mut(r);
                row *= &g.row(o);
                row += &hc.row(o);
            }
            let next = if l < last { a.mapv(swish) } else { a.clone() };
            cache.inputs.push(e);
            cache.pre_gate.push(z);
            cache.gates.push(g);
            cache.pre_act.push(a);
            e = next;
        }
        cache.contexts = ctx;
        Ok((e, cache))
    }

    /// Parameter gradient given `d loss / d output`.
    pub fn backward(&self, input: &NoiseInput, cache: &NoiseCache, d_out: &Array2<f64>) -> ParamSet {
        let p = &self.params;
        let mut grads = p.zeros_like();
        let n_ctx = input.contexts.nrows();
        let mut d = d_out.clone();
        for l in (0..self.layers()).rev() {
            let ix = Self::idx(l);
            if l < self.layers() - 1 {
                d.zip_mut_with(&cache.pre_act[l], |dv, &a| *dv *= swish_grad(a));
            }
            let out = self.dims[l + 1];
            let g = &cache.gates[l];
            let z = &cache.pre_gate[l];
            let mut dz = d.clone();
            let mut dg = Array2::<f64>::zeros((n_ctx, out));
            let mut dh = Array2::<f64>::zeros((n_ctx, out));
            for (r, &o) in input.owner.iter().enumerate() {
                let dr = d.row(r);
                let mut zr = dz.row_mut(r);
                zr *= &g.row(o);
                dg.row_mut(o).scaled_add(1.0, &(&dr * &z.row(r)));
                dh.row_mut(o).scaled_add(1.0, &dr);
            }
            grads.add_into_mat(ix.w1, &cache.inputs[l].t().dot(&dz));
            grads.add_into_vec(ix.b1, col_sums(&dz));
            let mut dpre = dg;
            dpre.zip_mut_with(g, |v, &gv| *v *= gv * (1.0 - gv));
            grads.add_into_mat(ix.w2, &cache.contexts.t().dot(&dpre));
            grads.add_into_vec(ix.b2, col_sums(&dpre));
            grads.add_into_mat(ix.w3, &cache.contexts.t().dot(&dh));
            if l > 0 {
                d = dz.dot(&p.mat(ix.w1).t());
            }
        }
        grads
    }
}

/// Weighted noise-matching loss `sum_p w_p |eps_p - eps_hat_p|^2 / P` and its gradient.
pub fn weighted_mse_and_grad(
    net: &NoiseNet,
    input: &NoiseInput,
    eps: ArrayView2<f64>,
    weights: &[f64],
) -> Result<(f64, ParamSet)> {
    let (out, cache) = net.forward_cached(input)?;
    let n = out.nrows().max(1) as f64;
    let mut d = &out - &eps;
    let mut loss = 0.0;
    for (r, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
        let w = weights[input.owner[r]];
        loss += w * row.iter().map(|v| v * v).sum::<f64>();
        row *= 2.0 * w / n;
    }
    let grads = net.backward(input, &cache, &d);
    Ok((loss / n, grads))
}

