//! Channel-transfer network: maps an estimated sensing channel and the
//! target centre to the channel the same target would produce at the
//! reference location.
//!
//! The channel enters normalized to unit RMS. Six densely connected blocks
//! (each sees the channel and every earlier block output) apply a linear map
//! whose outputs are gated by the encoded centre and scaled by a trainable
//! scalar. A linear head plus a trainable skip from the input gives the
//! direction of the output; a small gain network on the centre encoding
//! gives its log-magnitude relative to the input. For a fixed centre the
//! whole map is therefore linear in the channel, which matches the physics
//! for weak scatterers and keeps the 10^6 range of echo powers across the
//! sector out of the nonlinear parts.
//!
//! When the array geometry is known, each entry is first multiplied by the
//! conjugate of the free-space round trip from its antenna pair to the
//! target centre. Across the sector that phase turns over every metre or
//! so, far faster than any centre encoding can follow with a few hundred
//! training targets; what remains after compensation varies slowly.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;

use super::nn::{col_sums, sigmoid, swish, swish_grad, uniform_init, ParamSet};
use super::schedule::positional_encode;
use crate::cmatrix::ChannelMatrix;
use crate::config::{SystemConfig, Vec3};
use crate::error::{Error, Result};

pub const TRANSFER_WIDTH: usize = 512;
pub const TRANSFER_BLOCKS: usize = 6;
pub const CENTER_ENCODING_LEVELS: usize = 10;
/// Hidden width of the centre-to-gain network.
pub const GAIN_WIDTH: usize = 64;

/// Antenna positions and wavenumber for the round-trip compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub wavenumber: f64,
    pub rx_m: Vec<Vec3>,
    pub tx_m: Vec<Vec3>,
}

impl Propagation {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Propagation {
            wavenumber: cfg.wavenumber,
            rx_m: cfg.rx_antenna_positions.clone(),
            tx_m: cfg.tx_antenna_positions.clone(),
        }
    }

    /// `h[n,m] * r_n r_m exp(-jk(r_n + r_m))`, with `r` the antenna-to-centre distances.
    pub fn compensate(&self, h: &ChannelMatrix, center: &Vec3) -> Result<ChannelMatrix> {
        if h.n_rx() != self.rx_m.len() || h.n_tx() != self.tx_m.len() {
            return Err(Error::Dimension("channel does not match the array geometry".into()));
        }
        let dist = |a: &Vec3| (0..3).map(|i| (a[i] - center[i]).powi(2)).sum::<f64>().sqrt();
        let rx: Vec<f64> = self.rx_m.iter().map(dist).collect();
        let tx: Vec<f64> = self.tx_m.iter().map(dist).collect();
        let mut out = h.clone();
        for ((n, m), z) in out.0.iter_mut().enumerate().map(|(i, z)| ((i % rx.len(), i / rx.len()), z)) {
            *z *= Complex64::from_polar(rx[n] * tx[m], -self.wavenumber * (rx[n] + tx[m]));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTransfer {
    pub params: ParamSet,
    pub n_rx: usize,
    pub n_tx: usize,
    pub width: usize,
    pub blocks: usize,
    pub l_bar: usize,
    /// Centres are divided by this length before encoding.
    pub center_scale_m: f64,
    /// Network outputs are multiplied by this.
    pub rms_out: f64,
    pub propagation: Option<Propagation>,
}

pub struct TransferCache {
    features: Array2<f64>,
    code: Array2<f64>,
    /// Per-row output factor `exp(r + log rms_in) / rms_out`.
    factor: Array1<f64>,
    pre: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    gain_pre: Array2<f64>,
    out: Array2<f64>,
}

struct Idx {
    w: usize,
    gate_w: usize,
    gate_b: usize,
    scale: usize,
}

impl ChannelTransfer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        n_rx: usize,
        n_tx: usize,
        width: usize,
        blocks: usize,
        l_bar: usize,
        center_scale_m: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = ChannelTransfer { params: ParamSet::default(), n_rx, n_tx, width, blocks, l_bar, center_scale_m, rms_out: 1.0, propagation: None };
        let (d, e) = (t.channel_dim(), t.code_dim());
        let be = 1.0 / (e as f64).sqrt();
        for b in 0..blocks {
            let i = d + width * b;
            t.params.push(format!("transfer.b{b}.w"), vec![i, width], uniform_init(rng, i * width, 1.0 / (i as f64).sqrt()));
            t.params.push(format!("transfer.b{b}.gate_w"), vec![e, width], uniform_init(rng, e * width, be));
            t.params.push(format!("transfer.b{b}.gate_b"), vec![width], vec![0.0; width]);
            t.params.push(format!("transfer.b{b}.scale"), vec![1], vec![1.0]);
        }
        let f = t.feature_dim();
        t.params.push("transfer.head.w".into(), vec![f, d], uniform_init(rng, f * d, 1.0 / (f as f64).sqrt()));
        t.params.push("transfer.skip".into(), vec![1], vec![0.0]);
        t.params.push("transfer.gain.w1".into(), vec![e, GAIN_WIDTH], uniform_init(rng, e * GAIN_WIDTH, be));
        t.params.push("transfer.gain.b1".into(), vec![GAIN_WIDTH], vec![0.0; GAIN_WIDTH]);
        let bg = 1.0 / (GAIN_WIDTH as f64).sqrt();
        t.params.push("transfer.gain.w2".into(), vec![GAIN_WIDTH, 1], uniform_init(rng, GAIN_WIDTH, bg));
        t.params.push("transfer.gain.b2".into(), vec![1], vec![0.0]);
        t
    }

    pub fn channel_dim(&self) -> usize {
        2 * self.n_rx * self.n_tx
    }

    fn code_dim(&self) -> usize {
        3 * (2 * self.l_bar + 1)
    }

    /// Normalized channel, centre code, and the log input RMS.
    pub fn input_dim(&self) -> usize {
        self.channel_dim() + self.code_dim() + 1
    }

    fn feature_dim(&self) -> usize {
        self.channel_dim() + self.width * self.blocks
    }

    fn block(&self, b: usize) -> Idx {
        Idx { w: 4 * b, gate_w: 4 * b + 1, gate_b: 4 * b + 2, scale: 4 * b + 3 }
    }

    fn head(&self) -> (usize, usize) {
        (4 * self.blocks, 4 * self.blocks + 1)
    }

    fn gain(&self) -> [usize; 4] {
        let g = 4 * self.blocks + 2;
        [g, g + 1, g + 2, g + 3]
    }

    /// Sets the constant term of the output log-gain.
    pub fn set_log_gain_offset(&mut self, value: f64) {
        let b2 = self.gain()[3];
        self.params.tensors[b2].data[0] = value;
    }

    /// The channel as the network sees it, before normalization.
    pub fn compensated(&self, h: &ChannelMatrix, center: &Vec3) -> Result<ChannelMatrix> {
        self.check_dims(h)?;
        match &self.propagation {
            Some(p) => p.compensate(h, center),
            None => Ok(h.clone()),
        }
    }

    fn check_dims(&self, h: &ChannelMatrix) -> Result<()> {
        if h.n_rx() != self.n_rx || h.n_tx() != self.n_tx {
            return Err(Error::Dimension(format!(
                "channel {}x{} but network expects {}x{}",
                h.n_rx(),
                h.n_tx(),
                self.n_rx,
                self.n_tx
            )));
        }
        Ok(())
    }

    /// Network input row for one (channel, centre) pair.
    pub fn encode(&self, h: &ChannelMatrix, center: &Vec3) -> Result<Vec<f64>> {
        let h = self.compensated(h, center)?;
        let rms = (h.frobenius_sq() / self.channel_dim() as f64).sqrt();
        if !(rms > 0.0) || !rms.is_finite() {
            return Err(Error::Domain("input channel has zero or non-finite norm".into()));
        }
        let mut v: Vec<f64> = h.0.iter().map(|z| z.re / rms).collect();
        v.extend(h.0.iter().map(|z| z.im / rms));
        for c in center {
            v.extend(positional_encode(c / self.center_scale_m, self.l_bar));
        }
        v.push(rms.ln());
        Ok(v)
    }

    pub fn decode(&self, row: &[f64]) -> ChannelMatrix {
        let n = self.n_rx * self.n_tx;
        let mut h = ChannelMatrix::zeros(self.n_rx, self.n_tx);
        for (i, z) in h.0.iter_mut().enumerate() {
            *z = Complex64::new(row[i], row[n + i]) * self.rms_out;
        }
        h
    }

    /// Targets in network units (divided by `rms_out`).
    pub fn target_row(&self, h: &ChannelMatrix) -> Vec<f64> {
        let mut v: Vec<f64> = h.0.iter().map(|z| z.re / self.rms_out).collect();
        v.extend(h.0.iter().map(|z| z.im / self.rms_out));
        v
    }

    pub fn forward(&self, h: &ChannelMatrix, center: &Vec3) -> Result<ChannelMatrix> {
        let x = Array2::from_shape_vec((1, self.input_dim()), self.encode(h, center)?).expect("row shape");
        let (out, _) = self.forward_rows(x.view());
        Ok(self.decode(out.row(0).as_slice().expect("contiguous")))
    }

    /// Batched forward pass on encoded rows; outputs are in network units.
    pub fn forward_rows(&self, x: ArrayView2<f64>) -> (Array2<f64>, TransferCache) {
        let p = &self.params;
        let (d, e) = (self.channel_dim(), self.code_dim());
        let code = x.slice(s![.., d..d + e]).to_owned();
        let log_norm = x.column(d + e).to_owned();
        let mut f = Array2::<f64>::zeros((x.nrows(), self.feature_dim()));
        f.slice_mut(s![.., 0..d]).assign(&x.slice(s![.., 0..d]));
        let mut pre = Vec::with_capacity(self.blocks);
        let mut gates = Vec::with_capacity(self.blocks);
        for b in 0..self.blocks {
            let ix = self.block(b);
            let i = d + self.width * b;
            let z = f.slice(s![.., 0..i]).dot(&p.mat(ix.w));
            let mut q = code.dot(&p.mat(ix.gate_w));
            q += &p.vec(ix.gate_b);
            q.mapv_inplace(sigmoid);
            let a = p.tensors[ix.scale].data[0];
            let y = &z * &q * a;
            f.slice_mut(s![.., i..i + self.width]).assign(&y);
            pre.push(z);
            gates.push(q);
        }
        let (hw, hs) = self.head();
        let mut v = f.dot(&p.mat(hw));
        v.scaled_add(p.tensors[hs].data[0], &f.slice(s![.., 0..d]));

        let [g1, gb1, g2, gb2] = self.gain();
        let mut gain_pre = code.dot(&p.mat(g1));
        gain_pre += &p.vec(gb1);
        let r = gain_pre.mapv(swish).dot(&p.mat(g2)).column(0).to_owned() + p.tensors[gb2].data[0];
        let factor: Array1<f64> = r.iter().zip(&log_norm).map(|(rr, ln)| (rr + ln).exp() / self.rms_out).collect();
        let mut out = v;
        for (mut row, &k) in out.axis_iter_mut(Axis(0)).zip(&factor) {
            row *= k;
        }
        let cache = TransferCache { features: f, code, factor, pre, gates, gain_pre, out: out.clone() };
        (out, cache)
    }

    pub fn backward(&self, cache: &TransferCache, d_out: &Array2<f64>) -> ParamSet {
        let p = &self.params;
        let mut g = p.zeros_like();
        let d = self.channel_dim();
        let f = &cache.features;

        // out = direction * factor, with d factor / d r = factor.
        let mut dv = d_out.clone();
        for (mut row, &k) in dv.axis_iter_mut(Axis(0)).zip(&cache.factor) {
            row *= k;
        }
        let dr: Array1<f64> = (d_out * &cache.out).sum_axis(Axis(1));

        let [g1, gb1, g2, gb2] = self.gain();
        let hidden = cache.gain_pre.mapv(swish);
        g.add_into_mat(g2, &hidden.t().dot(&dr.view().insert_axis(Axis(1))));
        g.tensors[gb2].data[0] += dr.sum();
        let mut dpre = dr.view().insert_axis(Axis(1)).dot(&p.mat(g2).t());
        dpre.zip_mut_with(&cache.gain_pre, |v, &z| *v *= swish_grad(z));
        g.add_into_mat(g1, &cache.code.t().dot(&dpre));
        g.add_into_vec(gb1, col_sums(&dpre));

        let (hw, hs) = self.head();
        g.add_into_mat(hw, &f.t().dot(&dv));
        g.tensors[hs].data[0] += (&dv * &f.slice(s![.., 0..d])).sum();
        let mut df = dv.dot(&p.mat(hw).t());
        for b in (0..self.blocks).rev() {
            let ix = self.block(b);
            let i = d + self.width * b;
            let a = p.tensors[ix.scale].data[0];
            let (z, q) = (&cache.pre[b], &cache.gates[b]);
            let dy = df.slice(s![.., i..i + self.width]).to_owned();
            g.tensors[ix.scale].data[0] += (&dy * z * q).sum();
            let dz = &dy * q * a;
            let mut dq = &dy * z * a;
            dq.zip_mut_with(q, |v, &qv| *v *= qv * (1.0 - qv));
            g.add_into_mat(ix.gate_w, &cache.code.t().dot(&dq));
            g.add_into_vec(ix.gate_b, col_sums(&dq));
            g.add_into_mat(ix.w, &f.slice(s![.., 0..i]).t().dot(&dz));
            let back = dz.dot(&p.mat(ix.w).t());
            let mut head = df.slice_mut(s![.., 0..i]);
            head += &back;
        }
        g
    }

    /// Mean NMSE over rows and its gradient; `targets` in network units.
    pub fn nmse_and_grad(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, ParamSet)> {
        let (out, cache) = self.forward_rows(x);
        let n = out.nrows() as f64;
        let mut d = &out - &targets;
        let mut loss = 0.0;
        for (mut row, t) in d.axis_iter_mut(Axis(0)).zip(targets.axis_iter(Axis(0))) {
            let denom = t.iter().map(|v| v * v).sum::<f64>();
            if !(denom > 0.0) {
                return Err(Error::Domain("reference channel with zero norm".into()));
            }
            loss += row.iter().map(|v| v * v).sum::<f64>() / denom;
            row *= 2.0 / (denom * n);
        }
        Ok((loss / n, self.backward(&cache, &d)))
    }
}
