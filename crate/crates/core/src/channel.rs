//! Transmit signalling, target echoes, least-squares channel estimation, the
//! CRB trace criterion, and per-UE SINR and rate.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::cmatrix::{cholesky_pd, hermitian_defect, hermitian_eigen, quad_form, CMat, ChannelMatrix};
use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, derive_seed, stream};

/// Largest condition number of `X X^H` accepted by [`ls_estimate`].
pub const MAX_DESIGN_CONDITION: f64 = 1e12;

/// How the unit-covariance symbol streams are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymbolDraw {
    /// Gaussian draws whose stacked rows are then orthonormalized, so that
    /// `(1/L) [S; C][S; C]^H = I` holds exactly and the sample covariance
    /// equals `S_x`. Requires `L >= N_t + K`.
    #[default]
    Whitened,
    /// Plain i.i.d. circularly-symmetric Gaussian symbols.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmitBlock {
    /// `N_t x L` transmitted symbols.
    pub x: CMat,
    pub w_s: CMat,
    pub w_c: CMat,
    /// `W_s W_s^H + W_c W_c^H`.
    pub s_x: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub h_hat: ChannelMatrix,
    pub crb_trace: f64,
    pub empirical_error: Option<f64>,
}

/// Draws the sensing and communication symbols and forms `X = W_s S + W_c C`.
///
/// Draw order: all of `S` column-major, then all of `C` column-major, from a
/// single stream seeded by `seed`.
pub fn build_transmit_block(w_s: &CMat, w_c: &CMat, l: usize, seed: u64, draw: SymbolDraw) -> Result<TransmitBlock> {
    let n_t = w_s.nrows();
    if w_s.ncols() != n_t || w_c.nrows() != n_t {
        return Err(Error::Dimension(format!(
            "W_s is {}x{}, W_c is {}x{}; both need N_t rows and W_s must be square",
            w_s.nrows(),
            w_s.ncols(),
            w_c.nrows(),
            w_c.ncols()
        )));
    }
    let k = w_c.ncols();
    if l < n_t + k {
        return Err(Error::Dimension(format!("L = {l} < N_t + K = {}", n_t + k)));
    }
    let mut rng = stream(seed);
    let m = n_t + k;
    let mut z = CMat::zeros(m, l);
    for (block_start, rows) in [(0, n_t), (n_t, k)] {
        for col in 0..l {
            for r in 0..rows {
                z[(block_start + r, col)] = complex_gaussian(&mut rng, 1.0);
            }
        }
    }
    if draw == SymbolDraw::Whitened {
        z = whiten_rows(&z);
    }
    let s = z.rows(0, n_t);
    let c = z.rows(n_t, k);
    let x = w_s * s + w_c * c;
    let s_x = w_s * w_s.adjoint() + w_c * w_c.adjoint();
    Ok(TransmitBlock { x, w_s: w_s.clone(), w_c: w_c.clone(), s_x })
}

/// Rows of `z` orthogonalized with norm `sqrt(L)`, in row order (Gram-Schmidt
/// semantics, computed through a QR factorization of `z^H`).
fn whiten_rows(z: &CMat) -> CMat {
    let (m, l) = z.shape();
    let qr = z.adjoint().qr();
    let (q, r) = qr.unpack();
    let scale = (l as f64).sqrt();
    let mut out = CMat::zeros(m, l);
    for i in 0..m {
        // Fix the phase so that the result matches classical Gram-Schmidt.
        let d = r[(i, i)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for j in 0..l {
            out[(i, j)] = (q[(j, i)] * phase).conj() * scale;
        }
    }
    out
}

/// `Y = H X + Z` with `Z` i.i.d. circular Gaussian of variance `sigma_s2`,
/// drawn column-major from a stream seeded by `seed`.
pub fn simulate_echo(h: &ChannelMatrix, x: &CMat, sigma_s2: f64, seed: u64) -> Result<CMat> {
    if h.n_tx() != x.nrows() {
        return Err(Error::Dimension(format!("H has {} columns but X has {} rows", h.n_tx(), x.nrows())));
    }
    let mut y = &h.0 * x;
    if sigma_s2 > 0.0 {
        let mut rng = stream(seed);
        for col in 0..y.ncols() {
            for row in 0..y.nrows() {
                y[(row, col)] += complex_gaussian(&mut rng, sigma_s2);
            }
        }
    } else if sigma_s2 < 0.0 {
        return Err(Error::Domain(format!("negative noise power {sigma_s2}")));
    }
    Ok(y)
}

/// Least-squares estimate `Y X^H (X X^H)^{-1}`.
pub fn ls_estimate(y: &CMat, x: &CMat) -> Result<ChannelMatrix> {
    if y.ncols() != x.ncols() {
        return Err(Error::Dimension(format!("Y has {} columns but X has {}", y.ncols(), x.ncols())));
    }
    let gram = x * x.adjoint();
    let (eig, _) = hermitian_eigen(&gram);
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if !(lo > 0.0) || hi / lo > MAX_DESIGN_CONDITION {
        return Err(Error::SingularDesign(format!(
            "X X^H has eigenvalues in [{lo:.3e}, {hi:.3e}]; condition limit {MAX_DESIGN_CONDITION:.0e}"
        )));
    }
    let chol = cholesky_pd(&gram)
        .ok_or_else(|| Error::SingularDesign("X X^H is not positive definite".into()))?;
    // (Y X^H G^{-1})^H = G^{-1} X Y^H since G is Hermitian.
    let h_adj = chol.solve(&(x * y.adjoint()));
    Ok(ChannelMatrix(h_adj.adjoint()))
}

/// Trace of the channel-estimation CRB, `(N_r sigma^2 / L) tr(S_x^{-1})`.
pub fn crb_trace(s_x: &CMat, sigma_s2: f64, l: usize, n_r: usize) -> Result<f64> {
    if !s_x.is_square() {
        return Err(Error::Dimension("S_x must be square".into()));
    }
    if hermitian_defect(s_x) > 1e-9 {
        return Err(Error::Domain("S_x is not Hermitian".into()));
    }
    let (eig, _) = hermitian_eigen(s_x);
    let scale = eig.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    if !(eig[0] > 1e-14 * scale) {
        return Err(Error::SingularDesign(format!("S_x has minimum eigenvalue {:.3e}", eig[0])));
    }
    let tr_inv: f64 = eig.iter().map(|e| 1.0 / e).sum();
    Ok(n_r as f64 * sigma_s2 / l as f64 * tr_inv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeLink {
    pub sinr: f64,
    pub rate_bps_hz: f64,
}

/// SINR `h^H R_k h / (sigma_k^2 + h^H (S_x - R_k) h)` and rate `log2(1 + SINR)`.
pub fn sinr_and_rate(h: &[DVector<Complex64>], r: &[CMat], s_x: &CMat, sigma2: &[f64]) -> Result<Vec<UeLink>> {
    if h.len() != r.len() || h.len() != sigma2.len() {
        return Err(Error::Dimension(format!(
            "{} channels, {} Gram matrices, {} noise powers",
            h.len(),
            r.len(),
            sigma2.len()
        )));
    }
    h.iter()
        .zip(r)
        .zip(sigma2)
        .enumerate()
        .map(|(k, ((hk, rk), &s2))| {
            if hk.len() != s_x.nrows() || rk.shape() != s_x.shape() {
                return Err(Error::Dimension(format!("UE {k}: dimensions disagree with S_x")));
            }
            let signal = quad_form(rk, hk);
            let interference = quad_form(&(s_x - rk), hk);
            let den = s2 + interference;
            if !(den > 0.0) {
                return Err(Error::NegativeDenominator(k));
            }
            let sinr = signal / den;
            Ok(UeLink { sinr, rate_bps_hz: (1.0 + sinr).log2() })
        })
        .collect()
}

/// Squared estimation errors over independent noise realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub error_sq: Vec<f64>,
    pub mean_error_sq: f64,
    pub crb_trace: f64,
}

impl MonteCarloReport {
    /// CSV with header `trial,error_sq`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial,error_sq")?;
        for (i, e) in self.error_sq.iter().enumerate() {
            writeln!(w, "{i},{e:?}")?;
        }
        Ok(())
    }
}

/// Estimates `||H_hat - H||_F^2` over `trials` noise draws. Trial `i` uses
/// the noise seed derived from `(seed, i)`, so the result does not depend on
/// how trials are scheduled.
pub fn monte_carlo_mse(
    h: &ChannelMatrix,
    block: &TransmitBlock,
    sigma_s2: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    let crb = crb_trace(&block.s_x, sigma_s2, block.x.ncols(), h.n_rx())?;
    let error_sq: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let y = simulate_echo(h, &block.x, sigma_s2, derive_seed(seed, &[i as u64]))?;
            let est = ls_estimate(&y, &block.x)?;
            Ok((&est.0 - &h.0).iter().map(|c| c.norm_sqr()).sum())
        })
        .collect::<Result<_>>()?;
    let mean_error_sq = error_sq.iter().sum::<f64>() / trials as f64;
    Ok(MonteCarloReport { error_sq, mean_error_sq, crb_trace: crb })
}

/// Channel estimate from one echo realization together with its CRB.
pub fn estimate_channel(h: &ChannelMatrix, block: &TransmitBlock, sigma_s2: f64, seed: u64) -> Result<EstimationResult> {
    let y = simulate_echo(h, &block.x, sigma_s2, seed)?;
    let h_hat = ls_estimate(&y, &block.x)?;
    let crb = crb_trace(&block.s_x, sigma_s2, block.x.ncols(), h.n_rx())?;
    let err = (&h_hat.0 - &h.0).iter().map(|c| c.norm_sqr()).sum();
    Ok(EstimationResult { h_hat, crb_trace: crb, empirical_error: Some(err) })
}
