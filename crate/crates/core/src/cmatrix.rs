//! Complex channel matrices and the `ISACCH1` binary block.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{read_f64, read_u32};

pub type CMat = DMatrix<Complex64>;

pub const CHANNEL_MAGIC: &[u8; 8] = b"ISACCH1\0";

/// Sensing channel `H_s` (rows: receive antennas, columns: transmit antennas).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub CMat);

impl ChannelMatrix {
    pub fn zeros(n_rx: usize, n_tx: usize) -> Self {
        ChannelMatrix(CMat::zeros(n_rx, n_tx))
    }

    pub fn n_rx(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.0.ncols()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `[vec(Re H), vec(Im H)]`, column-major vectorization.
    pub fn to_real_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.iter().map(|c| c.re).collect();
        v.extend(self.0.iter().map(|c| c.im));
        v
    }

    pub fn from_real_vec(n_rx: usize, n_tx: usize, v: &[f64]) -> Result<Self> {
        let n = n_rx * n_tx;
        if v.len() != 2 * n {
            return Err(Error::Dimension(format!("expected {} reals, got {}", 2 * n, v.len())));
        }
        Ok(ChannelMatrix(CMat::from_iterator(
            n_rx,
            n_tx,
            (0..n).map(|i| Complex64::new(v[i], v[n + i])),
        )))
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_cmat(w, &self.0)
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        read_cmat(r).map(ChannelMatrix)
    }
}

/// Magic, `u32` rows, `u32` cols, then row-major interleaved `(re, im)` f64, all little-endian.
pub fn write_cmat<W: Write>(mut w: W, m: &CMat) -> Result<()> {
    w.write_all(CHANNEL_MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let c = m[(i, j)];
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cmat<R: Read>(mut r: R) -> Result<CMat> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHANNEL_MAGIC {
        return Err(Error::Format("bad channel magic".into()));
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = Complex64::new(read_f64(&mut r)?, read_f64(&mut r)?);
        }
    }
    Ok(m)
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Largest entrywise deviation from Hermitian symmetry, relative to the largest entry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let scale = a.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale
}

/// Eigenvalues (ascending) and eigenvectors of the Hermitian part of `a`.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(a.nrows(), a.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Cholesky factorization that succeeds only on positive-definite input.
///
/// nalgebra takes complex square roots of the pivots, so its factorization
/// of an indefinite Hermitian matrix "succeeds" with imaginary diagonal
/// entries. Every pivot here must be real and positive.
pub fn cholesky_pd(a: &CMat) -> Option<Cholesky<Complex64, Dyn>> {
    let ch = a.clone().cholesky()?;
    ch.l_dirty().diagonal().iter().all(|d| d.re > 0.0 && d.im.abs() <= 1e-8 * d.re).then_some(ch)
}

/// Real part of the quadratic form `v^H A v`.
pub fn quad_form(a: &CMat, v: &nalgebra::DVector<Complex64>) -> f64 {
    (v.adjoint() * a * v)[(0, 0)].re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indefinite_matrices_have_no_cholesky_factor() {
        let d = |v: [f64; 2]| CMat::from_diagonal(&nalgebra::DVector::from_fn(2, |i, _| Complex64::new(v[i], 0.0)));
        assert!(cholesky_pd(&d([1.0, 2.0])).is_some());
        assert!(cholesky_pd(&d([1.0, -1.0])).is_none());
        assert!(cholesky_pd(&d([1.0, -1e-30])).is_none());
        assert!(cholesky_pd(&d([1.0, 0.0])).is_none());
    }

    #[test]
    fn binary_layout_is_row_major() {
        let m = CMat::from_row_slice(
            2,
            3,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0].map(|x| Complex64::new(x, -x)),
        );
        let mut buf = Vec::new();
        write_cmat(&mut buf, &m).unwrap();
        assert_eq!(&buf[..8], b"ISACCH1\0");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        // Second element in row-major order is (0, 1) = 2 - 2j.
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 2.0);
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), -2.0);
        assert_eq!(read_cmat(&buf[..]).unwrap(), m);
    }

    #[test]
    fn real_vectorization_round_trip() {
        let h = ChannelMatrix(CMat::from_fn(3, 2, |i, j| Complex64::new(i as f64, j as f64 + 0.5)));
        let v = h.to_real_vec();
        assert_eq!(v.len(), 12);
        assert_eq!(v[1], 1.0); // column-major: (1, 0)
        assert_eq!(ChannelMatrix::from_real_vec(3, 2, &v).unwrap(), h);
        assert!(ChannelMatrix::from_real_vec(3, 3, &v).is_err());
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(read_cmat(&b"ISACVX1\0\0\0\0\0\0\0\0\0"[..]).is_err());
    }
}
