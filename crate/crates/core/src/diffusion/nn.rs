//! Named parameter tensors, elementwise activations, and Adam.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat list of tensors; networks address their weights by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor { name, shape, data });
        self.tensors.len() - 1
    }

    pub fn mat(&self, i: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[i];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("tensor is a matrix")
    }

    pub fn mat_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let t = &mut self.tensors[i];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("tensor is a matrix")
    }

    pub fn vec(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[i].data[..])
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), data: vec![0.0; t.data.len()] })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= s));
    }

    /// `self += other` elementwise; shapes must agree.
    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn add_into_mat(&mut self, i: usize, m: &Array2<f64>) {
        let mut v = self.mat_mut(i);
        v += m;
    }

    pub fn add_into_vec(&mut self, i: usize, v: impl IntoIterator<Item = f64>) {
        self.tensors[i].data.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
}

pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

pub fn col_sums(m: &Array2<f64>) -> Vec<f64> {
    m.sum_axis(Axis(0)).to_vec()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (ti, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (swish(x + h) - swish(x - h)) / (2.0 * h);
            assert!((fd - swish_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ParamSet::default();
        p.push("x".into(), vec![2], vec![3.0, -2.0]);
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.tensors[0].data = p.tensors[0].data.iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.update(&mut p, &g);
        }
        assert!(p.tensors[0].data.iter().all(|x| (x - 1.0).abs() < 1e-3));
    }
}
