//! Dense row-major arrays and the handful of kernels the model needs.
//!
//! Everything is `f64`: gradient checks run central differences at a step of
//! 1e-5 and need the headroom.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `y = W x` for a `rows × cols` matrix.
pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.cols();
    debug_assert_eq!(cols, x.len());
    w.data.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// `acc += Wᵀ g`.
pub fn matvec_t_acc(w: &Tensor, g: &[f64], acc: &mut [f64]) {
    let cols = w.cols();
    for (row, &gi) in w.data.chunks_exact(cols).zip(g) {
        if gi != 0.0 {
            axpy(gi, row, acc);
        }
    }
}

/// `W += g xᵀ`.
pub fn outer_acc(w: &mut Tensor, g: &[f64], x: &[f64]) {
    let cols = w.cols();
    for (row, &gi) in w.data.chunks_exact_mut(cols).zip(g) {
        if gi != 0.0 {
            axpy(gi, x, row);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient of the softmax pre-activation given its output and the upstream gradient.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let inner = dot(probs, grad);
    probs.iter().zip(grad).map(|(p, g)| p * (g - inner)).collect()
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights uniform in `[-1/sqrt(fan), 1/sqrt(fan)]`, zero bias.
    pub fn new<R: Rng>(out_dim: usize, in_dim: usize, fan: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan.max(1) as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[out_dim, in_dim], bound, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = matvec(&self.weight, x);
        for (yi, b) in y.iter_mut().zip(&self.bias.data) {
            *yi += b;
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear, dx: &mut [f64]) {
        outer_acc(&mut grads.weight, dy, x);
        axpy(1.0, dy, &mut grads.bias.data);
        matvec_t_acc(&self.weight, dy, dx);
    }

    pub fn add_assign(&mut self, other: &Linear) {
        self.weight.add_assign(&other.weight);
        self.bias.add_assign(&other.bias);
    }
}
