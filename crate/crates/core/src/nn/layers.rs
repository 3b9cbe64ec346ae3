//! Dense, layer norm, GELU feed-forward and token mean pooling, each with an
//! explicit backward pass that accumulates parameter gradients into the
//! [`ParamStore`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use super::{NnError, ParamId, ParamStore, Tensor};

/// Affine map `x W + b` over a batch of rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    /// Weights from `uniform(+-1/sqrt(d_in))`, zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let bound = 1.0 / libm::sqrt(d_in as f64);
        let weight = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], bound, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?;
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.d_in);
        let b = store.value(self.bias);
        let mut y = Vec::with_capacity(n * self.d_out);
        for _ in 0..n {
            y.extend_from_slice(b);
        }
        matmul_acc(x, store.value(self.weight), &mut y, n, self.d_in, self.d_out);
        y
    }

    /// Accumulates `dW`, `db`; returns `dx` when requested.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        x: &[f64],
        n: usize,
        dy: &[f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        {
            let db = store.grad_mut(self.bias);
            for row in dy.chunks_exact(self.d_out) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        matmul_at_b_acc(x, dy, store.grad_mut(self.weight), n, self.d_in, self.d_out);
        want_dx.then(|| {
            let mut dx = vec![0.0; n * self.d_in];
            matmul_a_bt_acc(dy, store.value(self.weight), &mut dx, n, self.d_out, self.d_in);
            dx
        })
    }
}

/// Checked functional form: `x[n, d_in] W[d_in, d_out] + b`.
pub fn dense_apply(store: &ParamStore, layer: &Dense, x: &Tensor) -> Result<Tensor, NnError> {
    if x.shape().len() != 2 || x.cols() != layer.d_in {
        return Err(NnError::Shape("dense input width does not match weight rows"));
    }
    let n = x.rows();
    Tensor::new(&[n, layer.d_out], layer.forward(store, x.data(), n))
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub d: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self, NnError> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::new(&[d], vec![1.0; d])?)?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?;
        Ok(Self { gamma, beta, d })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> (Vec<f64>, LayerNormCache) {
        let d = self.d;
        let (g, b) = (store.value(self.gamma), store.value(self.beta));
        let mut y = vec![0.0; n * d];
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                y[i * d + j] = g[j] * h + b[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &LayerNormCache,
        n: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let d = self.d;
        {
            let dg = store.grad_mut(self.gamma);
            for i in 0..n {
                for j in 0..d {
                    dg[j] += dy[i * d + j] * cache.xhat[i * d + j];
                }
            }
        }
        {
            let db = store.grad_mut(self.beta);
            for row in dy.chunks_exact(d) {
                for (g, v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let g = store.value(self.gamma);
        let mut dx = vec![0.0; n * d];
        for i in 0..n {
            let xh = &cache.xhat[i * d..(i + 1) * d];
            let dxh: Vec<f64> = (0..d).map(|j| dy[i * d + j] * g[j]).collect();
            let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
            let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for j in 0..d {
                dx[i * d + j] = cache.inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI);
    cdf + x * pdf
}

/// Two dense layers with a GELU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(Self {
            fc1: Dense::new(store, &format!("{name}.fc1"), d, hidden, rng)?,
            fc2: Dense::new(store, &format!("{name}.fc2"), hidden, d, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> (Vec<f64>, FeedForwardCache) {
        let pre = self.fc1.forward(store, x, n);
        let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward(store, &act, n);
        (
            y,
            FeedForwardCache {
                x: x.to_vec(),
                pre,
                act,
            },
        )
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &FeedForwardCache,
        n: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let mut dact = self
            .fc2
            .backward(store, &cache.act, n, dy, true)
            .unwrap_or_default();
        for (g, &p) in dact.iter_mut().zip(&cache.pre) {
            *g *= gelu_grad(p);
        }
        self.fc1
            .backward(store, &cache.x, n, &dact, true)
            .unwrap_or_default()
    }
}

/// Mean over the `n` rows of an `n x d` block.
pub fn mean_pool(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for row in x.chunks_exact(d).take(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

pub fn mean_pool_backward(dy: &[f64], n: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(n * dy.len());
    for _ in 0..n {
        dx.extend(dy.iter().map(|g| g / n as f64));
    }
    dx
}
