//! Minimal neural-network stack for the toy conditional denoiser: 3x3
//! convolutions (im2col + GEMM), group normalization, SiLU, average pooling,
//! nearest upsampling, token embeddings, and Adam.
//!
//! Everything operates on one sample at a time; batch parallelism happens in
//! the training loop, which reduces per-sample gradients in index order so
//! results are bitwise reproducible for a given seed on a given host.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const GN_EPS: f32 = 1e-5;

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_arr(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(silu)
}

/// 3x3 convolution, stride 1, zero padding 1. Weights stored as
/// (out_channels, in_channels * 9) for the GEMM.
pub struct Conv2d {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
    pub in_c: usize,
    pub out_c: usize,
}

#[derive(Clone)]
pub struct Conv2dGrad {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / (in_c * 9) as f32).sqrt();
        let w = Array2::from_shape_fn((out_c, in_c * 9), |_| {
            (rng.random::<f32>() * 2.0 - 1.0) * scale
        });
        Conv2d {
            w,
            b: Array1::zeros(out_c),
            in_c,
            out_c,
        }
    }

    pub fn zeroed(in_c: usize, out_c: usize) -> Self {
        Conv2d {
            w: Array2::zeros((out_c, in_c * 9)),
            b: Array1::zeros(out_c),
            in_c,
            out_c,
        }
    }

    pub fn zero_grad(&self) -> Conv2dGrad {
        Conv2dGrad {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    fn im2col(&self, x: &Array3<f32>) -> Array2<f32> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_c);
        let mut cols = Array2::<f32>::zeros((c * 9, h * w));
        for ch in 0..c {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let row = (ch * 3 + ky) * 3 + kx;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            cols[[row, y * w + xx]] = x[[ch, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (_, h, w) = x.dim();
        let cols = self.im2col(x);
        let mut y2 = self.w.dot(&cols);
        for (mut row, &bias) in y2.outer_iter_mut().zip(self.b.iter()) {
            row += bias;
        }
        y2.into_shape_with_order((self.out_c, h, w)).unwrap()
    }

    /// Returns grad wrt input; accumulates weight/bias grads.
    pub fn backward(&self, x: &Array3<f32>, gy: &Array3<f32>, grad: &mut Conv2dGrad) -> Array3<f32> {
        let (_, h, w) = x.dim();
        let gy2 = gy
            .view()
            .into_shape_with_order((self.out_c, h * w))
            .unwrap();
        let cols = self.im2col(x);
        grad.w += &gy2.dot(&cols.t());
        for (gb, row) in grad.b.iter_mut().zip(gy2.outer_iter()) {
            *gb += row.sum();
        }
        let gcols = self.w.t().dot(&gy2);
        // col2im
        let mut gx = Array3::<f32>::zeros(x.raw_dim());
        for ch in 0..self.in_c {
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let row = (ch * 3 + ky) * 3 + kx;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            gx[[ch, sy as usize, sx as usize]] += gcols[[row, y * w + xx]];
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Group normalization over (C/groups, H, W) slices of a single sample.
pub struct GroupNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub groups: usize,
}

#[derive(Clone)]
pub struct GroupNormGrad {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

pub struct GroupNormCache {
    x_hat: Array3<f32>,
    inv_std: Vec<f32>,
}

impl GroupNorm {
    pub fn new(channels: usize) -> Self {
        let groups = [8usize, 4, 2, 1]
            .into_iter()
            .find(|g| channels % g == 0)
            .unwrap_or(1);
        GroupNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            groups,
        }
    }

    pub fn zero_grad(&self) -> GroupNormGrad {
        GroupNormGrad {
            gamma: Array1::zeros(self.gamma.raw_dim()),
            beta: Array1::zeros(self.beta.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array3<f32>) -> (Array3<f32>, GroupNormCache) {
        let (c, h, w) = x.dim();
        let per = c / self.groups;
        let mut x_hat = Array3::<f32>::zeros((c, h, w));
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let c0 = g * per;
            let c1 = c0 + per;
            let n = (per * h * w) as f64;
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for ch in c0..c1 {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x[[ch, y, xx]] as f64;
                        sum += v;
                        sq += v * v;
                    }
                }
            }
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            let istd = 1.0 / (var + GN_EPS as f64).sqrt();
            inv_std.push(istd as f32);
            for ch in c0..c1 {
                for y in 0..h {
                    for xx in 0..w {
                        x_hat[[ch, y, xx]] = ((x[[ch, y, xx]] as f64 - mean) * istd) as f32;
                    }
                }
            }
        }
        let mut y = x_hat.clone();
        for ch in 0..c {
            let gam = self.gamma[ch];
            let bet = self.beta[ch];
            y.index_axis_mut(ndarray::Axis(0), ch)
                .mapv_inplace(|v| v * gam + bet);
        }
        (y, GroupNormCache { x_hat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &GroupNormCache,
        gy: &Array3<f32>,
        grad: &mut GroupNormGrad,
    ) -> Array3<f32> {
        let (c, h, w) = gy.dim();
        let per = c / self.groups;
        for ch in 0..c {
            let mut dg = 0.0f32;
            let mut db = 0.0f32;
            for y in 0..h {
                for xx in 0..w {
                    dg += gy[[ch, y, xx]] * cache.x_hat[[ch, y, xx]];
                    db += gy[[ch, y, xx]];
                }
            }
            grad.gamma[ch] += dg;
            grad.beta[ch] += db;
        }
        let mut gx = Array3::<f32>::zeros((c, h, w));
        for g in 0..self.groups {
            let c0 = g * per;
            let c1 = c0 + per;
            let n = (per * h * w) as f32;
            let mut mean_dxhat = 0.0f32;
            let mut mean_dxhat_xhat = 0.0f32;
            for ch in c0..c1 {
                let gam = self.gamma[ch];
                for y in 0..h {
                    for xx in 0..w {
                        let dxh = gy[[ch, y, xx]] * gam;
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * cache.x_hat[[ch, y, xx]];
                    }
                }
            }
            mean_dxhat /= n;
            mean_dxhat_xhat /= n;
            let istd = cache.inv_std[g];
            for ch in c0..c1 {
                let gam = self.gamma[ch];
                for y in 0..h {
                    for xx in 0..w {
                        let dxh = gy[[ch, y, xx]] * gam;
                        gx[[ch, y, xx]] =
                            istd * (dxh - mean_dxhat - cache.x_hat[[ch, y, xx]] * mean_dxhat_xhat);
                    }
                }
            }
        }
        gx
    }
}

/// 2x2 average pooling (spatial dims must be even).
pub fn avg_pool2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let mut y = Array3::<f32>::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for yy in 0..h / 2 {
            for xx in 0..w / 2 {
                y[[ch, yy, xx]] = 0.25
                    * (x[[ch, 2 * yy, 2 * xx]]
                        + x[[ch, 2 * yy, 2 * xx + 1]]
                        + x[[ch, 2 * yy + 1, 2 * xx]]
                        + x[[ch, 2 * yy + 1, 2 * xx + 1]]);
            }
        }
    }
    y
}

pub fn avg_pool2_backward(gy: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = gy.dim();
    let mut gx = Array3::<f32>::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                let g = gy[[ch, yy, xx]] * 0.25;
                gx[[ch, 2 * yy, 2 * xx]] = g;
                gx[[ch, 2 * yy, 2 * xx + 1]] = g;
                gx[[ch, 2 * yy + 1, 2 * xx]] = g;
                gx[[ch, 2 * yy + 1, 2 * xx + 1]] = g;
            }
        }
    }
    gx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<f32>::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for yy in 0..h * 2 {
            for xx in 0..w * 2 {
                y[[ch, yy, xx]] = x[[ch, yy / 2, xx / 2]];
            }
        }
    }
    y
}

pub fn upsample2_backward(gy: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = gy.dim();
    let mut gx = Array3::<f32>::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                gx[[ch, yy / 2, xx / 2]] += gy[[ch, yy, xx]];
            }
        }
    }
    gx
}

/// Dense layer.
pub struct Linear {
    pub w: Array2<f32>, // (out, in)
    pub b: Array1<f32>,
}

#[derive(Clone)]
pub struct LinearGrad {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / in_dim as f32).sqrt();
        Linear {
            w: Array2::from_shape_fn((out_dim, in_dim), |_| {
                (rng.random::<f32>() * 2.0 - 1.0) * scale
            }),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zero_grad(&self) -> LinearGrad {
        LinearGrad {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array1<f32>) -> Array1<f32> {
        self.w.dot(x) + &self.b
    }

    pub fn backward(&self, x: &Array1<f32>, gy: &Array1<f32>, grad: &mut LinearGrad) -> Array1<f32> {
        for (i, &g) in gy.iter().enumerate() {
            grad.b[i] += g;
            for (j, &xv) in x.iter().enumerate() {
                grad.w[[i, j]] += g * xv;
            }
        }
        self.w.t().dot(gy)
    }
}

/// Learned token embedding table with mean pooling. Index 0 is the reserved
/// unknown token.
pub struct Embedding {
    pub table: Array2<f32>, // (vocab, dim)
}

#[derive(Clone)]
pub struct EmbeddingGrad {
    pub table: Array2<f32>,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            table: Array2::from_shape_fn((vocab, dim), |_| (rng.random::<f32>() * 2.0 - 1.0) * 0.08),
        }
    }

    pub fn zero_grad(&self) -> EmbeddingGrad {
        EmbeddingGrad {
            table: Array2::zeros(self.table.raw_dim()),
        }
    }

    pub fn mean_pool(&self, ids: &[usize]) -> Array1<f32> {
        let dim = self.table.ncols();
        let mut out = Array1::<f32>::zeros(dim);
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            out += &self.table.row(id);
        }
        out / ids.len() as f32
    }

    pub fn mean_pool_backward(&self, ids: &[usize], gy: &Array1<f32>, grad: &mut EmbeddingGrad) {
        if ids.is_empty() {
            return;
        }
        let scale = 1.0 / ids.len() as f32;
        for &id in ids {
            let mut row = grad.table.row_mut(id);
            row.zip_mut_with(gy, |g, &v| *g += v * scale);
        }
    }
}

/// Sinusoidal timestep features of the given dimension.
pub fn timestep_embedding(t: usize, dim: usize) -> Array1<f32> {
    let half = dim / 2;
    let mut out = Array1::<f32>::zeros(dim);
    for k in 0..half {
        let freq = (-(10_000.0f32).ln() * k as f32 / (half.max(2) - 1) as f32).exp();
        let arg = t as f32 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

/// Adam with decoupled parameter registration: the model exposes its
/// parameters and gradients in a stable order and the optimizer keeps
/// moments by position.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Advance the step counter; call once per optimizer step before
    /// updating the parameter slots.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update one parameter slot. Slots must be visited in the same order
    /// every step.
    pub fn update_param(&mut self, slot: usize, w: &mut [f32], g: &[f32]) {
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; w.len()];
            self.v[slot] = vec![0.0; w.len()];
        }
        debug_assert_eq!(self.m[slot].len(), w.len());
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        for i in 0..w.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mhat = m[i] / b1c;
            let vhat = v[i] / b2c;
            w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_arr3(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f32> {
        Array3::from_shape_fn((c, h, w), |_| rng.random::<f32>() * 2.0 - 1.0)
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(2, 3, &mut rng);
        let x = rand_arr3(2, 5, 4, &mut rng);
        let probe = rand_arr3(3, 5, 4, &mut rng);

        let loss = |conv: &Conv2d, x: &Array3<f32>| -> f32 {
            (conv.forward(x) * &probe).sum()
        };

        let mut grad = conv.zero_grad();
        let gx = conv.backward(&x, &probe, &mut grad);

        let eps = 1e-3f32;
        // input grad
        let mut x2 = x.clone();
        for idx in [[0usize, 1, 2], [1, 4, 3], [0, 0, 0]] {
            let orig = x2[idx];
            x2[idx] = orig + eps;
            let up = loss(&conv, &x2);
            x2[idx] = orig - eps;
            let down = loss(&conv, &x2);
            x2[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - gx[idx]).abs() < 1e-2, "input fd {fd} vs {}", gx[idx]);
        }
        // weight grad
        let mut conv2 = Conv2d {
            w: conv.w.clone(),
            b: conv.b.clone(),
            in_c: 2,
            out_c: 3,
        };
        for idx in [[0usize, 0], [2, 17], [1, 9]] {
            let orig = conv2.w[idx];
            conv2.w[idx] = orig + eps;
            let up = loss(&conv2, &x);
            conv2.w[idx] = orig - eps;
            let down = loss(&conv2, &x);
            conv2.w[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grad.w[idx]).abs() < 1e-2, "w fd {fd} vs {}", grad.w[idx]);
        }
    }

    #[test]
    fn groupnorm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut gn = GroupNorm::new(4);
        gn.gamma.mapv_inplace(|_| 1.2);
        gn.beta.mapv_inplace(|_| -0.1);
        let x = rand_arr3(4, 3, 3, &mut rng);
        let probe = rand_arr3(4, 3, 3, &mut rng);

        let loss = |gn: &GroupNorm, x: &Array3<f32>| (gn.forward(x).0 * &probe).sum();

        let (_, cache) = gn.forward(&x);
        let mut grad = gn.zero_grad();
        let gx = gn.backward(&cache, &probe, &mut grad);

        let eps = 1e-3f32;
        let mut x2 = x.clone();
        for idx in [[0usize, 1, 2], [3, 0, 1], [2, 2, 2]] {
            let orig = x2[idx];
            x2[idx] = orig + eps;
            let up = loss(&gn, &x2);
            x2[idx] = orig - eps;
            let down = loss(&gn, &x2);
            x2[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - gx[idx]).abs() < 2e-2, "gn fd {fd} vs {}", gx[idx]);
        }
        // gamma grad
        let mut gn2 = GroupNorm {
            gamma: gn.gamma.clone(),
            beta: gn.beta.clone(),
            groups: gn.groups,
        };
        for ch in 0..4 {
            let orig = gn2.gamma[ch];
            gn2.gamma[ch] = orig + eps;
            let up = loss(&gn2, &x);
            gn2.gamma[ch] = orig - eps;
            let down = loss(&gn2, &x);
            gn2.gamma[ch] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grad.gamma[ch]).abs() < 1e-2, "gamma fd {fd} vs {}", grad.gamma[ch]);
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_arr3(2, 4, 6, &mut rng);
        let y = avg_pool2(&x);
        assert_eq!(y.dim(), (2, 2, 3));
        let gx = avg_pool2_backward(&y);
        assert_eq!(gx.dim(), x.dim());
        let up = upsample2(&y);
        assert_eq!(up.dim(), (2, 4, 6));
        let gdown = upsample2_backward(&up);
        assert_eq!(gdown.dim(), y.dim());
        // sum preserved by pooling backward: each cell spreads g/4 to 4 slots
        let total_y: f32 = y.iter().sum();
        let total_gx: f32 = gx.iter().sum();
        assert!((total_y - total_gx).abs() < 1e-4);
    }

    #[test]
    fn linear_and_embedding_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lin = Linear::new(3, 2, &mut rng);
        let x = Array1::from_vec(vec![0.3, -0.7, 1.1]);
        let probe = Array1::from_vec(vec![0.9, -0.4]);
        let mut grad = lin.zero_grad();
        let gx = lin.backward(&x, &probe, &mut grad);
        let loss = |lin: &Linear, x: &Array1<f32>| (lin.forward(x) * &probe).sum();
        let eps = 1e-3f32;
        let mut x2 = x.clone();
        for i in 0..3 {
            let orig = x2[i];
            x2[i] = orig + eps;
            let up = loss(&lin, &x2);
            x2[i] = orig - eps;
            let down = loss(&lin, &x2);
            x2[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-3);
        }

        let emb = Embedding::new(5, 4, &mut rng);
        let ids = vec![1usize, 3, 3];
        let pooled = emb.mean_pool(&ids);
        assert_eq!(pooled.len(), 4);
        let gy = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let mut egrad = emb.zero_grad();
        emb.mean_pool_backward(&ids, &gy, &mut egrad);
        // row 3 appears twice: grad 2/3 of gy; row 1 once: 1/3
        assert!((egrad.table[[3, 0]] - 2.0 / 3.0).abs() < 1e-6);
        assert!((egrad.table[[1, 1]] - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(egrad.table[[0, 0]], 0.0);
    }

    #[test]
    fn adam_reduces_quadratic_loss() {
        let mut w = vec![5.0f32, -3.0];
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g: Vec<f32> = w.iter().map(|v| 2.0 * v).collect();
            adam.begin_step();
            adam.update_param(0, w.as_mut_slice(), g.as_slice());
        }
        assert!(w.iter().all(|v| v.abs() < 1e-2), "w = {w:?}");
    }

    #[test]
    fn timestep_embedding_is_bounded_and_distinct() {
        let a = timestep_embedding(3, 16);
        let b = timestep_embedding(200, 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
