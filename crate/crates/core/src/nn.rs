//! Minimal f64 neural-network layers with hand-written backward passes.
//!
//! Every layer exposes `forward`, which returns its output together with
//! whatever the backward pass needs, and `backward`, which accumulates
//! parameter gradients and returns the input gradient. Feature maps are
//! channel-major `(c, h, w)` flat vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Trainable tensor with Adam moment buffers. Only `value` is serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl From<Vec<f64>> for Param {
    fn from(value: Vec<f64>) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }
}

impl From<Param> for Vec<f64> {
    fn from(p: Param) -> Self {
        p.value
    }
}

impl Param {
    pub fn zeros(n: usize) -> Self {
        vec![0.0; n].into()
    }

    pub fn uniform(n: usize, bound: f64, rng: &mut impl Rng) -> Self {
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>().into()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything holding parameters.
pub trait Module {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn scale_grad(&mut self, k: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                p.value[i] -= self.lr * (p.m[i] / c1) / ((p.v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &[f64], dy: &[f64]) -> Vec<f64> {
    out.iter().zip(dy).map(|(o, d)| if *o > 0.0 { *d } else { 0.0 }).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self { input, output, w: Param::uniform(input * output, bound, rng), b: Param::zeros(output) }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        (0..self.output)
            .map(|o| {
                let row = &self.w.value[o * self.input..(o + 1) * self.input];
                self.b.value[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.input];
        for o in 0..self.output {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            self.b.grad[o] += d;
            let base = o * self.input;
            for i in 0..self.input {
                self.w.grad[base + i] += d * x[i];
                dx[i] += d * self.w.value[base + i];
            }
        }
        dx
    }
}

impl Module for Linear {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub w: Param,
    pub b: Param,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        Self { cin, cout, w: Param::uniform(cout * cin * 9, bound, rng), b: Param::zeros(cout) }
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let mut y = vec![0.0; self.cout * hw];
        for co in 0..self.cout {
            let out = &mut y[co * hw..(co + 1) * hw];
            out.iter_mut().for_each(|v| *v = self.b.value[co]);
            for ci in 0..self.cin {
                let inp = &x[ci * hw..(ci + 1) * hw];
                let k = &self.w.value[(co * self.cin + ci) * 9..(co * self.cin + ci + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for oy in 0..h {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let irow = &inp[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut out[oy * w..(oy + 1) * w];
                            let (x0, x1) = match kx {
                                0 => (1, w),
                                1 => (0, w),
                                _ => (0, w - 1),
                            };
                            for ox in x0..x1 {
                                orow[ox] += kv * irow[ox + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &[f64], h: usize, w: usize, dy: &[f64]) -> Vec<f64> {
        let hw = h * w;
        let mut dx = vec![0.0; self.cin * hw];
        for co in 0..self.cout {
            let dout = &dy[co * hw..(co + 1) * hw];
            self.b.grad[co] += dout.iter().sum::<f64>();
            for ci in 0..self.cin {
                let inp = &x[ci * hw..(ci + 1) * hw];
                let kbase = (co * self.cin + ci) * 9;
                let din = &mut dx[ci * hw..(ci + 1) * hw];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = self.w.value[kbase + ky * 3 + kx];
                        let mut gk = 0.0;
                        for oy in 0..h {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let (x0, x1) = match kx {
                                0 => (1, w),
                                1 => (0, w),
                                _ => (0, w - 1),
                            };
                            for ox in x0..x1 {
                                let d = dout[oy * w + ox];
                                let ix = ox + kx - 1;
                                gk += d * inp[iy * w + ix];
                                din[iy * w + ix] += d * kv;
                            }
                        }
                        self.w.grad[kbase + ky * 3 + kx] += gk;
                    }
                }
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// `relu(x + conv2(relu(conv1(x))))`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

pub struct ResidualCache {
    a1: Vec<f64>,
    out: Vec<f64>,
}

impl ResidualBlock {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2d::new(channels, channels, rng);
        let mut conv2 = Conv2d::new(channels, channels, rng);
        // start close to identity
        conv2.w.value.iter_mut().for_each(|v| *v *= 0.1);
        Self { conv1, conv2 }
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, ResidualCache) {
        let a1 = relu(&self.conv1.forward(x, h, w));
        let mut z = self.conv2.forward(&a1, h, w);
        add_into(&mut z, x);
        let out = relu(&z);
        (out.clone(), ResidualCache { a1, out })
    }

    pub fn backward(&mut self, x: &[f64], h: usize, w: usize, cache: &ResidualCache, dy: &[f64]) -> Vec<f64> {
        let dz = relu_backward(&cache.out, dy);
        let da1 = self.conv2.backward(&cache.a1, h, w, &dz);
        let dh1 = relu_backward(&cache.a1, &da1);
        let mut dx = self.conv1.backward(x, h, w, &dh1);
        add_into(&mut dx, &dz);
        dx
    }
}

impl Module for ResidualBlock {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        p
    }
}

/// Mean over spatial positions per channel.
pub fn global_avg_pool(x: &[f64], channels: usize) -> Vec<f64> {
    let hw = x.len() / channels;
    x.chunks_exact(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect()
}

pub fn global_avg_pool_backward(dy: &[f64], hw: usize) -> Vec<f64> {
    dy.iter().flat_map(|d| std::iter::repeat_n(d / hw as f64, hw)).collect()
}

/// Single-head self-attention with a residual connection, followed by a
/// residual two-layer feed-forward block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub dim: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
}

pub struct AttentionCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    f1: Vec<Vec<f64>>,
}

impl AttentionBlock {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            q: Linear::new(dim, dim, rng),
            k: Linear::new(dim, dim, rng),
            v: Linear::new(dim, dim, rng),
            o: Linear::new(dim, dim, rng),
            ff1: Linear::new(dim, dim, rng),
            ff2: Linear::new(dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, AttentionCache) {
        let scale = 1.0 / (self.dim as f64).sqrt();
        let q: Vec<_> = x.iter().map(|t| self.q.forward(t)).collect();
        let k: Vec<_> = x.iter().map(|t| self.k.forward(t)).collect();
        let v: Vec<_> = x.iter().map(|t| self.v.forward(t)).collect();
        let attn: Vec<Vec<f64>> = q
            .iter()
            .map(|qi| softmax(&k.iter().map(|kj| scale * dot(qi, kj)).collect::<Vec<_>>()))
            .collect();
        let z: Vec<Vec<f64>> = attn
            .iter()
            .map(|a| {
                let mut zi = vec![0.0; self.dim];
                for (aj, vj) in a.iter().zip(&v) {
                    zi.iter_mut().zip(vj).for_each(|(z, vv)| *z += aj * vv);
                }
                zi
            })
            .collect();
        let h: Vec<Vec<f64>> = x
            .iter()
            .zip(&z)
            .map(|(xi, zi)| {
                let mut hi = self.o.forward(zi);
                add_into(&mut hi, xi);
                hi
            })
            .collect();
        let f1: Vec<Vec<f64>> = h.iter().map(|hi| relu(&self.ff1.forward(hi))).collect();
        let y = h
            .iter()
            .zip(&f1)
            .map(|(hi, fi)| {
                let mut yi = self.ff2.forward(fi);
                add_into(&mut yi, hi);
                yi
            })
            .collect();
        (y, AttentionCache { q, k, v, attn, z, h, f1 })
    }

    pub fn backward(&mut self, x: &[Vec<f64>], c: &AttentionCache, dy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = x.len();
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut dh: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let df1 = self.ff2.backward(&c.f1[i], &dy[i]);
            let dpre = relu_backward(&c.f1[i], &df1);
            let mut d = self.ff1.backward(&c.h[i], &dpre);
            add_into(&mut d, &dy[i]);
            dh.push(d);
        }
        let dz: Vec<Vec<f64>> = (0..n).map(|i| self.o.backward(&c.z[i], &dh[i])).collect();
        let mut dv = vec![vec![0.0; self.dim]; n];
        let mut dq = vec![vec![0.0; self.dim]; n];
        let mut dk = vec![vec![0.0; self.dim]; n];
        for i in 0..n {
            let da: Vec<f64> = (0..n).map(|j| dot(&dz[i], &c.v[j])).collect();
            for j in 0..n {
                dv[j].iter_mut().zip(&dz[i]).for_each(|(d, g)| *d += c.attn[i][j] * g);
            }
            let inner: f64 = (0..n).map(|j| c.attn[i][j] * da[j]).sum();
            for j in 0..n {
                let ds = c.attn[i][j] * (da[j] - inner) * scale;
                dq[i].iter_mut().zip(&c.k[j]).for_each(|(d, kk)| *d += ds * kk);
                dk[j].iter_mut().zip(&c.q[i]).for_each(|(d, qq)| *d += ds * qq);
            }
        }
        (0..n)
            .map(|i| {
                let mut dx = dh[i].clone();
                add_into(&mut dx, &self.q.backward(&x[i], &dq[i]));
                add_into(&mut dx, &self.k.backward(&x[i], &dk[i]));
                add_into(&mut dx, &self.v.backward(&x[i], &dv[i]));
                dx
            })
            .collect()
    }
}

impl Module for AttentionBlock {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        for l in [&mut self.q, &mut self.k, &mut self.v, &mut self.o, &mut self.ff1, &mut self.ff2] {
            p.extend(l.params_mut());
        }
        p
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        Self { layers: sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect() }
    }

    /// Returns the activations of every layer; the first entry is the input.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(acts.last().unwrap());
            if i + 1 < self.layers.len() {
                y = relu(&y);
            }
            acts.push(y);
        }
        acts
    }

    pub fn backward(&mut self, acts: &[Vec<f64>], dy: &[f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                d = relu_backward(&acts[i + 1], &d);
            }
            d = self.layers[i].backward(&acts[i], &d);
        }
        d
    }
}

impl Module for Mlp {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
