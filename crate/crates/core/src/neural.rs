//! Minimal multilayer-perceptron engine with reverse-mode differentiation.
//!
//! The networks here are tiny (a few layers of width ~32) and their shapes are
//! fixed for the lifetime of a model, so there is no tape and no graph: the
//! forward pass stores pre-activations in a caller-owned scratch and the
//! backward pass walks the layers in reverse. Gradients accumulate (`+=`) into
//! caller buffers so minibatch sums need no extra allocation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Mish,
    Tanh,
    Identity,
}

/// Mish activation x·tanh(softplus(x)) and its derivative, computed with a
/// single exponential: with u = eˣ and w = u² + 2u, tanh(ln(1+eˣ)) = w/(w+2).
/// Above x = 20 the curve is the identity to double precision.
#[inline]
pub fn mish(x: f64) -> (f64, f64) {
    if x > 20.0 {
        return (x, 1.0);
    }
    let u = x.exp();
    let w = u * (u + 2.0);
    let wp2 = w + 2.0;
    let t = w / wp2;
    let dt = 4.0 * u * (u + 1.0) / (wp2 * wp2);
    (x * t, t + x * dt)
}

impl Activation {
    /// (value, derivative) at x.
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Mish => mish(x),
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Identity => (x, 1.0),
        }
    }
}

/// Shape of a fully connected net. Hidden layers share one activation; the
/// output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1);
        assert!(hidden.iter().all(|&h| h >= 1));
        MlpSpec { input_dim, hidden: hidden.to_vec(), output_dim, activation }
    }

    /// (fan_in, fan_out) of every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * (i + 1)).sum()
    }

    /// Glorot-uniform weights (U[-√(6/(fan_in+fan_out)), +...]), zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng: ChaCha8Rng = stream_rng(seed, 0);
        let mut params = Vec::with_capacity(self.n_params());
        for (fan_in, fan_out) in self.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        params
    }
}

/// Reusable per-net buffers: activations of every layer (`act[0]` is the
/// input) plus pre-activation derivatives saved by the forward pass.
#[derive(Debug, Clone)]
pub struct MlpScratch {
    act: Vec<Vec<f64>>,
    dact: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl MlpScratch {
    pub fn new(spec: &MlpSpec) -> Self {
        let mut act = vec![vec![0.0; spec.input_dim]];
        let mut dact = Vec::new();
        let mut widest = spec.input_dim;
        for (_, out) in spec.layer_dims() {
            act.push(vec![0.0; out]);
            dact.push(vec![0.0; out]);
            widest = widest.max(out);
        }
        MlpScratch { act, dact, delta: vec![0.0; widest], delta_next: vec![0.0; widest] }
    }

    pub fn output(&self) -> &[f64] {
        self.act.last().unwrap()
    }
}

/// Forward pass; the output lives in `scratch.output()`.
pub fn forward(spec: &MlpSpec, params: &[f64], input: &[f64], scratch: &mut MlpScratch) {
    debug_assert_eq!(params.len(), spec.n_params());
    assert_eq!(input.len(), spec.input_dim, "mlp input dim");
    scratch.act[0].copy_from_slice(input);
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let (w, rest) = params[offset..].split_at(fan_in * fan_out);
        let b = &rest[..fan_out];
        offset += fan_out * (fan_in + 1);
        let last = l == n_layers - 1;
        let (head, tail) = scratch.act.split_at_mut(l + 1);
        let x = &head[l];
        let out = &mut tail[0];
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let s = b[j] + row.iter().zip(x.iter()).map(|(wi, xi)| wi * xi).sum::<f64>();
            if last {
                out[j] = s;
                scratch.dact[l][j] = 1.0;
            } else {
                let (v, d) = spec.activation.eval(s);
                out[j] = v;
                scratch.dact[l][j] = d;
            }
        }
    }
}

/// Reverse pass for the most recent `forward` call on this scratch.
/// `grad_params` accumulates ∂(upstream·output)/∂params; `grad_input`, when
/// given, accumulates the same loss's input gradient.
pub fn backward(
    spec: &MlpSpec,
    params: &[f64],
    upstream: &[f64],
    scratch: &mut MlpScratch,
    grad_params: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    debug_assert_eq!(params.len(), spec.n_params());
    debug_assert_eq!(grad_params.len(), spec.n_params());
    assert_eq!(upstream.len(), spec.output_dim, "mlp upstream dim");
    let dims = spec.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(i, o) in &dims {
        offsets.push(offset);
        offset += o * (i + 1);
    }
    scratch.delta[..spec.output_dim].copy_from_slice(upstream);
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        let w = &params[offsets[l]..offsets[l] + fan_in * fan_out];
        let (gw, gb) = grad_params[offsets[l]..offsets[l] + fan_out * (fan_in + 1)]
            .split_at_mut(fan_in * fan_out);
        let x = &scratch.act[l];
        // pre-activation gradient in place
        for j in 0..fan_out {
            scratch.delta[j] *= scratch.dact[l][j];
        }
        let delta = &scratch.delta[..fan_out];
        for j in 0..fan_out {
            let d = delta[j];
            gb[j] += d;
            let grow = &mut gw[j * fan_in..(j + 1) * fan_in];
            for (g, xi) in grow.iter_mut().zip(x.iter()) {
                *g += d * xi;
            }
        }
        let want_input = l > 0 || grad_input.is_some();
        if want_input {
            let dn = &mut scratch.delta_next[..fan_in];
            dn.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..fan_out {
                let d = delta[j];
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for (dni, wi) in dn.iter_mut().zip(row.iter()) {
                    *dni += d * wi;
                }
            }
            if l == 0 {
                if let Some(gi) = grad_input.as_deref_mut() {
                    for (g, d) in gi.iter_mut().zip(dn.iter()) {
                        *g += d;
                    }
                }
            }
        }
        std::mem::swap(&mut scratch.delta, &mut scratch.delta_next);
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient component {i} in Adam step {}",
                self.t + 1
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Per-dimension affine input map x ↦ (x − mean)/scale, fit on training data.
/// Dimensions listed in `identity_dims` keep mean 0 / scale 1 (the latent
/// coordinates have no data to fit on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Fit from rows laid out flat as `dim`-strided values.
    pub fn fit(flat: &[f64], dim: usize, identity_dims: &[usize]) -> Self {
        assert!(dim > 0 && flat.len() % dim == 0 && !flat.is_empty());
        let n = (flat.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in flat.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in flat.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut scale: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-12)).collect();
        for &d in identity_dims {
            mean[d] = 0.0;
            scale[d] = 1.0;
        }
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = (x[i] - self.mean[i]) / self.scale[i];
        }
    }

    /// Pull a gradient w.r.t. standardized inputs back to raw inputs.
    #[inline]
    pub fn chain_grad(&self, grad_std: &[f64], grad_raw: &mut [f64]) {
        for i in 0..self.mean.len() {
            grad_raw[i] += grad_std[i] / self.scale[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::fd_grad;

    #[test]
    fn mish_matches_reference_values() {
        // (x, mish(x), mish'(x)) frozen from a 30-digit evaluation
        let table = [
            (0.0, 0.0, 0.6),
            (1.0, 0.86509838826731034612, 1.0490362200997921591),
            (-1.0, -0.30340146137410891807, 0.059216755877394948006),
            (0.5, 0.37524521130489510482, 0.88642437535772725845),
            (-2.5, -0.19681620390653333821, -0.10974357275018568832),
            (3.0, 2.9865350049679573191, 1.0211069109294437727),
            (20.5, 20.5, 1.0),
            (-20.0, -4.1223072406287614006e-8, -3.9161918743489690753e-8),
        ];
        for (x, v, d) in table {
            let (got_v, got_d) = mish(x);
            assert!((got_v - v).abs() < 1e-12, "mish({x}) = {got_v}, want {v}");
            assert!((got_d - d).abs() < 1e-12, "mish'({x}) = {got_d}, want {d}");
        }
    }

    #[test]
    fn zero_params_zero_output() {
        let spec = MlpSpec::new(3, &[8, 8], 2, Activation::Mish);
        let params = vec![0.0; spec.n_params()];
        let mut ws = MlpScratch::new(&spec);
        forward(&spec, &params, &[1.0, -2.0, 0.5], &mut ws);
        assert_eq!(ws.output(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let spec = MlpSpec::new(3, &[], 3, Activation::Identity);
        let mut params = vec![0.0; spec.n_params()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let mut ws = MlpScratch::new(&spec);
        let x = [0.3, -1.7, 2.2];
        forward(&spec, &params, &x, &mut ws);
        assert_eq!(ws.output(), &x);
    }

    #[test]
    fn linear_param_grad_is_outer_product() {
        let spec = MlpSpec::new(2, &[], 2, Activation::Identity);
        let params = vec![0.1, -0.4, 0.7, 0.2, 0.05, -0.3];
        let x = [1.5, -2.0];
        let upstream = [2.0, -1.0];
        let mut ws = MlpScratch::new(&spec);
        forward(&spec, &params, &x, &mut ws);
        let mut g = vec![0.0; spec.n_params()];
        backward(&spec, &params, &upstream, &mut ws, &mut g, None);
        // dL/dW[j][i] = upstream[j] * x[i]; dL/db[j] = upstream[j]
        let want = [2.0 * 1.5, 2.0 * -2.0, -1.0 * 1.5, -1.0 * -2.0, 2.0, -1.0];
        for (gi, wi) in g.iter().zip(want) {
            assert!((gi - wi).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_net_has_zero_input_grad() {
        let spec = MlpSpec::new(4, &[6], 2, Activation::Tanh);
        let mut params = vec![0.0; spec.n_params()];
        // nonzero output bias only
        let n = spec.n_params();
        params[n - 1] = 3.0;
        params[n - 2] = -1.0;
        let mut ws = MlpScratch::new(&spec);
        forward(&spec, &params, &[0.2; 4], &mut ws);
        let mut gp = vec![0.0; n];
        let mut gx = vec![0.0; 4];
        backward(&spec, &params, &[1.0, 1.0], &mut ws, &mut gp, Some(&mut gx));
        assert!(gx.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..100u64 {
            let mut rng = stream_rng(900 + seed, 0);
            let depth = 1 + (seed % 3) as usize;
            let hidden: Vec<usize> = (0..depth).map(|_| 3 + (rng.random::<u8>() % 6) as usize).collect();
            let act = match seed % 3 {
                0 => Activation::Mish,
                1 => Activation::Tanh,
                _ => Activation::ReLU,
            };
            let spec = MlpSpec::new(2 + (seed % 3) as usize, &hidden, 1 + (seed % 2) as usize, act);
            let mut params = spec.init_params(seed);
            // nonzero biases exercise every term
            for p in params.iter_mut() {
                *p += 0.01 * (crate::util::randn(&mut rng));
            }
            let x: Vec<f64> = (0..spec.input_dim).map(|_| crate::util::randn(&mut rng)).collect();
            let upstream: Vec<f64> = (0..spec.output_dim).map(|_| crate::util::randn(&mut rng)).collect();

            let mut ws = MlpScratch::new(&spec);
            forward(&spec, &params, &x, &mut ws);
            let mut gp = vec![0.0; spec.n_params()];
            let mut gx = vec![0.0; spec.input_dim];
            backward(&spec, &params, &upstream, &mut ws, &mut gp, Some(&mut gx));

            let loss = |p: &[f64], xin: &[f64], ws: &mut MlpScratch| {
                forward(&spec, p, xin, ws);
                ws.output().iter().zip(&upstream).map(|(o, u)| o * u).sum::<f64>()
            };
            let fd_p = fd_grad(&mut |p| loss(p, &x, &mut ws), &mut params.clone(), 1e-5);
            let fd_x = fd_grad(&mut |xi| loss(&params, xi, &mut ws), &mut x.clone(), 1e-5);

            let rel = |a: &[f64], b: &[f64]| {
                let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
                diff / norm.max(1e-10)
            };
            assert!(rel(&gp, &fd_p) < 1e-5, "seed {seed}: param grad rel err {}", rel(&gp, &fd_p));
            assert!(rel(&gx, &fd_x) < 1e-5, "seed {seed}: input grad rel err {}", rel(&gx, &fd_x));
        }
    }

    #[test]
    fn adam_matches_reference_trajectory() {
        // f(x, y) = x² + 10y² from (1, -1), lr = 0.1; frozen reference values
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        let want = [
            [0.9000000005, -0.90000000005],
            [0.8004122286917928, -0.8004122277733021],
            [0.7015862729460303, -0.7015862715434841],
            [0.603939060573746, -0.6039390586762204],
            [0.507963659264342, -0.507963656867751],
        ];
        for step in want {
            let g = vec![2.0 * p[0], 20.0 * p[1]];
            opt.step(&mut p, &g).unwrap();
            assert!((p[0] - step[0]).abs() < 1e-12 && (p[1] - step[1]).abs() < 1e-12, "{p:?} vs {step:?}");
        }
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p = vec![0.3, -0.8];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, -0.8]);
    }

    #[test]
    fn adam_rejects_nonfinite_grad() {
        let mut p = vec![0.0];
        let mut opt = Adam::new(1, 0.1);
        assert!(opt.step(&mut p, &[f64::NAN]).is_err());
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        let mut p = vec![0.0];
        let mut opt = Adam::new(1, 0.01);
        for _ in 0..5000 {
            let g = vec![2.0 * (p[0] - 3.0)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "got {}", p[0]);
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let spec = MlpSpec::new(1000, &[], 1000, Activation::Identity);
        let a = spec.init_params(5);
        let b = spec.init_params(5);
        let c = spec.init_params(6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let weights = &a[..1000 * 1000];
        let (_, var) = crate::util::mean_var(weights);
        let target = 2.0 / (1000.0 + 1000.0); // uniform(-L, L) variance = L²/3
        assert!((var - target).abs() < 0.2 * target, "var {var} target {target}");
        assert!(a[1000 * 1000..].iter().all(|&bias| bias == 0.0));
    }

    #[test]
    fn standardizer_fit_and_identity_dims() {
        let rows = [1.0, 10.0, 0.5, 2.0, 20.0, -0.5, 3.0, 30.0, 1.5, 4.0, 40.0, -1.5];
        let s = Standardizer::fit(&rows, 3, &[2]);
        assert!((s.mean[0] - 2.5).abs() < 1e-12);
        assert!((s.mean[1] - 25.0).abs() < 1e-12);
        assert_eq!(s.mean[2], 0.0);
        assert_eq!(s.scale[2], 1.0);
        let mut out = [0.0; 3];
        s.apply(&[2.5, 25.0, 0.7], &mut out);
        assert!(out[0].abs() < 1e-12 && out[1].abs() < 1e-12);
        assert_eq!(out[2], 0.7);
    }
}
