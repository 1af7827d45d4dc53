//! Recurrent friction baseline: a small Elman-style net — one recurrent
//! layer and two dense layers, 32 ReLU units each — mapping joint velocity
//! to friction torque. Trained by truncated backpropagation-through-time on
//! the torque residuals left after the rigid-body model.
//!
//! Windows restart from a zero hidden state and the first `burn_in` steps
//! are excluded from the loss, so no gradient flows across window borders;
//! friction memory is short (bristle time constants of milliseconds), which
//! a window of a few hundred milliseconds covers comfortably.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Adam;
use crate::util::stream_rng;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnSpec {
    /// joint count: input and output dimension
    pub nq: usize,
    /// units per layer and hidden-state size
    pub width: usize,
}

impl RnnSpec {
    pub fn new(nq: usize, width: usize) -> Self {
        assert!(nq >= 1 && width >= 1);
        RnnSpec { nq, width }
    }

    /// W1x (w×nq), W1h (w×w), b1, W2 (w×w), b2, W3 (w×w), b3, Wo (nq×w), bo
    pub fn n_params(&self) -> usize {
        let (w, nq) = (self.width, self.nq);
        w * nq + w * w + w + 2 * (w * w + w) + nq * w + nq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnFriction {
    pub spec: RnnSpec,
    pub params: Vec<f64>,
    pub v_scale: f64,
    pub tau_scale: f64,
}

/// Per-step activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct RnnScratch {
    h: Vec<f64>,
    a2: Vec<f64>,
    a3: Vec<f64>,
}

impl RnnScratch {
    pub fn new(spec: &RnnSpec) -> Self {
        let w = spec.width;
        RnnScratch { h: vec![0.0; w], a2: vec![0.0; w], a3: vec![0.0; w] }
    }
}

struct Slices<'a> {
    w1x: &'a [f64],
    w1h: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
    wo: &'a [f64],
    bo: &'a [f64],
}

fn split<'a>(spec: &RnnSpec, params: &'a [f64]) -> Slices<'a> {
    let (w, nq) = (spec.width, spec.nq);
    let mut rest = params;
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head
    };
    Slices {
        w1x: take(w * nq),
        w1h: take(w * w),
        b1: take(w),
        w2: take(w * w),
        b2: take(w),
        w3: take(w * w),
        b3: take(w),
        wo: take(nq * w),
        bo: take(nq),
    }
}

fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o += m[j * n..(j + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl RnnFriction {
    pub fn init(spec: RnnSpec, seed: u64) -> Self {
        // He-style fan-in scaling for the ReLU layers
        let mut rng = stream_rng(seed, 41);
        let (w, nq) = (spec.width, spec.nq);
        let mut params = Vec::with_capacity(spec.n_params());
        let mut block = |rows: usize, cols: usize, fan_in: usize| {
            let s = (2.0 / fan_in as f64).sqrt();
            (0..rows * cols).map(|_| s * crate::util::randn(&mut rng)).collect::<Vec<f64>>()
        };
        let mut push = |v: Vec<f64>| params.extend(v);
        push(block(w, nq, nq + w));
        push(block(w, w, nq + w));
        push(vec![0.0; w]);
        push(block(w, w, w));
        push(vec![0.0; w]);
        push(block(w, w, w));
        push(vec![0.0; w]);
        push(block(nq, w, w));
        push(vec![0.0; nq]);
        RnnFriction { spec, params, v_scale: 1.0, tau_scale: 1.0 }
    }

    pub fn state0(&self) -> Vec<f64> {
        vec![0.0; self.spec.width]
    }

    /// One timestep in standardized units: updates `h` in place and fills
    /// the layer activations.
    fn step_std(&self, v_std: &[f64], h: &mut [f64], s: &mut RnnScratch, out_std: &mut [f64]) {
        let p = split(&self.spec, &self.params);
        let w = self.spec.width;
        s.h.copy_from_slice(p.b1);
        matvec(p.w1x, v_std, &mut s.h);
        matvec(p.w1h, h, &mut s.h);
        s.h.iter_mut().for_each(|x| *x = x.max(0.0));
        s.a2.copy_from_slice(p.b2);
        matvec(p.w2, &s.h, &mut s.a2);
        s.a2.iter_mut().for_each(|x| *x = x.max(0.0));
        s.a3.copy_from_slice(p.b3);
        matvec(p.w3, &s.a2, &mut s.a3);
        s.a3.iter_mut().for_each(|x| *x = x.max(0.0));
        out_std.copy_from_slice(p.bo);
        matvec(p.wo, &s.a3, out_std);
        h[..w].copy_from_slice(&s.h);
    }

    /// One timestep in physical units: velocity in, friction torque out.
    pub fn step(&self, v: &[f64], h: &mut [f64], out: &mut [f64]) {
        let nq = self.spec.nq;
        assert_eq!(v.len(), nq);
        assert_eq!(out.len(), nq);
        let v_std: Vec<f64> = v.iter().map(|x| x / self.v_scale).collect();
        let mut s = RnnScratch::new(&self.spec);
        self.step_std(&v_std, h, &mut s, out);
        out.iter_mut().for_each(|x| *x *= self.tau_scale);
    }

    /// Friction torque series along a measured velocity trajectory,
    /// row-major t × nq, hidden state starting at zero.
    pub fn torque_series(&self, v: &[f64], t_len: usize) -> Vec<f64> {
        let nq = self.spec.nq;
        assert_eq!(v.len(), t_len * nq);
        let mut h = self.state0();
        let mut out = vec![0.0; t_len * nq];
        let mut step_out = vec![0.0; nq];
        for t in 0..t_len {
            self.step(&v[t * nq..(t + 1) * nq], &mut h, &mut step_out);
            out[t * nq..(t + 1) * nq].copy_from_slice(&step_out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbpttConfig {
    /// steps per training window, loss and burn-in included
    pub window: usize,
    /// leading steps of each window excluded from the loss
    pub burn_in: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TbpttConfig {
    fn default() -> Self {
        TbpttConfig {
            window: 48,
            burn_in: 16,
            batch_size: 128,
            epochs: 40,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Forward a window and backpropagate through time, accumulating parameter
/// gradients of the summed squared error over the loss steps (standardized
/// units). Returns that summed loss.
#[allow(clippy::too_many_arguments)]
fn window_pass(
    model: &RnnFriction,
    v_std: &[f64],
    tau_std: &[f64],
    window: usize,
    burn_in: usize,
    grad: &mut [f64],
    states: &mut Vec<RnnScratch>,
    h_hist: &mut Vec<Vec<f64>>,
) -> f64 {
    let spec = &model.spec;
    let (w, nq) = (spec.width, spec.nq);
    states.clear();
    h_hist.clear();
    h_hist.push(vec![0.0; w]);
    let mut out = vec![0.0; nq];
    let mut errs = vec![0.0; window * nq];
    let mut loss = 0.0;
    for t in 0..window {
        let mut s = RnnScratch::new(spec);
        let mut h = h_hist[t].clone();
        model.step_std(&v_std[t * nq..(t + 1) * nq], &mut h, &mut s, &mut out);
        if t >= burn_in {
            for j in 0..nq {
                let e = out[j] - tau_std[t * nq + j];
                errs[t * nq + j] = 2.0 * e;
                loss += e * e;
            }
        }
        h_hist.push(h);
        states.push(s);
    }

    let p = split(spec, &model.params);
    let n_par = spec.n_params();
    let (gw1x, grest) = grad[..n_par].split_at_mut(w * nq);
    let (gw1h, grest) = grest.split_at_mut(w * w);
    let (gb1, grest) = grest.split_at_mut(w);
    let (gw2, grest) = grest.split_at_mut(w * w);
    let (gb2, grest) = grest.split_at_mut(w);
    let (gw3, grest) = grest.split_at_mut(w * w);
    let (gb3, grest) = grest.split_at_mut(w);
    let (gwo, gbo) = grest.split_at_mut(nq * w);

    let mut dh_next = vec![0.0; w];
    let mut d3 = vec![0.0; w];
    let mut d2 = vec![0.0; w];
    let mut d1 = vec![0.0; w];
    for t in (0..window).rev() {
        let s = &states[t];
        // readout and the two dense layers
        d3.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..nq {
            let e = errs[t * nq + j];
            if e != 0.0 {
                gbo[j] += e;
                for k in 0..w {
                    gwo[j * w + k] += e * s.a3[k];
                    d3[k] += e * p.wo[j * w + k];
                }
            }
        }
        for k in 0..w {
            if s.a3[k] <= 0.0 {
                d3[k] = 0.0;
            }
        }
        d2.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..w {
            let d = d3[j];
            if d != 0.0 {
                gb3[j] += d;
                for k in 0..w {
                    gw3[j * w + k] += d * s.a2[k];
                    d2[k] += d * p.w3[j * w + k];
                }
            }
        }
        for k in 0..w {
            if s.a2[k] <= 0.0 {
                d2[k] = 0.0;
            }
        }
        // recurrent layer: gradient from this step's dense stack plus the
        // next step's recurrence
        d1.copy_from_slice(&dh_next);
        for j in 0..w {
            let d = d2[j];
            if d != 0.0 {
                gb2[j] += d;
                for k in 0..w {
                    gw2[j * w + k] += d * s.h[k];
                    d1[k] += d * p.w2[j * w + k];
                }
            }
        }
        for k in 0..w {
            if s.h[k] <= 0.0 {
                d1[k] = 0.0;
            }
        }
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        let h_prev = &h_hist[t];
        for j in 0..w {
            let d = d1[j];
            if d != 0.0 {
                gb1[j] += d;
                for k in 0..nq {
                    gw1x[j * nq + k] += d * v_std[t * nq + k];
                }
                for k in 0..w {
                    gw1h[j * w + k] += d * h_prev[k];
                    dh_next[k] += d * p.w1h[j * w + k];
                }
            }
        }
    }
    loss
}

/// One training sequence: velocities and friction-torque residuals,
/// row-major t × nq.
#[derive(Debug, Clone)]
pub struct RnnSequence {
    pub t_len: usize,
    pub v: Vec<f64>,
    pub tau_f: Vec<f64>,
}

/// Train the recurrent baseline. Returns the model and the mean squared
/// error per loss step (physical units) of the final epoch.
pub fn fit_rnn(
    seqs: &[RnnSequence],
    nq: usize,
    width: usize,
    cfg: &TbpttConfig,
) -> Result<(RnnFriction, f64)> {
    if cfg.window <= cfg.burn_in {
        return Err(Error::Config(format!(
            "window ({}) must exceed burn-in ({})",
            cfg.window, cfg.burn_in
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    for (i, s) in seqs.iter().enumerate() {
        if s.v.len() != s.t_len * nq || s.tau_f.len() != s.t_len * nq {
            return Err(Error::Shape {
                expected: s.t_len * nq,
                got: s.v.len().min(s.tau_f.len()),
                context: "rnn training sequence",
            });
        }
        if s.t_len < cfg.window {
            return Err(Error::Config(format!(
                "sequence {i} is shorter ({}) than the training window ({})",
                s.t_len, cfg.window
            )));
        }
    }

    let rms = |it: &mut dyn Iterator<Item = f64>| {
        let (mut acc, mut n) = (0.0, 0usize);
        for x in it {
            acc += x * x;
            n += 1;
        }
        (acc / n.max(1) as f64).sqrt().max(1e-12)
    };
    let v_scale = rms(&mut seqs.iter().flat_map(|s| s.v.iter().copied()));
    let tau_scale = rms(&mut seqs.iter().flat_map(|s| s.tau_f.iter().copied()));

    let mut model = RnnFriction::init(RnnSpec::new(nq, width), cfg.seed);
    model.v_scale = v_scale;
    model.tau_scale = tau_scale;

    // standardized copies of the data
    let data: Vec<(Vec<f64>, Vec<f64>)> = seqs
        .iter()
        .map(|s| {
            (
                s.v.iter().map(|x| x / v_scale).collect(),
                s.tau_f.iter().map(|x| x / tau_scale).collect(),
            )
        })
        .collect();

    // window start positions, strided by the loss span so every loss step is
    // covered once per epoch
    let stride = cfg.window - cfg.burn_in;
    let mut windows: Vec<(usize, usize)> = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        let mut start = 0;
        loop {
            windows.push((si, start));
            if start + cfg.window >= s.t_len {
                break;
            }
            start = (start + stride).min(s.t_len - cfg.window);
        }
    }

    let n_par = model.spec.n_params();
    let mut adam = Adam::new(n_par, cfg.learning_rate);
    let mut grad = vec![0.0; n_par];
    let loss_steps_per_window = stride;
    let mut last_epoch_loss = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let mut order = windows.clone();
        let mut rng = stream_rng(cfg.seed, (7u64 << 61) | epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // deterministic parallel accumulation: fixed chunking, ordered sum
            let parts: Vec<(Vec<f64>, f64)> = batch
                .par_chunks(8)
                .map(|chunk| {
                    let mut g = vec![0.0; n_par];
                    let mut states = Vec::new();
                    let mut h_hist = Vec::new();
                    let mut loss = 0.0;
                    for &(si, start) in chunk {
                        let (v, tf) = &data[si];
                        loss += window_pass(
                            &model,
                            &v[start * nq..(start + cfg.window) * nq],
                            &tf[start * nq..(start + cfg.window) * nq],
                            cfg.window,
                            cfg.burn_in,
                            &mut g,
                            &mut states,
                            &mut h_hist,
                        );
                    }
                    (g, loss)
                })
                .collect();
            let denom = (batch.len() * loss_steps_per_window * nq) as f64;
            grad.iter_mut().for_each(|x| *x = 0.0);
            for (g, l) in parts {
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi;
                }
                epoch_loss += l;
            }
            grad.iter_mut().for_each(|x| *x /= denom);
            adam.step(&mut model.params, &grad)?;
        }
        let denom = (windows.len() * loss_steps_per_window * nq) as f64;
        last_epoch_loss = epoch_loss / denom;
        log::debug!("rnn epoch {epoch}: mse {last_epoch_loss:.6e}");
    }
    Ok((model, last_epoch_loss * tau_scale * tau_scale))
}
