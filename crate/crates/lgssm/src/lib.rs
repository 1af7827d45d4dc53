//! Exact inference for the scalar linear-Gaussian state-space model
//!
//! ```text
//! x_0 ~ N(mu0, p0)
//! x_t = a x_{t-1} + w_t,   w_t ~ N(0, q)
//! y_t = x_t + v_t,         v_t ~ N(0, r)     for t = 0..T
//! ```
//!
//! Kalman filter, Rauch-Tung-Striebel smoother with pairwise cross-covariances,
//! and the closed-form EM iteration. Everything here is the reference that the
//! Monte Carlo machinery elsewhere is tested against, so it stays deliberately
//! scalar and allocation-simple.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLgssm {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub mu0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    /// E[x_t | y_0..t]
    pub mean: Vec<f64>,
    /// Var[x_t | y_0..t]
    pub var: Vec<f64>,
    /// one-step predictive mean E[x_t | y_0..t-1] (prior at t = 0)
    pub pred_mean: Vec<f64>,
    /// one-step predictive variance
    pub pred_var: Vec<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct SmoothResult {
    /// E[x_t | y_0..T]
    pub mean: Vec<f64>,
    /// Var[x_t | y_0..T]
    pub var: Vec<f64>,
    /// Cov(x_t, x_{t-1} | y_0..T); entry 0 is unused and set to 0
    pub cross: Vec<f64>,
}

impl ScalarLgssm {
    pub fn filter(&self, ys: &[f64]) -> FilterResult {
        assert!(!ys.is_empty());
        let n = ys.len();
        let mut out = FilterResult {
            mean: vec![0.0; n],
            var: vec![0.0; n],
            pred_mean: vec![0.0; n],
            pred_var: vec![0.0; n],
            loglik: 0.0,
        };
        for t in 0..n {
            let (mp, pp) = if t == 0 {
                (self.mu0, self.p0)
            } else {
                (self.a * out.mean[t - 1], self.a * self.a * out.var[t - 1] + self.q)
            };
            out.pred_mean[t] = mp;
            out.pred_var[t] = pp;
            let s = pp + self.r;
            let innov = ys[t] - mp;
            out.loglik += -0.5 * ((2.0 * PI * s).ln() + innov * innov / s);
            let k = pp / s;
            out.mean[t] = mp + k * innov;
            out.var[t] = (1.0 - k) * pp;
        }
        out
    }

    pub fn smooth(&self, f: &FilterResult) -> SmoothResult {
        let n = f.mean.len();
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        let mut cross = vec![0.0; n];
        mean[n - 1] = f.mean[n - 1];
        var[n - 1] = f.var[n - 1];
        for t in (0..n - 1).rev() {
            let g = f.var[t] * self.a / f.pred_var[t + 1];
            mean[t] = f.mean[t] + g * (mean[t + 1] - f.pred_mean[t + 1]);
            var[t] = f.var[t] + g * g * (var[t + 1] - f.pred_var[t + 1]);
            cross[t + 1] = g * var[t + 1];
        }
        SmoothResult { mean, var, cross }
    }

    /// One closed-form EM update from the smoothed sufficient statistics of
    /// several sequences. The emission coefficient is pinned at 1.
    pub fn em_update(&self, seqs: &[Vec<f64>]) -> (ScalarLgssm, f64) {
        let mut sxx = 0.0; // sum E[x_{t-1}^2]
        let mut sxy = 0.0; // sum E[x_t x_{t-1}]
        let mut syy = 0.0; // sum E[x_t^2], t >= 1
        let mut sr = 0.0;
        let mut sm0 = 0.0;
        let mut sp0 = 0.0;
        let mut n_trans = 0usize;
        let mut n_emit = 0usize;
        let mut loglik = 0.0;
        for ys in seqs {
            let f = self.filter(ys);
            loglik += f.loglik;
            let s = self.smooth(&f);
            let ex2: Vec<f64> = s.mean.iter().zip(&s.var).map(|(m, p)| m * m + p).collect();
            for t in 1..ys.len() {
                sxx += ex2[t - 1];
                sxy += s.mean[t] * s.mean[t - 1] + s.cross[t];
                syy += ex2[t];
            }
            for t in 0..ys.len() {
                let e = ys[t] - s.mean[t];
                sr += e * e + s.var[t];
            }
            sm0 += s.mean[0];
            sp0 += s.var[0] + s.mean[0] * s.mean[0];
            n_trans += ys.len() - 1;
            n_emit += ys.len();
        }
        let a = sxy / sxx;
        let q = (syy - 2.0 * a * sxy + a * a * sxx) / n_trans as f64;
        let r = sr / n_emit as f64;
        let mu0 = sm0 / seqs.len() as f64;
        let p0 = sp0 / seqs.len() as f64 - mu0 * mu0;
        (ScalarLgssm { a, q, r, mu0, p0 }, loglik)
    }

    /// Run EM until the parameter update stalls below `tol` or `max_iters`.
    pub fn em_fit(init: ScalarLgssm, seqs: &[Vec<f64>], max_iters: usize, tol: f64) -> (ScalarLgssm, usize) {
        let mut cur = init;
        for it in 0..max_iters {
            let (next, _) = cur.em_update(seqs);
            let delta = (next.a - cur.a)
                .abs()
                .max((next.q - cur.q).abs())
                .max((next.r - cur.r).abs());
            cur = next;
            if delta < tol {
                return (cur, it + 1);
            }
        }
        (cur, max_iters)
    }
}
