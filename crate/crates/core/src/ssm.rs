//! Gaussian state-space abstraction shared by the particle machinery and EM.
//!
//! A model contributes the deterministic transition mean x_t = f_θ(x_{t−1}, u)
//! and the emission selector g(x); everything Gaussian around those means
//! lives here. The parameter vector θ is a single flat array:
//!
//! ```text
//! [ model head | log q (n_x) | log r (n_y) | init mean (n_x) | init log-var (n_x) ]
//! ```
//!
//! Process and measurement covariances are diagonal and carried as
//! log-variances so that any θ is valid. The head is model-specific (lumped
//! parameters and network weights for the neural model, the transition
//! coefficient for the scalar linear one).

use rand::Rng;

use crate::error::Result;
use crate::util::randn;

pub trait GaussianSsm {
    type Scratch;

    fn n_x(&self) -> usize;
    fn n_y(&self) -> usize;
    /// control input dimension (motor torques; 0 for autonomous models)
    fn n_u(&self) -> usize;
    fn n_head(&self) -> usize;
    fn make_scratch(&self) -> Self::Scratch;

    /// x_t mean given x_{t−1} and the held input u_{t−1}.
    fn transition_mean(
        &self,
        head: &[f64],
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
        scratch: &mut Self::Scratch,
    ) -> Result<()>;

    /// Accumulate λᵀ·∂(transition mean)/∂head into `grad_head`, and
    /// λᵀ·∂(transition mean)/∂x into `grad_x` when requested.
    fn transition_vjp(
        &self,
        head: &[f64],
        x: &[f64],
        u: &[f64],
        lambda: &[f64],
        grad_head: &mut [f64],
        grad_x: Option<&mut [f64]>,
        scratch: &mut Self::Scratch,
    ) -> Result<()>;

    /// Pure selector from state to observation mean; no parameters.
    fn emission_mean(&self, x: &[f64], out: &mut [f64]);
}

/// Slice bookkeeping for the flat θ vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub n_head: usize,
    pub n_x: usize,
    pub n_y: usize,
}

impl ThetaLayout {
    pub fn of<M: GaussianSsm>(model: &M) -> Self {
        ThetaLayout { n_head: model.n_head(), n_x: model.n_x(), n_y: model.n_y() }
    }

    pub fn n_total(&self) -> usize {
        self.n_head + 3 * self.n_x + self.n_y
    }

    pub fn head<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[..self.n_head]
    }

    pub fn log_q<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.n_head..self.n_head + self.n_x]
    }

    pub fn log_r<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.n_head + self.n_x..self.n_head + self.n_x + self.n_y]
    }

    pub fn init_mean<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        let o = self.n_head + self.n_x + self.n_y;
        &theta[o..o + self.n_x]
    }

    pub fn init_logvar<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        let o = self.n_head + 2 * self.n_x + self.n_y;
        &theta[o..o + self.n_x]
    }

    pub fn log_q_range(&self) -> std::ops::Range<usize> {
        self.n_head..self.n_head + self.n_x
    }

    pub fn log_r_range(&self) -> std::ops::Range<usize> {
        self.n_head + self.n_x..self.n_head + self.n_x + self.n_y
    }

    pub fn init_mean_range(&self) -> std::ops::Range<usize> {
        let o = self.n_head + self.n_x + self.n_y;
        o..o + self.n_x
    }

    pub fn init_logvar_range(&self) -> std::ops::Range<usize> {
        let o = self.n_head + 2 * self.n_x + self.n_y;
        o..o + self.n_x
    }
}

const LOG_2PI: f64 = 1.8378770664093453;

/// Diagonal-Gaussian log density of `x` around `mean` with log-variances `lv`.
pub fn diag_gauss_logpdf(x: &[f64], mean: &[f64], lv: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x[i] - mean[i];
        acc += -0.5 * (LOG_2PI + lv[i]) - 0.5 * d * d * (-lv[i]).exp();
    }
    acc
}

pub fn transition_logpdf<M: GaussianSsm>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    x_next: &[f64],
    x: &[f64],
    u: &[f64],
    mean_buf: &mut [f64],
    scratch: &mut M::Scratch,
) -> Result<f64> {
    model.transition_mean(layout.head(theta), x, u, mean_buf, scratch)?;
    Ok(diag_gauss_logpdf(x_next, mean_buf, layout.log_q(theta)))
}

/// Log density plus its gradient with respect to θ (head and log-q segments;
/// the emission and initial segments do not enter the transition term).
/// The gradient is accumulated into `grad`, which must span the full θ.
#[allow(clippy::too_many_arguments)]
pub fn transition_logpdf_grad<M: GaussianSsm>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    x_next: &[f64],
    x: &[f64],
    u: &[f64],
    grad: &mut [f64],
    mean_buf: &mut [f64],
    lambda_buf: &mut [f64],
    scratch: &mut M::Scratch,
) -> Result<f64> {
    let head = layout.head(theta);
    model.transition_mean(head, x, u, mean_buf, scratch)?;
    let lq = layout.log_q(theta);
    let mut lp = 0.0;
    for i in 0..layout.n_x {
        let d = x_next[i] - mean_buf[i];
        let inv_q = (-lq[i]).exp();
        lp += -0.5 * (LOG_2PI + lq[i]) - 0.5 * d * d * inv_q;
        // ∂lp/∂mean_i = d/q_i feeds the head VJP; ∂lp/∂log q_i is closed form
        lambda_buf[i] = d * inv_q;
        grad[layout.log_q_range().start + i] += -0.5 + 0.5 * d * d * inv_q;
    }
    model.transition_vjp(head, x, u, lambda_buf, &mut grad[..layout.n_head], None, scratch)?;
    Ok(lp)
}

pub fn emission_logpdf<M: GaussianSsm>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    y: &[f64],
    x: &[f64],
    mean_buf: &mut [f64],
) -> f64 {
    model.emission_mean(x, mean_buf);
    diag_gauss_logpdf(y, mean_buf, layout.log_r(theta))
}

/// Emission log density plus its gradient (log-r segment only).
pub fn emission_logpdf_grad<M: GaussianSsm>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    y: &[f64],
    x: &[f64],
    grad: &mut [f64],
    mean_buf: &mut [f64],
) -> f64 {
    model.emission_mean(x, mean_buf);
    let lr = layout.log_r(theta);
    let mut lp = 0.0;
    for i in 0..layout.n_y {
        let d = y[i] - mean_buf[i];
        let inv_r = (-lr[i]).exp();
        lp += -0.5 * (LOG_2PI + lr[i]) - 0.5 * d * d * inv_r;
        grad[layout.log_r_range().start + i] += -0.5 + 0.5 * d * d * inv_r;
    }
    lp
}

pub fn initial_logpdf(layout: &ThetaLayout, theta: &[f64], x0: &[f64]) -> f64 {
    diag_gauss_logpdf(x0, layout.init_mean(theta), layout.init_logvar(theta))
}

/// Initial log density plus its gradient (init mean and log-var segments).
pub fn initial_logpdf_grad(layout: &ThetaLayout, theta: &[f64], x0: &[f64], grad: &mut [f64]) -> f64 {
    let mean = layout.init_mean(theta);
    let lv = layout.init_logvar(theta);
    let mut lp = 0.0;
    for i in 0..layout.n_x {
        let d = x0[i] - mean[i];
        let inv_v = (-lv[i]).exp();
        lp += -0.5 * (LOG_2PI + lv[i]) - 0.5 * d * d * inv_v;
        grad[layout.init_mean_range().start + i] += d * inv_v;
        grad[layout.init_logvar_range().start + i] += -0.5 + 0.5 * d * d * inv_v;
    }
    lp
}

pub fn sample_initial<R: Rng>(layout: &ThetaLayout, theta: &[f64], rng: &mut R, out: &mut [f64]) {
    let mean = layout.init_mean(theta);
    let lv = layout.init_logvar(theta);
    for i in 0..layout.n_x {
        out[i] = mean[i] + (0.5 * lv[i]).exp() * randn(rng);
    }
}

/// Draw x_t given x_{t−1}: transition mean plus diagonal process noise.
#[allow(clippy::too_many_arguments)]
pub fn sample_transition<M: GaussianSsm, R: Rng>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    x: &[f64],
    u: &[f64],
    rng: &mut R,
    out: &mut [f64],
    scratch: &mut M::Scratch,
) -> Result<()> {
    model.transition_mean(layout.head(theta), x, u, out, scratch)?;
    let lq = layout.log_q(theta);
    for i in 0..layout.n_x {
        out[i] += (0.5 * lq[i]).exp() * randn(rng);
    }
    Ok(())
}

pub fn sample_emission<M: GaussianSsm, R: Rng>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    x: &[f64],
    rng: &mut R,
    out: &mut [f64],
) {
    model.emission_mean(x, out);
    let lr = layout.log_r(theta);
    for i in 0..layout.n_y {
        out[i] += (0.5 * lr[i]).exp() * randn(rng);
    }
}

/// One recorded input/output sequence: observations y_0..y_T and the
/// zero-order-hold inputs, with u_t applied over [t, t+1).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sequence {
    pub t_len: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub ys: Vec<f64>,
    pub us: Vec<f64>,
}

impl Sequence {
    pub fn new(t_len: usize, n_y: usize, n_u: usize, ys: Vec<f64>, us: Vec<f64>) -> crate::Result<Self> {
        if ys.len() != t_len * n_y {
            return Err(crate::Error::Shape {
                expected: t_len * n_y,
                got: ys.len(),
                context: "sequence observations",
            });
        }
        if us.len() != t_len * n_u {
            return Err(crate::Error::Shape {
                expected: t_len * n_u,
                got: us.len(),
                context: "sequence inputs",
            });
        }
        Ok(Sequence { t_len, n_y, n_u, ys, us })
    }

    #[inline]
    pub fn y(&self, t: usize) -> &[f64] {
        &self.ys[t * self.n_y..(t + 1) * self.n_y]
    }

    #[inline]
    pub fn u(&self, t: usize) -> &[f64] {
        &self.us[t * self.n_u..(t + 1) * self.n_u]
    }
}

/// Scalar linear-Gaussian model x_t = a·x_{t−1} + w, y_t = x_t + v. The
/// emission coefficient is pinned to 1 (it is not identifiable jointly with
/// a and the variances). Head = [a].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearGaussianSsm;

impl GaussianSsm for LinearGaussianSsm {
    type Scratch = ();

    fn n_x(&self) -> usize {
        1
    }

    fn n_y(&self) -> usize {
        1
    }

    fn n_u(&self) -> usize {
        0
    }

    fn n_head(&self) -> usize {
        1
    }

    fn make_scratch(&self) -> Self::Scratch {}

    fn transition_mean(
        &self,
        head: &[f64],
        x: &[f64],
        _u: &[f64],
        out: &mut [f64],
        _scratch: &mut Self::Scratch,
    ) -> Result<()> {
        out[0] = head[0] * x[0];
        Ok(())
    }

    fn transition_vjp(
        &self,
        head: &[f64],
        x: &[f64],
        _u: &[f64],
        lambda: &[f64],
        grad_head: &mut [f64],
        grad_x: Option<&mut [f64]>,
        _scratch: &mut Self::Scratch,
    ) -> Result<()> {
        grad_head[0] += lambda[0] * x[0];
        if let Some(gx) = grad_x {
            gx[0] += lambda[0] * head[0];
        }
        Ok(())
    }

    fn emission_mean(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }
}

/// Pack a θ vector for the scalar linear model from natural parameters.
pub fn linear_theta(a: f64, q: f64, r: f64, mu0: f64, p0: f64) -> Vec<f64> {
    vec![a, q.ln(), r.ln(), mu0, p0.ln()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{fd_grad, mean_var, stream_rng};

    fn layout() -> ThetaLayout {
        ThetaLayout::of(&LinearGaussianSsm)
    }

    #[test]
    fn theta_layout_slices() {
        let l = layout();
        assert_eq!(l.n_total(), 5);
        let theta = linear_theta(0.9, 0.04, 0.25, 0.5, 1.0);
        assert_eq!(l.head(&theta), &[0.9]);
        assert!((l.log_q(&theta)[0] - 0.04f64.ln()).abs() < 1e-15);
        assert!((l.log_r(&theta)[0] - 0.25f64.ln()).abs() < 1e-15);
        assert_eq!(l.init_mean(&theta), &[0.5]);
        assert!((l.init_logvar(&theta)[0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn logpdf_matches_closed_form() {
        // N(x; m, v): log p = −½log(2πv) − (x−m)²/(2v)
        let x = [0.7];
        let mean = [0.2];
        let lv = [0.3f64.ln()];
        let want = -0.5 * (2.0 * std::f64::consts::PI * 0.3).ln() - 0.25 / 0.6;
        assert!((diag_gauss_logpdf(&x, &mean, &lv) - want).abs() < 1e-14);
        // mode value: −½Σlog(2πq)
        let at_mode = diag_gauss_logpdf(&x, &x, &lv);
        assert!((at_mode - -0.5 * (2.0 * std::f64::consts::PI * 0.3).ln()).abs() < 1e-14);
        // doubling the variance at the mode subtracts ½·log 2
        let lv2 = [(0.6f64).ln()];
        assert!((diag_gauss_logpdf(&x, &x, &lv2) - (at_mode - 0.5 * 2.0f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn transition_grad_matches_fd() {
        let model = LinearGaussianSsm;
        let l = layout();
        let mut theta = linear_theta(0.83, 0.06, 0.2, 0.1, 0.7);
        let (x, xn) = ([0.45], [0.61]);
        let mut grad = vec![0.0; l.n_total()];
        let mut mean = [0.0];
        let mut lam = [0.0];
        let lp = transition_logpdf_grad(&model, &l, &theta, &xn, &x, &[], &mut grad, &mut mean, &mut lam, &mut ())
            .unwrap();
        let fd = fd_grad(
            &mut |th: &[f64]| {
                let mut m = [0.0];
                transition_logpdf(&model, &l, th, &xn, &x, &[], &mut m, &mut ()).unwrap()
            },
            &mut theta,
            1e-6,
        );
        for i in 0..l.n_total() {
            assert!((grad[i] - fd[i]).abs() < 1e-8 * (1.0 + fd[i].abs()), "coord {i}: {} vs {}", grad[i], fd[i]);
        }
        // and the value agrees with the direct density
        let mut m = [0.0];
        let direct = transition_logpdf(&model, &l, &theta, &xn, &x, &[], &mut m, &mut ()).unwrap();
        assert!((lp - direct).abs() < 1e-14);
    }

    #[test]
    fn emission_and_initial_grads_match_fd() {
        let model = LinearGaussianSsm;
        let l = layout();
        let mut theta = linear_theta(0.83, 0.06, 0.2, 0.1, 0.7);
        let (y, x) = ([0.3], [0.52]);
        let mut grad = vec![0.0; l.n_total()];
        let mut mean = [0.0];
        emission_logpdf_grad(&model, &l, &theta, &y, &x, &mut grad, &mut mean);
        initial_logpdf_grad(&l, &theta, &x, &mut grad);
        let fd = fd_grad(
            &mut |th: &[f64]| {
                let mut m = [0.0];
                emission_logpdf(&model, &l, th, &y, &x, &mut m) + initial_logpdf(&l, th, &x)
            },
            &mut theta,
            1e-6,
        );
        for i in 0..l.n_total() {
            assert!((grad[i] - fd[i]).abs() < 1e-8 * (1.0 + fd[i].abs()), "coord {i}");
        }
    }

    #[test]
    fn sampling_moments() {
        let model = LinearGaussianSsm;
        let l = layout();
        let theta = linear_theta(0.9, 0.04, 0.25, 0.5, 1.0);
        let mut rng = stream_rng(5, 77);
        let n = 100_000;
        let mut draws = Vec::with_capacity(n);
        let mut out = [0.0];
        for _ in 0..n {
            sample_emission(&model, &l, &theta, &[0.3], &mut rng, &mut out);
            draws.push(out[0]);
        }
        let (m, v) = mean_var(&draws);
        // 4σ/√N band around the emission mean
        assert!((m - 0.3).abs() < 4.0 * 0.5 / (n as f64).sqrt(), "mean {m}");
        assert!((v - 0.25).abs() < 0.01);
        draws.clear();
        for _ in 0..n {
            sample_transition(&model, &l, &theta, &[0.3], &[], &mut rng, &mut out, &mut ()).unwrap();
            draws.push(out[0]);
        }
        let (m, v) = mean_var(&draws);
        assert!((m - 0.27).abs() < 4.0 * 0.2 / (n as f64).sqrt());
        assert!((v - 0.04).abs() < 0.002);
        draws.clear();
        for _ in 0..n {
            sample_initial(&l, &theta, &mut rng, &mut out);
            draws.push(out[0]);
        }
        let (m, v) = mean_var(&draws);
        assert!((m - 0.5).abs() < 4.0 / (n as f64).sqrt());
        assert!((v - 1.0).abs() < 0.02);
    }
}
