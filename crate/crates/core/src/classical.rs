//! The conventional identification pipeline: zero-phase Butterworth filtering
//! of the position signals, central-difference velocities and accelerations,
//! linear least squares on the base-parameter regressor, and Nelder-Mead
//! refinement of the nonlinear friction models on the torque residuals.
//!
//! LuGre and GMS parameters cannot be regressed directly — their internal
//! bristle states are unobserved — so they are fit by simulation-error
//! minimization: the candidate model is rolled forward along the measured
//! velocity and the resulting torque is compared with the residual series.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::base_params::BaseReduction;
use crate::error::{Error, Result};
use crate::friction::{
    self, GmsParams, LuGreParams, SimpleParams, StribeckParams,
};
use crate::neural::{self, Activation, Adam, MlpScratch, MlpSpec};
use crate::plant::{sign0, PlantModel};

/// Condition number above which `ls_identify` flags the regressor.
pub const ILL_CONDITION_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn new(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let spec = FilterSpec { order, cutoff_hz, sample_rate_hz };
        spec.validate()?;
        Ok(spec)
    }

    /// 4th-order, 10 Hz cutoff.
    pub fn standard(sample_rate_hz: f64) -> Result<Self> {
        Self::new(4, 10.0, sample_rate_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > 12 {
            return Err(Error::Config(format!(
                "filter order must be in 1..=12, got {}",
                self.order
            )));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::Config(format!(
                "cutoff must lie in (0, {}), got {}",
                self.sample_rate_hz / 2.0,
                self.cutoff_hz
            )));
        }
        Ok(())
    }
}

/// Digital low-pass Butterworth coefficients (b, a), a monic.
///
/// The analog prototype poles sit on the unit circle at angles
/// π(2k + n + 1)/(2n); they are scaled to the pre-warped cutoff and mapped
/// to the z-plane with the bilinear transform. All roots come in conjugate
/// pairs, so the expanded polynomials are real to rounding.
pub fn butter_lowpass(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    FilterSpec::new(order, cutoff_hz, sample_rate_hz)?;
    let (zpoles, gain) = butter_zpoles(order, cutoff_hz, sample_rate_hz);
    let a: Vec<f64> = poly_from_roots(&zpoles).iter().map(|c| c.re).collect();
    let mut b = vec![0.0; order + 1];
    let mut binom = 1.0;
    for (j, bj) in b.iter_mut().enumerate() {
        *bj = gain * binom;
        binom = binom * (order - j) as f64 / (j + 1) as f64;
    }
    Ok((b, a))
}

fn butter_zpoles(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> (Vec<Complex<f64>>, f64) {
    let wn = 2.0 * cutoff_hz / sample_rate_hz;
    let warped = 4.0 * (std::f64::consts::PI * wn / 2.0).tan();
    let fs2 = Complex::new(4.0, 0.0);
    let mut gain = Complex::new(warped.powi(order as i32), 0.0);
    let mut zpoles = Vec::with_capacity(order);
    for k in 0..order {
        let m = 2.0 * k as f64 + 1.0 - order as f64;
        let theta = std::f64::consts::PI * m / (2.0 * order as f64);
        let p = -Complex::new(theta.cos(), theta.sin()) * warped;
        gain /= fs2 - p;
        zpoles.push((fs2 + p) / (fs2 - p));
    }
    debug_assert!(gain.im.abs() <= 1e-12 * gain.re.abs());
    (zpoles, gain.re)
}

/// Samples over which the filter's edge transient decays to 1e-5 of its
/// initial size — the slowest pole radius governs. Rows this close to either
/// end of a filtered series should not enter a regression.
pub fn transient_margin(spec: &FilterSpec) -> usize {
    let (zpoles, _) = butter_zpoles(spec.order, spec.cutoff_hz, spec.sample_rate_hz);
    let rmax = zpoles.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let decay = ((1e-5f64).ln() / rmax.ln()).ceil() as usize;
    decay.max(3 * spec.order)
}

fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut c = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        c.push(Complex::new(0.0, 0.0));
        for j in (1..c.len()).rev() {
            let prev = c[j - 1];
            c[j] -= r * prev;
        }
    }
    c
}

/// Initial filter state that makes the step response start at its steady
/// value: solve (I − Aᵀ)zᵢ = b[1..] − a[1..]·b[0] with A the companion
/// matrix of a. Scale by the first sample before use.
pub fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    assert_eq!(b.len(), a.len(), "zi needs equal-length coefficient vectors");
    let n = a.len() - 1;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = a[i + 1];
        if i + 1 < n {
            m[(i, i + 1)] = -1.0;
        }
        m[(i, i)] += 1.0;
    }
    let rhs = DVector::from_fn(n, |i, _| b[i + 1] - a[i + 1] * b[0]);
    let zi = m.lu().solve(&rhs).expect("singular zi system");
    zi.as_slice().to_vec()
}

/// Transposed direct-form II recursion with initial state `zi`.
fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Vec<f64> {
    let n = a.len() - 1;
    let mut z = zi.to_vec();
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z[0];
        for j in 0..n - 1 {
            z[j] = b[j + 1] * xi + z[j + 1] - a[j + 1] * yi;
        }
        z[n - 1] = b[n] * xi - a[n] * yi;
        y.push(yi);
    }
    y
}

/// Forward-backward Butterworth filtering: zero phase shift, squared
/// magnitude response. Edges are handled by point-reflected (odd) padding of
/// 3× the filter order, with the filter state initialized to steady state at
/// the first padded sample of each pass.
pub fn zero_phase_filter(signal: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = signal.len();
    if n <= 6 * spec.order {
        return Err(Error::Shape {
            expected: 6 * spec.order + 1,
            got: n,
            context: "zero-phase filter input length",
        });
    }
    let (b, a) = butter_lowpass(spec.order, spec.cutoff_hz, spec.sample_rate_hz)?;
    let padlen = 3 * spec.order;
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in 0..padlen {
        ext.push(2.0 * signal[0] - signal[padlen - i]);
    }
    ext.extend_from_slice(signal);
    for j in 0..padlen {
        ext.push(2.0 * signal[n - 1] - signal[n - 2 - j]);
    }
    let zi = lfilter_zi(&b, &a);
    let scaled: Vec<f64> = zi.iter().map(|z| z * ext[0]).collect();
    let mut y = lfilter(&b, &a, &ext, &scaled);
    y.reverse();
    let scaled: Vec<f64> = zi.iter().map(|z| z * y[0]).collect();
    let mut y = lfilter(&b, &a, &y, &scaled);
    y.reverse();
    y.drain(..padlen);
    y.truncate(n);
    Ok(y)
}

/// Second-order finite differences: central in the interior, one-sided
/// three-point stencils at the ends.
pub fn central_difference(signal: &[f64], dt: f64) -> Vec<f64> {
    let n = signal.len();
    assert!(n >= 3, "central difference needs at least 3 samples");
    assert!(dt > 0.0);
    let h2 = 2.0 * dt;
    let mut d = Vec::with_capacity(n);
    d.push((-3.0 * signal[0] + 4.0 * signal[1] - signal[2]) / h2);
    for t in 1..n - 1 {
        d.push((signal[t + 1] - signal[t - 1]) / h2);
    }
    d.push((3.0 * signal[n - 1] - 4.0 * signal[n - 2] + signal[n - 3]) / h2);
    d
}

/// Filtered positions with differentiated velocities and accelerations,
/// row-major t × n_q throughout.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub t_len: usize,
    pub nq: usize,
    pub dt: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl Kinematics {
    /// Drop `margin` samples from each end (filter transients, one-sided
    /// difference stencils).
    pub fn trim(&self, margin: usize) -> Result<Kinematics> {
        if 2 * margin >= self.t_len {
            return Err(Error::Shape {
                expected: 2 * margin + 1,
                got: self.t_len,
                context: "kinematics trim",
            });
        }
        let keep = |v: &[f64]| v[margin * self.nq..(self.t_len - margin) * self.nq].to_vec();
        Ok(Kinematics {
            t_len: self.t_len - 2 * margin,
            nq: self.nq,
            dt: self.dt,
            q: keep(&self.q),
            qd: keep(&self.qd),
            qdd: keep(&self.qdd),
        })
    }
}

pub fn preprocess(
    q_raw: &[f64],
    t_len: usize,
    nq: usize,
    dt: f64,
    spec: &FilterSpec,
) -> Result<Kinematics> {
    if q_raw.len() != t_len * nq {
        return Err(Error::Shape {
            expected: t_len * nq,
            got: q_raw.len(),
            context: "preprocess position table",
        });
    }
    let mut kin = Kinematics {
        t_len,
        nq,
        dt,
        q: vec![0.0; t_len * nq],
        qd: vec![0.0; t_len * nq],
        qdd: vec![0.0; t_len * nq],
    };
    let mut col = vec![0.0; t_len];
    for j in 0..nq {
        for t in 0..t_len {
            col[t] = q_raw[t * nq + j];
        }
        let qf = zero_phase_filter(&col, spec)?;
        let qd = central_difference(&qf, dt);
        let qdd = central_difference(&qd, dt);
        for t in 0..t_len {
            kin.q[t * nq + j] = qf[t];
            kin.qd[t * nq + j] = qd[t];
            kin.qdd[t * nq + j] = qdd[t];
        }
    }
    Ok(kin)
}

#[derive(Debug, Clone)]
pub struct LsResult {
    /// base-parameter estimate, ordered as `names`
    pub theta: Vec<f64>,
    pub names: Vec<String>,
    /// ‖YΘ̂ − τ‖₂ over the stacked rows
    pub residual: f64,
    /// σ_max/σ_min of the stacked regressor
    pub cond: f64,
    pub ill_conditioned: bool,
}

/// Least squares on the stacked base regressor, solved by SVD.
pub fn ls_identify(
    model: &PlantModel,
    reduction: &BaseReduction,
    kin: &Kinematics,
    tau: &[f64],
) -> Result<LsResult> {
    let nq = model.n_q();
    if kin.nq != nq {
        return Err(Error::Shape { expected: nq, got: kin.nq, context: "ls joint count" });
    }
    let ncols_full = reduction.col_names.len();
    let friction = if ncols_full == model.regressor_cols(true) {
        true
    } else if ncols_full == model.regressor_cols(false) {
        false
    } else {
        return Err(Error::Shape {
            expected: model.regressor_cols(true),
            got: ncols_full,
            context: "ls base reduction",
        });
    };
    let rows = kin.t_len * nq;
    if tau.len() != rows {
        return Err(Error::Shape { expected: rows, got: tau.len(), context: "ls torque table" });
    }
    let p = reduction.independent.len();
    if rows < 10 * p {
        return Err(Error::Config(format!(
            "least squares needs at least {} rows for {p} parameters, got {rows}",
            10 * p
        )));
    }
    let mut mat = DMatrix::zeros(rows, p);
    let mut full = vec![0.0; nq * ncols_full];
    let mut sel = vec![0.0; p];
    for t in 0..kin.t_len {
        let s = t * nq;
        model.regressor(
            &kin.q[s..s + nq],
            &kin.qd[s..s + nq],
            &kin.qdd[s..s + nq],
            friction,
            &mut full,
        );
        for j in 0..nq {
            reduction.select_row(&full[j * ncols_full..(j + 1) * ncols_full], &mut sel);
            for (c, &v) in sel.iter().enumerate() {
                mat[(s + j, c)] = v;
            }
        }
    }
    let rhs = DVector::from_column_slice(tau);
    let svd = mat.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let theta = svd
        .solve(&rhs, smax * 1e-13)
        .map_err(|e| Error::Numerical(format!("ls solve: {e}")))?;
    let residual = (&mat * &theta - &rhs).norm();
    Ok(LsResult {
        theta: theta.as_slice().to_vec(),
        names: reduction.base_names(),
        residual,
        cond,
        ill_conditioned: cond > ILL_CONDITION_THRESHOLD,
    })
}

/// Torque explained by the inertial (non-friction) base parameters alone,
/// row-major t × n_q. Friction entries of `theta_base` are ignored, so the
/// difference to the measured torque is the friction torque estimate.
pub fn rigid_body_torque(
    model: &PlantModel,
    reduction: &BaseReduction,
    theta_base: &[f64],
    kin: &Kinematics,
) -> Vec<f64> {
    let nq = model.n_q();
    let ncols_full = reduction.col_names.len();
    let friction = ncols_full == model.regressor_cols(true);
    let inertial_cols = model.regressor_cols(false);
    let mut full = vec![0.0; nq * ncols_full];
    let mut out = vec![0.0; kin.t_len * nq];
    for t in 0..kin.t_len {
        let s = t * nq;
        model.regressor(
            &kin.q[s..s + nq],
            &kin.qd[s..s + nq],
            &kin.qdd[s..s + nq],
            friction,
            &mut full,
        );
        for j in 0..nq {
            let row = &full[j * ncols_full..(j + 1) * ncols_full];
            out[s + j] = reduction
                .independent
                .iter()
                .enumerate()
                .filter(|(_, &c)| c < inertial_cols)
                .map(|(i, &c)| theta_base[i] * row[c])
                .sum();
        }
    }
    out
}

pub fn friction_residuals(
    model: &PlantModel,
    reduction: &BaseReduction,
    theta_base: &[f64],
    kin: &Kinematics,
    tau: &[f64],
) -> Vec<f64> {
    let rigid = rigid_body_torque(model, reduction, theta_base, kin);
    tau.iter().zip(rigid).map(|(&t, r)| t - r).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    pub diameter_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_evals: 10_000, diameter_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// best objective after each iteration; non-increasing by construction
    pub trace: Vec<f64>,
}

/// Nelder-Mead with the standard coefficients (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5). Box bounds are enforced by clamping every
/// vertex into the box before evaluation, so the result always satisfies
/// them. Terminates when the simplex diameter falls below `diameter_tol` or
/// the evaluation budget is spent.
pub fn simplex_refine<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert!(n >= 1, "empty parameter vector");
    if let Some(bx) = bounds {
        assert_eq!(bx.len(), n, "bounds dimension");
    }
    let clamp = |x: &mut Vec<f64>| {
        if let Some(bx) = bounds {
            for (xi, &(lo, hi)) in x.iter_mut().zip(bx) {
                *xi = xi.clamp(lo, hi);
            }
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &mut Vec<f64>, evals: &mut usize| {
        clamp(x);
        *evals += 1;
        objective(x)
    };

    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals = Vec::with_capacity(n + 1);
    let mut v0 = x0.to_vec();
    let f0 = eval(&mut v0, &mut evals);
    assert!(f0.is_finite(), "objective not finite at the initial point");
    verts.push(v0);
    vals.push(f0);
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = if v[i] != 0.0 { 1.05 * v[i] } else { 0.00025 };
        let f = eval(&mut v, &mut evals);
        verts.push(v);
        vals.push(f);
    }

    let mut trace = Vec::new();
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap_or(std::cmp::Ordering::Equal));
        let verts_next: Vec<Vec<f64>> = order.iter().map(|&i| verts[i].clone()).collect();
        let vals_next: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        verts = verts_next;
        vals = vals_next;
        trace.push(vals[0]);

        let diameter = verts[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&verts[0])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        if diameter < opts.diameter_tol || evals >= opts.max_evals {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| verts[..n].iter().map(|v| v[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = verts[n].clone();
        let mut xr: Vec<f64> =
            centroid.iter().zip(&worst).map(|(c, w)| c + (c - w)).collect();
        let fr = eval(&mut xr, &mut evals);

        if fr < vals[0] {
            let mut xe: Vec<f64> =
                centroid.iter().zip(&worst).map(|(c, w)| c + 2.0 * (c - w)).collect();
            let fe = eval(&mut xe, &mut evals);
            if fe < fr {
                verts[n] = xe;
                vals[n] = fe;
            } else {
                verts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            verts[n] = xr;
            vals[n] = fr;
        } else {
            let outside = fr < vals[n];
            let toward: &[f64] = if outside { &xr } else { &worst };
            let mut xc: Vec<f64> =
                centroid.iter().zip(toward).map(|(c, t)| c + 0.5 * (t - c)).collect();
            let fc = eval(&mut xc, &mut evals);
            let reference = if outside { fr } else { vals[n] };
            if fc <= reference {
                verts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let mut v: Vec<f64> = verts[0]
                        .iter()
                        .zip(&verts[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    vals[i] = eval(&mut v, &mut evals);
                    verts[i] = v;
                }
            }
        }
    }
    SimplexResult { x: verts[0].clone(), value: vals[0], evals, trace }
}

/// Two-column least squares of τ on [sign(v), v] — the linear friction model.
/// Its solution seeds the nonlinear fits.
pub fn ls_coulomb_viscous(v: &[f64], tau_f: &[f64]) -> SimpleParams {
    assert_eq!(v.len(), tau_f.len());
    let (mut ss, mut sv, mut vv, mut st, mut vt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&vi, &ti) in v.iter().zip(tau_f) {
        let s = sign0(vi);
        ss += s * s;
        sv += s * vi;
        vv += vi * vi;
        st += s * ti;
        vt += vi * ti;
    }
    let det = ss * vv - sv * sv;
    if det.abs() < 1e-12 * (ss * vv).max(1e-300) {
        // degenerate excitation: fall back to viscous-only
        return SimpleParams { coulomb: 0.0, viscous: if vv > 0.0 { vt / vv } else { 0.0 } };
    }
    SimpleParams {
        coulomb: (st * vv - vt * sv) / det,
        viscous: (vt * ss - st * sv) / det,
    }
}

fn mse(pred: &[f64], data: &[f64]) -> f64 {
    pred.iter()
        .zip(data)
        .map(|(p, d)| (p - d) * (p - d))
        .sum::<f64>()
        / data.len() as f64
}

/// Restarted simplex: Nelder-Mead converges slowly in 5-6 dimensions, so the
/// fits below re-initialize the simplex at the incumbent until the objective
/// stops moving.
fn refine_rounds<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    x0: Vec<f64>,
    bounds: &[(f64, f64)],
    rounds: usize,
) -> (Vec<f64>, f64) {
    let opts = SimplexOptions::default();
    let mut x = x0;
    let mut best = f64::INFINITY;
    for _ in 0..rounds {
        let r = simplex_refine(&mut objective, &x, Some(bounds), &opts);
        let improved = best - r.value;
        x = r.x;
        best = r.value;
        if improved.abs() <= 1e-15 * best.abs().max(1.0) {
            break;
        }
    }
    (x, best)
}

/// Fit the 5-parameter Stribeck curve to (velocity, friction torque) samples.
/// With no initial guess the Coulomb/viscous least-squares solution seeds the
/// search. Returns the parameters and the final mean squared error.
pub fn fit_stribeck(
    v: &[f64],
    tau_f: &[f64],
    init: Option<&StribeckParams>,
) -> Result<(StribeckParams, f64)> {
    if v.len() != tau_f.len() || v.is_empty() {
        return Err(Error::Shape { expected: v.len().max(1), got: tau_f.len(), context: "stribeck fit data" });
    }
    // x = [F_c, F_s − F_c, v_s, δ, F_v]; the excess keeps F_s ≥ F_c for free
    let x0 = match init {
        Some(p) => vec![p.coulomb, (p.stiction - p.coulomb).max(0.0), p.vs, p.delta, p.viscous],
        None => {
            let ls = ls_coulomb_viscous(v, tau_f);
            let fc = ls.coulomb.max(1e-3);
            vec![fc, 0.5 * fc, 0.1, 1.0, ls.viscous.max(0.0)]
        }
    };
    let bounds = [
        (1e-6, 1e3),
        (0.0, 1e3),
        (1e-4, 1e2),
        (0.25, 8.0),
        (0.0, 1e3),
    ];
    let mut pred = vec![0.0; v.len()];
    let objective = |x: &[f64]| {
        let p = stribeck_from(x);
        for (o, &vi) in pred.iter_mut().zip(v) {
            *o = friction::stribeck_torque(vi, &p);
        }
        mse(&pred, tau_f)
    };
    let (x, value) = refine_rounds(objective, x0, &bounds, 4);
    Ok((stribeck_from(&x), value))
}

fn stribeck_from(x: &[f64]) -> StribeckParams {
    StribeckParams {
        coulomb: x[0],
        stiction: x[0] + x[1],
        vs: x[2],
        delta: x[3],
        viscous: x[4],
    }
}

/// LuGre torque along a sampled velocity trajectory, velocity held constant
/// over each step. The bristle state starts relaxed (z = 0) and integrates
/// with RK4 sub-steps short enough for the stiffest rate σ₀|v|/g(v).
pub fn lugre_sim_torque(p: &LuGreParams, v: &[f64], dt: f64) -> Vec<f64> {
    let mut z = 0.0;
    let mut out = Vec::with_capacity(v.len());
    for &vt in v {
        out.push(friction::lugre_torque(vt, z, p));
        let level = friction::stribeck_level(p.coulomb, p.stiction, p.vs, p.delta, vt);
        let rate = p.sigma0 * vt.abs() / level;
        let n_sub = (dt * rate / 0.2).ceil().clamp(1.0, 1000.0) as usize;
        let h = dt / n_sub as f64;
        for _ in 0..n_sub {
            let k1 = friction::lugre_zdot(vt, z, p);
            let k2 = friction::lugre_zdot(vt, z + 0.5 * h * k1, p);
            let k3 = friction::lugre_zdot(vt, z + 0.5 * h * k2, p);
            let k4 = friction::lugre_zdot(vt, z + h * k3, p);
            z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    out
}

/// Fit LuGre by simulation-error minimization over
/// [ln σ₀, σ₁, σ₂, F_c, F_s − F_c, v_s]; δ stays at its initial value. σ₀ is
/// searched in log scale because it spans decades.
pub fn fit_lugre(
    v: &[f64],
    tau_f: &[f64],
    dt: f64,
    init: &LuGreParams,
) -> Result<(LuGreParams, f64)> {
    if v.len() != tau_f.len() || v.is_empty() {
        return Err(Error::Shape { expected: v.len().max(1), got: tau_f.len(), context: "lugre fit data" });
    }
    let delta = init.delta;
    let x0 = vec![
        init.sigma0.max(1e-3).ln(),
        init.sigma1,
        init.sigma2,
        init.coulomb,
        (init.stiction - init.coulomb).max(0.0),
        init.vs,
    ];
    let bounds = [
        (-3.0, 12.0),
        (0.0, 1e3),
        (0.0, 1e3),
        (1e-6, 1e3),
        (0.0, 1e3),
        (1e-4, 1e2),
    ];
    let from = |x: &[f64]| LuGreParams {
        sigma0: x[0].exp(),
        sigma1: x[1],
        sigma2: x[2],
        coulomb: x[3],
        stiction: x[3] + x[4],
        vs: x[5],
        delta,
    };
    let objective = |x: &[f64]| mse(&lugre_sim_torque(&from(x), v, dt), tau_f);
    let (x, value) = refine_rounds(objective, x0, &bounds, 3);
    Ok((from(&x), value))
}

/// GMS torque along a sampled velocity trajectory; the element states start
/// relaxed. The reported torque at each sample uses the state entering the
/// step, matching `lugre_sim_torque`.
pub fn gms_sim_torque(p: &GmsParams, v: &[f64], dt: f64) -> Vec<f64> {
    let mut st = p.init_state();
    let mut out = Vec::with_capacity(v.len());
    for &vt in v {
        let elastic: f64 = st.z.iter().zip(&p.stiffness).map(|(z, k)| k * z).sum();
        out.push(elastic + p.viscous * vt);
        friction::gms_step(vt, &mut st, p, dt);
    }
    out
}

/// Fit GMS by simulation-error minimization. Individual element stiffnesses
/// and weights are barely identifiable from torque data alone, so the search
/// keeps the initial weights and scales all stiffnesses together:
/// [ln k-scale, ln C, F_c, F_s − F_c, v_s, F_v].
pub fn fit_gms(
    v: &[f64],
    tau_f: &[f64],
    dt: f64,
    init: &GmsParams,
) -> Result<(GmsParams, f64)> {
    if v.len() != tau_f.len() || v.is_empty() {
        return Err(Error::Shape { expected: v.len().max(1), got: tau_f.len(), context: "gms fit data" });
    }
    let base = init.clone();
    let x0 = vec![
        0.0,
        init.attraction.max(1e-2).ln(),
        init.coulomb,
        (init.stiction - init.coulomb).max(0.0),
        init.vs,
        init.viscous,
    ];
    let bounds = [
        (-5.0, 5.0),
        (-4.6, 9.3),
        (1e-6, 1e3),
        (0.0, 1e3),
        (1e-4, 1e2),
        (0.0, 1e3),
    ];
    let from = |x: &[f64]| {
        let scale = x[0].exp();
        GmsParams {
            stiffness: base.stiffness.iter().map(|k| k * scale).collect(),
            weights: base.weights.clone(),
            attraction: x[1].exp(),
            coulomb: x[2],
            stiction: x[2] + x[3],
            vs: x[4],
            delta: base.delta,
            viscous: x[5],
        }
    };
    let objective = |x: &[f64]| mse(&gms_sim_torque(&from(x), v, dt), tau_f);
    let (x, value) = refine_rounds(objective, x0, &bounds, 3);
    Ok((from(&x), value))
}

/// Static neural friction curve τ_f = NN(v), input and target standardized
/// by their root-mean-square scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticNn {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub v_scale: f64,
    pub tau_scale: f64,
}

impl StaticNn {
    pub fn torque(&self, v: f64, scratch: &mut MlpScratch) -> f64 {
        neural::forward(&self.spec, &self.params, &[v / self.v_scale], scratch);
        scratch.output()[0] * self.tau_scale
    }
}

/// Train the static net with full-batch Adam on the mean squared error.
/// Returns the model and the final MSE in physical torque units.
pub fn fit_static_nn(
    v: &[f64],
    tau_f: &[f64],
    hidden: &[usize],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(StaticNn, f64)> {
    if v.len() != tau_f.len() || v.is_empty() {
        return Err(Error::Shape { expected: v.len().max(1), got: tau_f.len(), context: "static nn fit data" });
    }
    let rms = |xs: &[f64]| {
        (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64)
            .sqrt()
            .max(1e-12)
    };
    let v_scale = rms(v);
    let tau_scale = rms(tau_f);
    let spec = MlpSpec::new(1, hidden, 1, Activation::Tanh);
    let mut params = spec.init_params(seed);
    let mut grad = vec![0.0; spec.n_params()];
    let mut scratch = MlpScratch::new(&spec);
    let mut adam = Adam::new(spec.n_params(), learning_rate);
    let inv_n = 1.0 / v.len() as f64;
    let mut last_loss = f64::INFINITY;
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (&vi, &ti) in v.iter().zip(tau_f) {
            neural::forward(&spec, &params, &[vi / v_scale], &mut scratch);
            let e = scratch.output()[0] - ti / tau_scale;
            loss += e * e * inv_n;
            neural::backward(&spec, &params, &[2.0 * e * inv_n], &mut scratch, &mut grad, None);
        }
        adam.step(&mut params, &grad)?;
        last_loss = loss;
    }
    let model = StaticNn { spec, params, v_scale, tau_scale };
    Ok((model, last_loss * tau_scale * tau_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_params::reduce_regressor;
    use crate::plant::PlantKind;
    use crate::util::{randn, stream_rng};
    use approx::assert_abs_diff_eq;

    fn pendulum_model() -> PlantModel {
        PlantModel { kind: PlantKind::Pendulum, l1: 0.3, gravity: 9.81 }
    }

    // Reference values below were frozen from an independent implementation
    // of the same textbook designs (bilinear-transform Butterworth, odd-
    // reflection zero-phase filtering) to pin this one down.

    const B4: [f64; 5] = [
        0.00018321602336961,
        0.00073286409347844,
        0.00109929614021766,
        0.00073286409347844,
        0.00018321602336961,
    ];
    const A4: [f64; 5] = [
        1.0,
        -3.344067837711873,
        4.238863950884063,
        -2.4093428565863175,
        0.51747819978804,
    ];

    #[test]
    fn butterworth_matches_reference_coefficients() {
        let (b, a) = butter_lowpass(4, 10.0, 250.0).unwrap();
        for (x, r) in b.iter().zip(B4) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-12);
        }
        for (x, r) in a.iter().zip(A4) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-12);
        }
        let (b2, a2) = butter_lowpass(2, 25.0, 250.0).unwrap();
        let b2_ref = [0.0674552738890719, 0.1349105477781438, 0.0674552738890719];
        let a2_ref = [1.0, -1.1429805025399011, 0.41280159809618877];
        for (x, r) in b2.iter().zip(b2_ref) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-13);
        }
        for (x, r) in a2.iter().zip(a2_ref) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-13);
        }
    }

    #[test]
    fn steady_state_initializer_matches_reference() {
        let (b, a) = butter_lowpass(4, 10.0, 250.0).unwrap();
        let zi = lfilter_zi(&b, &a);
        let zi_ref = [
            0.9998167839769568,
            -2.3449839178294862,
            1.8927807369157428,
            -0.5172949837648392,
        ];
        for (x, r) in zi.iter().zip(zi_ref) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-10);
        }
        let (b2, a2) = butter_lowpass(2, 25.0, 250.0).unwrap();
        let zi2 = lfilter_zi(&b2, &a2);
        let zi2_ref = [0.9325447261109279, -0.34534632420711675];
        for (x, r) in zi2.iter().zip(zi2_ref) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-10);
        }
    }

    fn mixed_test_signal(n: usize, fs: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * 3.0 * t).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 40.0 * t).cos()
                    + 0.25
            })
            .collect()
    }

    #[test]
    fn zero_phase_filter_matches_reference() {
        let x = mixed_test_signal(60, 250.0);
        let spec = FilterSpec::standard(250.0).unwrap();
        let y = zero_phase_filter(&x, &spec).unwrap();
        let head = [
            0.768880899482576,
            0.7607846027973807,
            0.7531454148781151,
            0.7479634497164829,
        ];
        let mid = [
            1.1167042139247731,
            1.0706996041841486,
            1.0200948843874245,
            0.9655912387656919,
        ];
        let tail = [
            -0.8779647276786795,
            -0.9584521012542361,
            -1.0328873471337734,
            -1.0998863335815092,
        ];
        for (x, r) in y[..4].iter().zip(head) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-12);
        }
        for (x, r) in y[28..32].iter().zip(mid) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-12);
        }
        for (x, r) in y[56..].iter().zip(tail) {
            assert_abs_diff_eq!(x, &r, epsilon = 1e-12);
        }
    }

    #[test]
    fn magnitude_response_matches_reference() {
        let (b, a) = butter_lowpass(4, 10.0, 250.0).unwrap();
        let mag = |f_hz: f64| {
            let w = 2.0 * std::f64::consts::PI * f_hz / 250.0;
            let z = Complex::new(w.cos(), -w.sin());
            let eval = |c: &[f64]| {
                let mut acc = Complex::new(0.0, 0.0);
                for &ci in c.iter().rev() {
                    acc = acc * z + Complex::new(ci, 0.0);
                }
                acc
            };
            (eval(&b) / eval(&a)).norm()
        };
        assert_abs_diff_eq!(mag(3.0), 0.9999684346940089, epsilon = 1e-12);
        assert_abs_diff_eq!(mag(10.0), 0.707106781186364, epsilon = 1e-12);
        assert_abs_diff_eq!(mag(40.0), 0.00278830383782752, epsilon = 1e-12);
    }

    #[test]
    fn constant_signal_passes_unchanged() {
        let x = vec![0.7; 200];
        let spec = FilterSpec::standard(250.0).unwrap();
        let y = zero_phase_filter(&x, &spec).unwrap();
        for v in y {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn in_band_sinusoid_keeps_amplitude_and_phase() {
        let fs = 250.0;
        let n = 1500;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1.0 * i as f64 / fs).sin())
            .collect();
        let spec = FilterSpec::standard(fs).unwrap();
        let y = zero_phase_filter(&x, &spec).unwrap();
        let core = 200..n - 200;
        let rms = |s: &[f64]| {
            (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
        };
        let ratio = rms(&y[core.clone()]) / rms(&x[core.clone()]);
        assert!((ratio - 1.0).abs() < 0.01, "amplitude ratio {ratio}");
        // cross-correlation over ±20 lags peaks at zero: no phase shift
        let mut best = (0i64, f64::NEG_INFINITY);
        for lag in -20i64..=20 {
            let mut acc = 0.0;
            for i in core.clone() {
                acc += x[i] * y[(i as i64 + lag) as usize];
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert_eq!(best.0, 0, "cross-correlation peak at lag {}", best.0);
    }

    #[test]
    fn stopband_sinusoid_is_suppressed() {
        let fs = 250.0;
        let n = 1500;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 50.0 * i as f64 / fs).sin())
            .collect();
        let spec = FilterSpec::standard(fs).unwrap();
        let y = zero_phase_filter(&x, &spec).unwrap();
        let rms = |s: &[f64]| {
            (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
        };
        assert!(rms(&y[100..n - 100]) / rms(&x[100..n - 100]) < 0.01);
    }

    #[test]
    fn short_signal_is_rejected() {
        let spec = FilterSpec::standard(250.0).unwrap();
        let x = vec![0.0; 24];
        match zero_phase_filter(&x, &spec) {
            Err(Error::Shape { expected, got, .. }) => {
                assert_eq!(expected, 25);
                assert_eq!(got, 24);
            }
            other => panic!("expected a shape error, got {other:?}"),
        }
    }

    #[test]
    fn derivative_is_exact_on_ramp_and_zero_on_constant() {
        let dt = 0.01;
        let ramp: Vec<f64> = (0..50).map(|i| 0.37 * i as f64 * dt).collect();
        for d in central_difference(&ramp, dt) {
            assert_abs_diff_eq!(d, 0.37, epsilon = 1e-12);
        }
        let flat = vec![2.5; 50];
        for d in central_difference(&flat, dt) {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn derivative_error_bound_on_sinusoid() {
        let dt = 0.004;
        let w = 2.0 * std::f64::consts::PI * 1.3;
        let s: Vec<f64> = (0..2000).map(|i| (w * i as f64 * dt).sin()).collect();
        let d = central_difference(&s, dt);
        let bound = w.powi(3) * dt * dt / 6.0 * 1.1;
        for (i, di) in d.iter().enumerate().take(1999).skip(1) {
            let truth = w * (w * i as f64 * dt).cos();
            assert!(
                (di - truth).abs() <= bound,
                "interior error {} exceeds {bound}",
                (di - truth).abs()
            );
        }
    }

    #[test]
    fn filtering_and_differentiation_commute() {
        let fs = 250.0;
        let n = 2000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * 0.7 * t).sin()
                    + 0.4 * (2.0 * std::f64::consts::PI * 2.3 * t + 0.3).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * 4.1 * t + 1.1).sin()
            })
            .collect();
        let spec = FilterSpec::standard(fs).unwrap();
        let a = central_difference(&zero_phase_filter(&x, &spec).unwrap(), 1.0 / fs);
        let b = zero_phase_filter(&central_difference(&x, 1.0 / fs), &spec).unwrap();
        // the two orders only differ in edge handling, which decays at the
        // slowest pole radius — compare beyond that transient
        let m = 2 * transient_margin(&spec);
        for i in m..n - m {
            assert!((a[i] - b[i]).abs() < 1e-6, "mismatch {} at {i}", (a[i] - b[i]).abs());
        }
    }

    /// Analytic pendulum trajectory with exact derivatives and consistent
    /// torques; `theta_full` appends Coulomb/viscous friction.
    fn pendulum_rows(
        t_len: usize,
        dt: f64,
        theta_full: &[f64],
    ) -> (PlantModel, Vec<f64>, Kinematics, Vec<f64>) {
        let model = pendulum_model();
        let freqs = [0.5, 1.1, 1.9];
        let amps = [0.7, 0.35, 0.15];
        let mut kin = Kinematics {
            t_len,
            nq: 1,
            dt,
            q: vec![0.0; t_len],
            qd: vec![0.0; t_len],
            qdd: vec![0.0; t_len],
        };
        for t in 0..t_len {
            let ti = t as f64 * dt;
            for (f, a) in freqs.iter().zip(amps) {
                let w = 2.0 * std::f64::consts::PI * f;
                kin.q[t] += a * (w * ti).sin();
                kin.qd[t] += a * w * (w * ti).cos();
                kin.qdd[t] -= a * w * w * (w * ti).sin();
            }
        }
        let ncols = model.regressor_cols(true);
        let mut row = vec![0.0; ncols];
        let tau: Vec<f64> = (0..t_len)
            .map(|t| {
                model.regressor(
                    &kin.q[t..t + 1],
                    &kin.qd[t..t + 1],
                    &kin.qdd[t..t + 1],
                    true,
                    &mut row,
                );
                row.iter().zip(theta_full).map(|(r, th)| r * th).sum()
            })
            .collect();
        (model, theta_full.to_vec(), kin, tau)
    }

    const PENDULUM_THETA: [f64; 6] = [0.0795, 0.275, -0.044, 1.1, 0.3, 0.5];

    #[test]
    fn ls_is_exact_on_analytic_data() {
        let (model, theta_full, kin, tau) = pendulum_rows(2000, 0.004, &PENDULUM_THETA);
        let red = reduce_regressor(&model, true, 200, 7, 1e-10).unwrap();
        let expected = red.fold_theta(&theta_full);
        let r = ls_identify(&model, &red, &kin, &tau).unwrap();
        assert!(!r.ill_conditioned);
        assert!(r.cond >= 1.0);
        assert!(r.residual < 1e-9, "residual {}", r.residual);
        for (est, tru) in r.theta.iter().zip(&expected) {
            assert!((est - tru).abs() < 1e-9 * tru.abs().max(1.0));
        }
    }

    #[test]
    fn ls_recovers_truth_through_the_preprocessing_chain() {
        let dt = 0.004;
        let (model, theta_full, exact, tau) = pendulum_rows(7500, dt, &PENDULUM_THETA);
        let spec = FilterSpec::standard(1.0 / dt).unwrap();
        let margin = transient_margin(&spec);
        let kin = preprocess(&exact.q, exact.t_len, 1, dt, &spec)
            .unwrap()
            .trim(margin)
            .unwrap();
        let tau = tau[margin..exact.t_len - margin].to_vec();
        let red = reduce_regressor(&model, true, 200, 7, 1e-10).unwrap();
        let expected = red.fold_theta(&theta_full);
        let r = ls_identify(&model, &red, &kin, &tau).unwrap();
        for ((est, tru), name) in r.theta.iter().zip(&expected).zip(&r.names) {
            let rel = (est - tru).abs() / tru.abs();
            // Coulomb suffers sign flips where the differentiated velocity
            // crosses zero a fraction of a sample early or late; the
            // inertial lumps are untouched by that
            let tol = if name.starts_with("nu_c") { 5e-3 } else { 1e-3 };
            assert!(rel < tol, "{name}: {est} vs {tru} ({rel:.2e})");
        }
    }

    #[test]
    fn ls_error_shrinks_with_the_square_root_of_rows() {
        let (model, _, kin, tau) = pendulum_rows(2000, 0.004, &PENDULUM_THETA);
        let red = reduce_regressor(&model, true, 200, 7, 1e-10).unwrap();
        let expected = red.fold_theta(&PENDULUM_THETA);
        let noisy_err = |reps: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            // `reps` passes over the same trajectory with fresh noise
            let big = Kinematics {
                t_len: kin.t_len * reps,
                nq: 1,
                dt: kin.dt,
                q: kin.q.repeat(reps),
                qd: kin.qd.repeat(reps),
                qdd: kin.qdd.repeat(reps),
            };
            let tau_n: Vec<f64> = (0..reps)
                .flat_map(|_| tau.iter().map(|&t| t + 0.05 * randn(rng)).collect::<Vec<_>>())
                .collect();
            let r = ls_identify(&model, &red, &big, &tau_n).unwrap();
            r.theta
                .iter()
                .zip(&expected)
                .map(|(e, t)| (e - t) * (e - t))
                .sum::<f64>()
                .sqrt()
        };
        let mut rng = stream_rng(42, 0);
        let mut small = 0.0;
        let mut large = 0.0;
        for _ in 0..8 {
            small += noisy_err(1, &mut rng);
            large += noisy_err(16, &mut rng);
        }
        let ratio = small / large;
        assert!(
            (2.8..5.7).contains(&ratio),
            "16x rows should shrink the error ~4x, got {ratio:.2}"
        );
    }

    #[test]
    fn one_directional_motion_is_flagged_as_ill_conditioned() {
        let model = pendulum_model();
        let red = reduce_regressor(&model, true, 200, 7, 1e-10).unwrap();
        let t_len = 400;
        let dt = 0.004;
        // uniform ramp: q̈ ≡ 0 and the two friction columns are collinear
        let kin = Kinematics {
            t_len,
            nq: 1,
            dt,
            q: (0..t_len).map(|t| 0.3 + 0.4 * t as f64 * dt).collect(),
            qd: vec![0.4; t_len],
            qdd: vec![0.0; t_len],
        };
        let ncols = model.regressor_cols(true);
        let mut row = vec![0.0; ncols];
        let tau: Vec<f64> = (0..t_len)
            .map(|t| {
                model.regressor(&kin.q[t..t + 1], &kin.qd[t..t + 1], &kin.qdd[t..t + 1], true, &mut row);
                row.iter().zip(PENDULUM_THETA).map(|(r, th)| r * th).sum()
            })
            .collect();
        let r = ls_identify(&model, &red, &kin, &tau).unwrap();
        assert!(r.ill_conditioned, "cond = {}", r.cond);
        assert!(r.theta.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn simplex_locates_a_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2) + 0.5;
        let r = simplex_refine(f, &[4.0, 4.0], None, &SimplexOptions::default());
        assert!((r.x[0] - 1.3).abs() < 1e-6);
        assert!((r.x[1] + 0.7).abs() < 1e-6);
        assert!((r.value - 0.5).abs() < 1e-10);
        assert!(r.evals <= 10_000);
    }

    #[test]
    fn simplex_trace_never_increases_and_respects_bounds() {
        let f = |x: &[f64]| (x[0] - 1.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2) + 0.5;
        let bounds = [(-1.0, 0.5), (-1.0, 0.5)];
        let r = simplex_refine(f, &[-0.9, 0.4], Some(&bounds), &SimplexOptions::default());
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0], "best value increased: {} -> {}", w[0], w[1]);
        }
        // the unconstrained minimum (1.3, -0.7) clamps to the box edge in x
        assert!((r.x[0] - 0.5).abs() < 1e-6, "x = {:?}", r.x);
        assert!((r.x[1] + 0.7).abs() < 1e-6, "x = {:?}", r.x);
    }

    #[test]
    fn stribeck_fit_recovers_the_curve() {
        let truth = StribeckParams {
            coulomb: 0.4,
            stiction: 0.6,
            vs: 0.12,
            delta: 2.0,
            viscous: 0.55,
        };
        let v: Vec<f64> = (0..501).map(|i| -2.0 + 0.008 * i as f64).collect();
        let tau: Vec<f64> = v.iter().map(|&vi| friction::stribeck_torque(vi, &truth)).collect();
        let (fit, err) = fit_stribeck(&v, &tau, None).unwrap();
        assert!(err < 1e-10, "final mse {err}");
        for (est, tru) in [
            (fit.coulomb, truth.coulomb),
            (fit.stiction, truth.stiction),
            (fit.vs, truth.vs),
            (fit.delta, truth.delta),
            (fit.viscous, truth.viscous),
        ] {
            assert!(
                (est - tru).abs() < 0.01 * tru,
                "{est} should be within 1% of {tru}"
            );
        }
    }

    #[test]
    fn lugre_fit_matches_the_simulated_torque() {
        let truth = LuGreParams {
            sigma0: 80.0,
            sigma1: 2.0,
            sigma2: 0.5,
            coulomb: 0.4,
            stiction: 0.6,
            vs: 0.15,
            delta: 2.0,
        };
        let dt = 0.004;
        let v: Vec<f64> = (0..1250)
            .map(|i| 1.2 * (2.0 * std::f64::consts::PI * 0.8 * i as f64 * dt).sin())
            .collect();
        let tau = lugre_sim_torque(&truth, &v, dt);
        let init = LuGreParams {
            sigma0: 130.0,
            sigma1: 1.0,
            sigma2: 0.7,
            coulomb: 0.52,
            stiction: 0.7,
            vs: 0.1,
            delta: 2.0,
        };
        let init_err = mse(&lugre_sim_torque(&init, &v, dt), &tau);
        let (fit, err) = fit_lugre(&v, &tau, dt, &init).unwrap();
        assert!(err < 1e-6, "final mse {err}");
        assert!(err < init_err / 1000.0, "{err} vs initial {init_err}");
        assert!((fit.sigma0 - truth.sigma0).abs() < 0.15 * truth.sigma0);
        assert!((fit.coulomb - truth.coulomb).abs() < 0.05 * truth.coulomb);
    }

    #[test]
    fn gms_fit_improves_on_its_initialization() {
        let truth = GmsParams::new(GmsParams {
            stiffness: vec![60.0, 110.0, 180.0, 300.0],
            weights: vec![0.25; 4],
            attraction: 12.0,
            coulomb: 0.4,
            stiction: 0.6,
            vs: 0.15,
            delta: 2.0,
            viscous: 0.5,
        })
        .unwrap();
        let dt = 0.004;
        let v: Vec<f64> = (0..1000)
            .map(|i| 0.9 * (2.0 * std::f64::consts::PI * 0.7 * i as f64 * dt).sin())
            .collect();
        let tau = gms_sim_torque(&truth, &v, dt);
        let mut init = truth.clone();
        init.stiffness.iter_mut().for_each(|k| *k *= 2.2);
        init.coulomb = 0.3;
        init.stiction = 0.75;
        init.viscous = 0.65;
        let init_err = mse(&gms_sim_torque(&init, &v, dt), &tau);
        let (_, err) = fit_gms(&v, &tau, dt, &init).unwrap();
        assert!(err < init_err / 50.0, "{err} vs initial {init_err}");
    }

    #[test]
    fn static_nn_learns_a_friction_curve() {
        let truth = StribeckParams {
            coulomb: 0.4,
            stiction: 0.6,
            vs: 0.12,
            delta: 2.0,
            viscous: 0.55,
        };
        let v: Vec<f64> = (0..501).map(|i| -2.0 + 0.008 * i as f64).collect();
        let tau: Vec<f64> = v.iter().map(|&vi| friction::stribeck_torque(vi, &truth)).collect();
        let (model, err) = fit_static_nn(&v, &tau, &[24, 24], 5000, 0.02, 11).unwrap();
        let peak = tau.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(err.sqrt() < 0.02 * peak, "rms {} vs peak {peak}", err.sqrt());
        let mut scratch = MlpScratch::new(&model.spec);
        let pred = model.torque(1.0, &mut scratch);
        let want = friction::stribeck_torque(1.0, &truth);
        assert!((pred - want).abs() < 0.05 * want.abs());
    }

    #[test]
    fn friction_residuals_isolate_the_friction_torque() {
        let (model, theta_full, kin, tau) = pendulum_rows(1200, 0.004, &PENDULUM_THETA);
        let red = reduce_regressor(&model, true, 200, 7, 1e-10).unwrap();
        let theta_base = red.fold_theta(&theta_full);
        let resid = friction_residuals(&model, &red, &theta_base, &kin, &tau);
        for (t, r) in resid.iter().enumerate() {
            let want = 0.3 * sign0(kin.qd[t]) + 0.5 * kin.qd[t];
            assert_abs_diff_eq!(r, &want, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_bad_filter_specs() {
        assert!(FilterSpec::new(0, 10.0, 250.0).is_err());
        assert!(FilterSpec::new(4, 0.0, 250.0).is_err());
        assert!(FilterSpec::new(4, 125.0, 250.0).is_err());
        assert!(FilterSpec::new(4, 10.0, -1.0).is_err());
    }
}
