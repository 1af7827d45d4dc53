//! Excitation-trajectory design. Joint references are finite Fourier series
//! whose coefficients are drawn at random, projected exactly onto the
//! boundary conditions (q = q̇ = q̈ = 0 at both ends, which are affine in the
//! coefficients), and then shrunk toward zero until every box constraint
//! holds — the trajectory is linear in its coefficients, so one exact
//! scaling suffices and zero is always strictly feasible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{randn_fill, stream_rng};

/// q_j(t) = Σ_k (a_jk/(kω)) sin(kωt) − (b_jk/(kω)) cos(kωt); the
/// coefficients carry rad/s so that q̇ mixes them with unit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCoeffs {
    pub nq: usize,
    pub k_terms: usize,
    /// base frequency ω (rad/s)
    pub omega: f64,
    /// duration (s)
    pub duration: f64,
    /// nq × k_terms, row-major
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TrajectoryCoeffs {
    pub fn zeros(nq: usize, k_terms: usize, omega: f64, duration: f64) -> Self {
        TrajectoryCoeffs {
            nq,
            k_terms,
            omega,
            duration,
            a: vec![0.0; nq * k_terms],
            b: vec![0.0; nq * k_terms],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nq == 0 || self.k_terms == 0 {
            return Err(Error::Config("trajectory needs at least one joint and one term".into()));
        }
        if !(self.omega > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config(format!(
                "base frequency and duration must be positive, got {} and {}",
                self.omega, self.duration
            )));
        }
        let n = self.nq * self.k_terms;
        if self.a.len() != n || self.b.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.a.len().min(self.b.len()),
                context: "trajectory coefficient table",
            });
        }
        if !self.a.iter().chain(&self.b).all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite trajectory coefficient".into()));
        }
        Ok(())
    }
}

/// Per-joint box bounds plus an optional symmetric jerk bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    pub q: Vec<(f64, f64)>,
    pub qd: Vec<(f64, f64)>,
    pub qdd: Vec<(f64, f64)>,
    pub jerk: Option<f64>,
}

impl MotionLimits {
    pub fn validate(&self) -> Result<()> {
        let nq = self.q.len();
        if nq == 0 || self.qd.len() != nq || self.qdd.len() != nq {
            return Err(Error::Config("motion limits need matching per-joint bounds".into()));
        }
        for &(lo, hi) in self.q.iter().chain(&self.qd).chain(&self.qdd) {
            if !(lo < hi) {
                return Err(Error::Config(format!("bound ({lo}, {hi}) is not an interval")));
            }
            if !(lo < 0.0 && 0.0 < hi) {
                return Err(Error::DoeInfeasible(format!(
                    "rest pose must be strictly feasible: 0 ∉ ({lo}, {hi})"
                )));
            }
        }
        if let Some(j) = self.jerk {
            if !(j > 0.0) {
                return Err(Error::DoeInfeasible(format!("jerk bound must be positive, got {j}")));
            }
        }
        Ok(())
    }

    pub fn nq(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeConfig {
    pub k_terms: usize,
    pub omega: f64,
    pub duration: f64,
    /// standard deviation of the raw coefficient draw (rad/s)
    pub amplitude: f64,
    /// post-shrink safety factor, strictly inside (0, 1]
    pub margin: f64,
    pub max_attempts: usize,
}

impl Default for DoeConfig {
    fn default() -> Self {
        DoeConfig {
            k_terms: 20,
            omega: 2.0 * std::f64::consts::PI / 5.0,
            duration: 31.4,
            amplitude: 1.0,
            margin: 0.98,
            max_attempts: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    /// factor applied to the raw projected draw (1 if already feasible)
    pub scale: f64,
    pub attempts: usize,
}

/// (q, q̇, q̈, q⃛) of all joints at time t.
pub fn evaluate_trajectory(
    c: &TrajectoryCoeffs,
    t: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut q = vec![0.0; c.nq];
    let mut qd = vec![0.0; c.nq];
    let mut qdd = vec![0.0; c.nq];
    let mut jerk = vec![0.0; c.nq];
    for j in 0..c.nq {
        for k in 1..=c.k_terms {
            let w = k as f64 * c.omega;
            let (s, co) = (w * t).sin_cos();
            let a = c.a[j * c.k_terms + k - 1];
            let b = c.b[j * c.k_terms + k - 1];
            q[j] += a / w * s - b / w * co;
            qd[j] += a * co + b * s;
            qdd[j] += -a * w * s + b * w * co;
            jerk[j] += -a * w * w * co - b * w * w * s;
        }
    }
    (q, qd, qdd, jerk)
}

/// Grid step satisfying 4× the Nyquist rate of the highest harmonic Kω.
pub fn check_grid_step(cfg: &DoeConfig) -> f64 {
    std::f64::consts::PI / (4.0 * cfg.k_terms as f64 * cfg.omega)
}

fn grid(duration: f64, step: f64) -> Vec<f64> {
    let n = (duration / step).ceil() as usize + 1;
    (0..n)
        .map(|i| (i as f64 * duration / (n - 1) as f64).min(duration))
        .collect()
}

/// Nonnegative violation residuals of every box constraint at every grid
/// point — ordered (point, joint, [q lo, q hi, q̇ lo, q̇ hi, q̈ lo, q̈ hi,
/// jerk]) — followed by the six boundary equality residuals per joint.
pub fn constraint_residuals(
    c: &TrajectoryCoeffs,
    limits: &MotionLimits,
    grid: &[f64],
) -> Vec<f64> {
    let nq = c.nq.min(limits.nq());
    let mut out = Vec::new();
    for &t in grid {
        let (q, qd, qdd, jerk) = evaluate_trajectory(c, t);
        for j in 0..nq {
            for (v, (lo, hi)) in
                [(q[j], limits.q[j]), (qd[j], limits.qd[j]), (qdd[j], limits.qdd[j])]
            {
                out.push((lo - v).max(0.0));
                out.push((v - hi).max(0.0));
            }
            if let Some(jb) = limits.jerk {
                out.push((jerk[j].abs() - jb).max(0.0));
            }
        }
    }
    for t in [0.0, c.duration] {
        let (q, qd, qdd, _) = evaluate_trajectory(c, t);
        for j in 0..nq {
            out.push(q[j].abs());
            out.push(qd[j].abs());
            out.push(qdd[j].abs());
        }
    }
    out
}

/// Rows: [q, q̇, q̈] at t ∈ {0, T} as linear functions of one joint's
/// stacked coefficients [a_1..a_K, b_1..b_K].
fn boundary_matrix(k_terms: usize, omega: f64, duration: f64) -> DMatrix<f64> {
    let kk = k_terms;
    let mut e = DMatrix::zeros(6, 2 * kk);
    for k in 1..=kk {
        let w = k as f64 * omega;
        let (s, c) = (w * duration).sin_cos();
        let (ia, ib) = (k - 1, kk + k - 1);
        e[(0, ib)] = -1.0 / w;
        e[(1, ia)] = 1.0;
        e[(2, ib)] = w;
        e[(3, ia)] = s / w;
        e[(3, ib)] = -c / w;
        e[(4, ia)] = c;
        e[(4, ib)] = s;
        e[(5, ia)] = -w * s;
        e[(5, ib)] = w * c;
    }
    e
}

/// Orthogonal projection onto Ex = 0 via the row space of E. Durations
/// commensurate with the base period make rows at t = T duplicates of the
/// rows at t = 0, so this must be rank-revealing rather than EEᵀ-based.
fn project_boundaries(e: &DMatrix<f64>, x: &mut DVector<f64>) -> Result<()> {
    let svd = e.clone().svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD of the boundary matrix failed".into()))?;
    let smax = svd.singular_values.max();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > smax * 1e-12 {
            let row = v_t.row(i);
            let coef = row.dot(&x.transpose());
            for (xi, vi) in x.iter_mut().zip(row.iter()) {
                *xi -= coef * vi;
            }
        }
    }
    Ok(())
}

/// Worst constraint ratio: 1 is exactly on a bound, > 1 violates.
fn worst_ratio(c: &TrajectoryCoeffs, limits: &MotionLimits, grid: &[f64]) -> f64 {
    let mut rho = 0.0f64;
    for &t in grid {
        let (q, qd, qdd, jerk) = evaluate_trajectory(c, t);
        for j in 0..c.nq {
            for (v, (lo, hi)) in
                [(q[j], limits.q[j]), (qd[j], limits.qd[j]), (qdd[j], limits.qdd[j])]
            {
                rho = rho.max(v / hi).max(v / lo);
            }
            if let Some(jb) = limits.jerk {
                rho = rho.max(jerk[j].abs() / jb);
            }
        }
    }
    rho
}

/// Draw, project, shrink. Every returned trajectory satisfies the boundary
/// equalities to projection accuracy and all box constraints with margin on
/// a grid 4× denser than the check grid.
pub fn design(
    limits: &MotionLimits,
    seed: u64,
    cfg: &DoeConfig,
) -> Result<(TrajectoryCoeffs, DesignInfo)> {
    limits.validate()?;
    if cfg.k_terms == 0 || !(cfg.omega > 0.0) || !(cfg.duration > 0.0) {
        return Err(Error::Config("design needs k_terms ≥ 1, ω > 0, duration > 0".into()));
    }
    if !(cfg.margin > 0.0 && cfg.margin <= 1.0) {
        return Err(Error::Config(format!("margin must be in (0, 1], got {}", cfg.margin)));
    }
    let nq = limits.nq();
    let kk = cfg.k_terms;
    let mut coeffs = TrajectoryCoeffs::zeros(nq, kk, cfg.omega, cfg.duration);
    let e = boundary_matrix(kk, cfg.omega, cfg.duration);
    let mut rng = stream_rng(seed, 11);
    let mut draw = vec![0.0; 2 * kk];
    for j in 0..nq {
        randn_fill(&mut rng, &mut draw);
        let mut x = DVector::from_fn(2 * kk, |i, _| cfg.amplitude * draw[i]);
        project_boundaries(&e, &mut x)?;
        coeffs.a[j * kk..(j + 1) * kk].copy_from_slice(&x.as_slice()[..kk]);
        coeffs.b[j * kk..(j + 1) * kk].copy_from_slice(&x.as_slice()[kk..]);
    }

    let fine = grid(cfg.duration, check_grid_step(cfg) / 4.0);
    let mut scale = 1.0;
    for attempt in 1..=cfg.max_attempts {
        let rho = worst_ratio(&coeffs, limits, &fine);
        if rho <= 1.0 {
            return Ok((coeffs, DesignInfo { scale, attempts: attempt }));
        }
        // values are linear in the coefficients, so this lands at ρ = margin
        let s = cfg.margin / rho;
        scale *= s;
        coeffs.a.iter_mut().chain(coeffs.b.iter_mut()).for_each(|v| *v *= s);
    }
    Err(Error::DoeInfeasible(format!(
        "no feasible trajectory within {} attempts",
        cfg.max_attempts
    )))
}

/// Uniformly sampled reference, floor(T/Δt) + 1 rows, row-major t × nq.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub nq: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

pub fn sample_reference(c: &TrajectoryCoeffs, dt: f64) -> Result<ReferenceTable> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("sample step must be positive, got {dt}")));
    }
    c.validate()?;
    let rows = (c.duration / dt + 1e-9).floor() as usize + 1;
    let mut table = ReferenceTable {
        nq: c.nq,
        dt,
        t: Vec::with_capacity(rows),
        q: Vec::with_capacity(rows * c.nq),
        qd: Vec::with_capacity(rows * c.nq),
        qdd: Vec::with_capacity(rows * c.nq),
    };
    for i in 0..rows {
        let t = i as f64 * dt;
        table.t.push(t);
        let (q, qd, qdd, _) = evaluate_trajectory(c, t);
        table.q.extend(q);
        table.qd.extend(qd);
        table.qdd.extend(qdd);
    }
    Ok(table)
}
