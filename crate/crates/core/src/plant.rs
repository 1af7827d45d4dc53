//! Rigid-body dynamics for the desk-scale plants: a 1-DOF pendulum and a
//! 2-DOF planar arm, both with revolute z-axis joints.
//!
//! Joint angles are measured from the downward vertical, so q = 0 is the
//! hanging (stable) configuration. Link frames put x̂ along the link towards
//! the next joint; centers of mass are (r_x, r_y) in that frame.
//!
//! Everything dynamic is expressed through the *base lumped parameters*, the
//! minimal identifiable combinations of the link constants:
//!
//! - pendulum: `[I_o, m·c_x, m·c_y]` with I_o the inertia about the joint
//! - 2-link:   `[I_o1 + l_1²m_2,  m_1c_x1 + l_1m_2,  m_1c_y1,  I_o2,  m_2c_x2,  m_2c_y2]`
//!
//! M(q), c(q, q̇) and g(q) are exactly linear in these lumps, which the
//! state-space gradients exploit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NQ: usize = 2;

/// Full inertial description of one link. Only the planar quantities (mass,
/// r_x, r_y, I_zz, length) enter the dynamics of these plants; the remaining
/// tensor elements are kept for validation and config completeness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub mass: f64,
    /// center of mass in the link frame (m)
    pub com: [f64; 3],
    /// inertia tensor about the COM: [I_xx, I_yy, I_zz, I_xy, I_xz, I_yz]
    pub inertia: [f64; 6],
    /// joint-to-joint length along link x̂ (m)
    pub length: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("link mass must be positive, got {}", self.mass)));
        }
        if self.length < 0.0 {
            return Err(Error::Config(format!("link length must be nonnegative, got {}", self.length)));
        }
        let [ixx, iyy, izz, ixy, ixz, iyz] = self.inertia;
        let m = nalgebra::Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
        let eigs = m.symmetric_eigenvalues();
        let scale = eigs.amax().max(1e-30);
        if eigs.iter().any(|&e| e < -1e-12 * scale) {
            return Err(Error::Config(format!(
                "link inertia tensor is not positive semidefinite (eigenvalues {:?})",
                eigs.as_slice()
            )));
        }
        Ok(())
    }

    /// inertia about the joint axis (z through the link origin)
    pub fn inertia_about_joint(&self) -> f64 {
        self.inertia[2] + self.mass * (self.com[0] * self.com[0] + self.com[1] * self.com[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Pendulum,
    TwoLink,
}

/// A validated physical plant: link constants plus the gravity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub kind: PlantKind,
    pub links: Vec<LinkParams>,
    /// field strength (m/s²); 9.81 points along −y in the world frame
    pub gravity: f64,
}

impl Plant {
    pub fn new(kind: PlantKind, links: Vec<LinkParams>, gravity: f64) -> Result<Self> {
        let want = match kind {
            PlantKind::Pendulum => 1,
            PlantKind::TwoLink => 2,
        };
        if links.len() != want {
            return Err(Error::Config(format!(
                "{kind:?} needs {want} link(s), got {}",
                links.len()
            )));
        }
        for link in &links {
            link.validate()?;
        }
        Ok(Plant { kind, links, gravity })
    }

    pub fn n_q(&self) -> usize {
        match self.kind {
            PlantKind::Pendulum => 1,
            PlantKind::TwoLink => 2,
        }
    }

    pub fn model(&self) -> PlantModel {
        PlantModel {
            kind: self.kind,
            l1: self.links[0].length,
            gravity: self.gravity,
        }
    }

    /// Base lumped parameters of this plant's link constants.
    pub fn base_lumps(&self) -> Vec<f64> {
        match self.kind {
            PlantKind::Pendulum => {
                let l = &self.links[0];
                vec![l.inertia_about_joint(), l.mass * l.com[0], l.mass * l.com[1]]
            }
            PlantKind::TwoLink => {
                let (l1, l2) = (&self.links[0], &self.links[1]);
                let len1 = l1.length;
                vec![
                    l1.inertia_about_joint() + len1 * len1 * l2.mass,
                    l1.mass * l1.com[0] + len1 * l2.mass,
                    l1.mass * l1.com[1],
                    l2.inertia_about_joint(),
                    l2.mass * l2.com[0],
                    l2.mass * l2.com[1],
                ]
            }
        }
    }
}

/// Lump-parameterized dynamics engine: plant topology and geometry without the
/// link constants, so the same code serves the true plant and any identified
/// parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub kind: PlantKind,
    /// length of link 1 (unused for the pendulum)
    pub l1: f64,
    pub gravity: f64,
}

impl PlantModel {
    pub fn n_q(&self) -> usize {
        match self.kind {
            PlantKind::Pendulum => 1,
            PlantKind::TwoLink => 2,
        }
    }

    pub fn n_lumps(&self) -> usize {
        match self.kind {
            PlantKind::Pendulum => 3,
            PlantKind::TwoLink => 6,
        }
    }

    pub fn lump_names(&self) -> Vec<&'static str> {
        match self.kind {
            PlantKind::Pendulum => vec!["Io", "m.cx", "m.cy"],
            PlantKind::TwoLink => vec!["Io1+l1^2.m2", "m1.cx1+l1.m2", "m1.cy1", "Io2", "m2.cx2", "m2.cy2"],
        }
    }

    /// M(q) into `m` (row-major, n_q × n_q).
    pub fn mass_matrix(&self, lumps: &[f64], q: &[f64], m: &mut [[f64; MAX_NQ]; MAX_NQ]) {
        match self.kind {
            PlantKind::Pendulum => {
                m[0][0] = lumps[0];
            }
            PlantKind::TwoLink => {
                let h = self.l1 * (lumps[4] * q[1].cos() - lumps[5] * q[1].sin());
                m[0][0] = lumps[0] + lumps[3] + 2.0 * h;
                m[0][1] = lumps[3] + h;
                m[1][0] = m[0][1];
                m[1][1] = lumps[3];
            }
        }
    }

    /// Coriolis/centrifugal vector c(q, q̇) and gravity vector g(q).
    pub fn bias_gravity(&self, lumps: &[f64], q: &[f64], qd: &[f64], c: &mut [f64], g: &mut [f64]) {
        let g0 = self.gravity;
        match self.kind {
            PlantKind::Pendulum => {
                c[0] = 0.0;
                g[0] = g0 * (lumps[1] * q[0].sin() + lumps[2] * q[0].cos());
            }
            PlantKind::TwoLink => {
                let (s2, c2) = q[1].sin_cos();
                let hp = -self.l1 * (lumps[4] * s2 + lumps[5] * c2);
                c[0] = hp * qd[1] * (2.0 * qd[0] + qd[1]);
                c[1] = -hp * qd[0] * qd[0];
                let (s1, c1) = q[0].sin_cos();
                let (s12, c12) = (q[0] + q[1]).sin_cos();
                let g2 = g0 * (lumps[4] * s12 + lumps[5] * c12);
                g[0] = g0 * (lumps[1] * s1 + lumps[2] * c1) + g2;
                g[1] = g2;
            }
        }
    }

    /// τ_m = M(q)·q̈ + c(q, q̇) + g(q) + τ_f
    pub fn inverse_dynamics(
        &self,
        lumps: &[f64],
        q: &[f64],
        qd: &[f64],
        qdd: &[f64],
        tau_f: &[f64],
        tau_m: &mut [f64],
    ) {
        let nq = self.n_q();
        let mut m = [[0.0; MAX_NQ]; MAX_NQ];
        let mut c = [0.0; MAX_NQ];
        let mut g = [0.0; MAX_NQ];
        self.mass_matrix(lumps, q, &mut m);
        self.bias_gravity(lumps, q, qd, &mut c, &mut g);
        for i in 0..nq {
            let mut s = c[i] + g[i] + tau_f[i];
            for j in 0..nq {
                s += m[i][j] * qdd[j];
            }
            tau_m[i] = s;
        }
    }

    /// q̈ = M(q)⁻¹ (τ_m − c − g − τ_f)
    pub fn forward_dynamics(
        &self,
        lumps: &[f64],
        q: &[f64],
        qd: &[f64],
        tau_m: &[f64],
        tau_f: &[f64],
        qdd: &mut [f64],
    ) -> Result<()> {
        let nq = self.n_q();
        let mut m = [[0.0; MAX_NQ]; MAX_NQ];
        let mut c = [0.0; MAX_NQ];
        let mut g = [0.0; MAX_NQ];
        self.mass_matrix(lumps, q, &mut m);
        self.bias_gravity(lumps, q, qd, &mut c, &mut g);
        let mut r = [0.0; MAX_NQ];
        for i in 0..nq {
            r[i] = tau_m[i] - c[i] - g[i] - tau_f[i];
        }
        solve_spd(&m, &r, nq, &mut qdd[..nq])
    }

    /// Total mechanical energy (kinetic + gravity potential), for drift checks.
    pub fn energy(&self, lumps: &[f64], q: &[f64], qd: &[f64]) -> f64 {
        let nq = self.n_q();
        let mut m = [[0.0; MAX_NQ]; MAX_NQ];
        self.mass_matrix(lumps, q, &mut m);
        let mut kin = 0.0;
        for i in 0..nq {
            for j in 0..nq {
                kin += 0.5 * qd[i] * m[i][j] * qd[j];
            }
        }
        let g0 = self.gravity;
        let pot = match self.kind {
            PlantKind::Pendulum => g0 * (-lumps[1] * q[0].cos() + lumps[2] * q[0].sin()),
            PlantKind::TwoLink => {
                let (s1, c1) = q[0].sin_cos();
                let (s12, c12) = (q[0] + q[1]).sin_cos();
                g0 * (-lumps[1] * c1 + lumps[2] * s1 - lumps[4] * c12 + lumps[5] * s12)
            }
        };
        kin + pot
    }

    /// Number of regressor columns: the full standard parameters of every link
    /// plus, when requested, a Coulomb and a viscous column per joint.
    pub fn regressor_cols(&self, friction: bool) -> usize {
        let inertial = match self.kind {
            PlantKind::Pendulum => 4,
            PlantKind::TwoLink => 8,
        };
        inertial + if friction { 2 * self.n_q() } else { 0 }
    }

    pub fn regressor_col_names(&self, friction: bool) -> Vec<String> {
        let mut names: Vec<String> = match self.kind {
            PlantKind::Pendulum => vec!["Io", "m.cx", "m.cy", "m"].into_iter().map(String::from).collect(),
            PlantKind::TwoLink => {
                vec!["Io1", "m1.cx1", "m1.cy1", "m1", "Io2", "m2.cx2", "m2.cy2", "m2"]
                    .into_iter()
                    .map(String::from)
                    .collect()
            }
        };
        if friction {
            for j in 0..self.n_q() {
                names.push(format!("nu_c{}", j + 1));
                names.push(format!("nu_v{}", j + 1));
            }
        }
        names
    }

    /// Rows of the linear-in-parameters torque model, τ = Y(q, q̇, q̈)·Θ.
    /// `out` is row-major n_q × regressor_cols.
    pub fn regressor(&self, q: &[f64], qd: &[f64], qdd: &[f64], friction: bool, out: &mut [f64]) {
        let ncols = self.regressor_cols(friction);
        debug_assert_eq!(out.len(), self.n_q() * ncols);
        out.iter_mut().for_each(|v| *v = 0.0);
        let g0 = self.gravity;
        match self.kind {
            PlantKind::Pendulum => {
                let (s1, c1) = q[0].sin_cos();
                out[0] = qdd[0];
                out[1] = g0 * s1;
                out[2] = g0 * c1;
                // column 3 (total mass) never appears in the torque
            }
            PlantKind::TwoLink => {
                let (s1, c1) = q[0].sin_cos();
                let (s2, c2) = q[1].sin_cos();
                let (s12, c12) = (q[0] + q[1]).sin_cos();
                let l1 = self.l1;
                let row0 = &mut out[..ncols];
                row0[0] = qdd[0];
                row0[1] = g0 * s1;
                row0[2] = g0 * c1;
                row0[4] = qdd[0] + qdd[1];
                row0[5] = l1 * c2 * (2.0 * qdd[0] + qdd[1])
                    - l1 * s2 * (qd[1] * qd[1] + 2.0 * qd[0] * qd[1])
                    + g0 * s12;
                row0[6] = -l1 * s2 * (2.0 * qdd[0] + qdd[1])
                    - l1 * c2 * (qd[1] * qd[1] + 2.0 * qd[0] * qd[1])
                    + g0 * c12;
                row0[7] = l1 * l1 * qdd[0] + g0 * l1 * s1;
                let row1 = &mut out[ncols..2 * ncols];
                row1[4] = qdd[0] + qdd[1];
                row1[5] = l1 * c2 * qdd[0] + l1 * s2 * qd[0] * qd[0] + g0 * s12;
                row1[6] = -l1 * s2 * qdd[0] + l1 * c2 * qd[0] * qd[0] + g0 * c12;
            }
        }
        if friction {
            let base = self.regressor_cols(false);
            for j in 0..self.n_q() {
                out[j * ncols + base + 2 * j] = sign0(qd[j]);
                out[j * ncols + base + 2 * j + 1] = qd[j];
            }
        }
    }

    /// Full standard-parameter vector matching the inertial regressor columns.
    pub fn full_theta(plant: &Plant) -> Vec<f64> {
        match plant.kind {
            PlantKind::Pendulum => {
                let l = &plant.links[0];
                vec![l.inertia_about_joint(), l.mass * l.com[0], l.mass * l.com[1], l.mass]
            }
            PlantKind::TwoLink => {
                let (l1, l2) = (&plant.links[0], &plant.links[1]);
                vec![
                    l1.inertia_about_joint(),
                    l1.mass * l1.com[0],
                    l1.mass * l1.com[1],
                    l1.mass,
                    l2.inertia_about_joint(),
                    l2.mass * l2.com[0],
                    l2.mass * l2.com[1],
                    l2.mass,
                ]
            }
        }
    }

    /// Reverse-mode sensitivities of the forward-dynamics acceleration:
    /// given the adjoint λ on q̈, accumulate λᵀ∂q̈/∂(lumps, q, q̇, τ_f).
    /// The friction adjoint −M⁻¹λ is returned for chaining into the friction
    /// model (τ_f enters as q̈ = M⁻¹(… − τ_f)).
    #[allow(clippy::too_many_arguments)]
    pub fn accel_vjp(
        &self,
        lumps: &[f64],
        q: &[f64],
        qd: &[f64],
        qdd: &[f64],
        lambda: &[f64],
        grad_lumps: &mut [f64],
        grad_q: &mut [f64],
        grad_qd: &mut [f64],
        tau_f_adjoint: &mut [f64],
    ) -> Result<()> {
        let nq = self.n_q();
        let mut m = [[0.0; MAX_NQ]; MAX_NQ];
        self.mass_matrix(lumps, q, &mut m);
        let mut w = [0.0; MAX_NQ];
        solve_spd(&m, lambda, nq, &mut w[..nq])?;
        for i in 0..nq {
            tau_f_adjoint[i] = -w[i];
        }
        let g0 = self.gravity;
        match self.kind {
            PlantKind::Pendulum => {
                let (s1, c1) = q[0].sin_cos();
                // lumps: ∂q̈/∂L_k = −M⁻¹(A_k q̈ + c_k + g_k)
                grad_lumps[0] += -w[0] * qdd[0];
                grad_lumps[1] += -w[0] * g0 * s1;
                grad_lumps[2] += -w[0] * g0 * c1;
                grad_q[0] += -w[0] * g0 * (lumps[1] * c1 - lumps[2] * s1);
                let _ = qd;
            }
            PlantKind::TwoLink => {
                let (s1, c1) = q[0].sin_cos();
                let (s2, c2) = q[1].sin_cos();
                let (s12, c12) = (q[0] + q[1]).sin_cos();
                let l1 = self.l1;
                let h = l1 * (lumps[4] * c2 - lumps[5] * s2);
                let hp = -l1 * (lumps[4] * s2 + lumps[5] * c2);
                let a = qdd;
                // lump columns of M·a + c + g
                let sa = a[0] + a[1];
                let quad1 = qd[1] * (2.0 * qd[0] + qd[1]);
                let quad2 = -qd[0] * qd[0];
                // L1: A = diag-ish [[1,0],[0,0]]
                grad_lumps[0] += -w[0] * a[0];
                // L2, L3: gravity only
                grad_lumps[1] += -w[0] * g0 * s1;
                grad_lumps[2] += -w[0] * g0 * c1;
                // L4: A = [[1,1],[1,1]]
                grad_lumps[3] += -(w[0] * sa + w[1] * sa);
                // L5: A = l1 c2 [[2,1],[1,0]], c col = −l1 s2 (quad1, quad2), g col = g0 (s12, s12)
                let m5 = [l1 * c2 * (2.0 * a[0] + a[1]), l1 * c2 * a[0]];
                grad_lumps[4] += -w[0] * (m5[0] - l1 * s2 * quad1 + g0 * s12)
                    - w[1] * (m5[1] - l1 * s2 * quad2 + g0 * s12);
                // L6: A = −l1 s2 [[2,1],[1,0]], c col = −l1 c2 (quad1, quad2), g col = g0 (c12, c12)
                let m6 = [-l1 * s2 * (2.0 * a[0] + a[1]), -l1 * s2 * a[0]];
                grad_lumps[5] += -w[0] * (m6[0] - l1 * c2 * quad1 + g0 * c12)
                    - w[1] * (m6[1] - l1 * c2 * quad2 + g0 * c12);
                // ∂/∂q1: only gravity depends on q1
                let dg_dq1 = [
                    g0 * (lumps[1] * c1 - lumps[2] * s1 + lumps[4] * c12 - lumps[5] * s12),
                    g0 * (lumps[4] * c12 - lumps[5] * s12),
                ];
                grad_q[0] += -(w[0] * dg_dq1[0] + w[1] * dg_dq1[1]);
                // ∂/∂q2: ∂M/∂q2 = hp [[2,1],[1,0]], ∂c/∂q2 with h'' = −h, ∂g/∂q2
                let dm_a = [hp * (2.0 * a[0] + a[1]), hp * a[0]];
                let dc_dq2 = [-h * quad1, -h * quad2];
                let dg_dq2 = [g0 * (lumps[4] * c12 - lumps[5] * s12), g0 * (lumps[4] * c12 - lumps[5] * s12)];
                grad_q[1] += -(w[0] * (dm_a[0] + dc_dq2[0] + dg_dq2[0])
                    + w[1] * (dm_a[1] + dc_dq2[1] + dg_dq2[1]));
                // ∂c/∂q̇
                let dc_dqd1 = [2.0 * hp * qd[1], -2.0 * hp * qd[0]];
                let dc_dqd2 = [hp * (2.0 * qd[0] + 2.0 * qd[1]), 0.0];
                grad_qd[0] += -(w[0] * dc_dqd1[0] + w[1] * dc_dqd1[1]);
                grad_qd[1] += -(w[0] * dc_dqd2[0] + w[1] * dc_dqd2[1]);
            }
        }
        Ok(())
    }
}

/// Solve M x = b for the small symmetric positive definite M.
fn solve_spd(m: &[[f64; MAX_NQ]; MAX_NQ], b: &[f64], nq: usize, x: &mut [f64]) -> Result<()> {
    match nq {
        1 => {
            if m[0][0] <= 0.0 || !m[0][0].is_finite() {
                return Err(Error::Numerical(format!("mass matrix not positive: {}", m[0][0])));
            }
            x[0] = b[0] / m[0][0];
            Ok(())
        }
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let tr = m[0][0] + m[1][1];
            if !(det > 0.0 && tr > 0.0) {
                return Err(Error::Numerical(format!("mass matrix not positive definite (det {det})")));
            }
            // eigenvalues of the 2×2 symmetric matrix for the conditioning check
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            let (lmax, lmin) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
            if lmax > 1e12 * lmin {
                return Err(Error::Numerical(format!(
                    "mass matrix condition number {:.3e} exceeds 1e12",
                    lmax / lmin
                )));
            }
            x[0] = (b[0] * m[1][1] - b[1] * m[0][1]) / det;
            x[1] = (b[1] * m[0][0] - b[0] * m[1][0]) / det;
            Ok(())
        }
        _ => unreachable!(),
    }
}

#[inline]
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
