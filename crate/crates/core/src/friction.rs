//! The benchmark friction-model zoo: Coulomb+viscous, the static Stribeck
//! curve, the LuGre single-bristle model, and a Generalized Maxwell-Slip
//! (GMS) model with explicit stick/slip element switching.
//!
//! All models are per-joint scalar maps from velocity (plus internal state
//! for the dynamic ones) to friction torque. The static curves use
//! sign(0) := 0 and make no attempt to smooth the discontinuity — that is
//! the dynamic models' job.
//!
//! Functional forms follow the standard friction-modeling literature:
//! the Stribeck curve is the exponential form
//! τ(v) = [F_c + (F_s − F_c)·exp(−|v/v_s|^δ)]·sign(v) + F_v·v (δ = 2 by
//! default), LuGre is ż = v − |v|σ₀z/g(v) with τ = σ₀z + σ₁ż + σ₂v, and GMS
//! elements obey ż_i = v while sticking and ż_i = sign(v)·C·(α_i − k_i z_i / s(v))
//! while slipping, with stick→slip at |k_i z_i| = α_i g(|v|) and slip→stick
//! at velocity reversals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::sign0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleParams {
    pub coulomb: f64,
    pub viscous: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StribeckParams {
    pub coulomb: f64,
    pub stiction: f64,
    /// Stribeck velocity (rad/s)
    pub vs: f64,
    /// shape exponent
    pub delta: f64,
    pub viscous: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LuGreParams {
    /// bristle stiffness
    pub sigma0: f64,
    /// bristle damping
    pub sigma1: f64,
    /// viscous coefficient
    pub sigma2: f64,
    pub coulomb: f64,
    pub stiction: f64,
    pub vs: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmsParams {
    /// element stiffnesses k_i
    pub stiffness: Vec<f64>,
    /// element weights α_i, normalized to Σα = 1 on construction
    pub weights: Vec<f64>,
    /// attraction rate C (1/s)
    pub attraction: f64,
    /// shared Stribeck curve s(v) (viscous part handled by `viscous` below)
    pub coulomb: f64,
    pub stiction: f64,
    pub vs: f64,
    pub delta: f64,
    pub viscous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmsState {
    pub z: Vec<f64>,
    pub slipping: Vec<bool>,
    prev_sign: f64,
}

impl SimpleParams {
    pub fn validate(&self) -> Result<()> {
        if self.coulomb < 0.0 || self.viscous < 0.0 {
            return Err(Error::Config("simple friction coefficients must be nonnegative".into()));
        }
        Ok(())
    }
}

impl StribeckParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiction >= self.coulomb && self.coulomb >= 0.0) {
            return Err(Error::Config(format!(
                "need F_s ≥ F_c ≥ 0, got F_s = {}, F_c = {}",
                self.stiction, self.coulomb
            )));
        }
        if !(self.vs > 0.0 && self.delta > 0.0) || self.viscous < 0.0 {
            return Err(Error::Config("need v_s > 0, δ > 0, F_v ≥ 0".into()));
        }
        Ok(())
    }
}

impl LuGreParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma0 < 0.0 || self.sigma1 < 0.0 || self.sigma2 < 0.0 {
            return Err(Error::Config("LuGre σ coefficients must be nonnegative".into()));
        }
        if !(self.coulomb > 0.0) {
            return Err(Error::Config("LuGre needs F_c > 0 so that g(v) > 0 everywhere".into()));
        }
        StribeckParams {
            coulomb: self.coulomb,
            stiction: self.stiction,
            vs: self.vs,
            delta: self.delta,
            viscous: 0.0,
        }
        .validate()
    }

    fn g(&self, v: f64) -> f64 {
        stribeck_level(self.coulomb, self.stiction, self.vs, self.delta, v)
    }
}

impl GmsParams {
    /// Validates and normalizes the weights to Σα = 1.
    pub fn new(mut params: GmsParams) -> Result<GmsParams> {
        if params.stiffness.is_empty() || params.stiffness.len() != params.weights.len() {
            return Err(Error::Config("GMS needs matching, nonempty stiffness and weight lists".into()));
        }
        if params.stiffness.iter().any(|&k| k <= 0.0) || params.weights.iter().any(|&a| a <= 0.0) {
            return Err(Error::Config("GMS stiffnesses and weights must be positive".into()));
        }
        if !(params.attraction > 0.0) {
            return Err(Error::Config("GMS attraction parameter C must be positive".into()));
        }
        if !(params.coulomb > 0.0) {
            return Err(Error::Config("GMS needs F_c > 0 so that s(v) ≠ 0 away from rest".into()));
        }
        if params.viscous < 0.0 {
            return Err(Error::Config("GMS viscous coefficient must be nonnegative".into()));
        }
        StribeckParams {
            coulomb: params.coulomb,
            stiction: params.stiction,
            vs: params.vs,
            delta: params.delta,
            viscous: 0.0,
        }
        .validate()?;
        let total: f64 = params.weights.iter().sum();
        for w in &mut params.weights {
            *w /= total;
        }
        Ok(params)
    }

    pub fn n_elements(&self) -> usize {
        self.stiffness.len()
    }

    pub fn init_state(&self) -> GmsState {
        GmsState {
            z: vec![0.0; self.n_elements()],
            slipping: vec![false; self.n_elements()],
            prev_sign: 0.0,
        }
    }

    fn g(&self, v: f64) -> f64 {
        stribeck_level(self.coulomb, self.stiction, self.vs, self.delta, v)
    }
}

/// Velocity-strength curve g(|v|) = F_c + (F_s − F_c)·exp(−|v/v_s|^δ).
#[inline]
pub fn stribeck_level(coulomb: f64, stiction: f64, vs: f64, delta: f64, v: f64) -> f64 {
    coulomb + (stiction - coulomb) * (-(v / vs).abs().powf(delta)).exp()
}

pub fn simple_torque(v: f64, p: &SimpleParams) -> f64 {
    p.coulomb * sign0(v) + p.viscous * v
}

pub fn stribeck_torque(v: f64, p: &StribeckParams) -> f64 {
    stribeck_level(p.coulomb, p.stiction, p.vs, p.delta, v) * sign0(v) + p.viscous * v
}

pub fn lugre_zdot(v: f64, z: f64, p: &LuGreParams) -> f64 {
    v - p.sigma0 * v.abs() * z / p.g(v)
}

pub fn lugre_torque(v: f64, z: f64, p: &LuGreParams) -> f64 {
    p.sigma0 * z + p.sigma1 * lugre_zdot(v, z, p) + p.sigma2 * v
}

/// Advance one GMS joint by `dt` with the velocity held constant over the
/// step. Regime switches are located to 1e-9 s by bisection; within a
/// regime the constant-velocity dynamics integrate exactly (linear growth
/// while sticking, exponential attraction while slipping). Returns the
/// friction torque at the end of the step.
pub fn gms_step(v: f64, state: &mut GmsState, p: &GmsParams, dt: f64) -> f64 {
    let s = sign0(v);
    // velocity reversal or rest: every element re-sticks
    if s == 0.0 || (state.prev_sign != 0.0 && s != state.prev_sign) {
        state.slipping.iter_mut().for_each(|f| *f = false);
    }
    if s != 0.0 {
        state.prev_sign = s;
    }
    if s != 0.0 {
        let g = p.g(v);
        for i in 0..p.n_elements() {
            advance_element(
                &mut state.z[i],
                &mut state.slipping[i],
                p.stiffness[i],
                p.weights[i],
                v,
                s,
                g,
                p.attraction,
                dt,
            );
        }
    }
    let elastic: f64 = state.z.iter().zip(&p.stiffness).map(|(z, k)| k * z).sum();
    elastic + p.viscous * v
}

#[allow(clippy::too_many_arguments)]
fn advance_element(z: &mut f64, slipping: &mut bool, k: f64, alpha: f64, v: f64, s: f64, g: f64, c: f64, dt: f64) {
    let mut remaining = dt;
    let boundary = alpha * g / k; // |z| at the stick→slip transition
    while remaining > 0.0 {
        if *slipping {
            // ż = C(α·s − k z / g): exact exponential toward z* = s·αg/k
            let z_star = s * boundary;
            let lambda = c * k / g;
            *z = z_star + (*z - z_star) * (-lambda * remaining).exp();
            return;
        }
        // sticking: z(t) = z + v t until |k z| reaches α g
        let z_end = *z + v * remaining;
        if z_end.abs() < boundary {
            *z = z_end;
            return;
        }
        // bracket the switch time and bisect it down to 1e-9 s
        let (mut lo, mut hi) = (0.0, remaining);
        if (z.abs() - boundary) >= 0.0 {
            hi = 0.0; // already at the boundary
        }
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if (*z + v * mid).abs() < boundary {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t_switch = 0.5 * (lo + hi);
        *z += v * t_switch;
        *slipping = true;
        remaining -= t_switch;
    }
}

/// One joint's friction model, for curve export and per-joint fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointFriction {
    Simple(SimpleParams),
    Stribeck(StribeckParams),
    Lugre(LuGreParams),
    Gms(GmsParams),
}

impl JointFriction {
    pub fn validate(&self) -> Result<()> {
        match self {
            JointFriction::Simple(p) => p.validate(),
            JointFriction::Stribeck(p) => p.validate(),
            JointFriction::Lugre(p) => p.validate(),
            JointFriction::Gms(p) => {
                GmsParams::new(p.clone())?;
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            JointFriction::Simple(_) => "simple",
            JointFriction::Stribeck(_) => "stribeck",
            JointFriction::Lugre(_) => "lugre",
            JointFriction::Gms(_) => "gms",
        }
    }
}

/// Steady-state friction torque over a velocity grid. Static models evaluate
/// directly; dynamic models integrate from rest for `settle` seconds (5 s by
/// default) and must have stopped moving: the last two samples of τ may
/// differ by at most 1e-8.
pub fn steady_state_curve(model: &JointFriction, grid: &[f64], settle: f64) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&v| {
            let tau = match model {
                JointFriction::Simple(p) => simple_torque(v, p),
                JointFriction::Stribeck(p) => stribeck_torque(v, p),
                JointFriction::Lugre(p) => {
                    // RK4 on ż with the step bounded well inside the stable
                    // region of the bristle rate λ = σ0|v|/g(v)
                    let lambda = p.sigma0 * v.abs() / p.g(v);
                    let dt = (1e-3f64).min(0.5 / lambda.max(1e-12));
                    let n = (settle / dt).ceil() as usize;
                    let mut z = 0.0;
                    let mut prev_tau = f64::NAN;
                    let mut tau = lugre_torque(v, z, p);
                    for _ in 0..n {
                        let k1 = lugre_zdot(v, z, p);
                        let k2 = lugre_zdot(v, z + 0.5 * dt * k1, p);
                        let k3 = lugre_zdot(v, z + 0.5 * dt * k2, p);
                        let k4 = lugre_zdot(v, z + dt * k3, p);
                        z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                        prev_tau = tau;
                        tau = lugre_torque(v, z, p);
                    }
                    if !((tau - prev_tau).abs() < 1e-8) {
                        return Err(Error::Divergence {
                            stage: format!("lugre steady state at v = {v} (Δτ = {:.3e})", tau - prev_tau),
                        });
                    }
                    tau
                }
                JointFriction::Gms(p) => {
                    let dt = 1e-3;
                    let n = (settle / dt).ceil() as usize;
                    let mut state = p.init_state();
                    let mut prev_tau = f64::NAN;
                    let mut tau = 0.0;
                    for step in 0..n {
                        if step > 0 {
                            prev_tau = tau;
                        }
                        tau = gms_step(v, &mut state, p, dt);
                    }
                    if !((tau - prev_tau).abs() < 1e-8) {
                        return Err(Error::Divergence {
                            stage: format!("gms steady state at v = {v} (Δτ = {:.3e})", tau - prev_tau),
                        });
                    }
                    tau
                }
            };
            Ok((v, tau))
        })
        .collect()
}
