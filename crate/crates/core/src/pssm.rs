//! The probabilistic state-space model: the robot state (q, q̇) extended with
//! a small latent vector z, a neural friction torque inside the rigid-body
//! forward dynamics, and a neural drift for z, discretized with one RK4 step
//! per sampling interval under a zero-order-hold motor torque.
//!
//! The transition is x_t = f_θ(x_{t−1}, u_{t−1}) + w_t with diagonal Gaussian
//! w; the emission selects q (optionally q and q̇) from the state and adds
//! diagonal Gaussian noise. The model head of θ stacks
//! [base lumps | friction-net weights | latent-net weights]; the noise and
//! initial-state segments are handled by the shared layout in `ssm`.
//!
//! Both networks see the same standardized copy of the full extended state.
//! Reverse-mode parameter gradients run through all four RK4 stages: the
//! stage states are kept from the forward pass and the network activations
//! are recomputed stage by stage during the backward sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, MlpScratch, MlpSpec, Standardizer, backward, forward};
use crate::plant::{MAX_NQ, PlantModel};
use crate::ssm::GaussianSsm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralPssm {
    pub model: PlantModel,
    pub n_z: usize,
    /// observe q̇ in addition to q
    pub observe_qdot: bool,
    pub dt: f64,
    pub friction_net: MlpSpec,
    pub latent_net: Option<MlpSpec>,
    pub standardizer: Standardizer,
}

impl NeuralPssm {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: PlantModel,
        n_z: usize,
        friction_hidden: &[usize],
        latent_hidden: &[usize],
        activation: Activation,
        observe_qdot: bool,
        dt: f64,
        standardizer: Standardizer,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("sampling interval must be positive, got {dt}")));
        }
        let n_x = 2 * model.n_q() + n_z;
        if standardizer.dim() != n_x {
            return Err(Error::Config(format!(
                "standardizer dimension {} does not match state dimension {n_x}",
                standardizer.dim()
            )));
        }
        let friction_net = MlpSpec::new(n_x, friction_hidden, model.n_q(), activation);
        let latent_net = (n_z > 0).then(|| MlpSpec::new(n_x, latent_hidden, n_z, activation));
        Ok(NeuralPssm { model, n_z, observe_qdot, dt, friction_net, latent_net, standardizer })
    }

    pub fn n_q(&self) -> usize {
        self.model.n_q()
    }

    fn n_lumps(&self) -> usize {
        self.model.n_lumps()
    }

    pub fn lumps<'a>(&self, head: &'a [f64]) -> &'a [f64] {
        &head[..self.n_lumps()]
    }

    pub fn friction_params<'a>(&self, head: &'a [f64]) -> &'a [f64] {
        let o = self.n_lumps();
        &head[o..o + self.friction_net.n_params()]
    }

    pub fn latent_params<'a>(&self, head: &'a [f64]) -> &'a [f64] {
        let o = self.n_lumps() + self.friction_net.n_params();
        &head[o..]
    }

    /// Head vector with the given lump values and seeded network weights.
    pub fn init_head(&self, seed: u64, lumps0: &[f64]) -> Vec<f64> {
        let mut head = Vec::with_capacity(self.n_head());
        head.extend_from_slice(lumps0);
        head.extend(self.friction_net.init_params(seed));
        if let Some(lat) = &self.latent_net {
            head.extend(lat.init_params(seed.wrapping_add(1)));
        }
        head
    }

    /// The friction torque the network currently assigns to state `x`.
    pub fn friction_torque(&self, head: &[f64], x: &[f64], scratch: &mut PssmScratch, out: &mut [f64]) {
        self.standardizer.apply(x, &mut scratch.nets.xin);
        forward(&self.friction_net, self.friction_params(head), &scratch.nets.xin, &mut scratch.nets.fr);
        out.copy_from_slice(scratch.nets.fr.output());
    }

    /// ẋ = [q̇, M⁻¹(τ_m − c − g − τ_f(x)), η(x)] with τ_f from the friction
    /// net and η from the latent net, both fed the standardized state.
    pub fn state_derivative(
        &self,
        head: &[f64],
        x: &[f64],
        tau_m: &[f64],
        out: &mut [f64],
        scratch: &mut PssmScratch,
    ) -> Result<()> {
        self.derive(head, x, tau_m, out, &mut scratch.nets)
    }

    fn derive(&self, head: &[f64], x: &[f64], tau_m: &[f64], out: &mut [f64], nets: &mut NetScratch) -> Result<()> {
        let nq = self.n_q();
        self.standardizer.apply(x, &mut nets.xin);
        forward(&self.friction_net, self.friction_params(head), &nets.xin, &mut nets.fr);
        nets.tau_f[..nq].copy_from_slice(nets.fr.output());
        let (q, rest) = x.split_at(nq);
        let qd = &rest[..nq];
        out[..nq].copy_from_slice(qd);
        let (_, accel_out) = out.split_at_mut(nq);
        self.model.forward_dynamics(self.lumps(head), q, qd, tau_m, &nets.tau_f[..nq], &mut accel_out[..nq])?;
        if let (Some(lat), Some(ls)) = (&self.latent_net, nets.lat.as_mut()) {
            forward(lat, self.latent_params(head), &nets.xin, ls);
            out[2 * nq..].copy_from_slice(ls.output());
        }
        Ok(())
    }

    /// Reverse-mode pass of the derivative at a stage state: accumulates
    /// bᵀ∂f/∂head into `grad_head` and bᵀ∂f/∂x into `grad_x`. Network
    /// activations are recomputed here so the caller only keeps the states.
    fn derive_vjp(
        &self,
        head: &[f64],
        x: &[f64],
        tau_m: &[f64],
        b: &[f64],
        grad_head: &mut [f64],
        grad_x: &mut [f64],
        nets: &mut NetScratch,
    ) -> Result<()> {
        let nq = self.n_q();
        let nl = self.n_lumps();
        let (q, rest) = x.split_at(nq);
        let qd = &rest[..nq];

        // recompute the stage's friction torque and acceleration
        self.standardizer.apply(x, &mut nets.xin);
        forward(&self.friction_net, self.friction_params(head), &nets.xin, &mut nets.fr);
        nets.tau_f[..nq].copy_from_slice(nets.fr.output());
        let mut accel = [0.0; MAX_NQ];
        self.model.forward_dynamics(self.lumps(head), q, qd, tau_m, &nets.tau_f[..nq], &mut accel[..nq])?;

        // q̇ component: f_q = q̇
        for i in 0..nq {
            grad_x[nq + i] += b[i];
        }

        // acceleration component through the rigid-body solve
        let mut gq = [0.0; MAX_NQ];
        let mut gqd = [0.0; MAX_NQ];
        let mut tau_adj = [0.0; MAX_NQ];
        self.model.accel_vjp(
            self.lumps(head),
            q,
            qd,
            &accel[..nq],
            &b[nq..2 * nq],
            &mut grad_head[..nl],
            &mut gq[..nq],
            &mut gqd[..nq],
            &mut tau_adj[..nq],
        )?;
        for i in 0..nq {
            grad_x[i] += gq[i];
            grad_x[nq + i] += gqd[i];
        }

        // friction net pulls the τ_f adjoint back to weights and state
        let fr_range = nl..nl + self.friction_net.n_params();
        nets.sgrad.iter_mut().for_each(|v| *v = 0.0);
        backward(
            &self.friction_net,
            self.friction_params(head),
            &tau_adj[..nq],
            &mut nets.fr,
            &mut grad_head[fr_range],
            Some(&mut nets.sgrad),
        );
        self.standardizer.chain_grad(&nets.sgrad, grad_x);

        // latent net
        if let (Some(lat), Some(ls)) = (&self.latent_net, nets.lat.as_mut()) {
            forward(lat, self.latent_params(head), &nets.xin, ls);
            let lat_range = nl + self.friction_net.n_params()..self.n_head();
            nets.sgrad.iter_mut().for_each(|v| *v = 0.0);
            backward(lat, self.latent_params(head), &b[2 * nq..], ls, &mut grad_head[lat_range], Some(&mut nets.sgrad));
            self.standardizer.chain_grad(&nets.sgrad, grad_x);
        }
        Ok(())
    }

    /// RK4 with the stage states and slopes left in the scratch buffers.
    fn rk4_core(
        &self,
        head: &[f64],
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
        nets: &mut NetScratch,
        stages: &mut [Vec<f64>; 4],
        ks: &mut [Vec<f64>; 4],
    ) -> Result<()> {
        let n = self.n_x();
        let dt = self.dt;
        stages[0].copy_from_slice(x);
        for stage in 0..4 {
            if stage > 0 {
                let factor = if stage == 3 { dt } else { 0.5 * dt };
                let (done, rest) = stages.split_at_mut(stage);
                let prev_k = &ks[stage - 1];
                for i in 0..n {
                    rest[0][i] = done[0][i] + factor * prev_k[i];
                }
            }
            let (head_stages, _) = stages.split_at(stage + 1);
            self.derive(head, &head_stages[stage], u, &mut ks[stage], nets)?;
            if ks[stage].iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { stage: format!("rk4 stage {} is not finite", stage + 1) });
            }
        }
        for i in 0..n {
            out[i] = x[i] + dt / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        Ok(())
    }
}

/// Network activation buffers used inside a single derivative evaluation.
#[derive(Debug, Clone)]
struct NetScratch {
    fr: MlpScratch,
    lat: Option<MlpScratch>,
    xin: Vec<f64>,
    tau_f: [f64; MAX_NQ],
    sgrad: Vec<f64>,
}

/// Work buffers for one PSSM evaluation chain (one per worker thread or
/// particle batch; reused across calls).
#[derive(Debug, Clone)]
pub struct PssmScratch {
    nets: NetScratch,
    stages: [Vec<f64>; 4],
    ks: [Vec<f64>; 4],
    stage_adj: Vec<f64>,
    stage_gx: Vec<f64>,
    gx_total: Vec<f64>,
    mean_buf: Vec<f64>,
}

impl PssmScratch {
    pub fn new(pssm: &NeuralPssm) -> Self {
        let n = pssm.n_x();
        PssmScratch {
            nets: NetScratch {
                fr: MlpScratch::new(&pssm.friction_net),
                lat: pssm.latent_net.as_ref().map(MlpScratch::new),
                xin: vec![0.0; n],
                tau_f: [0.0; MAX_NQ],
                sgrad: vec![0.0; n],
            },
            stages: std::array::from_fn(|_| vec![0.0; n]),
            ks: std::array::from_fn(|_| vec![0.0; n]),
            stage_adj: vec![0.0; n],
            stage_gx: vec![0.0; n],
            gx_total: vec![0.0; n],
            mean_buf: vec![0.0; n],
        }
    }
}

impl GaussianSsm for NeuralPssm {
    type Scratch = PssmScratch;

    fn n_x(&self) -> usize {
        2 * self.n_q() + self.n_z
    }

    fn n_y(&self) -> usize {
        if self.observe_qdot { 2 * self.n_q() } else { self.n_q() }
    }

    fn n_u(&self) -> usize {
        self.n_q()
    }

    fn n_head(&self) -> usize {
        self.n_lumps()
            + self.friction_net.n_params()
            + self.latent_net.as_ref().map_or(0, |l| l.n_params())
    }

    fn make_scratch(&self) -> PssmScratch {
        PssmScratch::new(self)
    }

    fn transition_mean(
        &self,
        head: &[f64],
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
        scratch: &mut PssmScratch,
    ) -> Result<()> {
        let PssmScratch { nets, stages, ks, .. } = scratch;
        self.rk4_core(head, x, u, out, nets, stages, ks)
    }

    fn transition_vjp(
        &self,
        head: &[f64],
        x: &[f64],
        u: &[f64],
        lambda: &[f64],
        grad_head: &mut [f64],
        mut grad_x: Option<&mut [f64]>,
        scratch: &mut PssmScratch,
    ) -> Result<()> {
        let n = self.n_x();
        let dt = self.dt;
        let PssmScratch { nets, stages, ks, stage_adj, stage_gx, gx_total, mean_buf } = scratch;
        self.rk4_core(head, x, u, mean_buf, nets, stages, ks)?;

        // reverse sweep. x_next = x + dt/6 (k1 + 2k2 + 2k3 + k4) and
        // s2 = x + dt/2·k1, s3 = x + dt/2·k2, s4 = x + dt·k3, so the adjoint
        // on k_j is its quadrature weight times λ plus the carry from the
        // next stage's state.
        gx_total.iter_mut().for_each(|v| *v = 0.0);
        let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        let carry = [0.5 * dt, 0.5 * dt, dt]; // ∂s_{j+1}/∂k_j for j = 1..3
        for stage in (0..4).rev() {
            for i in 0..n {
                stage_adj[i] = weights[stage] * lambda[i]
                    + if stage < 3 { carry[stage] * stage_gx[i] } else { 0.0 };
            }
            stage_gx.iter_mut().for_each(|v| *v = 0.0);
            self.derive_vjp(head, &stages[stage], u, stage_adj, grad_head, stage_gx, nets)?;
            for i in 0..n {
                gx_total[i] += stage_gx[i];
            }
        }
        if let Some(gx) = grad_x.as_deref_mut() {
            for i in 0..n {
                gx[i] += lambda[i] + gx_total[i];
            }
        }
        Ok(())
    }

    fn emission_mean(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&x[..self.n_y()]);
    }
}

/// One classical RK4 step of a generic ODE right-hand side; the stage
/// arithmetic matches `NeuralPssm::transition_mean` exactly, so deterministic
/// simulators built on this function agree bit for bit with the model mean.
pub fn rk4_step_fn<F>(mut f: F, x: &[f64], dt: f64, out: &mut [f64], work: &mut Rk4Work) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x.len();
    work.stage.copy_from_slice(x);
    f(&work.stage, &mut work.k[0])?;
    for i in 0..n {
        work.stage[i] = x[i] + 0.5 * dt * work.k[0][i];
    }
    f(&work.stage, &mut work.k[1])?;
    for i in 0..n {
        work.stage[i] = x[i] + 0.5 * dt * work.k[1][i];
    }
    f(&work.stage, &mut work.k[2])?;
    for i in 0..n {
        work.stage[i] = x[i] + dt * work.k[2][i];
    }
    f(&work.stage, &mut work.k[3])?;
    for (stage, k) in work.k.iter().enumerate() {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { stage: format!("rk4 stage {} is not finite", stage + 1) });
        }
    }
    for i in 0..n {
        out[i] = x[i] + dt / 6.0 * (work.k[0][i] + 2.0 * work.k[1][i] + 2.0 * work.k[2][i] + work.k[3][i]);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Rk4Work {
    stage: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Rk4Work {
    pub fn new(n: usize) -> Self {
        Rk4Work { stage: vec![0.0; n], k: std::array::from_fn(|_| vec![0.0; n]) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{ThetaLayout, transition_logpdf, transition_logpdf_grad};
    use crate::util::{fd_grad, randn_fill, stream_rng};
    use rand::Rng;

    fn pendulum_model() -> PlantModel {
        PlantModel { kind: crate::plant::PlantKind::Pendulum, l1: 0.3, gravity: 9.81 }
    }

    fn pendulum_lumps() -> Vec<f64> {
        vec![0.07951, 0.275, -0.044]
    }

    fn small_pssm(n_z: usize, observe_qdot: bool) -> NeuralPssm {
        NeuralPssm::new(
            pendulum_model(),
            n_z,
            &[6],
            &[5],
            Activation::Mish,
            observe_qdot,
            0.004,
            Standardizer::identity(2 + n_z),
        )
        .unwrap()
    }

    fn zero_net_head(pssm: &NeuralPssm, lumps: &[f64]) -> Vec<f64> {
        let mut head = vec![0.0; pssm.n_head()];
        head[..lumps.len()].copy_from_slice(lumps);
        head
    }

    #[test]
    fn equilibrium_is_fixed_point_with_zero_nets() {
        // gravity torque vanishes at tan q = −m·cy / m·cx; with zero networks
        // and zero input the derivative is exactly zero and RK4 returns x
        let pssm = small_pssm(2, false);
        let head = zero_net_head(&pssm, &pendulum_lumps());
        let q_star = (0.044f64 / 0.275).atan();
        let x = [q_star, 0.0, 0.0, 0.0];
        let mut scratch = pssm.make_scratch();
        let mut dx = [9.9; 4];
        pssm.state_derivative(&head, &x, &[0.0], &mut dx, &mut scratch).unwrap();
        assert!(dx.iter().all(|&v| v.abs() < 1e-16), "{dx:?}");
        let mut next = [0.0; 4];
        pssm.transition_mean(&head, &x, &[0.0], &mut next, &mut scratch).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn qdd_component_matches_forward_dynamics() {
        // the acceleration inside the extended derivative is exactly the
        // rigid-body forward dynamics evaluated at the net's torque output
        let pssm = small_pssm(2, false);
        let mut rng = stream_rng(21, 0);
        let mut head = pssm.init_head(3, &pendulum_lumps());
        let mut scratch = pssm.make_scratch();
        for _ in 0..50 {
            let mut x = [0.0; 4];
            randn_fill(&mut rng, &mut x);
            let u = [rng.random_range(-2.0..2.0)];
            let mut tau_f = [0.0];
            pssm.friction_torque(&head, &x, &mut scratch, &mut tau_f);
            let mut want = [0.0];
            pssm.model
                .forward_dynamics(&head[..3], &x[..1], &x[1..2], &u, &tau_f, &mut want)
                .unwrap();
            let mut dx = [0.0; 4];
            pssm.state_derivative(&head, &x, &u, &mut dx, &mut scratch).unwrap();
            assert!((dx[1] - want[0]).abs() < 1e-12);
            assert_eq!(dx[0], x[1]);
            // jiggle a weight so instances differ
            let k = rng.random_range(3..head.len());
            head[k] += 0.01;
        }
    }

    #[test]
    fn structural_degeneration_to_classical_model() {
        // n_z = 0 and a zero friction net: the model is exactly the
        // frictionless rigid-body plant
        let pssm = small_pssm(0, false);
        assert!(pssm.latent_net.is_none());
        let head = zero_net_head(&pssm, &pendulum_lumps());
        let mut scratch = pssm.make_scratch();
        let mut rng = stream_rng(22, 0);
        for _ in 0..20 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)];
            let u = [rng.random_range(-2.0..2.0)];
            let mut dx = [0.0; 2];
            pssm.state_derivative(&head, &x, &u, &mut dx, &mut scratch).unwrap();
            let mut want = [0.0];
            pssm.model
                .forward_dynamics(&pendulum_lumps(), &x[..1], &x[1..2], &u, &[0.0], &mut want)
                .unwrap();
            assert_eq!(dx[0], x[1]);
            assert!((dx[1] - want[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn rk4_matches_scalar_exponential() {
        // ẋ = x over Δt = 0.1: RK4 gives the 4th-order Taylor value
        let mut work = Rk4Work::new(1);
        let mut out = [0.0];
        rk4_step_fn(
            |x, dx| {
                dx[0] = x[0];
                Ok(())
            },
            &[1.0],
            0.1,
            &mut out,
            &mut work,
        )
        .unwrap();
        let taylor = 1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((out[0] - taylor).abs() < 1e-15);
        // local truncation error of RK4 at h = 0.1 is h⁵/120 ≈ 8.5e-8
        assert!((out[0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_is_fourth_order_on_the_pendulum() {
        let model = pendulum_model();
        let lumps = pendulum_lumps();
        let f = |x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            let (q, qd) = (&x[..1], &x[1..2]);
            let mut a = [0.0];
            model.forward_dynamics(&lumps, q, qd, &[0.0], &[0.0], &mut a)?;
            dx[1] = a[0];
            Ok(())
        };
        let integrate = |dt: f64, t_end: f64| {
            let mut work = Rk4Work::new(2);
            let mut x = vec![1.1, 0.0];
            let mut next = vec![0.0; 2];
            let n = (t_end / dt).round() as usize;
            for _ in 0..n {
                rk4_step_fn(f, &x, dt, &mut next, &mut work).unwrap();
                std::mem::swap(&mut x, &mut next);
            }
            x
        };
        let reference = integrate(0.0002, 1.0);
        let err = |dt: f64| {
            let x = integrate(dt, 1.0);
            ((x[0] - reference[0]).powi(2) + (x[1] - reference[1]).powi(2)).sqrt()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((14.0..=18.0).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn frictionless_energy_drift_is_tiny() {
        // 10 s of free pendulum swing at the 4 ms sampling interval
        let pssm = small_pssm(0, false);
        let head = zero_net_head(&pssm, &pendulum_lumps());
        let mut scratch = pssm.make_scratch();
        let mut x = vec![1.2, 0.0];
        let mut next = vec![0.0; 2];
        let e0 = pssm.model.energy(&pendulum_lumps(), &x[..1], &x[1..2]);
        let mut max_drift = 0.0f64;
        for _ in 0..2500 {
            pssm.transition_mean(&head, &x, &[0.0], &mut next, &mut scratch).unwrap();
            std::mem::swap(&mut x, &mut next);
            let e = pssm.model.energy(&pendulum_lumps(), &x[..1], &x[1..2]);
            max_drift = max_drift.max((e - e0).abs());
        }
        assert!(max_drift < 1e-6, "energy drift {max_drift}");
    }

    #[test]
    fn transition_grads_match_finite_differences() {
        // full θ gradient of the transition log-density, composed through
        // RK4 and both networks
        let pssm = small_pssm(2, false);
        let layout = ThetaLayout::of(&pssm);
        let mut scratch = pssm.make_scratch();
        let mut rng = stream_rng(23, 0);
        for trial in 0..20 {
            let head = pssm.init_head(100 + trial, &pendulum_lumps());
            let mut theta = vec![0.0; layout.n_total()];
            theta[..head.len()].copy_from_slice(&head);
            for i in layout.log_q_range() {
                theta[i] = rng.random_range(-9.0..-5.0);
            }
            for i in layout.log_r_range() {
                theta[i] = rng.random_range(-9.0..-5.0);
            }
            for i in layout.init_mean_range() {
                theta[i] = rng.random_range(-0.5..0.5);
            }
            for i in layout.init_logvar_range() {
                theta[i] = rng.random_range(-4.0..-1.0);
            }
            let mut x = [0.0; 4];
            randn_fill(&mut rng, &mut x);
            x[1] *= 2.0;
            let u = [rng.random_range(-1.5..1.5)];
            let mut x_next = vec![0.0; 4];
            pssm.transition_mean(&theta[..pssm.n_head()], &x, &u, &mut x_next, &mut scratch).unwrap();
            for (i, v) in x_next.iter_mut().enumerate() {
                *v += (0.5 * layout.log_q(&theta)[i]).exp() * rng.random_range(-2.0..2.0);
            }

            let mut grad = vec![0.0; layout.n_total()];
            let mut mean_buf = vec![0.0; 4];
            let mut lam = vec![0.0; 4];
            transition_logpdf_grad(&pssm, &layout, &theta, &x_next, &x, &u, &mut grad, &mut mean_buf, &mut lam, &mut scratch)
                .unwrap();

            let fd = fd_grad(
                &mut |th: &[f64]| {
                    let mut m = vec![0.0; 4];
                    transition_logpdf(&pssm, &layout, th, &x_next, &x, &u, &mut m, &mut scratch).unwrap()
                },
                &mut theta,
                1e-6,
            );
            let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den < 1e-4, "trial {trial}: rel grad error {}", num / den);
        }
    }

    #[test]
    fn state_gradient_matches_finite_differences() {
        let pssm = small_pssm(2, false);
        let mut scratch = pssm.make_scratch();
        let mut rng = stream_rng(24, 0);
        let head = pssm.init_head(55, &pendulum_lumps());
        let mut x = vec![0.0; 4];
        randn_fill(&mut rng, &mut x);
        let u = [0.7];
        let mut lambda = vec![0.0; 4];
        randn_fill(&mut rng, &mut lambda);
        let mut grad_head = vec![0.0; pssm.n_head()];
        let mut grad_x = vec![0.0; 4];
        pssm.transition_vjp(&head, &x, &u, &lambda, &mut grad_head, Some(&mut grad_x), &mut scratch)
            .unwrap();
        let fd = fd_grad(
            &mut |xx: &[f64]| {
                let mut out = vec![0.0; 4];
                pssm.transition_mean(&head, xx, &u, &mut out, &mut scratch).unwrap();
                out.iter().zip(&lambda).map(|(a, b)| a * b).sum()
            },
            &mut x,
            1e-7,
        );
        for i in 0..4 {
            assert!((grad_x[i] - fd[i]).abs() < 1e-6 * (1.0 + fd[i].abs()), "dim {i}: {} vs {}", grad_x[i], fd[i]);
        }
    }

    #[test]
    fn transition_logpdf_matches_direct_normal() {
        // dual implementation: evaluate the diagonal normal by hand
        let pssm = small_pssm(2, false);
        let layout = ThetaLayout::of(&pssm);
        let mut scratch = pssm.make_scratch();
        let head = pssm.init_head(7, &pendulum_lumps());
        let mut theta = vec![0.0; layout.n_total()];
        theta[..head.len()].copy_from_slice(&head);
        for (k, i) in layout.log_q_range().enumerate() {
            theta[i] = -6.0 - 0.3 * k as f64;
        }
        let x = [0.4, -0.8, 0.1, 0.05];
        let u = [0.9];
        let mut mean = vec![0.0; 4];
        pssm.transition_mean(&head, &x, &u, &mut mean, &mut scratch).unwrap();
        let x_next = [mean[0] + 0.01, mean[1] - 0.002, mean[2] + 0.03, mean[3]];
        let mut buf = vec![0.0; 4];
        let got = transition_logpdf(&pssm, &layout, &theta, &x_next, &x, &u, &mut buf, &mut scratch).unwrap();
        let mut want = 0.0;
        for i in 0..4 {
            let q = layout.log_q(&theta)[i].exp();
            let d = x_next[i] - mean[i];
            want += -0.5 * (2.0 * std::f64::consts::PI * q).ln() - d * d / (2.0 * q);
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn emission_is_a_pure_selector() {
        let pssm = small_pssm(2, false);
        assert_eq!(pssm.n_y(), 1);
        let mut y = [0.0];
        pssm.emission_mean(&[0.3, 1.0, -2.0, 5.0], &mut y);
        assert_eq!(y, [0.3]);
        let mut y2 = [0.0];
        pssm.emission_mean(&[0.3, 9.9, 7.7, -3.3], &mut y2);
        assert_eq!(y, y2, "emission must ignore q̇ and z");
        let both = small_pssm(2, true);
        assert_eq!(both.n_y(), 2);
        let mut y3 = [0.0, 0.0];
        both.emission_mean(&[0.3, 1.0, -2.0, 5.0], &mut y3);
        assert_eq!(y3, [0.3, 1.0]);
    }

    #[test]
    fn divergent_stage_is_reported() {
        let model = PlantModel { kind: crate::plant::PlantKind::TwoLink, l1: 0.5, gravity: 9.81 };
        let pssm = NeuralPssm::new(model, 0, &[4], &[], Activation::Mish, false, 0.004, Standardizer::identity(4)).unwrap();
        let head = zero_net_head(&pssm, &[0.47, 0.51, 0.04, 0.03, 0.14, -0.02]);
        let mut scratch = pssm.make_scratch();
        let x = [0.0, 0.0, 1e160, 1e160];
        let mut out = [0.0; 4];
        let err = pssm.transition_mean(&head, &x, &[0.0, 0.0], &mut out, &mut scratch).unwrap_err();
        match err {
            Error::Divergence { stage } => assert!(stage.contains("stage 1"), "{stage}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
