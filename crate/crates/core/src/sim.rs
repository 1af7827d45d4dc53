//! Ground-truth synthesis. Motor torques come from inverse dynamics along a
//! designed reference (friction states integrated along the reference
//! velocity), and the recorded dataset is produced by re-simulating the
//! plant forward under those torques — so stored (q, q̇, τ) triples satisfy
//! the true dynamics exactly instead of assuming perfect tracking.

use serde::{Deserialize, Serialize};

use crate::classical::{gms_sim_torque, lugre_sim_torque};
use crate::doe::{sample_reference, TrajectoryCoeffs};
use crate::error::{Error, Result};
use crate::friction::{
    gms_step, lugre_torque, lugre_zdot, simple_torque, stribeck_torque, GmsState, JointFriction,
};
use crate::plant::{Plant, MAX_NQ};
use crate::pssm::{rk4_step_fn, Rk4Work};

/// Plant plus one friction model per joint — what the synthetic "robot" is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub plant: Plant,
    pub friction: Vec<JointFriction>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        if self.friction.len() != self.plant.n_q() {
            return Err(Error::Shape {
                expected: self.plant.n_q(),
                got: self.friction.len(),
                context: "one friction model per joint",
            });
        }
        for f in &self.friction {
            f.validate()?;
        }
        Ok(())
    }
}

/// Noise-free simulation record at the coarse sample step, row-major t × nq.
/// `tau_m` is the torque held over the interval starting at each instant;
/// `tau_f` and `qdd` are the true friction torque and acceleration there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSequence {
    pub nq: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub tau_m: Vec<f64>,
    pub tau_f: Vec<f64>,
}

impl CleanSequence {
    pub fn t_len(&self) -> usize {
        self.t.len()
    }
}

/// Friction internal state per joint during forward simulation. LuGre
/// bristles ride inside the RK4 state vector; GMS elements advance by their
/// own exact stick/slip integrator with velocity frozen per substep, and
/// their torque enters the rigid-body stages as a constant.
struct FrictionSim {
    z_slot: Vec<Option<usize>>,
    gms: Vec<Option<GmsState>>,
    gms_tau: Vec<f64>,
    n_z: usize,
}

impl FrictionSim {
    fn new(models: &[JointFriction]) -> FrictionSim {
        let mut z_slot = vec![None; models.len()];
        let mut gms = Vec::with_capacity(models.len());
        let mut n_z = 0;
        for (j, m) in models.iter().enumerate() {
            match m {
                JointFriction::Lugre(_) => {
                    z_slot[j] = Some(n_z);
                    n_z += 1;
                    gms.push(None);
                }
                JointFriction::Gms(p) => gms.push(Some(p.init_state())),
                _ => gms.push(None),
            }
        }
        FrictionSim { z_slot, gms, gms_tau: vec![0.0; models.len()], n_z }
    }

    /// Torque of joint j given the RK4 state (qd_j and its bristle slot).
    fn torque(&self, models: &[JointFriction], j: usize, qd_j: f64, x: &[f64], nq: usize) -> f64 {
        match &models[j] {
            JointFriction::Simple(p) => simple_torque(qd_j, p),
            JointFriction::Stribeck(p) => stribeck_torque(qd_j, p),
            JointFriction::Lugre(p) => lugre_torque(qd_j, x[2 * nq + self.z_slot[j].unwrap()], p),
            JointFriction::Gms(_) => self.gms_tau[j],
        }
    }

    /// Largest bristle rate σ0|v|/g(v) across LuGre joints — the stiff mode
    /// that dictates how finely a step must be subdivided.
    fn max_rate(&self, models: &[JointFriction], qd: &[f64]) -> f64 {
        models
            .iter()
            .zip(qd)
            .map(|(m, &v)| match m {
                JointFriction::Lugre(p) => {
                    p.sigma0 * v.abs()
                        / crate::friction::stribeck_level(p.coulomb, p.stiction, p.vs, p.delta, v)
                }
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    }
}

/// Forward-simulate the true plant under a torque series held constant over
/// each recording interval (`tau` is rows × nq at step `dt`), integrating
/// internally at `dt / oversample` with extra subdivision wherever a LuGre
/// bristle mode is stiff. On blow-up (non-finite state or |q| > `blowup`)
/// the record is truncated at the last good instant and the reached time is
/// returned alongside it; validation problems are still hard errors.
pub fn simulate_torques_lenient(
    truth: &GroundTruth,
    tau: &[f64],
    dt: f64,
    oversample: usize,
    q0: &[f64],
    qd0: &[f64],
    blowup: f64,
) -> Result<(CleanSequence, Option<f64>)> {
    truth.validate()?;
    if !(dt > 0.0) || oversample == 0 || !(blowup > 0.0) {
        return Err(Error::Config(format!(
            "need positive step, oversampling and blow-up bound, got dt = {dt}, oversample = {oversample}, blowup = {blowup}"
        )));
    }
    let nq = truth.plant.n_q();
    if tau.len() % nq != 0 || tau.len() / nq < 2 {
        return Err(Error::Shape {
            expected: 2 * nq,
            got: tau.len(),
            context: "torque table must be t × nq with at least two rows",
        });
    }
    let rows = tau.len() / nq;
    let fine_dt = dt / oversample as f64;
    let model = truth.plant.model();
    let lumps = truth.plant.base_lumps();
    let mut fr = FrictionSim::new(&truth.friction);

    let n_x = 2 * nq + fr.n_z;
    let mut x = vec![0.0; n_x];
    x[..nq].copy_from_slice(&q0[..nq]);
    x[nq..2 * nq].copy_from_slice(&qd0[..nq]);
    let mut x_next = vec![0.0; n_x];
    let mut work = Rk4Work::new(n_x);

    let mut out = CleanSequence {
        nq,
        dt,
        t: Vec::with_capacity(rows),
        q: Vec::with_capacity(rows * nq),
        qd: Vec::with_capacity(rows * nq),
        qdd: Vec::with_capacity(rows * nq),
        tau_m: Vec::with_capacity(rows * nq),
        tau_f: Vec::with_capacity(rows * nq),
    };

    let mut record = |fr: &mut FrictionSim, x: &[f64], i: usize| -> Result<()> {
        let row = &tau[i * nq..(i + 1) * nq];
        let (q, qd) = (&x[..nq], &x[nq..2 * nq]);
        let mut tau_f = [0.0; MAX_NQ];
        for j in 0..nq {
            if let (JointFriction::Gms(p), Some(st)) = (&truth.friction[j], fr.gms[j].as_mut()) {
                fr.gms_tau[j] = gms_step(qd[j], st, p, 0.0);
            }
            tau_f[j] = fr.torque(&truth.friction, j, qd[j], x, nq);
        }
        let mut qdd = [0.0; MAX_NQ];
        model.forward_dynamics(&lumps, q, qd, row, &tau_f[..nq], &mut qdd[..nq])?;
        out.t.push(i as f64 * dt);
        out.q.extend_from_slice(q);
        out.qd.extend_from_slice(qd);
        out.qdd.extend_from_slice(&qdd[..nq]);
        out.tau_m.extend_from_slice(row);
        out.tau_f.extend_from_slice(&tau_f[..nq]);
        Ok(())
    };

    record(&mut fr, &x, 0)?;
    for i in 0..rows - 1 {
        let u = &tau[i * nq..(i + 1) * nq];
        let mut failed = false;
        'interval: for k in 0..oversample {
            let rate = fr.max_rate(&truth.friction, &x[nq..2 * nq]);
            let n_sub = ((fine_dt * rate / 0.2).ceil() as usize).clamp(1, 1000);
            let h = fine_dt / n_sub as f64;
            for _ in 0..n_sub {
                for j in 0..nq {
                    if let (JointFriction::Gms(p), Some(st)) =
                        (&truth.friction[j], fr.gms[j].as_mut())
                    {
                        fr.gms_tau[j] = gms_step(x[nq + j], st, p, h);
                    }
                }
                let deriv = |s: &[f64], dx: &mut [f64]| -> Result<()> {
                    let (q, qd) = (&s[..nq], &s[nq..2 * nq]);
                    let mut tau_f = [0.0; MAX_NQ];
                    for j in 0..nq {
                        tau_f[j] = fr.torque(&truth.friction, j, qd[j], s, nq);
                    }
                    dx[..nq].copy_from_slice(qd);
                    let (head, tail) = dx.split_at_mut(2 * nq);
                    model.forward_dynamics(&lumps, q, qd, u, &tau_f[..nq], &mut head[nq..])?;
                    for j in 0..nq {
                        if let (JointFriction::Lugre(p), Some(slot)) =
                            (&truth.friction[j], fr.z_slot[j])
                        {
                            tail[slot] = lugre_zdot(qd[j], s[2 * nq + slot], p);
                        }
                    }
                    Ok(())
                };
                match rk4_step_fn(deriv, &x, h, &mut x_next, &mut work) {
                    Ok(()) => x.copy_from_slice(&x_next),
                    Err(Error::Divergence { .. }) => {
                        failed = true;
                        break 'interval;
                    }
                    Err(e) => return Err(e),
                }
            }
            let _ = k;
        }
        if failed
            || x.iter().any(|v| !v.is_finite())
            || x[..nq].iter().any(|v| v.abs() > blowup)
        {
            return Ok((out, Some((i + 1) as f64 * dt)));
        }
        record(&mut fr, &x, i + 1)?;
    }
    Ok((out, None))
}

/// Strict variant for synthesis: any blow-up past 1e3 rad is an error.
pub fn simulate_torques(
    truth: &GroundTruth,
    tau: &[f64],
    dt: f64,
    oversample: usize,
    q0: &[f64],
    qd0: &[f64],
) -> Result<CleanSequence> {
    let (seq, diverged) = simulate_torques_lenient(truth, tau, dt, oversample, q0, qd0, 1e3)?;
    match diverged {
        None => Ok(seq),
        Some(t) => Err(Error::Divergence { stage: format!("synthesis blew up at t = {t:.3} s") }),
    }
}

/// Feedforward torques for tracking the reference: friction states are
/// integrated along the reference velocity, then inverse dynamics closes
/// the loop analytically. Rows follow the reference table.
pub fn reference_torques(truth: &GroundTruth, table_q: &[f64], table_qd: &[f64], table_qdd: &[f64], nq: usize, dt: f64) -> Result<Vec<f64>> {
    truth.validate()?;
    let rows = table_qd.len() / nq;
    let mut tau_f = vec![0.0; rows * nq];
    for (j, fric) in truth.friction.iter().enumerate() {
        let v: Vec<f64> = (0..rows).map(|i| table_qd[i * nq + j]).collect();
        let col = match fric {
            JointFriction::Simple(p) => v.iter().map(|&vi| simple_torque(vi, p)).collect(),
            JointFriction::Stribeck(p) => v.iter().map(|&vi| stribeck_torque(vi, p)).collect(),
            JointFriction::Lugre(p) => lugre_sim_torque(p, &v, dt),
            JointFriction::Gms(p) => gms_sim_torque(p, &v, dt),
        };
        for i in 0..rows {
            tau_f[i * nq + j] = col[i];
        }
    }
    let model = truth.plant.model();
    let lumps = truth.plant.base_lumps();
    let mut tau_m = vec![0.0; rows * nq];
    for i in 0..rows {
        let s = i * nq;
        let mut row = [0.0; MAX_NQ];
        model.inverse_dynamics(
            &lumps,
            &table_q[s..s + nq],
            &table_qd[s..s + nq],
            &table_qdd[s..s + nq],
            &tau_f[s..s + nq],
            &mut row[..nq],
        );
        tau_m[s..s + nq].copy_from_slice(&row[..nq]);
    }
    Ok(tau_m)
}

/// Design-to-dataset synthesis. Feedforward torques are computed by inverse
/// dynamics at the recording instants (friction states integrated along an
/// `oversample`× finer sampling of the reference), then the plant is
/// re-simulated forward under those torques with the same hold the dataset
/// records — so the stored torque series is the complete input signal and
/// an exact model driven by it reproduces the stored states.
pub fn synthesize_sequence(
    truth: &GroundTruth,
    coeffs: &TrajectoryCoeffs,
    dt: f64,
    oversample: usize,
) -> Result<CleanSequence> {
    if coeffs.nq != truth.plant.n_q() {
        return Err(Error::Shape {
            expected: truth.plant.n_q(),
            got: coeffs.nq,
            context: "trajectory joints must match the plant",
        });
    }
    if oversample == 0 {
        return Err(Error::Config("oversample must be at least 1".into()));
    }
    let nq = coeffs.nq;
    let fine_dt = dt / oversample as f64;
    let fine = sample_reference(coeffs, fine_dt)?;
    let tau_fine = reference_torques(truth, &fine.q, &fine.qd, &fine.qdd, nq, fine_dt)?;
    let rows = (fine.t.len() - 1) / oversample + 1;
    let mut tau = Vec::with_capacity(rows * nq);
    for i in 0..rows {
        let s = i * oversample * nq;
        tau.extend_from_slice(&tau_fine[s..s + nq]);
    }
    simulate_torques(truth, &tau, dt, oversample, &fine.q[..nq], &fine.qd[..nq])
}
