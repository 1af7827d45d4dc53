//! Open-loop prediction evaluation. Every identified model — conventional
//! fits, the neural baselines, and the latent-variable model — is rolled
//! forward deterministically from the measured initial state under the
//! measured motor torques, with no feedback, and scored against the
//! measurements. Error channels pool position and velocity in SI units;
//! absolute values are therefore a convention of this artifact and only
//! orderings are comparable across studies.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_params::BaseReduction;
use crate::classical::StaticNn;
use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::friction::{
    GmsState, JointFriction, gms_step, lugre_torque, lugre_zdot, simple_torque, stribeck_torque,
};
use crate::neural::MlpScratch;
use crate::plant::{MAX_NQ, PlantModel};
use crate::pssm::{NeuralPssm, Rk4Work, rk4_step_fn};
use crate::rnn::RnnFriction;
use crate::sim::{GroundTruth, simulate_torques_lenient};
use crate::smc::{SmcConfig, filter_pass};
use crate::ssm::{GaussianSsm, ThetaLayout};

/// |q| beyond this many radians counts as a blown-up prediction.
pub const BLOWUP_THRESHOLD: f64 = 100.0;

/// Internal integration substeps per sample for continuous-time models.
const EVAL_OVERSAMPLE: usize = 10;

/// The friction part of a conventionally identified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionFit {
    /// simple / Stribeck / LuGre / GMS parameters, one per joint
    Parametric { joints: Vec<JointFriction> },
    /// feedforward net per joint, velocity in, torque out
    StaticNn { joints: Vec<StaticNn> },
    /// one recurrent net driving all joints
    Rnn { net: RnnFriction },
}

impl FrictionFit {
    fn n_q(&self) -> usize {
        match self {
            FrictionFit::Parametric { joints } => joints.len(),
            FrictionFit::StaticNn { joints } => joints.len(),
            FrictionFit::Rnn { net } => net.spec.nq,
        }
    }
}

/// Rigid-body lumps identified by least squares plus a fitted friction
/// model. `theta_base` is in the dynamics engine's own base-lump order,
/// which `validate` pins against the reduction's column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalModel {
    pub plant: PlantModel,
    pub reduction: BaseReduction,
    pub theta_base: Vec<f64>,
    pub friction: FrictionFit,
}

impl ClassicalModel {
    pub fn validate(&self) -> Result<()> {
        // the engine consumes base lumps directly, so the reduction must be
        // the inertial-only one of this very plant (its base order is pinned
        // to the engine's by construction)
        if self.reduction.col_names != self.plant.regressor_col_names(false)
            || self.reduction.rank != self.plant.n_lumps()
        {
            return Err(Error::Config(
                "parameter reduction does not belong to this plant's inertial regressor".into(),
            ));
        }
        if self.theta_base.len() != self.plant.n_lumps() {
            return Err(Error::Shape {
                expected: self.plant.n_lumps(),
                got: self.theta_base.len(),
                context: "base parameter vector",
            });
        }
        // no physicality check on the fitted coefficients: least squares is
        // free to return, say, negative viscous friction, and the rollout's
        // divergence handling is what judges such a model
        if self.friction.n_q() != self.plant.n_q() {
            return Err(Error::Shape {
                expected: self.plant.n_q(),
                got: self.friction.n_q(),
                context: "friction joint count",
            });
        }
        Ok(())
    }
}

/// The learned latent-variable model: architecture plus the full parameter
/// vector (head | log process noise | log measurement noise | initial mean |
/// initial log-variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvmModel {
    pub pssm: NeuralPssm,
    pub theta: Vec<f64>,
}

impl LvmModel {
    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout::of(&self.pssm)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layout().n_total();
        if self.theta.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.theta.len(),
                context: "LVM parameter vector",
            });
        }
        Ok(())
    }
}

/// Anything the benchmark can put in a table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModel {
    Truth { truth: GroundTruth },
    Classical { model: ClassicalModel },
    Lvm { model: LvmModel },
}

impl EvalModel {
    pub fn n_q(&self) -> usize {
        match self {
            EvalModel::Truth { truth } => truth.plant.n_q(),
            EvalModel::Classical { model } => model.plant.n_q(),
            EvalModel::Lvm { model } => model.pssm.n_q(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EvalModel::Truth { truth } => truth.validate(),
            EvalModel::Classical { model } => model.validate(),
            EvalModel::Lvm { model } => model.validate(),
        }
    }
}

/// Deterministic open-loop rollout. `q`/`qd` hold however many rows were
/// produced before truncation; `first_divergence_t` is set iff the state
/// blew past the threshold (mirrored by `diverged`).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub nq: usize,
    pub dt: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub diverged: bool,
    pub first_divergence_t: Option<f64>,
}

impl Prediction {
    pub fn rows(&self) -> usize {
        self.q.len() / self.nq.max(1)
    }
}

/// Fitted-friction state machine for forward simulation: LuGre bristles ride
/// in the RK4 state, GMS elements and the RNN hold their torque constant
/// over (sub)steps, static nets evaluate pointwise.
struct FitSim<'m> {
    fit: &'m FrictionFit,
    z_slot: Vec<Option<usize>>,
    n_z: usize,
    gms: Vec<Option<GmsState>>,
    gms_tau: Vec<f64>,
    rnn_h: Vec<f64>,
    rnn_tau: Vec<f64>,
    nn_scratch: Vec<RefCell<MlpScratch>>,
}

impl<'m> FitSim<'m> {
    fn new(fit: &'m FrictionFit, nq: usize) -> FitSim<'m> {
        let mut sim = FitSim {
            fit,
            z_slot: vec![None; nq],
            n_z: 0,
            gms: (0..nq).map(|_| None).collect(),
            gms_tau: vec![0.0; nq],
            rnn_h: vec![],
            rnn_tau: vec![0.0; nq],
            nn_scratch: vec![],
        };
        match fit {
            FrictionFit::Parametric { joints } => {
                for (j, m) in joints.iter().enumerate() {
                    match m {
                        JointFriction::Lugre(_) => {
                            sim.z_slot[j] = Some(sim.n_z);
                            sim.n_z += 1;
                        }
                        JointFriction::Gms(p) => sim.gms[j] = Some(p.init_state()),
                        _ => {}
                    }
                }
            }
            FrictionFit::StaticNn { joints } => {
                sim.nn_scratch =
                    joints.iter().map(|n| RefCell::new(MlpScratch::new(&n.spec))).collect();
            }
            FrictionFit::Rnn { net } => sim.rnn_h = net.state0(),
        }
        sim
    }

    /// Called once per recorded step before integrating it: the RNN is a
    /// discrete-time model at the sample rate, so its state advances here.
    fn begin_step(&mut self, qd: &[f64]) {
        if let FrictionFit::Rnn { net } = self.fit {
            let mut out = [0.0; MAX_NQ];
            net.step(qd, &mut self.rnn_h, &mut out[..qd.len()]);
            self.rnn_tau[..qd.len()].copy_from_slice(&out[..qd.len()]);
        }
    }

    /// Advance GMS elements by a substep with frozen velocity.
    fn substep(&mut self, qd: &[f64], h: f64) {
        if let FrictionFit::Parametric { joints } = self.fit {
            for (j, m) in joints.iter().enumerate() {
                if let (JointFriction::Gms(p), Some(st)) = (m, self.gms[j].as_mut()) {
                    self.gms_tau[j] = gms_step(qd[j], st, p, h);
                }
            }
        }
    }

    fn torque(&self, j: usize, qd_j: f64, x: &[f64], nq: usize) -> f64 {
        match self.fit {
            FrictionFit::Parametric { joints } => match &joints[j] {
                JointFriction::Simple(p) => simple_torque(qd_j, p),
                JointFriction::Stribeck(p) => stribeck_torque(qd_j, p),
                JointFriction::Lugre(p) => {
                    lugre_torque(qd_j, x[2 * nq + self.z_slot[j].unwrap()], p)
                }
                JointFriction::Gms(_) => self.gms_tau[j],
            },
            FrictionFit::StaticNn { joints } => {
                joints[j].torque(qd_j, &mut self.nn_scratch[j].borrow_mut())
            }
            FrictionFit::Rnn { .. } => self.rnn_tau[j],
        }
    }

    fn max_rate(&self, qd: &[f64]) -> f64 {
        if let FrictionFit::Parametric { joints } = self.fit {
            joints
                .iter()
                .zip(qd)
                .map(|(m, &v)| match m {
                    JointFriction::Lugre(p) => {
                        p.sigma0 * v.abs()
                            / crate::friction::stribeck_level(
                                p.coulomb, p.stiction, p.vs, p.delta, v,
                            )
                    }
                    _ => 0.0,
                })
                .fold(0.0, f64::max)
        } else {
            0.0
        }
    }
}

fn simulate_classical(m: &ClassicalModel, seq: &Sequence, steps: usize) -> Result<Prediction> {
    m.validate()?;
    let nq = m.plant.n_q();
    let mut fr = FitSim::new(&m.friction, nq);
    let n_x = 2 * nq + fr.n_z;
    let mut x = vec![0.0; n_x];
    x[..nq].copy_from_slice(&seq.q[..nq]);
    x[nq..2 * nq].copy_from_slice(&seq.qd[..nq]);
    let mut x_next = vec![0.0; n_x];
    let mut work = Rk4Work::new(n_x);
    let fine_dt = seq.dt / EVAL_OVERSAMPLE as f64;

    let mut pred = Prediction {
        nq,
        dt: seq.dt,
        q: Vec::with_capacity(steps * nq),
        qd: Vec::with_capacity(steps * nq),
        diverged: false,
        first_divergence_t: None,
    };
    pred.q.extend_from_slice(&x[..nq]);
    pred.qd.extend_from_slice(&x[nq..2 * nq]);

    'outer: for i in 0..steps - 1 {
        let u = &seq.tau[i * nq..(i + 1) * nq];
        let qd_now: Vec<f64> = x[nq..2 * nq].to_vec();
        fr.begin_step(&qd_now);
        for _ in 0..EVAL_OVERSAMPLE {
            let rate = fr.max_rate(&x[nq..2 * nq]);
            let n_sub = ((fine_dt * rate / 0.2).ceil() as usize).clamp(1, 1000);
            let h = fine_dt / n_sub as f64;
            for _ in 0..n_sub {
                let mut qd_sub = [0.0; MAX_NQ];
                qd_sub[..nq].copy_from_slice(&x[nq..2 * nq]);
                fr.substep(&qd_sub[..nq], h);
                let deriv = |s: &[f64], dx: &mut [f64]| -> Result<()> {
                    let (q, qd) = (&s[..nq], &s[nq..2 * nq]);
                    let mut tau_f = [0.0; MAX_NQ];
                    for j in 0..nq {
                        tau_f[j] = fr.torque(j, qd[j], s, nq);
                    }
                    dx[..nq].copy_from_slice(qd);
                    let (head, tail) = dx.split_at_mut(2 * nq);
                    m.plant.forward_dynamics(&m.theta_base, q, qd, u, &tau_f[..nq], &mut head[nq..])?;
                    if let FrictionFit::Parametric { joints } = &m.friction {
                        for j in 0..nq {
                            if let (JointFriction::Lugre(p), Some(slot)) = (&joints[j], fr.z_slot[j])
                            {
                                tail[slot] = lugre_zdot(qd[j], s[2 * nq + slot], p);
                            }
                        }
                    }
                    Ok(())
                };
                match rk4_step_fn(deriv, &x, h, &mut x_next, &mut work) {
                    Ok(()) => x.copy_from_slice(&x_next),
                    Err(Error::Divergence { .. }) => {
                        pred.diverged = true;
                        pred.first_divergence_t = Some((i + 1) as f64 * seq.dt);
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) || x[..nq].iter().any(|v| v.abs() > BLOWUP_THRESHOLD) {
            pred.diverged = true;
            pred.first_divergence_t = Some((i + 1) as f64 * seq.dt);
            break;
        }
        pred.q.extend_from_slice(&x[..nq]);
        pred.qd.extend_from_slice(&x[nq..2 * nq]);
    }
    Ok(pred)
}

fn simulate_lvm(m: &LvmModel, seq: &Sequence, steps: usize) -> Result<Prediction> {
    m.validate()?;
    let nq = m.pssm.n_q();
    if (m.pssm.dt - seq.dt).abs() > 1e-9 * seq.dt {
        return Err(Error::Config(format!(
            "model was learned at Δt = {} but the sequence is sampled at {}",
            m.pssm.dt, seq.dt
        )));
    }
    let layout = m.layout();
    let head = layout.head(&m.theta);
    let n_x = layout.n_x;
    let mut x = vec![0.0; n_x];
    x[..nq].copy_from_slice(&seq.q[..nq]);
    x[nq..2 * nq].copy_from_slice(&seq.qd[..nq]);
    // true open-loop prediction sees no measurements after t = 0, so the
    // latent coordinates start at their learned prior mean
    x[2 * nq..].copy_from_slice(&layout.init_mean(&m.theta)[2 * nq..]);
    let mut x_next = vec![0.0; n_x];
    let mut scratch = m.pssm.make_scratch();

    let mut pred = Prediction {
        nq,
        dt: seq.dt,
        q: Vec::with_capacity(steps * nq),
        qd: Vec::with_capacity(steps * nq),
        diverged: false,
        first_divergence_t: None,
    };
    pred.q.extend_from_slice(&x[..nq]);
    pred.qd.extend_from_slice(&x[nq..2 * nq]);

    for i in 0..steps - 1 {
        let u = &seq.tau[i * nq..(i + 1) * nq];
        match m.pssm.transition_mean(head, &x, u, &mut x_next, &mut scratch) {
            Ok(()) => x.copy_from_slice(&x_next),
            Err(Error::Divergence { .. }) => {
                pred.diverged = true;
                pred.first_divergence_t = Some((i + 1) as f64 * seq.dt);
                break;
            }
            Err(e) => return Err(e),
        }
        if x.iter().any(|v| !v.is_finite()) || x[..nq].iter().any(|v| v.abs() > BLOWUP_THRESHOLD) {
            pred.diverged = true;
            pred.first_divergence_t = Some((i + 1) as f64 * seq.dt);
            break;
        }
        pred.q.extend_from_slice(&x[..nq]);
        pred.qd.extend_from_slice(&x[nq..2 * nq]);
    }
    Ok(pred)
}

/// Roll `model` forward for `steps` rows (≥ 2, ≤ the sequence length) from
/// the sequence's initial state under its recorded torques.
pub fn open_loop_simulate(model: &EvalModel, seq: &Sequence, steps: usize) -> Result<Prediction> {
    seq.validate()?;
    if model.n_q() != seq.nq {
        return Err(Error::Shape { expected: seq.nq, got: model.n_q(), context: "model joints" });
    }
    if steps < 2 || steps > seq.t_len() {
        return Err(Error::Config(format!(
            "horizon of {steps} rows is outside 2..={}",
            seq.t_len()
        )));
    }
    match model {
        EvalModel::Truth { truth } => {
            let nq = seq.nq;
            let (clean, diverged) = simulate_torques_lenient(
                truth,
                &seq.tau[..steps * nq],
                seq.dt,
                EVAL_OVERSAMPLE,
                &seq.q[..nq],
                &seq.qd[..nq],
                BLOWUP_THRESHOLD,
            )?;
            Ok(Prediction {
                nq,
                dt: seq.dt,
                q: clean.q,
                qd: clean.qd,
                diverged: diverged.is_some(),
                first_divergence_t: diverged,
            })
        }
        EvalModel::Classical { model } => simulate_classical(model, seq, steps),
        EvalModel::Lvm { model } => simulate_lvm(model, seq, steps),
    }
}

/// Pooled mean squared / mean absolute error over the first `steps` rows,
/// position and velocity channels together.
pub fn score(pred: &Prediction, meas: &Sequence, steps: usize) -> Result<(f64, f64)> {
    if pred.rows() < steps || meas.t_len() < steps {
        return Err(Error::Shape {
            expected: steps,
            got: pred.rows().min(meas.t_len()),
            context: "scoring horizon",
        });
    }
    let n = steps * pred.nq;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, m) in [(&pred.q, &meas.q), (&pred.qd, &meas.qd)] {
        for i in 0..n {
            let e = p[i] - m[i];
            se += e * e;
            ae += e.abs();
        }
    }
    let count = (2 * n) as f64;
    Ok((se / count, ae / count))
}

/// Per-joint (MSE, MAE), same pooling of q and q̇.
pub fn score_per_joint(pred: &Prediction, meas: &Sequence, steps: usize) -> Result<Vec<(f64, f64)>> {
    if pred.rows() < steps || meas.t_len() < steps {
        return Err(Error::Shape {
            expected: steps,
            got: pred.rows().min(meas.t_len()),
            context: "scoring horizon",
        });
    }
    let nq = pred.nq;
    let mut out = vec![(0.0, 0.0); nq];
    for (p, m) in [(&pred.q, &meas.q), (&pred.qd, &meas.qd)] {
        for i in 0..steps {
            for j in 0..nq {
                let e = p[i * nq + j] - m[i * nq + j];
                out[j].0 += e * e;
                out[j].1 += e.abs();
            }
        }
    }
    let count = (2 * steps) as f64;
    Ok(out.into_iter().map(|(se, ae)| (se / count, ae / count)).collect())
}

/// Time-ordered (velocity, friction torque) samples for one joint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrictionCurve {
    pub joint: usize,
    pub points: Vec<(f64, f64)>,
}

fn parametric_curves(joints: &[JointFriction], seq: &Sequence) -> Vec<FrictionCurve> {
    let nq = seq.nq;
    joints
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let v: Vec<f64> = (0..seq.t_len()).map(|i| seq.qd[i * nq + j]).collect();
            let tau = match m {
                JointFriction::Simple(p) => v.iter().map(|&vi| simple_torque(vi, p)).collect(),
                JointFriction::Stribeck(p) => v.iter().map(|&vi| stribeck_torque(vi, p)).collect(),
                JointFriction::Lugre(p) => crate::classical::lugre_sim_torque(p, &v, seq.dt),
                JointFriction::Gms(p) => crate::classical::gms_sim_torque(p, &v, seq.dt),
            };
            FrictionCurve { joint: j, points: v.into_iter().zip(tau).collect() }
        })
        .collect()
}

/// Friction characteristics along a measured sequence, one curve per joint,
/// preserving time order so hysteresis loops stay visible. Dynamic models
/// integrate their internal state along the measured velocities; the LVM's
/// states come from a particle-filter pass over the measurements, so its
/// curve is plotted against the filtered velocity estimate.
pub fn friction_curve(
    model: &EvalModel,
    seq: &Sequence,
    smc: &SmcConfig,
    seed: u64,
) -> Result<Vec<FrictionCurve>> {
    seq.validate()?;
    if model.n_q() != seq.nq {
        return Err(Error::Shape { expected: seq.nq, got: model.n_q(), context: "model joints" });
    }
    let nq = seq.nq;
    match model {
        EvalModel::Truth { truth } => Ok(parametric_curves(&truth.friction, seq)),
        EvalModel::Classical { model } => match &model.friction {
            FrictionFit::Parametric { joints } => Ok(parametric_curves(joints, seq)),
            FrictionFit::StaticNn { joints } => Ok(joints
                .iter()
                .enumerate()
                .map(|(j, net)| {
                    let mut scratch = MlpScratch::new(&net.spec);
                    let points = (0..seq.t_len())
                        .map(|i| {
                            let v = seq.qd[i * nq + j];
                            (v, net.torque(v, &mut scratch))
                        })
                        .collect();
                    FrictionCurve { joint: j, points }
                })
                .collect()),
            FrictionFit::Rnn { net } => {
                let mut h = net.state0();
                let mut out = vec![0.0; nq];
                let mut curves: Vec<FrictionCurve> = (0..nq)
                    .map(|j| FrictionCurve { joint: j, points: Vec::with_capacity(seq.t_len()) })
                    .collect();
                for i in 0..seq.t_len() {
                    let v = &seq.qd[i * nq..(i + 1) * nq];
                    net.step(v, &mut h, &mut out);
                    for j in 0..nq {
                        curves[j].points.push((v[j], out[j]));
                    }
                }
                Ok(curves)
            }
        },
        EvalModel::Lvm { model } => {
            model.validate()?;
            let layout = model.layout();
            let n_y = model.pssm.n_y();
            let mut ys = Vec::with_capacity(seq.t_len() * n_y);
            for i in 0..seq.t_len() {
                ys.extend_from_slice(&seq.q[i * nq..(i + 1) * nq]);
                if model.pssm.observe_qdot {
                    ys.extend_from_slice(&seq.qd[i * nq..(i + 1) * nq]);
                }
            }
            let ssm_seq =
                crate::ssm::Sequence::new(seq.t_len(), n_y, nq, ys, seq.tau.clone())?;
            let history = filter_pass(&model.pssm, &layout, &model.theta, &ssm_seq, smc, seed)?;
            let head = layout.head(&model.theta);
            let mut scratch = model.pssm.make_scratch();
            let mut x_hat = vec![0.0; layout.n_x];
            let mut tau = vec![0.0; nq];
            let mut curves: Vec<FrictionCurve> = (0..nq)
                .map(|j| FrictionCurve { joint: j, points: Vec::with_capacity(seq.t_len()) })
                .collect();
            for t in 0..seq.t_len() {
                history.filtered_mean(t, &mut x_hat);
                model.pssm.friction_torque(head, &x_hat, &mut scratch, &mut tau);
                for j in 0..nq {
                    curves[j].points.push((x_hat[nq + j], tau[j]));
                }
            }
            Ok(curves)
        }
    }
}

/// One benchmark table row. Scores are present only for the horizons the
/// prediction actually covered; a diverged model keeps its flag and the
/// first-divergence time instead of full-horizon numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub name: String,
    pub diverged: bool,
    pub first_divergence_t: Option<f64>,
    pub horizon_mse: Option<f64>,
    pub horizon_mae: Option<f64>,
    pub full_mse: Option<f64>,
    pub full_mae: Option<f64>,
    pub per_joint_horizon: Vec<(f64, f64)>,
    pub per_joint_full: Vec<(f64, f64)>,
    /// |q̂ − q| per produced row, row-major t × nq
    pub abs_err_q: Vec<f64>,
    pub rows_produced: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub horizon_s: f64,
    pub dt: f64,
    pub nq: usize,
    pub rows: Vec<ModelReport>,
}

fn empty_row(name: &str, err: Option<String>) -> ModelReport {
    ModelReport {
        name: name.to_string(),
        diverged: false,
        first_divergence_t: None,
        horizon_mse: None,
        horizon_mae: None,
        full_mse: None,
        full_mae: None,
        per_joint_horizon: vec![],
        per_joint_full: vec![],
        abs_err_q: vec![],
        rows_produced: 0,
        error: err,
    }
}

fn evaluate_one(name: &str, model: &EvalModel, seq: &Sequence, horizon_steps: usize) -> ModelReport {
    let pred = match open_loop_simulate(model, seq, seq.t_len()) {
        Ok(p) => p,
        Err(e) => return empty_row(name, Some(e.to_string())),
    };
    let nq = seq.nq;
    let rows = pred.rows();
    let mut report = empty_row(name, None);
    report.name = name.to_string();
    report.diverged = pred.diverged;
    report.first_divergence_t = pred.first_divergence_t;
    report.rows_produced = rows;
    report.abs_err_q = (0..rows * nq).map(|i| (pred.q[i] - seq.q[i]).abs()).collect();
    if rows >= horizon_steps {
        if let Ok((mse, mae)) = score(&pred, seq, horizon_steps) {
            report.horizon_mse = Some(mse);
            report.horizon_mae = Some(mae);
        }
        report.per_joint_horizon = score_per_joint(&pred, seq, horizon_steps).unwrap_or_default();
    }
    if rows == seq.t_len() {
        if let Ok((mse, mae)) = score(&pred, seq, rows) {
            report.full_mse = Some(mse);
            report.full_mae = Some(mae);
        }
        report.per_joint_full = score_per_joint(&pred, seq, rows).unwrap_or_default();
    }
    report
}

/// Evaluate every model on the validation sequence. Rows keep the input
/// order; failures occupy their row with an error message so the rest of
/// the table still comes out.
pub fn benchmark_report(
    models: &[(String, EvalModel)],
    validation: &Sequence,
    horizon_s: f64,
) -> Result<PredictionReport> {
    validation.validate()?;
    if !(horizon_s > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon_s}")));
    }
    let horizon_steps =
        (((horizon_s / validation.dt) + 1e-9).floor() as usize + 1).min(validation.t_len());
    let rows: Vec<ModelReport> = models
        .par_iter()
        .map(|(name, model)| evaluate_one(name, model, validation, horizon_steps))
        .collect();
    Ok(PredictionReport { horizon_s, dt: validation.dt, nq: validation.nq, rows })
}
