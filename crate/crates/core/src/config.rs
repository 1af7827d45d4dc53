//! Run configuration. One TOML file drives the whole pipeline — synthesis,
//! identification, evaluation — and is hashed so that every artifact can
//! name the exact configuration it came from. Defaults here mirror the
//! in-module defaults one for one (pinned by tests), so a minimal config
//! and a fully spelled-out one behave identically.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::NoiseConfig;
use crate::doe::{DoeConfig, MotionLimits};
use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::friction::JointFriction;
use crate::neural::Activation;
use crate::plant::{LinkParams, Plant, PlantKind};
use crate::rnn::TbpttConfig;
use crate::smc::SmcConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// master seed; per-purpose streams are derived from it
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub plant: PlantSection,
    /// ground-truth friction per joint, used by synthesis only
    pub friction: Vec<JointFriction>,
    /// motion limits the designed excitation must respect
    pub limits: MotionLimits,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub doe: DoeConfig,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { q_std: 5e-4, qd_std: 0.0, tau_std: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub kind: PlantKind,
    pub gravity: f64,
    pub links: Vec<LinkParams>,
}

impl PlantSection {
    pub fn build(&self) -> Result<Plant> {
        Plant::new(self.kind, self.links.clone(), self.gravity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub dt: f64,
    /// internal integration steps per sample
    pub oversample: usize,
    pub n_trajectories: usize,
    /// times each trajectory is executed (fresh noise per run)
    pub n_repeats: usize,
    pub n_validation: usize,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        SynthesisSection { dt: 0.004, oversample: 10, n_trajectories: 3, n_repeats: 2, n_validation: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentMethod {
    Simple,
    Stribeck,
    Lugre,
    Gms,
    StaticNn,
    Rnn,
    Lvm,
}

impl IdentMethod {
    pub fn name(&self) -> &'static str {
        match self {
            IdentMethod::Simple => "simple",
            IdentMethod::Stribeck => "stribeck",
            IdentMethod::Lugre => "lugre",
            IdentMethod::Gms => "gms",
            IdentMethod::StaticNn => "static_nn",
            IdentMethod::Rnn => "rnn",
            IdentMethod::Lvm => "lvm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    pub method: IdentMethod,
    pub filter: FilterSection,
    pub simplex: SimplexSection,
    pub lugre_init: LugreInitSection,
    pub gms_init: GmsInitSection,
    pub static_nn: StaticNnSection,
    pub rnn: RnnSection,
    pub lvm: LvmSection,
}

impl Default for IdentifySection {
    fn default() -> Self {
        IdentifySection {
            method: IdentMethod::Lvm,
            filter: FilterSection::default(),
            simplex: SimplexSection::default(),
            lugre_init: LugreInitSection::default(),
            gms_init: GmsInitSection::default(),
            static_nn: StaticNnSection::default(),
            rnn: RnnSection::default(),
            lvm: LvmSection::default(),
        }
    }
}

/// Zero-phase Butterworth for the kinematic preprocessing; the sample rate
/// comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub order: usize,
    pub cutoff_hz: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection { order: 4, cutoff_hz: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexSection {
    pub max_evals: usize,
    pub diameter_tol: f64,
}

impl Default for SimplexSection {
    fn default() -> Self {
        SimplexSection { max_evals: 4000, diameter_tol: 1e-10 }
    }
}

impl SimplexSection {
    pub fn to_options(&self) -> crate::classical::SimplexOptions {
        crate::classical::SimplexOptions { max_evals: self.max_evals, diameter_tol: self.diameter_tol }
    }
}

/// Starting values for the LuGre dynamic parameters; the static curve part
/// (Coulomb/stiction/Stribeck velocity/shape) is seeded from a Stribeck
/// prefit on the same residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LugreInitSection {
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for LugreInitSection {
    fn default() -> Self {
        LugreInitSection { sigma0: 100.0, sigma1: 1.0, sigma2: 0.5 }
    }
}

/// Starting values for the GMS element structure; the shared Stribeck curve
/// is seeded from a Stribeck prefit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmsInitSection {
    pub stiffness: Vec<f64>,
    pub weights: Vec<f64>,
    pub attraction: f64,
}

impl Default for GmsInitSection {
    fn default() -> Self {
        GmsInitSection { stiffness: vec![800.0, 300.0, 80.0], weights: vec![0.5, 0.3, 0.2], attraction: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticNnSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for StaticNnSection {
    fn default() -> Self {
        StaticNnSection { hidden: vec![32, 32], epochs: 400, learning_rate: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnnSection {
    pub width: usize,
    pub window: usize,
    pub burn_in: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for RnnSection {
    fn default() -> Self {
        let d = TbpttConfig::default();
        RnnSection {
            width: 32,
            window: d.window,
            burn_in: d.burn_in,
            batch_size: d.batch_size,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
        }
    }
}

impl RnnSection {
    pub fn to_tbptt(&self, seed: u64) -> TbpttConfig {
        TbpttConfig {
            window: self.window,
            burn_in: self.burn_in,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LvmSection {
    pub n_z: usize,
    pub friction_hidden: Vec<usize>,
    pub latent_hidden: Vec<usize>,
    pub activation: Activation,
    /// include q̇ in the observation vector
    pub observe_qdot: bool,
    /// keep the lumped inertial parameters at their least-squares estimate
    pub freeze_lumps: bool,
    pub em: EmSection,
}

impl Default for LvmSection {
    fn default() -> Self {
        LvmSection {
            n_z: 2,
            friction_hidden: vec![32, 32],
            latent_hidden: vec![32],
            activation: Activation::Mish,
            observe_qdot: false,
            freeze_lumps: false,
            em: EmSection::default(),
        }
    }
}

/// EM hyperparameters, mirrored field for field from the solver defaults
/// (equality is pinned by a test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmSection {
    pub max_iters: usize,
    pub n_particles: usize,
    pub ess_threshold: f64,
    pub n_smooth_paths: usize,
    pub backward_sim: bool,
    pub m_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_lr_halvings: usize,
    pub convergence_consecutive: usize,
    pub convergence_stderr_factor: f64,
    pub min_delta: f64,
    pub checkpoint_every: usize,
    pub q_floor: f64,
    pub r_floor: f64,
    pub p0_floor: f64,
}

impl Default for EmSection {
    fn default() -> Self {
        let d = EmConfig::default();
        EmSection {
            max_iters: d.max_iters,
            n_particles: d.n_particles,
            ess_threshold: d.ess_threshold,
            n_smooth_paths: d.n_smooth_paths,
            backward_sim: d.backward_sim,
            m_epochs: d.m_epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            max_lr_halvings: d.max_lr_halvings,
            convergence_consecutive: d.convergence_consecutive,
            convergence_stderr_factor: d.convergence_stderr_factor,
            min_delta: d.min_delta,
            checkpoint_every: d.checkpoint_every,
            q_floor: d.q_floor,
            r_floor: d.r_floor,
            p0_floor: d.p0_floor,
        }
    }
}

impl EmSection {
    pub fn to_em_config(&self, freeze_head: Option<Range<usize>>) -> EmConfig {
        EmConfig {
            max_iters: self.max_iters,
            n_particles: self.n_particles,
            ess_threshold: self.ess_threshold,
            n_smooth_paths: self.n_smooth_paths,
            backward_sim: self.backward_sim,
            m_epochs: self.m_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_lr_halvings: self.max_lr_halvings,
            convergence_consecutive: self.convergence_consecutive,
            convergence_stderr_factor: self.convergence_stderr_factor,
            min_delta: self.min_delta,
            freeze_head,
            checkpoint_every: self.checkpoint_every,
            q_floor: self.q_floor,
            r_floor: self.r_floor,
            p0_floor: self.p0_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// prediction horizon for the headline score (seconds)
    pub horizon_s: f64,
    /// particle filter settings for the LVM friction-curve export
    pub curve_particles: usize,
    pub curve_ess_threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let d = SmcConfig::default();
        EvaluateSection { horizon_s: 10.0, curve_particles: d.n_particles, curve_ess_threshold: d.ess_threshold }
    }
}

impl EvaluateSection {
    pub fn smc(&self) -> SmcConfig {
        SmcConfig { n_particles: self.curve_particles, ess_threshold: self.curve_ess_threshold }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, hash, parse and validate. The hash covers the raw bytes, so a
    /// reformatted but equivalent file counts as a different configuration.
    pub fn load(path: &Path) -> Result<(RunConfig, String)> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            reason: "config is not UTF-8".into(),
        })?;
        let cfg = RunConfig::parse(text)?;
        Ok((cfg, hash_hex(&bytes)))
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant.build()?;
        let nq = plant.n_q();
        if self.friction.len() != nq {
            return Err(Error::Config(format!(
                "{} friction entries for a {nq}-joint plant",
                self.friction.len()
            )));
        }
        for f in &self.friction {
            f.validate()?;
        }
        self.limits.validate()?;
        if self.limits.nq() != nq {
            return Err(Error::Config(format!(
                "limits cover {} joints but the plant has {nq}",
                self.limits.nq()
            )));
        }
        self.noise.validate()?;
        let s = &self.synthesis;
        if !(s.dt > 0.0) || s.oversample == 0 {
            return Err(Error::Config("synthesis needs dt > 0 and oversample ≥ 1".into()));
        }
        if s.n_trajectories == 0 || s.n_repeats == 0 || s.n_validation == 0 {
            return Err(Error::Config(
                "synthesis needs at least one trajectory, one repeat and one validation run".into(),
            ));
        }
        let id = &self.identify;
        if id.filter.order == 0 || !(id.filter.cutoff_hz > 0.0) {
            return Err(Error::Config("filter needs order ≥ 1 and a positive cutoff".into()));
        }
        if id.static_nn.hidden.is_empty() || id.static_nn.epochs == 0 {
            return Err(Error::Config("static_nn needs hidden layers and epochs".into()));
        }
        if id.rnn.width == 0 || id.rnn.window <= id.rnn.burn_in {
            return Err(Error::Config("rnn needs width ≥ 1 and window > burn_in".into()));
        }
        if id.lvm.friction_hidden.is_empty() {
            return Err(Error::Config("lvm needs at least one friction hidden layer".into()));
        }
        if id.gms_init.stiffness.len() != id.gms_init.weights.len()
            || id.gms_init.stiffness.is_empty()
        {
            return Err(Error::Config("gms_init stiffness/weights must match and be nonempty".into()));
        }
        if !(self.evaluate.horizon_s > 0.0) || self.evaluate.curve_particles == 0 {
            return Err(Error::Config("evaluate needs a positive horizon and particles".into()));
        }
        Ok(())
    }
}

pub fn hash_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
