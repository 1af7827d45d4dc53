//! Bootstrap particle filter and trajectory smoothers for [`GaussianSsm`] models.
//!
//! The filter is deterministic given a seed: every random draw comes from a
//! counter-based stream keyed by (seed, time, particle), so results are
//! bit-identical no matter how many rayon workers execute the particle loop.
//! Stream ids: `(t << 32) | i` for propagating particle i into time t (t = 0
//! draws from the initial density), `(t << 32) | RESAMPLE_SLOT` for the single
//! resampling uniform entering time t, `BACKWARD_STREAM_BIT | (t << 32) | m`
//! for backward-simulation draws of path m, and `PATH_SELECT_STREAM` when
//! subsampling genealogy paths.

use rand::Rng;
use rayon::prelude::*;

use crate::ssm::{
    emission_logpdf, sample_initial, sample_transition, transition_logpdf, GaussianSsm, Sequence,
    ThetaLayout,
};
use crate::util::{logsumexp, stream_rng};
use crate::{Error, Result};

/// Particle-index slot reserved for the per-step resampling uniform.
pub const RESAMPLE_SLOT: u64 = u32::MAX as u64;
/// High bit marking backward-simulation streams.
pub const BACKWARD_STREAM_BIT: u64 = 1 << 63;
/// Stream used to pick genealogy paths when subsampling.
pub const PATH_SELECT_STREAM: u64 = 1 << 62;

/// Particles processed per rayon task. Values do not depend on this; it only
/// balances scheduling overhead against parallelism.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Resample when ESS drops below this fraction of the particle count.
    pub ess_threshold: f64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig { n_particles: 200, ess_threshold: 0.5 }
    }
}

/// Everything the filter produced: per-step particle clouds, normalized
/// log-weights, the ancestry needed to reconstruct genealogies, and
/// per-step diagnostics.
#[derive(Debug, Clone)]
pub struct FilterHistory {
    pub t_len: usize,
    pub n_particles: usize,
    pub n_x: usize,
    /// t_len × n_particles × n_x, row-major.
    pub particles: Vec<f64>,
    /// t_len × n_particles normalized log-weights.
    pub log_weights: Vec<f64>,
    /// (t_len − 1) × n_particles: ancestors[t−1][i] is the index at time t−1
    /// of the parent of particle i at time t (identity when not resampling).
    pub ancestors: Vec<usize>,
    pub loglik: f64,
    /// Post-update effective sample size at each step.
    pub ess: Vec<f64>,
    /// Incremental log-likelihood contribution of each step.
    pub step_loglik: Vec<f64>,
    /// Whether resampling happened on entry to each step (always false at 0).
    pub resampled: Vec<bool>,
}

impl FilterHistory {
    #[inline]
    pub fn particles_at(&self, t: usize) -> &[f64] {
        let row = self.n_particles * self.n_x;
        &self.particles[t * row..(t + 1) * row]
    }

    #[inline]
    pub fn particle(&self, t: usize, i: usize) -> &[f64] {
        let row = self.n_particles * self.n_x;
        &self.particles[t * row + i * self.n_x..t * row + (i + 1) * self.n_x]
    }

    #[inline]
    pub fn log_weights_at(&self, t: usize) -> &[f64] {
        &self.log_weights[t * self.n_particles..(t + 1) * self.n_particles]
    }

    /// Normalized linear weights at step t.
    pub fn weights_at(&self, t: usize) -> Vec<f64> {
        self.log_weights_at(t).iter().map(|lw| lw.exp()).collect()
    }

    /// Self-normalized posterior mean E[x_t | y_0..t].
    pub fn filtered_mean(&self, t: usize, out: &mut [f64]) {
        out.fill(0.0);
        let lw = self.log_weights_at(t);
        for i in 0..self.n_particles {
            let w = lw[i].exp();
            let x = self.particle(t, i);
            for (o, &xi) in out.iter_mut().zip(x) {
                *o += w * xi;
            }
        }
    }
}

/// ESS = 1 / Σ wᵢ² for normalized linear weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut comp = 0.0;
    for &w in weights {
        let term = w * w - comp;
        let sum = acc + term;
        comp = (sum - acc) - term;
        acc = sum;
    }
    1.0 / acc
}

fn ess_from_log(lw: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut comp = 0.0;
    for &l in lw {
        let term = (2.0 * l).exp() - comp;
        let sum = acc + term;
        comp = (sum - acc) - term;
        acc = sum;
    }
    1.0 / acc
}

/// Systematic resampling with the stratified positions (i + u0)/M over the
/// cumulative weights, taking the first index whose cumulative sum reaches
/// each position. `ancestors.len()` may differ from `weights.len()` (used to
/// subsample M paths from N particles). `u0` must lie in [0, 1).
pub fn systematic_resample(weights: &[f64], u0: f64, ancestors: &mut [usize]) {
    let n = weights.len();
    let m = ancestors.len();
    debug_assert!(n > 0 && m > 0);
    debug_assert!((0.0..1.0).contains(&u0));
    let mut j = 0usize;
    let mut cum = weights[0];
    for (i, slot) in ancestors.iter_mut().enumerate() {
        let target = (i as f64 + u0) / m as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        *slot = j;
    }
}

/// One bootstrap SIR pass over a sequence. Observations start at t = 0: the
/// initial particles are drawn from the model's initial density and weighted
/// by y_0. Resampling is systematic, triggered when ESS < threshold·N.
pub fn filter_pass<M>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    seq: &Sequence,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<FilterHistory>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
{
    if cfg.n_particles < 2 {
        return Err(Error::Config(format!(
            "particle filter needs at least 2 particles, got {}",
            cfg.n_particles
        )));
    }
    if !(0.0..=1.0).contains(&cfg.ess_threshold) {
        return Err(Error::Config(format!(
            "ESS threshold must lie in [0, 1], got {}",
            cfg.ess_threshold
        )));
    }
    if theta.len() != layout.n_total() {
        return Err(Error::Shape {
            expected: layout.n_total(),
            got: theta.len(),
            context: "parameter vector",
        });
    }
    if seq.n_y != layout.n_y {
        return Err(Error::Shape { expected: layout.n_y, got: seq.n_y, context: "observation dim" });
    }
    if seq.n_u != model.n_u() {
        return Err(Error::Shape { expected: model.n_u(), got: seq.n_u, context: "input dim" });
    }
    if seq.t_len == 0 {
        return Err(Error::Config("cannot filter an empty sequence".into()));
    }

    let np = cfg.n_particles;
    let n_x = layout.n_x;
    let n_y = layout.n_y;
    let t_len = seq.t_len;
    let row = np * n_x;

    let mut hist = FilterHistory {
        t_len,
        n_particles: np,
        n_x,
        particles: vec![0.0; t_len * row],
        log_weights: vec![0.0; t_len * np],
        ancestors: vec![0usize; (t_len - 1) * np],
        loglik: 0.0,
        ess: Vec::with_capacity(t_len),
        step_loglik: Vec::with_capacity(t_len),
        resampled: Vec::with_capacity(t_len),
    };

    let mut log_g = vec![0.0; np];
    let mut anc_buf = vec![0usize; np];
    let mut w_prev = vec![0.0; np];

    // t = 0: draw from the initial density, weight by y_0.
    {
        let y0 = seq.y(0);
        let cur = &mut hist.particles[..row];
        cur.par_chunks_mut(CHUNK * n_x)
            .zip(log_g.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each_init(
                || vec![0.0; n_y],
                |ybuf, (ci, (xc, gc))| {
                    for k in 0..gc.len() {
                        let i = ci * CHUNK + k;
                        let mut rng = stream_rng(seed, i as u64);
                        let xi = &mut xc[k * n_x..(k + 1) * n_x];
                        sample_initial(layout, theta, &mut rng, xi);
                        gc[k] = emission_logpdf(model, layout, theta, y0, xi, ybuf);
                    }
                },
            );
        let lse = logsumexp(&log_g);
        let step = lse - (np as f64).ln();
        if !step.is_finite() {
            return Err(Error::Degeneracy { t: 0, seq: 0 });
        }
        hist.loglik += step;
        hist.step_loglik.push(step);
        hist.resampled.push(false);
        let lw0 = &mut hist.log_weights[..np];
        for (dst, &g) in lw0.iter_mut().zip(&log_g) {
            *dst = g - lse;
        }
        check_normalized(lw0)?;
        hist.ess.push(ess_from_log(lw0));
    }

    for t in 1..t_len {
        let resample = hist.ess[t - 1] < cfg.ess_threshold * np as f64;
        let anc_row_start = (t - 1) * np;
        if resample {
            for (i, w) in w_prev.iter_mut().enumerate() {
                *w = hist.log_weights[(t - 1) * np + i].exp();
            }
            let mut rng = stream_rng(seed, ((t as u64) << 32) | RESAMPLE_SLOT);
            let u0: f64 = rng.random();
            systematic_resample(&w_prev, u0, &mut anc_buf);
        } else {
            for (i, a) in anc_buf.iter_mut().enumerate() {
                *a = i;
            }
        }
        hist.ancestors[anc_row_start..anc_row_start + np].copy_from_slice(&anc_buf);

        let (done, rest) = hist.particles.split_at_mut(t * row);
        let prev = &done[(t - 1) * row..];
        let cur = &mut rest[..row];
        let y_t = seq.y(t);
        let u_t = seq.u(t - 1);
        let anc = &anc_buf;
        cur.par_chunks_mut(CHUNK * n_x)
            .zip(log_g.par_chunks_mut(CHUNK))
            .enumerate()
            .try_for_each_init(
                || (model.make_scratch(), vec![0.0; n_y]),
                |(scratch, ybuf), (ci, (xc, gc))| -> Result<()> {
                    for k in 0..gc.len() {
                        let i = ci * CHUNK + k;
                        let parent = &prev[anc[i] * n_x..(anc[i] + 1) * n_x];
                        let mut rng = stream_rng(seed, ((t as u64) << 32) | i as u64);
                        let xi = &mut xc[k * n_x..(k + 1) * n_x];
                        sample_transition(model, layout, theta, parent, u_t, &mut rng, xi, scratch)?;
                        gc[k] = emission_logpdf(model, layout, theta, y_t, xi, ybuf);
                    }
                    Ok(())
                },
            )?;

        // Incremental evidence: log Σᵢ w_{t−1,i} g(y_t | xᵢ). After a resample
        // the carried weights are uniform, so this reduces to log mean g.
        let step = if resample {
            logsumexp(&log_g) - (np as f64).ln()
        } else {
            let lw_prev = &hist.log_weights[(t - 1) * np..t * np];
            for (g, &lp) in log_g.iter_mut().zip(lw_prev) {
                *g += lp;
            }
            logsumexp(&log_g)
        };
        if !step.is_finite() {
            return Err(Error::Degeneracy { t, seq: 0 });
        }
        hist.loglik += step;
        hist.step_loglik.push(step);
        hist.resampled.push(resample);

        let lse = if resample { logsumexp(&log_g) } else { step };
        let lw_t = &mut hist.log_weights[t * np..(t + 1) * np];
        for (dst, &g) in lw_t.iter_mut().zip(&log_g) {
            *dst = g - lse;
        }
        check_normalized(lw_t)?;
        hist.ess.push(ess_from_log(lw_t));
    }

    Ok(hist)
}

fn check_normalized(lw: &[f64]) -> Result<()> {
    let mut acc = 0.0;
    let mut comp = 0.0;
    for &l in lw {
        let term = l.exp() - comp;
        let sum = acc + term;
        comp = (sum - acc) - term;
        acc = sum;
    }
    if (acc - 1.0).abs() >= 1e-12 {
        return Err(Error::Numerical(format!(
            "particle weights lost normalization: Σw = {acc:.17}"
        )));
    }
    Ok(())
}

/// A weighted set of smoothed state trajectories.
#[derive(Debug, Clone)]
pub struct SmoothedEnsemble {
    pub n_paths: usize,
    pub t_len: usize,
    pub n_x: usize,
    /// n_paths × t_len × n_x, row-major.
    pub paths: Vec<f64>,
    /// Normalized log-weights, one per path.
    pub log_weights: Vec<f64>,
    /// True when every path passes through a single ancestor by the midpoint
    /// of the sequence — the genealogy has collapsed and early-time smoothed
    /// quantities rest on one particle. A quality warning, not an error.
    pub degenerate_genealogy: bool,
}

impl SmoothedEnsemble {
    #[inline]
    pub fn state(&self, m: usize, t: usize) -> &[f64] {
        let base = (m * self.t_len + t) * self.n_x;
        &self.paths[base..base + self.n_x]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Weighted ensemble mean of the smoothed state at time t.
    pub fn mean_at(&self, t: usize, out: &mut [f64]) {
        out.fill(0.0);
        for m in 0..self.n_paths {
            let w = self.log_weights[m].exp();
            for (o, &xi) in out.iter_mut().zip(self.state(m, t)) {
                *o += w * xi;
            }
        }
    }
}

/// Genealogy (ancestral-path) smoother: each surviving particle's lineage is
/// a draw from the joint smoothing distribution, weighted by the final-step
/// weights. With `max_paths` the lineages are subsampled systematically to
/// that many equally weighted paths. Cheap, but early-time diversity is
/// limited by ancestor collapse — see `degenerate_genealogy`.
pub fn smooth_genealogy(
    hist: &FilterHistory,
    max_paths: Option<usize>,
    seed: u64,
) -> SmoothedEnsemble {
    let np = hist.n_particles;
    let n_x = hist.n_x;
    let t_len = hist.t_len;
    let last = t_len - 1;

    let (indices, log_weights): (Vec<usize>, Vec<f64>) = match max_paths {
        Some(m) if m < np => {
            let w_last = hist.weights_at(last);
            let mut idx = vec![0usize; m];
            let mut rng = stream_rng(seed, PATH_SELECT_STREAM);
            let u0: f64 = rng.random();
            systematic_resample(&w_last, u0, &mut idx);
            let lw = vec![-(m as f64).ln(); m];
            (idx, lw)
        }
        _ => ((0..np).collect(), hist.log_weights_at(last).to_vec()),
    };

    let m = indices.len();
    let mut paths = vec![0.0; m * t_len * n_x];
    let mut cur: Vec<usize> = indices;
    let mut mid_indices = vec![0usize; m];
    let t_mid = last / 2;
    for t in (0..t_len).rev() {
        for (p, &i) in cur.iter().enumerate() {
            let dst = (p * t_len + t) * n_x;
            paths[dst..dst + n_x].copy_from_slice(hist.particle(t, i));
        }
        if t == t_mid {
            mid_indices.copy_from_slice(&cur);
        }
        if t > 0 {
            let anc = &hist.ancestors[(t - 1) * np..t * np];
            for i in cur.iter_mut() {
                *i = anc[*i];
            }
        }
    }

    mid_indices.sort_unstable();
    mid_indices.dedup();
    let degenerate = m > 1 && last >= 2 && mid_indices.len() == 1;

    SmoothedEnsemble {
        n_paths: m,
        t_len,
        n_x,
        paths,
        log_weights,
        degenerate_genealogy: degenerate,
    }
}

/// Backward-simulation smoother: draws `n_paths` trajectories from the joint
/// smoothing distribution by sampling backward through the filter clouds,
/// reweighting each step-t cloud by the transition density to the already
/// chosen state at t+1. O(n_paths · T · N) transition evaluations, but free of
/// genealogy collapse. Paths are equally weighted.
pub fn smooth_backward<M>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    seq: &Sequence,
    hist: &FilterHistory,
    n_paths: usize,
    seed: u64,
) -> Result<SmoothedEnsemble>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
{
    if n_paths == 0 {
        return Err(Error::Config("backward simulation needs at least one path".into()));
    }
    let np = hist.n_particles;
    let n_x = hist.n_x;
    let t_len = hist.t_len;
    let last = t_len - 1;
    let w_last = hist.weights_at(last);

    let mut paths = vec![0.0; n_paths * t_len * n_x];
    paths
        .par_chunks_mut(t_len * n_x)
        .enumerate()
        .try_for_each_init(
            || (model.make_scratch(), vec![0.0; n_x], vec![0.0; np]),
            |(scratch, mean_buf, wbuf), (m, path)| -> Result<()> {
                let mut pick = [0usize; 1];
                let mut rng =
                    stream_rng(seed, BACKWARD_STREAM_BIT | ((last as u64) << 32) | m as u64);
                systematic_resample(&w_last, rng.random(), &mut pick);
                path[last * n_x..].copy_from_slice(hist.particle(last, pick[0]));

                for t in (0..last).rev() {
                    let (head, tail) = path.split_at_mut((t + 1) * n_x);
                    let x_next = &tail[..n_x];
                    let lw_t = hist.log_weights_at(t);
                    let u_t = seq.u(t);
                    for i in 0..np {
                        wbuf[i] = lw_t[i]
                            + transition_logpdf(
                                model,
                                layout,
                                theta,
                                x_next,
                                hist.particle(t, i),
                                u_t,
                                mean_buf,
                                scratch,
                            )?;
                    }
                    let lse = logsumexp(wbuf);
                    if !lse.is_finite() {
                        return Err(Error::Degeneracy { t, seq: 0 });
                    }
                    for w in wbuf.iter_mut() {
                        *w = (*w - lse).exp();
                    }
                    let mut rng =
                        stream_rng(seed, BACKWARD_STREAM_BIT | ((t as u64) << 32) | m as u64);
                    systematic_resample(wbuf, rng.random(), &mut pick);
                    head[t * n_x..].copy_from_slice(hist.particle(t, pick[0]));
                }
                Ok(())
            },
        )?;

    Ok(SmoothedEnsemble {
        n_paths,
        t_len,
        n_x,
        paths,
        log_weights: vec![-(n_paths as f64).ln(); n_paths],
        degenerate_genealogy: false,
    })
}
