//! The identification loop: SMC smoothing E-steps, an importance-weighted
//! ELBO over the smoothed trajectory ensembles, and generalized M-steps that
//! run Adam on the model head while noise covariances and the initial-state
//! density get exact closed-form weighted-moment updates.
//!
//! E-step randomness uses common random numbers: the filter seed for sequence
//! n depends only on (master seed, n), never on the iteration counter. The
//! ensembles then stabilize as θ stabilizes, so the Q̂ trace compares like
//! with like and the convergence test measures real improvement instead of
//! filter re-draw jitter.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

use crate::neural::Adam;
use crate::smc::{filter_pass, smooth_backward, smooth_genealogy, SmcConfig, SmoothedEnsemble};
use crate::ssm::{
    emission_logpdf, initial_logpdf, transition_logpdf, transition_logpdf_grad, GaussianSsm,
    Sequence, ThetaLayout,
};
use crate::util::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    pub n_particles: usize,
    pub ess_threshold: f64,
    /// Smoothed trajectories kept per sequence for the M-step.
    pub n_smooth_paths: usize,
    /// Backward simulation instead of the default genealogy smoother.
    pub backward_sim: bool,
    pub m_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate halvings allowed when an M-step degrades Q̂.
    pub max_lr_halvings: usize,
    /// Consecutive small |ΔQ̂| iterations required to declare convergence.
    pub convergence_consecutive: usize,
    /// |ΔQ̂| threshold as a multiple of the pooled Monte Carlo stderr.
    pub convergence_stderr_factor: f64,
    /// Absolute floor on the convergence threshold (covers stderr → 0).
    pub min_delta: f64,
    /// Head coordinates excluded from gradient updates (e.g. the lumped
    /// inertial parameters when studying friction-only learning).
    pub freeze_head: Option<Range<usize>>,
    /// Invoke the checkpoint callback every this many iterations (0 = never).
    pub checkpoint_every: usize,
    pub q_floor: f64,
    pub r_floor: f64,
    pub p0_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 100,
            n_particles: 200,
            ess_threshold: 0.5,
            n_smooth_paths: 16,
            backward_sim: false,
            m_epochs: 5,
            batch_size: 256,
            learning_rate: 1e-2,
            max_lr_halvings: 3,
            convergence_consecutive: 3,
            convergence_stderr_factor: 0.5,
            min_delta: 1e-6,
            freeze_head: None,
            checkpoint_every: 0,
            q_floor: 1e-10,
            r_floor: 1e-12,
            p0_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElboEstimate {
    pub q_hat: f64,
    /// Per-sequence contributions; they sum to `q_hat`.
    pub per_seq: Vec<f64>,
    /// Pooled Monte Carlo standard error of `q_hat`.
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct EStep {
    pub ensembles: Vec<SmoothedEnsemble>,
    /// Filter evidence estimate per sequence under the E-step parameters.
    pub logliks: Vec<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EmTraceRow {
    pub iter: usize,
    pub q_hat: f64,
    pub stderr: f64,
    pub loglik: f64,
    pub param_norm: f64,
    pub learning_rate: f64,
    /// Wall-clock seconds; logged, never written into artifacts.
    pub wall_secs: f64,
}

fn sequence_seed(seed: u64, n: usize) -> u64 {
    use rand::Rng;
    stream_rng(seed, (3 << 61) | n as u64).random()
}

fn tag_sequence(e: Error, n: usize) -> Error {
    match e {
        Error::Degeneracy { t, .. } => Error::Degeneracy { t, seq: n },
        other => other,
    }
}

/// Filter + smooth every sequence under θ. Sequences run concurrently; each
/// one owns a seed derived from (seed, sequence index) only.
pub fn e_step<M>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    dataset: &[Sequence],
    cfg: &EmConfig,
    seed: u64,
) -> Result<EStep>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
{
    if dataset.is_empty() {
        return Err(Error::Config("the dataset has no sequences".into()));
    }
    let smc = SmcConfig { n_particles: cfg.n_particles, ess_threshold: cfg.ess_threshold };
    let results: Vec<Result<(SmoothedEnsemble, f64)>> = dataset
        .par_iter()
        .enumerate()
        .map(|(n, seq)| {
            let sseed = sequence_seed(seed, n);
            let hist = filter_pass(model, layout, theta, seq, &smc, sseed)
                .map_err(|e| tag_sequence(e, n))?;
            let ens = if cfg.backward_sim {
                smooth_backward(model, layout, theta, seq, &hist, cfg.n_smooth_paths, sseed)
                    .map_err(|e| tag_sequence(e, n))?
            } else {
                smooth_genealogy(&hist, Some(cfg.n_smooth_paths), sseed)
            };
            if ens.degenerate_genealogy {
                log::warn!(
                    "sequence {n}: genealogy collapsed before the sequence midpoint; \
                     smoothed estimates lean on a single ancestor"
                );
            }
            Ok((ens, hist.loglik))
        })
        .collect();

    let mut ensembles = Vec::with_capacity(dataset.len());
    let mut logliks = Vec::with_capacity(dataset.len());
    for r in results {
        let (ens, ll) = r?;
        ensembles.push(ens);
        logliks.push(ll);
    }
    Ok(EStep { ensembles, logliks })
}

/// Q̂(θ; ensembles) = Σ_n Σ_m w_m [log p_θ(x_0) + Σ_t log p_θ(y_t | x_t)
/// + Σ_t log p_θ(x_t | x_{t−1}, u_{t−1})] along the smoothed paths, with the
/// pooled self-normalized importance-sampling standard error.
pub fn elbo<M>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    ensembles: &[SmoothedEnsemble],
    dataset: &[Sequence],
) -> Result<ElboEstimate>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
{
    if ensembles.len() != dataset.len() {
        return Err(Error::Shape {
            expected: dataset.len(),
            got: ensembles.len(),
            context: "one smoothed ensemble per sequence",
        });
    }
    let jobs: Vec<(usize, usize)> = ensembles
        .iter()
        .enumerate()
        .flat_map(|(n, e)| (0..e.n_paths).map(move |m| (n, m)))
        .collect();

    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map_init(
            || (model.make_scratch(), vec![0.0; layout.n_x.max(layout.n_y)]),
            |(scratch, mean_buf), &(n, m)| -> Result<f64> {
                path_log_density(model, layout, theta, &ensembles[n], &dataset[n], n, m, scratch, mean_buf)
            },
        )
        .collect();

    let mut per_path: Vec<Vec<f64>> = ensembles.iter().map(|e| vec![0.0; e.n_paths]) .collect();
    for (job, s) in jobs.iter().zip(scores) {
        per_path[job.0][job.1] = s?;
    }

    let mut per_seq = Vec::with_capacity(dataset.len());
    let mut var_sum = 0.0;
    for (n, ens) in ensembles.iter().enumerate() {
        let mut q_n = 0.0;
        for m in 0..ens.n_paths {
            q_n += ens.log_weights[m].exp() * per_path[n][m];
        }
        let mut v_n = 0.0;
        for m in 0..ens.n_paths {
            let w = ens.log_weights[m].exp();
            v_n += (w * (per_path[n][m] - q_n)).powi(2);
        }
        per_seq.push(q_n);
        var_sum += v_n;
    }
    let q_hat = per_seq.iter().sum();
    Ok(ElboEstimate { q_hat, per_seq, stderr: var_sum.sqrt() })
}

#[allow(clippy::too_many_arguments)]
fn path_log_density<M: GaussianSsm>(
    model: &M,
    layout: &ThetaLayout,
    theta: &[f64],
    ens: &SmoothedEnsemble,
    seq: &Sequence,
    n: usize,
    m: usize,
    scratch: &mut M::Scratch,
    mean_buf: &mut [f64],
) -> Result<f64> {
    let nonfinite = |t: usize, what: &str| {
        Error::Numerical(format!(
            "ELBO {what} term not finite (sequence {n}, path {m}, step {t})"
        ))
    };
    let mut total = initial_logpdf(layout, theta, ens.state(m, 0));
    if !total.is_finite() {
        return Err(nonfinite(0, "initial"));
    }
    for t in 0..seq.t_len {
        let term = emission_logpdf(
            model,
            layout,
            theta,
            seq.y(t),
            ens.state(m, t),
            &mut mean_buf[..layout.n_y],
        );
        if !term.is_finite() {
            return Err(nonfinite(t, "emission"));
        }
        total += term;
        if t > 0 {
            let term = transition_logpdf(
                model,
                layout,
                theta,
                ens.state(m, t),
                ens.state(m, t - 1),
                seq.u(t - 1),
                &mut mean_buf[..layout.n_x],
                scratch,
            )
            .map_err(|e| tag_sequence(e, n))?;
            if !term.is_finite() {
                return Err(nonfinite(t, "transition"));
            }
            total += term;
        }
    }
    Ok(total)
}

/// Exact M-step for the diagonal noise covariances and the initial-state
/// density: weighted residual moments over the frozen ensembles, floored to
/// keep every variance positive.
pub fn update_noise_closed_form<M>(
    model: &M,
    layout: &ThetaLayout,
    theta: &mut [f64],
    ensembles: &[SmoothedEnsemble],
    dataset: &[Sequence],
    cfg: &EmConfig,
) -> Result<()>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
{
    let n_x = layout.n_x;
    let n_y = layout.n_y;

    struct Moments {
        q_sq: Vec<f64>,
        q_terms: f64,
        r_sq: Vec<f64>,
        r_terms: f64,
        x0_sum: Vec<f64>,
        x0_sq: Vec<f64>,
        x0_terms: f64,
    }

    let jobs: Vec<(usize, usize)> = ensembles
        .iter()
        .enumerate()
        .flat_map(|(n, e)| (0..e.n_paths).map(move |m| (n, m)))
        .collect();
    let head: &[f64] = layout.head(theta);

    let partials: Vec<Result<Moments>> = jobs
        .par_iter()
        .map_init(
            || (model.make_scratch(), vec![0.0; n_x.max(n_y)]),
            |(scratch, buf), &(n, m)| -> Result<Moments> {
                let ens = &ensembles[n];
                let seq = &dataset[n];
                let w = ens.log_weights[m].exp();
                let mut mo = Moments {
                    q_sq: vec![0.0; n_x],
                    q_terms: w * (seq.t_len - 1) as f64,
                    r_sq: vec![0.0; n_y],
                    r_terms: w * seq.t_len as f64,
                    x0_sum: vec![0.0; n_x],
                    x0_sq: vec![0.0; n_x],
                    x0_terms: w,
                };
                let x0 = ens.state(m, 0);
                for i in 0..n_x {
                    mo.x0_sum[i] = w * x0[i];
                    mo.x0_sq[i] = w * x0[i] * x0[i];
                }
                for t in 0..seq.t_len {
                    let x_t = ens.state(m, t);
                    model.emission_mean(x_t, &mut buf[..n_y]);
                    let y = seq.y(t);
                    for j in 0..n_y {
                        let d = y[j] - buf[j];
                        mo.r_sq[j] += w * d * d;
                    }
                    if t > 0 {
                        model
                            .transition_mean(head, ens.state(m, t - 1), seq.u(t - 1), &mut buf[..n_x], scratch)
                            .map_err(|e| tag_sequence(e, n))?;
                        for i in 0..n_x {
                            let d = x_t[i] - buf[i];
                            mo.q_sq[i] += w * d * d;
                        }
                    }
                }
                Ok(mo)
            },
        )
        .collect();

    let mut q_sq = vec![0.0; n_x];
    let mut r_sq = vec![0.0; n_y];
    let mut x0_sum = vec![0.0; n_x];
    let mut x0_sq = vec![0.0; n_x];
    let (mut q_terms, mut r_terms, mut x0_terms) = (0.0, 0.0, 0.0);
    for p in partials {
        let mo = p?;
        for i in 0..n_x {
            q_sq[i] += mo.q_sq[i];
            x0_sum[i] += mo.x0_sum[i];
            x0_sq[i] += mo.x0_sq[i];
        }
        for j in 0..n_y {
            r_sq[j] += mo.r_sq[j];
        }
        q_terms += mo.q_terms;
        r_terms += mo.r_terms;
        x0_terms += mo.x0_terms;
    }

    let lq = layout.log_q_range();
    for i in 0..n_x {
        theta[lq.start + i] = (q_sq[i] / q_terms).max(cfg.q_floor).ln();
    }
    let lr = layout.log_r_range();
    for j in 0..n_y {
        theta[lr.start + j] = (r_sq[j] / r_terms).max(cfg.r_floor).ln();
    }
    let im = layout.init_mean_range();
    let iv = layout.init_logvar_range();
    for i in 0..n_x {
        let mu = x0_sum[i] / x0_terms;
        let var = (x0_sq[i] / x0_terms - mu * mu).max(cfg.p0_floor);
        theta[im.start + i] = mu;
        theta[iv.start + i] = var.ln();
    }
    Ok(())
}

/// One generalized M-step: `m_epochs` of minibatch Adam ascent on the head
/// over the transition terms of Q̂ (the only terms that depend on the head
/// here — emissions are fixed selectors), then the closed-form noise and
/// initial-state update. The frozen ensembles are untouched.
#[allow(clippy::too_many_arguments)]
pub fn m_step<M>(
    model: &M,
    layout: &ThetaLayout,
    theta_k: &[f64],
    ensembles: &[SmoothedEnsemble],
    dataset: &[Sequence],
    cfg: &EmConfig,
    learning_rate: f64,
    seed: u64,
    iter: usize,
) -> Result<Vec<f64>>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
{
    let mut theta = theta_k.to_vec();
    let n_head = layout.n_head;
    let n_total = layout.n_total();

    let mut terms: Vec<(u32, u32, u32)> = Vec::new();
    for (n, ens) in ensembles.iter().enumerate() {
        for m in 0..ens.n_paths {
            for t in 1..dataset[n].t_len {
                terms.push((n as u32, m as u32, t as u32));
            }
        }
    }
    if cfg.batch_size == 0 || cfg.batch_size > terms.len() {
        return Err(Error::Config(format!(
            "batch size {} must lie in 1..={} (total transition terms)",
            cfg.batch_size,
            terms.len()
        )));
    }

    let mut adam = Adam::new(n_head, learning_rate);
    let total = terms.len() as f64;
    let mut grad = vec![0.0; n_total];
    use rand::seq::SliceRandom;

    for epoch in 0..cfg.m_epochs {
        let mut rng = stream_rng(seed, (5 << 61) | ((iter as u64) << 16) | epoch as u64);
        terms.shuffle(&mut rng);
        for batch in terms.chunks(cfg.batch_size) {
            let scale = total / batch.len() as f64;
            let partials: Vec<Result<Vec<f64>>> = batch
                .par_chunks(32)
                .map_init(
                    || {
                        (
                            model.make_scratch(),
                            vec![0.0; layout.n_x],
                            vec![0.0; layout.n_x],
                            vec![0.0; n_total],
                        )
                    },
                    |(scratch, mean_buf, lambda_buf, term_grad), chunk| -> Result<Vec<f64>> {
                        let mut acc = vec![0.0; n_total];
                        for &(n, m, t) in chunk {
                            let (n, m, t) = (n as usize, m as usize, t as usize);
                            let ens = &ensembles[n];
                            let seq = &dataset[n];
                            term_grad.iter_mut().for_each(|g| *g = 0.0);
                            transition_logpdf_grad(
                                model,
                                layout,
                                &theta,
                                ens.state(m, t),
                                ens.state(m, t - 1),
                                seq.u(t - 1),
                                term_grad,
                                mean_buf,
                                lambda_buf,
                                scratch,
                            )
                            .map_err(|e| tag_sequence(e, n))?;
                            let w = ens.log_weights[m].exp() * scale;
                            for (a, g) in acc.iter_mut().zip(term_grad.iter()) {
                                *a += w * g;
                            }
                        }
                        Ok(acc)
                    },
                )
                .collect();

            grad.iter_mut().for_each(|g| *g = 0.0);
            for p in partials {
                for (g, a) in grad.iter_mut().zip(p?) {
                    *g += a;
                }
            }
            if let Some(frozen) = &cfg.freeze_head {
                for g in &mut grad[frozen.clone()] {
                    *g = 0.0;
                }
            }
            // Adam minimizes; ascend Q̂ by stepping along −∇.
            for g in grad[..n_head].iter_mut() {
                *g = -*g;
            }
            adam.step(&mut theta[..n_head], &grad[..n_head])?;
        }
    }

    update_noise_closed_form(model, layout, &mut theta, ensembles, dataset, cfg)?;
    Ok(theta)
}

/// Run EM until |ΔQ̂| stays below the tolerance for the configured number of
/// consecutive iterations or `max_iters` is hit. Appends one row per accepted
/// iteration to `trace` (the caller keeps whatever accumulated if an error is
/// returned) and invokes `checkpoint` every `checkpoint_every` iterations.
#[allow(clippy::too_many_arguments)]
pub fn em_loop<M, F>(
    model: &M,
    layout: &ThetaLayout,
    theta0: &[f64],
    dataset: &[Sequence],
    cfg: &EmConfig,
    seed: u64,
    trace: &mut Vec<EmTraceRow>,
    mut checkpoint: F,
) -> Result<Vec<f64>>
where
    M: GaussianSsm + Sync,
    M::Scratch: Send,
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    let mut theta = theta0.to_vec();
    let mut lr = cfg.learning_rate;
    let mut consecutive = 0usize;
    let mut prev_q: Option<f64> = None;

    for iter in 1..=cfg.max_iters {
        let started = Instant::now();
        let es = e_step(model, layout, &theta, dataset, cfg, seed)?;
        let before = elbo(model, layout, &theta, &es.ensembles, dataset)?;

        let mut accepted: Option<(Vec<f64>, ElboEstimate)> = None;
        let mut trial_lr = lr;
        for attempt in 0..=cfg.max_lr_halvings {
            let cand =
                m_step(model, layout, &theta, &es.ensembles, dataset, cfg, trial_lr, seed, iter)?;
            let after = elbo(model, layout, &cand, &es.ensembles, dataset)?;
            let tolerance = 2.0 * after.stderr.max(before.stderr);
            if after.q_hat >= before.q_hat - tolerance {
                if attempt > 0 {
                    lr = trial_lr;
                    log::warn!(
                        "iteration {iter}: learning rate reduced to {lr:.3e} after {attempt} rejected step(s)"
                    );
                }
                accepted = Some((cand, after));
                break;
            }
            log::warn!(
                "iteration {iter}: M-step dropped Q̂ from {:.6} to {:.6} (allowance {:.3}); halving learning rate",
                before.q_hat,
                after.q_hat,
                tolerance
            );
            trial_lr *= 0.5;
        }
        let Some((cand, after)) = accepted else {
            return Err(Error::Numerical(format!(
                "M-step still degraded Q̂ beyond 2× its standard error after {} learning-rate halvings (iteration {iter})",
                cfg.max_lr_halvings
            )));
        };
        theta = cand;

        let loglik: f64 = es.logliks.iter().sum();
        let param_norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        trace.push(EmTraceRow {
            iter,
            q_hat: after.q_hat,
            stderr: after.stderr,
            loglik,
            param_norm,
            learning_rate: lr,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "EM iteration {iter}: Q̂ = {:.6} ± {:.3}, loglik ≈ {:.6}",
            after.q_hat,
            after.stderr,
            loglik
        );
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
            checkpoint(iter, &theta)?;
        }

        if let Some(pq) = prev_q {
            let threshold = (cfg.convergence_stderr_factor * after.stderr).max(cfg.min_delta);
            if (after.q_hat - pq).abs() < threshold {
                consecutive += 1;
            } else {
                consecutive = 0;
            }
            if consecutive >= cfg.convergence_consecutive {
                log::info!("EM converged after {iter} iterations");
                break;
            }
        }
        prev_q = Some(after.q_hat);
    }
    Ok(theta)
}
