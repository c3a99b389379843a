//! Selection/mutation particle filters for the latent intensity paths.
//!
//! Both filters are bootstrap filters: at every step the cloud is resampled
//! systematically from the current weights (selection), each survivor is
//! propagated independently through the non-central Gamma transition
//! (mutation), and the new weights are the Poisson observation likelihoods.
//! A single path draw is produced by tracing one ancestry lineage backwards
//! from a categorical draw of the final weights.

use crate::dist::{ncga_sample, NcGaParams};
use crate::math::weighted_quantile_sorted;
use crate::model::{
    arg_initial_dist, covariate_column, global_covariate_column, CountPanel, ModelError,
    SeriesParams, StaticParams,
};
use rand::Rng;
use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("particle cloud degenerate at t={t} with {n_particles} particles: all observation weights vanished")]
    Degeneracy { t: usize, n_particles: usize },
    #[error("invalid filter input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tuning knobs for one filter invocation.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Number of particles.
    pub n_particles: usize,
    /// Quantile levels reported per day; empty to skip the (sorting) work.
    pub quantiles: Vec<f64>,
    /// On degeneracy, rerun this many times with a growing particle count.
    pub max_retries: u32,
    /// Particle-count growth factor per retry.
    pub retry_growth: f64,
    /// Force constant observation weights (diagnostics only): the filtered
    /// law then reduces to the prior predictive of the transition chain.
    pub flat_weights: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            quantiles: Vec::new(),
            max_retries: 2,
            retry_growth: 2.0,
            flat_weights: false,
        }
    }
}

/// Final state of the particle system plus per-step diagnostics.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    /// Particle values after the last mutation.
    pub particles: Vec<f64>,
    /// Log observation weights of those particles.
    pub log_weights: Vec<f64>,
    /// Selection indices per step; `ancestry[t][i]` is the index the i-th
    /// particle at step t descended from.
    pub ancestry: Vec<Vec<u32>>,
    /// Effective sample size after each weighting step.
    pub ess: Vec<f64>,
}

/// One sampled latent path plus filtered summaries.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Sampled initial latent value.
    pub path0: f64,
    /// Sampled latent path over the T days.
    pub path: Vec<f64>,
    /// Filtered (weighted) means per day.
    pub means: Vec<f64>,
    /// Filtered quantiles per day, one row per day in the order of
    /// `FilterConfig::quantiles`.
    pub quantiles: Vec<Vec<f64>>,
    /// Log-likelihood estimate of the observations driving the weights.
    pub loglik: f64,
    /// Final particle cloud and per-step diagnostics.
    pub cloud: ParticleCloud,
}

/// Systematic resampling: one uniform positions N evenly spaced pointers on
/// the weight CDF, so each particle's offspring count differs from N * w_i
/// by less than one.
pub fn resample_systematic<R: Rng + ?Sized>(
    rng: &mut R,
    weights: &[f64],
) -> Result<Vec<u32>, FilterError> {
    let n = weights.len();
    if n == 0 {
        return Err(FilterError::Invalid("empty weight vector".into()));
    }
    let mut total = 0.0;
    for &w in weights {
        if w.is_nan() || w < 0.0 {
            return Err(FilterError::Invalid(format!("bad weight {w}")));
        }
        total += w;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(FilterError::Invalid(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    let step = total / n as f64;
    let mut pointer = rng.random::<f64>() * step;
    let mut indices = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0usize;
    for _ in 0..n {
        while pointer > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        indices.push(i as u32);
        pointer += step;
    }
    Ok(indices)
}

/// Per-day inputs to the generic filter: the transition noncentrality is
/// `beta * previous`, the observation log-weight of a particle value `u` is
/// `sum_k counts[k] * ln(slope[k] * u + offset[k]) - decay * u`.
struct ObsTerms {
    counts: Vec<f64>,
    slopes: Vec<f64>,
    offsets: Vec<f64>,
    decay: f64,
    log_const: f64,
}

struct FilterProblem {
    init: (f64, f64),
    alpha: f64,
    beta: f64,
    delta: f64,
    obs: Vec<ObsTerms>,
}

fn run_filter<R: Rng + ?Sized>(
    problem: &FilterProblem,
    rng: &mut R,
    cfg: &FilterConfig,
) -> Result<FilterOutput, FilterError> {
    if cfg.n_particles < 2 {
        return Err(FilterError::Invalid(format!(
            "need at least 2 particles, got {}",
            cfg.n_particles
        )));
    }
    let mut n = cfg.n_particles;
    let mut attempt = 0u32;
    loop {
        match run_filter_once(problem, rng, cfg, n) {
            Err(FilterError::Degeneracy { t, n_particles }) if attempt < cfg.max_retries => {
                log::warn!(
                    "filter degenerate at t={t} with {n_particles} particles; retrying with more"
                );
                attempt += 1;
                n = ((n as f64) * cfg.retry_growth).ceil() as usize;
            }
            other => return other,
        }
    }
}

fn run_filter_once<R: Rng + ?Sized>(
    problem: &FilterProblem,
    rng: &mut R,
    cfg: &FilterConfig,
    n: usize,
) -> Result<FilterOutput, FilterError> {
    let t_len = problem.obs.len();
    let (init_shape, init_scale) = problem.init;
    let init_dist = rand_distr::Gamma::new(init_shape, init_scale)
        .map_err(|e| FilterError::Invalid(e.to_string()))?;

    // values[t] holds the cloud after step t; values[0] is the initial draw.
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(t_len + 1);
    values.push((0..n).map(|_| init_dist.sample(rng)).collect());

    let mut ancestry: Vec<Vec<u32>> = Vec::with_capacity(t_len);
    let mut ess_trace = Vec::with_capacity(t_len);
    let mut means = Vec::with_capacity(t_len);
    let mut quantiles = Vec::with_capacity(t_len);
    let mut loglik = 0.0;

    let mut norm_weights = vec![1.0 / n as f64; n];
    let mut log_weights = vec![0.0; n];
    let mut current = vec![0.0; n];

    for (t, obs) in problem.obs.iter().enumerate() {
        let ancestors = resample_systematic(rng, &norm_weights)?;

        let prev = values.last().expect("nonempty");
        for (i, &a) in ancestors.iter().enumerate() {
            let b = problem.beta * prev[a as usize];
            let p = NcGaParams {
                shape: problem.alpha,
                noncentrality: b,
                scale: problem.delta,
            };
            current[i] = ncga_sample(rng, &p);
        }

        let mut max_lw = f64::NEG_INFINITY;
        if cfg.flat_weights {
            log_weights.iter_mut().for_each(|lw| *lw = 0.0);
            max_lw = 0.0;
        } else {
            for i in 0..n {
                let u = current[i];
                let mut lw = -obs.decay * u;
                for k in 0..obs.counts.len() {
                    if obs.counts[k] > 0.0 {
                        lw += obs.counts[k] * (obs.slopes[k] * u + obs.offsets[k]).ln();
                    }
                }
                log_weights[i] = lw;
                if lw > max_lw {
                    max_lw = lw;
                }
            }
        }
        if !max_lw.is_finite() {
            return Err(FilterError::Degeneracy { t, n_particles: n });
        }

        let mut sum = 0.0;
        for i in 0..n {
            let w = (log_weights[i] - max_lw).exp();
            norm_weights[i] = w;
            sum += w;
        }
        loglik += max_lw + sum.ln() - (n as f64).ln() + obs.log_const;
        let mut sum_sq = 0.0;
        let mut mean = 0.0;
        for i in 0..n {
            norm_weights[i] /= sum;
            sum_sq += norm_weights[i] * norm_weights[i];
            mean += norm_weights[i] * current[i];
        }
        ess_trace.push(1.0 / sum_sq);
        means.push(mean);
        if !cfg.quantiles.is_empty() {
            let mut pairs: Vec<(f64, f64)> = current
                .iter()
                .copied()
                .zip(norm_weights.iter().copied())
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            quantiles.push(
                cfg.quantiles
                    .iter()
                    .map(|&q| weighted_quantile_sorted(&pairs, q))
                    .collect(),
            );
        }

        ancestry.push(ancestors);
        values.push(current.clone());
    }

    // Trace one lineage back from a categorical draw of the final weights.
    let mut idx = sample_categorical(rng, &norm_weights);
    let mut path = vec![0.0; t_len];
    for t in (0..t_len).rev() {
        path[t] = values[t + 1][idx];
        idx = ancestry[t][idx] as usize;
    }
    let path0 = values[0][idx];

    Ok(FilterOutput {
        path0,
        path,
        means,
        quantiles,
        loglik,
        cloud: ParticleCloud {
            particles: values.pop().expect("nonempty"),
            log_weights,
            ancestry,
            ess: ess_trace,
        },
    })
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// Draw the global intensity path conditional on the per-series paths and
/// regimes. Weights combine the global observation with every country
/// observation, since the shared intensity enters all of them.
pub fn sm_filter_global<R: Rng + ?Sized>(
    panel: &CountPanel,
    params: &StaticParams,
    x: &[Vec<f64>],
    s: &[Vec<u8>],
    rng: &mut R,
    cfg: &FilterConfig,
) -> Result<FilterOutput, FilterError> {
    let t_len = panel.t_len();
    let n_series = panel.n_series();
    if x.len() != n_series || s.len() != n_series {
        return Err(FilterError::Invalid(
            "latent path count does not match panel".into(),
        ));
    }
    let g = &params.global;
    let cov_z = global_covariate_column(panel, &g.phi)?;
    let cov: Vec<Vec<f64>> = (0..n_series)
        .map(|j| covariate_column(panel, &params.series[j].phi, j))
        .collect::<Result<_, _>>()?;

    let obs = (0..t_len)
        .map(|t| {
            let mut counts = Vec::with_capacity(n_series + 1);
            let mut slopes = Vec::with_capacity(n_series + 1);
            let mut offsets = Vec::with_capacity(n_series + 1);
            let z_t = panel.global_counts()[t];
            let mut log_const = -cov_z[t] - ln_factorial(z_t);
            counts.push(z_t as f64);
            slopes.push(1.0);
            offsets.push(cov_z[t]);
            for j in 0..n_series {
                let sp = &params.series[j];
                let off = x[j][t] * sp.amplification(s[j][t]) + cov[j][t];
                let y_jt = panel.counts(j)[t];
                counts.push(y_jt as f64);
                slopes.push(1.0);
                offsets.push(off);
                log_const += -off - ln_factorial(y_jt);
            }
            ObsTerms {
                counts,
                slopes,
                offsets,
                decay: (n_series + 1) as f64,
                log_const,
            }
        })
        .collect();

    let problem = FilterProblem {
        init: arg_initial_dist(g.alpha, g.beta, g.delta),
        alpha: g.alpha,
        beta: g.beta,
        delta: g.delta,
        obs,
    };
    run_filter(&problem, rng, cfg)
}

/// Draw the latent intensity path of series `j` conditional on the global
/// path and the regime chain. The amplification factor multiplies the
/// particle value inside the Poisson intensity.
pub fn sm_filter_local<R: Rng + ?Sized>(
    j: usize,
    panel: &CountPanel,
    sp: &SeriesParams,
    w: &[f64],
    s_j: &[u8],
    rng: &mut R,
    cfg: &FilterConfig,
) -> Result<FilterOutput, FilterError> {
    let t_len = panel.t_len();
    if w.len() != t_len || s_j.len() != t_len {
        return Err(FilterError::Invalid(
            "conditioning path length does not match panel".into(),
        ));
    }
    let cov = covariate_column(panel, &sp.phi, j)?;

    let obs = (0..t_len)
        .map(|t| {
            let amp = sp.amplification(s_j[t]);
            let off = w[t] + cov[t];
            let y_jt = panel.counts(j)[t];
            ObsTerms {
                counts: vec![y_jt as f64],
                slopes: vec![amp],
                offsets: vec![off],
                decay: amp,
                log_const: -off - ln_factorial(y_jt),
            }
        })
        .collect();

    let problem = FilterProblem {
        init: arg_initial_dist(sp.alpha, sp.beta, sp.delta),
        alpha: sp.alpha,
        beta: sp.beta,
        delta: sp.delta,
        obs,
    };
    run_filter(&problem, rng, cfg)
}
