//! The two-block Gibbs sweep and the runner driving it.
//!
//! Block (1) draws the global intensity path by particle filter, then its
//! ARG parameters and the global covariate coefficients. Block (2) runs
//! independently (and in parallel) for each series: intensity path, regime
//! chain, transition rows, the jump hyper-layer (eta, gamma, xi) in block,
//! the series ARG parameters, and the series coefficients.
//!
//! Every sub-update draws from its own counter-derived random stream keyed
//! by (seed, sweep, slot), so runs are reproducible bit-for-bit, block (2)
//! parallelism cannot change results, and resuming from a checkpointed
//! state continues the exact same realisation.

use super::updates::{
    sample_arg_params, sample_eta, sample_gamma_shape, sample_lambda, sample_phi, sample_xi,
    ArgAdapt, ArgPriors,
};
use super::{AdaptState, HyperParams, McmcConfig, McmcError};
use crate::ffbs::{emission_logmatrix, ffbs_sample};
use crate::filter::{sm_filter_global, sm_filter_local, FilterConfig};
use crate::model::{
    complete_data_loglik, covariate_column, stationary_distribution, CountPanel, GlobalParams,
    LatentPaths, SeriesParams, StaticParams,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Adaptive-step states for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesAdapt {
    pub arg: ArgAdapt,
    pub xi: AdaptState,
    pub phi: Vec<AdaptState>,
}

/// All adaptive-step states of the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptBank {
    pub global_arg: ArgAdapt,
    pub phi_z: Vec<AdaptState>,
    pub series: Vec<SeriesAdapt>,
}

impl AdaptBank {
    fn freeze_and_reset(&mut self) {
        let mut apply = |a: &mut AdaptState| {
            a.freeze();
            a.reset_counters();
        };
        apply(&mut self.global_arg.alpha);
        apply(&mut self.global_arg.beta);
        apply(&mut self.global_arg.delta);
        self.phi_z.iter_mut().for_each(&mut apply);
        for s in &mut self.series {
            apply(&mut s.arg.alpha);
            apply(&mut s.arg.beta);
            apply(&mut s.arg.delta);
            apply(&mut s.xi);
            s.phi.iter_mut().for_each(&mut apply);
        }
    }
}

/// Complete sampler state; serialising it (plus seed and config) is enough
/// to resume a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub sweep: usize,
    pub params: StaticParams,
    pub paths: LatentPaths,
    pub adapt: AdaptBank,
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub sweep: usize,
    pub params: StaticParams,
    pub loglik: f64,
    pub paths: Option<LatentPaths>,
}

/// Stored MCMC output: one record per retained sweep.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub records: Vec<DrawRecord>,
}

/// Acceptance-rate and step-size snapshot of one adaptive chain.
#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub name: String,
    pub rate: f64,
    pub step_size: f64,
}

// Random-stream slots within one sweep.
const SLOT_GLOBAL_FILTER: u64 = 0;
const SLOT_GLOBAL_ARG: u64 = 1;
const SLOT_GLOBAL_PHI: u64 = 2;
const SLOTS_PER_SERIES: u64 = 6;

fn stream_rng(seed: u64, stride: u64, sweep: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is reserved for initialisation.
    rng.set_stream(1 + sweep * stride + slot);
    rng
}

/// Drives the Gibbs sampler over a fixed panel.
pub struct GibbsRunner<'p> {
    panel: &'p CountPanel,
    hyper: HyperParams,
    cfg: McmcConfig,
    state: SamplerState,
    stride: u64,
    series_priors: ArgPriors,
    global_priors: ArgPriors,
    phi_mean: Vec<DVector<f64>>,
    phi_prec: Vec<DMatrix<f64>>,
    phi_z_mean: DVector<f64>,
    phi_z_prec: DMatrix<f64>,
}

impl<'p> GibbsRunner<'p> {
    pub fn new(
        panel: &'p CountPanel,
        hyper: HyperParams,
        cfg: McmcConfig,
    ) -> Result<Self, McmcError> {
        let state = Self::initial_state(panel, &hyper, &cfg)?;
        Self::with_state(panel, hyper, cfg, state)
    }

    /// Resume from a previously checkpointed state.
    pub fn resume(
        panel: &'p CountPanel,
        hyper: HyperParams,
        cfg: McmcConfig,
        state: SamplerState,
    ) -> Result<Self, McmcError> {
        if state.params.n_series() != panel.n_series() || state.paths.w.len() != panel.t_len() {
            return Err(McmcError::Config(
                "checkpointed state does not match the panel".into(),
            ));
        }
        Self::with_state(panel, hyper, cfg, state)
    }

    fn with_state(
        panel: &'p CountPanel,
        hyper: HyperParams,
        cfg: McmcConfig,
        state: SamplerState,
    ) -> Result<Self, McmcError> {
        cfg.validate()?;
        hyper.validate()?;
        if hyper.n_regimes() != 2 {
            return Err(McmcError::Config(
                "the Gibbs sampler supports exactly two regimes".into(),
            ));
        }
        let n_series = panel.n_series();
        let mut phi_mean = Vec::with_capacity(n_series);
        let mut phi_prec = Vec::with_capacity(n_series);
        for j in 0..n_series {
            let dim = panel.covariates(j).ncols();
            phi_mean.push(hyper.coef_prior.mean_vec(dim)?);
            phi_prec.push(hyper.coef_prior.precision(dim)?);
        }
        let dim_z = panel.global_covariates().ncols();
        let phi_z_mean = hyper.coef_prior_global.mean_vec(dim_z)?;
        let phi_z_prec = hyper.coef_prior_global.precision(dim_z)?;
        let stride = 3 + SLOTS_PER_SERIES * n_series as u64;
        let series_priors = hyper.series_arg_priors();
        let global_priors = hyper.global_arg_priors();
        Ok(Self {
            panel,
            hyper,
            cfg,
            state,
            stride,
            series_priors,
            global_priors,
            phi_mean,
            phi_prec,
            phi_z_mean,
            phi_z_prec,
        })
    }

    /// Deterministic moment-matched starting point. The first sweep's
    /// filters overwrite the latent paths, so only rough scales matter.
    fn initial_state(
        panel: &CountPanel,
        hyper: &HyperParams,
        cfg: &McmcConfig,
    ) -> Result<SamplerState, McmcError> {
        let t_len = panel.t_len();
        let n_series = panel.n_series();
        let cov_z_unit = if panel.global_covariates().ncols() > 0 { 1.0 } else { 0.0 };

        let w: Vec<f64> = panel
            .global_counts()
            .iter()
            .map(|&z| (z as f64 - cov_z_unit).max(0.1))
            .collect();
        let w0 = w[0];

        let mut series = Vec::with_capacity(n_series);
        let mut x = Vec::with_capacity(n_series);
        let mut x0 = Vec::with_capacity(n_series);
        for j in 0..n_series {
            let cov_unit = if panel.covariates(j).ncols() > 0 { 1.0 } else { 0.0 };
            let xj: Vec<f64> = panel
                .counts(j)
                .iter()
                .zip(&w)
                .map(|(&y, &wt)| (y as f64 - wt - cov_unit).max(0.1))
                .collect();
            let mean_x = crate::math::mean(&xj);
            let delta = (hyper.tau * 0.5).min(0.9);
            let beta = 0.5 / delta;
            let alpha = (mean_x * (1.0 - beta * delta) / delta).max(0.1);
            series.push(SeriesParams {
                alpha,
                beta,
                delta,
                xi: vec![0.0, 1.0],
                phi: DVector::zeros(panel.covariates(j).ncols()),
                lambda: DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
                eta: hyper.a_eta * hyper.b_eta,
                gamma: 1.0,
            });
            x0.push(xj[0]);
            x.push(xj);
        }

        let mean_w = crate::math::mean(&w);
        let delta_w = (hyper.tau_w * 0.5).min(0.9);
        let beta_w = 0.5 / delta_w;
        let alpha_w = (mean_w * (1.0 - beta_w * delta_w) / delta_w).max(0.1);
        let global = GlobalParams {
            alpha: alpha_w,
            beta: beta_w,
            delta: delta_w,
            phi: DVector::zeros(panel.global_covariates().ncols()),
        };

        let params = StaticParams { series, global };
        params.validate()?;
        let paths = LatentPaths {
            w0,
            w,
            x0,
            x,
            s0: vec![0; n_series],
            s: vec![vec![0; t_len]; n_series],
        };

        let mk = || AdaptState::with_schedule(cfg.initial_step, super::TARGET_ACCEPTANCE, cfg.adapt_c, cfg.adapt_kappa);
        let adapt = AdaptBank {
            global_arg: ArgAdapt {
                alpha: mk(),
                beta: mk(),
                delta: mk(),
            },
            phi_z: (0..panel.global_covariates().ncols()).map(|_| mk()).collect(),
            series: (0..n_series)
                .map(|j| SeriesAdapt {
                    arg: ArgAdapt {
                        alpha: mk(),
                        beta: mk(),
                        delta: mk(),
                    },
                    xi: mk(),
                    phi: (0..panel.covariates(j).ncols()).map(|_| mk()).collect(),
                })
                .collect(),
        };

        Ok(SamplerState {
            sweep: 0,
            params,
            paths,
            adapt,
        })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn config(&self) -> &McmcConfig {
        &self.cfg
    }

    /// Post-freeze acceptance rates and step sizes, one row per adaptive
    /// chain.
    pub fn acceptance_report(&self) -> Vec<AcceptanceReport> {
        let mut rows = Vec::new();
        let mut push = |name: String, a: &AdaptState| {
            rows.push(AcceptanceReport {
                name,
                rate: a.acceptance_rate(),
                step_size: a.step_size(),
            });
        };
        let bank = &self.state.adapt;
        push("alpha_w".into(), &bank.global_arg.alpha);
        push("beta_w".into(), &bank.global_arg.beta);
        push("delta_w".into(), &bank.global_arg.delta);
        for (m, a) in bank.phi_z.iter().enumerate() {
            push(format!("phi_z[{m}]"), a);
        }
        for (j, s) in bank.series.iter().enumerate() {
            push(format!("series{j}.alpha"), &s.arg.alpha);
            push(format!("series{j}.beta"), &s.arg.beta);
            push(format!("series{j}.delta"), &s.arg.delta);
            push(format!("series{j}.xi"), &s.xi);
            for (m, a) in s.phi.iter().enumerate() {
                push(format!("series{j}.phi[{m}]"), a);
            }
        }
        rows
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            n_particles: self.cfg.n_particles,
            quantiles: Vec::new(),
            max_retries: self.cfg.filter_retries,
            retry_growth: self.cfg.filter_retry_growth,
            flat_weights: false,
        }
    }

    /// Run one full sweep; returns the retained draw if this sweep is kept.
    pub fn step(&mut self) -> Result<Option<DrawRecord>, McmcError> {
        let sweep = self.state.sweep;
        if sweep >= self.cfg.sweeps {
            return Ok(None);
        }
        if sweep == self.cfg.burnin {
            self.state.adapt.freeze_and_reset();
        }

        let snapshot = self.state.clone();
        match self.sweep_once(sweep) {
            Ok(()) => {}
            Err(e) => {
                self.state = snapshot;
                return Err(e);
            }
        }
        self.state.sweep += 1;

        let retained = sweep >= self.cfg.burnin && (sweep - self.cfg.burnin) % self.cfg.thin == 0;
        if !retained {
            return Ok(None);
        }
        let loglik = complete_data_loglik(self.panel, &self.state.paths, &self.state.params)?;
        let retained_idx = (sweep - self.cfg.burnin) / self.cfg.thin;
        let paths = if retained_idx % self.cfg.path_thin == 0 {
            Some(self.state.paths.clone())
        } else {
            None
        };
        if retained_idx % 500 == 0 {
            log::info!("sweep {sweep}: complete-data loglik {loglik:.2}");
        }
        Ok(Some(DrawRecord {
            sweep,
            params: self.state.params.clone(),
            loglik,
            paths,
        }))
    }

    fn sweep_once(&mut self, sweep: usize) -> Result<(), McmcError> {
        let seed = self.cfg.seed;
        let stride = self.stride;
        let sweep_u = sweep as u64;
        let fcfg = self.filter_config();

        // Block (1a): global path.
        {
            let mut rng = stream_rng(seed, stride, sweep_u, SLOT_GLOBAL_FILTER);
            let out = sm_filter_global(
                self.panel,
                &self.state.params,
                &self.state.paths.x,
                &self.state.paths.s,
                &mut rng,
                &fcfg,
            )
            .map_err(|e| McmcError::from_filter(e, sweep, "global"))?;
            self.state.paths.w0 = out.path0;
            self.state.paths.w = out.path;
        }

        // Block (1b): global ARG parameters.
        {
            let g = &mut self.state.params.global;
            let mut rng = stream_rng(seed, stride, sweep_u, SLOT_GLOBAL_ARG);
            let (a, b, d) = sample_arg_params(
                &mut rng,
                self.state.paths.w0,
                &self.state.paths.w,
                &self.global_priors,
                (g.alpha, g.beta, g.delta),
                &mut self.state.adapt.global_arg,
            );
            g.alpha = a;
            g.beta = b;
            g.delta = d;
        }

        // Block (1c): global covariate coefficients.
        if self.panel.global_covariates().ncols() > 0 {
            let mut rng = stream_rng(seed, stride, sweep_u, SLOT_GLOBAL_PHI);
            sample_phi(
                &mut rng,
                self.panel.global_counts(),
                self.panel.global_covariates(),
                &self.state.paths.w,
                &self.phi_z_mean,
                &self.phi_z_prec,
                &mut self.state.params.global.phi,
                &mut self.state.adapt.phi_z,
            );
        }

        // Block (2): per-series updates, independent given the global path.
        let panel = self.panel;
        let hyper = &self.hyper;
        let series_priors = self.series_priors;
        let phi_mean = &self.phi_mean;
        let phi_prec = &self.phi_prec;
        let LatentPaths { w, x, x0, s, s0, .. } = &mut self.state.paths;
        let w: &[f64] = w;
        self.state
            .params
            .series
            .par_iter_mut()
            .zip(self.state.adapt.series.par_iter_mut())
            .zip(x.par_iter_mut())
            .zip(x0.par_iter_mut())
            .zip(s.par_iter_mut())
            .zip(s0.par_iter_mut())
            .enumerate()
            .map(|(j, (((((sp, ad), xj), x0j), sj), s0j))| {
                series_sweep(
                    panel,
                    hyper,
                    &series_priors,
                    &phi_mean[j],
                    &phi_prec[j],
                    &fcfg,
                    seed,
                    stride,
                    sweep,
                    j,
                    sp,
                    ad,
                    xj,
                    x0j,
                    sj,
                    s0j,
                    w,
                )
            })
            .collect::<Result<Vec<()>, McmcError>>()?;
        Ok(())
    }

    /// Run the remaining sweeps and collect the retained draws.
    pub fn run(&mut self) -> Result<PosteriorDraws, McmcError> {
        let mut draws = PosteriorDraws::default();
        while self.state.sweep < self.cfg.sweeps {
            if let Some(record) = self.step()? {
                draws.records.push(record);
            }
        }
        Ok(draws)
    }
}

#[allow(clippy::too_many_arguments)]
fn series_sweep(
    panel: &CountPanel,
    hyper: &HyperParams,
    series_priors: &ArgPriors,
    phi_mean: &DVector<f64>,
    phi_prec: &DMatrix<f64>,
    fcfg: &FilterConfig,
    seed: u64,
    stride: u64,
    sweep: usize,
    j: usize,
    sp: &mut SeriesParams,
    ad: &mut SeriesAdapt,
    xj: &mut Vec<f64>,
    x0j: &mut f64,
    sj: &mut Vec<u8>,
    s0j: &mut u8,
    w: &[f64],
) -> Result<(), McmcError> {
    let base_slot = 3 + SLOTS_PER_SERIES * j as u64;
    let sweep_u = sweep as u64;

    // (2a) Intensity path.
    {
        let mut rng = stream_rng(seed, stride, sweep_u, base_slot);
        let out = sm_filter_local(j, panel, sp, w, sj, &mut rng, fcfg)
            .map_err(|e| McmcError::from_filter(e, sweep, &format!("series {j}")))?;
        *x0j = out.path0;
        *xj = out.path;
    }

    // (2b) Regime chain.
    {
        let emissions = emission_logmatrix(j, panel, sp, w, xj)?;
        let init = stationary_distribution(&sp.lambda);
        let mut rng = stream_rng(seed, stride, sweep_u, base_slot + 1);
        let chain = ffbs_sample(&mut rng, &emissions, &sp.lambda, &init)
            .map_err(|e| McmcError::from_ffbs(e, sweep, j))?;
        *s0j = chain.s0;
        *sj = chain.path;
    }

    // (2c) Transition rows.
    {
        let mut rng = stream_rng(seed, stride, sweep_u, base_slot + 2);
        sp.lambda = sample_lambda(&mut rng, *s0j, sj, &hyper.dirichlet_conc)?;
    }

    // (2d) Jump hyper-layer in block: eta, gamma, then xi.
    {
        let mut rng = stream_rng(seed, stride, sweep_u, base_slot + 3);
        sp.eta = sample_eta(&mut rng, sp.xi[1], sp.gamma, hyper.a_eta, hyper.b_eta, hyper.c_gamma);
        sp.gamma = sample_gamma_shape(
            &mut rng,
            hyper.a_gamma,
            hyper.b_gamma,
            hyper.c_gamma,
            sp.eta,
            sp.xi[1],
        )?;
        let cov = covariate_column(panel, &sp.phi, j)?;
        let y = panel.counts(j);
        let mut y2 = Vec::new();
        let mut x2 = Vec::new();
        let mut wbar2 = Vec::new();
        for t in 0..panel.t_len() {
            if sj[t] == 1 {
                y2.push(y[t]);
                x2.push(xj[t]);
                wbar2.push(w[t] + cov[t]);
            }
        }
        sp.xi[1] = sample_xi(&mut rng, sp.xi[1], &y2, &x2, &wbar2, sp.gamma, sp.eta, &mut ad.xi);
    }

    // (2e) Series ARG parameters.
    {
        let mut rng = stream_rng(seed, stride, sweep_u, base_slot + 4);
        let (a, b, d) = sample_arg_params(
            &mut rng,
            *x0j,
            xj,
            series_priors,
            (sp.alpha, sp.beta, sp.delta),
            &mut ad.arg,
        );
        sp.alpha = a;
        sp.beta = b;
        sp.delta = d;
    }

    // (2f) Series covariate coefficients.
    if panel.covariates(j).ncols() > 0 {
        let base: Vec<f64> = (0..panel.t_len())
            .map(|t| w[t] + xj[t] * sp.amplification(sj[t]))
            .collect();
        let mut rng = stream_rng(seed, stride, sweep_u, base_slot + 5);
        sample_phi(
            &mut rng,
            panel.counts(j),
            panel.covariates(j),
            &base,
            phi_mean,
            phi_prec,
            &mut sp.phi,
            &mut ad.phi,
        );
    }

    Ok(())
}
