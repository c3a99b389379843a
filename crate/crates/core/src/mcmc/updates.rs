//! Conditional updates of the Gibbs sweep: adaptive MH moves for the ARG
//! parameters, amplification sizes and covariate coefficients, and exact
//! draws for the jump hyper-layer and the transition-matrix rows.

use super::arwmh::{arwmh_step_cached, AdaptState, ProposalFamily};
use super::McmcError;
use crate::dist::{
    dirichlet_sample, gamma_logpdf, gamma_shape_conjugate_sample, gamma_shape_default_grid,
    ncga_logpdf_buf, DistError, GridSpec, NcGaParams, DEFAULT_NCGA_TOL,
};
use crate::model::transition_counts;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

/// Gamma (shape, scale) priors for one ARG parameter triple, plus the
/// truncation point of the delta prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgPriors {
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_delta: f64,
    pub b_delta: f64,
    pub tau: f64,
}

/// Adaptive step-size states for one ARG parameter triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgAdapt {
    pub alpha: AdaptState,
    pub beta: AdaptState,
    pub delta: AdaptState,
}

impl ArgAdapt {
    pub fn new(initial_step: f64) -> Self {
        Self {
            alpha: AdaptState::new(initial_step),
            beta: AdaptState::new(initial_step),
            delta: AdaptState::new(initial_step),
        }
    }

    pub fn freeze(&mut self) {
        self.alpha.freeze();
        self.beta.freeze();
        self.delta.freeze();
    }
}

/// Sum of non-central Gamma transition log-densities along a path. NaN on
/// numerical failure so MH treats the proposal as a rejection.
pub fn arg_path_loglik(
    path0: f64,
    path: &[f64],
    alpha: f64,
    beta: f64,
    delta: f64,
    buf: &mut Vec<f64>,
) -> f64 {
    let mut total = 0.0;
    let mut prev = path0;
    for &x in path {
        let p = NcGaParams {
            shape: alpha,
            noncentrality: beta * prev,
            scale: delta,
        };
        match ncga_logpdf_buf(x, &p, DEFAULT_NCGA_TOL, buf) {
            Ok(lp) => total += lp,
            Err(_) => return f64::NAN,
        }
        prev = x;
    }
    total
}

/// One sweep of the three ARG parameter updates (alpha, beta, delta in that
/// order), each an adaptive MH move against prior times transition terms.
pub fn sample_arg_params<R: Rng + ?Sized>(
    rng: &mut R,
    path0: f64,
    path: &[f64],
    priors: &ArgPriors,
    current: (f64, f64, f64),
    adapt: &mut ArgAdapt,
) -> (f64, f64, f64) {
    let (mut alpha, mut beta, mut delta) = current;
    let mut buf = Vec::new();

    let buf_cell = std::cell::RefCell::new(&mut buf);
    {
        let target = |a: f64| {
            gamma_logpdf(a, priors.a_alpha, priors.b_alpha)
                + arg_path_loglik(path0, path, a, beta, delta, &mut buf_cell.borrow_mut())
        };
        let lp = target(alpha);
        alpha = arwmh_step_cached(rng, alpha, lp, target, ProposalFamily::LogNormal, &mut adapt.alpha)
            .value;
    }
    {
        let target = |b: f64| {
            gamma_logpdf(b, priors.a_beta, priors.b_beta)
                + arg_path_loglik(path0, path, alpha, b, delta, &mut buf_cell.borrow_mut())
        };
        let lp = target(beta);
        beta = arwmh_step_cached(rng, beta, lp, target, ProposalFamily::LogNormal, &mut adapt.beta)
            .value;
    }
    {
        // The truncation normaliser of the delta prior is constant in delta,
        // and the truncated-lognormal proposal never leaves (0, tau).
        let target = |d: f64| {
            gamma_logpdf(d, priors.a_delta, priors.b_delta)
                + arg_path_loglik(path0, path, alpha, beta, d, &mut buf_cell.borrow_mut())
        };
        let lp = target(delta);
        delta = arwmh_step_cached(
            rng,
            delta,
            lp,
            target,
            ProposalFamily::TruncLogNormal { upper: priors.tau },
            &mut adapt.delta,
        )
        .value;
    }
    (alpha, beta, delta)
}

/// Exact conjugate draw of eta given the amplification size and the shape of
/// its prior: Gamma(a_eta + gamma (c_gamma + 1), b_eta / (1 + b_eta xi2)).
pub fn sample_eta<R: Rng + ?Sized>(
    rng: &mut R,
    xi2: f64,
    gamma: f64,
    a_eta: f64,
    b_eta: f64,
    c_gamma: f64,
) -> f64 {
    let shape = a_eta + gamma * (c_gamma + 1.0);
    let scale = b_eta / (1.0 + b_eta * xi2);
    rand_distr::Gamma::new(shape, scale)
        .expect("positive shape/scale")
        .sample(rng)
}

/// Inverse-transform draw of the Gamma shape parameter from its conjugate
/// posterior, widening the default grid when the mass falls outside it.
pub fn sample_gamma_shape<R: Rng + ?Sized>(
    rng: &mut R,
    a_gamma: f64,
    b_gamma: f64,
    c_gamma: f64,
    eta: f64,
    xi2: f64,
) -> Result<f64, McmcError> {
    let mut grid = gamma_shape_default_grid(a_gamma, b_gamma, c_gamma, eta, xi2)
        .map_err(McmcError::Dist)?;
    for _ in 0..4 {
        match gamma_shape_conjugate_sample(rng, a_gamma, b_gamma, c_gamma, eta, xi2, &grid) {
            Ok(draw) => return Ok(draw),
            Err(DistError::GridCoverage { side, .. }) => {
                grid = match side {
                    "lower" => GridSpec::new(grid.min / 1000.0, grid.max, grid.points)
                        .map_err(McmcError::Dist)?,
                    _ => GridSpec::new(grid.min, grid.max * 10.0, grid.points)
                        .map_err(McmcError::Dist)?,
                };
            }
            Err(e) => return Err(McmcError::Dist(e)),
        }
    }
    Err(McmcError::Update(
        "gamma shape grid kept missing the posterior mass after widening".into(),
    ))
}

/// Log full conditional of the amplification size given the regime-2 days.
/// `wbar` entries are the non-amplified remainder of each day's intensity,
/// w_t + exp(v_t' phi); combined with the prior terms this equals the exact
/// full conditional induced by the complete-data likelihood.
pub fn xi_log_target(
    xi: f64,
    gamma: f64,
    eta: f64,
    y2: &[u64],
    x2: &[f64],
    wbar2: &[f64],
) -> f64 {
    if xi <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let x_sum: f64 = x2.iter().sum();
    let mut lp = (gamma - 1.0) * xi.ln() - xi * (eta + x_sum);
    for ((&y, &x), &wbar) in y2.iter().zip(x2).zip(wbar2) {
        if y > 0 {
            lp += y as f64 * (wbar + x * (1.0 + xi)).ln();
        }
    }
    lp
}

/// Update the amplification size xi_2. With no regime-2 days the full
/// conditional collapses to the Gamma(gamma, 1/eta) prior and is drawn
/// exactly; otherwise one adaptive MH move with a Gamma proposal.
pub fn sample_xi<R: Rng + ?Sized>(
    rng: &mut R,
    current: f64,
    y2: &[u64],
    x2: &[f64],
    wbar2: &[f64],
    gamma: f64,
    eta: f64,
    adapt: &mut AdaptState,
) -> f64 {
    if y2.is_empty() {
        return rand_distr::Gamma::new(gamma, 1.0 / eta)
            .expect("positive shape/scale")
            .sample(rng);
    }
    let target = |xi: f64| xi_log_target(xi, gamma, eta, y2, x2, wbar2);
    let lp = target(current);
    arwmh_step_cached(rng, current, lp, target, ProposalFamily::Gamma, adapt).value
}

/// Element-wise adaptive MH sweep over a covariate coefficient vector.
///
/// `base` carries the latent part of each day's intensity; the likelihood
/// factor of day t is Poisson(count_t | base_t + exp(v_t' phi)). The prior
/// is N(prior_mean, prior_precision^-1). Proposals overflowing the linear
/// predictor are rejected outright.
#[allow(clippy::too_many_arguments)]
pub fn sample_phi<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &[u64],
    covariates: &DMatrix<f64>,
    base: &[f64],
    prior_mean: &DVector<f64>,
    prior_precision: &DMatrix<f64>,
    phi: &mut DVector<f64>,
    adapt: &mut [AdaptState],
) {
    let dim = phi.len();
    if dim == 0 {
        return;
    }
    debug_assert_eq!(adapt.len(), dim);
    let t_len = counts.len();
    let mut linear: Vec<f64> = (0..t_len)
        .map(|t| (0..dim).map(|m| covariates[(t, m)] * phi[m]).sum())
        .collect();

    for m in 0..dim {
        let phi_m = phi[m];
        let loglik = |value: f64| -> f64 {
            let delta = value - phi_m;
            let mut total = 0.0;
            for t in 0..t_len {
                let lp = linear[t] + covariates[(t, m)] * delta;
                if lp > 700.0 {
                    return f64::NEG_INFINITY;
                }
                let e = lp.exp();
                let lam = base[t] + e;
                if counts[t] > 0 {
                    if lam <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += counts[t] as f64 * lam.ln();
                }
                total -= e;
            }
            total
        };
        let log_prior = |value: f64| -> f64 {
            let mut diff = phi.clone();
            diff[m] = value;
            diff -= prior_mean;
            -0.5 * (prior_precision * &diff).dot(&diff)
        };
        let target = |value: f64| log_prior(value) + loglik(value);
        let lp = target(phi_m);
        let out = arwmh_step_cached(rng, phi_m, lp, target, ProposalFamily::Normal, &mut adapt[m]);
        if out.accepted {
            let delta = out.value - phi_m;
            for t in 0..t_len {
                linear[t] += covariates[(t, m)] * delta;
            }
            phi[m] = out.value;
        }
    }
}

/// Draw every row of a transition matrix from its Dirichlet full
/// conditional, concentration = prior + observed transition counts.
pub fn sample_lambda<R: Rng + ?Sized>(
    rng: &mut R,
    s0: u8,
    s: &[u8],
    prior_conc: &[f64],
) -> Result<DMatrix<f64>, McmcError> {
    let n_regimes = prior_conc.len();
    let counts = transition_counts(s0, s, n_regimes);
    let mut lambda = DMatrix::zeros(n_regimes, n_regimes);
    for l in 0..n_regimes {
        let conc: Vec<f64> = (0..n_regimes)
            .map(|k| prior_conc[k] + counts[l][k] as f64)
            .collect();
        let row = dirichlet_sample(rng, &conc).map_err(McmcError::Dist)?;
        for k in 0..n_regimes {
            lambda[(l, k)] = row[k];
        }
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, variance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eta_posterior_moments() {
        let (xi2, gamma, a_eta, b_eta, c_gamma) = (0.7, 2.0, 1.5, 1.0, 1.0);
        let shape = a_eta + gamma * (c_gamma + 1.0);
        let scale = b_eta / (1.0 + b_eta * xi2);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let n = 400_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_eta(&mut rng, xi2, gamma, a_eta, b_eta, c_gamma))
            .collect();
        let m = mean(&draws);
        let v = variance(&draws);
        let se_m = (shape * scale * scale / n as f64).sqrt();
        assert!((m - shape * scale).abs() < 4.0 * se_m);
        assert!((v - shape * scale * scale).abs() < 0.05 * shape * scale * scale);
    }

    #[test]
    fn eta_zero_xi_reduces_scale_to_prior() {
        // xi2 = 0 leaves the prior scale b_eta in place; check by matching
        // the analytic mean of Gamma(a_eta + gamma (c_gamma + 1), b_eta).
        let (gamma, a_eta, b_eta, c_gamma) = (3.0, 2.0, 0.5, 2.0);
        let shape = a_eta + gamma * (c_gamma + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_eta(&mut rng, 0.0, gamma, a_eta, b_eta, c_gamma))
            .collect();
        let se = (shape * b_eta * b_eta / n as f64).sqrt();
        assert!((mean(&draws) - shape * b_eta).abs() < 4.0 * se);
    }

    #[test]
    fn xi_empty_regime_set_is_prior_draw() {
        let (gamma, eta) = (2.5, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut adapt = AdaptState::new(0.3);
        let n = 300_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_xi(&mut rng, 1.0, &[], &[], &[], gamma, eta, &mut adapt))
            .collect();
        let m = mean(&draws);
        let v = variance(&draws);
        let target_mean = gamma / eta;
        let target_var = gamma / (eta * eta);
        let se = (target_var / n as f64).sqrt();
        assert!((m - target_mean).abs() < 4.0 * se);
        assert!((v - target_var).abs() < 0.05 * target_var);
    }

    #[test]
    fn xi_target_monotone_in_counts() {
        // Scaling up regime-2 counts shifts likelihood ratios towards larger
        // xi: the target ratio t(xi_hi) - t(xi_lo) must increase in y.
        let x2 = [2.0, 3.0];
        let wbar2 = [1.0, 1.5];
        let (gamma, eta) = (1.5, 1.0);
        let low: Vec<u64> = vec![2, 3];
        let high: Vec<u64> = vec![8, 12];
        let ratio = |y2: &[u64]| {
            xi_log_target(2.0, gamma, eta, y2, &x2, &wbar2)
                - xi_log_target(0.5, gamma, eta, y2, &x2, &wbar2)
        };
        assert!(ratio(&high) > ratio(&low));
    }

    #[test]
    fn lambda_rows_are_simplex_and_prior_reverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        // Path never leaves regime 0, so row 1 is drawn from its prior.
        let s = vec![0u8; 2000];
        let prior = [1.0, 1.0];
        let n = 50_000;
        let mut row1_mean = 0.0;
        for _ in 0..n {
            let lam = sample_lambda(&mut rng, 0, &s, &prior).unwrap();
            assert!((lam.row(0).sum() - 1.0).abs() < 1e-12);
            assert!((lam.row(1).sum() - 1.0).abs() < 1e-12);
            // Row 0 posterior piles onto staying put.
            assert!(lam[(0, 0)] > 0.9);
            row1_mean += lam[(1, 0)];
        }
        row1_mean /= n as f64;
        let se = (1.0f64 / 12.0 / n as f64).sqrt();
        assert!((row1_mean - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn lambda_recovers_simulated_chain() {
        let truth = [[0.9, 0.1], [0.3, 0.7]];
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let t_len = 20_000;
        let mut s = Vec::with_capacity(t_len);
        let mut prev = 0usize;
        for _ in 0..t_len {
            let u: f64 = rng.random();
            let next = usize::from(u > truth[prev][0]);
            s.push(next as u8);
            prev = next;
        }
        let n = 2_000;
        let mut means = [[0.0f64; 2]; 2];
        for _ in 0..n {
            let lam = sample_lambda(&mut rng, 0, &s, &[1.0, 1.0]).unwrap();
            for l in 0..2 {
                for k in 0..2 {
                    means[l][k] += lam[(l, k)];
                }
            }
        }
        for l in 0..2 {
            for k in 0..2 {
                let m = means[l][k] / n as f64;
                // Posterior sd is about sqrt(p q / row count); rows hold
                // thousands of transitions.
                assert!(
                    (m - truth[l][k]).abs() < 0.02,
                    "row {l} col {k}: {m} vs {}",
                    truth[l][k]
                );
            }
        }
    }

    #[test]
    fn phi_tight_prior_pins_coefficients() {
        let t_len = 50;
        let counts = vec![1u64; t_len];
        let covariates = DMatrix::from_element(t_len, 1, 1.0);
        let base = vec![1.0; t_len];
        let prior_mean = DVector::from_element(1, 2.0);
        let eps = 1e-8;
        let prior_precision = DMatrix::from_element(1, 1, 1.0 / eps);
        let mut phi = DVector::from_element(1, 2.0);
        let mut adapt = vec![AdaptState::new(0.1)];
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let mut max_dev: f64 = 0.0;
        for _ in 0..2000 {
            sample_phi(
                &mut rng,
                &counts,
                &covariates,
                &base,
                &prior_mean,
                &prior_precision,
                &mut phi,
                &mut adapt,
            );
            max_dev = max_dev.max((phi[0] - 2.0).abs());
        }
        assert!(max_dev < 50.0 * eps.sqrt(), "max deviation {max_dev}");
    }

    #[test]
    fn arg_params_beta_enters_through_noncentrality_product() {
        // On a constant path x_t = c the beta target is T identical terms
        // whose only beta dependence is the product beta * c.
        use crate::dist::{ncga_logpdf, NcGaParams};
        let c = 2.0;
        let t_len = 30;
        let path = vec![c; t_len];
        let mut buf = Vec::new();
        for &beta in &[0.1, 0.6, 1.4] {
            let via_path = arg_path_loglik(c, &path, 1.0, beta, 0.8, &mut buf);
            let p = NcGaParams::new(1.0, beta * c, 0.8).unwrap();
            let direct = t_len as f64 * ncga_logpdf(c, &p, 1e-10).unwrap();
            assert!((via_path - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_draws_respect_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let priors = ArgPriors {
            a_alpha: 1.0,
            b_alpha: 1.0,
            a_beta: 1.0,
            b_beta: 1.0,
            a_delta: 2.0,
            b_delta: 2.0,
            tau: 1.0,
        };
        let mut adapt = ArgAdapt::new(0.3);
        // Short synthetic path.
        let path: Vec<f64> = (0..40).map(|t| 1.0 + 0.3 * ((t as f64) * 0.7).sin()).collect();
        let mut current = (1.0, 0.5, 0.5);
        for _ in 0..500 {
            current = sample_arg_params(&mut rng, 1.0, &path, &priors, current, &mut adapt);
            assert!(current.2 > 0.0 && current.2 < 1.0, "delta {}", current.2);
            assert!(current.0 > 0.0 && current.1 > 0.0);
        }
    }
}
