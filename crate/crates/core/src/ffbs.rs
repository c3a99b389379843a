//! Forward-filtering backward-sampling for the per-series hidden regime
//! chains.
//!
//! The forward pass runs in linear space with a per-step max-shift of the
//! log emissions, accumulating the log normalising constant; the backward
//! pass draws the path from the exact joint posterior, finishing with the
//! initial label given the first sampled state.

use crate::dist::poisson_logpmf;
use crate::model::{covariate_column, CountPanel, ModelError, SeriesParams};
use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FfbsError {
    #[error("forward filter degenerate at t={t}: all regimes have zero likelihood")]
    Degenerate { t: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Posterior summary of one regime chain: filtered probabilities, a sampled
/// path, and the log marginal likelihood of the emissions under the chain.
#[derive(Debug, Clone)]
pub struct ChainPosterior {
    /// Filtered probabilities, one simplex row per day.
    pub filtered: Vec<Vec<f64>>,
    /// Sampled initial label.
    pub s0: u8,
    /// Sampled regime path over the T days.
    pub path: Vec<u8>,
    /// Log normalising constant of the forward recursion.
    pub log_norm: f64,
}

/// Per-day, per-regime Poisson log-likelihood of the observed counts of
/// series `j` given the latent paths: entry (t, l) conditions on regime l.
pub fn emission_logmatrix(
    j: usize,
    panel: &CountPanel,
    sp: &SeriesParams,
    w: &[f64],
    x_j: &[f64],
) -> Result<Vec<Vec<f64>>, ModelError> {
    let cov = covariate_column(panel, &sp.phi, j)?;
    let n_regimes = sp.xi.len();
    let y = panel.counts(j);
    Ok((0..panel.t_len())
        .map(|t| {
            (0..n_regimes)
                .map(|l| {
                    let lam = w[t] + x_j[t] * (1.0 + sp.xi[l]) + cov[t];
                    poisson_logpmf(y[t], lam)
                })
                .collect()
        })
        .collect())
}

/// Draw a regime path given log emissions, a row-stochastic transition
/// matrix, and an initial distribution.
pub fn ffbs_sample<R: Rng + ?Sized>(
    rng: &mut R,
    emissions: &[Vec<f64>],
    lambda: &DMatrix<f64>,
    init: &[f64],
) -> Result<ChainPosterior, FfbsError> {
    let t_len = emissions.len();
    let n_regimes = lambda.nrows();
    if t_len == 0 {
        return Err(FfbsError::Invalid("empty emission matrix".into()));
    }
    if lambda.ncols() != n_regimes || init.len() != n_regimes {
        return Err(FfbsError::Invalid("dimension mismatch".into()));
    }

    let mut filtered = vec![vec![0.0; n_regimes]; t_len];
    let mut log_norm = 0.0;
    let mut prev = init.to_vec();
    for (t, emis) in emissions.iter().enumerate() {
        if emis.len() != n_regimes {
            return Err(FfbsError::Invalid(format!("emission row {t} length")));
        }
        let max_emis = emis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max_emis.is_finite() {
            return Err(FfbsError::Degenerate { t });
        }
        let mut norm = 0.0;
        for k in 0..n_regimes {
            let pred: f64 = (0..n_regimes).map(|l| prev[l] * lambda[(l, k)]).sum();
            let val = pred * (emis[k] - max_emis).exp();
            filtered[t][k] = val;
            norm += val;
        }
        if !(norm > 0.0) {
            return Err(FfbsError::Degenerate { t });
        }
        for k in 0..n_regimes {
            filtered[t][k] /= norm;
        }
        log_norm += norm.ln() + max_emis;
        prev.copy_from_slice(&filtered[t]);
    }

    // Backward sampling: s_T from the last filtered row, then each earlier
    // state proportional to filtered_t(l) * Lambda(l, s_{t+1}).
    let mut path = vec![0u8; t_len];
    path[t_len - 1] = sample_index(rng, &filtered[t_len - 1]) as u8;
    for t in (0..t_len - 1).rev() {
        let next = path[t + 1] as usize;
        let weights: Vec<f64> = (0..n_regimes)
            .map(|l| filtered[t][l] * lambda[(l, next)])
            .collect();
        path[t] = sample_index(rng, &weights) as u8;
    }
    let first = path[0] as usize;
    let init_weights: Vec<f64> = (0..n_regimes)
        .map(|l| init[l] * lambda[(l, first)])
        .collect();
    let s0 = sample_index(rng, &init_weights) as u8;

    Ok(ChainPosterior {
        filtered,
        s0,
        path,
        log_norm,
    })
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stationary_distribution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_emissions_recover_prior_chain() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.4, 0.6]);
        let init = stationary_distribution(&lambda);
        let emissions = vec![vec![-1.3, -1.3]; 12];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut trans = [[0u64; 2]; 2];
        for _ in 0..n {
            let out = ffbs_sample(&mut rng, &emissions, &lambda, &init).unwrap();
            let mut prev = out.s0 as usize;
            for &s in &out.path {
                trans[prev][s as usize] += 1;
                prev = s as usize;
            }
        }
        for l in 0..2 {
            let row_total = (trans[l][0] + trans[l][1]) as f64;
            for k in 0..2 {
                let p_hat = trans[l][k] as f64 / row_total;
                let p = lambda[(l, k)];
                let se = (p * (1.0 - p) / row_total).sqrt();
                assert!(
                    (p_hat - p).abs() < 4.0 * se,
                    "transition {l}->{k}: {p_hat} vs {p}"
                );
            }
        }
    }

    #[test]
    fn near_deterministic_emissions_pin_path() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let init = vec![0.5, 0.5];
        // Regime pattern 0, 1, 0, 1 overwhelmingly likely.
        let big = 0.0;
        let small = -60.0;
        let emissions = vec![
            vec![big, small],
            vec![small, big],
            vec![big, small],
            vec![small, big],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let out = ffbs_sample(&mut rng, &emissions, &lambda, &init).unwrap();
            assert_eq!(out.path, vec![0, 1, 0, 1]);
        }
    }

    #[test]
    fn degenerate_row_reports_time() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let init = vec![0.5, 0.5];
        let emissions = vec![
            vec![-1.0, -2.0],
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        match ffbs_sample(&mut rng, &emissions, &lambda, &init) {
            Err(FfbsError::Degenerate { t }) => assert_eq!(t, 1),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn filtered_rows_are_simplex() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]);
        let init = stationary_distribution(&lambda);
        let emissions: Vec<Vec<f64>> = (0..30)
            .map(|t| vec![-(t as f64 % 5.0), -((t + 2) as f64 % 7.0)])
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let out = ffbs_sample(&mut rng, &emissions, &lambda, &init).unwrap();
        for row in &out.filtered {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
