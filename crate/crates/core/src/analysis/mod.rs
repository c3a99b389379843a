//! Post-fit analytics: intensity decomposition, amplification-regime
//! reports, rank correlations, and Bayesian linear regression with DIC.

mod regress;

pub use regress::{
    bayes_linreg_dic, build_features, feature_grid, run_regression, CoefficientSummary,
    FeatureKind, RegressionResult, RegressionSpec,
};

use crate::mcmc::DrawRecord;
use crate::model::{covariate_column, CountPanel, ModelError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no retained draws carry latent paths")]
    NoPaths,
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error("feature matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-day shares of the four intensity components of one series. Shares
/// are nonnegative and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub local: f64,
    pub amplification: f64,
    pub global: f64,
    pub covariates: f64,
}

impl ShareRow {
    pub fn sum(&self) -> f64 {
        self.local + self.amplification + self.global + self.covariates
    }
}

/// Posterior-mean intensity decomposition, `shares[j][t]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub shares: Vec<Vec<ShareRow>>,
}

/// Average the per-draw component shares of total intensity across every
/// retained draw that stored latent paths.
pub fn decompose(draws: &[DrawRecord], panel: &CountPanel) -> Result<Decomposition, AnalysisError> {
    let n_series = panel.n_series();
    let t_len = panel.t_len();
    let mut acc = vec![
        vec![
            ShareRow {
                local: 0.0,
                amplification: 0.0,
                global: 0.0,
                covariates: 0.0
            };
            t_len
        ];
        n_series
    ];
    let mut used = 0usize;
    for record in draws {
        let Some(paths) = &record.paths else { continue };
        used += 1;
        for j in 0..n_series {
            let sp = &record.params.series[j];
            let cov = covariate_column(panel, &sp.phi, j)?;
            for t in 0..t_len {
                let local = paths.x[j][t];
                let amp = paths.x[j][t] * sp.xi[paths.s[j][t] as usize];
                let global = paths.w[t];
                let total = local + amp + global + cov[t];
                let row = &mut acc[j][t];
                row.local += local / total;
                row.amplification += amp / total;
                row.global += global / total;
                row.covariates += cov[t] / total;
            }
        }
    }
    if used == 0 {
        return Err(AnalysisError::NoPaths);
    }
    let norm = used as f64;
    for series in &mut acc {
        for row in series {
            row.local /= norm;
            row.amplification /= norm;
            row.global /= norm;
            row.covariates /= norm;
            // Guard against drift from the per-draw normalisation.
            let s = row.sum();
            row.local /= s;
            row.amplification /= s;
            row.global /= s;
            row.covariates /= s;
        }
    }
    Ok(Decomposition { shares: acc })
}

/// One maximal run of days flagged as amplified (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
}

impl Episode {
    pub fn duration(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Amplification report of one series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesRegimeReport {
    /// Posterior probability of the amplification regime per day.
    pub prob_amplified: Vec<f64>,
    /// Days flagged amplified at the report threshold.
    pub flagged: Vec<bool>,
    /// Maximal runs of flagged days.
    pub episodes: Vec<Episode>,
}

impl SeriesRegimeReport {
    pub fn durations(&self) -> Vec<usize> {
        self.episodes.iter().map(Episode::duration).collect()
    }
}

/// Flag a day as amplified when its posterior regime-2 probability exceeds
/// `threshold` (0.5 by convention), and collect the flagged runs.
pub fn regime_report(
    draws: &[DrawRecord],
    n_series: usize,
    t_len: usize,
    threshold: f64,
) -> Result<Vec<SeriesRegimeReport>, AnalysisError> {
    let mut counts = vec![vec![0u64; t_len]; n_series];
    let mut used = 0u64;
    for record in draws {
        let Some(paths) = &record.paths else { continue };
        used += 1;
        for j in 0..n_series {
            for t in 0..t_len {
                if paths.s[j][t] > 0 {
                    counts[j][t] += 1;
                }
            }
        }
    }
    if used == 0 {
        return Err(AnalysisError::NoPaths);
    }
    Ok(counts
        .into_iter()
        .map(|cj| {
            let prob: Vec<f64> = cj.iter().map(|&c| c as f64 / used as f64).collect();
            let flagged: Vec<bool> = prob.iter().map(|&p| p > threshold).collect();
            let episodes = episodes_from_flags(&flagged);
            SeriesRegimeReport {
                prob_amplified: prob,
                flagged,
                episodes,
            }
        })
        .collect())
}

/// Maximal runs of `true` entries.
pub fn episodes_from_flags(flags: &[bool]) -> Vec<Episode> {
    let mut episodes = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                episodes.push(Episode { start: s, end: t - 1 });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        episodes.push(Episode {
            start: s,
            end: flags.len() - 1,
        });
    }
    episodes
}

/// Spearman's rank correlation: Pearson correlation of average ranks, with
/// ties sharing their mean rank.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(AnalysisError::TooShort(
            "rank correlation needs at least 3 points".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let ma = crate::math::mean(&ra);
    let mb = crate::math::mean(&rb);
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for i in 0..ra.len() {
        let da = ra[i] - ma;
        let db = rb[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(AnalysisError::Undefined(
            "an input is constant, its ranks have zero variance".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Ranks (1-based) with ties averaged.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_limits() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().rev().copied().collect();
        assert!((spearman_rho(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&a, &b).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_is_undefined() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            spearman_rho(&a, &b),
            Err(AnalysisError::Undefined(_))
        ));
    }

    #[test]
    fn spearman_handles_ties() {
        // Hand-computed with average ranks.
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        let rho = spearman_rho(&a, &b).unwrap();
        // ranks a: 1, 2.5, 2.5, 4; ranks b: 1..4.
        let expect = {
            let ra = [1.0f64, 2.5, 2.5, 4.0];
            let rb = [1.0f64, 2.0, 3.0, 4.0];
            let ma = 2.5f64;
            let mb = 2.5f64;
            let mut saa = 0.0f64;
            let mut sbb = 0.0f64;
            let mut sab = 0.0f64;
            for i in 0..4 {
                saa += (ra[i] - ma) * (ra[i] - ma);
                sbb += (rb[i] - mb) * (rb[i] - mb);
                sab += (ra[i] - ma) * (rb[i] - mb);
            }
            sab / (saa * sbb).sqrt()
        };
        assert!((rho - expect).abs() < 1e-12);
    }

    #[test]
    fn episodes_hand_cases() {
        assert!(episodes_from_flags(&[false, false, false]).is_empty());
        let eps = episodes_from_flags(&[true, true, false, true]);
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0], Episode { start: 0, end: 1 });
        assert_eq!(eps[1], Episode { start: 3, end: 3 });
        assert_eq!(eps[0].duration(), 2);
        assert_eq!(eps[1].duration(), 1);
        let eps = episodes_from_flags(&[true, true]);
        assert_eq!(eps, vec![Episode { start: 0, end: 1 }]);
    }
}
