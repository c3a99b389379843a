//! Data containers, intensity functions, and the complete-data
//! log-likelihood of the multivariate count model.
//!
//! A [`CountPanel`] holds J observed country series plus one global series
//! over T days; [`LatentPaths`] holds one draw of all latent variables; and
//! [`StaticParams`] holds every static model parameter. The complete-data
//! log-likelihood combines non-central Gamma transition terms for both
//! intensity processes, Poisson observation terms, and the regime-chain
//! factors.

use crate::dist::{self, ncga_logpdf_buf, poisson_logpmf, NcGaParams, DEFAULT_NCGA_TOL};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("covariate term overflow in series {series} at t={t}: v'phi = {linear} (largest contribution from coefficient {coef})")]
    CovariateOverflow {
        series: String,
        t: usize,
        linear: f64,
        coef: usize,
    },
    #[error(transparent)]
    Dist(#[from] dist::DistError),
}

/// Observed counts and covariates over T days.
///
/// `y[j][t]` are the per-series counts, `z[t]` the global counts. Each
/// series carries a T x p_j covariate matrix; a matrix with zero columns
/// means the exp(v'phi) term is absent from that intensity. Rescale factors
/// record any ingestion-time scaling so reports can restore the original
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountPanel {
    y: Vec<Vec<u64>>,
    z: Vec<u64>,
    v: Vec<DMatrix<f64>>,
    v_z: DMatrix<f64>,
    rescale: Vec<f64>,
    rescale_z: f64,
}

impl CountPanel {
    pub fn new(
        y: Vec<Vec<u64>>,
        z: Vec<u64>,
        v: Vec<DMatrix<f64>>,
        v_z: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let t_len = z.len();
        if t_len < 2 {
            return Err(ModelError::InvalidData(format!(
                "need at least 2 days, got {t_len}"
            )));
        }
        if y.is_empty() {
            return Err(ModelError::InvalidData("need at least one series".into()));
        }
        for (j, yj) in y.iter().enumerate() {
            if yj.len() != t_len {
                return Err(ModelError::Dimension(format!(
                    "series {j} has {} days, global series has {t_len}",
                    yj.len()
                )));
            }
        }
        if v.len() != y.len() {
            return Err(ModelError::Dimension(format!(
                "{} covariate matrices for {} series",
                v.len(),
                y.len()
            )));
        }
        for (j, vj) in v.iter().enumerate() {
            if vj.nrows() != t_len {
                return Err(ModelError::Dimension(format!(
                    "covariate matrix for series {j} has {} rows, need {t_len}",
                    vj.nrows()
                )));
            }
            if vj.iter().any(|c| !c.is_finite()) {
                return Err(ModelError::InvalidData(format!(
                    "covariates for series {j} contain non-finite values"
                )));
            }
        }
        if v_z.nrows() != t_len {
            return Err(ModelError::Dimension(format!(
                "global covariate matrix has {} rows, need {t_len}",
                v_z.nrows()
            )));
        }
        if v_z.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::InvalidData(
                "global covariates contain non-finite values".into(),
            ));
        }
        let rescale = vec![1.0; y.len()];
        Ok(Self {
            y,
            z,
            v,
            v_z,
            rescale,
            rescale_z: 1.0,
        })
    }

    /// Panel without any covariates.
    pub fn without_covariates(y: Vec<Vec<u64>>, z: Vec<u64>) -> Result<Self, ModelError> {
        let t_len = z.len();
        let v = vec![DMatrix::zeros(t_len, 0); y.len()];
        let v_z = DMatrix::zeros(t_len, 0);
        Self::new(y, z, v, v_z)
    }

    pub fn with_rescale(mut self, rescale: Vec<f64>, rescale_z: f64) -> Result<Self, ModelError> {
        if rescale.len() != self.n_series() {
            return Err(ModelError::Dimension(format!(
                "{} rescale factors for {} series",
                rescale.len(),
                self.n_series()
            )));
        }
        if rescale.iter().any(|&r| !(r.is_finite() && r > 0.0)) || !(self.rescale_z > 0.0) {
            return Err(ModelError::InvalidData(
                "rescale factors must be positive".into(),
            ));
        }
        self.rescale = rescale;
        self.rescale_z = rescale_z;
        Ok(self)
    }

    pub fn t_len(&self) -> usize {
        self.z.len()
    }

    pub fn n_series(&self) -> usize {
        self.y.len()
    }

    pub fn counts(&self, j: usize) -> &[u64] {
        &self.y[j]
    }

    pub fn global_counts(&self) -> &[u64] {
        &self.z
    }

    pub fn covariates(&self, j: usize) -> &DMatrix<f64> {
        &self.v[j]
    }

    pub fn global_covariates(&self) -> &DMatrix<f64> {
        &self.v_z
    }

    pub fn rescale_factors(&self) -> (&[f64], f64) {
        (&self.rescale, self.rescale_z)
    }
}

/// One draw of all latent variables: global path w, per-series paths x and
/// regime chains s, plus the initial values the transition terms condition
/// on. Regime labels are zero-based; regime 0 carries no amplification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPaths {
    pub w0: f64,
    pub w: Vec<f64>,
    pub x0: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub s0: Vec<u8>,
    pub s: Vec<Vec<u8>>,
}

impl LatentPaths {
    pub fn validate(&self, t_len: usize, n_series: usize, n_regimes: usize) -> Result<(), ModelError> {
        if self.w.len() != t_len
            || self.x.len() != n_series
            || self.s.len() != n_series
            || self.x0.len() != n_series
            || self.s0.len() != n_series
        {
            return Err(ModelError::Dimension("latent path dimensions".into()));
        }
        if !(self.w0 > 0.0) || self.w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(ModelError::InvalidData(
                "global intensity path must be strictly positive".into(),
            ));
        }
        for j in 0..n_series {
            if self.x[j].len() != t_len || self.s[j].len() != t_len {
                return Err(ModelError::Dimension(format!("series {j} path length")));
            }
            if !(self.x0[j] > 0.0) || self.x[j].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(ModelError::InvalidData(format!(
                    "intensity path for series {j} must be strictly positive"
                )));
            }
            if self.s0[j] as usize >= n_regimes
                || self.s[j].iter().any(|&s| s as usize >= n_regimes)
            {
                return Err(ModelError::InvalidData(format!(
                    "regime labels for series {j} out of range"
                )));
            }
        }
        Ok(())
    }
}

/// Static parameters of one country series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Amplification sizes per regime; `xi[0]` is pinned to zero.
    pub xi: Vec<f64>,
    pub phi: DVector<f64>,
    /// Row-stochastic regime transition matrix.
    pub lambda: DMatrix<f64>,
    pub eta: f64,
    pub gamma: f64,
}

impl SeriesParams {
    /// Amplification factor 1 + xi for a regime label.
    pub fn amplification(&self, regime: u8) -> f64 {
        1.0 + self.xi[regime as usize]
    }

    pub fn is_stationary(&self) -> bool {
        self.beta * self.delta < 1.0
    }
}

/// Static parameters of the shared global intensity process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub phi: DVector<f64>,
}

impl GlobalParams {
    pub fn is_stationary(&self) -> bool {
        self.beta * self.delta < 1.0
    }
}

/// All static parameters of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    pub series: Vec<SeriesParams>,
    pub global: GlobalParams,
}

impl StaticParams {
    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn n_regimes(&self) -> usize {
        self.series.first().map(|s| s.xi.len()).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.series.is_empty() {
            return Err(ModelError::InvalidParams("no series".into()));
        }
        let n_regimes = self.n_regimes();
        for (j, sp) in self.series.iter().enumerate() {
            for (name, v) in [
                ("alpha", sp.alpha),
                ("beta", sp.beta),
                ("delta", sp.delta),
                ("eta", sp.eta),
                ("gamma", sp.gamma),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ModelError::InvalidParams(format!(
                        "series {j}: {name} must be positive, got {v}"
                    )));
                }
            }
            if sp.xi.len() != n_regimes || sp.xi.is_empty() {
                return Err(ModelError::InvalidParams(format!(
                    "series {j}: {} amplification sizes for {n_regimes} regimes",
                    sp.xi.len()
                )));
            }
            if sp.xi[0] != 0.0 {
                return Err(ModelError::InvalidParams(format!(
                    "series {j}: xi for regime 1 must be 0, got {}",
                    sp.xi[0]
                )));
            }
            if sp.xi.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ModelError::InvalidParams(format!(
                    "series {j}: amplification sizes must be strictly increasing"
                )));
            }
            if sp.lambda.nrows() != n_regimes || sp.lambda.ncols() != n_regimes {
                return Err(ModelError::InvalidParams(format!(
                    "series {j}: transition matrix must be {n_regimes}x{n_regimes}"
                )));
            }
            for l in 0..n_regimes {
                let row = sp.lambda.row(l);
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(ModelError::InvalidParams(format!(
                        "series {j}: transition probabilities out of [0, 1]"
                    )));
                }
                if (row.sum() - 1.0).abs() > 1e-8 {
                    return Err(ModelError::InvalidParams(format!(
                        "series {j}: transition row {l} sums to {}",
                        row.sum()
                    )));
                }
            }
        }
        for (name, v) in [
            ("alpha_w", self.global.alpha),
            ("beta_w", self.global.beta),
            ("delta_w", self.global.delta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParams(format!(
                    "global: {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// exp(v_t' phi) for one row of a covariate matrix; 0 when there are no
/// covariate columns. Errs when the linear predictor would overflow.
fn covariate_term(
    v: &DMatrix<f64>,
    phi: &DVector<f64>,
    t: usize,
    series: &str,
) -> Result<f64, ModelError> {
    if v.ncols() == 0 {
        return Ok(0.0);
    }
    let mut linear = 0.0;
    for (m, &coef) in phi.iter().enumerate() {
        linear += v[(t, m)] * coef;
    }
    if linear > 700.0 {
        let coef = (0..phi.len())
            .max_by(|&a, &b| {
                (v[(t, a)] * phi[a])
                    .abs()
                    .total_cmp(&(v[(t, b)] * phi[b]).abs())
            })
            .unwrap_or(0);
        return Err(ModelError::CovariateOverflow {
            series: series.to_string(),
            t,
            linear,
            coef,
        });
    }
    Ok(linear.exp())
}

/// Covariate terms for every day of one series.
pub fn covariate_column(panel: &CountPanel, phi: &DVector<f64>, j: usize) -> Result<Vec<f64>, ModelError> {
    (0..panel.t_len())
        .map(|t| covariate_term(panel.covariates(j), phi, t, &format!("{j}")))
        .collect()
}

/// Covariate terms for every day of the global series.
pub fn global_covariate_column(panel: &CountPanel, phi: &DVector<f64>) -> Result<Vec<f64>, ModelError> {
    (0..panel.t_len())
        .map(|t| covariate_term(panel.global_covariates(), phi, t, "global"))
        .collect()
}

/// Poisson intensity of series `j` on day `t`:
/// w_t + x_jt (1 + xi_{j, s_jt}) + exp(v_jt' phi_j).
pub fn intensity(
    j: usize,
    t: usize,
    params: &StaticParams,
    paths: &LatentPaths,
    panel: &CountPanel,
) -> Result<f64, ModelError> {
    let sp = &params.series[j];
    let cov = covariate_term(panel.covariates(j), &sp.phi, t, &format!("{j}"))?;
    Ok(paths.w[t] + paths.x[j][t] * sp.amplification(paths.s[j][t]) + cov)
}

/// Poisson intensity of the global series on day `t`:
/// w_t + exp(v_zt' phi_z).
pub fn global_intensity(
    t: usize,
    params: &StaticParams,
    paths: &LatentPaths,
    panel: &CountPanel,
) -> Result<f64, ModelError> {
    let cov = covariate_term(panel.global_covariates(), &params.global.phi, t, "global")?;
    Ok(paths.w[t] + cov)
}

/// Number of l -> k transitions along a regime path, counting the step from
/// the initial label into the first day. Entries sum to the path length.
pub fn transition_counts(s0: u8, s: &[u8], n_regimes: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; n_regimes]; n_regimes];
    let mut prev = s0 as usize;
    for &label in s {
        counts[prev][label as usize] += 1;
        prev = label as usize;
    }
    counts
}

/// Stationary distribution of a row-stochastic matrix (left eigenvector for
/// eigenvalue 1). Falls back to power iteration if the direct solve fails.
pub fn stationary_distribution(lambda: &DMatrix<f64>) -> Vec<f64> {
    let l = lambda.nrows();
    if l == 1 {
        return vec![1.0];
    }
    if l == 2 {
        let up = lambda[(0, 1)];
        let down = lambda[(1, 0)];
        let total = up + down;
        if total > 0.0 {
            return vec![down / total, up / total];
        }
        return vec![0.5, 0.5];
    }
    // Solve pi' Lambda = pi' with the normalisation sum(pi) = 1.
    let mut a = lambda.transpose() - DMatrix::identity(l, l);
    for k in 0..l {
        a[(l - 1, k)] = 1.0;
    }
    let mut b = DVector::zeros(l);
    b[l - 1] = 1.0;
    if let Some(sol) = a.lu().solve(&b) {
        if sol.iter().all(|&p| p >= -1e-12) {
            let total: f64 = sol.iter().sum();
            return sol.iter().map(|&p| (p / total).max(0.0)).collect();
        }
    }
    let mut pi = DVector::from_element(l, 1.0 / l as f64);
    for _ in 0..10_000 {
        pi = lambda.transpose() * pi;
    }
    let total = pi.sum();
    pi.iter().map(|&p| p / total).collect()
}

/// Stationary law of the ARG(1) process, Gamma(alpha, delta / (1 - beta
/// delta)) as (shape, scale), if the process is stationary.
pub fn arg_stationary(alpha: f64, beta: f64, delta: f64) -> Option<(f64, f64)> {
    if beta * delta < 1.0 {
        Some((alpha, delta / (1.0 - beta * delta)))
    } else {
        None
    }
}

/// Distribution used for the initial latent value: the stationary law when
/// it exists, otherwise Gamma(alpha, delta).
pub fn arg_initial_dist(alpha: f64, beta: f64, delta: f64) -> (f64, f64) {
    arg_stationary(alpha, beta, delta).unwrap_or((alpha, delta))
}

/// Complete-data log-likelihood: transition terms for both intensity
/// processes, Poisson observation terms, and regime-chain terms with the
/// initial label weighted by the stationary distribution of its chain.
///
/// Returns `-inf` (with a diagnostic log line) when a positive count meets a
/// zero intensity or a forbidden transition occurs.
pub fn complete_data_loglik(
    panel: &CountPanel,
    paths: &LatentPaths,
    params: &StaticParams,
) -> Result<f64, ModelError> {
    params.validate()?;
    let t_len = panel.t_len();
    let n_series = panel.n_series();
    paths.validate(t_len, n_series, params.n_regimes())?;
    if params.n_series() != n_series {
        return Err(ModelError::Dimension(format!(
            "{} parameter series for {} data series",
            params.n_series(),
            n_series
        )));
    }

    let mut buf = Vec::new();
    let mut total = 0.0;

    // Global transitions and observations.
    let g = &params.global;
    let mut prev = paths.w0;
    let cov_z = global_covariate_column(panel, &g.phi)?;
    for t in 0..t_len {
        let p = NcGaParams::new(g.alpha, g.beta * prev, g.delta)?;
        total += ncga_logpdf_buf(paths.w[t], &p, DEFAULT_NCGA_TOL, &mut buf)?;
        prev = paths.w[t];
        let lam = paths.w[t] + cov_z[t];
        let z_t = panel.global_counts()[t];
        if lam <= 0.0 && z_t > 0 {
            log::warn!("zero global intensity with positive count at t={t}");
            return Ok(f64::NEG_INFINITY);
        }
        total += poisson_logpmf(z_t, lam);
    }

    for j in 0..n_series {
        let sp = &params.series[j];
        let cov = covariate_column(panel, &sp.phi, j)?;
        let mut prev = paths.x0[j];
        for t in 0..t_len {
            let p = NcGaParams::new(sp.alpha, sp.beta * prev, sp.delta)?;
            total += ncga_logpdf_buf(paths.x[j][t], &p, DEFAULT_NCGA_TOL, &mut buf)?;
            prev = paths.x[j][t];
            let lam = paths.w[t] + paths.x[j][t] * sp.amplification(paths.s[j][t]) + cov[t];
            let y_jt = panel.counts(j)[t];
            if lam <= 0.0 && y_jt > 0 {
                log::warn!("zero intensity with positive count in series {j} at t={t}");
                return Ok(f64::NEG_INFINITY);
            }
            total += poisson_logpmf(y_jt, lam);
        }

        let counts = transition_counts(paths.s0[j], &paths.s[j], params.n_regimes());
        for (l, row) in counts.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                if n > 0 {
                    let p = sp.lambda[(l, k)];
                    if p <= 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    total += n as f64 * p.ln();
                }
            }
        }
        let init = stationary_distribution(&sp.lambda);
        let p0 = init[paths.s0[j] as usize];
        if p0 <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += p0.ln();
    }

    Ok(total)
}
