//! Probability kernels used by the model: non-central Gamma, truncated
//! Gamma, Dirichlet, Poisson, and a grid-based inverse-transform sampler for
//! the conjugate posterior of a Gamma shape parameter.
//!
//! Conventions: every Gamma is parametrised by (shape, scale); all density
//! evaluations happen in log space and mixtures are combined with
//! log-sum-exp. Samplers take the random stream explicitly and are
//! deterministic given the stream.

use crate::math::logsumexp;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};
use thiserror::Error;

/// Default tail tolerance for the non-central Gamma series.
pub const DEFAULT_NCGA_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("series did not reach tolerance {tol} within {cap} terms")]
    SeriesConvergence { tol: f64, cap: usize },
    #[error("truncated Gamma support degenerate: F({upper}) underflows for shape {shape}, scale {scale}")]
    DegenerateSupport { shape: f64, scale: f64, upper: f64 },
    #[error("grid covers too little of the target mass ({side} boundary holds {mass:.3e} of it); widen the grid range")]
    GridCoverage { side: &'static str, mass: f64 },
}

fn require_positive(name: &'static str, value: f64) -> Result<(), DistError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(DistError::InvalidParam {
            name,
            value,
            reason: "must be finite and > 0",
        });
    }
    Ok(())
}

fn require_nonnegative(name: &'static str, value: f64) -> Result<(), DistError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(DistError::InvalidParam {
            name,
            value,
            reason: "must be finite and >= 0",
        });
    }
    Ok(())
}

/// Parameters of a non-central Gamma distribution NcGa(a, b, c): a Poisson(b)
/// mixture of Gamma(a + k, scale c) components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcGaParams {
    pub shape: f64,
    pub noncentrality: f64,
    pub scale: f64,
}

impl NcGaParams {
    pub fn new(shape: f64, noncentrality: f64, scale: f64) -> Result<Self, DistError> {
        require_positive("shape", shape)?;
        require_nonnegative("noncentrality", noncentrality)?;
        require_positive("scale", scale)?;
        Ok(Self {
            shape,
            noncentrality,
            scale,
        })
    }

    /// Mean c(a + b).
    pub fn mean(&self) -> f64 {
        self.scale * (self.shape + self.noncentrality)
    }

    /// Variance c^2 (a + 2b).
    pub fn variance(&self) -> f64 {
        self.scale * self.scale * (self.shape + 2.0 * self.noncentrality)
    }
}

/// Log-density of Gamma(shape, scale) at `x`.
pub fn gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
}

/// Log-density of NcGa(a, b, c) at `x`.
///
/// The Poisson-mixture series is truncated once the discarded Poisson(b)
/// weight mass falls below `tol`; terms are accumulated in log space.
pub fn ncga_logpdf(x: f64, p: &NcGaParams, tol: f64) -> Result<f64, DistError> {
    let mut buf = Vec::new();
    ncga_logpdf_buf(x, p, tol, &mut buf)
}

/// As [`ncga_logpdf`] but reusing a caller-provided term buffer. Useful in
/// hot loops evaluating the density along a whole path.
pub fn ncga_logpdf_buf(
    x: f64,
    p: &NcGaParams,
    tol: f64,
    buf: &mut Vec<f64>,
) -> Result<f64, DistError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(DistError::Domain(format!(
            "ncga_logpdf requires finite x > 0, got {x}"
        )));
    }
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(DistError::Domain(format!(
            "ncga_logpdf tolerance must lie in (0, 1e-6], got {tol}"
        )));
    }
    let (a, b, c) = (p.shape, p.noncentrality, p.scale);
    if b == 0.0 {
        return Ok(gamma_logpdf(x, a, c));
    }

    // Term k is Gamma(a+k, c) density times the Poisson(b) weight. Both are
    // advanced by recurrence; the scan stops once the accumulated Poisson
    // weight mass reaches 1 - tol.
    let ln_x = x.ln();
    let ln_c = c.ln();
    let ln_b = b.ln();
    let ln_ratio = ln_x + ln_b - ln_c;

    let cap = (p.noncentrality + 10.0 * p.noncentrality.sqrt()).ceil().max(50.0) as usize;
    let hard_cap = cap.saturating_mul(10).max(1000);

    buf.clear();
    let mut log_term = (a - 1.0) * ln_x - a * ln_c - ln_gamma(a) - b;
    let mut log_pois = -b;
    let mut pois_mass = log_pois.exp();
    buf.push(log_term);
    let mut k = 0usize;
    while pois_mass < 1.0 - tol {
        if k >= hard_cap {
            return Err(DistError::SeriesConvergence { tol, cap: hard_cap });
        }
        let kf = k as f64;
        log_term += ln_ratio - (a + kf).ln() - (kf + 1.0).ln();
        log_pois += ln_b - (kf + 1.0).ln();
        pois_mass += log_pois.exp();
        buf.push(log_term);
        k += 1;
    }
    Ok(logsumexp(buf) - x / c)
}

/// Exact draw from NcGa(a, b, c) via z ~ Poisson(b), x ~ Gamma(a + z, c).
pub fn ncga_sample<R: Rng + ?Sized>(rng: &mut R, p: &NcGaParams) -> f64 {
    let z = if p.noncentrality > 0.0 {
        rand_distr::Poisson::new(p.noncentrality)
            .expect("validated noncentrality")
            .sample(rng)
    } else {
        0.0
    };
    rand_distr::Gamma::new(p.shape + z, p.scale)
        .expect("validated shape/scale")
        .sample(rng)
}

/// Gamma(shape, scale) truncated to the interval (0, upper).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncGammaParams {
    pub shape: f64,
    pub scale: f64,
    pub upper: f64,
}

impl TruncGammaParams {
    pub fn new(shape: f64, scale: f64, upper: f64) -> Result<Self, DistError> {
        require_positive("shape", shape)?;
        require_positive("scale", scale)?;
        require_positive("upper", upper)?;
        Ok(Self {
            shape,
            scale,
            upper,
        })
    }

    /// Gamma CDF mass below the truncation point.
    pub fn mass_below_upper(&self) -> f64 {
        gamma_lr(self.shape, self.upper / self.scale)
    }
}

/// Log-density of the truncated Gamma; `-inf` outside (0, upper).
pub fn trunc_gamma_logpdf(x: f64, p: &TruncGammaParams) -> Result<f64, DistError> {
    let mass = p.mass_below_upper();
    if mass <= 0.0 {
        return Err(DistError::DegenerateSupport {
            shape: p.shape,
            scale: p.scale,
            upper: p.upper,
        });
    }
    if x <= 0.0 || x >= p.upper {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(gamma_logpdf(x, p.shape, p.scale) - mass.ln())
}

/// Inverse-CDF draw restricted to (0, F(upper)).
pub fn trunc_gamma_sample<R: Rng + ?Sized>(
    rng: &mut R,
    p: &TruncGammaParams,
) -> Result<f64, DistError> {
    use statrs::distribution::ContinuousCDF;
    let mass = p.mass_below_upper();
    if mass <= 0.0 {
        return Err(DistError::DegenerateSupport {
            shape: p.shape,
            scale: p.scale,
            upper: p.upper,
        });
    }
    let gamma = statrs::distribution::Gamma::new(p.shape, 1.0 / p.scale)
        .map_err(|e| DistError::Domain(e.to_string()))?;
    let u: f64 = rng.random::<f64>() * mass;
    let draw = gamma.inverse_cdf(u.max(f64::MIN_POSITIVE));
    // Numeric inversion can land a hair past the bound; clamp into support.
    Ok(draw.clamp(f64::MIN_POSITIVE, p.upper * (1.0 - 1e-15)))
}

/// Draw from Dirichlet(concentration) by normalising Gamma draws.
pub fn dirichlet_sample<R: Rng + ?Sized>(
    rng: &mut R,
    concentration: &[f64],
) -> Result<Vec<f64>, DistError> {
    if concentration.is_empty() {
        return Err(DistError::Domain(
            "dirichlet_sample needs at least one concentration".into(),
        ));
    }
    for &a in concentration {
        require_positive("concentration", a)?;
    }
    for _ in 0..100 {
        let draws: Vec<f64> = concentration
            .iter()
            .map(|&a| {
                rand_distr::Gamma::new(a, 1.0)
                    .expect("validated concentration")
                    .sample(rng)
            })
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
        // All components underflowed (tiny concentrations); try again.
    }
    Err(DistError::Domain(
        "dirichlet_sample: Gamma draws underflowed repeatedly".into(),
    ))
}

/// Poisson log-pmf via log-Gamma. The `lambda <= 0` limit is the point mass
/// at zero, keeping callers free of NaN when an intensity collapses.
pub fn poisson_logpmf(k: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let kf = k as f64;
    kf * lambda.ln() - lambda - ln_gamma(kf + 1.0)
}

/// Evaluation grid for the shape-conjugate sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self, DistError> {
        require_positive("grid min", min)?;
        require_positive("grid max", max)?;
        if max <= min || points < 8 {
            return Err(DistError::Domain(format!(
                "grid must satisfy max > min > 0 and points >= 8 (got [{min}, {max}] x {points})"
            )));
        }
        Ok(Self { min, max, points })
    }

    fn log_spaced(&self) -> Vec<f64> {
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (0..self.points)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

/// Unnormalised log-density of the Gamma-shape conjugate posterior,
/// gamma * ln(a_g * eta^(c_g + 1) * xi) - (b_g + 1) * ln Gamma(gamma).
pub fn gamma_shape_log_density(
    gamma: f64,
    a_gamma: f64,
    b_gamma: f64,
    c_gamma: f64,
    eta: f64,
    xi: f64,
) -> f64 {
    let log_a = a_gamma.ln() + (c_gamma + 1.0) * eta.ln() + xi.ln();
    gamma * log_a - (b_gamma + 1.0) * ln_gamma(gamma)
}

/// Default grid for [`gamma_shape_conjugate_sample`]: 4096 log-spaced points
/// on (1e-3, mode + 20 sd), with mode and sd from a Laplace approximation.
pub fn gamma_shape_default_grid(
    a_gamma: f64,
    b_gamma: f64,
    c_gamma: f64,
    eta: f64,
    xi: f64,
) -> Result<GridSpec, DistError> {
    let log_a = a_gamma.ln() + (c_gamma + 1.0) * eta.ln() + xi.ln();
    let target = log_a / (b_gamma + 1.0);
    // Mode solves digamma(gamma) = target; digamma is increasing.
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while digamma(hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(DistError::Domain(
                "gamma shape posterior mode beyond 1e12; check hyper-parameters".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if digamma(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mode = 0.5 * (lo + hi);
    let h = 1e-4 * mode.max(1.0);
    let curvature = (b_gamma + 1.0) * (digamma(mode + h) - digamma(mode - h)) / (2.0 * h);
    let sd = if curvature > 0.0 {
        curvature.recip().sqrt()
    } else {
        mode.max(1.0)
    };
    GridSpec::new(1e-3, (mode + 20.0 * sd).max(2e-3), 4096)
}

/// Inverse-transform draw from the Gamma-shape conjugate posterior on a grid.
///
/// Normalises the log-density over the grid, accumulates a trapezoid CDF and
/// inverts it with uniform interpolation inside the landing cell. Errors if
/// nearly all mass sits in a boundary cell, which means the grid misses the
/// support.
pub fn gamma_shape_conjugate_sample<R: Rng + ?Sized>(
    rng: &mut R,
    a_gamma: f64,
    b_gamma: f64,
    c_gamma: f64,
    eta: f64,
    xi: f64,
    grid: &GridSpec,
) -> Result<f64, DistError> {
    require_positive("a_gamma", a_gamma)?;
    require_nonnegative("b_gamma", b_gamma)?;
    require_nonnegative("c_gamma", c_gamma)?;
    require_positive("eta", eta)?;
    require_positive("xi", xi)?;

    let points = grid.log_spaced();
    let log_dens: Vec<f64> = points
        .iter()
        .map(|&g| gamma_shape_log_density(g, a_gamma, b_gamma, c_gamma, eta, xi))
        .collect();
    let max_ld = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_ld.is_finite() {
        return Err(DistError::Domain(
            "gamma shape posterior vanished on the whole grid".into(),
        ));
    }
    let dens: Vec<f64> = log_dens.iter().map(|ld| (ld - max_ld).exp()).collect();

    let n_cells = points.len() - 1;
    let mut cell_mass = Vec::with_capacity(n_cells);
    let mut total = 0.0;
    for i in 0..n_cells {
        let m = 0.5 * (dens[i] + dens[i + 1]) * (points[i + 1] - points[i]);
        cell_mass.push(m);
        total += m;
    }
    if total <= 0.0 {
        return Err(DistError::Domain(
            "gamma shape posterior has zero mass on the grid".into(),
        ));
    }
    let edge = 1.0 - 1e-8;
    if cell_mass[0] / total > edge {
        return Err(DistError::GridCoverage {
            side: "lower",
            mass: cell_mass[0] / total,
        });
    }
    if cell_mass[n_cells - 1] / total > edge {
        return Err(DistError::GridCoverage {
            side: "upper",
            mass: cell_mass[n_cells - 1] / total,
        });
    }

    let target = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for i in 0..n_cells {
        if cum + cell_mass[i] >= target {
            let frac = if cell_mass[i] > 0.0 {
                (target - cum) / cell_mass[i]
            } else {
                0.5
            };
            return Ok(points[i] + frac * (points[i + 1] - points[i]));
        }
        cum += cell_mass[i];
    }
    Ok(points[n_cells])
}
