//! Independent numerical oracles for the test suites: quadrature,
//! Kolmogorov-Smirnov tests, golden-section search, box rejection sampling,
//! exact enumeration of small hidden Markov chains, and a grid-discretised
//! exact filter for scalar state-space models.
//!
//! Everything here is deliberately written from first principles so the
//! oracles stay independent of the library implementations they check.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Adaptive Simpson integration with absolute tolerance.
pub fn integrate(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        // Do not chase tolerances below float noise.
        let child_tol = (tol / 2.0).max(1e-15);
        recurse(f, a, m, fa, flm, fm, left, child_tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, child_tol, depth - 1)
    }
    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(m), f(hi));
    let whole = simpson(lo, hi, fa, fm, fb);
    recurse(f, lo, hi, fa, fm, fb, whole, tol, 22)
}

/// Integrate a density over (0, hi) when it may carry an integrable
/// singularity at zero: substitute x = u^2 so the integrand is smooth for
/// shape parameters >= 1/2.
pub fn integrate_density_from_zero(pdf: &dyn Fn(f64) -> f64, hi: f64, tol: f64) -> f64 {
    let g = move |u: f64| {
        let x = u * u;
        if x == 0.0 {
            0.0
        } else {
            2.0 * u * pdf(x)
        }
    };
    integrate(&g, 0.0, hi.sqrt(), tol)
}

/// Reference non-central Gamma log-density by direct summation of a fixed
/// number of Poisson-mixture terms (log-space, max-shifted).
pub fn ncga_logpdf_reference(x: f64, a: f64, b: f64, c: f64, n_terms: usize) -> f64 {
    let mut terms = Vec::with_capacity(n_terms);
    for k in 0..n_terms {
        let kf = k as f64;
        let log_gamma_part = (a + kf - 1.0) * x.ln() - (a + kf) * c.ln() - ln_gamma(a + kf);
        let log_pois_part = if b > 0.0 {
            kf * b.ln() - b - ln_gamma(kf + 1.0)
        } else if k == 0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        terms.push(log_gamma_part + log_pois_part);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    -x / c + max + sum.ln()
}

/// Asymptotic Kolmogorov p-value: P(sup |B| > lambda).
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    p.clamp(0.0, 1.0)
}

/// One-sample KS test of draws against a CDF; returns (statistic, p-value).
pub fn ks_test_cdf(samples: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> (f64, f64) {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_pvalue(lambda))
}

/// Two-sample KS test; returns (statistic, p-value).
pub fn ks_test_two_sample(a: &mut [f64], b: &mut [f64]) -> (f64, f64) {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let xa = a[i];
        let xb = b[j];
        if xa <= xb {
            i += 1;
        }
        if xb <= xa {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_pvalue(lambda))
}

/// Golden-section maximiser of a unimodal function on [lo, hi].
pub fn golden_section_max(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Rejection sampler from an unnormalised log-density over (lo, hi) with a
/// uniform box envelope; `hi` must cover essentially all the mass.
pub fn rejection_sample_box<R: Rng>(
    rng: &mut R,
    log_density: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Vec<f64> {
    // Envelope height from a dense scan, with head-room for scan misses.
    let scan = 20_000;
    let mut max_ld = f64::NEG_INFINITY;
    for i in 0..=scan {
        let x = lo + (hi - lo) * i as f64 / scan as f64;
        max_ld = max_ld.max(log_density(x));
    }
    let cap = max_ld + 1e-3;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while out.len() < n {
        attempts += 1;
        assert!(
            attempts < 500_000_000,
            "rejection sampler stuck; envelope too loose"
        );
        let x = lo + (hi - lo) * rng.random::<f64>();
        let u: f64 = rng.random();
        if u.ln() + cap < log_density(x) {
            out.push(x);
        }
    }
    out
}

/// Sampler that inverts a CDF tabulated on a fine grid of an unnormalised
/// log-density; independent cross-check for direct samplers.
pub struct GridInverseCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridInverseCdf {
    pub fn new(log_density: &dyn Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Self {
        let grid: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let lds: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
        let max = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = lds.iter().map(|&l| (l - max).exp()).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i - 1] + dens[i]) * (grid[i] - grid[i - 1]);
        }
        let total = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { grid, cdf }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let idx = match self
            .cdf
            .binary_search_by(|c| c.partial_cmp(&u).expect("no NaN"))
        {
            Ok(i) => i.max(1),
            Err(i) => i.min(self.cdf.len() - 1).max(1),
        };
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.grid[idx - 1] + frac * (self.grid[idx] - self.grid[idx - 1])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.quantile(rng.random())).collect()
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&x).expect("no NaN"))
        {
            Ok(i) => self.cdf[i],
            Err(0) => 0.0,
            Err(i) if i >= self.grid.len() => 1.0,
            Err(i) => {
                let frac = (x - self.grid[i - 1]) / (self.grid[i] - self.grid[i - 1]);
                self.cdf[i - 1] + frac * (self.cdf[i] - self.cdf[i - 1])
            }
        }
    }
}

/// Total-variation distance between a sample histogram and the
/// grid-normalised density over the same bins.
pub fn tv_histogram_vs_density(
    samples: &[f64],
    log_density: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    bins: usize,
) -> f64 {
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0.0f64; bins];
    let mut inside = 0.0;
    for &s in samples {
        if s >= lo && s < hi {
            let b = ((s - lo) / width) as usize;
            hist[b.min(bins - 1)] += 1.0;
            inside += 1.0;
        }
    }
    hist.iter_mut().for_each(|h| *h /= inside);

    // Bin masses from a fine sub-grid of the density.
    let sub = 20;
    let mut masses = vec![0.0f64; bins];
    let mut lds = Vec::with_capacity(bins * sub);
    for b in 0..bins {
        for k in 0..sub {
            let x = lo + width * (b as f64 + (k as f64 + 0.5) / sub as f64);
            lds.push(log_density(x));
        }
    }
    let max = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for b in 0..bins {
        let m: f64 = (0..sub).map(|k| (lds[b * sub + k] - max).exp()).sum();
        masses[b] = m;
        total += m;
    }
    masses.iter_mut().for_each(|m| *m /= total);

    0.5 * hist
        .iter()
        .zip(&masses)
        .map(|(h, m)| (h - m).abs())
        .sum::<f64>()
}

/// Exact enumeration of a small hidden chain: posterior probability of each
/// full path (s_0, ..., s_T) given per-day log emissions, a transition
/// matrix, and an initial distribution. Also returns the log marginal
/// likelihood. Row-major transition matrix, outer index = from.
pub struct HmmEnumeration {
    /// (path including s_0, posterior probability)
    pub paths: Vec<(Vec<u8>, f64)>,
    pub log_marginal: f64,
}

pub fn enumerate_hmm(
    emissions: &[Vec<f64>],
    transition: &[Vec<f64>],
    init: &[f64],
) -> HmmEnumeration {
    let t_len = emissions.len();
    let l = init.len();
    let total_paths = l.pow((t_len + 1) as u32);
    let mut joint = Vec::with_capacity(total_paths);
    let mut max_lj = f64::NEG_INFINITY;
    for code in 0..total_paths {
        let mut digits = Vec::with_capacity(t_len + 1);
        let mut c = code;
        for _ in 0..=t_len {
            digits.push((c % l) as u8);
            c /= l;
        }
        let mut lj = init[digits[0] as usize].ln();
        for t in 0..t_len {
            lj += transition[digits[t] as usize][digits[t + 1] as usize].ln();
            lj += emissions[t][digits[t + 1] as usize];
        }
        max_lj = max_lj.max(lj);
        joint.push((digits, lj));
    }
    let mut total = 0.0;
    for (_, lj) in &joint {
        total += (lj - max_lj).exp();
    }
    let log_marginal = max_lj + total.ln();
    let paths = joint
        .into_iter()
        .map(|(d, lj)| (d, (lj - max_lj).exp() / total))
        .collect();
    HmmEnumeration {
        paths,
        log_marginal,
    }
}

/// Exact filter for a scalar state-space model discretised on a grid:
/// filtered means and the log marginal likelihood.
pub struct GridFilterOutput {
    pub means: Vec<f64>,
    pub loglik: f64,
}

pub fn grid_hmm_filter(
    grid: &[f64],
    log_init: &dyn Fn(f64) -> f64,
    log_trans: &dyn Fn(f64, f64) -> f64,
    log_emit: &dyn Fn(usize, f64) -> f64,
    t_len: usize,
) -> GridFilterOutput {
    let n = grid.len();
    // Cell widths for trapezoid-style mass weighting.
    let mut widths = vec![0.0; n];
    for i in 0..n {
        let lo = if i == 0 { grid[0] } else { 0.5 * (grid[i - 1] + grid[i]) };
        let hi = if i == n - 1 {
            grid[n - 1]
        } else {
            0.5 * (grid[i] + grid[i + 1])
        };
        widths[i] = hi - lo;
    }

    // Transition matrix rows normalised over the grid.
    let mut trans = vec![vec![0.0; n]; n];
    for i in 0..n {
        let lds: Vec<f64> = (0..n).map(|j| log_trans(grid[i], grid[j])).collect();
        let max = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            let v = (lds[j] - max).exp() * widths[j];
            trans[i][j] = v;
            total += v;
        }
        trans[i].iter_mut().for_each(|v| *v /= total);
    }

    let mut prior: Vec<f64> = {
        let lds: Vec<f64> = grid.iter().map(|&g| log_init(g)).collect();
        let max = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = (0..n).map(|i| (lds[i] - max).exp() * widths[i]).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    };

    let mut means = Vec::with_capacity(t_len);
    let mut loglik = 0.0;
    for t in 0..t_len {
        // Predict.
        let mut pred = vec![0.0; n];
        for i in 0..n {
            if prior[i] > 0.0 {
                for j in 0..n {
                    pred[j] += prior[i] * trans[i][j];
                }
            }
        }
        // Update.
        let lemis: Vec<f64> = (0..n).map(|j| log_emit(t, grid[j])).collect();
        let max = lemis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut post = vec![0.0; n];
        let mut norm = 0.0;
        for j in 0..n {
            let v = pred[j] * (lemis[j] - max).exp();
            post[j] = v;
            norm += v;
        }
        loglik += norm.ln() + max;
        post.iter_mut().for_each(|v| *v /= norm);
        means.push(post.iter().zip(grid).map(|(p, g)| p * g).sum());
        prior = post;
    }
    GridFilterOutput { means, loglik }
}

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (n - 1).
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomial() {
        let f = |x: f64| 3.0 * x * x;
        assert!((integrate(&f, 0.0, 2.0, 1e-12) - 8.0).abs() < 1e-10);
    }

    #[test]
    fn sqrt_substitution_handles_singularity() {
        // integral of x^(-1/2) / 2 over (0, 1) = 1.
        let pdf = |x: f64| 0.5 / x.sqrt();
        assert!((integrate_density_from_zero(&pdf, 1.0, 1e-10) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn kolmogorov_pvalue_known_point() {
        // P(K > 1.36) is approximately 0.049.
        let p = kolmogorov_pvalue(1.36);
        assert!((p - 0.049).abs() < 0.002, "{p}");
    }

    #[test]
    fn golden_section_finds_parabola_max() {
        let f = |x: f64| -(x - 1.7) * (x - 1.7);
        let m = golden_section_max(&f, 0.0, 5.0, 1e-10);
        assert!((m - 1.7).abs() < 1e-8);
    }

    #[test]
    fn enumerate_two_step_chain_by_hand() {
        // T = 1, L = 2: four paths; emission kills state 0 at t = 1.
        let emissions = vec![vec![f64::NEG_INFINITY, 0.0]];
        let transition = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let init = vec![0.5, 0.5];
        let out = enumerate_hmm(&emissions, &transition, &init);
        let mass_state1: f64 = out
            .paths
            .iter()
            .filter(|(p, _)| p[1] == 1)
            .map(|(_, pr)| pr)
            .sum();
        assert!((mass_state1 - 1.0).abs() < 1e-12);
        assert!((out.log_marginal - 0.5f64.ln()).abs() < 1e-12);
    }
}
