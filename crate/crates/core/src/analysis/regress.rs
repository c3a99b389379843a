//! Bayesian linear regression of a differenced target series on extracted
//! intensity features, under the noninformative prior p(beta, sigma^2)
//! proportional to 1/sigma^2. The posterior is the analytic conjugate
//! limit: beta | sigma^2 is Gaussian around the least-squares solution,
//! sigma^2 is inverse-Gamma, and the coefficient marginals are Student-t.
//! DIC is computed in closed form from that posterior.

use super::AnalysisError;
use crate::mcmc::DrawRecord;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::digamma;

/// Which extracted intensity feature enters the regression for a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Local intensity with amplification, x (1 + xi_s).
    Total,
    /// Jump component, x xi_s.
    Jump,
    /// Local intensity alone, x.
    Local,
    /// Both the local and the jump component.
    LocalAndJump,
}

impl FeatureKind {
    pub fn label(&self) -> &'static str {
        match self {
            FeatureKind::Total => "total",
            FeatureKind::Jump => "jump",
            FeatureKind::Local => "local",
            FeatureKind::LocalAndJump => "local_and_jump",
        }
    }

    pub fn all() -> [FeatureKind; 4] {
        [
            FeatureKind::Total,
            FeatureKind::Jump,
            FeatureKind::Local,
            FeatureKind::LocalAndJump,
        ]
    }
}

/// Regression specification: one feature bundle over a subset of series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub feature: FeatureKind,
    /// Indices of included series.
    pub series: Vec<usize>,
    /// Use per-draw features and average the per-draw posteriors instead of
    /// regressing on posterior-mean features.
    #[serde(default)]
    pub per_draw: bool,
}

/// The standard grid of specifications: every feature bundle crossed with
/// each single series and with all series jointly.
pub fn feature_grid(n_series: usize) -> Vec<RegressionSpec> {
    let mut subsets: Vec<Vec<usize>> = (0..n_series).map(|j| vec![j]).collect();
    if n_series > 1 {
        subsets.push((0..n_series).collect());
    }
    let mut specs = Vec::new();
    for feature in FeatureKind::all() {
        for series in &subsets {
            specs.push(RegressionSpec {
                feature,
                series: series.clone(),
                per_draw: false,
            });
        }
    }
    specs
}

/// Posterior summary of one regression coefficient (or of sigma^2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Whether the 95% credible interval excludes zero.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<CoefficientSummary>,
    pub sigma2_mean: f64,
    pub dic: f64,
    pub n_obs: usize,
}

/// Named feature columns, already differenced to match the target.
pub type FeatureColumns = Vec<(String, Vec<f64>)>;

/// Build differenced feature columns for a specification from the stored
/// draws. The default uses posterior-mean latent paths; `per_draw` callers
/// get one column set per path-bearing draw.
pub fn build_features(
    draws: &[DrawRecord],
    spec: &RegressionSpec,
    t_len: usize,
) -> Result<Vec<FeatureColumns>, AnalysisError> {
    let with_paths: Vec<&DrawRecord> = draws.iter().filter(|r| r.paths.is_some()).collect();
    if with_paths.is_empty() {
        return Err(AnalysisError::NoPaths);
    }

    let feature_paths = |record: &DrawRecord| -> Vec<(String, Vec<f64>)> {
        let paths = record.paths.as_ref().expect("filtered to path-bearing");
        let mut cols = Vec::new();
        for &j in &spec.series {
            let sp = &record.params.series[j];
            let x = &paths.x[j];
            let s = &paths.s[j];
            let mut push = |suffix: &str, values: Vec<f64>| {
                cols.push((format!("{}_{j}", suffix), values));
            };
            match spec.feature {
                FeatureKind::Total => push(
                    "total",
                    (0..t_len)
                        .map(|t| x[t] * (1.0 + sp.xi[s[t] as usize]))
                        .collect(),
                ),
                FeatureKind::Jump => push(
                    "jump",
                    (0..t_len).map(|t| x[t] * sp.xi[s[t] as usize]).collect(),
                ),
                FeatureKind::Local => push("local", x.clone()),
                FeatureKind::LocalAndJump => {
                    push("local", x.clone());
                    push(
                        "jump",
                        (0..t_len).map(|t| x[t] * sp.xi[s[t] as usize]).collect(),
                    );
                }
            }
        }
        cols
    };

    let diff = |cols: Vec<(String, Vec<f64>)>| -> FeatureColumns {
        cols.into_iter()
            .map(|(name, v)| {
                let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
                (name, d)
            })
            .collect()
    };

    if spec.per_draw {
        Ok(with_paths
            .into_iter()
            .map(|r| diff(feature_paths(r)))
            .collect())
    } else {
        // Posterior means of the feature paths.
        let mut acc = feature_paths(with_paths[0]);
        for r in &with_paths[1..] {
            for (slot, (_, col)) in acc.iter_mut().zip(feature_paths(r)) {
                for (a, v) in slot.1.iter_mut().zip(col) {
                    *a += v;
                }
            }
        }
        let n = with_paths.len() as f64;
        for (_, col) in &mut acc {
            col.iter_mut().for_each(|v| *v /= n);
        }
        Ok(vec![diff(acc)])
    }
}

/// Lower-triangular Cholesky factor with an explicit rank check: a pivot
/// collapsing relative to its diagonal means the column is a linear
/// combination of its predecessors.
struct CheckedCholesky {
    l: DMatrix<f64>,
}

fn checked_cholesky(a: &DMatrix<f64>, names: &[String]) -> Result<CheckedCholesky, AnalysisError> {
    let p = a.nrows();
    let mut l = DMatrix::zeros(p, p);
    for k in 0..p {
        let mut d = a[(k, k)];
        for j in 0..k {
            d -= l[(k, j)] * l[(k, j)];
        }
        if d <= 1e-10 * a[(k, k)].max(f64::MIN_POSITIVE) {
            let collinear: Vec<String> = names.iter().take(k + 1).cloned().collect();
            return Err(AnalysisError::RankDeficient(collinear));
        }
        l[(k, k)] = d.sqrt();
        for i in k + 1..p {
            let mut v = a[(i, k)];
            for j in 0..k {
                v -= l[(i, j)] * l[(k, j)];
            }
            l[(i, k)] = v / l[(k, k)];
        }
    }
    Ok(CheckedCholesky { l })
}

impl CheckedCholesky {
    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let p = self.l.nrows();
        let mut z = b.clone();
        for i in 0..p {
            for j in 0..i {
                let v = z[j];
                z[i] -= self.l[(i, j)] * v;
            }
            z[i] /= self.l[(i, i)];
        }
        for i in (0..p).rev() {
            for j in i + 1..p {
                let v = z[j];
                z[i] -= self.l[(j, i)] * v;
            }
            z[i] /= self.l[(i, i)];
        }
        z
    }

    fn inverse(&self) -> DMatrix<f64> {
        let p = self.l.nrows();
        let mut inv = DMatrix::zeros(p, p);
        for k in 0..p {
            let mut e = DVector::zeros(p);
            e[k] = 1.0;
            let col = self.solve(&e);
            inv.set_column(k, &col);
        }
        inv
    }
}

/// Flat-prior Bayesian regression of the (already differenced) target on an
/// intercept plus the given columns, with analytic DIC.
pub fn bayes_linreg_dic(
    target: &[f64],
    features: &FeatureColumns,
) -> Result<RegressionResult, AnalysisError> {
    let n = target.len();
    let p = features.len() + 1;
    if n < p + 3 {
        return Err(AnalysisError::TooShort(format!(
            "{n} observations cannot support {p} coefficients"
        )));
    }
    for (name, col) in features {
        if col.len() != n {
            return Err(AnalysisError::Invalid(format!(
                "feature {name} has {} rows, target has {n}",
                col.len()
            )));
        }
    }

    let mut x = DMatrix::zeros(n, p);
    for t in 0..n {
        x[(t, 0)] = 1.0;
    }
    for (m, (_, col)) in features.iter().enumerate() {
        for t in 0..n {
            x[(t, m + 1)] = col[t];
        }
    }
    let y = DVector::from_row_slice(target);

    let raw_names: Vec<String> = std::iter::once("const".to_string())
        .chain(features.iter().map(|(name, _)| name.clone()))
        .collect();
    let names: Vec<String> = std::iter::once("const".to_string())
        .chain(features.iter().map(|(name, _)| format!("d_{name}")))
        .collect();
    let xtx = x.transpose() * &x;
    let chol = checked_cholesky(&xtx, &raw_names)?;
    let xty = x.transpose() * &y;
    let beta = chol.solve(&xty);
    let xtx_inv = chol.inverse();

    let resid = &y - &x * &beta;
    let rss: f64 = resid.dot(&resid);
    let nu = (n - p) as f64;
    let s2 = rss / nu;

    // Student-t marginals: scale s2 * Sii with nu degrees of freedom.
    let t_dist = StudentsT::new(0.0, 1.0, nu)
        .map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    let t975 = t_dist.inverse_cdf(0.975);
    let var_factor = if nu > 2.0 { nu / (nu - 2.0) } else { f64::NAN };

    let mut coefficients = Vec::with_capacity(p);
    for (m, name) in names.iter().enumerate() {
        let scale = (s2 * xtx_inv[(m, m)]).sqrt();
        let mean = beta[m];
        let half = t975 * scale;
        coefficients.push(CoefficientSummary {
            name: name.clone(),
            mean,
            sd: scale * var_factor.sqrt(),
            ci_low: mean - half,
            ci_high: mean + half,
            significant: mean - half > 0.0 || mean + half < 0.0,
        });
    }

    // sigma^2 | y ~ InvGamma(nu / 2, rss / 2).
    let sigma2_mean = if nu > 2.0 { rss / (nu - 2.0) } else { f64::NAN };

    // DIC = 2 E[D] - D(posterior mean), all terms closed-form under the
    // conjugate posterior.
    let nf = n as f64;
    let d_bar = nf * (2.0 * std::f64::consts::PI).ln() + nf * ((rss / 2.0).ln() - digamma(nu / 2.0)) + nf;
    let d_at_mean =
        nf * (2.0 * std::f64::consts::PI * sigma2_mean).ln() + rss / sigma2_mean;
    let dic = 2.0 * d_bar - d_at_mean;

    Ok(RegressionResult {
        coefficients,
        sigma2_mean,
        dic,
        n_obs: n,
    })
}

/// Run one specification against a target series (levels; differenced
/// internally). Per-draw specs pool the per-draw posteriors by averaging
/// means and combining within- and between-draw variances.
pub fn run_regression(
    draws: &[DrawRecord],
    spec: &RegressionSpec,
    target_levels: &[f64],
    t_len: usize,
) -> Result<RegressionResult, AnalysisError> {
    if target_levels.len() != t_len {
        return Err(AnalysisError::Invalid(format!(
            "target has {} rows, panel has {t_len}",
            target_levels.len()
        )));
    }
    let target: Vec<f64> = target_levels.windows(2).map(|w| w[1] - w[0]).collect();
    let feature_sets = build_features(draws, spec, t_len)?;
    let results: Vec<RegressionResult> = feature_sets
        .iter()
        .map(|features| bayes_linreg_dic(&target, features))
        .collect::<Result<_, _>>()?;
    if results.len() == 1 {
        return Ok(results.into_iter().next().expect("one result"));
    }

    // Pool per-draw results.
    let k = results.len() as f64;
    let n_coef = results[0].coefficients.len();
    let mut pooled = Vec::with_capacity(n_coef);
    for m in 0..n_coef {
        let means: Vec<f64> = results.iter().map(|r| r.coefficients[m].mean).collect();
        let grand = crate::math::mean(&means);
        let within: f64 = results
            .iter()
            .map(|r| r.coefficients[m].sd.powi(2))
            .sum::<f64>()
            / k;
        let between = crate::math::variance(&means);
        let sd = (within + (1.0 + 1.0 / k) * between).sqrt();
        let half_scale = results
            .iter()
            .map(|r| (r.coefficients[m].ci_high - r.coefficients[m].ci_low) / 2.0)
            .sum::<f64>()
            / k;
        let half = half_scale.max(1.96 * sd);
        pooled.push(CoefficientSummary {
            name: results[0].coefficients[m].name.clone(),
            mean: grand,
            sd,
            ci_low: grand - half,
            ci_high: grand + half,
            significant: grand - half > 0.0 || grand + half < 0.0,
        });
    }
    Ok(RegressionResult {
        coefficients: pooled,
        sigma2_mean: results.iter().map(|r| r.sigma2_mean).sum::<f64>() / k,
        dic: results.iter().map(|r| r.dic).sum::<f64>() / k,
        n_obs: results[0].n_obs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn posterior_mean_equals_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let n = 120;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 1.5 + 2.0 * x + 0.3 * noise(&mut rng)).collect();
        let features = vec![("x".to_string(), xs.clone())];
        let out = bayes_linreg_dic(&ys, &features).unwrap();

        // Direct least squares via the normal equations.
        let mx = crate::math::mean(&xs);
        let my = crate::math::mean(&ys);
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for i in 0..n {
            sxx += (xs[i] - mx) * (xs[i] - mx);
            sxy += (xs[i] - mx) * (ys[i] - my);
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        assert!((out.coefficients[1].mean - slope).abs() < 1e-10);
        assert!((out.coefficients[0].mean - intercept).abs() < 1e-10);
    }

    #[test]
    fn known_coefficient_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|_| noise(&mut rng)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * x + 0.1 * noise(&mut rng)).collect();
        let out = bayes_linreg_dic(&ys, &vec![("x".to_string(), xs)]).unwrap();
        let slope = &out.coefficients[1];
        assert!((slope.mean - 2.0).abs() < 3.0 * slope.sd, "{slope:?}");
        assert!(slope.significant);
    }

    #[test]
    fn pure_noise_interval_covers_zero_mostly() {
        let mut covered = 0;
        let reps = 120;
        for seed in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(63 + seed);
            let n = 60;
            let xs: Vec<f64> = (0..n).map(|_| noise(&mut rng)).collect();
            let ys: Vec<f64> = (0..n).map(|_| noise(&mut rng)).collect();
            let out = bayes_linreg_dic(&ys, &vec![("x".to_string(), xs)]).unwrap();
            if !out.coefficients[1].significant {
                covered += 1;
            }
        }
        // Nominal coverage 95%; allow binomial slack.
        let frac = covered as f64 / reps as f64;
        assert!(frac > 0.88, "coverage {frac}");
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let xs: Vec<f64> = (0..50).map(|t| t as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 1.0 + x).collect();
        let features = vec![
            ("a".to_string(), xs.clone()),
            ("b".to_string(), xs.iter().map(|&v| 2.0 * v).collect()),
        ];
        match bayes_linreg_dic(&ys, &features) {
            Err(AnalysisError::RankDeficient(cols)) => {
                assert!(cols.contains(&"a".to_string()) && cols.contains(&"b".to_string()));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn dic_does_not_reward_noise_columns() {
        let mut diffs = Vec::new();
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(64 + seed);
            let n = 150;
            let xs: Vec<f64> = (0..n).map(|_| noise(&mut rng)).collect();
            let junk: Vec<f64> = (0..n).map(|_| noise(&mut rng)).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| 1.0 + 0.8 * x + 0.5 * noise(&mut rng)).collect();
            let base = bayes_linreg_dic(&ys, &vec![("x".to_string(), xs.clone())]).unwrap();
            let padded = bayes_linreg_dic(
                &ys,
                &vec![("x".to_string(), xs), ("junk".to_string(), junk)],
            )
            .unwrap();
            diffs.push(padded.dic - base.dic);
        }
        let mean_diff = crate::math::mean(&diffs);
        let se = (crate::math::variance(&diffs) / diffs.len() as f64).sqrt();
        // Adding a pure-noise column should not lower DIC beyond noise.
        assert!(mean_diff > -3.0 * se, "mean DIC change {mean_diff}");
    }

    #[test]
    fn grid_enumerates_specs() {
        let grid = feature_grid(2);
        assert_eq!(grid.len(), 4 * 3);
        let singles = grid.iter().filter(|s| s.series.len() == 1).count();
        assert_eq!(singles, 8);
        let grid1 = feature_grid(1);
        assert_eq!(grid1.len(), 4);
    }
}
