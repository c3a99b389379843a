//! Report and regression emission: posterior summaries, decomposition and
//! regime CSVs, plot-ready long-format tables, and the regression grid.

use crate::config::{ReportConfig, RunConfig};
use crate::data::DataBundle;
use crate::CliError;
use chrono::NaiveDate;
use countsurge::analysis::{
    decompose, feature_grid, regime_report, run_regression, RegressionResult, RegressionSpec,
};
use countsurge::mcmc::{AcceptanceReport, DrawRecord};
use countsurge::model::CountPanel;
use serde_json::json;
use std::path::Path;

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path)
        .map_err(|e| CliError::Other(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn write_row(
    writer: &mut csv::Writer<std::fs::File>,
    row: &[String],
) -> Result<(), CliError> {
    writer
        .write_record(row)
        .map_err(|e| CliError::Other(anyhow::anyhow!("CSV write: {e}")))
}

struct Moments {
    mean: f64,
    sd: f64,
}

fn moments(values: &[f64]) -> Moments {
    let mean = countsurge::math::mean(values);
    let sd = countsurge::math::variance(values).sqrt();
    Moments { mean, sd }
}

fn moments_json(values: &[f64]) -> serde_json::Value {
    let m = moments(values);
    json!({ "mean": m.mean, "sd": m.sd })
}

/// Posterior parameter summary written into summary.json.
pub fn summary_json(
    records: &[DrawRecord],
    panel: &CountPanel,
    acceptance: &[AcceptanceReport],
    seed: u64,
    config_hash: &str,
    data_hash: &str,
) -> serde_json::Value {
    let n_series = panel.n_series();
    let collect = |f: &dyn Fn(&DrawRecord) -> f64| -> Vec<f64> {
        records.iter().map(f).collect()
    };

    let mut series = Vec::new();
    for j in 0..n_series {
        let alpha = collect(&|r| r.params.series[j].alpha);
        let beta = collect(&|r| r.params.series[j].beta);
        let delta = collect(&|r| r.params.series[j].delta);
        let beta_delta = collect(&|r| r.params.series[j].beta * r.params.series[j].delta);
        let xi2 = collect(&|r| r.params.series[j].xi[1]);
        let eta = collect(&|r| r.params.series[j].eta);
        let gamma = collect(&|r| r.params.series[j].gamma);
        let stationary = beta_delta.iter().filter(|&&bd| bd < 1.0).count() as f64
            / beta_delta.len().max(1) as f64;
        let lambda_mean: Vec<Vec<f64>> = (0..2)
            .map(|l| {
                (0..2)
                    .map(|k| {
                        countsurge::math::mean(&collect(&|r| r.params.series[j].lambda[(l, k)]))
                    })
                    .collect()
            })
            .collect();
        let phi: Vec<serde_json::Value> = (0..panel.covariates(j).ncols())
            .map(|m| moments_json(&collect(&|r| r.params.series[j].phi[m])))
            .collect();
        series.push(json!({
            "alpha": moments_json(&alpha),
            "beta": moments_json(&beta),
            "delta": moments_json(&delta),
            "beta_delta": moments_json(&beta_delta),
            "xi2": moments_json(&xi2),
            "eta": moments_json(&eta),
            "gamma": moments_json(&gamma),
            "stationary_fraction": stationary,
            "lambda_mean": lambda_mean,
            "phi": phi,
        }));
    }

    let phi_z: Vec<serde_json::Value> = (0..panel.global_covariates().ncols())
        .map(|m| moments_json(&collect(&|r| r.params.global.phi[m])))
        .collect();
    let (rescale, rescale_z) = panel.rescale_factors();
    json!({
        "seed": seed,
        "config_hash": config_hash,
        "data_hash": data_hash,
        "n_retained": records.len(),
        "series": series,
        "global": {
            "alpha": moments_json(&collect(&|r| r.params.global.alpha)),
            "beta": moments_json(&collect(&|r| r.params.global.beta)),
            "delta": moments_json(&collect(&|r| r.params.global.delta)),
            "beta_delta": moments_json(&collect(&|r| r.params.global.beta * r.params.global.delta)),
            "phi": phi_z,
        },
        "loglik": moments_json(&collect(&|r| r.loglik)),
        "rescale": { "series": rescale, "global": rescale_z },
        "acceptance": acceptance.iter().map(|a| json!({
            "name": a.name, "rate": a.rate, "step_size": a.step_size
        })).collect::<Vec<_>>(),
    })
}

pub fn write_loglik_trace(path: &Path, records: &[DrawRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, &["sweep".into(), "loglik".into()])?;
    for r in records {
        write_row(&mut w, &[r.sweep.to_string(), format!("{}", r.loglik)])?;
    }
    w.flush()
        .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    Ok(())
}

pub fn write_acceptance_csv(path: &Path, rows: &[AcceptanceReport]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    write_row(
        &mut w,
        &["name".into(), "rate".into(), "step_size".into()],
    )?;
    for r in rows {
        write_row(
            &mut w,
            &[r.name.clone(), format!("{}", r.rate), format!("{}", r.step_size)],
        )?;
    }
    w.flush()
        .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    Ok(())
}

/// Decomposition, regime episodes, and plot-ready long CSVs.
pub fn write_reports(
    out: &Path,
    bundle: &DataBundle,
    records: &[DrawRecord],
    report_cfg: &ReportConfig,
) -> Result<(), CliError> {
    let panel = &bundle.panel;
    let dates = &bundle.dates;
    let n_series = panel.n_series();
    let t_len = panel.t_len();

    let analysis_err = |e: countsurge::analysis::AnalysisError| match e {
        countsurge::analysis::AnalysisError::NoPaths => {
            CliError::Validation("draw store holds no latent paths; rerun fit".into())
        }
        other => CliError::Other(anyhow::anyhow!(other)),
    };

    // Decomposition: wide per-day shares plus a long stack for plotting.
    let decomposition = decompose(records, panel).map_err(analysis_err)?;
    {
        let mut w = csv_writer(&out.join("decomposition.csv"))?;
        write_row(
            &mut w,
            &[
                "date".into(),
                "series".into(),
                "local".into(),
                "amplification".into(),
                "global".into(),
                "covariates".into(),
            ],
        )?;
        for j in 0..n_series {
            for t in 0..t_len {
                let row = decomposition.shares[j][t];
                write_row(
                    &mut w,
                    &[
                        dates[t].to_string(),
                        format!("{}", j + 1),
                        format!("{}", row.local),
                        format!("{}", row.amplification),
                        format!("{}", row.global),
                        format!("{}", row.covariates),
                    ],
                )?;
            }
        }
        w.flush()
            .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    }
    {
        let mut w = csv_writer(&out.join("shares_long.csv"))?;
        write_row(
            &mut w,
            &["date".into(), "series".into(), "component".into(), "share".into()],
        )?;
        for j in 0..n_series {
            for t in 0..t_len {
                let row = decomposition.shares[j][t];
                for (name, value) in [
                    ("local", row.local),
                    ("amplification", row.amplification),
                    ("global", row.global),
                    ("covariates", row.covariates),
                ] {
                    write_row(
                        &mut w,
                        &[
                            dates[t].to_string(),
                            format!("{}", j + 1),
                            name.into(),
                            format!("{value}"),
                        ],
                    )?;
                }
            }
        }
        w.flush()
            .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    }

    // Regime episodes.
    let reports = regime_report(records, n_series, t_len, report_cfg.threshold)
        .map_err(analysis_err)?;
    {
        let mut w = csv_writer(&out.join("episodes.csv"))?;
        write_row(
            &mut w,
            &[
                "series".into(),
                "start".into(),
                "end".into(),
                "duration".into(),
                "mean_prob".into(),
            ],
        )?;
        for (j, rep) in reports.iter().enumerate() {
            for ep in &rep.episodes {
                let mean_prob = countsurge::math::mean(&rep.prob_amplified[ep.start..=ep.end]);
                write_row(
                    &mut w,
                    &[
                        format!("{}", j + 1),
                        dates[ep.start].to_string(),
                        dates[ep.end].to_string(),
                        format!("{}", ep.duration()),
                        format!("{mean_prob}"),
                    ],
                )?;
            }
        }
        w.flush()
            .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    }
    {
        let mut w = csv_writer(&out.join("regime_probability.csv"))?;
        write_row(
            &mut w,
            &["date".into(), "series".into(), "prob_amplified".into(), "flagged".into()],
        )?;
        for (j, rep) in reports.iter().enumerate() {
            for t in 0..t_len {
                write_row(
                    &mut w,
                    &[
                        dates[t].to_string(),
                        format!("{}", j + 1),
                        format!("{}", rep.prob_amplified[t]),
                        format!("{}", u8::from(rep.flagged[t])),
                    ],
                )?;
            }
        }
        w.flush()
            .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    }

    // Latent paths with posterior quantiles, in original scale alongside
    // the model scale.
    write_paths_long(
        &out.join("paths_long.csv"),
        dates,
        panel,
        records,
        &report_cfg.quantiles,
    )?;
    Ok(())
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn write_paths_long(
    path: &Path,
    dates: &[NaiveDate],
    panel: &CountPanel,
    records: &[DrawRecord],
    quantiles: &[f64],
) -> Result<(), CliError> {
    let with_paths: Vec<&DrawRecord> = records.iter().filter(|r| r.paths.is_some()).collect();
    if with_paths.is_empty() {
        return Err(CliError::Validation(
            "draw store holds no latent paths; rerun fit".into(),
        ));
    }
    let (rescale, rescale_z) = panel.rescale_factors();
    let mut w = csv_writer(path)?;
    let mut header = vec![
        "date".to_string(),
        "variable".to_string(),
        "mean".to_string(),
        "mean_original_scale".to_string(),
    ];
    for q in quantiles {
        header.push(format!("q{:02}", (q * 100.0).round() as u32));
    }
    write_row(&mut w, &header)?;

    let t_len = panel.t_len();
    let mut emit = |name: &str, factor: f64, extract: &dyn Fn(&DrawRecord, usize) -> f64| -> Result<(), CliError> {
        for t in 0..t_len {
            let mut values: Vec<f64> = with_paths.iter().map(|r| extract(r, t)).collect();
            values.sort_by(|a, b| a.total_cmp(b));
            let mean = countsurge::math::mean(&values);
            let mut row = vec![
                dates[t].to_string(),
                name.to_string(),
                format!("{mean}"),
                format!("{}", mean / factor),
            ];
            for &q in quantiles {
                row.push(format!("{}", empirical_quantile(&values, q)));
            }
            write_row(&mut w, &row)?;
        }
        Ok(())
    };

    emit("w", rescale_z, &|r, t| r.paths.as_ref().expect("filtered").w[t])?;
    for j in 0..panel.n_series() {
        emit(&format!("x_{}", j + 1), rescale[j], &|r, t| {
            r.paths.as_ref().expect("filtered").x[j][t]
        })?;
        emit(&format!("x_amplified_{}", j + 1), rescale[j], &|r, t| {
            let p = r.paths.as_ref().expect("filtered");
            p.x[j][t] * (1.0 + r.params.series[j].xi[p.s[j][t] as usize])
        })?;
    }
    w.flush()
        .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    Ok(())
}

/// The full regression grid against an aligned target series.
pub fn write_regressions(
    out: &Path,
    bundle: &DataBundle,
    records: &[DrawRecord],
    target: &[(NaiveDate, f64)],
    config: &RunConfig,
) -> Result<(), CliError> {
    let panel = &bundle.panel;
    // Longest contiguous run of panel dates covered by the target.
    let by_date: std::collections::HashMap<NaiveDate, f64> = target.iter().copied().collect();
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for (t, date) in bundle.dates.iter().enumerate() {
        if by_date.contains_key(date) {
            if run_start.is_none() {
                run_start = Some(t);
            }
            let start = run_start.expect("set above");
            if best.map(|(s, e)| t - start > e - s).unwrap_or(true) {
                best = Some((start, t));
            }
        } else {
            run_start = None;
        }
    }
    let Some((lo, hi)) = best else {
        return Err(CliError::Validation(
            "target series does not overlap the fitted dates".into(),
        ));
    };
    let window = hi - lo + 1;
    if window < 12 {
        return Err(CliError::Validation(format!(
            "only {window} contiguous overlapping days between target and fit; need at least 12"
        )));
    }
    let levels: Vec<f64> = bundle.dates[lo..=hi]
        .iter()
        .map(|d| by_date[d])
        .collect();

    // Restrict the stored paths to the overlap window.
    let windowed: Vec<DrawRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(p) = r.paths.as_mut() {
                p.w = p.w[lo..=hi].to_vec();
                for x in p.x.iter_mut() {
                    *x = x[lo..=hi].to_vec();
                }
                for s in p.s.iter_mut() {
                    *s = s[lo..=hi].to_vec();
                }
            }
            r
        })
        .collect();

    let mut specs = feature_grid(panel.n_series());
    for spec in &mut specs {
        spec.per_draw = config.regress.per_draw;
    }
    let analysis_err = |e: countsurge::analysis::AnalysisError| match e {
        countsurge::analysis::AnalysisError::NoPaths => {
            CliError::Validation("draw store holds no latent paths; rerun fit".into())
        }
        countsurge::analysis::AnalysisError::RankDeficient(cols) => CliError::Validation(format!(
            "regression features are collinear: {cols:?}"
        )),
        other => CliError::Other(anyhow::anyhow!(other)),
    };

    let results: Vec<(RegressionSpec, RegressionResult)> = specs
        .into_iter()
        .map(|spec| {
            run_regression(&windowed, &spec, &levels, window)
                .map(|res| (spec, res))
                .map_err(analysis_err)
        })
        .collect::<Result<_, _>>()?;

    let mut w = csv_writer(&out.join("regression.csv"))?;
    write_row(
        &mut w,
        &[
            "feature".into(),
            "series_set".into(),
            "term".into(),
            "mean".into(),
            "sd".into(),
            "ci_low".into(),
            "ci_high".into(),
            "significant".into(),
            "dic".into(),
            "n_obs".into(),
        ],
    )?;
    let mut json_tables = Vec::new();
    for (spec, res) in &results {
        let series_set = spec
            .series
            .iter()
            .map(|j| (j + 1).to_string())
            .collect::<Vec<_>>()
            .join("+");
        for coef in &res.coefficients {
            write_row(
                &mut w,
                &[
                    spec.feature.label().into(),
                    series_set.clone(),
                    coef.name.clone(),
                    format!("{}", coef.mean),
                    format!("{}", coef.sd),
                    format!("{}", coef.ci_low),
                    format!("{}", coef.ci_high),
                    format!("{}", u8::from(coef.significant)),
                    format!("{}", res.dic),
                    format!("{}", res.n_obs),
                ],
            )?;
        }
        json_tables.push(json!({
            "feature": spec.feature.label(),
            "series": spec.series,
            "per_draw": spec.per_draw,
            "dic": res.dic,
            "sigma2_mean": res.sigma2_mean,
            "n_obs": res.n_obs,
            "coefficients": res.coefficients,
        }));
    }
    w.flush()
        .map_err(|e| CliError::Other(anyhow::anyhow!("CSV flush: {e}")))?;
    std::fs::write(
        out.join("regression.json"),
        serde_json::to_string_pretty(&json!({ "tables": json_tables })).expect("serialisable"),
    )
    .map_err(|e| CliError::Other(anyhow::anyhow!("write regression.json: {e}")))?;
    Ok(())
}
