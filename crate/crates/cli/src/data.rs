//! CSV ingestion and emission. Dates are ISO-8601; ingestion applies the
//! configured rescale factors with rounding to the nearest integer.

use crate::config::RescaleConfig;
use crate::CliError;
use chrono::NaiveDate;
use countsurge::model::CountPanel;
use nalgebra::DMatrix;
use std::path::Path;

/// Counts plus the date axis they live on.
pub struct DataBundle {
    pub dates: Vec<NaiveDate>,
    pub panel: CountPanel,
}

fn validation<S: Into<String>>(msg: S) -> CliError {
    CliError::Validation(msg.into())
}

pub fn read_counts_csv(path: &Path) -> Result<(Vec<NaiveDate>, Vec<Vec<u64>>, Vec<u64>), CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("cannot open counts CSV {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| validation(format!("counts CSV header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"date") {
        return Err(validation("counts CSV must start with a 'date' column"));
    }
    if cols.last() != Some(&"z") {
        return Err(validation(
            "counts CSV must end with the global column 'z'",
        ));
    }
    let n_series = cols.len().saturating_sub(2);
    if n_series == 0 {
        return Err(validation("counts CSV needs at least one series column"));
    }
    for (j, name) in cols[1..cols.len() - 1].iter().enumerate() {
        let expect = format!("y_{}", j + 1);
        if *name != expect {
            return Err(validation(format!(
                "counts CSV column {} must be named {expect}, found {name}",
                j + 1
            )));
        }
    }

    let mut dates = Vec::new();
    let mut y = vec![Vec::new(); n_series];
    let mut z = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| validation(format!("counts CSV row {}: {e}", row_idx + 2)))?;
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| {
            validation(format!(
                "counts CSV row {}: bad date {:?} ({e})",
                row_idx + 2, &row[0]
            ))
        })?;
        if let Some(&last) = dates.last() {
            if date <= last {
                return Err(validation(format!(
                    "counts CSV row {}: dates must be strictly increasing",
                    row_idx + 2
                )));
            }
        }
        dates.push(date);
        for j in 0..n_series {
            let v: u64 = row[j + 1].parse().map_err(|_| {
                validation(format!(
                    "counts CSV row {}: column y_{} is not a nonnegative integer: {:?}",
                    row_idx + 2,
                    j + 1,
                    &row[j + 1]
                ))
            })?;
            y[j].push(v);
        }
        let zv: u64 = row[n_series + 1].parse().map_err(|_| {
            validation(format!(
                "counts CSV row {}: column z is not a nonnegative integer: {:?}",
                row_idx + 2,
                &row[n_series + 1]
            ))
        })?;
        z.push(zv);
    }
    if dates.len() < 2 {
        return Err(validation("counts CSV needs at least 2 rows"));
    }
    Ok((dates, y, z))
}

/// Covariate CSV: date column plus one column per covariate, aligned by
/// date to the counts file (every counts date must be present).
pub fn read_covariates_csv(
    path: &Path,
    dates: &[NaiveDate],
) -> Result<DMatrix<f64>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("cannot open covariate CSV {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| validation(format!("covariate CSV header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"date") {
        return Err(validation(format!(
            "covariate CSV {} must start with a 'date' column",
            path.display()
        )));
    }
    let p = cols.len() - 1;
    if p == 0 {
        return Err(validation(format!(
            "covariate CSV {} has no value columns",
            path.display()
        )));
    }
    let mut by_date = std::collections::HashMap::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| validation(format!("covariate CSV row {}: {e}", row_idx + 2)))?;
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
            .map_err(|e| validation(format!("covariate CSV row {}: bad date ({e})", row_idx + 2)))?;
        let mut values = Vec::with_capacity(p);
        for m in 0..p {
            let v: f64 = row[m + 1].parse().map_err(|_| {
                validation(format!(
                    "covariate CSV row {}: column {} is not numeric",
                    row_idx + 2,
                    cols[m + 1]
                ))
            })?;
            if !v.is_finite() {
                return Err(validation(format!(
                    "covariate CSV row {}: non-finite value",
                    row_idx + 2
                )));
            }
            values.push(v);
        }
        by_date.insert(date, values);
    }

    let missing: Vec<String> = dates
        .iter()
        .filter(|d| !by_date.contains_key(*d))
        .map(|d| d.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(validation(format!(
            "covariate CSV {} is missing {} dates, e.g. {:?}",
            path.display(),
            missing.len(),
            &missing[..missing.len().min(5)]
        )));
    }
    Ok(DMatrix::from_fn(dates.len(), p, |t, m| by_date[&dates[t]][m]))
}

/// Target series CSV: date, value.
pub fn read_target_csv(path: &Path) -> Result<Vec<(NaiveDate, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("cannot open target CSV {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| validation(format!("target CSV row {}: {e}", row_idx + 2)))?;
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
            .map_err(|e| validation(format!("target CSV row {}: bad date ({e})", row_idx + 2)))?;
        let value: f64 = row[1]
            .parse()
            .map_err(|_| validation(format!("target CSV row {}: bad value", row_idx + 2)))?;
        out.push((date, value));
    }
    Ok(out)
}

/// Assemble the panel, applying rescale factors (counts are rounded to the
/// nearest integer after scaling).
pub fn build_panel(
    dates: Vec<NaiveDate>,
    y: Vec<Vec<u64>>,
    z: Vec<u64>,
    covariates: Vec<Option<DMatrix<f64>>>,
    covariates_global: Option<DMatrix<f64>>,
    rescale: &RescaleConfig,
) -> Result<DataBundle, CliError> {
    let n_series = y.len();
    let t_len = z.len();
    if rescale.series.len() != n_series {
        return Err(validation(format!(
            "{} rescale factors for {} series",
            rescale.series.len(),
            n_series
        )));
    }
    let scale_counts = |counts: Vec<u64>, factor: f64| -> Vec<u64> {
        counts
            .into_iter()
            .map(|c| (c as f64 * factor).round() as u64)
            .collect()
    };
    let y: Vec<Vec<u64>> = y
        .into_iter()
        .zip(&rescale.series)
        .map(|(col, &f)| scale_counts(col, f))
        .collect();
    let z = scale_counts(z, rescale.global);

    let v: Vec<DMatrix<f64>> = covariates
        .into_iter()
        .map(|c| c.unwrap_or_else(|| DMatrix::zeros(t_len, 0)))
        .collect();
    let v_z = covariates_global.unwrap_or_else(|| DMatrix::zeros(t_len, 0));

    let panel = CountPanel::new(y, z, v, v_z)
        .and_then(|p| p.with_rescale(rescale.series.clone(), rescale.global))
        .map_err(|e| validation(format!("panel validation: {e}")))?;
    Ok(DataBundle { dates, panel })
}

pub fn write_counts_csv(
    path: &Path,
    dates: &[NaiveDate],
    y: &[Vec<u64>],
    z: &[u64],
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Other(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["date".to_string()];
    for j in 0..y.len() {
        header.push(format!("y_{}", j + 1));
    }
    header.push("z".to_string());
    writer.write_record(&header).map_err(io_err)?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.to_string()];
        for yj in y {
            row.push(yj[t].to_string());
        }
        row.push(z[t].to_string());
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| io_err(csv::Error::from(e)))?;
    Ok(())
}

pub fn write_covariates_csv(
    path: &Path,
    dates: &[NaiveDate],
    matrix: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Other(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    let mut header = vec!["date".to_string()];
    for m in 0..matrix.ncols() {
        header.push(format!("v{}", m + 1));
    }
    writer.write_record(&header).map_err(io_err)?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.to_string()];
        for m in 0..matrix.ncols() {
            row.push(format!("{}", matrix[(t, m)]));
        }
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| io_err(csv::Error::from(e)))?;
    Ok(())
}

fn io_err(e: csv::Error) -> CliError {
    CliError::Other(anyhow::anyhow!("CSV write: {e}"))
}
