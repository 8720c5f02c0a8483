//! Ingesting hourly temperature CSVs, removing the period-24 seasonal mean
//! and scale, fitting VAR(p) input models by conditional least squares, and
//! selecting the order by AIC.

use crate::error::{Error, Result};
use crate::models::BuildingPhi;
use crate::var::{TrajectoryBatch, VarModel};
use chrono::{NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::path::Path;

/// Channel names accepted in input CSVs, in canonical order.
pub const KNOWN_CHANNELS: [&str; 6] = ["below", "above", "off", "cor", "ext", "int"];

/// Hourly multi-channel data, split into contiguous segments at large gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    pub channels: Vec<String>,
    pub segments: Vec<SeriesSegment>,
    /// Timestamps that were filled by linear interpolation (short gaps).
    pub interpolated: Vec<NaiveDateTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSegment {
    pub start: NaiveDateTime,
    /// Time-major rows; `rows[t][channel]`.
    pub rows: Vec<Vec<f64>>,
}

impl SeriesData {
    pub fn n_obs(&self) -> usize {
        self.segments.iter().map(|s| s.rows.len()).sum()
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    /// Segment row blocks, the shape the fitting routines consume.
    pub fn row_segments(&self) -> Vec<Vec<Vec<f64>>> {
        self.segments.iter().map(|s| s.rows.clone()).collect()
    }
}

/// Gap handling thresholds, in missing hours.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Gaps with at most this many missing rows are linearly interpolated
    /// (with a warning).
    pub interpolate_max: usize,
    /// Larger gaps split the series into independent segments, up to this
    /// size; anything beyond is an error listing the offending timestamps.
    pub split_max: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            interpolate_max: 2,
            split_max: 168,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(ts);
        }
    }
    None
}

/// Load an hourly CSV with header `timestamp,<channels...>` where the
/// channels are a subset of [`KNOWN_CHANNELS`].
///
/// An optional `mask` column (0 or 1) marks rows to keep — a calendar
/// filter supplied as data, e.g. working days. Excluded rows act as gaps.
pub fn load_series(path: &Path, options: LoadOptions) -> Result<SeriesData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::CsvParse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse(e.to_string()))?
        .clone();
    let mut cols = headers.iter();
    if cols.next() != Some("timestamp") {
        return Err(Error::CsvParse(
            "first column must be 'timestamp'".into(),
        ));
    }
    let mut channels: Vec<String> = Vec::new();
    let mut mask_col: Option<usize> = None;
    for (j, c) in cols.enumerate() {
        if c == "mask" {
            if mask_col.is_some() {
                return Err(Error::CsvParse("duplicate 'mask' column".into()));
            }
            mask_col = Some(j);
        } else {
            channels.push(c.to_string());
        }
    }
    if channels.is_empty() {
        return Err(Error::CsvParse("no channel columns".into()));
    }
    for c in &channels {
        if !KNOWN_CHANNELS.contains(&c.as_str()) {
            return Err(Error::CsvParse(format!(
                "unknown channel '{c}'; expected a subset of {KNOWN_CHANNELS:?}"
            )));
        }
    }
    let n_fields = channels.len() + 1 + usize::from(mask_col.is_some());

    let mut times: Vec<NaiveDateTime> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut masked: Vec<bool> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse(format!("row {}: {e}", i + 2)))?;
        if record.len() != n_fields {
            return Err(Error::CsvParse(format!(
                "row {}: expected {n_fields} fields, got {}",
                i + 2,
                record.len()
            )));
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| {
            Error::CsvParse(format!("row {}: unparseable timestamp '{}'", i + 2, &record[0]))
        })?;
        let mut row = Vec::with_capacity(channels.len());
        let mut keep = true;
        let mut chan = 0usize;
        for (j, field) in record.iter().skip(1).enumerate() {
            if Some(j) == mask_col {
                let v: f64 = field.parse().map_err(|_| {
                    Error::CsvParse(format!("row {}: unparseable mask '{field}'", i + 2))
                })?;
                keep = v >= 0.5;
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                Error::CsvParse(format!(
                    "row {}: unparseable value '{}' in column '{}'",
                    i + 2,
                    field,
                    channels[chan]
                ))
            })?;
            row.push(v);
            chan += 1;
        }
        times.push(ts);
        rows.push(row);
        masked.push(!keep);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse(format!("{}: no data rows", path.display())));
    }
    if masked.iter().all(|&m| m) {
        return Err(Error::CsvParse(format!(
            "{}: every row is excluded by the mask",
            path.display()
        )));
    }

    // Walk the timeline over the kept rows: interpolate short gaps, split on
    // medium ones, reject anything larger. Mask-excluded stretches are
    // deliberate calendar filtering and always split, never interpolate or
    // error.
    let mut segments: Vec<SeriesSegment> = Vec::new();
    let mut interpolated: Vec<NaiveDateTime> = Vec::new();
    let mut too_large: Vec<String> = Vec::new();
    let mut current: Option<SeriesSegment> = None;
    let mut prev_kept: Option<usize> = None;
    for i in 0..rows.len() {
        if i > 0 {
            let dt = times[i] - times[i - 1];
            let hours = dt.num_hours();
            if dt.num_seconds() != hours * 3600 || hours < 1 {
                return Err(Error::CsvParse(format!(
                    "non-monotone or sub-hourly timestamps at {} -> {}",
                    times[i - 1],
                    times[i]
                )));
            }
        }
        if masked[i] {
            continue;
        }
        match prev_kept {
            None => {
                current = Some(SeriesSegment {
                    start: times[i],
                    rows: vec![rows[i].clone()],
                });
            }
            Some(p) => {
                let hours = (times[i] - times[p]).num_hours();
                let missing = (hours - 1) as usize;
                let crossed_mask = (p + 1..i).any(|k| masked[k]);
                let seg = current.as_mut().unwrap();
                if missing == 0 {
                    seg.rows.push(rows[i].clone());
                } else if crossed_mask || missing > options.interpolate_max {
                    if !crossed_mask && missing > options.split_max {
                        too_large.push(format!(
                            "{} -> {} ({missing} h missing)",
                            times[p], times[i]
                        ));
                    }
                    segments.push(std::mem::replace(
                        seg,
                        SeriesSegment {
                            start: times[i],
                            rows: vec![rows[i].clone()],
                        },
                    ));
                } else {
                    for m in 1..=missing {
                        let frac = m as f64 / (missing + 1) as f64;
                        let filled: Vec<f64> = (0..channels.len())
                            .map(|c| rows[p][c] * (1.0 - frac) + rows[i][c] * frac)
                            .collect();
                        let ts = times[p] + chrono::Duration::hours(m as i64);
                        log::warn!("interpolating missing hour {ts}");
                        interpolated.push(ts);
                        seg.rows.push(filled);
                    }
                    seg.rows.push(rows[i].clone());
                }
            }
        }
        prev_kept = Some(i);
    }
    segments.extend(current);
    if !too_large.is_empty() {
        return Err(Error::GapsTooLarge {
            max_gap_hours: options.split_max as i64,
            gaps: too_large.join(", "),
        });
    }
    Ok(SeriesData {
        channels,
        segments,
        interpolated,
    })
}

/// Periodic mean and scale profile per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalProfile {
    pub period: usize,
    /// `mean[channel][phase]`
    pub mean: Vec<Vec<f64>>,
    /// `scale[channel][phase]`, strictly positive (standard deviations; the
    /// series is divided by this, so it is a scale, not a variance)
    pub scale: Vec<Vec<f64>>,
}

fn phase_of(ts: NaiveDateTime, offset: usize, period: usize) -> usize {
    if period == 24 {
        ts.hour() as usize
    } else {
        (ts.hour() as usize + offset) % period
    }
}

/// Remove the periodic mean and scale: output `(x - mean[phase]) /
/// scale[phase]` per channel. Requires at least `3 * period` observations;
/// fails on any phase with scale below 1e-8.
pub fn deseasonalize(series: &SeriesData, period: usize) -> Result<(SeasonalProfile, SeriesData)> {
    if period == 0 {
        return Err(Error::InvalidArgument("period must be positive".into()));
    }
    if series.n_obs() < 3 * period {
        return Err(Error::InvalidArgument(format!(
            "need at least {} observations for period {period}, got {}",
            3 * period,
            series.n_obs()
        )));
    }
    let d = series.dim();
    let mut sums = vec![vec![0.0f64; period]; d];
    let mut sq = vec![vec![0.0f64; period]; d];
    let mut counts = vec![0usize; period];
    for seg in &series.segments {
        for (t, row) in seg.rows.iter().enumerate() {
            let ts = seg.start + chrono::Duration::hours(t as i64);
            let h = phase_of(ts, t, period);
            counts[h] += 1;
            for c in 0..d {
                sums[c][h] += row[c];
                sq[c][h] += row[c] * row[c];
            }
        }
    }
    let mut mean = vec![vec![0.0f64; period]; d];
    let mut scale = vec![vec![0.0f64; period]; d];
    for h in 0..period {
        if counts[h] < 2 {
            return Err(Error::InvalidArgument(format!(
                "phase {h} has fewer than two observations"
            )));
        }
        let n = counts[h] as f64;
        for c in 0..d {
            let m = sums[c][h] / n;
            let var = (sq[c][h] - n * m * m) / (n - 1.0);
            let sd = var.max(0.0).sqrt();
            if sd < 1e-8 {
                return Err(Error::DegenerateHour { hour: h, sigma: sd });
            }
            mean[c][h] = m;
            scale[c][h] = sd;
        }
    }
    let profile = SeasonalProfile {
        period,
        mean,
        scale,
    };
    let out = apply_profile(&profile, series, true);
    Ok((profile, out))
}

/// Invert [`deseasonalize`]: `x * scale[phase] + mean[phase]`.
pub fn reseasonalize(profile: &SeasonalProfile, series: &SeriesData) -> SeriesData {
    apply_profile(profile, series, false)
}

fn apply_profile(profile: &SeasonalProfile, series: &SeriesData, forward: bool) -> SeriesData {
    let d = series.dim();
    let segments = series
        .segments
        .iter()
        .map(|seg| {
            let rows = seg
                .rows
                .iter()
                .enumerate()
                .map(|(t, row)| {
                    let ts = seg.start + chrono::Duration::hours(t as i64);
                    let h = phase_of(ts, t, profile.period);
                    (0..d)
                        .map(|c| {
                            if forward {
                                (row[c] - profile.mean[c][h]) / profile.scale[c][h]
                            } else {
                                row[c] * profile.scale[c][h] + profile.mean[c][h]
                            }
                        })
                        .collect()
                })
                .collect();
            SeriesSegment {
                start: seg.start,
                rows,
            }
        })
        .collect();
    SeriesData {
        channels: series.channels.clone(),
        segments,
        interpolated: series.interpolated.clone(),
    }
}

/// One fitted VAR model.
#[derive(Debug, Clone)]
pub struct VarFit {
    pub model: VarModel,
    /// Residual covariance (1/(n - order) normalization).
    pub theta_hat: DMatrix<f64>,
    /// Number of regression rows used.
    pub n_obs: usize,
    pub spectral_radius: f64,
}

/// Order selection summary.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub fit: VarFit,
    pub aic_by_order: BTreeMap<usize, f64>,
    pub chosen_order: usize,
    /// Rows in the common sample the AIC comparison used.
    pub n_obs: usize,
}

/// Conditional least squares fit of a VAR(p): regress `U_t` on
/// `(U_{t-1}, ..., U_{t-p})` over every segment, no intercept (the series is
/// centered by deseasonalization). The fitted model must pass the
/// stationarity check; otherwise the offending spectral radius is reported.
pub fn fit_var(segments: &[Vec<Vec<f64>>], order: usize) -> Result<VarFit> {
    let fit = fit_var_lagged(segments, order, order)?;
    Ok(fit)
}

/// As [`fit_var`] but dropping `skip` initial rows of every segment (used by
/// the AIC comparison to keep a common sample across candidate orders).
fn fit_var_lagged(segments: &[Vec<Vec<f64>>], order: usize, skip: usize) -> Result<VarFit> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if skip < order {
        return Err(Error::InvalidArgument("skip must be >= order".into()));
    }
    let d = segments
        .iter()
        .find_map(|s| s.first().map(|r| r.len()))
        .ok_or_else(|| Error::InvalidArgument("no data to fit".into()))?;
    let k = order * d;
    let n_rows: usize = segments
        .iter()
        .map(|s| s.len().saturating_sub(skip))
        .sum();
    if n_rows <= order * d * d + d {
        return Err(Error::InvalidArgument(format!(
            "{n_rows} observations are too few to identify a VAR({order}) in dimension {d}"
        )));
    }
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DMatrix::<f64>::zeros(k, d);
    let mut reg_row = vec![0.0f64; k];
    for seg in segments {
        for t in skip..seg.len() {
            for l in 0..order {
                for c in 0..d {
                    reg_row[l * d + c] = seg[t - l - 1][c];
                }
            }
            for i in 0..k {
                let ri = reg_row[i];
                for j in i..k {
                    xtx[(i, j)] += ri * reg_row[j];
                }
                for j in 0..d {
                    xty[(i, j)] += ri * seg[t][j];
                }
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[(i, j)] = xtx[(j, i)];
        }
    }
    let chol = xtx.clone().cholesky().ok_or(Error::RankDeficient {
        order,
        n_obs: n_rows,
    })?;
    let beta = chol.solve(&xty); // k x d

    // residual covariance with 1/(n - order) normalization
    let mut theta = DMatrix::<f64>::zeros(d, d);
    for seg in segments {
        for t in skip..seg.len() {
            for l in 0..order {
                for c in 0..d {
                    reg_row[l * d + c] = seg[t - l - 1][c];
                }
            }
            let mut resid = vec![0.0f64; d];
            for (j, r) in resid.iter_mut().enumerate() {
                let mut pred = 0.0;
                for i in 0..k {
                    pred += reg_row[i] * beta[(i, j)];
                }
                *r = seg[t][j] - pred;
            }
            for i in 0..d {
                for j in i..d {
                    theta[(i, j)] += resid[i] * resid[j];
                }
            }
        }
    }
    let denom = (n_rows - order) as f64;
    for i in 0..d {
        for j in i..d {
            theta[(i, j)] /= denom;
            theta[(j, i)] = theta[(i, j)];
        }
    }

    let coeffs: Vec<DMatrix<f64>> = (0..order)
        .map(|l| {
            DMatrix::from_fn(d, d, |i, j| beta[(l * d + j, i)])
        })
        .collect();
    let model = VarModel::new(coeffs, theta.clone())?;
    let rho = model.spectral_radius()?;
    if rho >= 1.0 {
        return Err(Error::NonStationary {
            spectral_radius: rho,
            limit: 1.0,
        });
    }
    Ok(VarFit {
        model,
        theta_hat: theta,
        n_obs: n_rows,
        spectral_radius: rho,
    })
}

/// Fit every order up to `p_max` on a common sample and pick the AIC
/// minimizer: `AIC(p) = n * ln det(theta_hat_p) + 2 p d^2`. The returned
/// model is refitted at the chosen order on all available rows.
pub fn select_order(segments: &[Vec<Vec<f64>>], p_max: usize) -> Result<FitReport> {
    if p_max == 0 {
        return Err(Error::InvalidArgument("p_max must be at least 1".into()));
    }
    let mut aic_by_order = BTreeMap::new();
    let mut n_common = 0usize;
    for p in 1..=p_max {
        let fit = fit_var_lagged(segments, p, p_max)?;
        n_common = fit.n_obs;
        let d = fit.theta_hat.nrows();
        let det = fit
            .theta_hat
            .clone()
            .cholesky()
            .map(|c| {
                let l = c.unpack();
                2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>()
            })
            .ok_or(Error::RankDeficient {
                order: p,
                n_obs: fit.n_obs,
            })?;
        let aic = fit.n_obs as f64 * det + 2.0 * (p * d * d) as f64;
        aic_by_order.insert(p, aic);
    }
    let chosen_order = *aic_by_order
        .iter()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let fit = fit_var(segments, chosen_order)?;
    Ok(FitReport {
        fit,
        aic_by_order,
        chosen_order,
        n_obs: n_common,
    })
}

/// Least-squares fit of the building output model: regress the output on two
/// lags of itself and two lags of the exogenous channels.
pub fn fit_building_phi(
    exog_segments: &[Vec<Vec<f64>>],
    output_segments: &[Vec<f64>],
) -> Result<BuildingPhi> {
    if exog_segments.len() != output_segments.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} output segments", exog_segments.len()),
            got: format!("{}", output_segments.len()),
        });
    }
    let d = exog_segments
        .iter()
        .find_map(|s| s.first().map(|r| r.len()))
        .ok_or_else(|| Error::InvalidArgument("no data to fit".into()))?;
    let k = 2 * d + 2;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut n_rows = 0usize;
    let mut reg = vec![0.0f64; k];
    for (seg, out) in exog_segments.iter().zip(output_segments) {
        if seg.len() != out.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} output rows", seg.len()),
                got: format!("{}", out.len()),
            });
        }
        for t in 2..seg.len() {
            for c in 0..d {
                reg[c] = seg[t - 1][c];
                reg[d + c] = seg[t - 2][c];
            }
            reg[2 * d] = out[t - 1];
            reg[2 * d + 1] = out[t - 2];
            for i in 0..k {
                for j in i..k {
                    xtx[(i, j)] += reg[i] * reg[j];
                }
                xty[i] += reg[i] * out[t];
            }
            n_rows += 1;
        }
    }
    if n_rows <= k {
        return Err(Error::InvalidArgument(format!(
            "{n_rows} rows are too few to fit {k} coefficients"
        )));
    }
    for i in 0..k {
        for j in 0..i {
            xtx[(i, j)] = xtx[(j, i)];
        }
    }
    let beta = xtx
        .cholesky()
        .ok_or(Error::RankDeficient {
            order: 2,
            n_obs: n_rows,
        })?
        .solve(&xty);
    Ok(BuildingPhi {
        output_lags: [beta[2 * d], beta[2 * d + 1]],
        input_lag1: (0..d).map(|c| beta[c]).collect(),
        input_lag2: (0..d).map(|c| beta[d + c]).collect(),
        init: [0.0, 0.0],
    })
}

/// One sample path of a batch as fitting rows.
pub fn rows_from_batch(batch: &TrajectoryBatch, sample: usize) -> Vec<Vec<f64>> {
    (0..=batch.horizon())
        .map(|t| (0..batch.dim()).map(|c| batch.value(sample, t, c)).collect())
        .collect()
}
