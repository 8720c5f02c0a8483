//! Config documents (TOML or JSON, by extension) and the CSV export formats.

use crate::conditioning::PickFreezePair;
use crate::error::{Error, Result};
use crate::ingest::FitReport;
use crate::models::{BuildingPhi, LinearRecurrenceSpec};
use crate::sobol::SobolSeries;
use crate::var::{TrajectoryBatch, VarModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// On-disk form of a VAR model: coefficient matrices as nested rows
/// (row-major), one matrix per lag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarModelConfig {
    pub dim: usize,
    pub order: usize,
    pub coeffs: Vec<Vec<Vec<f64>>>,
    pub noise_cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

impl VarModelConfig {
    pub fn from_model(model: &VarModel) -> Self {
        let d = model.dim();
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect()
        };
        let mean = model.mean();
        VarModelConfig {
            dim: d,
            order: model.order(),
            coeffs: model.coeffs().iter().map(to_rows).collect(),
            noise_cov: to_rows(model.noise_cov()),
            mean: if mean.iter().all(|&v| v == 0.0) {
                None
            } else {
                Some(mean.iter().copied().collect())
            },
        }
    }

    pub fn into_model(self) -> Result<VarModel> {
        let d = self.dim;
        if self.coeffs.len() != self.order {
            return Err(Error::Config(format!(
                "declared order {} but {} coefficient matrices",
                self.order,
                self.coeffs.len()
            )));
        }
        let parse = |rows: &Vec<Vec<f64>>, what: &str| -> Result<DMatrix<f64>> {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Config(format!("{what} is not a {d}x{d} matrix")));
            }
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        };
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(l, rows)| parse(rows, &format!("coefficient matrix {}", l + 1)))
            .collect::<Result<Vec<_>>>()?;
        let noise = parse(&self.noise_cov, "noise covariance")?;
        let mean = match self.mean {
            Some(v) => {
                if v.len() != d {
                    return Err(Error::Config(format!("mean must have length {d}")));
                }
                DVector::from_vec(v)
            }
            None => DVector::zeros(d),
        };
        VarModel::with_mean(coeffs, noise, mean)
    }
}

/// Parameters of the output model named in a scenario.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_spec: Option<LinearRecurrenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_phi: Option<BuildingPhi>,
}

/// A full estimation scenario as a config document. Command-line flags
/// override any field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Path to the input VAR model config.
    pub model: String,
    pub output_model: OutputModelConfig,
    /// 1-based coordinates to analyze; empty means all.
    #[serde(default)]
    pub targets: Vec<usize>,
    pub horizon: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub start_time: usize,
    /// `model` or `empirical`.
    #[serde(default = "default_cov")]
    pub cov: String,
    /// `bootstrap` or `delta`.
    #[serde(default = "default_ci")]
    pub ci: String,
    #[serde(default = "default_plateau_eps")]
    pub plateau_eps: f64,
    #[serde(default = "default_plateau_window")]
    pub plateau_window: usize,
    #[serde(default = "default_out")]
    pub out: String,
}

fn default_burn_in() -> usize {
    200
}
fn default_cov() -> String {
    "model".into()
}
fn default_ci() -> String {
    "bootstrap".into()
}
fn default_plateau_eps() -> f64 {
    0.01
}
fn default_plateau_window() -> usize {
    3
}
fn default_out() -> String {
    ".".into()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 30 {
            return Err(Error::Config(format!(
                "n_samples must be at least 30, got {}",
                self.n_samples
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.start_time > self.horizon {
            return Err(Error::Config(format!(
                "start_time {} exceeds horizon {}",
                self.start_time, self.horizon
            )));
        }
        if !matches!(self.cov.as_str(), "model" | "empirical") {
            return Err(Error::Config(format!(
                "cov must be 'model' or 'empirical', got '{}'",
                self.cov
            )));
        }
        if !matches!(self.ci.as_str(), "bootstrap" | "delta") {
            return Err(Error::Config(format!(
                "ci must be 'bootstrap' or 'delta', got '{}'",
                self.ci
            )));
        }
        Ok(())
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Deserialize a config document, choosing the format by extension
/// (`.json` is JSON, anything else TOML).
pub fn load_document<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Deserialize a TOML document held in memory (embedded fixtures).
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Serialize a config document, format by extension as in [`load_document`].
pub fn save_document<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?
    } else {
        toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?
    };
    write_atomic(path, text.as_bytes())
}

pub fn load_var_model(path: &Path) -> Result<VarModel> {
    load_document::<VarModelConfig>(path)?.into_model()
}

pub fn save_var_model(model: &VarModel, path: &Path) -> Result<()> {
    save_document(&VarModelConfig::from_model(model), path)
}

/// Write bytes to `path` atomically (temp file + rename in the same
/// directory).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn fmt_value(v: f64) -> String {
    // full round-trip precision, stable textual form
    format!("{v:.17e}")
}

/// Trajectory CSV: header `sample,t,u1,...,up`, one row per (sample, t).
pub fn trajectory_csv(batch: &TrajectoryBatch) -> String {
    let p = batch.dim();
    let mut out = String::from("sample,t");
    for c in 1..=p {
        out.push_str(&format!(",u{c}"));
    }
    out.push('\n');
    for s in 0..batch.n_samples() {
        for t in 0..=batch.horizon() {
            out.push_str(&format!("{s},{t}"));
            for c in 0..p {
                out.push(',');
                out.push_str(&fmt_value(batch.value(s, t, c)));
            }
            out.push('\n');
        }
    }
    out
}

/// Pick-freeze pair CSV: the trajectory format with a leading `replica`
/// column; replica 1 is `(x, z)`, replica 2 is `(x, z_pf)`.
pub fn pair_csv(pair: &PickFreezePair, target_coord: usize) -> Result<String> {
    let one = crate::conditioning::merge_target(&pair.x, &pair.z, target_coord)?;
    let two = crate::conditioning::merge_target(&pair.x, &pair.z_pf, target_coord)?;
    let p = one.dim();
    let mut out = String::from("replica,sample,t");
    for c in 1..=p {
        out.push_str(&format!(",u{c}"));
    }
    out.push('\n');
    for (replica, batch) in [(1usize, &one), (2usize, &two)] {
        for s in 0..batch.n_samples() {
            for t in 0..=batch.horizon() {
                out.push_str(&format!("{replica},{s},{t}"));
                for c in 0..p {
                    out.push(',');
                    out.push_str(&fmt_value(batch.value(s, t, c)));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Regression-weight CSV for one window `0..=t`: rows are past times,
/// columns the non-target components.
pub fn lambda_csv(lambda_current: &DMatrix<f64>) -> String {
    let mut out = String::from("s");
    for j in 1..=lambda_current.ncols() {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for s in 0..lambda_current.nrows() {
        out.push_str(&format!("{s}"));
        for j in 0..lambda_current.ncols() {
            out.push(',');
            out.push_str(&fmt_value(lambda_current[(s, j)]));
        }
        out.push('\n');
    }
    out
}

/// Index series CSV: `coord,t,estimate,ci_lo,ci_hi,n,plateau`, one row per
/// (coordinate, t). The plateau column repeats the detected plateau time for
/// the coordinate (empty when none was found). Coordinates are 1-based in
/// the output, matching the `u1..up` trajectory headers.
pub fn sobol_csv(series_list: &[SobolSeries]) -> String {
    let mut out = String::from("coord,t,estimate,ci_lo,ci_hi,n,plateau\n");
    for series in series_list {
        let plateau = series
            .plateau_time
            .map(|t| t.to_string())
            .unwrap_or_default();
        for (i, &t) in series.times.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                series.target_coord + 1,
                t,
                fmt_value(series.estimates[i]),
                fmt_value(series.ci_lo[i]),
                fmt_value(series.ci_hi[i]),
                series.n_samples,
                plateau
            ));
        }
    }
    out
}

/// Fit-report metadata, stored as JSON next to the fitted model config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReportMetadata {
    pub chosen_order: usize,
    pub aic_by_order: Vec<(usize, f64)>,
    pub n_obs_common_sample: usize,
    pub n_obs_final_fit: usize,
    pub spectral_radius: f64,
    /// Residual covariance of the final fit, row-major.
    pub residual_cov: Vec<Vec<f64>>,
    /// Per-channel residual standard deviations.
    pub residual_sd: Vec<f64>,
    /// Formula the AIC values follow.
    pub aic_definition: String,
    /// Normalization of the residual covariance.
    pub theta_normalization: String,
    /// The periodic scale divides the series, so it is a standard deviation.
    pub seasonal_scale: String,
}

impl FitReportMetadata {
    pub fn from_report(report: &FitReport) -> Self {
        let d = report.fit.theta_hat.nrows();
        FitReportMetadata {
            chosen_order: report.chosen_order,
            aic_by_order: report.aic_by_order.iter().map(|(k, v)| (*k, *v)).collect(),
            n_obs_common_sample: report.n_obs,
            n_obs_final_fit: report.fit.n_obs,
            spectral_radius: report.fit.spectral_radius,
            residual_cov: (0..d)
                .map(|i| (0..d).map(|j| report.fit.theta_hat[(i, j)]).collect())
                .collect(),
            residual_sd: (0..d).map(|i| report.fit.theta_hat[(i, i)].sqrt()).collect(),
            aic_definition: "AIC(p) = n * ln det(theta_hat_p) + 2 * p * dim^2, common sample"
                .into(),
            theta_normalization: "residual covariance / (n - p)".into(),
            seasonal_scale: "per-hour standard deviation (series is divided by it)".into(),
        }
    }
}

/// Metadata written next to the index-series CSV: which interval method
/// produced the bounds, and the sampling parameters of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub ci_method: String,
    pub ci_level: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub covariance_source: String,
    pub plateau_rel_eps: f64,
    pub plateau_window: usize,
    /// Detected plateau time per 1-based coordinate (None when not found).
    pub plateau_by_coord: Vec<(usize, Option<usize>)>,
}

/// A minimal gnuplot script rendering the index CSV (one curve per
/// coordinate with its confidence band).
pub fn gnuplot_script(csv_name: &str, coords: &[usize]) -> String {
    let mut out = String::new();
    out.push_str("set datafile separator ','\n");
    out.push_str("set key outside\n");
    out.push_str("set xlabel 't'\n");
    out.push_str("set ylabel 'index'\n");
    out.push_str("plot \\\n");
    let pieces: Vec<String> = coords
        .iter()
        .map(|c| {
            let coord = c + 1;
            format!(
                "  '{csv_name}' using ($1=={coord}?$2:1/0):3 with lines title 'u{coord}', \\\n  \
                 '' using ($1=={coord}?$2:1/0):4 with lines dt 2 notitle, \\\n  \
                 '' using ($1=={coord}?$2:1/0):5 with lines dt 2 notitle"
            )
        })
        .collect();
    out.push_str(&pieces.join(", \\\n"));
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_model() -> VarModel {
        VarModel::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.8, 0.4, 0.1, 0.2])],
            DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap()
    }

    #[test]
    fn var_model_round_trip_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_model();
        for name in ["model.toml", "model.json"] {
            let path = dir.path().join(name);
            save_var_model(&m, &path).unwrap();
            let back = load_var_model(&path).unwrap();
            assert_eq!(back.dim(), 2);
            assert_eq!(back.order(), 1);
            assert_relative_eq!(
                (back.coeffs()[0].clone() - m.coeffs()[0].clone()).norm(),
                0.0,
                epsilon = 1e-15
            );
            assert_relative_eq!(
                (back.noise_cov().clone() - m.noise_cov().clone()).norm(),
                0.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = VarModelConfig {
            dim: 2,
            order: 2,
            coeffs: vec![vec![vec![0.1, 0.0], vec![0.0, 0.1]]],
            noise_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            mean: None,
        };
        assert!(cfg.into_model().is_err());
    }

    #[test]
    fn trajectory_csv_shape() {
        let m = toy_model();
        let batch = m.simulate(5, 2, 1, 10).unwrap();
        let csv = trajectory_csv(&batch);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sample,t,u1,u2");
        assert_eq!(lines.len(), 1 + 2 * 6);
    }

    #[test]
    fn csv_values_round_trip_exactly() {
        let m = toy_model();
        let batch = m.simulate(2, 3, 9, 10).unwrap();
        let csv = trajectory_csv(&batch);
        for (row, line) in csv.lines().skip(1).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let s = row / 3;
            let t = row % 3;
            for c in 0..2 {
                let parsed: f64 = fields[2 + c].parse().unwrap();
                assert_eq!(parsed, batch.value(s, t, c));
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn var_config_round_trip_preserves_values(
            a in -0.4f64..0.4,
            b in -0.4f64..0.4,
            c in 0.05f64..2.0,
            mean in -5.0f64..5.0,
        ) {
            let m = VarModel::with_mean(
                vec![DMatrix::from_row_slice(2, 2, &[a, b, 0.0, a])],
                DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, c]),
                DVector::from_column_slice(&[mean, -mean]),
            ).unwrap();
            let cfg = VarModelConfig::from_model(&m);
            let text = toml::to_string(&cfg).unwrap();
            let back: VarModelConfig = toml::from_str(&text).unwrap();
            let m2 = back.into_model().unwrap();
            proptest::prop_assert_eq!(m.coeffs()[0].clone(), m2.coeffs()[0].clone());
            proptest::prop_assert_eq!(m.noise_cov().clone(), m2.noise_cov().clone());
            proptest::prop_assert_eq!(m.mean().clone(), m2.mean().clone());
        }
    }
}
