//! Pick-and-freeze estimation of the dynamic sensitivity index series, with
//! confidence intervals, plateau detection, and an exact variance oracle for
//! linear models.
//!
//! The index at time `t` is `Var(E(Y_t | X_0..X_t)) / Var(Y_t)`; it is
//! estimated as the empirical covariance between the output and its
//! pick-freezed replication, normalized by the empirical output variance.

use crate::conditioning::{
    decompose, merge_target, pickfreeze_pairs, split_target, CovarianceSource, DecompositionPlan,
    PickFreezePair,
};
use crate::error::{Error, Result};
use crate::models::{ModelFunction, OutputBatch};
use crate::numeric;
use crate::streams::{derive_seed, substream, StreamTag};
use crate::toeplitz::{JitterPolicy, LevinsonSolver};
use crate::var::{CovarianceStructure, VarModel};
use rand::Rng;
use rayon::prelude::*;

/// Outputs of a model on both halves of a pick-freezed pair.
#[derive(Debug, Clone)]
pub struct OutputPairBatch {
    pub y: OutputBatch,
    pub y_pf: OutputBatch,
}

/// Evaluate a model on `(x, z)` and `(x, z_pf)` at the pair's full horizon.
pub fn evaluate_pair(
    f: &dyn ModelFunction,
    pair: &PickFreezePair,
    target_coord: usize,
) -> Result<OutputPairBatch> {
    let input = merge_target(&pair.x, &pair.z, target_coord)?;
    let input_pf = merge_target(&pair.x, &pair.z_pf, target_coord)?;
    let y = f.evaluate(&input)?;
    y.check_finite()?;
    let y_pf = f.evaluate(&input_pf)?;
    y_pf.check_finite()?;
    Ok(OutputPairBatch { y, y_pf })
}

/// The plain pick-and-freeze ratio estimator on one pair of output samples:
/// biased 1/N moments, separate empirical means for both replicas, no
/// clamping.
pub fn estimate_index(y: &[f64], y_pf: &[f64]) -> Result<f64> {
    if y.len() != y_pf.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} outputs", y.len()),
            got: format!("{}", y_pf.len()),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the index estimator needs at least two samples".into(),
        ));
    }
    let inv = 1.0 / n as f64;
    let m_y = numeric::sum(y) * inv;
    let m_pf = numeric::sum(y_pf) * inv;
    let m11 = numeric::sum_by(n, |i| y[i] * y_pf[i]) * inv;
    let m20 = numeric::sum_by(n, |i| y[i] * y[i]) * inv;
    let den = m20 - m_y * m_y;
    if den <= 0.0 {
        return Err(Error::DegenerateOutput);
    }
    Ok((m11 - m_y * m_pf) / den)
}

/// Confidence interval construction for the index estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiMethod {
    /// Nonparametric bootstrap over jointly resampled `(y_i, y_pf_i)` pairs,
    /// percentile interval.
    Bootstrap { resamples: usize },
    /// Normal interval from the joint CLT of the five empirical moments
    /// (mean y, mean y_pf, mean y^2, mean y_pf^2, mean y*y_pf).
    Delta,
}

impl Default for CiMethod {
    fn default() -> Self {
        CiMethod::Bootstrap { resamples: 1000 }
    }
}

impl CiMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CiMethod::Bootstrap { .. } => "bootstrap",
            CiMethod::Delta => "delta",
        }
    }
}

/// Confidence interval for the index at one time point. `seed` drives the
/// bootstrap resampling and is ignored by the delta method.
pub fn confidence_interval(
    y: &[f64],
    y_pf: &[f64],
    level: f64,
    method: CiMethod,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let n = y.len();
    if n < 30 {
        return Err(Error::InvalidArgument(format!(
            "confidence intervals need at least 30 samples, got {n}"
        )));
    }
    match method {
        CiMethod::Bootstrap { resamples } => {
            let mut stats: Vec<f64> = (0..resamples)
                .into_par_iter()
                .map(|b| {
                    let mut rng = substream(seed, StreamTag::Bootstrap, b as u64);
                    let mut ry = vec![0.0f64; n];
                    let mut rpf = vec![0.0f64; n];
                    for i in 0..n {
                        let j = rng.random_range(0..n);
                        ry[i] = y[j];
                        rpf[i] = y_pf[j];
                    }
                    estimate_index(&ry, &rpf).unwrap_or(f64::NAN)
                })
                .collect();
            stats.retain(|v| v.is_finite());
            if stats.is_empty() {
                return Err(Error::DegenerateOutput);
            }
            stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let alpha = (1.0 - level) / 2.0;
            Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
        }
        CiMethod::Delta => {
            let est = estimate_index(y, y_pf)?;
            let inv = 1.0 / n as f64;
            let m1 = numeric::sum(y) * inv;
            let m2 = numeric::sum(y_pf) * inv;
            let m20 = numeric::sum_by(n, |i| y[i] * y[i]) * inv;
            let m11 = numeric::sum_by(n, |i| y[i] * y_pf[i]) * inv;
            let c = m11 - m1 * m2;
            let d = m20 - m1 * m1;
            // gradient of (m11 - m1 m2)/(m20 - m1^2) in (m11, m1, m2, m20, m02)
            let g = [
                1.0 / d,
                (-m2 * d + 2.0 * m1 * c) / (d * d),
                -m1 / d,
                -c / (d * d),
                0.0,
            ];
            // sample covariance of the moment vector
            let v = |i: usize| -> [f64; 5] {
                [
                    y[i] * y_pf[i],
                    y[i],
                    y_pf[i],
                    y[i] * y[i],
                    y_pf[i] * y_pf[i],
                ]
            };
            let mut means = [0.0f64; 5];
            for (k, m) in means.iter_mut().enumerate() {
                *m = numeric::sum_by(n, |i| v(i)[k]) * inv;
            }
            let mut var = 0.0;
            for a in 0..5 {
                for b in 0..5 {
                    if g[a] == 0.0 || g[b] == 0.0 {
                        continue;
                    }
                    let cov_ab =
                        numeric::sum_by(n, |i| (v(i)[a] - means[a]) * (v(i)[b] - means[b]))
                            / (n as f64 - 1.0);
                    var += g[a] * g[b] * cov_ab;
                }
            }
            let se = (var / n as f64).max(0.0).sqrt();
            let z = numeric::inverse_normal_cdf(0.5 + level / 2.0);
            Ok((est - z * se, est + z * se))
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Plateau detection parameters: a point `t` starts the plateau when the
/// next `window` successive differences are all below
/// `rel_eps * max(|estimate|, 0.05)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauParams {
    pub rel_eps: f64,
    pub window: usize,
}

impl Default for PlateauParams {
    fn default() -> Self {
        PlateauParams {
            rel_eps: 0.01,
            window: 3,
        }
    }
}

/// Smallest `t` such that `|S_u - S_{u-1}| < rel_eps * max(|S_u|, 0.05)` for
/// every `u` in `(t, t + window]`; `None` if the series never settles.
pub fn detect_plateau(estimates: &[f64], params: PlateauParams) -> Option<usize> {
    let len = estimates.len();
    if params.window == 0 || len < params.window + 1 {
        return None;
    }
    'outer: for t in 0..len - params.window {
        for u in t + 1..=t + params.window {
            let thresh = params.rel_eps * estimates[u].abs().max(0.05);
            if (estimates[u] - estimates[u - 1]).abs() >= thresh {
                continue 'outer;
            }
        }
        return Some(t);
    }
    None
}

/// Exact index for a linear output `Y_t = sum_k c_k . U_{t-k}` (lags past the
/// expansion or past `t` contribute nothing): solves the normal equations for
/// the projection of `Y_t` on the conditioning window and returns the
/// explained variance ratio.
pub fn analytic_linear_sobol(
    expansion: &[Vec<f64>],
    cov: &CovarianceStructure,
    target_coord: usize,
    t: usize,
) -> Result<f64> {
    analytic_linear_sobol_windowed(expansion, cov, target_coord, t, t)
}

/// Same, conditioning only on `X_{t-k_window} .. X_t`.
pub fn analytic_linear_sobol_windowed(
    expansion: &[Vec<f64>],
    cov: &CovarianceStructure,
    target_coord: usize,
    t: usize,
    k_window: usize,
) -> Result<f64> {
    let p = cov.dim();
    if expansion.is_empty() || expansion.iter().any(|c| c.len() != p) {
        return Err(Error::ShapeMismatch {
            expected: format!("lag coefficient vectors of length {p}"),
            got: "inconsistent expansion".into(),
        });
    }
    let kmax = t.min(expansion.len() - 1);
    // Var(Y_t)
    let mut var_y = 0.0;
    for k in 0..=kmax {
        for l in 0..=kmax {
            let (a, b) = (t - k, t - l);
            let mut term = 0.0;
            for ci in 0..p {
                for cj in 0..p {
                    term += expansion[k][ci] * expansion[l][cj] * cov.cov_entry(a, ci, b, cj);
                }
            }
            var_y += term;
        }
    }
    if var_y <= 0.0 {
        return Err(Error::DegenerateOutput);
    }
    // window of conditioning times
    let lo = t.saturating_sub(k_window);
    let w = t - lo + 1;
    let mut cov_yx = vec![0.0f64; w];
    for (i, s) in (lo..=t).enumerate() {
        let mut acc = 0.0;
        for k in 0..=kmax {
            for ci in 0..p {
                acc += expansion[k][ci] * cov.cov_entry(t - k, ci, s, target_coord);
            }
        }
        cov_yx[i] = acc;
    }
    let autocov: Vec<f64> = (0..w)
        .map(|k| cov.cov_entry(0, target_coord, k, target_coord))
        .collect();
    let solver = LevinsonSolver::new(&autocov)?;
    let beta = solver.solve(&cov_yx);
    // Var(E(Y|X-window)) = cov_yx^T Gxx^{-1} cov_yx = beta . cov_yx
    let explained = numeric::sum_by(w, |i| beta[i] * cov_yx[i]);
    Ok(explained / var_y)
}

/// Per-time index estimates with confidence bounds and the plateau marker.
#[derive(Debug, Clone)]
pub struct SobolSeries {
    pub target_coord: usize,
    pub times: Vec<usize>,
    pub estimates: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n_samples: usize,
    pub plateau_time: Option<usize>,
    pub ci_method: &'static str,
}

/// Options for [`estimate_series`].
#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub horizon: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub burn_in: usize,
    /// First output time to estimate at (models whose output is structurally
    /// degenerate at early times, e.g. pure-lag recursions with zero initial
    /// state, need a later start).
    pub start_time: usize,
    pub ci_level: f64,
    pub ci_method: CiMethod,
    pub plateau: PlateauParams,
    pub cov_source: CovarianceSource,
    pub jitter: JitterPolicy,
}

impl EstimateOptions {
    pub fn new(horizon: usize, n_samples: usize, seed: u64) -> Self {
        EstimateOptions {
            horizon,
            n_samples,
            seed,
            burn_in: 200,
            start_time: 0,
            ci_level: 0.95,
            ci_method: CiMethod::default(),
            plateau: PlateauParams::default(),
            cov_source: CovarianceSource::Model,
            jitter: JitterPolicy::Reject,
        }
    }
}

/// Estimate the full index series of `f` with respect to one input
/// coordinate.
///
/// For every output time `t`, the decomposition is recomputed on the window
/// `0..=t`: each `Z_u`, `u <= t`, is projected on `X_0..X_t`, so the
/// remainder is independent of the whole window and the covariance identity
/// behind the estimator holds exactly at that `t`. The first replica's
/// outputs are computed once (the models are causal); only the pick-freezed
/// replication is re-evaluated per `t`.
pub fn estimate_series(
    model: &VarModel,
    f: &dyn ModelFunction,
    target_coord: usize,
    opts: &EstimateOptions,
) -> Result<SobolSeries> {
    if f.arity() != model.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("model of arity {}", model.dim()),
            got: format!("'{}' with arity {}", f.name(), f.arity()),
        });
    }
    let horizon = opts.horizon;
    let seed1 = derive_seed(opts.seed, StreamTag::Replica1);
    let seed2 = derive_seed(opts.seed, StreamTag::Replica2);
    let batch1 = model.simulate(horizon, opts.n_samples, seed1, opts.burn_in)?;
    let batch2 = model.simulate(horizon, opts.n_samples, seed2, opts.burn_in)?;
    let plan = match opts.cov_source {
        CovarianceSource::Model => {
            let cov = model.stationary_covariance(1e-10)?;
            DecompositionPlan::from_model(model, &cov, target_coord, horizon)?
        }
        CovarianceSource::Empirical => {
            DecompositionPlan::from_batch(model, &batch1, target_coord, opts.jitter)?
        }
    };
    let (x1, _z1) = split_target(&batch1, target_coord)?;
    let (x2, z2) = split_target(&batch2, target_coord)?;
    let y_full = f.evaluate(&batch1)?;
    y_full.check_finite()?;

    if opts.start_time > horizon {
        return Err(Error::InvalidArgument(format!(
            "start time {} exceeds horizon {horizon}",
            opts.start_time
        )));
    }
    let times: Vec<usize> = (opts.start_time..=horizon).collect();
    let mut estimates = Vec::with_capacity(times.len());
    let mut ci_lo = Vec::with_capacity(times.len());
    let mut ci_hi = Vec::with_capacity(times.len());
    for &t in &times {
        let xt1 = plan.conditional_mean_window(t, &x1)?;
        let xt2 = plan.conditional_mean_window(t, &x2)?;
        let z2t = z2.truncate(t);
        let w2 = decompose(&z2t, &xt2)?;
        let mut z_pf = xt1;
        crate::conditioning::add_in_place(&mut z_pf, &w2);
        let x1t = x1.truncate(t);
        let input_pf = merge_target(&x1t, &z_pf, target_coord)?;
        let y_pf = f.evaluate(&input_pf)?;
        y_pf.check_finite()?;
        let yt = y_full.column(t);
        let yt_pf = y_pf.column(t);
        let est = estimate_index(&yt, &yt_pf)?;
        let ci_seed = derive_seed(opts.seed, StreamTag::Aux(t as u64));
        let (lo, hi) = confidence_interval(&yt, &yt_pf, opts.ci_level, opts.ci_method, ci_seed)?;
        estimates.push(est);
        ci_lo.push(lo.min(est));
        ci_hi.push(hi.max(est));
    }
    let plateau_time = detect_plateau(&estimates, opts.plateau).map(|i| times[i]);
    Ok(SobolSeries {
        target_coord,
        times,
        estimates,
        ci_lo,
        ci_hi,
        n_samples: opts.n_samples,
        plateau_time,
        ci_method: opts.ci_method.label(),
    })
}

/// Classical pick-and-freeze estimate for independent `(X, Z)` blocks: the
/// model is re-evaluated with `X` frozen and `Z` replaced by the second
/// replicate. Used to cross-check the reduction in the independent case.
pub fn classical_pick_freeze_series(
    model: &VarModel,
    f: &dyn ModelFunction,
    target_coord: usize,
    opts: &EstimateOptions,
) -> Result<Vec<f64>> {
    let seed1 = derive_seed(opts.seed, StreamTag::Replica1);
    let seed2 = derive_seed(opts.seed, StreamTag::Replica2);
    let batch1 = model.simulate(opts.horizon, opts.n_samples, seed1, opts.burn_in)?;
    let batch2 = model.simulate(opts.horizon, opts.n_samples, seed2, opts.burn_in)?;
    let (x1, _) = split_target(&batch1, target_coord)?;
    let (_, z2) = split_target(&batch2, target_coord)?;
    let y = f.evaluate(&batch1)?;
    let input_pf = merge_target(&x1, &z2, target_coord)?;
    let y_pf = f.evaluate(&input_pf)?;
    (0..=opts.horizon)
        .map(|t| estimate_index(&y.column(t), &y_pf.column(t)))
        .collect()
}

/// Convenience: full-horizon pick-freeze pair for export.
pub fn build_pair(
    model: &VarModel,
    target_coord: usize,
    opts: &EstimateOptions,
) -> Result<PickFreezePair> {
    let plan = match opts.cov_source {
        CovarianceSource::Model => {
            let cov = model.stationary_covariance(1e-10)?;
            DecompositionPlan::from_model(model, &cov, target_coord, opts.horizon)?
        }
        CovarianceSource::Empirical => {
            let seed1 = derive_seed(opts.seed, StreamTag::Replica1);
            let batch1 = model.simulate(opts.horizon, opts.n_samples, seed1, opts.burn_in)?;
            DecompositionPlan::from_batch(model, &batch1, target_coord, opts.jitter)?
        }
    };
    pickfreeze_pairs(model, &plan, opts.n_samples, opts.seed, opts.burn_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearRecurrenceSpec, ToyLinear, ToyNonlinear};
    use crate::var::TrajectoryBatch;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn toy_model() -> VarModel {
        VarModel::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.8, 0.4, 0.1, 0.2])],
            DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap()
    }

    #[test]
    fn index_of_identical_outputs_is_one() {
        let y: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(estimate_index(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn index_of_independent_outputs_is_small() {
        let n = 10_000;
        let mut rng = substream(7, StreamTag::Aux(0), 0);
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let y_pf: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let est = estimate_index(&y, &y_pf).unwrap();
        assert!(est.abs() <= 4.0 / (n as f64).sqrt(), "est = {est}");
    }

    #[test]
    fn index_of_additive_gaussian_model_is_half() {
        // Y = X + Z', X independent of Z', both standard normal: S^X = 1/2.
        let n = 100_000;
        let mut rng = substream(11, StreamTag::Aux(0), 0);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let z2: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i] + z[i]).collect();
        let y_pf: Vec<f64> = (0..n).map(|i| x[i] + z2[i]).collect();
        let est = estimate_index(&y, &y_pf).unwrap();
        assert!((est - 0.5).abs() < 0.02, "est = {est}");
    }

    #[test]
    fn degenerate_output_is_an_error() {
        let y = vec![1.0; 50];
        assert!(matches!(
            estimate_index(&y, &y),
            Err(Error::DegenerateOutput)
        ));
    }

    #[test]
    fn ci_contains_one_for_identical_outputs() {
        // y_pf = y: the index is exactly 1 on every resample, and the delta
        // variance cancels analytically, so both intervals degenerate onto 1.
        let y: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        for method in [CiMethod::Bootstrap { resamples: 500 }, CiMethod::Delta] {
            let (lo, hi) = confidence_interval(&y, &y, 0.95, method, 5).unwrap();
            assert!(lo <= 1.0 && hi >= 1.0, "({lo}, {hi})");
            assert!(hi - lo < 1e-6, "width {}", hi - lo);
        }
    }

    #[test]
    fn ci_width_shrinks_with_sample_size() {
        // noisy pair: width must shrink roughly like 1/sqrt(N)
        let mut rng = substream(3, StreamTag::Aux(5), 0);
        let make = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let x: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let z: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let z2: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let y: Vec<f64> = (0..n).map(|i| x[i] + z[i]).collect();
            let y_pf: Vec<f64> = (0..n).map(|i| x[i] + z2[i]).collect();
            (y, y_pf)
        };
        for method in [CiMethod::Bootstrap { resamples: 500 }, CiMethod::Delta] {
            let (ys, yps) = make(500, &mut rng);
            let (yb, ypb) = make(50_000, &mut rng);
            let (lo_s, hi_s) = confidence_interval(&ys, &yps, 0.95, method, 5).unwrap();
            let (lo_b, hi_b) = confidence_interval(&yb, &ypb, 0.95, method, 5).unwrap();
            let ratio = (hi_b - lo_b) / (hi_s - lo_s);
            // 1/sqrt(100) = 0.1; allow wide slack
            assert!(ratio > 0.03 && ratio < 0.3, "ratio {ratio} for {method:?}");
        }
    }

    #[test]
    fn ci_level_validation() {
        let y = vec![0.0; 40];
        assert!(confidence_interval(&y, &y, 1.5, CiMethod::Delta, 0).is_err());
        assert!(confidence_interval(&y[..10], &y[..10], 0.95, CiMethod::Delta, 0).is_err());
    }

    #[test]
    fn bootstrap_and_delta_intervals_overlap_strongly() {
        // method cross-validation on toy model 1 outputs at moderate N
        let m = toy_model();
        let mut opts = EstimateOptions::new(6, 10_000, 99);
        opts.ci_method = CiMethod::Bootstrap { resamples: 1000 };
        let series_b = estimate_series(&m, &ToyLinear, 0, &opts).unwrap();
        opts.ci_method = CiMethod::Delta;
        let series_d = estimate_series(&m, &ToyLinear, 0, &opts).unwrap();
        for t in 0..=6usize {
            let (bl, bh) = (series_b.ci_lo[t], series_b.ci_hi[t]);
            let (dl, dh) = (series_d.ci_lo[t], series_d.ci_hi[t]);
            let inter = (bh.min(dh) - bl.max(dl)).max(0.0);
            let union = bh.max(dh) - bl.min(dl);
            assert!(
                inter / union > 0.5,
                "t={t}: Jaccard {} too small ({bl},{bh}) vs ({dl},{dh})",
                inter / union
            );
        }
    }

    #[test]
    fn plateau_constant_series() {
        let s = vec![0.5; 6];
        assert_eq!(detect_plateau(&s, PlateauParams::default()), Some(0));
    }

    #[test]
    fn plateau_strictly_increasing_is_none() {
        let s: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        assert_eq!(detect_plateau(&s, PlateauParams::default()), None);
    }

    #[test]
    fn plateau_after_rise() {
        let s = vec![0.1, 0.4, 0.5, 0.52, 0.5201, 0.5202, 0.5201, 0.5202];
        assert_eq!(detect_plateau(&s, PlateauParams::default()), Some(3));
    }

    #[test]
    fn plateau_short_series_is_none() {
        assert_eq!(detect_plateau(&[0.5, 0.5], PlateauParams::default()), None);
    }

    #[test]
    fn oracle_pure_x_is_one_and_independent_z_is_zero() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        // Y_t = X_t
        let ex = vec![vec![1.0, 0.0]];
        for t in [0usize, 3, 10] {
            assert_relative_eq!(
                analytic_linear_sobol(&ex, &cov, 0, t).unwrap(),
                1.0,
                epsilon = 1e-10
            );
        }
        // Y_t = Z_t with X independent of Z
        let ind = VarModel::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.3])],
            DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.4]),
        )
        .unwrap();
        let cov_ind = ind.stationary_covariance(1e-12).unwrap();
        let ez = vec![vec![0.0, 1.0]];
        for t in [0usize, 4] {
            assert_relative_eq!(
                analytic_linear_sobol(&ez, &cov_ind, 0, t).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn oracle_toy1_frozen_values() {
        // Values fixed by an independent normal-equations solve of the same
        // quantities (dense linear algebra outside this crate).
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let ex = LinearRecurrenceSpec::toy1().expansion(1e-14).unwrap();
        let expect = [
            (0usize, 0.4240791273),
            (1, 0.5000572541),
            (2, 0.5151809749),
            (3, 0.5179467609),
            (4, 0.5184322799),
            (5, 0.5185163212),
            (20, 0.5185338207),
        ];
        for (t, want) in expect {
            let got = analytic_linear_sobol(&ex, &cov, 0, t).unwrap();
            assert_relative_eq!(got, want, epsilon = 1e-8);
        }
        // t = 0 is the squared-correlation form Cov(Y_0, X_0)^2 / (Var(Y_0) Var(X_0))
        let g0 = cov.gamma0();
        let cov_yx = 0.3 * g0[(0, 0)] + g0[(0, 1)];
        let var_y = 0.09 * g0[(0, 0)] + 0.6 * g0[(0, 1)] + g0[(1, 1)];
        assert_relative_eq!(
            analytic_linear_sobol(&ex, &cov, 0, 0).unwrap(),
            cov_yx * cov_yx / (var_y * g0[(0, 0)]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn oracle_values_in_unit_interval_and_monotone_in_window() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let ex = LinearRecurrenceSpec::toy1().expansion(1e-14).unwrap();
        let t = 20;
        let mut prev = -1.0;
        for k in 0..=20usize {
            let s = analytic_linear_sobol_windowed(&ex, &cov, 0, t, k).unwrap();
            assert!((-1e-12..=1.0 + 1e-12).contains(&s), "S = {s}");
            assert!(s >= prev - 1e-10, "K={k}: {s} < {prev}");
            prev = s;
        }
    }

    struct XOnly;
    impl ModelFunction for XOnly {
        fn name(&self) -> &str {
            "x-only"
        }
        fn arity(&self) -> usize {
            2
        }
        fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch> {
            let n = batch.n_samples();
            let h = batch.horizon();
            let mut data = Vec::with_capacity(n * (h + 1));
            for s in 0..n {
                for t in 0..=h {
                    data.push(batch.value(s, t, 0));
                }
            }
            OutputBatch::new(n, h, data)
        }
    }

    #[test]
    fn series_of_x_only_model_is_one() {
        let m = toy_model();
        let opts = EstimateOptions::new(5, 4000, 3);
        let series = estimate_series(&m, &XOnly, 0, &opts).unwrap();
        for t in 0..=5usize {
            assert!(
                series.ci_lo[t] <= 1.0 && series.ci_hi[t] >= 1.0,
                "t={t}: CI ({}, {}) misses 1",
                series.ci_lo[t],
                series.ci_hi[t]
            );
            assert!((series.estimates[t] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn series_rises_then_flattens_for_toy1() {
        let m = toy_model();
        let opts = EstimateOptions::new(8, 4000, 21);
        let series = estimate_series(&m, &ToyLinear, 0, &opts).unwrap();
        assert!(series.estimates[1] > series.estimates[0]);
        let tail_spread = series.estimates[4..]
            .iter()
            .cloned()
            .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        assert!(tail_spread.1 - tail_spread.0 < 0.08);
    }

    #[test]
    fn series_is_deterministic_in_seed() {
        let m = toy_model();
        let opts = EstimateOptions::new(4, 500, 17);
        let a = estimate_series(&m, &ToyNonlinear, 0, &opts).unwrap();
        let b = estimate_series(&m, &ToyNonlinear, 0, &opts).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.ci_lo, b.ci_lo);
    }

    #[test]
    fn non_finite_output_names_sample_and_time() {
        struct Bad;
        impl ModelFunction for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn arity(&self) -> usize {
                2
            }
            fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch> {
                let n = batch.n_samples();
                let h = batch.horizon();
                let mut data = vec![0.5; n * (h + 1)];
                data[2 * (h + 1) + 1] = f64::NAN;
                OutputBatch::new(n, h, data)
            }
        }
        let m = toy_model();
        let opts = EstimateOptions::new(3, 40, 1);
        let err = estimate_series(&m, &Bad, 0, &opts).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sample 2") && msg.contains("t = 1"), "{msg}");
    }

    #[test]
    fn evaluate_pair_shapes() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 3).unwrap();
        let pair = pickfreeze_pairs(&m, &plan, 64, 5, 100).unwrap();
        let out = evaluate_pair(&ToyLinear, &pair, 0).unwrap();
        assert_eq!(out.y.n_samples(), 64);
        assert_eq!(out.y_pf.horizon(), 3);
    }
}
