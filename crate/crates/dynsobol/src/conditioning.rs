//! Gaussian conditioning: split the input process into the scalar coordinate
//! of interest `X` and the remainder `Z`, compute the regression matrices that
//! give `E(Z_u | X-window)`, and assemble pick-freezed input pairs.
//!
//! Because the joint law is Gaussian, `W = Z - E(Z | X-window)` is independent
//! of the window, which reduces the dependent-input problem to the classical
//! independent-input pick-and-freeze scheme.
//!
//! Conditioning is on one scalar coordinate at a time. Freezing a vector
//! group of coordinates jointly is a natural extension — the window
//! covariance becomes block Toeplitz and the Levinson recursion generalizes —
//! but is not implemented here.

use crate::error::{Error, Result};
use crate::numeric;
use crate::streams::{derive_seed, StreamTag};
use crate::toeplitz::{solve_spd_dense, JitterPolicy, LevinsonSolver};
use crate::var::{CovarianceStructure, TrajectoryBatch, VarModel};
use nalgebra::{DMatrix, DVector};

/// Where the past-covariance blocks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceSource {
    /// Exact lag covariances implied by the model (default).
    #[default]
    Model,
    /// Sample covariances estimated across the simulated batch.
    Empirical,
}

/// The non-target coordinates, in their original order.
pub fn z_coords(dim: usize, target_coord: usize) -> Vec<usize> {
    (0..dim).filter(|&c| c != target_coord).collect()
}

/// Past-covariance blocks of the conditioning problem at window `0..=t`:
/// `gxx[s, v] = Cov(X_s, X_v)` — symmetric Toeplitz — and
/// `gxz[s, v*(p-1)+j] = Cov(X_s, Z^j_v)` with time-outer, component-inner
/// column blocks.
pub fn build_past_covariances(
    cov: &CovarianceStructure,
    target_coord: usize,
    t: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = cov.dim();
    let zc = z_coords(p, target_coord);
    let gxx = DMatrix::from_fn(t + 1, t + 1, |s, v| {
        cov.cov_entry(s, target_coord, v, target_coord)
    });
    let gxz = DMatrix::from_fn(t + 1, (p - 1) * (t + 1), |s, col| {
        let v = col / (p - 1);
        let j = col % (p - 1);
        cov.cov_entry(s, target_coord, v, zc[j])
    });
    (gxx, gxz)
}

/// Empirical counterpart of [`build_past_covariances`], estimated across the
/// samples of a batch (means subtracted, 1/N normalization).
pub fn empirical_past_covariances(
    batch: &TrajectoryBatch,
    target_coord: usize,
    t: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = batch.dim();
    let n = batch.n_samples();
    let zc = z_coords(p, target_coord);
    let centered = |time: usize, coord: usize| -> Vec<f64> {
        let col = batch.column(time, coord);
        let m = numeric::mean(&col);
        col.into_iter().map(|v| v - m).collect()
    };
    let x: Vec<Vec<f64>> = (0..=t).map(|s| centered(s, target_coord)).collect();
    let z: Vec<Vec<f64>> = (0..=t)
        .flat_map(|v| zc.iter().map(move |&c| (v, c)))
        .map(|(v, c)| centered(v, c))
        .collect();
    let dot = |a: &[f64], b: &[f64]| numeric::sum_by(n, |i| a[i] * b[i]) / n as f64;
    let gxx = DMatrix::from_fn(t + 1, t + 1, |s, v| dot(&x[s], &x[v]));
    let gxz = DMatrix::from_fn(t + 1, (p - 1) * (t + 1), |s, col| dot(&x[s], &z[col]));
    (gxx, gxz)
}

/// Solve `gxx * lambda = gxz` by symmetric dense factorization.
///
/// This is the reference path; [`DecompositionPlan`] uses the Toeplitz
/// recursion when the covariances are model-implied. A non-positive-definite
/// `gxx` violates the full-rank hypothesis on the input trajectory and fails,
/// unless the policy permits a stabilizing `eps * I`.
pub fn compute_lambda(
    gxx: &DMatrix<f64>,
    gxz: &DMatrix<f64>,
    policy: JitterPolicy,
) -> Result<DMatrix<f64>> {
    if gxx.nrows() != gxz.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", gxx.nrows()),
            got: format!("{}", gxz.nrows()),
        });
    }
    solve_spd_dense(gxx, gxz, policy, gxx.nrows().saturating_sub(1))
}

/// Per-horizon regression matrices for one target coordinate.
///
/// `lambda_full(t)` maps the (centered) window `X_0..X_t` to the conditional
/// means of every `Z^j_v`, `v <= t`, with the same time-outer /
/// component-inner column layout as [`build_past_covariances`]. The plan is
/// immutable after construction and shared across samples.
#[derive(Debug, Clone)]
pub struct DecompositionPlan {
    target_coord: usize,
    horizon: usize,
    dim: usize,
    mean: DVector<f64>,
    source: CovarianceSource,
    lambdas: Vec<DMatrix<f64>>,
}

impl DecompositionPlan {
    /// Build from exact model-implied covariances, solving the Toeplitz
    /// systems with the shared Levinson recursion.
    pub fn from_model(
        model: &VarModel,
        cov: &CovarianceStructure,
        target_coord: usize,
        horizon: usize,
    ) -> Result<Self> {
        let p = cov.dim();
        check_target(p, target_coord)?;
        let zc = z_coords(p, target_coord);
        let autocov: Vec<f64> = (0..=horizon)
            .map(|k| cov.cov_entry(0, target_coord, k, target_coord))
            .collect();
        let solver = LevinsonSolver::new(&autocov)?;
        let mut lambdas = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let mut lam = DMatrix::zeros(t + 1, (p - 1) * (t + 1));
            let mut rhs = vec![0.0f64; t + 1];
            for v in 0..=t {
                for (j, &c) in zc.iter().enumerate() {
                    for (s, r) in rhs.iter_mut().enumerate() {
                        *r = cov.cov_entry(s, target_coord, v, c);
                    }
                    let x = solver.solve_window(t + 1, &rhs);
                    let col = v * (p - 1) + j;
                    for s in 0..=t {
                        lam[(s, col)] = x[s];
                    }
                }
            }
            lambdas.push(lam);
        }
        Ok(DecompositionPlan {
            target_coord,
            horizon,
            dim: p,
            mean: model.mean().clone(),
            source: CovarianceSource::Model,
            lambdas,
        })
    }

    /// Build from sample covariances of a simulated batch (dense solves; the
    /// empirical matrices are not exactly Toeplitz).
    pub fn from_batch(
        model: &VarModel,
        batch: &TrajectoryBatch,
        target_coord: usize,
        policy: JitterPolicy,
    ) -> Result<Self> {
        let p = batch.dim();
        check_target(p, target_coord)?;
        let horizon = batch.horizon();
        let (gxx, gxz) = empirical_past_covariances(batch, target_coord, horizon);
        let mut lambdas = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let gxx_t = gxx.view((0, 0), (t + 1, t + 1)).into_owned();
            let mut gxz_t = DMatrix::zeros(t + 1, (p - 1) * (t + 1));
            for v in 0..=t {
                for j in 0..p - 1 {
                    let col = v * (p - 1) + j;
                    for s in 0..=t {
                        gxz_t[(s, col)] = gxz[(s, col)];
                    }
                }
            }
            lambdas.push(compute_lambda(&gxx_t, &gxz_t, policy)?);
        }
        Ok(DecompositionPlan {
            target_coord,
            horizon,
            dim: p,
            mean: model.mean().clone(),
            source: CovarianceSource::Empirical,
            lambdas,
        })
    }

    pub fn target_coord(&self) -> usize {
        self.target_coord
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> CovarianceSource {
        self.source
    }

    /// Full regression matrix at window `0..=t`: `(t+1) x ((p-1)(t+1))`.
    pub fn lambda_full(&self, t: usize) -> &DMatrix<f64> {
        &self.lambdas[t]
    }

    /// Regression weights for the current time only: the `(t+1) x (p-1)`
    /// block predicting `Z_t` from `X_0..X_t`.
    pub fn lambda_current(&self, t: usize) -> DMatrix<f64> {
        let p1 = self.dim - 1;
        self.lambdas[t].view((0, t * p1), (t + 1, p1)).into_owned()
    }

    /// Conditional mean `E(Z_u | X_0..X_T)` for every `u <= T`, in original
    /// units, for each sample of a scalar batch holding the `X` coordinate.
    pub fn conditional_mean(&self, x: &TrajectoryBatch) -> Result<TrajectoryBatch> {
        if x.dim() != 1 || x.horizon() != self.horizon {
            return Err(Error::ShapeMismatch {
                expected: format!("scalar batch over 0..={}", self.horizon),
                got: format!("dim {} over 0..={}", x.dim(), x.horizon()),
            });
        }
        self.conditional_mean_window(self.horizon, x)
    }

    /// Same as [`Self::conditional_mean`] but conditioning on the window
    /// `X_0..X_t` only; the output covers `u = 0..=t`.
    pub fn conditional_mean_window(
        &self,
        t: usize,
        x: &TrajectoryBatch,
    ) -> Result<TrajectoryBatch> {
        if t > self.horizon || x.horizon() < t || x.dim() != 1 {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "scalar batch covering 0..={t} (plan horizon {})",
                    self.horizon
                ),
                got: format!("dim {} over 0..={}", x.dim(), x.horizon()),
            });
        }
        let p1 = self.dim - 1;
        let zc = z_coords(self.dim, self.target_coord);
        let mean_x = self.mean[self.target_coord];
        let lam = &self.lambdas[t];
        let n = x.n_samples();
        let mut out = vec![0.0f64; n * (t + 1) * p1];
        let mut xc = vec![0.0f64; t + 1];
        for s in 0..n {
            for (u, v) in xc.iter_mut().enumerate() {
                *v = x.value(s, u, 0) - mean_x;
            }
            let base = s * (t + 1) * p1;
            for u in 0..=t {
                for j in 0..p1 {
                    let col = u * p1 + j;
                    let mut acc = 0.0;
                    for (sw, &xv) in xc.iter().enumerate() {
                        acc += lam[(sw, col)] * xv;
                    }
                    out[base + u * p1 + j] = acc + self.mean[zc[j]];
                }
            }
        }
        TrajectoryBatch::from_data(n, t, p1, x.seed(), out)
    }
}

fn check_target(dim: usize, target_coord: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "conditioning needs at least two coordinates".into(),
        ));
    }
    if target_coord >= dim {
        return Err(Error::InvalidArgument(format!(
            "target coordinate {target_coord} out of range for dimension {dim}"
        )));
    }
    Ok(())
}

/// Split one coordinate out of a batch: `(x, z)` with `x` scalar and `z`
/// holding the remaining `p - 1` coordinates in their original order.
pub fn split_target(
    batch: &TrajectoryBatch,
    target_coord: usize,
) -> Result<(TrajectoryBatch, TrajectoryBatch)> {
    check_target(batch.dim(), target_coord)?;
    let p = batch.dim();
    let zc = z_coords(p, target_coord);
    let n = batch.n_samples();
    let steps = batch.horizon() + 1;
    let mut x = vec![0.0f64; n * steps];
    let mut z = vec![0.0f64; n * steps * (p - 1)];
    for s in 0..n {
        for t in 0..steps {
            x[s * steps + t] = batch.value(s, t, target_coord);
            for (j, &c) in zc.iter().enumerate() {
                z[(s * steps + t) * (p - 1) + j] = batch.value(s, t, c);
            }
        }
    }
    Ok((
        TrajectoryBatch::from_data(n, batch.horizon(), 1, batch.seed(), x)?,
        TrajectoryBatch::from_data(n, batch.horizon(), p - 1, batch.seed(), z)?,
    ))
}

/// Interleave a scalar `x` batch and a `(p-1)`-dim `z` batch back into a
/// full `p`-dim input batch with `x` at `target_coord`.
pub fn merge_target(
    x: &TrajectoryBatch,
    z: &TrajectoryBatch,
    target_coord: usize,
) -> Result<TrajectoryBatch> {
    if x.n_samples() != z.n_samples() || x.horizon() != z.horizon() || x.dim() != 1 {
        return Err(Error::ShapeMismatch {
            expected: "matching scalar x and z batches".into(),
            got: format!(
                "x: {}x{}x{}, z: {}x{}x{}",
                x.n_samples(),
                x.horizon() + 1,
                x.dim(),
                z.n_samples(),
                z.horizon() + 1,
                z.dim()
            ),
        });
    }
    let p = z.dim() + 1;
    let zc = z_coords(p, target_coord);
    let n = x.n_samples();
    let steps = x.horizon() + 1;
    let mut data = vec![0.0f64; n * steps * p];
    for s in 0..n {
        for t in 0..steps {
            data[(s * steps + t) * p + target_coord] = x.value(s, t, 0);
            for (j, &c) in zc.iter().enumerate() {
                data[(s * steps + t) * p + c] = z.value(s, t, j);
            }
        }
    }
    TrajectoryBatch::from_data(n, x.horizon(), p, x.seed(), data)
}

/// `W = Z - X_tilde`, elementwise.
pub fn decompose(z: &TrajectoryBatch, x_tilde: &TrajectoryBatch) -> Result<TrajectoryBatch> {
    if z.n_samples() != x_tilde.n_samples()
        || z.horizon() != x_tilde.horizon()
        || z.dim() != x_tilde.dim()
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", z.n_samples(), z.horizon() + 1, z.dim()),
            got: format!(
                "{}x{}x{}",
                x_tilde.n_samples(),
                x_tilde.horizon() + 1,
                x_tilde.dim()
            ),
        });
    }
    let n = z.n_samples();
    let steps = z.horizon() + 1;
    let d = z.dim();
    let mut data = vec![0.0f64; n * steps * d];
    for s in 0..n {
        for t in 0..steps {
            for c in 0..d {
                data[(s * steps + t) * d + c] = z.value(s, t, c) - x_tilde.value(s, t, c);
            }
        }
    }
    TrajectoryBatch::from_data(n, z.horizon(), d, z.seed(), data)
}

/// A pick-freezed input pair at the plan's full horizon: the frozen
/// coordinate `x`, the original remainder `z`, and the replication
/// `z_pf = E(Z_1|X_1-window) + (Z_2 - E(Z_2|X_2-window))`.
#[derive(Debug, Clone)]
pub struct PickFreezePair {
    pub x: TrajectoryBatch,
    pub z: TrajectoryBatch,
    pub z_pf: TrajectoryBatch,
    pub seed_pair: (u64, u64),
}

/// Simulate two independent batches and assemble the pick-freezed pair at the
/// plan's full horizon. Deterministic in `seed`.
pub fn pickfreeze_pairs(
    model: &VarModel,
    plan: &DecompositionPlan,
    n_samples: usize,
    seed: u64,
    burn_in: usize,
) -> Result<PickFreezePair> {
    let seed1 = derive_seed(seed, StreamTag::Replica1);
    let seed2 = derive_seed(seed, StreamTag::Replica2);
    let batch1 = model.simulate(plan.horizon(), n_samples, seed1, burn_in)?;
    let batch2 = model.simulate(plan.horizon(), n_samples, seed2, burn_in)?;
    let (x1, z1) = split_target(&batch1, plan.target_coord())?;
    let (x2, z2) = split_target(&batch2, plan.target_coord())?;
    let xt1 = plan.conditional_mean(&x1)?;
    let xt2 = plan.conditional_mean(&x2)?;
    let w2 = decompose(&z2, &xt2)?;
    let mut z_pf = xt1;
    add_in_place(&mut z_pf, &w2);
    Ok(PickFreezePair {
        x: x1,
        z: z1,
        z_pf,
        seed_pair: (seed1, seed2),
    })
}

pub(crate) fn add_in_place(a: &mut TrajectoryBatch, b: &TrajectoryBatch) {
    debug_assert_eq!(a.n_samples(), b.n_samples());
    debug_assert_eq!(a.horizon(), b.horizon());
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.n_samples();
    let steps = a.horizon() + 1;
    let d = a.dim();
    let mut data = Vec::with_capacity(n * steps * d);
    for s in 0..n {
        for t in 0..steps {
            for c in 0..d {
                data.push(a.value(s, t, c) + b.value(s, t, c));
            }
        }
    }
    *a = TrajectoryBatch::from_data(n, a.horizon(), d, a.seed(), data).unwrap();
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn toy_model() -> VarModel {
        VarModel::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.8, 0.4, 0.1, 0.2])],
            DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap()
    }

    fn block_independent_model() -> VarModel {
        VarModel::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.3])],
            DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.4]),
        )
        .unwrap()
    }

    #[test]
    fn past_covariances_at_t0() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let (gxx, gxz) = build_past_covariances(&cov, 0, 0);
        assert_relative_eq!(gxx[(0, 0)], 0.4217, epsilon = 5e-5);
        assert_relative_eq!(gxz[(0, 0)], 0.0532, epsilon = 5e-5);
    }

    #[test]
    fn past_covariance_is_toeplitz() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let (gxx, _) = build_past_covariances(&cov, 0, 6);
        for s in 0..=6usize {
            for v in 0..=6usize {
                assert_relative_eq!(gxx[(s, v)], gxx[(v.abs_diff(s), 0)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn independent_inputs_have_zero_cross_covariance() {
        let m = block_independent_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let (_, gxz) = build_past_covariances(&cov, 0, 5);
        assert_eq!(gxz.amax(), 0.0);
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 5).unwrap();
        for t in 0..=5 {
            assert_eq!(plan.lambda_full(t).amax(), 0.0);
        }
    }

    #[test]
    fn lambda_at_t0_is_covariance_ratio() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 0).unwrap();
        let lam = plan.lambda_current(0);
        // Cov(X_0, Z_0) / Var(X_0) from the exact stationary covariance
        let g0 = cov.gamma0();
        assert_relative_eq!(lam[(0, 0)], g0[(0, 1)] / g0[(0, 0)], epsilon = 1e-12);
        assert_relative_eq!(lam[(0, 0)], 0.126271186441, epsilon = 1e-9);
    }

    #[test]
    fn lambda_current_slice_matches_exact_solve() {
        // Exact regression of Z_4 on X_0..X_4 for the toy model, frozen from
        // an independent dense solve of the 5x5 Toeplitz system.
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 4).unwrap();
        let lam = plan.lambda_current(4);
        let expected = [
            0.000326061141,
            0.001630305707,
            0.009494900437,
            0.055339096916,
            0.071067819383,
        ];
        for (s, &e) in expected.iter().enumerate() {
            assert_relative_eq!(lam[(s, 0)], e, epsilon = 1e-9);
        }
        // and the dense reference path agrees with the Toeplitz fast path
        let (gxx, gxz) = build_past_covariances(&cov, 0, 4);
        let dense = compute_lambda(&gxx, &gxz, JitterPolicy::Reject).unwrap();
        assert!((plan.lambda_full(4) - &dense).amax() < 1e-10);
    }

    #[test]
    fn compute_lambda_zero_rhs_is_zero() {
        let gxx = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let gxz = DMatrix::zeros(2, 2);
        let lam = compute_lambda(&gxx, &gxz, JitterPolicy::Reject).unwrap();
        assert_eq!(lam.amax(), 0.0);
    }

    #[test]
    fn compute_lambda_rejects_singular_by_default() {
        let gxx = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let gxz = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let err = compute_lambda(&gxx, &gxz, JitterPolicy::Reject).unwrap_err();
        assert!(err.to_string().contains("full-rank"));
        // opt-in stabilization solves
        let lam = compute_lambda(&gxx, &gxz, JitterPolicy::Stabilize).unwrap();
        assert!(lam.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conditional_mean_zero_lambda_and_zero_input() {
        let m = block_independent_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 3).unwrap();
        // zero lambda: X_tilde is the (zero) mean whatever x is
        let x = TrajectoryBatch::from_data(2, 3, 1, 0, vec![1.0; 8]).unwrap();
        let xt = plan.conditional_mean(&x).unwrap();
        assert!(xt.sample_path(0).iter().all(|&v| v == 0.0));
        // zero input: linearity gives zero for any plan
        let m2 = toy_model();
        let cov2 = m2.stationary_covariance(1e-12).unwrap();
        let plan2 = DecompositionPlan::from_model(&m2, &cov2, 0, 3).unwrap();
        let x0 = TrajectoryBatch::from_data(2, 3, 1, 0, vec![0.0; 8]).unwrap();
        let xt2 = plan2.conditional_mean(&x0).unwrap();
        assert!(xt2.sample_path(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decompose_identity_and_variance_split() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let t = 4;
        let plan = DecompositionPlan::from_model(&m, &cov, 0, t).unwrap();
        let n = 100_000;
        let batch = m.simulate(t, n, 31, 200).unwrap();
        let (x, z) = split_target(&batch, 0).unwrap();
        let xt = plan.conditional_mean(&x).unwrap();
        let w = decompose(&z, &xt).unwrap();
        // row-by-row identity W = Z - X_tilde
        for s in [0usize, 17, n - 1] {
            for u in 0..=t {
                assert_eq!(w.value(s, u, 0), z.value(s, u, 0) - xt.value(s, u, 0));
            }
        }
        // law of total variance under the Gaussian projection:
        // Var(Z_u) = Var(X_tilde_u) + Var(W_u)
        for u in 0..=t {
            let zu = z.column(u, 0);
            let xu = xt.column(u, 0);
            let wu = w.column(u, 0);
            let var = |v: &Vec<f64>| {
                let m = numeric::mean(v);
                numeric::sum_by(v.len(), |i| (v[i] - m).powi(2)) / (v.len() as f64 - 1.0)
            };
            let (vz, vx, vw) = (var(&zu), var(&xu), var(&wu));
            let se = (vz + vx + vw) * (2.0 / n as f64).sqrt();
            assert!(
                (vz - vx - vw).abs() < 4.0 * se,
                "u={u}: Var(Z)={vz}, Var(Xt)={vx}, Var(W)={vw}"
            );
        }
    }

    #[test]
    fn orthogonality_of_residuals() {
        // population Cov(X_s, W_u) = 0 for all s, u in the window; empirical
        // check at 4 standard errors
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let t = 5;
        let plan = DecompositionPlan::from_model(&m, &cov, 0, t).unwrap();
        let n = 20_000;
        let batch = m.simulate(t, n, 99, 200).unwrap();
        let (x, z) = split_target(&batch, 0).unwrap();
        let xt = plan.conditional_mean(&x).unwrap();
        let w = decompose(&z, &xt).unwrap();
        for s in 0..=t {
            for u in 0..=t {
                let xs = x.column(s, 0);
                let wu = w.column(u, 0);
                let (c, se) = numeric::cov_with_se(&xs, &wu);
                assert!(
                    c.abs() < 4.0 * se,
                    "Cov(X_{s}, W_{u}) = {c} exceeds 4 SE = {}",
                    4.0 * se
                );
            }
        }
    }

    #[test]
    fn pickfreeze_independent_case_reduces_to_classical() {
        let m = block_independent_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 4).unwrap();
        let pair = pickfreeze_pairs(&m, &plan, 50, 7, 100).unwrap();
        // Lambda = 0 exactly, so z_pf must be the second replicate's Z, bit for bit
        let batch2 = m
            .simulate(4, 50, derive_seed(7, StreamTag::Replica2), 100)
            .unwrap();
        let (_, z2) = split_target(&batch2, 0).unwrap();
        for s in 0..50 {
            assert_eq!(pair.z_pf.sample_path(s), z2.sample_path(s));
        }
    }

    #[test]
    fn pickfreeze_same_seed_is_identical() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let plan = DecompositionPlan::from_model(&m, &cov, 0, 3).unwrap();
        let a = pickfreeze_pairs(&m, &plan, 20, 11, 100).unwrap();
        let b = pickfreeze_pairs(&m, &plan, 20, 11, 100).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.z_pf, b.z_pf);
    }

    #[test]
    fn pickfreeze_preserves_marginal_second_order_structure() {
        // (X_1, X_tilde_1 + W_2) must match (X_1, Z_1) in covariance
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let t = 3;
        let plan = DecompositionPlan::from_model(&m, &cov, 0, t).unwrap();
        let n = 100_000;
        let pair = pickfreeze_pairs(&m, &plan, n, 13, 200).unwrap();
        for u in 0..=t {
            for v in 0..=t {
                let xu = pair.x.column(u, 0);
                let zpf = pair.z_pf.column(v, 0);
                let z = pair.z.column(v, 0);
                let (c_pf, se1) = numeric::cov_with_se(&xu, &zpf);
                let (c_z, se2) = numeric::cov_with_se(&xu, &z);
                let se = (se1 * se1 + se2 * se2).sqrt();
                assert!(
                    (c_pf - c_z).abs() < 4.0 * se,
                    "Cov(X_{u}, Zpf_{v}) = {c_pf} vs Cov(X_{u}, Z_{v}) = {c_z}"
                );
            }
        }
    }

    #[test]
    fn empirical_plan_close_to_model_plan() {
        let m = toy_model();
        let cov = m.stationary_covariance(1e-12).unwrap();
        let t = 3;
        let model_plan = DecompositionPlan::from_model(&m, &cov, 0, t).unwrap();
        let batch = m.simulate(t, 200_000, 3, 200).unwrap();
        let emp_plan = DecompositionPlan::from_batch(&m, &batch, 0, JitterPolicy::Reject).unwrap();
        let d = (model_plan.lambda_full(t) - emp_plan.lambda_full(t)).amax();
        assert!(d < 0.05, "max deviation {d}");
    }
}
