//! Stationary Gaussian VAR(p) input processes: validation, companion form,
//! exact lag covariances, and deterministic batched simulation.

use crate::error::{Error, Result};
use crate::streams::{substream, StreamTag};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::sync::Mutex;

/// A model is accepted as stationary iff its companion spectral radius is
/// strictly below `1 - STATIONARITY_MARGIN`.
pub const STATIONARITY_MARGIN: f64 = 1e-9;

/// Negative noise-covariance eigenvalues below this are rejected; smaller
/// ones are clamped to zero.
const PSD_TOL: f64 = 1e-10;

/// A VAR(p) specification: `U_t = mean + sum_l A_l (U_{t-l} - mean) + w_t`,
/// with `w_t ~ N(0, noise_cov)` i.i.d.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    coeffs: Vec<DMatrix<f64>>,
    noise_cov: DMatrix<f64>,
    mean: DVector<f64>,
}

impl VarModel {
    /// Centered model. Validates shapes and that `noise_cov` is symmetric PSD.
    pub fn new(coeffs: Vec<DMatrix<f64>>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let dim = noise_cov.nrows();
        Self::with_mean(coeffs, noise_cov, DVector::zeros(dim))
    }

    pub fn with_mean(
        coeffs: Vec<DMatrix<f64>>,
        noise_cov: DMatrix<f64>,
        mean: DVector<f64>,
    ) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument(
                "a VAR model needs at least one coefficient matrix".into(),
            ));
        }
        let dim = coeffs[0].nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        for (l, a) in coeffs.iter().enumerate() {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dim}x{dim} coefficient matrix at lag {}", l + 1),
                    got: format!("{}x{}", a.nrows(), a.ncols()),
                });
            }
        }
        if noise_cov.nrows() != dim || noise_cov.ncols() != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{dim}x{dim} noise covariance"),
                got: format!("{}x{}", noise_cov.nrows(), noise_cov.ncols()),
            });
        }
        if mean.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("mean of length {dim}"),
                got: format!("{}", mean.len()),
            });
        }
        let asym = (&noise_cov - noise_cov.transpose()).amax();
        if asym > 1e-8 * noise_cov.amax().max(1.0) {
            return Err(Error::NotPositiveSemiDefinite {
                what: "noise covariance (not symmetric)".into(),
                min_eigenvalue: f64::NAN,
            });
        }
        // Reject genuinely indefinite matrices up front; the simulation factor
        // clamps the tiny negative eigenvalues that survive this check.
        let eigs = noise_cov.clone().symmetric_eigen().eigenvalues;
        let min_eig = eigs.min();
        if min_eig < -PSD_TOL {
            return Err(Error::NotPositiveSemiDefinite {
                what: "noise covariance".into(),
                min_eigenvalue: min_eig,
            });
        }
        Ok(VarModel {
            coeffs,
            noise_cov,
            mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Order-1 model of dimension `dim * order` whose top `dim` coordinates
    /// reproduce this process in distribution. Order-1 models are returned
    /// unchanged.
    pub fn companion_form(&self) -> VarModel {
        if self.order() == 1 {
            return self.clone();
        }
        let p = self.dim();
        let d = p * self.order();
        let mut a = DMatrix::zeros(d, d);
        for (l, al) in self.coeffs.iter().enumerate() {
            a.view_mut((0, l * p), (p, p)).copy_from(al);
        }
        for i in 0..d - p {
            a[(p + i, i)] = 1.0;
        }
        let mut theta = DMatrix::zeros(d, d);
        theta.view_mut((0, 0), (p, p)).copy_from(&self.noise_cov);
        let mut mean = DVector::zeros(d);
        for l in 0..self.order() {
            mean.rows_mut(l * p, p).copy_from(&self.mean);
        }
        VarModel {
            coeffs: vec![a],
            noise_cov: theta,
            mean,
        }
    }

    /// Companion transition matrix.
    pub fn companion_matrix(&self) -> DMatrix<f64> {
        self.companion_form().coeffs[0].clone()
    }

    /// Maximum eigenvalue modulus of the companion matrix.
    pub fn spectral_radius(&self) -> Result<f64> {
        let a = self.companion_matrix();
        let schur = a
            .try_schur(1e-14, 10_000)
            .ok_or_else(|| Error::IterationLimit {
                what: "Schur decomposition for the spectral radius".into(),
                max_steps: 10_000,
                residual: f64::NAN,
            })?;
        Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max))
    }

    pub fn is_stationary(&self) -> Result<bool> {
        Ok(self.spectral_radius()? < 1.0 - STATIONARITY_MARGIN)
    }

    fn require_stationary(&self) -> Result<f64> {
        let rho = self.spectral_radius()?;
        if rho >= 1.0 - STATIONARITY_MARGIN {
            return Err(Error::NonStationary {
                spectral_radius: rho,
                limit: 1.0 - STATIONARITY_MARGIN,
            });
        }
        Ok(rho)
    }

    /// Exact stationary lag-covariance structure.
    ///
    /// The zero-lag covariance is obtained from the doubling iteration
    /// `G_{m+1} = G_m + B_m G_m B_m^T`, `B_{m+1} = B_m^2`, starting from
    /// `G_0 = Theta`, `B_0 = A` on the companion form; convergence is
    /// geometric in `rho^(2^m)`. The result is verified against the fixed
    /// point `G = A G A^T + Theta` at tolerance `tol`.
    pub fn stationary_covariance(&self, tol: f64) -> Result<CovarianceStructure> {
        self.require_stationary()?;
        let companion = self.companion_form();
        let a = &companion.coeffs[0];
        let theta = &companion.noise_cov;
        let mut g = theta.clone();
        let mut b = a.clone();
        let mut converged = false;
        for _ in 0..200 {
            let update = &b * &g * b.transpose();
            g += &update;
            if update.norm() < 1e-12 * g.norm().max(1.0) {
                converged = true;
                break;
            }
            b = &b * &b;
        }
        g = (&g + g.transpose()) * 0.5;
        let residual = (a * &g * a.transpose() + theta - &g).norm();
        if !converged || residual >= tol {
            return Err(Error::IterationLimit {
                what: "stationary covariance doubling iteration".into(),
                max_steps: 200,
                residual,
            });
        }
        Ok(CovarianceStructure {
            companion,
            orig_dim: self.dim(),
            lags: Mutex::new(vec![g]),
        })
    }

    /// Simulate `n_samples` trajectories over `t = 0..=horizon`.
    ///
    /// Each sample draws its own RNG substream derived from `(seed, sample)`,
    /// so the output is bit-identical for identical arguments regardless of
    /// thread count. The recursion starts from the zero state `burn_in` steps
    /// before `t = 0`; each step consumes one `dim`-vector of standard
    /// normals (coordinates in order) mapped through a factor `F` with
    /// `F F^T = noise_cov`.
    pub fn simulate(
        &self,
        horizon: usize,
        n_samples: usize,
        seed: u64,
        burn_in: usize,
    ) -> Result<TrajectoryBatch> {
        let rho = self.require_stationary()?;
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        if rho > 0.0 && (burn_in as f64) * (1.0 / rho).ln() < 20.0 {
            log::warn!(
                "slow-mixing model (spectral radius {rho:.4}): burn-in {burn_in} gives only \
                 {:.1} e-folds of decay; consider a longer burn-in",
                burn_in as f64 * (1.0 / rho).ln()
            );
        }
        let p = self.dim();
        let companion = self.companion_form();
        let d = companion.dim();
        // Row-major flat copy of the companion transition for the hot loop.
        let a_flat: Vec<f64> = {
            let a = &companion.coeffs[0];
            (0..d).flat_map(|i| (0..d).map(move |j| a[(i, j)])).collect()
        };
        let factor = noise_factor(&self.noise_cov)?;
        let f_flat: Vec<f64> = (0..p)
            .flat_map(|i| (0..p).map(|j| factor[(i, j)]).collect::<Vec<_>>())
            .collect();
        let mean = self.mean.clone();

        let steps = horizon + 1;
        let mut data = vec![0.0f64; n_samples * steps * p];
        data.par_chunks_mut(steps * p)
            .enumerate()
            .for_each(|(s, out)| {
                let mut rng = substream(seed, StreamTag::Simulate, s as u64);
                let mut state = vec![0.0f64; d];
                let mut next = vec![0.0f64; d];
                let mut eps = vec![0.0f64; p];
                let record = |state: &[f64], t: usize, out: &mut [f64]| {
                    for c in 0..p {
                        out[t * p + c] = state[c] + mean[c];
                    }
                };
                for step in 0..burn_in + horizon {
                    for e in eps.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                    for i in 0..d {
                        let row = &a_flat[i * d..(i + 1) * d];
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += row[j] * state[j];
                        }
                        if i < p {
                            let frow = &f_flat[i * p..(i + 1) * p];
                            for j in 0..p {
                                acc += frow[j] * eps[j];
                            }
                        }
                        next[i] = acc;
                    }
                    std::mem::swap(&mut state, &mut next);
                    if step + 1 == burn_in {
                        record(&state, 0, out);
                    } else if step + 1 > burn_in {
                        record(&state, step + 1 - burn_in, out);
                    }
                }
                if burn_in == 0 {
                    // zero initial state recorded at t = 0
                    record(&vec![0.0; d], 0, out);
                }
            });
        Ok(TrajectoryBatch {
            n_samples,
            horizon,
            dim: p,
            seed,
            data,
        })
    }
}

/// Factor `F` with `F F^T = theta`. Cholesky when positive definite;
/// otherwise a symmetric eigendecomposition with negative eigenvalues below
/// `-1e-10` rejected and smaller ones clamped to zero.
fn noise_factor(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = theta.clone().cholesky() {
        return Ok(chol.unpack());
    }
    let eig = theta.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::NotPositiveSemiDefinite {
            what: "noise covariance".into(),
            min_eigenvalue: min_eig,
        });
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt)
}

/// Stationary lag covariances `Gamma(k) = E(U_t U_{t+k}^T)` of a VAR model,
/// cached as they are requested.
///
/// Orientation: rows index the earlier time. `Gamma(k)[i, j] = E(U_t^i
/// U_{t+k}^j)`; the recursion in companion form is `Gamma(k) = Gamma(k-1)
/// A^T`, equivalently `Gamma(k)^T = A Gamma(k-1)^T`.
#[derive(Debug)]
pub struct CovarianceStructure {
    companion: VarModel,
    orig_dim: usize,
    lags: Mutex<Vec<DMatrix<f64>>>,
}

impl CovarianceStructure {
    /// The model this structure was built from, in companion form.
    pub fn companion(&self) -> &VarModel {
        &self.companion
    }

    pub fn dim(&self) -> usize {
        self.orig_dim
    }

    /// Zero-lag covariance of the original `dim` coordinates.
    pub fn gamma0(&self) -> DMatrix<f64> {
        self.lag(0)
    }

    /// `Gamma(k) = E(U_t U_{t+k}^T)` for the original coordinates.
    pub fn lag(&self, k: usize) -> DMatrix<f64> {
        let p = self.orig_dim;
        self.lag_companion(k).view((0, 0), (p, p)).into_owned()
    }

    fn lag_companion(&self, k: usize) -> DMatrix<f64> {
        let mut cache = self.lags.lock().unwrap();
        while cache.len() <= k {
            let next = cache.last().unwrap() * self.companion.coeffs[0].transpose();
            cache.push(next);
        }
        cache[k].clone()
    }

    /// `Cov(U_a^i, U_b^j)` for arbitrary time pairs of the stationary process.
    pub fn cov_entry(&self, a: usize, i: usize, b: usize, j: usize) -> f64 {
        if b >= a {
            self.lag_entry(b - a, i, j)
        } else {
            self.lag_entry(a - b, j, i)
        }
    }

    fn lag_entry(&self, k: usize, i: usize, j: usize) -> f64 {
        let mut cache = self.lags.lock().unwrap();
        while cache.len() <= k {
            let next = cache.last().unwrap() * self.companion.coeffs[0].transpose();
            cache.push(next);
        }
        cache[k][(i, j)]
    }

    /// Frobenius residual of the defining fixed point, for verification.
    pub fn fixed_point_residual(&self) -> f64 {
        let a = &self.companion.coeffs[0];
        let theta = &self.companion.noise_cov;
        let g = self.lag_companion(0);
        (a * &g * a.transpose() + theta - &g).norm()
    }
}

/// A batch of `n_samples` simulated trajectories over `t = 0..=horizon`,
/// stored sample-major as `[sample][t][coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    n_samples: usize,
    horizon: usize,
    dim: usize,
    seed: u64,
    data: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn from_data(
        n_samples: usize,
        horizon: usize,
        dim: usize,
        seed: u64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_samples * (horizon + 1) * dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", n_samples * (horizon + 1) * dim),
                got: format!("{}", data.len()),
            });
        }
        Ok(TrajectoryBatch {
            n_samples,
            horizon,
            dim,
            seed,
            data,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Largest time index T; the batch covers `t = 0..=T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn value(&self, sample: usize, t: usize, coord: usize) -> f64 {
        self.data[(sample * (self.horizon + 1) + t) * self.dim + coord]
    }

    /// Contiguous `[t][coord]` slice for one sample.
    pub fn sample_path(&self, sample: usize) -> &[f64] {
        let stride = (self.horizon + 1) * self.dim;
        &self.data[sample * stride..(sample + 1) * stride]
    }

    /// All values of one coordinate at a fixed time, across samples.
    pub fn column(&self, t: usize, coord: usize) -> Vec<f64> {
        (0..self.n_samples).map(|s| self.value(s, t, coord)).collect()
    }

    pub fn assert_finite(&self) -> Result<()> {
        let stride = (self.horizon + 1) * self.dim;
        for (idx, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteOutput {
                    sample: idx / stride,
                    t: (idx % stride) / self.dim,
                });
            }
        }
        Ok(())
    }

    /// Copy of the batch restricted to `t = 0..=new_horizon`.
    pub fn truncate(&self, new_horizon: usize) -> TrajectoryBatch {
        assert!(new_horizon <= self.horizon);
        let n = self.n_samples;
        let d = self.dim;
        let steps = new_horizon + 1;
        let mut data = Vec::with_capacity(n * steps * d);
        for s in 0..n {
            let start = s * (self.horizon + 1) * d;
            data.extend_from_slice(&self.data[start..start + steps * d]);
        }
        TrajectoryBatch {
            n_samples: n,
            horizon: new_horizon,
            dim: d,
            seed: self.seed,
            data,
        }
    }
}
