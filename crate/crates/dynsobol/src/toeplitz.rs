//! Levinson-Durbin solver for symmetric positive definite Toeplitz systems.
//!
//! The past covariance of a stationary scalar coordinate over a time window is
//! symmetric Toeplitz, so the regression systems of the conditioning step can
//! be solved in O(n^2) instead of O(n^3). The recursion is built once at the
//! largest window size; the order-m prediction filters it produces are exactly
//! the ones needed for every smaller window, so growing-window solves share
//! the factorization.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Factorization of a symmetric PD Toeplitz family `T_m[i,j] = r[|i-j|]`,
/// usable for every window size `m <= r.len()`.
#[derive(Debug, Clone)]
pub struct LevinsonSolver {
    autocov: Vec<f64>,
    /// `filters[m-1]` is the order-m Yule-Walker filter (length m), m = 1..n-1.
    filters: Vec<Vec<f64>>,
    /// `betas[m]` is the order-m prediction error variance, m = 0..n-1.
    betas: Vec<f64>,
}

impl LevinsonSolver {
    /// Build the recursion from the autocovariance sequence `r[0..n]`.
    ///
    /// Fails if any leading principal minor is numerically non-positive,
    /// which means the Toeplitz matrix is not positive definite.
    pub fn new(autocov: &[f64]) -> Result<Self> {
        let n = autocov.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "empty autocovariance sequence".into(),
            ));
        }
        let r = autocov;
        if r[0] <= 0.0 {
            return Err(Error::FullRankViolated {
                t: 0,
                detail: format!("variance {} is not positive", r[0]),
            });
        }
        let mut filters: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
        let mut betas = Vec::with_capacity(n);
        betas.push(r[0]);
        if n > 1 {
            let y1 = -r[1] / r[0];
            filters.push(vec![y1]);
            betas.push(r[0] * (1.0 - y1 * y1));
        }
        for m in 1..n.saturating_sub(1) {
            let beta = betas[m];
            if beta <= 0.0 || !beta.is_finite() {
                return Err(Error::FullRankViolated {
                    t: m,
                    detail: format!("prediction error variance {beta} at order {m}"),
                });
            }
            let y = &filters[m - 1];
            let mut acc = r[m + 1];
            for (j, yj) in y.iter().enumerate() {
                acc += r[m - j] * yj;
            }
            let alpha = -acc / beta;
            let mut next = Vec::with_capacity(m + 1);
            for j in 0..m {
                next.push(y[j] + alpha * y[m - 1 - j]);
            }
            next.push(alpha);
            filters.push(next);
            betas.push(beta * (1.0 - alpha * alpha));
        }
        let last = *betas.last().unwrap();
        if last <= 0.0 || !last.is_finite() {
            return Err(Error::FullRankViolated {
                t: n - 1,
                detail: format!("prediction error variance {last} at order {}", n - 1),
            });
        }
        Ok(LevinsonSolver {
            autocov: autocov.to_vec(),
            filters,
            betas,
        })
    }

    pub fn dim(&self) -> usize {
        self.autocov.len()
    }

    /// Solve `T_m x = b` for the leading `m x m` window, `b.len() == m`.
    pub fn solve_window(&self, m: usize, b: &[f64]) -> Vec<f64> {
        assert!(m >= 1 && m <= self.dim(), "window {m} out of range");
        assert_eq!(b.len(), m, "rhs length mismatch");
        let r = &self.autocov;
        let mut x = vec![0.0f64; m];
        x[0] = b[0] / r[0];
        for k in 1..m {
            // extend the order-k solution to order k+1
            let mut acc = b[k];
            for j in 0..k {
                acc -= r[k - j] * x[j];
            }
            let mu = acc / self.betas[k];
            let y = &self.filters[k - 1];
            for j in 0..k {
                x[j] += mu * y[k - 1 - j];
            }
            x[k] = mu;
        }
        x
    }

    /// Solve at the full size.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_window(self.dim(), b)
    }

    /// Dense representation of the window, for the reference path and tests.
    pub fn dense(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |i, j| self.autocov[i.abs_diff(j)])
    }
}

/// Policy for nearly singular symmetric systems in the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterPolicy {
    /// Fail, naming the violated full-rank hypothesis.
    #[default]
    Reject,
    /// Retry once with `eps * I`, `eps = 1e-10 * trace / dim`, and log a warning.
    Stabilize,
}

/// Dense symmetric positive definite solve (Cholesky), the reference path the
/// Toeplitz recursion is checked against. `rhs` may have several columns.
pub fn solve_spd_dense(
    mat: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    policy: JitterPolicy,
    t: usize,
) -> Result<DMatrix<f64>> {
    debug_assert_eq!(mat.nrows(), mat.ncols());
    match mat.clone().cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => match policy {
            JitterPolicy::Reject => Err(Error::FullRankViolated {
                t,
                detail: "Cholesky factorization failed".into(),
            }),
            JitterPolicy::Stabilize => {
                let eps = 1e-10 * mat.trace() / mat.nrows() as f64;
                log::warn!(
                    "covariance window 0..={t} nearly singular; stabilizing with eps = {eps:e}"
                );
                let jittered = mat + DMatrix::identity(mat.nrows(), mat.ncols()) * eps;
                jittered
                    .cholesky()
                    .map(|c| c.solve(rhs))
                    .ok_or(Error::FullRankViolated {
                        t,
                        detail: "Cholesky failed even after stabilization".into(),
                    })
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_system() {
        let s = LevinsonSolver::new(&[1.0, 0.0, 0.0]).unwrap();
        let x = s.solve(&[3.0, -1.0, 2.0]);
        assert_eq!(x, vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn two_by_two_hand_check() {
        // [[2, 1], [1, 2]] x = [1, 0]  =>  x = (2/3, -1/3)
        let s = LevinsonSolver::new(&[2.0, 1.0]).unwrap();
        let x = s.solve(&[1.0, 0.0]);
        assert_relative_eq!(x[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], -1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn agrees_with_dense_cholesky() {
        let r = [1.0, 0.6, 0.36, 0.216, 0.1296];
        let s = LevinsonSolver::new(&r).unwrap();
        let b = [0.3, -0.7, 1.1, 0.2, -0.4];
        let x = s.solve(&b);
        let dense = s.dense(5);
        let rhs = DMatrix::from_column_slice(5, 1, &b);
        let want = solve_spd_dense(&dense, &rhs, JitterPolicy::Reject, 4).unwrap();
        for i in 0..5 {
            assert_relative_eq!(x[i], want[(i, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn window_solutions_match_truncated_systems() {
        let r = [1.0, 0.85, 0.7, 0.55, 0.42, 0.3];
        let s = LevinsonSolver::new(&r).unwrap();
        let b = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        for m in 1..=6 {
            let x = s.solve_window(m, &b[..m]);
            let fresh = LevinsonSolver::new(&r[..m]).unwrap().solve(&b[..m]);
            for i in 0..m {
                assert_relative_eq!(x[i], fresh[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_positive_definite() {
        // r_1 > r_0 makes the 2x2 minor negative.
        let err = LevinsonSolver::new(&[1.0, 1.5]).unwrap_err();
        assert!(matches!(err, Error::FullRankViolated { .. }));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        // Random SPD Toeplitz systems up to dimension 256: the fast path must
        // agree with the dense factorization to 1e-8 relative.
        #[test]
        fn levinson_matches_dense_on_random_spd(
            n in 1usize..=256,
            rho in -0.95f64..0.95,
            w in 0.05f64..2.0,
            freq in 0.1f64..3.0,
            seed in 0u64..1000,
        ) {
            // Autocovariance of an AR(1) plus a positive cosine component plus
            // a ridge: a valid spectral density, hence PD.
            let r: Vec<f64> = (0..n)
                .map(|k| rho.powi(k as i32) + w * (freq * k as f64).cos() * 0.9f64.powi(k as i32)
                    + if k == 0 { 0.5 } else { 0.0 })
                .collect();
            let solver = match LevinsonSolver::new(&r) {
                Ok(s) => s,
                Err(_) => return Ok(()), // numerically indefinite corner; skip
            };
            let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            let b: Vec<f64> = (0..n).map(|_| {
                state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            }).collect();
            let x = solver.solve(&b);
            let dense = solver.dense(n);
            let rhs = DMatrix::from_column_slice(n, 1, &b);
            let want = solve_spd_dense(&dense, &rhs, JitterPolicy::Reject, n - 1).unwrap();
            let scale = want.amax().max(1e-30);
            for i in 0..n {
                proptest::prop_assert!(
                    (x[i] - want[(i, 0)]).abs() <= 1e-8 * scale,
                    "component {} differs: {} vs {}", i, x[i], want[(i, 0)]
                );
            }
        }
    }
}
