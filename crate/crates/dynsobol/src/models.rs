//! Built-in scalar output models behind a uniform batch interface.
//!
//! Models are deterministic and causal: the output at time `t` depends only
//! on inputs at times `<= t`. The estimator relies on both properties.

use crate::error::{Error, Result};
use crate::var::TrajectoryBatch;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Scalar outputs for a batch: `n_samples x (horizon + 1)`, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBatch {
    n_samples: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl OutputBatch {
    pub fn new(n_samples: usize, horizon: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_samples * (horizon + 1) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} outputs", n_samples * (horizon + 1)),
                got: format!("{}", data.len()),
            });
        }
        Ok(OutputBatch {
            n_samples,
            horizon,
            data,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn value(&self, sample: usize, t: usize) -> f64 {
        self.data[sample * (self.horizon + 1) + t]
    }

    /// All samples' outputs at one time.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.n_samples).map(|s| self.value(s, t)).collect()
    }

    /// Error naming the first non-finite (sample, t), if any.
    pub fn check_finite(&self) -> Result<()> {
        for s in 0..self.n_samples {
            for t in 0..=self.horizon {
                if !self.value(s, t).is_finite() {
                    return Err(Error::NonFiniteOutput { sample: s, t });
                }
            }
        }
        Ok(())
    }
}

/// A deterministic, causal output model evaluated on whole input batches.
pub trait ModelFunction: Send + Sync {
    fn name(&self) -> &str;
    /// Expected input dimension `p`.
    fn arity(&self) -> usize;
    /// Initial output state consumed by recursive models (e.g. the output
    /// values just before `t = 0`), if the model declares one.
    fn init(&self) -> Option<&[f64]> {
        None
    }
    fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch>;

    /// Finite linear-combination form `Y_t = sum_k c_k . U_{t-k}`, if the
    /// model is linear: coefficient vectors indexed by lag. Enables the exact
    /// variance oracle.
    fn linear_expansion(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

fn check_arity(expected: usize, batch: &TrajectoryBatch) -> Result<()> {
    if batch.dim() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("input dimension {expected}"),
            got: format!("{}", batch.dim()),
        });
    }
    Ok(())
}

/// `Y_t = 0.2 Y_{t-1} + 0.3 X_t + Z_t`, `Y_{-1} = 0`, for 2-dimensional
/// inputs `(X, Z)`.
#[derive(Debug, Clone, Default)]
pub struct ToyLinear;

impl ModelFunction for ToyLinear {
    fn name(&self) -> &str {
        "toy1"
    }

    fn arity(&self) -> usize {
        2
    }

    fn init(&self) -> Option<&[f64]> {
        Some(&[0.0])
    }

    fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch> {
        check_arity(2, batch)?;
        let n = batch.n_samples();
        let horizon = batch.horizon();
        let mut data = Vec::with_capacity(n * (horizon + 1));
        for s in 0..n {
            let mut prev = 0.0;
            for t in 0..=horizon {
                let y = 0.2 * prev + 0.3 * batch.value(s, t, 0) + batch.value(s, t, 1);
                data.push(y);
                prev = y;
            }
        }
        OutputBatch::new(n, horizon, data)
    }

    fn linear_expansion(&self) -> Option<Vec<Vec<f64>>> {
        LinearRecurrenceSpec::toy1().expansion(1e-10).ok()
    }
}

/// `Y_t = X_t Z_t + 0.2 exp(-Z_t)`: a memoryless nonlinear map on
/// 2-dimensional inputs.
#[derive(Debug, Clone, Default)]
pub struct ToyNonlinear;

impl ModelFunction for ToyNonlinear {
    fn name(&self) -> &str {
        "toy2"
    }

    fn arity(&self) -> usize {
        2
    }

    fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch> {
        check_arity(2, batch)?;
        let n = batch.n_samples();
        let horizon = batch.horizon();
        let mut data = Vec::with_capacity(n * (horizon + 1));
        for s in 0..n {
            for t in 0..=horizon {
                let x = batch.value(s, t, 0);
                let z = batch.value(s, t, 1);
                data.push(x * z + 0.2 * (-z).exp());
            }
        }
        OutputBatch::new(n, horizon, data)
    }
}

/// A generic stable linear recurrence
/// `Y_t = sum_l ar[l] Y_{t-l-1} + sum_m input_coeffs[m] . U_{t-m}`,
/// with inputs before `t = 0` taken as zero and `init` supplying the output
/// values just before `t = 0` (most recent first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRecurrenceSpec {
    /// Coefficients on lagged outputs, most recent first.
    #[serde(default)]
    pub ar_coeffs: Vec<f64>,
    /// `input_coeffs[m]` weights `U_{t-m}` (lag 0 first); each entry has
    /// length `p`.
    pub input_coeffs: Vec<Vec<f64>>,
    /// Initial outputs `(Y_{-1}, Y_{-2}, ...)`; defaults to zeros.
    #[serde(default)]
    pub init: Vec<f64>,
}

impl LinearRecurrenceSpec {
    pub fn toy1() -> Self {
        LinearRecurrenceSpec {
            ar_coeffs: vec![0.2],
            input_coeffs: vec![vec![0.3, 1.0]],
            init: vec![0.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.input_coeffs.first().map_or(0, |c| c.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_coeffs.is_empty() {
            return Err(Error::InvalidArgument(
                "linear recurrence needs at least one input coefficient vector".into(),
            ));
        }
        let p = self.dim();
        if p == 0 || self.input_coeffs.iter().any(|c| c.len() != p) {
            return Err(Error::InvalidArgument(
                "input coefficient vectors must share a positive length".into(),
            ));
        }
        if !self.init.is_empty() && self.init.len() != self.ar_coeffs.len() {
            return Err(Error::InvalidArgument(format!(
                "init has {} entries but the recurrence has {} output lags",
                self.init.len(),
                self.ar_coeffs.len()
            )));
        }
        if !self.ar_coeffs.is_empty() && self.ar_spectral_radius() >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "unstable output recurrence: AR spectral radius {} >= 1",
                self.ar_spectral_radius()
            )));
        }
        Ok(())
    }

    /// Largest root modulus of `z^m - ar[0] z^{m-1} - ... - ar[m-1]`.
    pub fn ar_spectral_radius(&self) -> f64 {
        let m = self.ar_coeffs.len();
        if m == 0 {
            return 0.0;
        }
        let mut comp = nalgebra::DMatrix::<f64>::zeros(m, m);
        for (j, &a) in self.ar_coeffs.iter().enumerate() {
            comp[(0, j)] = a;
        }
        for i in 1..m {
            comp[(i, i - 1)] = 1.0;
        }
        comp.complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }

    /// Expanded finite linear-combination form `Y_t = sum_k c_k . U_{t-k}`
    /// (valid when `init` is zero), truncated once the geometric tail norm
    /// falls below `tail_tol`.
    pub fn expansion(&self, tail_tol: f64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        if self.init.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument(
                "expansion requires zero initial output state".into(),
            ));
        }
        let p = self.dim();
        let m = self.ar_coeffs.len();
        let rho = self.ar_spectral_radius();
        // impulse response of the AR part
        let mut h: Vec<f64> = vec![1.0];
        let max_k = 100_000usize;
        let mut coeffs: Vec<Vec<f64>> = Vec::new();
        for k in 0..max_k {
            if k > 0 {
                let mut v = 0.0;
                for (l, &a) in self.ar_coeffs.iter().enumerate() {
                    if k > l {
                        v += a * h[k - l - 1];
                    }
                }
                h.push(v);
            }
            let mut c = vec![0.0f64; p];
            for (lag, b) in self.input_coeffs.iter().enumerate() {
                if k >= lag {
                    let hk = h[k - lag];
                    for (ci, &bi) in c.iter_mut().zip(b.iter()) {
                        *ci += hk * bi;
                    }
                }
            }
            coeffs.push(c);
            // geometric tail bound once past the direct input lags
            if k + 1 >= self.input_coeffs.len().max(m) {
                let cur: f64 = coeffs[k].iter().map(|v| v * v).sum::<f64>().sqrt();
                let tail = if rho < 1.0 && rho > 0.0 {
                    cur * rho / (1.0 - rho)
                } else {
                    cur
                };
                if tail < tail_tol && cur < tail_tol {
                    break;
                }
            }
        }
        Ok(coeffs)
    }
}

/// Evaluator for a [`LinearRecurrenceSpec`].
#[derive(Debug, Clone)]
pub struct LinearRecurrence {
    name: String,
    spec: LinearRecurrenceSpec,
}

impl LinearRecurrence {
    pub fn new(name: impl Into<String>, spec: LinearRecurrenceSpec) -> Result<Self> {
        spec.validate()?;
        Ok(LinearRecurrence {
            name: name.into(),
            spec,
        })
    }

    pub fn spec(&self) -> &LinearRecurrenceSpec {
        &self.spec
    }
}

impl ModelFunction for LinearRecurrence {
    fn name(&self) -> &str {
        &self.name
    }

    fn arity(&self) -> usize {
        self.spec.dim()
    }

    fn init(&self) -> Option<&[f64]> {
        if self.spec.ar_coeffs.is_empty() {
            None
        } else if self.spec.init.is_empty() {
            Some(&[])
        } else {
            Some(&self.spec.init)
        }
    }

    fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch> {
        check_arity(self.spec.dim(), batch)?;
        let n = batch.n_samples();
        let horizon = batch.horizon();
        let m = self.spec.ar_coeffs.len();
        let mut data = Vec::with_capacity(n * (horizon + 1));
        let init = if self.spec.init.is_empty() {
            vec![0.0; m]
        } else {
            self.spec.init.clone()
        };
        let mut y = vec![0.0f64; horizon + 1];
        for s in 0..n {
            for t in 0..=horizon {
                let mut acc = 0.0;
                for (l, &a) in self.spec.ar_coeffs.iter().enumerate() {
                    let yl = if t > l {
                        y[t - l - 1]
                    } else {
                        init[l - t] // Y_{t-l-1} with t-l-1 < 0
                    };
                    acc += a * yl;
                }
                for (lag, b) in self.spec.input_coeffs.iter().enumerate() {
                    if t >= lag {
                        for (c, &bc) in b.iter().enumerate() {
                            acc += bc * batch.value(s, t - lag, c);
                        }
                    }
                }
                y[t] = acc;
            }
            data.extend_from_slice(&y);
        }
        OutputBatch::new(n, horizon, data)
    }

    fn linear_expansion(&self) -> Option<Vec<Vec<f64>>> {
        self.spec.expansion(1e-10).ok()
    }
}

/// Coefficient table of the building model: an order-2 linear recursion of
/// the indoor temperature on two lags of itself and two lags of the five
/// exogenous temperatures `(below, above, off, cor, ext)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingPhi {
    /// `(phi_out_1, phi_out_2)`: weights on the lagged output.
    pub output_lags: [f64; 2],
    /// Per-channel weights on `U_{t-1}`, channel order as above.
    pub input_lag1: Vec<f64>,
    /// Per-channel weights on `U_{t-2}`.
    pub input_lag2: Vec<f64>,
    /// `(Y_{-1}, Y_{-2})`.
    #[serde(default)]
    pub init: [f64; 2],
}

impl BuildingPhi {
    pub fn to_spec(&self) -> Result<LinearRecurrenceSpec> {
        if self.input_lag1.len() != self.input_lag2.len() || self.input_lag1.is_empty() {
            return Err(Error::Config(
                "building coefficient table: lag-1 and lag-2 rows must have equal, positive length"
                    .into(),
            ));
        }
        let p = self.input_lag1.len();
        Ok(LinearRecurrenceSpec {
            ar_coeffs: self.output_lags.to_vec(),
            input_coeffs: vec![vec![0.0; p], self.input_lag1.clone(), self.input_lag2.clone()],
            init: self.init.to_vec(),
        })
    }
}

/// The building model: evaluator around the coefficient table.
pub struct BuildingModel {
    recurrence: LinearRecurrence,
}

impl BuildingModel {
    pub fn new(phi: &BuildingPhi) -> Result<Self> {
        Ok(BuildingModel {
            recurrence: LinearRecurrence::new("building", phi.to_spec()?)?,
        })
    }
}

impl ModelFunction for BuildingModel {
    fn name(&self) -> &str {
        "building"
    }

    fn arity(&self) -> usize {
        self.recurrence.arity()
    }

    fn init(&self) -> Option<&[f64]> {
        self.recurrence.init()
    }

    fn evaluate(&self, batch: &TrajectoryBatch) -> Result<OutputBatch> {
        self.recurrence.evaluate(batch)
    }

    fn linear_expansion(&self) -> Option<Vec<Vec<f64>>> {
        self.recurrence.linear_expansion()
    }
}

/// Optional parameters a registry entry may consume.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    pub linear_spec: Option<LinearRecurrenceSpec>,
    pub building_phi: Option<BuildingPhi>,
}

type Constructor = Arc<dyn Fn(&ModelParams) -> Result<Arc<dyn ModelFunction>> + Send + Sync>;

/// Registry keyed by name; the CLI selects models by string. Extension is by
/// adding an entry, not by a runtime expression parser.
pub fn registry() -> BTreeMap<&'static str, Constructor> {
    let mut map: BTreeMap<&'static str, Constructor> = BTreeMap::new();
    map.insert(
        "toy1",
        Arc::new(|_| Ok(Arc::new(ToyLinear) as Arc<dyn ModelFunction>)),
    );
    map.insert(
        "toy2",
        Arc::new(|_| Ok(Arc::new(ToyNonlinear) as Arc<dyn ModelFunction>)),
    );
    map.insert(
        "linrec",
        Arc::new(|params: &ModelParams| {
            let spec = params.linear_spec.clone().ok_or_else(|| {
                Error::Config("model 'linrec' needs a linear recurrence spec".into())
            })?;
            Ok(Arc::new(LinearRecurrence::new("linrec", spec)?) as Arc<dyn ModelFunction>)
        }),
    );
    map.insert(
        "building",
        Arc::new(|params: &ModelParams| {
            let phi = params
                .building_phi
                .clone()
                .ok_or_else(|| Error::Config("model 'building' needs a coefficient table".into()))?;
            Ok(Arc::new(BuildingModel::new(&phi)?) as Arc<dyn ModelFunction>)
        }),
    );
    map
}

/// Look a model up by name and build it.
pub fn by_name(name: &str, params: &ModelParams) -> Result<Arc<dyn ModelFunction>> {
    registry()
        .get(name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown model '{name}'; available: {}",
                registry().keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
        .and_then(|ctor| ctor(params))
}
