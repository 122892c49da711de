//! Fixed-effects panel regressions with and without spatial dependence.
//!
//! All spatial models are estimated on within-demeaned data by concentrated
//! maximum likelihood. For the spatial lag family,
//!
//! ```text
//! ℓ(ρ) = -N/2 · ln(2π σ²(ρ)) - N/2 + T Σ_i ln(1 - ρ ω_i),   N = nT,
//! ```
//!
//! where `ω_i` are the eigenvalues of `W` and `σ²(ρ)` is the mean squared
//! residual of regressing `(I - ρW) ỹ` on `X̃`. The spatial error model
//! replaces the residual with the spatially filtered one. At a zero spatial
//! parameter both reduce to the Gaussian log-likelihood of the within
//! estimator.

mod hypothesis;
mod lag;
mod nonspatial;
mod optimize;
mod sem;
pub(crate) mod within;

pub use hypothesis::{hausman_test, lr_test, wald_test};
pub use lag::{concentrated_loglik, fit_sar, fit_sdm};
pub use nonspatial::{fit_fe, fit_re};
pub use sem::fit_sem;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::RegressionFrame;
use crate::error::{Error, Result};
use crate::weights::WeightMatrix;

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Fe,
    Re,
    Sar,
    Sem,
    Sdm,
}

impl ModelKind {
    pub fn code(self) -> &'static str {
        match self {
            ModelKind::Fe => "FE",
            ModelKind::Re => "RE",
            ModelKind::Sar => "SAR",
            ModelKind::Sem => "SEM",
            ModelKind::Sdm => "SDM",
        }
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, ModelKind::Sar | ModelKind::Sem | ModelKind::Sdm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fe" => Ok(ModelKind::Fe),
            "re" => Ok(ModelKind::Re),
            "sar" | "slm" => Ok(ModelKind::Sar),
            "sem" => Ok(ModelKind::Sem),
            "sdm" => Ok(ModelKind::Sdm),
            other => Err(Error::Usage(format!("unknown model `{other}`"))),
        }
    }
}

/// Estimation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Rescale σ² by `T / (T - 1)` in the spatial models to remove the
    /// incidental-parameter bias of the within approach.
    pub lee_yu: bool,
    /// Standard errors from a finite-difference Hessian of the full
    /// log-likelihood instead of the analytic information matrix.
    pub numerical_hessian: bool,
}

/// What to estimate and on which data.
#[derive(Debug, Clone)]
pub struct ModelSpec<'a> {
    pub kind: ModelKind,
    pub frame: &'a RegressionFrame,
    pub weights: Option<&'a WeightMatrix>,
    /// Regressors that also enter as `W x` (SDM only).
    pub spatial_lag_regressors: Vec<String>,
    pub options: FitOptions,
}

impl<'a> ModelSpec<'a> {
    pub fn fe(frame: &'a RegressionFrame) -> Self {
        Self::new(ModelKind::Fe, frame, None, Vec::new())
    }

    pub fn re(frame: &'a RegressionFrame) -> Self {
        Self::new(ModelKind::Re, frame, None, Vec::new())
    }

    pub fn sar(frame: &'a RegressionFrame, w: &'a WeightMatrix) -> Self {
        Self::new(ModelKind::Sar, frame, Some(w), Vec::new())
    }

    pub fn sem(frame: &'a RegressionFrame, w: &'a WeightMatrix) -> Self {
        Self::new(ModelKind::Sem, frame, Some(w), Vec::new())
    }

    pub fn sdm(frame: &'a RegressionFrame, w: &'a WeightMatrix, lagged: &[&str]) -> Self {
        Self::new(
            ModelKind::Sdm,
            frame,
            Some(w),
            lagged.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn new(
        kind: ModelKind,
        frame: &'a RegressionFrame,
        weights: Option<&'a WeightMatrix>,
        spatial_lag_regressors: Vec<String>,
    ) -> Self {
        Self {
            kind,
            frame,
            weights,
            spatial_lag_regressors,
            options: FitOptions::default(),
        }
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }

    pub(crate) fn validate(&self, expected: ModelKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::Usage(format!("spec is {} but {} was requested", self.kind, expected)));
        }
        if self.kind.is_spatial() {
            let w = self
                .weights
                .ok_or_else(|| Error::Usage(format!("{} requires a weight matrix", self.kind)))?;
            if w.labels() != self.frame.countries.as_slice() {
                return Err(Error::Usage(
                    "weight-matrix labels do not match the frame's countries in order".into(),
                ));
            }
        } else if self.weights.is_some() && !self.spatial_lag_regressors.is_empty() {
            return Err(Error::Usage("spatially lagged regressors need an SDM".into()));
        }
        if self.kind == ModelKind::Sdm {
            if self.spatial_lag_regressors.is_empty() {
                return Err(Error::Usage("SDM needs at least one spatially lagged regressor".into()));
            }
            for r in &self.spatial_lag_regressors {
                if self.frame.regressor_index(r).is_none() {
                    return Err(Error::Usage(format!("unknown regressor `{r}` in SDM lag list")));
                }
            }
        } else if !self.spatial_lag_regressors.is_empty() {
            return Err(Error::Usage(format!(
                "spatially lagged regressors are only allowed in SDM, not {}",
                self.kind
            )));
        }
        let n = self.frame.n;
        let obs = n * self.frame.t_eff;
        let k = self.frame.k() + self.spatial_lag_regressors.len();
        if obs <= k + n {
            return Err(Error::Dimension(format!(
                "{obs} observations cannot identify {k} slopes and {n} fixed effects"
            )));
        }
        Ok(())
    }
}

/// Fits the model named by `spec.kind`.
pub fn fit(spec: &ModelSpec<'_>) -> Result<FitResult> {
    match spec.kind {
        ModelKind::Fe => fit_fe(spec),
        ModelKind::Re => fit_re(spec),
        ModelKind::Sar => fit_sar(spec),
        ModelKind::Sem => fit_sem(spec),
        ModelKind::Sdm => fit_sdm(spec),
    }
}

/// Standard errors matching the estimates in [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma2: f64,
    pub intercept: Option<f64>,
}

/// Estimates for one model.
///
/// `covariance` is over the stacked vector `(β, γ, ρ or λ)`; σ² and the RE
/// intercept are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub regressor_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Base regressors whose spatial lag enters the model, aligned with `gamma`.
    pub lagged_regressors: Vec<String>,
    pub gamma: Vec<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub intercept: Option<f64>,
    pub sigma2: f64,
    pub se: StandardErrors,
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub fixed_effects: Vec<f64>,
    pub pseudo_r2: f64,
    pub n: usize,
    pub t_eff: usize,
    pub k: usize,
    pub warnings: Vec<String>,
}

/// How `pseudo_r2` is defined; carried into report metadata.
pub const PSEUDO_R2_DEFINITION: &str =
    "squared Pearson correlation between within-transformed y and its reduced-form prediction";

impl FitResult {
    /// Number of non-spatial slope coefficients (`β` and `γ`).
    pub fn slope_count(&self) -> usize {
        self.beta.len() + self.gamma.len()
    }

    /// Spatial parameter on `Wy` or on the error, whichever the model has.
    pub fn spatial_parameter(&self) -> Option<f64> {
        self.rho.or(self.lambda)
    }

    /// `γ_k` for a base regressor, zero when it has no spatial lag.
    pub fn gamma_for(&self, regressor: &str) -> f64 {
        self.lagged_regressors
            .iter()
            .position(|r| r == regressor)
            .map(|i| self.gamma[i])
            .unwrap_or(0.0)
    }

    /// Index of the coefficient of `W·regressor` in the stacked covariance.
    pub fn gamma_index(&self, regressor: &str) -> Option<usize> {
        self.lagged_regressors
            .iter()
            .position(|r| r == regressor)
            .map(|i| self.beta.len() + i)
    }

    /// Index of ρ (or λ) in the stacked covariance.
    pub fn spatial_index(&self) -> Option<usize> {
        self.spatial_parameter().map(|_| self.slope_count())
    }

    pub fn beta_of(&self, regressor: &str) -> Option<f64> {
        self.regressor_names.iter().position(|r| r == regressor).map(|i| self.beta[i])
    }
}

/// Cached pieces shared by the spatial estimators.
pub(crate) struct WithinData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Regressors including `W x` columns, before demeaning.
    pub raw_x: DMatrix<f64>,
    pub n: usize,
    pub t: usize,
}

impl WithinData {
    /// Demeans `y` and `X`, appending `W x` columns for the lagged regressors.
    pub fn new(frame: &RegressionFrame, w: Option<&WeightMatrix>, lagged: &[String]) -> Result<Self> {
        let (n, t) = (frame.n, frame.t_eff);
        let mut x = frame.x.clone();
        let mut names = frame.regressor_names.clone();
        if !lagged.is_empty() {
            let w = w.ok_or_else(|| Error::Usage("spatial lags need weights".into()))?;
            let idx: Vec<usize> = lagged
                .iter()
                .map(|r| frame.regressor_index(r).ok_or_else(|| Error::Usage(format!("unknown regressor `{r}`"))))
                .collect::<Result<_>>()?;
            let base = DMatrix::from_fn(x.nrows(), idx.len(), |r, c| frame.x[(r, idx[c])]);
            let wx = within::spatial_lag_columns(w, &base, t);
            let k0 = x.ncols();
            x = x.resize_horizontally(k0 + idx.len(), 0.0);
            x.view_mut((0, k0), (wx.nrows(), wx.ncols())).copy_from(&wx);
            names.extend(lagged.iter().map(|r| format!("w_{r}")));
        }
        let y = within::demean(&frame.y, n, t);
        let xd = within::demean_columns(&x, n, t);
        if y.norm_squared() == 0.0 {
            return Err(Error::ZeroVariance("dependent variable has no within variation".into()));
        }
        crate::linalg::check_full_rank(&xd, &names)?;
        Ok(Self {
            y,
            x: xd,
            raw_x: x,
            n,
            t,
        })
    }

    pub fn obs(&self) -> usize {
        self.n * self.t
    }

    /// Unit means over time of `v - raw_x β`.
    pub fn fixed_effects(&self, v: &[f64], beta: &DVector<f64>) -> Vec<f64> {
        let fitted = &self.raw_x * beta;
        let r: Vec<f64> = v.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
        within::unit_means(&r, self.n, self.t)
    }
}

/// `(I - ρW)⁻¹` as a dense matrix, via LU.
pub(crate) fn multiplier_dense(w: &WeightMatrix, rho: f64) -> Result<DMatrix<f64>> {
    let n = w.n();
    let a = DMatrix::<f64>::identity(n, n) - w.w() * rho;
    a.lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("I - {rho}·W is singular")))
}

/// Inverts an information matrix into a covariance.
pub(crate) fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::linalg::spd_inverse(info)
        .or_else(|| info.clone().try_inverse())
        .ok_or_else(|| Error::Numerical("information matrix is singular".into()))
}

/// Central finite-difference Hessian.
pub(crate) fn numerical_hessian(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> DMatrix<f64> {
    let p = at.len();
    let h: Vec<f64> = at.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    let mut hess = DMatrix::zeros(p, p);
    let mut x = at.to_vec();
    let f0 = f(at);
    for i in 0..p {
        for j in i..p {
            let v = if i == j {
                x[i] = at[i] + h[i];
                let fp = f(&x);
                x[i] = at[i] - h[i];
                let fm = f(&x);
                x[i] = at[i];
                (fp - 2.0 * f0 + fm) / (h[i] * h[i])
            } else {
                let mut eval = |di: f64, dj: f64| {
                    x[i] = at[i] + di * h[i];
                    x[j] = at[j] + dj * h[j];
                    let v = f(&x);
                    x[i] = at[i];
                    x[j] = at[j];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h[i] * h[j])
            };
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Splits a stacked estimate vector into `β` and `γ` parts.
pub(crate) fn split_slopes(coef: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    (coef[..k].to_vec(), coef[k..].to_vec())
}

pub(crate) fn diag_se(cov: &DMatrix<f64>, range: std::ops::Range<usize>) -> Vec<f64> {
    range.map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
}

#[cfg(test)]
mod tests;
