use nalgebra::{DMatrix, DVector};

use super::within::{unit_column_means, unit_means};
use super::{diag_se, FitResult, ModelKind, ModelSpec, StandardErrors, WithinData};
use crate::error::{Error, Result};
use crate::linalg::{ols, spd_inverse, squared_correlation};

/// Within estimator with conventional (homoskedastic) standard errors.
///
/// `sigma2` is the degrees-of-freedom corrected residual variance
/// `e'e / (nT - n - k)`; `loglik` uses the ML variance `e'e / nT` so that it
/// nests the spatial likelihoods at a zero spatial parameter.
pub fn fit_fe(spec: &ModelSpec<'_>) -> Result<FitResult> {
    spec.validate(ModelKind::Fe)?;
    let frame = spec.frame;
    let d = WithinData::new(frame, None, &[])?;
    let k = d.x.ncols();
    let nobs = d.obs();
    let beta = ols(&d.x, &d.y)?;
    let resid = &d.y - &d.x * &beta;
    let ssr = resid.norm_squared();
    let dof = (nobs - d.n - k) as f64;
    let s2 = ssr / dof;
    let xtx_inv = spd_inverse(&d.x.tr_mul(&d.x)).ok_or_else(|| Error::Singular("XᵀX".into()))?;
    let cov = xtx_inv * s2;
    let sigma2_ml = ssr / nobs as f64;
    let loglik = gaussian_loglik(nobs, sigma2_ml);

    let ybar = unit_means(&frame.y, d.n, d.t);
    let xbar = unit_column_means(&frame.x, d.n, d.t);
    let mu: Vec<f64> = (0..d.n).map(|i| ybar[i] - (xbar.row(i) * &beta)[0]).collect();

    let fitted = &d.x * &beta;
    let pseudo_r2 = squared_correlation(fitted.as_slice(), d.y.as_slice());
    Ok(FitResult {
        kind: ModelKind::Fe,
        regressor_names: frame.regressor_names.clone(),
        beta: beta.iter().copied().collect(),
        lagged_regressors: Vec::new(),
        gamma: Vec::new(),
        rho: None,
        lambda: None,
        intercept: None,
        sigma2: s2,
        se: StandardErrors {
            beta: diag_se(&cov, 0..k),
            gamma: Vec::new(),
            rho: None,
            lambda: None,
            sigma2: (2.0 * s2 * s2 / dof).sqrt(),
            intercept: None,
        },
        covariance: cov,
        loglik,
        fixed_effects: mu,
        pseudo_r2,
        n: d.n,
        t_eff: d.t,
        k,
        warnings: Vec::new(),
    })
}

pub(crate) fn gaussian_loglik(nobs: usize, sigma2: f64) -> f64 {
    let n = nobs as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * n
}

/// Random-effects GLS with Swamy–Arora variance components.
///
/// `σ²_e` comes from the within residuals, `σ²_b` from the between
/// regression of unit means on `[1, x̄_i]`, and `σ²_μ = σ²_b - σ²_e / T`
/// (clamped at zero). The data are quasi-demeaned with
/// `θ = 1 - sqrt(σ²_e / (T σ²_μ + σ²_e))` and fitted by OLS with an intercept.
pub fn fit_re(spec: &ModelSpec<'_>) -> Result<FitResult> {
    spec.validate(ModelKind::Re)?;
    let frame = spec.frame;
    let (n, t) = (frame.n, frame.t_eff);
    let k = frame.k();
    let nobs = n * t;
    if n <= k + 1 {
        return Err(Error::Dimension(format!(
            "between regression needs more than {} units, have {n}",
            k + 1
        )));
    }
    let d = WithinData::new(frame, None, &[])?;
    let bw = ols(&d.x, &d.y)?;
    let sigma_e = (&d.y - &d.x * &bw).norm_squared() / (nobs - n - k) as f64;

    let ybar = unit_means(&frame.y, n, t);
    let xbar = unit_column_means(&frame.x, n, t);
    let xb = xbar.clone().insert_column(0, 1.0);
    let yb = DVector::from_vec(ybar.clone());
    let bb = ols(&xb, &yb)?;
    let sigma_b = (&yb - &xb * &bb).norm_squared() / (n - k - 1) as f64;
    let mut warnings = Vec::new();
    let mut sigma_mu = sigma_b - sigma_e / t as f64;
    if sigma_mu < 0.0 {
        let msg = format!("negative individual variance component {sigma_mu:.3e} clamped to zero");
        log::warn!("{msg}");
        warnings.push(msg);
        sigma_mu = 0.0;
    }
    let theta = 1.0 - (sigma_e / (t as f64 * sigma_mu + sigma_e)).sqrt();

    let mut xs = DMatrix::zeros(nobs, k + 1);
    let mut ys = DVector::zeros(nobs);
    for r in 0..nobs {
        let i = r % n;
        ys[r] = frame.y[r] - theta * ybar[i];
        xs[(r, 0)] = 1.0 - theta;
        for j in 0..k {
            xs[(r, j + 1)] = frame.x[(r, j)] - theta * xbar[(i, j)];
        }
    }
    let coef = ols(&xs, &ys)?;
    let resid = &ys - &xs * &coef;
    let inv = spd_inverse(&xs.tr_mul(&xs)).ok_or_else(|| Error::Singular("RE design".into()))?;
    let full_cov = inv * sigma_e;
    let cov = full_cov.view((1, 1), (k, k)).into_owned();

    let tf = t as f64;
    let loglik = -0.5
        * (nobs as f64 * (2.0 * std::f64::consts::PI).ln()
            + (n * (t - 1)) as f64 * sigma_e.ln()
            + n as f64 * (sigma_e + tf * sigma_mu).ln()
            + resid.norm_squared() / sigma_e);

    let c = coef[0];
    let beta: Vec<f64> = coef.iter().skip(1).copied().collect();
    let shrink = if sigma_mu > 0.0 { tf * sigma_mu / (tf * sigma_mu + sigma_e) } else { 0.0 };
    let mu = (0..n)
        .map(|i| {
            let xb: f64 = (0..k).map(|j| xbar[(i, j)] * beta[j]).sum();
            shrink * (ybar[i] - c - xb)
        })
        .collect();
    let fitted: Vec<f64> = (0..nobs)
        .map(|r| c + (0..k).map(|j| frame.x[(r, j)] * beta[j]).sum::<f64>())
        .collect();
    let pseudo_r2 = squared_correlation(&fitted, &frame.y);
    Ok(FitResult {
        kind: ModelKind::Re,
        regressor_names: frame.regressor_names.clone(),
        beta,
        lagged_regressors: Vec::new(),
        gamma: Vec::new(),
        rho: None,
        lambda: None,
        intercept: Some(c),
        sigma2: sigma_e,
        se: StandardErrors {
            beta: diag_se(&cov, 0..k),
            gamma: Vec::new(),
            rho: None,
            lambda: None,
            sigma2: (2.0 * sigma_e * sigma_e / (nobs - n - k) as f64).sqrt(),
            intercept: Some(full_cov[(0, 0)].max(0.0).sqrt()),
        },
        covariance: cov,
        loglik,
        fixed_effects: mu,
        pseudo_r2,
        n,
        t_eff: t,
        k,
        warnings,
    })
}
