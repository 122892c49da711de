use nalgebra::{DMatrix, DVector};

use super::optimize::maximize;
use super::within::{apply_blockwise, spatial_lag};
use super::{
    diag_se, invert_information, multiplier_dense, numerical_hessian, split_slopes, FitResult, ModelKind,
    ModelSpec, StandardErrors, WithinData,
};
use crate::error::{Error, Result};
use crate::linalg::squared_correlation;

/// Spatial lag model `y = ρ W y + X β + μ + ε`.
pub fn fit_sar(spec: &ModelSpec<'_>) -> Result<FitResult> {
    spec.validate(ModelKind::Sar)?;
    fit_lag(spec, ModelKind::Sar)
}

/// Spatial Durbin model `y = ρ W y + X β + W X_L γ + μ + ε`, where `X_L` are
/// the columns named in `spec.spatial_lag_regressors`.
pub fn fit_sdm(spec: &ModelSpec<'_>) -> Result<FitResult> {
    spec.validate(ModelKind::Sdm)?;
    fit_lag(spec, ModelKind::Sdm)
}

fn fit_lag(spec: &ModelSpec<'_>, kind: ModelKind) -> Result<FitResult> {
    let w = spec.weights.expect("validated");
    let frame = spec.frame;
    let d = WithinData::new(frame, Some(w), &spec.spatial_lag_regressors)?;
    let t = d.t;
    let nobs = d.obs();
    let nf = nobs as f64;
    let p = d.x.ncols();
    let k = frame.k();

    let mut warnings = Vec::new();
    if !w.isolated().is_empty() {
        let msg = format!("{} isolated unit(s) with zero weight rows", w.isolated().len());
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let wy = spatial_lag(w, &d.y, t);
    let chol = d
        .x
        .tr_mul(&d.x)
        .cholesky()
        .ok_or_else(|| Error::Singular("XᵀX is not positive definite".into()))?;
    let b0 = chol.solve(&d.x.tr_mul(&d.y));
    let b1 = chol.solve(&d.x.tr_mul(&wy));
    let e0 = &d.y - &d.x * &b0;
    let e1 = &wy - &d.x * &b1;
    let (q00, q01, q11) = (e0.dot(&e0), e0.dot(&e1), e1.dot(&e1));

    let tf = t as f64;
    let concentrated = |rho: f64| -> f64 {
        let s2 = (q00 - 2.0 * rho * q01 + rho * rho * q11) / nf;
        -0.5 * nf * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * nf + tf * w.log_det(rho)
    };
    let (lo, hi) = w.admissible_interval()?;
    let best = maximize(lo, hi, concentrated)?;
    let rho = best.arg;

    let beta = &b0 - &b1 * rho;
    let resid = &e0 - &e1 * rho;
    let sigma2_ml = resid.norm_squared() / nf;
    let sigma2 = if spec.options.lee_yu { sigma2_ml * tf / (tf - 1.0) } else { sigma2_ml };

    let multiplier = multiplier_dense(w, rho)?;
    let cov_full = if spec.options.numerical_hessian {
        let full = |theta: &[f64]| -> f64 {
            let b = DVector::from_column_slice(&theta[..p]);
            let r = theta[p];
            let s2 = theta[p + 1];
            let e = &d.y - &wy * r - &d.x * b;
            -0.5 * nf * (2.0 * std::f64::consts::PI * s2).ln() + tf * w.log_det(r) - e.norm_squared() / (2.0 * s2)
        };
        let mut at: Vec<f64> = beta.iter().copied().collect();
        at.push(rho);
        at.push(sigma2);
        let h = numerical_hessian(full, &at);
        invert_information(&(-h))?
    } else {
        let a = &multiplier * w.w();
        let xb = &d.x * &beta;
        let axb = apply_blockwise(&a, &xb, t);
        let mut info = DMatrix::zeros(p + 2, p + 2);
        info.view_mut((0, 0), (p, p)).copy_from(&(d.x.tr_mul(&d.x) / sigma2));
        let xr = d.x.tr_mul(&axb) / sigma2;
        for j in 0..p {
            info[(j, p)] = xr[j];
            info[(p, j)] = xr[j];
        }
        let tr_a = a.trace();
        let tr_aa = (&a * &a).trace();
        let tr_ata = a.norm_squared();
        info[(p, p)] = tf * (tr_aa + tr_ata) + axb.norm_squared() / sigma2;
        info[(p, p + 1)] = tf * tr_a / sigma2;
        info[(p + 1, p)] = info[(p, p + 1)];
        info[(p + 1, p + 1)] = nf / (2.0 * sigma2 * sigma2);
        invert_information(&info)?
    };
    let cov = cov_full.view((0, 0), (p + 1, p + 1)).into_owned();
    if (0..=p + 1).any(|i| !(cov_full[(i, i)] > 0.0)) {
        return Err(Error::Numerical("non-positive variance in the inverse information matrix".into()));
    }

    let raw_wy = spatial_lag(w, &DVector::from_column_slice(&frame.y), t);
    let yr: Vec<f64> = frame.y.iter().zip(raw_wy.iter()).map(|(a, b)| a - rho * b).collect();
    let mu = d.fixed_effects(&yr, &beta);

    let fitted = apply_blockwise(&multiplier, &(&d.x * &beta), t);
    let pseudo_r2 = squared_correlation(fitted.as_slice(), d.y.as_slice());

    let coef: Vec<f64> = beta.iter().copied().collect();
    let (beta_v, gamma_v) = split_slopes(&coef, k);
    let se_all = diag_se(&cov, 0..p + 1);
    Ok(FitResult {
        kind,
        regressor_names: frame.regressor_names.clone(),
        beta: beta_v,
        lagged_regressors: spec.spatial_lag_regressors.clone(),
        gamma: gamma_v,
        rho: Some(rho),
        lambda: None,
        intercept: None,
        sigma2,
        se: StandardErrors {
            beta: se_all[..k].to_vec(),
            gamma: se_all[k..p].to_vec(),
            rho: Some(se_all[p]),
            lambda: None,
            sigma2: cov_full[(p + 1, p + 1)].sqrt(),
            intercept: None,
        },
        covariance: cov,
        loglik: best.value,
        fixed_effects: mu,
        pseudo_r2,
        n: d.n,
        t_eff: t,
        k: p,
        warnings,
    })
}

/// Concentrated log-likelihood `ℓ(ρ)` of a SAR or SDM specification, with
/// β and σ² profiled out.
pub fn concentrated_loglik<'a>(spec: &ModelSpec<'a>) -> Result<impl Fn(f64) -> f64 + 'a> {
    let w = spec.weights.ok_or_else(|| Error::Usage("weights required".into()))?;
    let d = WithinData::new(spec.frame, Some(w), &spec.spatial_lag_regressors)?;
    let wy = spatial_lag(w, &d.y, d.t);
    let xtx = d.x.tr_mul(&d.x).cholesky().ok_or_else(|| Error::Singular("XᵀX".into()))?;
    let e0 = &d.y - &d.x * xtx.solve(&d.x.tr_mul(&d.y));
    let e1 = &wy - &d.x * xtx.solve(&d.x.tr_mul(&wy));
    let nf = d.obs() as f64;
    let tf = d.t as f64;
    Ok(move |rho: f64| {
        let e = &e0 - &e1 * rho;
        let s2 = e.norm_squared() / nf;
        -0.5 * nf * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * nf + tf * w.log_det(rho)
    })
}
