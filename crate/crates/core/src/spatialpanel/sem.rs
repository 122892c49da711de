use nalgebra::{DMatrix, DVector};

use super::optimize::maximize;
use super::within::{spatial_lag, spatial_lag_columns};
use super::{
    diag_se, invert_information, multiplier_dense, numerical_hessian, FitResult, ModelKind, ModelSpec,
    StandardErrors, WithinData,
};
use crate::error::{Error, Result};
use crate::linalg::squared_correlation;

/// Cross products needed to evaluate the filtered regression at any λ in
/// O(k³): with `y* = ỹ - λWỹ` and `X* = X̃ - λWX̃`, every moment is a
/// quadratic polynomial in λ.
struct Moments {
    xx: DMatrix<f64>,
    xwx: DMatrix<f64>,
    wxwx: DMatrix<f64>,
    xy: DVector<f64>,
    xwy: DVector<f64>,
    wxy: DVector<f64>,
    wxwy: DVector<f64>,
    yy: f64,
    ywy: f64,
    wywy: f64,
}

impl Moments {
    fn new(y: &DVector<f64>, wy: &DVector<f64>, x: &DMatrix<f64>, wx: &DMatrix<f64>) -> Self {
        Self {
            xx: x.tr_mul(x),
            xwx: x.tr_mul(wx),
            wxwx: wx.tr_mul(wx),
            xy: x.tr_mul(y),
            xwy: x.tr_mul(wy),
            wxy: wx.tr_mul(y),
            wxwy: wx.tr_mul(wy),
            yy: y.dot(y),
            ywy: y.dot(wy),
            wywy: wy.dot(wy),
        }
    }

    /// `(X*ᵀX*, X*ᵀy*, y*ᵀy*)` at λ.
    fn filtered(&self, lambda: f64) -> (DMatrix<f64>, DVector<f64>, f64) {
        let l2 = lambda * lambda;
        let xx = &self.xx - (&self.xwx + self.xwx.transpose()) * lambda + &self.wxwx * l2;
        let xy = &self.xy - (&self.xwy + &self.wxy) * lambda + &self.wxwy * l2;
        let yy = self.yy - 2.0 * lambda * self.ywy + l2 * self.wywy;
        (xx, xy, yy)
    }

    /// `(β(λ), SSR(λ))`, or `None` if the filtered design is singular.
    fn solve(&self, lambda: f64) -> Option<(DVector<f64>, f64)> {
        let (xx, xy, yy) = self.filtered(lambda);
        let chol = xx.cholesky()?;
        let beta = chol.solve(&xy);
        let ssr = (yy - xy.dot(&beta)).max(0.0);
        Some((beta, ssr))
    }
}

/// Spatial error model `y = X β + μ + u`, `u = λ W u + ε`.
pub fn fit_sem(spec: &ModelSpec<'_>) -> Result<FitResult> {
    spec.validate(ModelKind::Sem)?;
    let w = spec.weights.expect("validated");
    let frame = spec.frame;
    let d = WithinData::new(frame, None, &[])?;
    let t = d.t;
    let nobs = d.obs();
    let nf = nobs as f64;
    let tf = t as f64;
    let k = d.x.ncols();

    let mut warnings = Vec::new();
    if !w.isolated().is_empty() {
        let msg = format!("{} isolated unit(s) with zero weight rows", w.isolated().len());
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let wy = spatial_lag(w, &d.y, t);
    let wx = spatial_lag_columns(w, &d.x, t);
    let m = Moments::new(&d.y, &wy, &d.x, &wx);
    let concentrated = |lambda: f64| -> f64 {
        match m.solve(lambda) {
            Some((_, ssr)) => {
                let s2 = ssr / nf;
                -0.5 * nf * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * nf + tf * w.log_det(lambda)
            }
            None => f64::NAN,
        }
    };
    let (lo, hi) = w.admissible_interval()?;
    let best = maximize(lo, hi, concentrated)?;
    let lambda = best.arg;
    let (beta, ssr) = m
        .solve(lambda)
        .ok_or_else(|| Error::Singular("filtered design is singular at the optimum".into()))?;
    let sigma2_ml = ssr / nf;
    let sigma2 = if spec.options.lee_yu { sigma2_ml * tf / (tf - 1.0) } else { sigma2_ml };

    let cov_full = if spec.options.numerical_hessian {
        let full = |theta: &[f64]| -> f64 {
            let b = DVector::from_column_slice(&theta[..k]);
            let l = theta[k];
            let s2 = theta[k + 1];
            let u = &d.y - &d.x * &b;
            let wu = &wy - &wx * &b;
            let e = u - wu * l;
            -0.5 * nf * (2.0 * std::f64::consts::PI * s2).ln() + tf * w.log_det(l) - e.norm_squared() / (2.0 * s2)
        };
        let mut at: Vec<f64> = beta.iter().copied().collect();
        at.push(lambda);
        at.push(sigma2);
        invert_information(&(-numerical_hessian(full, &at)))?
    } else {
        let a = multiplier_dense(w, lambda)? * w.w();
        let (xx, _, _) = m.filtered(lambda);
        let mut info = DMatrix::zeros(k + 2, k + 2);
        info.view_mut((0, 0), (k, k)).copy_from(&(xx / sigma2));
        info[(k, k)] = tf * ((&a * &a).trace() + a.norm_squared());
        info[(k, k + 1)] = tf * a.trace() / sigma2;
        info[(k + 1, k)] = info[(k, k + 1)];
        info[(k + 1, k + 1)] = nf / (2.0 * sigma2 * sigma2);
        invert_information(&info)?
    };
    if (0..=k + 1).any(|i| !(cov_full[(i, i)] > 0.0)) {
        return Err(Error::Numerical("non-positive variance in the inverse information matrix".into()));
    }
    let cov = cov_full.view((0, 0), (k + 1, k + 1)).into_owned();
    let se_all = diag_se(&cov, 0..k + 1);

    let mu = d.fixed_effects(&frame.y, &beta);
    let fitted = &d.x * &beta;
    let pseudo_r2 = squared_correlation(fitted.as_slice(), d.y.as_slice());
    Ok(FitResult {
        kind: ModelKind::Sem,
        regressor_names: frame.regressor_names.clone(),
        beta: beta.iter().copied().collect(),
        lagged_regressors: Vec::new(),
        gamma: Vec::new(),
        rho: None,
        lambda: Some(lambda),
        intercept: None,
        sigma2,
        se: StandardErrors {
            beta: se_all[..k].to_vec(),
            gamma: Vec::new(),
            rho: None,
            lambda: Some(se_all[k]),
            sigma2: cov_full[(k + 1, k + 1)].sqrt(),
            intercept: None,
        },
        covariance: cov,
        loglik: best.value,
        fixed_effects: mu,
        pseudo_r2,
        n: d.n,
        t_eff: t,
        k,
        warnings,
    })
}
