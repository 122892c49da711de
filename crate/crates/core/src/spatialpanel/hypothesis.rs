use nalgebra::DVector;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{FitResult, ModelKind};
use crate::autocorr::{Tails, TestResult};
use crate::error::{Error, Result};
use crate::linalg::symmetric_pinv;

/// Nesting violations smaller than this are optimizer noise.
const LR_TOLERANCE: f64 = 1e-6;

fn chi2_result(name: &str, stat: f64, df: usize) -> TestResult {
    let p = if df == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(df as f64).expect("positive df");
        (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
    };
    let mean = df as f64;
    let sd = (2.0 * mean).sqrt();
    TestResult {
        name: name.to_string(),
        statistic: stat,
        expectation: mean,
        sd,
        z: if sd > 0.0 { (stat - mean) / sd } else { 0.0 },
        p_value: p,
        tails: Tails::One,
        df: Some(df),
    }
}

/// Joint test that every non-spatial slope (`β` and `γ`) is zero.
pub fn wald_test(fit: &FitResult) -> Result<TestResult> {
    let q = fit.slope_count();
    let theta = DVector::from_iterator(q, fit.beta.iter().chain(&fit.gamma).copied());
    let v = fit.covariance.view((0, 0), (q, q)).into_owned();
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::Numerical("coefficient covariance is singular".into()))?;
    let stat = theta.dot(&chol.solve(&theta));
    Ok(chi2_result("wald", stat, q))
}

/// Hausman specification test of FE against RE on the shared slopes.
///
/// If `V_FE - V_RE` is not positive definite the Moore–Penrose inverse is
/// used and a warning is logged.
pub fn hausman_test(fe: &FitResult, re: &FitResult) -> Result<TestResult> {
    if fe.kind != ModelKind::Fe || re.kind != ModelKind::Re {
        return Err(Error::Usage(format!(
            "Hausman test compares FE with RE, got {} and {}",
            fe.kind, re.kind
        )));
    }
    if fe.regressor_names != re.regressor_names || fe.n != re.n || fe.t_eff != re.t_eff {
        return Err(Error::Usage("FE and RE fits use different frames".into()));
    }
    let k = fe.beta.len();
    let diff = DVector::from_iterator(k, fe.beta.iter().zip(&re.beta).map(|(a, b)| a - b));
    if diff.iter().all(|v| *v == 0.0) {
        return Ok(chi2_result("hausman", 0.0, k));
    }
    let vd = fe.covariance.view((0, 0), (k, k)) - re.covariance.view((0, 0), (k, k));
    let stat = match vd.clone().cholesky() {
        Some(c) => diff.dot(&c.solve(&diff)),
        None => {
            log::warn!("V_FE - V_RE is not positive definite; using a generalized inverse");
            let (pinv, _) = symmetric_pinv(&vd, 1e-12);
            let s = diff.dot(&(&pinv * &diff));
            if s < 0.0 {
                log::warn!("negative Hausman statistic {s:.4} set to zero");
            }
            s.max(0.0)
        }
    };
    Ok(chi2_result("hausman", stat, k))
}

/// Likelihood-ratio test of a restricted model nested in an unrestricted one.
pub fn lr_test(restricted: &FitResult, unrestricted: &FitResult, df: usize) -> Result<TestResult> {
    if restricted.n != unrestricted.n || restricted.t_eff != unrestricted.t_eff {
        return Err(Error::Usage("LR test needs fits on the same data".into()));
    }
    let stat = 2.0 * (unrestricted.loglik - restricted.loglik);
    if stat < -LR_TOLERANCE {
        return Err(Error::Numerical(format!(
            "LR statistic {stat:.3e} is negative: models are not nested or the optimizer failed"
        )));
    }
    let name = format!("lr_{}_vs_{}", restricted.kind.code().to_lowercase(), unrestricted.kind.code().to_lowercase());
    Ok(chi2_result(&name, stat.max(0.0), df))
}
