//! Spatial multiplier, direct/indirect/total effects, and convergence rates.
//!
//! For regressor `k` the matrix of partial derivatives of `E[y]` is
//! `M (β_k I + γ_k W)` with `M = (I - ρW)⁻¹`. Its summaries reduce to four
//! scalars of the multiplier,
//!
//! ```text
//! a = tr(M)/n        b = tr(MW)/n        c = 1'M1/n        d = 1'MW1/n
//! direct   = β_k a + γ_k b
//! total    = β_k c + γ_k d
//! indirect = β_k (c - a) + γ_k (d - b)
//! ```
//!
//! The traces come from the eigenvalues of `W`
//! (`tr M = Σ 1/(1-ρω)`, `tr MW = Σ ω/(1-ρω)`) and the row sums from an LU
//! solve, so no inverse is formed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocorr::two_tailed_normal_p;
use crate::data::LAGGED_CI;
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::spatialpanel::{FitResult, ModelKind};
use crate::weights::WeightMatrix;

/// Minimum number of simulation draws for effect inference.
pub const MIN_DRAWS: usize = 100;
/// Default number of simulation draws.
pub const DEFAULT_DRAWS: usize = 1000;

/// `(I - ρW)⁻¹` by LU solve against the identity.
pub fn spatial_multiplier(rho: f64, w: &WeightMatrix) -> Result<DMatrix<f64>> {
    check_rho(rho, w)?;
    let n = w.n();
    if rho == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let a = DMatrix::<f64>::identity(n, n) - w.w() * rho;
    let lu = a.lu();
    lu.solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular(format!("I - {rho}·W is singular")))
}

fn check_rho(rho: f64, w: &WeightMatrix) -> Result<()> {
    let (lo, hi) = w.admissible_interval()?;
    if !(rho > lo && rho < hi) {
        return Err(Error::Singular(format!(
            "ρ = {rho} outside the admissible interval ({lo:.6}, {hi:.6}); I - ρW is singular or unstable"
        )));
    }
    Ok(())
}

/// The n×n effects matrix `(I - ρW)⁻¹ (β_k I + γ_k W)` for one regressor.
pub fn effects_matrix(fit: &FitResult, w: &WeightMatrix, regressor: &str) -> Result<DMatrix<f64>> {
    let beta = fit
        .beta_of(regressor)
        .ok_or_else(|| Error::Usage(format!("unknown regressor `{regressor}`")))?;
    let gamma = fit.gamma_for(regressor);
    let rho = fit.rho.unwrap_or(0.0);
    let n = w.n();
    let s = DMatrix::<f64>::identity(n, n) * beta + w.w() * gamma;
    Ok(spatial_multiplier(rho, w)? * s)
}

/// Scalar summaries of the multiplier at one ρ.
#[derive(Debug, Clone, Copy)]
struct MultiplierSummary {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl MultiplierSummary {
    fn new(rho: f64, w: &WeightMatrix) -> Result<Self> {
        let n = w.n();
        let nf = n as f64;
        // W·1 is exactly the indicator of non-isolated rows
        let linked = DVector::from_iterator(
            n,
            (0..n).map(|i| if w.w().row(i).iter().any(|&v| v != 0.0) { 1.0 } else { 0.0 }),
        );
        if rho == 0.0 {
            return Ok(Self {
                a: 1.0,
                b: w.w().trace() / nf,
                c: 1.0,
                d: linked.sum() / nf,
            });
        }
        let eig = &w.spectrum().eigenvalues;
        let a = eig.iter().map(|&o| 1.0 / (1.0 - rho * o)).sum::<f64>() / nf;
        let b = eig.iter().map(|&o| o / (1.0 - rho * o)).sum::<f64>() / nf;
        let lu = (DMatrix::<f64>::identity(n, n) - w.w() * rho).lu();
        let ones = DVector::from_element(n, 1.0);
        let m1 = lu.solve(&ones).ok_or_else(|| Error::Singular("I - ρW".into()))?;
        let mr = lu.solve(&linked).ok_or_else(|| Error::Singular("I - ρW".into()))?;
        Ok(Self {
            a,
            b,
            c: m1.sum() / nf,
            d: mr.sum() / nf,
        })
    }

    fn effects(&self, beta: f64, gamma: f64) -> (f64, f64, f64) {
        let direct = beta * self.a + gamma * self.b;
        let total = beta * self.c + gamma * self.d;
        let indirect = beta * (self.c - self.a) + gamma * (self.d - self.b);
        (direct, indirect, total)
    }
}

/// A point effect with optional inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub se: Option<f64>,
    pub p_value: Option<f64>,
}

impl Effect {
    fn point(estimate: f64) -> Self {
        Self {
            estimate,
            se: None,
            p_value: None,
        }
    }

    fn with_se(estimate: f64, se: f64) -> Self {
        let p = if se > 0.0 {
            two_tailed_normal_p(estimate / se)
        } else if estimate == 0.0 {
            1.0
        } else {
            0.0
        };
        Self {
            estimate,
            se: Some(se),
            p_value: Some(p),
        }
    }
}

/// Effects of one regressor. `indirect` is `None` for non-spatial models,
/// where spillovers are not part of the specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsRow {
    pub regressor: String,
    pub direct: Effect,
    pub indirect: Option<Effect>,
    pub total: Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsTable {
    pub model: ModelKind,
    pub rows: Vec<EffectsRow>,
    /// Accepted simulation draws (0 when no simulation was run).
    pub draws: usize,
    /// Draws discarded because ρ fell outside the admissible interval.
    pub rejected_draws: usize,
    pub seed: Option<u64>,
}

impl EffectsTable {
    pub fn row(&self, regressor: &str) -> Option<&EffectsRow> {
        self.rows.iter().find(|r| r.regressor == regressor)
    }
}

fn has_feedback(fit: &FitResult) -> bool {
    matches!(fit.kind, ModelKind::Sar | ModelKind::Sdm)
}

/// Point decomposition for every regressor of `fit`.
pub fn decompose(fit: &FitResult, w: &WeightMatrix) -> Result<EffectsTable> {
    if !has_feedback(fit) {
        let rows = fit
            .regressor_names
            .iter()
            .zip(&fit.beta)
            .map(|(name, &b)| EffectsRow {
                regressor: name.clone(),
                direct: Effect::point(b),
                indirect: None,
                total: Effect::point(b),
            })
            .collect();
        return Ok(EffectsTable {
            model: fit.kind,
            rows,
            draws: 0,
            rejected_draws: 0,
            seed: None,
        });
    }
    let rho = fit.rho.expect("lag models carry ρ");
    check_rho(rho, w)?;
    let summary = MultiplierSummary::new(rho, w)?;
    let rows = fit
        .regressor_names
        .iter()
        .zip(&fit.beta)
        .map(|(name, &b)| {
            let (d, i, t) = summary.effects(b, fit.gamma_for(name));
            EffectsRow {
                regressor: name.clone(),
                direct: Effect::point(d),
                indirect: Some(Effect::point(i)),
                total: Effect::point(t),
            }
        })
        .collect();
    Ok(EffectsTable {
        model: fit.kind,
        rows,
        draws: 0,
        rejected_draws: 0,
        seed: None,
    })
}

/// Decomposition with standard errors from `draws` parameter vectors sampled
/// from the asymptotic normal distribution of `(β, γ, ρ)`.
///
/// For models without a `Wy` term the effects are the coefficients and their
/// standard errors are taken from the fit directly.
pub fn effects_inference(fit: &FitResult, w: &WeightMatrix, draws: usize, seed: u64) -> Result<EffectsTable> {
    if draws < MIN_DRAWS {
        return Err(Error::Usage(format!("effect inference needs at least {MIN_DRAWS} draws, got {draws}")));
    }
    if !has_feedback(fit) {
        let rows = fit
            .regressor_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let e = Effect::with_se(fit.beta[j], fit.se.beta[j]);
                EffectsRow {
                    regressor: name.clone(),
                    direct: e,
                    indirect: None,
                    total: e,
                }
            })
            .collect();
        return Ok(EffectsTable {
            model: fit.kind,
            rows,
            draws: 0,
            rejected_draws: 0,
            seed: None,
        });
    }

    let point = decompose(fit, w)?;
    let (lo, hi) = w.admissible_interval()?;
    let p = fit.covariance.nrows();
    let rho_idx = fit.spatial_index().expect("lag models carry ρ");
    let mean: Vec<f64> = fit
        .beta
        .iter()
        .chain(&fit.gamma)
        .copied()
        .chain(std::iter::once(fit.rho.unwrap()))
        .collect();
    let root = psd_sqrt(&fit.covariance);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(draws);
    let mut rejected = 0usize;
    while accepted.len() < draws {
        let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
        let shock = &root * z;
        let theta: Vec<f64> = mean.iter().zip(shock.iter()).map(|(m, s)| m + s).collect();
        if theta[rho_idx] > lo && theta[rho_idx] < hi {
            accepted.push(theta);
        } else {
            rejected += 1;
            if rejected > draws {
                return Err(Error::Inference(format!(
                    "more than half of the parameter draws ({rejected}) had inadmissible ρ"
                )));
            }
        }
    }

    let k = fit.beta.len();
    let gamma_idx: Vec<Option<usize>> = fit.regressor_names.iter().map(|r| fit.gamma_index(r)).collect();
    let simulated: Vec<Vec<(f64, f64, f64)>> = accepted
        .par_iter()
        .map(|theta| {
            let summary = MultiplierSummary::new(theta[rho_idx], w)?;
            Ok((0..k)
                .map(|j| summary.effects(theta[j], gamma_idx[j].map(|g| theta[g]).unwrap_or(0.0)))
                .collect())
        })
        .collect::<Result<_>>()?;

    let sd = |f: &dyn Fn(&(f64, f64, f64)) -> f64, j: usize| -> f64 {
        // deviations from the first draw, so identical draws give exactly 0
        let x0 = f(&simulated[0][j]);
        let d: Vec<f64> = simulated.iter().map(|row| f(&row[j]) - x0).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let ss = d.iter().map(|v| v * v).sum::<f64>() - d.len() as f64 * m * m;
        (ss.max(0.0) / (d.len() - 1) as f64).sqrt()
    };
    let rows = point
        .rows
        .iter()
        .enumerate()
        .map(|(j, r)| EffectsRow {
            regressor: r.regressor.clone(),
            direct: Effect::with_se(r.direct.estimate, sd(&|e| e.0, j)),
            indirect: r.indirect.map(|ind| Effect::with_se(ind.estimate, sd(&|e| e.1, j))),
            total: Effect::with_se(r.total.estimate, sd(&|e| e.2, j)),
        })
        .collect();
    Ok(EffectsTable {
        model: fit.kind,
        rows,
        draws,
        rejected_draws: rejected,
        seed: Some(seed),
    })
}

/// Conditional convergence implied by the total effect `B` of the lagged level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub b: f64,
    /// `-ln(B + 1)`
    pub rate: f64,
    /// Whether `B` is significant at 5%, when inference is available.
    pub significant: Option<bool>,
    /// `B > 0`: the lagged level raises growth.
    pub divergent: bool,
}

pub fn convergence_rate(b: f64) -> Result<ConvergenceReport> {
    if !(b > -1.0) || !b.is_finite() {
        return Err(Error::Domain(format!("convergence rate needs B > -1, got {b}")));
    }
    let divergent = b > 0.0;
    if divergent {
        log::warn!("B = {b} > 0 implies divergence");
    }
    Ok(ConvergenceReport {
        b,
        rate: -(b + 1.0).ln(),
        significant: None,
        divergent,
    })
}

impl ConvergenceReport {
    /// Uses the total effect of the lagged carbon-intensity regressor.
    pub fn from_effects(table: &EffectsTable) -> Result<Self> {
        let row = table
            .row(LAGGED_CI)
            .ok_or_else(|| Error::Usage(format!("effects table has no `{LAGGED_CI}` row")))?;
        let mut report = convergence_rate(row.total.estimate)?;
        report.significant = row.total.p_value.map(|p| p < 0.05);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_rate(0.0).unwrap().rate, 0.0);
        assert!((convergence_rate(-0.35).unwrap().rate - 0.43).abs() < 0.005);
        assert!((convergence_rate(-0.20).unwrap().rate - 0.22).abs() < 0.005);
        assert!((convergence_rate(-0.39).unwrap().rate - 0.49).abs() < 0.005);
        assert!(matches!(convergence_rate(-1.0), Err(Error::Domain(_))));
        assert!(matches!(convergence_rate(-1.5), Err(Error::Domain(_))));
        let d = convergence_rate(0.1).unwrap();
        assert!(d.divergent && d.rate < 0.0);
    }

    #[test]
    fn table3_model2_additivity() {
        // printed direct and indirect effects of the lagged level add to the printed total
        let (direct, indirect, total) = (-0.21_f64, -0.14_f64, -0.35_f64);
        assert!((direct + indirect - total).abs() < 1e-12);
    }
}
