//! Synthetic spatial panels from known SAR/SEM/SDM processes and
//! estimator-validation campaigns.
//!
//! Per period `t` the generative equations are
//!
//! ```text
//! SAR/SDM:  y_t = (I - ρW)⁻¹ (X_t β + W X_t γ + μ + ε_t)
//! SEM:      y_t = X_t β + μ + (I - λW)⁻¹ ε_t
//! ```
//!
//! with `ε_it ~ N(0, σ²)`, `μ_i ~ N(0, mu_scale²)` and every regressor an
//! independent stationary AR(1) per country,
//! `x_it = a x_i,t-1 + η_it`, `η ~ N(0, 1)`, started from its stationary law.
//!
//! The first regressor is named [`LAGGED_CI`] so that convergence rates can
//! be read off any fit; the rest are `x2, x3, ...`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RegressionFrame, LAGGED_CI};
use crate::effects::{convergence_rate, decompose};
use crate::error::{Error, Result};
use crate::spatialpanel::{fit, FitResult, ModelKind, ModelSpec};
use crate::weights::WeightMatrix;

/// Smallest campaign size.
pub const MIN_REPS: usize = 50;
/// Largest tolerated share of failed replications per estimator.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone)]
pub enum WeightSource {
    /// Symmetric random graph with edge probability `expected_degree / (n - 1)`
    /// and proximities uniform on `[0.5, 1.5]`, row-standardized.
    Random { expected_degree: f64 },
    Given(WeightMatrix),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    /// One of SAR, SEM, SDM.
    pub model: ModelKind,
    /// ρ for SAR/SDM, λ for SEM.
    pub spatial: f64,
    pub beta: Vec<f64>,
    /// Coefficients of `W x_j` for the first `gamma.len()` regressors (SDM only).
    pub gamma: Vec<f64>,
    pub sigma: f64,
    pub mu_scale: f64,
    /// AR(1) coefficient of the regressors.
    pub x_ar: f64,
    pub weights: WeightSource,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            t: 17,
            model: ModelKind::Sdm,
            spatial: 0.4,
            beta: vec![-0.2, 0.1],
            gamma: vec![-0.1],
            sigma: 0.1,
            mu_scale: 1.0,
            x_ar: 0.5,
            weights: WeightSource::Random { expected_degree: 8.0 },
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn regressor_names(&self) -> Vec<String> {
        (0..self.beta.len())
            .map(|j| if j == 0 { LAGGED_CI.to_string() } else { format!("x{}", j + 1) })
            .collect()
    }

    /// Names of the regressors that enter with a spatial lag.
    pub fn lagged_names(&self) -> Vec<String> {
        self.regressor_names().into_iter().take(self.gamma.len()).collect()
    }

    fn validate(&self) -> Result<()> {
        if !matches!(self.model, ModelKind::Sar | ModelKind::Sem | ModelKind::Sdm) {
            return Err(Error::Usage(format!("cannot simulate a {} process", self.model)));
        }
        if self.n < 3 || self.t < 2 {
            return Err(Error::Dimension(format!("need n ≥ 3 and T ≥ 2, got n = {}, T = {}", self.n, self.t)));
        }
        if self.beta.is_empty() {
            return Err(Error::Usage("at least one regressor is required".into()));
        }
        if self.gamma.len() > self.beta.len() {
            return Err(Error::Usage("more γ than β coefficients".into()));
        }
        if !self.gamma.is_empty() && self.model != ModelKind::Sdm {
            return Err(Error::Usage(format!("γ is only part of the SDM, not {}", self.model)));
        }
        if !(self.sigma > 0.0) || !(self.mu_scale >= 0.0) {
            return Err(Error::Domain("sigma must be positive and mu_scale nonnegative".into()));
        }
        if !(self.x_ar.abs() < 1.0) {
            return Err(Error::Domain(format!("regressor AR coefficient {} is not stationary", self.x_ar)));
        }
        if self.beta.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        if let WeightSource::Given(w) = &self.weights {
            if w.n() != self.n {
                return Err(Error::Dimension(format!("weights are {}×{}, n = {}", w.n(), w.n(), self.n)));
            }
        }
        Ok(())
    }

    /// The weight matrix the configuration refers to; random graphs are drawn
    /// from `seed` alone.
    pub fn weight_matrix(&self) -> Result<WeightMatrix> {
        match &self.weights {
            WeightSource::Given(w) => Ok(w.clone()),
            WeightSource::Random { expected_degree } => random_weights(self.n, *expected_degree, self.seed),
        }
    }
}

/// Symmetric random proximity graph; isolated nodes get one random partner.
pub fn random_weights(n: usize, expected_degree: f64, seed: u64) -> Result<WeightMatrix> {
    if n < 3 {
        return Err(Error::Dimension(format!("random graph needs n ≥ 3, got {n}")));
    }
    if !(expected_degree > 0.0) {
        return Err(Error::Domain(format!("expected degree must be positive, got {expected_degree}")));
    }
    let p = (expected_degree / (n - 1) as f64).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                let v = rng.random_range(0.5..1.5);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
    }
    for i in 0..n {
        if s.row(i).sum() == 0.0 {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let v = rng.random_range(0.5..1.5);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let labels = (0..n).map(|i| format!("u{:03}", i + 1)).collect();
    WeightMatrix::from_raw(labels, s)
}

/// A generated panel with the unobserved components that produced it.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub frame: RegressionFrame,
    /// `ε`, stacked like `frame.y`.
    pub shocks: Vec<f64>,
    pub fixed_effects: Vec<f64>,
    pub weights: WeightMatrix,
}

pub fn simulate_panel(cfg: &SimConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let w = cfg.weight_matrix()?;
    let (frame, shocks, mu) = simulate_with(cfg, &w, cfg.seed)?;
    Ok(SimulatedPanel {
        frame,
        shocks,
        fixed_effects: mu,
        weights: w,
    })
}

fn simulate_with(cfg: &SimConfig, w: &WeightMatrix, seed: u64) -> Result<(RegressionFrame, Vec<f64>, Vec<f64>)> {
    if !w.is_admissible(cfg.spatial) {
        let (lo, hi) = w.admissible_interval()?;
        return Err(Error::Domain(format!(
            "spatial parameter {} outside the admissible interval ({lo:.4}, {hi:.4})",
            cfg.spatial
        )));
    }
    let (n, t, k) = (cfg.n, cfg.t, cfg.beta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shock = Normal::new(0.0, cfg.sigma).expect("sigma validated");
    let stationary_sd = 1.0 / (1.0 - cfg.x_ar * cfg.x_ar).sqrt();

    let mu: Vec<f64> = (0..n)
        .map(|_| cfg.mu_scale * std_normal(&mut rng))
        .collect();
    let mut x = DMatrix::zeros(n * t, k);
    for j in 0..k {
        for i in 0..n {
            let mut v: f64 = stationary_sd * std_normal(&mut rng);
            for p in 0..t {
                if p > 0 {
                    v = cfg.x_ar * v + std_normal(&mut rng);
                }
                x[(p * n + i, j)] = v;
            }
        }
    }
    let eps: Vec<f64> = (0..n * t).map(|_| shock.sample(&mut rng)).collect();

    let rho = cfg.spatial;
    let filter = (DMatrix::<f64>::identity(n, n) - w.w() * rho).lu();
    let beta = DVector::from_column_slice(&cfg.beta);
    let mut y = vec![0.0; n * t];
    for p in 0..t {
        let xt = x.rows(p * n, n).into_owned();
        let e = DVector::from_column_slice(&eps[p * n..(p + 1) * n]);
        let mut systematic = &xt * &beta + DVector::from_column_slice(&mu);
        for (j, g) in cfg.gamma.iter().enumerate() {
            systematic += (w.w() * xt.column(j)) * *g;
        }
        let yt = match cfg.model {
            ModelKind::Sem => {
                systematic
                    + filter
                        .solve(&e)
                        .ok_or_else(|| Error::Singular("I - λW is singular".into()))?
            }
            _ => filter
                .solve(&(systematic + e))
                .ok_or_else(|| Error::Singular("I - ρW is singular".into()))?,
        };
        y[p * n..(p + 1) * n].copy_from_slice(yt.as_slice());
    }
    let countries = w.labels().to_vec();
    let years = (1..=t as i32).collect();
    let frame = RegressionFrame::new(y, x, cfg.regressor_names(), countries, years)?;
    Ok((frame, eps, mu))
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Seed of replication `rep` derived from the campaign seed (SplitMix64 of
/// `seed + rep + 1`).
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    let mut z = seed.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Share of replications whose 95% interval `±1.96 se` covers the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub model: ModelKind,
    pub successes: usize,
    pub failures: usize,
    pub parameters: Vec<ParameterSummary>,
    /// Mean of `-ln(1 + B)` over replications where it is defined.
    pub mean_convergence_rate: Option<f64>,
}

impl EstimatorSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub dgp: ModelKind,
    pub n: usize,
    pub t: usize,
    pub spatial: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Convergence rate implied by the true total effect of the first regressor.
    pub true_convergence_rate: Option<f64>,
    pub estimators: Vec<EstimatorSummary>,
    /// Whether FE's mean convergence rate is below SDM's; `None` unless both ran.
    pub fe_rate_below_sdm: Option<bool>,
}

impl CampaignReport {
    pub fn estimator(&self, model: ModelKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.model == model)
    }
}

/// `(name, estimate, se)` for every parameter of a fit.
fn estimates(fit: &FitResult) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for (j, name) in fit.regressor_names.iter().enumerate() {
        out.push((format!("beta_{name}"), fit.beta[j], fit.se.beta[j]));
    }
    for (j, name) in fit.lagged_regressors.iter().enumerate() {
        out.push((format!("gamma_{name}"), fit.gamma[j], fit.se.gamma[j]));
    }
    if let (Some(r), Some(se)) = (fit.rho, fit.se.rho) {
        out.push(("rho".into(), r, se));
    }
    if let (Some(l), Some(se)) = (fit.lambda, fit.se.lambda) {
        out.push(("lambda".into(), l, se));
    }
    out
}

/// True value of a named parameter when the estimator's model nests the DGP.
fn truth(cfg: &SimConfig, estimator: ModelKind, name: &str) -> Option<f64> {
    let names = cfg.regressor_names();
    if let Some(r) = name.strip_prefix("beta_") {
        return names.iter().position(|n| n == r).map(|j| cfg.beta[j]);
    }
    if let Some(r) = name.strip_prefix("gamma_") {
        let j = names.iter().position(|n| n == r)?;
        return match cfg.model {
            ModelKind::Sdm => Some(cfg.gamma.get(j).copied().unwrap_or(0.0)),
            ModelKind::Sar => Some(0.0),
            ModelKind::Sem => Some(-cfg.spatial * cfg.beta[j]),
            _ => None,
        };
    }
    match (name, cfg.model, estimator) {
        ("rho", ModelKind::Sar | ModelKind::Sdm, _) => Some(cfg.spatial),
        ("rho", ModelKind::Sem, ModelKind::Sdm) => Some(cfg.spatial),
        ("lambda", ModelKind::Sem, _) => Some(cfg.spatial),
        _ => None,
    }
}

fn true_total_effect(cfg: &SimConfig, w: &WeightMatrix) -> Result<f64> {
    let b = cfg.beta[0];
    if cfg.model == ModelKind::Sem {
        return Ok(b);
    }
    let g = cfg.gamma.first().copied().unwrap_or(0.0);
    let n = w.n();
    let ones = DVector::from_element(n, 1.0);
    let filter = (DMatrix::<f64>::identity(n, n) - w.w() * cfg.spatial).lu();
    let m1 = filter.solve(&ones).ok_or_else(|| Error::Singular("I - ρW".into()))?;
    let mw1 = filter.solve(&(w.w() * &ones)).ok_or_else(|| Error::Singular("I - ρW".into()))?;
    Ok((b * m1.sum() + g * mw1.sum()) / n as f64)
}

struct FitOutcome {
    estimates: Vec<(String, f64, f64)>,
    rate: Option<f64>,
}

/// Lag list used when fitting an SDM in a campaign: the DGP's lagged
/// regressors, or all regressors when the DGP has none.
fn sdm_lags(cfg: &SimConfig) -> Vec<String> {
    if cfg.gamma.is_empty() {
        cfg.regressor_names()
    } else {
        cfg.lagged_names()
    }
}

fn fit_one(frame: &RegressionFrame, w: &WeightMatrix, model: ModelKind, lags: &[String]) -> Result<FitOutcome> {
    let spec = match model {
        ModelKind::Sdm => ModelSpec::new(model, frame, Some(w), lags.to_vec()),
        m if m.is_spatial() => ModelSpec::new(m, frame, Some(w), Vec::new()),
        m => ModelSpec::new(m, frame, None, Vec::new()),
    };
    let fit = fit(&spec)?;
    let table = decompose(&fit, w)?;
    let rate = table
        .row(LAGGED_CI)
        .and_then(|r| convergence_rate(r.total.estimate).ok())
        .map(|c| c.rate);
    Ok(FitOutcome {
        estimates: estimates(&fit),
        rate,
    })
}

/// Runs `reps` seeded replications of `cfg`, fitting every estimator on each.
///
/// Replication `r` draws its data from [`rep_seed`]`(cfg.seed, r)`; the weight
/// matrix is drawn once and shared. Replications run in parallel and are
/// aggregated in replication order.
pub fn run_campaign(cfg: &SimConfig, reps: usize, estimators: &[ModelKind]) -> Result<CampaignReport> {
    if reps < MIN_REPS {
        return Err(Error::Usage(format!("a campaign needs at least {MIN_REPS} replications, got {reps}")));
    }
    if estimators.is_empty() {
        return Err(Error::Usage("no estimators requested".into()));
    }
    cfg.validate()?;
    let w = cfg.weight_matrix()?;
    simulate_with(cfg, &w, rep_seed(cfg.seed, 0))?;
    let lags = sdm_lags(cfg);

    let outcomes: Vec<Vec<Result<FitOutcome>>> = (0..reps)
        .into_par_iter()
        .map(|r| match simulate_with(cfg, &w, rep_seed(cfg.seed, r)) {
            Ok((frame, _, _)) => estimators.iter().map(|&m| fit_one(&frame, &w, m, &lags)).collect(),
            Err(e) => estimators
                .iter()
                .map(|_| Err(Error::Campaign(format!("simulation failed: {e}"))))
                .collect(),
        })
        .collect();

    let mut summaries = Vec::with_capacity(estimators.len());
    for (e, &model) in estimators.iter().enumerate() {
        let ok: Vec<&FitOutcome> = outcomes.iter().filter_map(|o| o[e].as_ref().ok()).collect();
        let failures = reps - ok.len();
        for (r, o) in outcomes.iter().enumerate() {
            if let Err(err) = &o[e] {
                log::warn!("replication {r}, {model}: {err}");
            }
        }
        if failures as f64 > MAX_FAILURE_SHARE * reps as f64 {
            return Err(Error::Campaign(format!(
                "{model} failed in {failures} of {reps} replications"
            )));
        }
        let mut parameters = Vec::new();
        if let Some(first) = ok.first() {
            for (pi, (name, _, _)) in first.estimates.iter().enumerate() {
                let Some(tv) = truth(cfg, model, name) else { continue };
                let m = ok.len() as f64;
                let est: Vec<f64> = ok.iter().map(|o| o.estimates[pi].1).collect();
                let mean = est.iter().sum::<f64>() / m;
                let rmse = (est.iter().map(|v| (v - tv).powi(2)).sum::<f64>() / m).sqrt();
                let covered = ok
                    .iter()
                    .filter(|o| (o.estimates[pi].1 - tv).abs() <= 1.96 * o.estimates[pi].2)
                    .count();
                parameters.push(ParameterSummary {
                    name: name.clone(),
                    truth: tv,
                    mean,
                    bias: mean - tv,
                    rmse,
                    coverage: covered as f64 / m,
                });
            }
        }
        let rates: Vec<f64> = ok.iter().filter_map(|o| o.rate).collect();
        let mean_convergence_rate = if rates.is_empty() {
            None
        } else {
            Some(rates.iter().sum::<f64>() / rates.len() as f64)
        };
        summaries.push(EstimatorSummary {
            model,
            successes: ok.len(),
            failures,
            parameters,
            mean_convergence_rate,
        });
    }

    let rate_of = |m: ModelKind| summaries.iter().find(|s| s.model == m).and_then(|s| s.mean_convergence_rate);
    let fe_rate_below_sdm = match (rate_of(ModelKind::Fe), rate_of(ModelKind::Sdm)) {
        (Some(fe), Some(sdm)) => Some(fe < sdm),
        _ => None,
    };
    let true_convergence_rate = convergence_rate(true_total_effect(cfg, &w)?).ok().map(|c| c.rate);
    Ok(CampaignReport {
        dgp: cfg.model,
        n: cfg.n,
        t: cfg.t,
        spatial: cfg.spatial,
        beta: cfg.beta.clone(),
        gamma: cfg.gamma.clone(),
        reps,
        seed: cfg.seed,
        true_convergence_rate,
        estimators: summaries,
        fe_rate_below_sdm,
    })
}
