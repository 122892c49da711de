//! Levin–Lin–Chu panel unit-root test (common autoregressive root).
//!
//! 1. Per unit, an ADF regression with `p_i` lagged differences (common, or
//!    chosen per unit by the Schwarz criterion). The
//!    difference and the lagged level are each regressed on the
//!    deterministics and lagged differences; the residuals `ê`, `v̂` are
//!    normalized by the ADF residual standard deviation `σ̂_εi`.
//! 2. The long-run standard deviation `σ̂_yi` of `Δy` uses a Bartlett kernel;
//!    `S_N` is the mean of `σ̂_yi / σ̂_εi`.
//! 3. The pooled regression `ẽ = δ ṽ` gives `t_δ`, which is adjusted to
//!
//! ```text
//! t* = (t_δ - N T̃ S_N σ̂⁻² STD(δ̂) μ*_T̃) / σ*_T̃,    T̃ = T - p̄ - 1
//! ```
//!
//! and compared with the left tail of the standard normal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const ADJUSTMENTS: &str = include_str!("../data/llc_adjustments.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Deterministic {
    None,
    #[default]
    Intercept,
    InterceptTrend,
}

impl Deterministic {
    fn columns(self) -> usize {
        match self {
            Deterministic::None => 0,
            Deterministic::Intercept => 1,
            Deterministic::InterceptTrend => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LagChoice {
    Fixed(usize),
    /// `ceil(T^{1/4})` for every unit.
    Auto,
    /// Per-unit Schwarz-criterion selection up to `ceil(T^{1/4})`.
    Schwarz,
}

impl LagChoice {
    /// The common lag order, or the maximum searched by `Schwarz`.
    pub fn resolve(self, t: usize) -> usize {
        match self {
            LagChoice::Fixed(p) => p,
            LagChoice::Auto | LagChoice::Schwarz => (t as f64).powf(0.25).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlcResult {
    pub adjusted_t: f64,
    pub p_value: f64,
    /// Unadjusted pooled t-statistic.
    pub t_delta: f64,
    /// Pooled autoregressive coefficient estimate.
    pub delta: f64,
    pub lags: Vec<usize>,
    /// Bartlett truncation used for the long-run variances.
    pub kernel_lags: usize,
    pub n: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
struct AdjustmentRow {
    t: f64,
    k: usize,
    mean: [f64; 3],
    sd: [f64; 3],
}

fn adjustment_table() -> Vec<AdjustmentRow> {
    ADJUSTMENTS
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |s: &str| s.parse::<f64>().expect("adjustment table is well formed");
            AdjustmentRow {
                t: if f[0] == "inf" { f64::INFINITY } else { num(f[0]) },
                k: f[1].parse().unwrap_or(0),
                mean: [num(f[2]), num(f[4]), num(f[6])],
                sd: [num(f[3]), num(f[5]), num(f[7])],
            }
        })
        .collect()
}

/// `(μ*, σ*, K̄)` at effective length `t_tilde`, linearly interpolated
/// between tabulated lengths and clamped to the first row below it.
fn adjustment(t_tilde: f64, det: Deterministic) -> (f64, f64, usize) {
    let table = adjustment_table();
    let col = det.columns();
    let finite: Vec<&AdjustmentRow> = table.iter().filter(|r| r.t.is_finite()).collect();
    let first = finite[0];
    let last = finite[finite.len() - 1];
    if t_tilde <= first.t {
        if t_tilde < first.t {
            log::warn!("effective T {t_tilde:.1} below the smallest tabulated length; using T = {}", first.t);
        }
        return (first.mean[col], first.sd[col], first.k);
    }
    if t_tilde >= last.t {
        return (last.mean[col], last.sd[col], last.k);
    }
    let hi = finite.iter().position(|r| r.t >= t_tilde).expect("bracketed");
    let (a, b) = (finite[hi - 1], finite[hi]);
    let f = (t_tilde - a.t) / (b.t - a.t);
    (
        a.mean[col] + f * (b.mean[col] - a.mean[col]),
        a.sd[col] + f * (b.sd[col] - a.sd[col]),
        a.k,
    )
}

fn residuals(z: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if z.ncols() == 0 {
        return Ok(v.clone());
    }
    let b = crate::linalg::ols(z, v)?;
    Ok(v - z * b)
}

/// ADF design for one unit: rows are levels `s = p+1 .. T-1`, columns the
/// deterministics followed by `Δy_{s-1}, ..., Δy_{s-p}`.
fn adf_design(y: &[f64], dy: &[f64], p: usize, det: Deterministic) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let obs = y.len() - 1 - p;
    let mut z = DMatrix::zeros(obs, det.columns() + p);
    let mut de = DVector::zeros(obs);
    let mut lv = DVector::zeros(obs);
    for r in 0..obs {
        let s = p + 1 + r;
        de[r] = dy[s - 1];
        lv[r] = y[s - 1];
        let mut c = 0;
        if det.columns() >= 1 {
            z[(r, c)] = 1.0;
            c += 1;
        }
        if det.columns() == 2 {
            z[(r, c)] = s as f64;
            c += 1;
        }
        for l in 1..=p {
            z[(r, c)] = dy[s - 1 - l];
            c += 1;
        }
    }
    (z, de, lv)
}

/// Lag order in `0..=p_max` minimizing the Schwarz criterion of the ADF
/// regression, all candidates fitted on the sample usable at `p_max`.
fn select_lags(y: &[f64], dy: &[f64], p_max: usize, det: Deterministic) -> usize {
    let (z_full, de_full, lv_full) = adf_design(y, dy, p_max, det);
    let m = de_full.len() as f64;
    let mut best = (f64::INFINITY, 0);
    for p in 0..=p_max {
        let cols = det.columns() + p;
        let mut x = z_full.columns(0, cols).insert_column(0, 0.0);
        x.set_column(0, &lv_full);
        let Ok(b) = crate::linalg::ols(&x, &de_full) else { continue };
        let ssr = (&de_full - &x * b).norm_squared();
        let bic = m * (ssr / m).ln() + (x.ncols() as f64) * m.ln();
        if bic < best.0 {
            best = (bic, p);
        }
    }
    best.1
}

/// Runs the test on an `n × T` panel given as one series per unit.
///
/// With [`LagChoice::Schwarz`] each unit gets its own lag order and `T̃`
/// uses their mean.
pub fn llc_test(series: &[Vec<f64>], lags: LagChoice, det: Deterministic) -> Result<LlcResult> {
    let n = series.len();
    if n == 0 {
        return Err(Error::Dimension("empty panel".into()));
    }
    let t = series[0].len();
    if series.iter().any(|s| s.len() != t) {
        return Err(Error::Dimension("unbalanced panel".into()));
    }
    let p_max = lags.resolve(t);
    if t < 6 + p_max {
        return Err(Error::Dimension(format!("LLC needs T ≥ 6 + lags = {}, have T = {t}", 6 + p_max)));
    }
    if series.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in series".into()));
    }

    let diffs: Vec<Vec<f64>> = series.iter().map(|y| y.windows(2).map(|w| w[1] - w[0]).collect()).collect();
    if let Some(unit) = diffs.iter().position(|d| d.iter().all(|v| *v == 0.0)) {
        return Err(Error::ZeroVariance(format!("unit {unit} has a constant series")));
    }
    let unit_lags: Vec<usize> = match lags {
        LagChoice::Fixed(_) | LagChoice::Auto => vec![p_max; n],
        LagChoice::Schwarz => series
            .iter()
            .zip(&diffs)
            .map(|(y, dy)| select_lags(y, dy, p_max, det))
            .collect(),
    };
    let p_bar = unit_lags.iter().sum::<usize>() as f64 / n as f64;
    let t_tilde = t as f64 - p_bar - 1.0;
    let (mu_star, sigma_star, kbar) = adjustment(t_tilde, det);
    let kbar = kbar.min(t - 2);

    let mut e_all = Vec::with_capacity(n * t);
    let mut v_all = Vec::with_capacity(n * t);
    let mut ratio_sum = 0.0;
    for (unit, ((y, dy), &p)) in series.iter().zip(&diffs).zip(&unit_lags).enumerate() {
        let (z, de, lv) = adf_design(y, dy, p, det);
        let e = residuals(&z, &de)?;
        let v = residuals(&z, &lv)?;
        let vv = v.norm_squared();
        if vv == 0.0 {
            return Err(Error::ZeroVariance(format!("unit {unit}: lagged level has no residual variation")));
        }
        let d_i = v.dot(&e) / vv;
        let sigma_e = ((&e - &v * d_i).norm_squared() / (t - p - 1) as f64).sqrt();
        if !(sigma_e > 0.0) {
            return Err(Error::ZeroVariance(format!("unit {unit}: ADF regression fits exactly")));
        }

        let mean_dy = if det == Deterministic::InterceptTrend { dy.iter().sum::<f64>() / dy.len() as f64 } else { 0.0 };
        let c: Vec<f64> = dy.iter().map(|d| d - mean_dy).collect();
        let denom = (t - 1) as f64;
        let autocov = |l: usize| -> f64 { c[l..].iter().zip(&c[..c.len() - l]).map(|(a, b)| a * b).sum::<f64>() / denom };
        let mut lrv = autocov(0);
        for l in 1..=kbar {
            lrv += 2.0 * (1.0 - l as f64 / (kbar as f64 + 1.0)) * autocov(l);
        }
        let sigma_y = lrv.max(0.0).sqrt();
        ratio_sum += sigma_y / sigma_e;

        e_all.extend(e.iter().map(|x| x / sigma_e));
        v_all.extend(v.iter().map(|x| x / sigma_e));
    }

    let s_n = ratio_sum / n as f64;
    let svv: f64 = v_all.iter().map(|v| v * v).sum();
    let sve: f64 = v_all.iter().zip(&e_all).map(|(v, e)| v * e).sum();
    let delta = sve / svv;
    let nt = n as f64 * t_tilde;
    let ssr: f64 = v_all.iter().zip(&e_all).map(|(v, e)| (e - delta * v).powi(2)).sum();
    let sigma2 = ssr / nt;
    let std_delta = (sigma2 / svv).sqrt();
    let t_delta = delta / std_delta;
    let adjusted_t = (t_delta - nt * s_n / sigma2 * std_delta * mu_star) / sigma_star;
    let p_value = Normal::standard().cdf(adjusted_t);
    Ok(LlcResult {
        adjusted_t,
        p_value,
        t_delta,
        delta,
        lags: unit_lags,
        kernel_lags: kbar,
        n,
        t,
    })
}
