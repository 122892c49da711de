//! Global spatial autocorrelation: Moran's I and Geary's C.
//!
//! With deviations `e_i = z_i - z̄`, `m2 = Σ e_i²` and `S0 = Σ_ij w_ij`:
//!
//! ```text
//! I = (n / S0) · Σ_{i≠j} w_ij e_i e_j / m2
//! C = (n - 1) · Σ_ij w_ij (z_i - z_j)² / (2 S0 m2)
//! ```
//!
//! Null moments (Cliff and Ord) use `S1 = ½ Σ_ij (w_ij + w_ji)²` and
//! `S2 = Σ_i (w_i· + w_·i)²`:
//!
//! ```text
//! E[I] = -1/(n-1)                 E[C] = 1
//! Var_N[I] = (n² S1 - n S2 + 3 S0²) / ((n² - 1) S0²) - E[I]²
//! Var_N[C] = ((2 S1 + S2)(n - 1) - 4 S0²) / (2 (n + 1) S0²)
//! ```
//!
//! The randomization moments additionally depend on the sample kurtosis
//! `b2 = n Σ e⁴ / m2²`:
//!
//! ```text
//! Var_R[I] = [n((n² - 3n + 3) S1 - n S2 + 3 S0²) - b2((n² - n) S1 - 2n S2 + 6 S0²)]
//!            / ((n - 1)(n - 2)(n - 3) S0²) - E[I]²
//! Var_R[C] = [(n - 1) S1 (n² - 3n + 3 - (n - 1) b2)
//!             - ¼ (n - 1) S2 (n² + 3n - 6 - (n² - n + 2) b2)
//!             + S0² (n² - 3 + (n - 1)² b2)] / (n (n - 2)(n - 3) S0²)
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::weights::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tails {
    One,
    Two,
}

/// A test statistic with its null moments and p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub expectation: f64,
    pub sd: f64,
    pub z: f64,
    pub p_value: f64,
    pub tails: Tails,
    /// Degrees of freedom for chi-squared tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
}

impl TestResult {
    /// Normal-approximation result, two-tailed.
    pub fn normal(name: &str, statistic: f64, expectation: f64, sd: f64) -> Self {
        let z = if sd > 0.0 { (statistic - expectation) / sd } else { 0.0 };
        Self {
            name: name.to_string(),
            statistic,
            expectation,
            sd,
            z,
            p_value: two_tailed_normal_p(z),
            tails: Tails::Two,
            df: None,
        }
    }
}

pub(crate) fn two_tailed_normal_p(z: f64) -> f64 {
    let nd = Normal::standard();
    (2.0 * nd.cdf(-z.abs())).clamp(0.0, 1.0)
}

/// Which null distribution the analytic variance assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NullMoments {
    /// z drawn from a normal population.
    #[default]
    Normality,
    /// All permutations of the observed z equally likely.
    Randomization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    MoranI,
    GearyC,
}

struct WeightSums {
    s0: f64,
    s1: f64,
    s2: f64,
}

fn weight_sums(w: &WeightMatrix) -> WeightSums {
    let m = w.w();
    let n = w.n();
    let s0 = m.sum();
    let mut s1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)] + m[(j, i)];
            s1 += v * v;
        }
    }
    s1 *= 0.5;
    let s2 = (0..n)
        .map(|i| {
            let v = m.row(i).sum() + m.column(i).sum();
            v * v
        })
        .sum();
    WeightSums { s0, s1, s2 }
}

fn validate(z: &[f64], w: &WeightMatrix) -> Result<Vec<f64>> {
    let n = w.n();
    if z.len() != n {
        return Err(Error::Dimension(format!("{} values for {} weight rows", z.len(), n)));
    }
    if n < 3 {
        return Err(Error::Dimension("need at least 3 observations".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in tested variable".into()));
    }
    let mean = z.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = z.iter().map(|v| v - mean).collect();
    let scale = z.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let spread = dev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if spread == 0.0 || spread <= 1e-14 * scale {
        return Err(Error::ZeroVariance("tested variable is constant".into()));
    }
    if w.total_weight() <= 0.0 {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    Ok(dev)
}

fn moran_value(dev: &[f64], w: &WeightMatrix, s0: f64) -> f64 {
    let m = w.w();
    let n = dev.len();
    let m2: f64 = dev.iter().map(|e| e * e).sum();
    let mut cross = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                row += m[(i, j)] * dev[j];
            }
        }
        cross += dev[i] * row;
    }
    (n as f64 / s0) * cross / m2
}

fn geary_value(z: &[f64], dev: &[f64], w: &WeightMatrix, s0: f64) -> f64 {
    let m = w.w();
    let n = dev.len();
    let m2: f64 = dev.iter().map(|e| e * e).sum();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = z[i] - z[j];
            num += m[(i, j)] * d * d;
        }
    }
    (n as f64 - 1.0) * num / (2.0 * s0 * m2)
}

fn kurtosis(dev: &[f64]) -> f64 {
    let n = dev.len() as f64;
    let m2: f64 = dev.iter().map(|e| e * e).sum();
    let m4: f64 = dev.iter().map(|e| e.powi(4)).sum();
    n * m4 / (m2 * m2)
}

/// Moran's I with normality-null inference.
pub fn morans_i(z: &[f64], w: &WeightMatrix) -> Result<TestResult> {
    morans_i_with(z, w, NullMoments::Normality)
}

pub fn morans_i_with(z: &[f64], w: &WeightMatrix, null: NullMoments) -> Result<TestResult> {
    let dev = validate(z, w)?;
    let ws = weight_sums(w);
    let n = dev.len() as f64;
    let stat = moran_value(&dev, w, ws.s0);
    let e = -1.0 / (n - 1.0);
    let s0sq = ws.s0 * ws.s0;
    let var = match null {
        NullMoments::Normality => (n * n * ws.s1 - n * ws.s2 + 3.0 * s0sq) / ((n * n - 1.0) * s0sq) - e * e,
        NullMoments::Randomization => {
            if dev.len() < 4 {
                return Err(Error::Dimension("randomization moments need n ≥ 4".into()));
            }
            let b2 = kurtosis(&dev);
            let a = n * ((n * n - 3.0 * n + 3.0) * ws.s1 - n * ws.s2 + 3.0 * s0sq);
            let b = b2 * ((n * n - n) * ws.s1 - 2.0 * n * ws.s2 + 6.0 * s0sq);
            (a - b) / ((n - 1.0) * (n - 2.0) * (n - 3.0) * s0sq) - e * e
        }
    };
    Ok(TestResult::normal("moran_i", stat, e, var.max(0.0).sqrt()))
}

/// Geary's C with normality-null inference.
pub fn gearys_c(z: &[f64], w: &WeightMatrix) -> Result<TestResult> {
    gearys_c_with(z, w, NullMoments::Normality)
}

pub fn gearys_c_with(z: &[f64], w: &WeightMatrix, null: NullMoments) -> Result<TestResult> {
    let dev = validate(z, w)?;
    let ws = weight_sums(w);
    let n = dev.len() as f64;
    let stat = geary_value(z, &dev, w, ws.s0);
    let s0sq = ws.s0 * ws.s0;
    let var = match null {
        NullMoments::Normality => ((2.0 * ws.s1 + ws.s2) * (n - 1.0) - 4.0 * s0sq) / (2.0 * (n + 1.0) * s0sq),
        NullMoments::Randomization => {
            if dev.len() < 4 {
                return Err(Error::Dimension("randomization moments need n ≥ 4".into()));
            }
            let b2 = kurtosis(&dev);
            let a = (n - 1.0) * ws.s1 * (n * n - 3.0 * n + 3.0 - (n - 1.0) * b2);
            let b = 0.25 * (n - 1.0) * ws.s2 * (n * n + 3.0 * n - 6.0 - (n * n - n + 2.0) * b2);
            let c = s0sq * (n * n - 3.0 + (n - 1.0) * (n - 1.0) * b2);
            (a - b + c) / (n * (n - 2.0) * (n - 3.0) * s0sq)
        }
    };
    Ok(TestResult::normal("geary_c", stat, 1.0, var.max(0.0).sqrt()))
}

/// Permutation inference under spatial randomization.
///
/// The reported `sd` is the standard deviation of the permutation
/// distribution; the two-tailed p-value counts permutations whose distance
/// from the null expectation is at least the observed one.
pub fn permutation_test(
    z: &[f64],
    w: &WeightMatrix,
    statistic: Statistic,
    reps: usize,
    seed: u64,
) -> Result<TestResult> {
    if reps < 99 {
        return Err(Error::Usage(format!("permutation test needs at least 99 replications, got {reps}")));
    }
    let dev = validate(z, w)?;
    let s0 = w.total_weight();
    let n = z.len() as f64;
    let (name, expectation) = match statistic {
        Statistic::MoranI => ("moran_i_permutation", -1.0 / (n - 1.0)),
        Statistic::GearyC => ("geary_c_permutation", 1.0),
    };
    let eval = |zz: &[f64], dd: &[f64]| match statistic {
        Statistic::MoranI => moran_value(dd, w, s0),
        Statistic::GearyC => geary_value(zz, dd, w, s0),
    };
    let observed = eval(z, &dev);
    let obs_dist = (observed - expectation).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm_z = z.to_vec();
    let mut perm_dev = dev.clone();
    let mut idx: Vec<usize> = (0..z.len()).collect();
    let mut extreme = 0usize;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..reps {
        idx.shuffle(&mut rng);
        for (k, &i) in idx.iter().enumerate() {
            perm_z[k] = z[i];
            perm_dev[k] = dev[i];
        }
        let v = eval(&perm_z, &perm_dev);
        sum += v;
        sumsq += v * v;
        if (v - expectation).abs() >= obs_dist - 1e-12 {
            extreme += 1;
        }
    }
    let r = reps as f64;
    let mean = sum / r;
    let sd = ((sumsq - r * mean * mean) / (r - 1.0)).max(0.0).sqrt();
    let z_score = if sd > 0.0 { (observed - expectation) / sd } else { 0.0 };
    Ok(TestResult {
        name: name.to_string(),
        statistic: observed,
        expectation,
        sd,
        z: z_score,
        p_value: (1 + extreme) as f64 / (reps + 1) as f64,
        tails: Tails::Two,
        df: None,
    })
}
