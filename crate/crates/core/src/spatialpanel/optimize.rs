//! Derivative-free maximization of a concentrated log-likelihood over an
//! open interval: a coarse grid locates the best cell, golden-section search
//! refines inside the neighboring cells.

use crate::error::{Error, Result};

pub(crate) const GRID_POINTS: usize = 200;
pub(crate) const TOLERANCE: f64 = 1e-8;

/// Outcome of [`maximize`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Maximum {
    pub arg: f64,
    pub value: f64,
}

/// Maximizes `f` over `(lower, upper)`.
pub(crate) fn maximize(lower: f64, upper: f64, f: impl Fn(f64) -> f64) -> Result<Maximum> {
    let margin = 1e-6 * (upper - lower);
    let (a, b) = (lower + margin, upper - margin);
    let step = (b - a) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| a + step * i as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "log-likelihood is not finite anywhere on ({lower:.6}, {upper:.6})"
            ))
        })?;

    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let (arg, value) = golden_section(lo, hi, &f);
    let (arg, value) = if values[best] > value { (grid[best], values[best]) } else { (arg, value) };
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite log-likelihood {value} at {arg}")));
    }
    if (arg - a).abs() < 10.0 * TOLERANCE || (b - arg).abs() < 10.0 * TOLERANCE {
        return Err(Error::Boundary {
            value: arg,
            lower,
            upper,
        });
    }
    Ok(Maximum { arg, value })
}

fn golden_section(mut a: f64, mut b: f64, f: &impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > TOLERANCE {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
