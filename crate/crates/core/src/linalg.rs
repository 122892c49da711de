//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance below which a column is treated as a linear
/// combination of the columns before it.
const RANK_TOL: f64 = 1e-10;

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix, dropping eigenvalues
/// whose magnitude is below `rtol` times the largest one.
pub fn symmetric_pinv(m: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let n = m.nrows();
    let mut inv_vals = DVector::zeros(n);
    let mut rank = 0;
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if scale > 0.0 && v.abs() > rtol * scale {
            inv_vals[i] = 1.0 / v;
            rank += 1;
        }
    }
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&inv_vals) * q.transpose(), rank)
}

/// Square root factor `L` of a symmetric positive semi-definite matrix with
/// `L Lᵀ = m`. Negative eigenvalues from rounding are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Checks that the columns of `x` are linearly independent, naming the first
/// offending column and the earlier columns it depends on.
pub fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut accepted: Vec<usize> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVariance(format!(
                "regressor `{}` has no within variation",
                names[j]
            )));
        }
        let mut resid = col.clone();
        for b in &basis {
            let proj = b.dot(&resid);
            resid -= b * proj;
        }
        // second Gram-Schmidt pass for stability
        for b in &basis {
            let proj = b.dot(&resid);
            resid -= b * proj;
        }
        let rnorm = resid.norm();
        if rnorm <= RANK_TOL * norm {
            let depends_on = accepted.iter().map(|&i| names[i].clone()).collect();
            return Err(Error::Rank {
                column: names[j].clone(),
                depends_on,
            });
        }
        basis.push(resid / rnorm);
        accepted.push(j);
    }
    Ok(())
}

/// Ordinary least squares `b = (XᵀX)⁻¹Xᵀy` through a Cholesky solve.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(y);
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Singular("XᵀX is not positive definite".into()))?;
    Ok(chol.solve(&xty))
}

/// Sample mean.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Squared Pearson correlation, clamped into [0, 1]. Returns 0 when either
/// input has no variance.
pub fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
}
