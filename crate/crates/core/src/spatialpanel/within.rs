//! Within (time-demeaning) transformation for period-stacked panels.

use nalgebra::{DMatrix, DVector};

use crate::weights::WeightMatrix;

/// Unit means over time of a period-stacked vector (`t * n + i`).
pub(crate) fn unit_means(v: &[f64], n: usize, t: usize) -> Vec<f64> {
    let mut m = vec![0.0; n];
    for s in 0..t {
        for i in 0..n {
            m[i] += v[s * n + i];
        }
    }
    m.iter_mut().for_each(|x| *x /= t as f64);
    m
}

pub(crate) fn demean(v: &[f64], n: usize, t: usize) -> DVector<f64> {
    let m = unit_means(v, n, t);
    DVector::from_iterator(v.len(), v.iter().enumerate().map(|(r, x)| x - m[r % n]))
}

pub(crate) fn demean_columns(x: &DMatrix<f64>, n: usize, t: usize) -> DMatrix<f64> {
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        out.set_column(j, &demean(&col, n, t));
    }
    out
}

/// Column means per unit: an `n × k` matrix.
pub(crate) fn unit_column_means(x: &DMatrix<f64>, n: usize, t: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        for (i, m) in unit_means(&col, n, t).into_iter().enumerate() {
            out[(i, j)] = m;
        }
    }
    out
}

/// Applies `I_T ⊗ W` to a period-stacked vector.
pub(crate) fn spatial_lag(w: &WeightMatrix, v: &DVector<f64>, t: usize) -> DVector<f64> {
    let n = w.n();
    let mut out = DVector::zeros(v.len());
    for s in 0..t {
        let block = v.rows(s * n, n);
        out.rows_mut(s * n, n).copy_from(&(w.w() * block));
    }
    out
}

pub(crate) fn spatial_lag_columns(w: &WeightMatrix, x: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        out.set_column(j, &spatial_lag(w, &col, t));
    }
    out
}

/// Applies `I_T ⊗ M` for an arbitrary `n × n` matrix.
pub(crate) fn apply_blockwise(m: &DMatrix<f64>, v: &DVector<f64>, t: usize) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(v.len());
    for s in 0..t {
        out.rows_mut(s * n, n).copy_from(&(m * v.rows(s * n, n)));
    }
    out
}
