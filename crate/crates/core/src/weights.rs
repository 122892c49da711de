//! Economic-distance weight matrices built from bilateral value-added trade.
//!
//! The raw proximity between two countries is the total value-added trade
//! between them over the aggregation window,
//!
//! ```text
//! S_ij = Σ_t (exports_{i→j,t} + exports_{j→i,t}),   S_ii = 0,
//! ```
//!
//! which is symmetric by construction. The spatial weight matrix is its row
//! standardization `W = D⁻¹ S` with `D = diag(S·1)`. Because `W` is similar to
//! the symmetric `D^{-1/2} S D^{-1/2}`, its spectrum is real and is computed
//! through a symmetric eigensolver.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::Read;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums when deciding whether a loaded matrix is already
/// row-standardized.
const STANDARDIZED_TOL: f64 = 1e-9;

/// One bilateral value-added export observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin: String,
    pub dest: String,
    pub year: i32,
    pub value: f64,
}

/// Real spectrum of a weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }
}

/// Row-standardized spatial weights together with their symmetric raw base.
#[derive(Debug, Clone, Serialize)]
pub struct WeightMatrix {
    labels: Vec<String>,
    w: DMatrix<f64>,
    s: DMatrix<f64>,
    #[serde(skip)]
    spectrum: OnceLock<Spectrum>,
}

impl PartialEq for WeightMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.w == other.w && self.s == other.s
    }
}

impl WeightMatrix {
    /// Validates a symmetric nonnegative proximity matrix and row-standardizes it.
    pub fn from_raw(labels: Vec<String>, s: DMatrix<f64>) -> Result<Self> {
        validate_shape(&labels, &s)?;
        let n = labels.len();
        for i in 0..n {
            for j in 0..n {
                if s[(i, j)] != s[(j, i)] {
                    return Err(Error::Validation(format!(
                        "raw matrix is not symmetric at ({}, {}): {} vs {}",
                        labels[i], labels[j], s[(i, j)], s[(j, i)]
                    )));
                }
            }
        }
        let w = row_standardize(&s);
        Ok(Self::assemble(labels, w, s))
    }

    /// Accepts an already row-standardized matrix. The symmetric base is
    /// recovered up to one positive scale per connected component from
    /// `d_i W_ij = d_j W_ji`; matrices that cannot arise from a symmetric
    /// base are rejected.
    pub fn from_standardized(labels: Vec<String>, w: DMatrix<f64>) -> Result<Self> {
        validate_shape(&labels, &w)?;
        let n = labels.len();
        for i in 0..n {
            let sum: f64 = w.row(i).sum();
            if sum != 0.0 && (sum - 1.0).abs() > STANDARDIZED_TOL {
                return Err(Error::Validation(format!(
                    "row {} sums to {sum}, not 0 or 1",
                    labels[i]
                )));
            }
        }
        let mut d = vec![f64::NAN; n];
        for root in 0..n {
            if !d[root].is_nan() {
                continue;
            }
            d[root] = 1.0;
            let mut queue = VecDeque::from([root]);
            while let Some(i) = queue.pop_front() {
                for j in 0..n {
                    let wij = w[(i, j)];
                    if wij == 0.0 {
                        continue;
                    }
                    let wji = w[(j, i)];
                    if wji == 0.0 {
                        return Err(Error::Validation(format!(
                            "{} → {} has weight but the reverse link is zero; no symmetric base exists",
                            labels[i], labels[j]
                        )));
                    }
                    let dj = d[i] * wij / wji;
                    if d[j].is_nan() {
                        d[j] = dj;
                        queue.push_back(j);
                    } else if ((d[j] - dj) / dj).abs() > 1e-8 {
                        return Err(Error::Validation(
                            "row-standardized matrix is not the standardization of a symmetric base".into(),
                        ));
                    }
                }
            }
        }
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (d[i] * w[(i, j)] + d[j] * w[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Ok(Self::assemble(labels, w, s))
    }

    fn assemble(labels: Vec<String>, w: DMatrix<f64>, s: DMatrix<f64>) -> Self {
        Self {
            labels,
            w,
            s,
            spectrum: OnceLock::new(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// The row-standardized weights.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// The symmetric raw proximity matrix.
    pub fn raw(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Indices of countries without any neighbor.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.w.row(i).iter().all(|&v| v == 0.0)).collect()
    }

    /// Sum of all weights (`S0` in the autocorrelation literature).
    pub fn total_weight(&self) -> f64 {
        self.w.sum()
    }

    /// Weighted degree of each node in the raw proximity graph.
    pub fn weighted_degree(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.s.row(i).sum()).collect()
    }

    /// Eigenvalues of `W`, computed once and cached.
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            let n = self.n();
            let d: Vec<f64> = self.weighted_degree();
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if d[i] > 0.0 && d[j] > 0.0 {
                        m[(i, j)] = self.s[(i, j)] / (d[i] * d[j]).sqrt();
                    }
                }
            }
            let mut eigenvalues: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
            eigenvalues.sort_by(|a, b| a.total_cmp(b));
            Spectrum { eigenvalues }
        })
    }

    /// Open interval `(1/ω_min, 1/ω_max)` of spatial parameters for which
    /// `I - ρW` is nonsingular.
    pub fn admissible_interval(&self) -> Result<(f64, f64)> {
        let sp = self.spectrum();
        let (lo, hi) = (sp.min(), sp.max());
        if !(hi > 1e-12) || !(lo < -1e-12) {
            return Err(Error::DegenerateWeights(
                "weight matrix has no positive and negative eigenvalue pair".into(),
            ));
        }
        Ok((1.0 / lo, 1.0 / hi))
    }

    pub fn is_admissible(&self, rho: f64) -> bool {
        match self.admissible_interval() {
            Ok((lo, hi)) => rho > lo && rho < hi,
            Err(_) => false,
        }
    }

    /// `ln|I - ρW| = Σ ln(1 - ρ ω_i)`.
    pub fn log_det(&self, rho: f64) -> f64 {
        self.spectrum().eigenvalues.iter().map(|&w| (1.0 - rho * w).ln()).sum()
    }

    /// Restricts (and reorders) the matrix to `labels`, row-standardizing the
    /// corresponding block of the raw base again.
    pub fn select(&self, labels: &[String]) -> Result<Self> {
        if labels == self.labels.as_slice() {
            return Ok(self.clone());
        }
        let index: HashMap<&str, usize> = self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                index
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("country `{l}` not present in weight matrix")))
            })
            .collect::<Result<_>>()?;
        let n = idx.len();
        let s = DMatrix::from_fn(n, n, |i, j| self.s[(idx[i], idx[j])]);
        Self::from_raw(labels.to_vec(), s)
    }

    /// Writes `W` as a labeled CSV matrix.
    pub fn write_matrix(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.matrix_csv()).map_err(|e| Error::io(path, e))
    }

    /// Labeled CSV rendering of `W`; values use the shortest representation
    /// that parses back to the same `f64`.
    pub fn matrix_csv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&csv_field(l));
            for j in 0..self.n() {
                let _ = write!(out, ",{}", self.w[(i, j)]);
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn validate_shape(labels: &[String], m: &DMatrix<f64>) -> Result<()> {
    let n = labels.len();
    if m.nrows() != m.ncols() {
        return Err(Error::Validation(format!("matrix is {}×{}, not square", m.nrows(), m.ncols())));
    }
    if m.nrows() != n {
        return Err(Error::Validation(format!("{} labels for a {}×{} matrix", n, m.nrows(), m.ncols())));
    }
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::Validation(format!("duplicate label `{l}`")));
        }
    }
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "entry ({}, {}) = {v} is negative or not finite",
                    labels[i], labels[j]
                )));
            }
        }
        if m[(i, i)] != 0.0 {
            return Err(Error::Validation(format!("nonzero diagonal for `{}`", labels[i])));
        }
    }
    Ok(())
}

/// Divides every nonzero row by its sum; zero rows stay zero.
pub fn row_standardize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = m.clone();
    for i in 0..m.nrows() {
        let sum: f64 = m.row(i).sum();
        if sum > 0.0 {
            for j in 0..m.ncols() {
                w[(i, j)] = m[(i, j)] / sum;
            }
        }
    }
    w
}

/// Counters describing how the flow records were used.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildDiagnostics {
    pub used: usize,
    /// Records whose (origin, dest, year) had already been seen; summed.
    pub duplicates: usize,
    pub unknown_country: usize,
    pub self_flows: usize,
    pub outside_period: usize,
    /// Labels of countries with no trade partner.
    pub isolated: Vec<String>,
}

/// Aggregates bilateral flows over `period` into a weight matrix over `labels`.
pub fn build_weights(
    flows: &[FlowRecord],
    labels: &[String],
    period: RangeInclusive<i32>,
) -> Result<(WeightMatrix, BuildDiagnostics)> {
    if flows.is_empty() {
        return Err(Error::Construction("no flow records".into()));
    }
    if period.is_empty() {
        return Err(Error::Construction(format!(
            "empty aggregation period {}..={}",
            period.start(),
            period.end()
        )));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    if index.len() != labels.len() {
        return Err(Error::Construction("country labels are not unique".into()));
    }
    let n = labels.len();
    let mut diag = BuildDiagnostics::default();
    let mut seen: BTreeMap<(usize, usize, i32), ()> = BTreeMap::new();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for f in flows {
        if !f.value.is_finite() || f.value < 0.0 {
            return Err(Error::Construction(format!(
                "negative or non-finite flow {} → {} in {}: {}",
                f.origin, f.dest, f.year, f.value
            )));
        }
        if !period.contains(&f.year) {
            diag.outside_period += 1;
            continue;
        }
        let (Some(&i), Some(&j)) = (index.get(f.origin.as_str()), index.get(f.dest.as_str())) else {
            diag.unknown_country += 1;
            continue;
        };
        if i == j {
            diag.self_flows += 1;
            continue;
        }
        if seen.insert((i, j, f.year), ()).is_some() {
            diag.duplicates += 1;
        }
        diag.used += 1;
        s[(i, j)] += f.value;
        s[(j, i)] += f.value;
    }
    if diag.used == 0 {
        return Err(Error::Construction("no flow records between listed countries in the period".into()));
    }
    if diag.duplicates > 0 {
        log::warn!("{} duplicate flow records were summed", diag.duplicates);
    }
    let wm = WeightMatrix::from_raw(labels.to_vec(), s)?;
    diag.isolated = wm.isolated().into_iter().map(|i| labels[i].clone()).collect();
    for l in &diag.isolated {
        log::warn!("country {l} has no trade partner; its weight row is zero");
    }
    Ok((wm, diag))
}

/// Reads a flow CSV with columns `origin,dest,year,value`.
pub fn read_flows(path: impl AsRef<Path>) -> Result<Vec<FlowRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_flows(file)
}

pub fn parse_flows<R: Read>(reader: R) -> Result<Vec<FlowRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in rdr.deserialize::<FlowRecord>().enumerate() {
        out.push(rec.map_err(|e| Error::Ingest {
            row: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a labeled matrix file. Row-standardized input is kept as is; any
/// other input is treated as the raw symmetric base and standardized.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_weights(file)
}

pub fn parse_weights<R: Read>(reader: R) -> Result<WeightMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Validation("empty matrix file".into()))?
        .map_err(|e| Error::Validation(e.to_string()))?;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for rec in records {
        let rec = rec.map_err(|e| Error::Validation(e.to_string()))?;
        if rec.len() != n + 1 {
            return Err(Error::Validation(format!(
                "row {} has {} values, expected {n}",
                rows + 1,
                rec.len().saturating_sub(1)
            )));
        }
        if rows >= n || rec.get(0) != Some(labels[rows].as_str()) {
            return Err(Error::Validation(format!(
                "row label `{}` does not match header order",
                rec.get(0).unwrap_or("")
            )));
        }
        for v in rec.iter().skip(1) {
            data.push(
                v.parse::<f64>()
                    .map_err(|_| Error::Validation(format!("not a number: `{v}`")))?,
            );
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Validation(format!("{rows} rows for {n} labels; matrix is not square")));
    }
    let m = DMatrix::from_row_slice(n, n, &data);
    validate_shape(&labels, &m)?;
    let standardized = (0..n).all(|i| {
        let s: f64 = m.row(i).sum();
        s == 0.0 || (s - 1.0).abs() <= STANDARDIZED_TOL
    });
    if standardized {
        WeightMatrix::from_standardized(labels, m)
    } else {
        WeightMatrix::from_raw(labels, m)
    }
}

/// GML rendering of the undirected proximity graph over the raw base.
pub fn graph_gml(w: &WeightMatrix) -> String {
    let mut out = String::from("graph [\n  directed 0\n");
    let deg = w.weighted_degree();
    for (i, l) in w.labels().iter().enumerate() {
        let _ = write!(
            out,
            "  node [\n    id {i}\n    label \"{}\"\n    weighted_degree {}\n  ]\n",
            l.replace('"', "'"),
            deg[i]
        );
    }
    let s = w.raw();
    for i in 0..w.n() {
        for j in (i + 1)..w.n() {
            if s[(i, j)] > 0.0 {
                let _ = write!(out, "  edge [\n    source {i}\n    target {j}\n    weight {}\n  ]\n", s[(i, j)]);
            }
        }
    }
    out.push_str("]\n");
    out
}

/// Writes the proximity graph as GML.
pub fn export_graph(w: &WeightMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, graph_gml(w)).map_err(|e| Error::io(path, e))
}
