//! Panel ingestion, indicator derivation and regression-frame assembly.
//!
//! The growth regression is
//!
//! ```text
//! ln(CI_t / CI_{t-1}) = β₁ ln CI_{t-1} + Σ_k β_k ln x_{k,t-1} + (spatial terms) + μ_i + ε_t
//! ```
//!
//! so a panel with `T` years yields `T - 1` usable periods. Frames are stacked
//! period by period: all countries for the first usable year, then all
//! countries for the next, which is the layout the spatial estimators expect
//! (`I_T ⊗ W` acts block-diagonally).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BalanceGap, Error, Result};

/// Indicator variables carried by a [`PanelDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variable {
    /// Carbon intensity, CO₂ per unit of GDP.
    Ci,
    /// Real GDP per capita.
    Y,
    /// Energy intensity, energy use per unit of GDP.
    Ei,
    /// Urbanization rate.
    Ur,
    /// Value-chain participation ratio.
    Gvc,
}

impl Variable {
    pub const ALL: [Variable; 5] = [Variable::Ci, Variable::Y, Variable::Ei, Variable::Ur, Variable::Gvc];

    pub fn code(self) -> &'static str {
        match self {
            Variable::Ci => "CI",
            Variable::Y => "Y",
            Variable::Ei => "EI",
            Variable::Ur => "UR",
            Variable::Gvc => "GVC",
        }
    }

    /// Name of the lagged-log regressor built from this variable.
    pub fn lag_name(self) -> String {
        format!("ln_{}_lag", self.code().to_ascii_lowercase())
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CI" => Ok(Variable::Ci),
            "Y" => Ok(Variable::Y),
            "EI" => Ok(Variable::Ei),
            "UR" => Ok(Variable::Ur),
            "GVC" => Ok(Variable::Gvc),
            other => Err(Error::Usage(format!("unknown variable `{other}`"))),
        }
    }
}

/// One country-year of raw source measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPanelRow {
    pub country: String,
    pub year: i32,
    /// kg of CO₂.
    pub co2: f64,
    /// Constant-price output.
    pub gdp: f64,
    /// kg of oil equivalent.
    pub energy: f64,
    pub population: f64,
    pub urban_population: f64,
    /// Indirect domestic value added in exports.
    pub dvx: f64,
    /// Foreign value added in exports.
    pub fva: f64,
    pub gross_exports: f64,
}

/// Derived indicators for one country-year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub ci: f64,
    pub y: f64,
    pub ei: f64,
    pub ur: f64,
    pub gvc: f64,
}

impl Indicators {
    pub fn get(&self, var: Variable) -> f64 {
        match var {
            Variable::Ci => self.ci,
            Variable::Y => self.y,
            Variable::Ei => self.ei,
            Variable::Ur => self.ur,
            Variable::Gvc => self.gvc,
        }
    }
}

/// Participation ratio `(dvx + fva) / gross_exports`.
pub fn compute_gvc(dvx: f64, fva: f64, gross_exports: f64) -> Result<f64> {
    if !(gross_exports > 0.0) {
        return Err(Error::Domain(format!(
            "gross exports must be positive, got {gross_exports}"
        )));
    }
    if !(dvx >= 0.0) || !(fva >= 0.0) {
        return Err(Error::Domain(format!(
            "value-added components must be nonnegative, got dvx={dvx}, fva={fva}"
        )));
    }
    Ok((dvx + fva) / gross_exports)
}

/// Computes CI, Y, EI, UR and GVC from one raw row.
pub fn derive_indicators(raw: &RawPanelRow) -> Result<Indicators> {
    if !(raw.gdp > 0.0) {
        return Err(Error::Domain(format!("gdp must be positive, got {}", raw.gdp)));
    }
    if !(raw.population > 0.0) {
        return Err(Error::Domain(format!(
            "population must be positive, got {}",
            raw.population
        )));
    }
    if !(raw.co2 >= 0.0) || !(raw.energy >= 0.0) {
        return Err(Error::Domain("co2 and energy must be nonnegative".into()));
    }
    if !(raw.urban_population >= 0.0) || raw.urban_population > raw.population {
        return Err(Error::Domain(format!(
            "urban population {} outside [0, population={}]",
            raw.urban_population, raw.population
        )));
    }
    Ok(Indicators {
        ci: raw.co2 / raw.gdp,
        y: raw.gdp / raw.population,
        ei: raw.energy / raw.gdp,
        ur: raw.urban_population / raw.population,
        gvc: compute_gvc(raw.dvx, raw.fva, raw.gross_exports)?,
    })
}

/// Column headers holding raw measurements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawColumns {
    pub co2: String,
    pub gdp: String,
    pub energy: String,
    pub population: String,
    pub urban_population: String,
    pub dvx: String,
    pub fva: String,
    pub gross_exports: String,
}

impl Default for RawColumns {
    fn default() -> Self {
        Self {
            co2: "co2".into(),
            gdp: "gdp".into(),
            energy: "energy".into(),
            population: "population".into(),
            urban_population: "urban_population".into(),
            dvx: "dvx".into(),
            fva: "fva".into(),
            gross_exports: "gross_exports".into(),
        }
    }
}

/// Column headers holding precomputed indicators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorColumns {
    pub ci: String,
    pub y: String,
    pub ei: String,
    pub ur: String,
    pub gvc: String,
}

impl Default for IndicatorColumns {
    fn default() -> Self {
        Self {
            ci: "ci".into(),
            y: "y".into(),
            ei: "ei".into(),
            ur: "ur".into(),
            gvc: "gvc".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSource {
    Raw(RawColumns),
    Indicators(IndicatorColumns),
}

/// Maps CSV headers onto panel fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub country: String,
    pub year: String,
    pub source: ColumnSource,
}

impl PanelSchema {
    pub fn raw() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            source: ColumnSource::Raw(RawColumns::default()),
        }
    }

    pub fn indicators() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            source: ColumnSource::Indicators(IndicatorColumns::default()),
        }
    }

    /// Overrides the header for one logical field (`country`, `year`, or any
    /// raw/indicator field name of the active source).
    pub fn set_column(&mut self, field: &str, header: &str) -> Result<()> {
        let slot = match (field, &mut self.source) {
            ("country", _) => &mut self.country,
            ("year", _) => &mut self.year,
            ("co2", ColumnSource::Raw(c)) => &mut c.co2,
            ("gdp", ColumnSource::Raw(c)) => &mut c.gdp,
            ("energy", ColumnSource::Raw(c)) => &mut c.energy,
            ("population", ColumnSource::Raw(c)) => &mut c.population,
            ("urban_population", ColumnSource::Raw(c)) => &mut c.urban_population,
            ("dvx", ColumnSource::Raw(c)) => &mut c.dvx,
            ("fva", ColumnSource::Raw(c)) => &mut c.fva,
            ("gross_exports", ColumnSource::Raw(c)) => &mut c.gross_exports,
            ("ci", ColumnSource::Indicators(c)) => &mut c.ci,
            ("y", ColumnSource::Indicators(c)) => &mut c.y,
            ("ei", ColumnSource::Indicators(c)) => &mut c.ei,
            ("ur", ColumnSource::Indicators(c)) => &mut c.ur,
            ("gvc", ColumnSource::Indicators(c)) => &mut c.gvc,
            _ => return Err(Error::Usage(format!("schema has no field `{field}`"))),
        };
        *slot = header.to_string();
        Ok(())
    }
}

/// Year window and balance policy for [`load_panel`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Inclusive year range; defaults to the span observed in the file.
    pub years: Option<(i32, i32)>,
    /// Reject unbalanced input instead of dropping incomplete countries.
    pub strict: bool,
}

/// Balanced country × year table of derived indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    /// Per variable, an `n × T` table stored country-major (`i * T + t`).
    pub values: BTreeMap<Variable, Vec<f64>>,
}

impl PanelDataset {
    /// Assembles a dataset from per-country series of indicators, each of
    /// length `years.len()`.
    pub fn from_indicators(
        countries: Vec<String>,
        years: Vec<i32>,
        series: &[Vec<Indicators>],
    ) -> Result<Self> {
        let t = years.len();
        if series.len() != countries.len() || series.iter().any(|s| s.len() != t) {
            return Err(Error::Dimension("series shape does not match countries × years".into()));
        }
        check_consecutive(&years)?;
        let mut values = BTreeMap::new();
        for var in Variable::ALL {
            values.insert(var, series.iter().flat_map(|s| s.iter().map(|r| r.get(var))).collect());
        }
        Ok(Self {
            countries,
            years,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.countries.len()
    }

    pub fn t(&self) -> usize {
        self.years.len()
    }

    pub fn value(&self, var: Variable, country: usize, period: usize) -> f64 {
        self.values[&var][country * self.t() + period]
    }

    /// Time series of one variable for one country.
    pub fn series(&self, var: Variable, country: usize) -> &[f64] {
        let t = self.t();
        &self.values[&var][country * t..(country + 1) * t]
    }
}

/// Result of [`load_panel`]: the balanced dataset and the countries dropped
/// to balance it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelLoad {
    pub panel: PanelDataset,
    pub dropped: Vec<BalanceGap>,
}

/// Reads a panel CSV and returns the balanced dataset.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema, opts: &LoadOptions) -> Result<PanelLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema, opts)
}

/// Same as [`load_panel`] over any reader.
pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema, opts: &LoadOptions) -> Result<PanelLoad> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingest {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let country_col = col(&schema.country)?;
    let year_col = col(&schema.year)?;
    enum Cols {
        Raw([usize; 8]),
        Ind([usize; 5]),
    }
    let cols = match &schema.source {
        ColumnSource::Raw(c) => Cols::Raw([
            col(&c.co2)?,
            col(&c.gdp)?,
            col(&c.energy)?,
            col(&c.population)?,
            col(&c.urban_population)?,
            col(&c.dvx)?,
            col(&c.fva)?,
            col(&c.gross_exports)?,
        ]),
        ColumnSource::Indicators(c) => Cols::Ind([col(&c.ci)?, col(&c.y)?, col(&c.ei)?, col(&c.ur)?, col(&c.gvc)?]),
    };

    let mut cells: HashMap<(String, i32), Indicators> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        // data rows are numbered from 1, after the header
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Ingest {
            row,
            message: e.to_string(),
        })?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| Error::Ingest {
                row,
                message: format!("column `{}` is not a number: `{}`", &headers[i], field(i)),
            })
        };
        let country = field(country_col).to_string();
        if country.is_empty() {
            return Err(Error::Ingest {
                row,
                message: "empty country label".into(),
            });
        }
        let year: i32 = field(year_col).parse().map_err(|_| Error::Ingest {
            row,
            message: format!("year is not an integer: `{}`", field(year_col)),
        })?;
        let ind = match &cols {
            Cols::Raw(c) => {
                let raw = RawPanelRow {
                    country: country.clone(),
                    year,
                    co2: num(c[0])?,
                    gdp: num(c[1])?,
                    energy: num(c[2])?,
                    population: num(c[3])?,
                    urban_population: num(c[4])?,
                    dvx: num(c[5])?,
                    fva: num(c[6])?,
                    gross_exports: num(c[7])?,
                };
                derive_indicators(&raw).map_err(|e| Error::Ingest {
                    row,
                    message: e.to_string(),
                })?
            }
            Cols::Ind(c) => Indicators {
                ci: num(c[0])?,
                y: num(c[1])?,
                ei: num(c[2])?,
                ur: num(c[3])?,
                gvc: num(c[4])?,
            },
        };
        if !order.contains(&country) {
            order.push(country.clone());
        }
        if cells.insert((country.clone(), year), ind).is_some() {
            return Err(Error::Ingest {
                row,
                message: format!("duplicate observation for {country} {year}"),
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::Ingest {
            row: 0,
            message: "no data rows".into(),
        });
    }

    let (first, last) = match opts.years {
        Some((a, b)) if a <= b => (a, b),
        Some((a, b)) => return Err(Error::Usage(format!("empty year range {a}..{b}"))),
        None => {
            let ys = cells.keys().map(|(_, y)| *y);
            (ys.clone().min().unwrap_or(0), ys.max().unwrap_or(0))
        }
    };
    let years: Vec<i32> = (first..=last).collect();

    order.sort();
    let mut kept = Vec::new();
    let mut gaps = Vec::new();
    for c in order {
        let missing: Vec<i32> = years
            .iter()
            .copied()
            .filter(|y| !cells.contains_key(&(c.clone(), *y)))
            .collect();
        if missing.is_empty() {
            kept.push(c);
        } else {
            gaps.push(BalanceGap {
                country: c,
                missing_years: missing,
            });
        }
    }
    if opts.strict && !gaps.is_empty() {
        return Err(Error::Balance { gaps });
    }
    for g in &gaps {
        log::warn!("dropping {} (missing {} year(s))", g.country, g.missing_years.len());
    }
    if kept.is_empty() {
        return Err(Error::Balance { gaps });
    }

    let series: Vec<Vec<Indicators>> = kept
        .iter()
        .map(|c| years.iter().map(|y| cells[&(c.clone(), *y)]).collect())
        .collect();
    let panel = PanelDataset::from_indicators(kept, years, &series)?;
    Ok(PanelLoad { panel, dropped: gaps })
}

fn check_consecutive(years: &[i32]) -> Result<()> {
    if years.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Balance {
            gaps: vec![BalanceGap {
                country: "<all>".into(),
                missing_years: years
                    .windows(2)
                    .flat_map(|w| (w[0] + 1)..w[1])
                    .collect(),
            }],
        });
    }
    Ok(())
}

/// Covariates entering the regression next to `ln CI_{t-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateSet {
    /// Y, EI, GVC
    Block1,
    /// UR, GVC
    Block2,
    /// EI, UR, GVC
    Block3,
    /// Y, EI, UR, GVC
    Block4,
    Custom(Vec<Variable>),
}

impl CovariateSet {
    pub const BLOCKS: [CovariateSet; 4] = [
        CovariateSet::Block1,
        CovariateSet::Block2,
        CovariateSet::Block3,
        CovariateSet::Block4,
    ];

    /// Covariates in canonical order (Y, EI, UR, GVC), without duplicates.
    pub fn variables(&self) -> Vec<Variable> {
        use Variable::*;
        let mut v = match self {
            CovariateSet::Block1 => vec![Y, Ei, Gvc],
            CovariateSet::Block2 => vec![Ur, Gvc],
            CovariateSet::Block3 => vec![Ei, Ur, Gvc],
            CovariateSet::Block4 => vec![Y, Ei, Ur, Gvc],
            CovariateSet::Custom(v) => v.iter().copied().filter(|v| *v != Ci).collect(),
        };
        v.sort();
        v.dedup();
        v
    }

    pub fn label(&self) -> String {
        match self {
            CovariateSet::Block1 => "block1".into(),
            CovariateSet::Block2 => "block2".into(),
            CovariateSet::Block3 => "block3".into(),
            CovariateSet::Block4 => "block4".into(),
            CovariateSet::Custom(v) => {
                let names: Vec<&str> = v.iter().map(|v| v.code()).collect();
                format!("custom:{}", names.join(","))
            }
        }
    }
}

impl FromStr for CovariateSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "block1" => Ok(CovariateSet::Block1),
            "block2" => Ok(CovariateSet::Block2),
            "block3" => Ok(CovariateSet::Block3),
            "block4" => Ok(CovariateSet::Block4),
            _ => match s.strip_prefix("custom:") {
                Some(list) => {
                    let vars = list
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(Variable::from_str)
                        .collect::<Result<Vec<_>>>()?;
                    Ok(CovariateSet::Custom(vars))
                }
                None => Err(Error::Usage(format!("unknown covariate set `{s}`"))),
            },
        }
    }
}

/// Stacked regression data for one covariate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFrame {
    /// Dependent variable, `n * t_eff` entries stacked period-major.
    pub y: Vec<f64>,
    /// Regressors, one row per entry of `y`.
    pub x: DMatrix<f64>,
    pub regressor_names: Vec<String>,
    pub countries: Vec<String>,
    /// Calendar year of each period of `y`.
    pub years: Vec<i32>,
    pub n: usize,
    pub t_eff: usize,
}

impl RegressionFrame {
    /// Builds a frame from raw parts, checking shapes.
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        regressor_names: Vec<String>,
        countries: Vec<String>,
        years: Vec<i32>,
    ) -> Result<Self> {
        let n = countries.len();
        let t_eff = years.len();
        if y.len() != n * t_eff || x.nrows() != y.len() || x.ncols() != regressor_names.len() {
            return Err(Error::Dimension(format!(
                "frame shape mismatch: y={}, x={}×{}, n={n}, T={t_eff}, names={}",
                y.len(),
                x.nrows(),
                x.ncols(),
                regressor_names.len()
            )));
        }
        Ok(Self {
            y,
            x,
            regressor_names,
            countries,
            years,
            n,
            t_eff,
        })
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn regressor_index(&self, name: &str) -> Option<usize> {
        self.regressor_names.iter().position(|r| r == name)
    }

    /// Row of observation (country `i`, period `t`).
    pub fn row(&self, i: usize, t: usize) -> usize {
        t * self.n + i
    }
}

/// Name of the lagged carbon-intensity regressor, always the first column.
pub const LAGGED_CI: &str = "ln_ci_lag";

/// Builds the growth-regression frame for one covariate set.
pub fn build_frame(panel: &PanelDataset, covariates: &CovariateSet) -> Result<RegressionFrame> {
    let n = panel.n();
    let t = panel.t();
    if t < 3 {
        return Err(Error::Dimension(format!("need at least 3 years, panel has {t}")));
    }
    check_consecutive(&panel.years)?;
    let vars: Vec<Variable> = std::iter::once(Variable::Ci).chain(covariates.variables()).collect();

    let mut logs: BTreeMap<Variable, Vec<f64>> = BTreeMap::new();
    for &var in &vars {
        let mut out = Vec::with_capacity(n * t);
        for i in 0..n {
            for (p, &year) in panel.years.iter().enumerate() {
                let v = panel.value(var, i, p);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Domain(format!(
                        "cannot take log of {var}={v} for {} in {year}",
                        panel.countries[i]
                    )));
                }
                out.push(v.ln());
            }
        }
        logs.insert(var, out);
    }

    let t_eff = t - 1;
    let rows = n * t_eff;
    let mut y = Vec::with_capacity(rows);
    let mut x = DMatrix::zeros(rows, vars.len());
    for s in 0..t_eff {
        for i in 0..n {
            let row = s * n + i;
            let ci = &logs[&Variable::Ci];
            y.push(ci[i * t + s + 1] - ci[i * t + s]);
            for (j, var) in vars.iter().enumerate() {
                x[(row, j)] = logs[var][i * t + s];
            }
        }
    }
    let names = vars.iter().map(|v| v.lag_name()).collect();
    RegressionFrame::new(y, x, names, panel.countries.clone(), panel.years[1..].to_vec())
}

/// Growth of carbon intensity over the whole sample for each country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthForm {
    /// `ln(CI_last / CI_first)`
    LogRatio,
    /// Mean of the annual log differences.
    MeanAnnual,
}

pub fn ci_growth(panel: &PanelDataset, form: GrowthForm) -> Result<Vec<f64>> {
    let t = panel.t();
    if t < 2 {
        return Err(Error::Dimension("growth needs at least two years".into()));
    }
    (0..panel.n())
        .map(|i| {
            let s = panel.series(Variable::Ci, i);
            let (a, b) = (s[0], s[t - 1]);
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Domain(format!(
                    "nonpositive CI for {}",
                    panel.countries[i]
                )));
            }
            let total = (b / a).ln();
            Ok(match form {
                GrowthForm::LogRatio => total,
                GrowthForm::MeanAnnual => total / (t - 1) as f64,
            })
        })
        .collect()
}

/// The 101-country reference sample, one label per line.
pub const REFERENCE_COUNTRIES: &str = include_str!("../data/countries.txt");

pub fn reference_countries() -> Vec<&'static str> {
    REFERENCE_COUNTRIES.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}
