//! Plain-text `key = value` configuration and value parsers shared with the
//! command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use spatconv::data::{CovariateSet, GrowthForm, Variable};
use spatconv::montecarlo::{SimConfig, WeightSource};
use spatconv::unitroot::{Deterministic, LagChoice};
use spatconv::ModelKind;

use crate::error::{CliError, CliResult};
use crate::table::Format;

/// Bundled Monte Carlo campaign.
pub const DEFAULT_CAMPAIGN: &str = include_str!("../configs/campaign.conf");

/// Parsed `key = value` lines. `#` starts a comment.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", no + 1)))?;
            let k = k.trim().to_ascii_lowercase();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("config line {}: duplicate key `{k}`", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CliError::Usage(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))))
            .transpose()
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

pub fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("years must look like 1997-2014, got `{s}`"))?;
    let a: i32 = a.trim().parse().map_err(|_| format!("bad start year `{a}`"))?;
    let b: i32 = b.trim().parse().map_err(|_| format!("bad end year `{b}`"))?;
    if a > b {
        return Err(format!("empty year range {a}-{b}"));
    }
    Ok((a, b))
}

pub fn parse_models(s: &str) -> CliResult<Vec<ModelKind>> {
    let mut out: Vec<ModelKind> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m: ModelKind = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(usage("no models requested".into()));
    }
    Ok(out)
}

/// Blocks separated by `;`, since custom sets use commas.
pub fn parse_covariates(s: &str) -> CliResult<Vec<CovariateSet>> {
    let sets = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(CovariateSet::from_str)
        .collect::<spatconv::Result<Vec<_>>>()?;
    if sets.is_empty() {
        return Err(usage("no covariate set given".into()));
    }
    Ok(sets)
}

pub fn parse_variables(s: &str) -> CliResult<Vec<Variable>> {
    Ok(s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(Variable::from_str)
        .collect::<spatconv::Result<Vec<_>>>()?)
}

pub fn parse_lags(s: &str) -> Result<LagChoice, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "auto" => Ok(LagChoice::Auto),
        "schwarz" | "bic" => Ok(LagChoice::Schwarz),
        n => n.parse().map(LagChoice::Fixed).map_err(|_| format!("lags must be auto, schwarz or a count, got `{s}`")),
    }
}

pub fn parse_deterministic(s: &str) -> Result<Deterministic, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "none" => Ok(Deterministic::None),
        "intercept" => Ok(Deterministic::Intercept),
        "trend" | "intercept-trend" => Ok(Deterministic::InterceptTrend),
        _ => Err(format!("deterministic terms must be none, intercept or trend, got `{s}`")),
    }
}

pub fn parse_growth(s: &str) -> Result<GrowthForm, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "log-ratio" => Ok(GrowthForm::LogRatio),
        "mean-annual" => Ok(GrowthForm::MeanAnnual),
        _ => Err(format!("growth must be log-ratio or mean-annual, got `{s}`")),
    }
}

pub fn parse_format(s: &str) -> Result<Format, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "text" => Ok(Format::Text),
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        _ => Err(format!("format must be text, csv or json, got `{s}`")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaKind {
    Indicators,
    Raw,
}

pub fn parse_schema(s: &str) -> Result<SchemaKind, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "indicators" => Ok(SchemaKind::Indicators),
        "raw" => Ok(SchemaKind::Raw),
        _ => Err(format!("schema must be indicators or raw, got `{s}`")),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what} value `{p}`"))))
        .collect()
}

/// Everything a pipeline stage may need, resolved from flags or a config file.
#[derive(Debug, Clone)]
pub struct Options {
    pub panel: Option<PathBuf>,
    pub schema: SchemaKind,
    pub strict: bool,
    pub years: Option<(i32, i32)>,
    pub flows: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub covariates: Vec<CovariateSet>,
    pub models: Vec<ModelKind>,
    pub lagged: Vec<Variable>,
    pub draws: usize,
    pub seed: u64,
    pub permutations: usize,
    pub growth: GrowthForm,
    pub lags: LagChoice,
    pub deterministic: Deterministic,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            panel: None,
            schema: SchemaKind::Indicators,
            strict: false,
            years: None,
            flows: None,
            weights: None,
            covariates: vec![CovariateSet::Block1],
            models: vec![ModelKind::Fe, ModelKind::Sar, ModelKind::Sem, ModelKind::Sdm],
            lagged: vec![Variable::Gvc],
            draws: 1000,
            seed: 1,
            permutations: 0,
            growth: GrowthForm::LogRatio,
            lags: LagChoice::Auto,
            deterministic: Deterministic::Intercept,
        }
    }
}

pub const RUN_KEYS: &[&str] = &[
    "panel",
    "schema",
    "strict",
    "years",
    "flows",
    "weights",
    "covariates",
    "models",
    "lagged",
    "draws",
    "seed",
    "permutations",
    "growth",
    "lags",
    "deterministic",
    "out",
    "format",
];

impl Options {
    /// Reads a run configuration; relative paths resolve against `base`.
    pub fn from_config(kv: &KeyValues, base: &Path) -> CliResult<Self> {
        kv.check_keys(RUN_KEYS)?;
        let path = |k: &str| kv.raw(k).map(|p| base.join(p));
        let mut o = Options {
            panel: path("panel"),
            flows: path("flows"),
            weights: path("weights"),
            ..Options::default()
        };
        if let Some(s) = kv.raw("schema") {
            o.schema = parse_schema(s).map_err(usage)?;
        }
        if let Some(b) = kv.get::<bool>("strict")? {
            o.strict = b;
        }
        if let Some(s) = kv.raw("years") {
            o.years = Some(parse_years(s).map_err(usage)?);
        }
        if let Some(s) = kv.raw("covariates") {
            o.covariates = parse_covariates(s)?;
        }
        if let Some(s) = kv.raw("models") {
            o.models = parse_models(s)?;
        }
        if let Some(s) = kv.raw("lagged") {
            o.lagged = parse_variables(s)?;
        }
        if let Some(v) = kv.get("draws")? {
            o.draws = v;
        }
        if let Some(v) = kv.get("seed")? {
            o.seed = v;
        }
        if let Some(v) = kv.get("permutations")? {
            o.permutations = v;
        }
        if let Some(s) = kv.raw("growth") {
            o.growth = parse_growth(s).map_err(usage)?;
        }
        if let Some(s) = kv.raw("lags") {
            o.lags = parse_lags(s).map_err(usage)?;
        }
        if let Some(s) = kv.raw("deterministic") {
            o.deterministic = parse_deterministic(s).map_err(usage)?;
        }
        o.check_weight_source()?;
        Ok(o)
    }

    pub fn check_weight_source(&self) -> CliResult<()> {
        if self.flows.is_some() && self.weights.is_some() {
            return Err(usage("give either flows or a weight matrix, not both".into()));
        }
        Ok(())
    }
}

pub const CAMPAIGN_KEYS: &[&str] = &[
    "dgp",
    "n",
    "t",
    "spatial",
    "beta",
    "gamma",
    "sigma",
    "mu_scale",
    "x_ar",
    "degree",
    "reps",
    "seed",
    "estimators",
];

/// A Monte Carlo campaign: DGP, replication count and estimators.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub sim: SimConfig,
    pub reps: usize,
    pub estimators: Vec<ModelKind>,
}

impl Campaign {
    pub fn from_config(kv: &KeyValues) -> CliResult<Self> {
        kv.check_keys(CAMPAIGN_KEYS)?;
        let mut sim = SimConfig::default();
        if let Some(m) = kv.get("dgp")? {
            sim.model = m;
        }
        if let Some(v) = kv.get("n")? {
            sim.n = v;
        }
        if let Some(v) = kv.get("t")? {
            sim.t = v;
        }
        if let Some(v) = kv.get("spatial")? {
            sim.spatial = v;
        }
        if let Some(s) = kv.raw("beta") {
            sim.beta = parse_list(s, "beta")?;
        }
        sim.gamma = match kv.raw("gamma") {
            Some(s) => parse_list(s, "gamma")?,
            None if sim.model == ModelKind::Sdm => sim.gamma,
            None => Vec::new(),
        };
        if let Some(v) = kv.get("sigma")? {
            sim.sigma = v;
        }
        if let Some(v) = kv.get("mu_scale")? {
            sim.mu_scale = v;
        }
        if let Some(v) = kv.get("x_ar")? {
            sim.x_ar = v;
        }
        if let Some(v) = kv.get("degree")? {
            sim.weights = WeightSource::Random { expected_degree: v };
        }
        if let Some(v) = kv.get("seed")? {
            sim.seed = v;
        }
        let reps = kv.get("reps")?.unwrap_or(200);
        let estimators = match kv.raw("estimators") {
            Some(s) => parse_models(s)?,
            None => vec![ModelKind::Fe, ModelKind::Sdm],
        };
        Ok(Self { sim, reps, estimators })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_skip_comments() {
        let kv = KeyValues::parse("# campaign\nn = 40 # units\n\nmodels=fe,sar\n").unwrap();
        assert_eq!(kv.get::<usize>("n").unwrap(), Some(40));
        assert_eq!(kv.raw("models"), Some("fe,sar"));
        assert!(KeyValues::parse("n 40").is_err());
        assert!(KeyValues::parse("n=1\nn=2").is_err());
    }

    #[test]
    fn bundled_campaign_parses() {
        let c = Campaign::from_config(&KeyValues::parse(DEFAULT_CAMPAIGN).unwrap()).unwrap();
        assert_eq!(c.sim.model, ModelKind::Sdm);
        assert!(c.estimators.contains(&ModelKind::Fe) && c.estimators.contains(&ModelKind::Sdm));
    }

    #[test]
    fn unknown_keys_rejected() {
        let kv = KeyValues::parse("colour = red").unwrap();
        assert!(matches!(Campaign::from_config(&kv), Err(CliError::Usage(_))));
    }

    #[test]
    fn value_parsers() {
        assert_eq!(parse_years("1997-2014").unwrap(), (1997, 2014));
        assert!(parse_years("2014-1997").is_err());
        assert_eq!(parse_lags("2").unwrap(), LagChoice::Fixed(2));
        assert_eq!(parse_covariates("block1; custom:Y,GVC").unwrap().len(), 2);
        assert_eq!(parse_models("fe,sdm,fe").unwrap(), vec![ModelKind::Fe, ModelKind::Sdm]);
    }
}
