//! One function per pipeline stage, each returning a [`Report`].
//!
//! Seeds: every stochastic stage derives its own seed from the top-level
//! `--seed` as `rep_seed(seed, stage)` with stage 0 for permutation
//! inference and 1 for effect inference. Effect draws for covariate block
//! `b` and model `m` then use `rep_seed(stage_seed, 8 b + m)`.

use std::collections::BTreeSet;
use std::path::Path;

use spatconv::autocorr::{gearys_c, morans_i, permutation_test, Statistic, TestResult};
use spatconv::data::{build_frame, ci_growth, load_panel, LoadOptions, PanelDataset, PanelSchema, Variable, LAGGED_CI};
use spatconv::effects::{decompose, effects_inference, ConvergenceReport, Effect, EffectsTable};
use spatconv::montecarlo::{rep_seed, run_campaign};
use spatconv::spatialpanel::{hausman_test, lr_test, wald_test};
use spatconv::unitroot::llc_test;
use spatconv::weights::{build_weights, export_graph, load_weights, read_flows};
use spatconv::{fit, FitResult, ModelKind, ModelSpec, WeightMatrix};

use crate::config::{Campaign, Options, SchemaKind};
use crate::error::{CliError, CliResult};
use crate::table::{Cell, Report, Table};

const STAGE_AUTOCORR: usize = 0;
const STAGE_EFFECTS: usize = 1;

fn panel(opts: &Options) -> CliResult<(PanelDataset, Vec<String>)> {
    let path = opts.panel.as_ref().ok_or_else(|| CliError::Usage("--panel is required".into()))?;
    let schema = match opts.schema {
        SchemaKind::Indicators => PanelSchema::indicators(),
        SchemaKind::Raw => PanelSchema::raw(),
    };
    let load = load_panel(
        path,
        &schema,
        &LoadOptions {
            years: opts.years,
            strict: opts.strict,
        },
    )?;
    let notes = load
        .dropped
        .iter()
        .map(|g| {
            let msg = format!("dropped {} (missing {} years)", g.country, g.missing_years.len());
            log::warn!("{msg}");
            msg
        })
        .collect();
    Ok((load.panel, notes))
}

/// The weight matrix over `labels`, from flows or a matrix file.
fn weights_for(opts: &Options, labels: &[String]) -> CliResult<Option<WeightMatrix>> {
    opts.check_weight_source()?;
    if let Some(path) = &opts.flows {
        let flows = read_flows(path)?;
        let (w, diag) = build_weights(&flows, labels, flow_period(opts, &flows))?;
        for c in &diag.isolated {
            log::warn!("{c} has no trade partner");
        }
        return Ok(Some(w));
    }
    match &opts.weights {
        Some(path) => Ok(Some(load_weights(path)?.select(labels)?)),
        None => Ok(None),
    }
}

fn flow_period(opts: &Options, flows: &[spatconv::weights::FlowRecord]) -> std::ops::RangeInclusive<i32> {
    match opts.years {
        Some((a, b)) => a..=b,
        None => {
            let lo = flows.iter().map(|f| f.year).min().unwrap_or(0);
            let hi = flows.iter().map(|f| f.year).max().unwrap_or(0);
            lo..=hi
        }
    }
}

fn require_weights(w: Option<WeightMatrix>, what: &str) -> CliResult<WeightMatrix> {
    w.ok_or_else(|| CliError::Usage(format!("{what} needs --flows or --weights")))
}

pub fn weights(opts: &Options, out: Option<&Path>) -> CliResult<Report> {
    let path = opts.flows.as_ref().ok_or_else(|| CliError::Usage("weights needs --flows".into()))?;
    if opts.weights.is_some() {
        return Err(CliError::Usage("weights builds a matrix from --flows; drop --weights".into()));
    }
    let flows = read_flows(path)?;
    let labels: Vec<String> = match &opts.panel {
        Some(_) => panel(opts)?.0.countries,
        None => flows
            .iter()
            .flat_map(|f| [f.origin.clone(), f.dest.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let (w, diag) = build_weights(&flows, &labels, flow_period(opts, &flows))?;
    let mut report = Report::new("weights");
    for c in &diag.isolated {
        let msg = format!("{c} has no trade partner");
        log::warn!("{msg}");
        report.notes.push(msg);
    }
    if diag.duplicates > 0 {
        report.notes.push(format!("{} duplicate flow records summed", diag.duplicates));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        w.write_matrix(dir.join("weights.csv"))?;
        export_graph(&w, dir.join("graph.gml"))?;
    }

    let mut m = Table::new("matrix", w.labels().to_vec());
    for (i, label) in w.labels().iter().enumerate() {
        m.push(label, w.w().row(i).iter().map(|&v| Cell::num(v)).collect());
    }
    report.tables.push(m);

    let mut nodes = Table::new("nodes", vec!["row_sum".into(), "weighted_degree".into(), "neighbors".into()]);
    let degree = w.weighted_degree();
    for (i, label) in w.labels().iter().enumerate() {
        let neighbors = w.w().row(i).iter().filter(|&&v| v > 0.0).count();
        nodes.push(
            label,
            vec![Cell::num(w.w().row(i).sum()), Cell::num(degree[i]), Cell::count(neighbors)],
        );
    }
    report.tables.push(nodes);

    let (lo, hi) = w.admissible_interval()?;
    let mut s = Table::new("summary", vec!["value".into()]);
    s.push("countries", vec![Cell::count(w.n())]);
    s.push("flow records used", vec![Cell::count(diag.used)]);
    s.push("isolated", vec![Cell::count(diag.isolated.len())]);
    s.push("rho lower bound", vec![Cell::num(lo)]);
    s.push("rho upper bound", vec![Cell::num(hi)]);
    report.tables.push(s);
    Ok(report)
}

fn test_row(t: &TestResult) -> Vec<Cell> {
    vec![
        Cell::est(t.statistic, Some(t.p_value)),
        Cell::num(t.expectation),
        Cell::num(t.sd),
        Cell::num(t.z),
        Cell::num(t.p_value),
    ]
}

pub fn autocorr(opts: &Options) -> CliResult<Report> {
    let (panel, notes) = panel(opts)?;
    let w = require_weights(weights_for(opts, &panel.countries)?, "autocorr")?;
    let z = ci_growth(&panel, opts.growth)?;
    let mut report = Report::new("autocorr");
    report.notes = notes;
    let mut t = Table::new(
        "spatial autocorrelation of CI growth",
        ["statistic", "E", "SD", "Z", "p"].map(String::from).to_vec(),
    );
    t.push("Moran's I", test_row(&morans_i(&z, &w)?));
    t.push("Geary's C", test_row(&gearys_c(&z, &w)?));
    if opts.permutations > 0 {
        let seed = rep_seed(opts.seed, STAGE_AUTOCORR);
        for (label, stat) in [("Moran's I (permutation)", Statistic::MoranI), ("Geary's C (permutation)", Statistic::GearyC)] {
            t.push(label, test_row(&permutation_test(&z, &w, stat, opts.permutations, seed)?));
        }
    }
    report.tables.push(t);
    Ok(report)
}

/// Fits of every requested model on one covariate block.
struct BlockFits {
    label: String,
    fits: Vec<FitResult>,
    re: Option<FitResult>,
}

fn fit_blocks(opts: &Options, panel: &PanelDataset, w: Option<&WeightMatrix>) -> CliResult<Vec<BlockFits>> {
    let mut out = Vec::new();
    for block in &opts.covariates {
        let frame = build_frame(panel, block)?;
        let lagged: Vec<String> = opts.lagged.iter().map(|v| v.lag_name()).collect();
        if opts.models.contains(&ModelKind::Sdm) {
            if let Some(missing) = lagged.iter().find(|l| frame.regressor_index(l).is_none()) {
                return Err(CliError::Usage(format!(
                    "SDM lag regressor `{missing}` is not in covariate set {}",
                    block.label()
                )));
            }
        }
        let mut fits = Vec::new();
        for &kind in &opts.models {
            let lags = if kind == ModelKind::Sdm { lagged.clone() } else { Vec::new() };
            let ws = if kind.is_spatial() { w } else { None };
            fits.push(fit(&ModelSpec::new(kind, &frame, ws, lags))?);
        }
        let re = if opts.models.contains(&ModelKind::Fe) && !opts.models.contains(&ModelKind::Re) {
            Some(fit(&ModelSpec::re(&frame))?)
        } else {
            None
        };
        out.push(BlockFits {
            label: block.label(),
            fits,
            re,
        });
    }
    Ok(out)
}

fn spatial_inputs(opts: &Options) -> CliResult<(PanelDataset, Vec<String>, Option<WeightMatrix>)> {
    let (panel, notes) = panel(opts)?;
    let w = weights_for(opts, &panel.countries)?;
    if w.is_none() {
        if let Some(m) = opts.models.iter().find(|m| m.is_spatial()) {
            return Err(CliError::Usage(format!("{m} needs a weight matrix (--flows or --weights)")));
        }
    }
    Ok((panel, notes, w))
}

fn normal_p(est: f64, se: f64) -> Option<f64> {
    (se > 0.0).then(|| {
        let t = TestResult::normal("", est, 0.0, se);
        t.p_value
    })
}

fn find(fits: &[FitResult], kind: ModelKind) -> Option<&FitResult> {
    fits.iter().find(|f| f.kind == kind)
}

pub fn fit_report(opts: &Options) -> CliResult<Report> {
    let (panel, notes, w) = spatial_inputs(opts)?;
    let blocks = fit_blocks(opts, &panel, w.as_ref())?;
    let mut report = Report::new("fit");
    report.notes = notes;
    report.notes.push(format!("pseudo R2: {}", spatconv::spatialpanel::PSEUDO_R2_DEFINITION));
    for b in &blocks {
        let cols: Vec<String> = b.fits.iter().map(|f| f.kind.code().to_string()).collect();
        let mut t = Table::new(format!("estimates {}", b.label), cols);
        let names = &b.fits[0].regressor_names;
        for (j, name) in names.iter().enumerate() {
            t.push(
                name,
                b.fits.iter().map(|f| Cell::est(f.beta[j], normal_p(f.beta[j], f.se.beta[j]))).collect(),
            );
            t.push(format!("se({name})"), b.fits.iter().map(|f| Cell::num(f.se.beta[j])).collect());
        }
        for v in &opts.lagged {
            let name = v.lag_name();
            if b.fits.iter().all(|f| f.gamma_index(&name).is_none()) {
                continue;
            }
            let lookup = |f: &FitResult| f.lagged_regressors.iter().position(|r| *r == name);
            t.push(
                format!("W*{name}"),
                b.fits
                    .iter()
                    .map(|f| match lookup(f) {
                        Some(i) => Cell::est(f.gamma[i], normal_p(f.gamma[i], f.se.gamma[i])),
                        None => Cell::NotApplicable,
                    })
                    .collect(),
            );
            t.push(
                format!("se(W*{name})"),
                b.fits.iter().map(|f| lookup(f).map_or(Cell::NotApplicable, |i| Cell::num(f.se.gamma[i]))).collect(),
            );
        }
        for (label, get) in [
            ("rho", (|f: &FitResult| f.rho.zip(f.se.rho)) as fn(&FitResult) -> Option<(f64, f64)>),
            ("lambda", |f: &FitResult| f.lambda.zip(f.se.lambda)),
        ] {
            if b.fits.iter().all(|f| get(f).is_none()) {
                continue;
            }
            t.push(
                label,
                b.fits.iter().map(|f| get(f).map_or(Cell::NotApplicable, |(v, s)| Cell::est(v, normal_p(v, s)))).collect(),
            );
            t.push(
                format!("se({label})"),
                b.fits.iter().map(|f| get(f).map_or(Cell::NotApplicable, |(_, s)| Cell::num(s))).collect(),
            );
        }
        t.push("sigma2", b.fits.iter().map(|f| Cell::num(f.sigma2)).collect());
        t.push("log-likelihood", b.fits.iter().map(|f| Cell::num(f.loglik)).collect());
        t.push("pseudo R2", b.fits.iter().map(|f| Cell::num(f.pseudo_r2)).collect());
        let walds: Vec<Option<TestResult>> = b.fits.iter().map(|f| wald_test(f).ok()).collect();
        t.push(
            "Wald",
            walds.iter().map(|w| w.as_ref().map_or(Cell::NotApplicable, |w| Cell::est(w.statistic, Some(w.p_value)))).collect(),
        );
        t.push("Wald p", walds.iter().map(|w| Cell::opt(w.as_ref().map(|w| w.p_value))).collect());
        t.push("observations", b.fits.iter().map(|f| Cell::count(f.n * f.t_eff)).collect());
        report.tables.push(t);

        let mut tests = Table::new(format!("tests {}", b.label), vec!["statistic".into(), "df".into(), "p".into()]);
        let mut push_test = |label: &str, r: TestResult| {
            tests.push(
                label,
                vec![
                    Cell::est(r.statistic, Some(r.p_value)),
                    Cell::count(r.df.unwrap_or(0)),
                    Cell::num(r.p_value),
                ],
            );
        };
        let re = b.re.as_ref().or_else(|| find(&b.fits, ModelKind::Re));
        if let (Some(fe), Some(re)) = (find(&b.fits, ModelKind::Fe), re) {
            push_test("Hausman FE vs RE", hausman_test(fe, re)?);
        }
        if let Some(sdm) = find(&b.fits, ModelKind::Sdm) {
            let df = sdm.gamma.len();
            if let Some(sar) = find(&b.fits, ModelKind::Sar) {
                push_test("LR SAR vs SDM", lr_test(sar, sdm, df)?);
            }
            if let Some(sem) = find(&b.fits, ModelKind::Sem) {
                push_test("LR SEM vs SDM", lr_test(sem, sdm, df)?);
            }
        }
        if !tests.rows.is_empty() {
            report.tables.push(tests);
        }
        for f in &b.fits {
            for msg in &f.warnings {
                report.notes.push(format!("{} {}: {msg}", b.label, f.kind));
            }
        }
    }
    Ok(report)
}

fn effect_cells(e: Option<&Effect>) -> (Cell, Cell) {
    match e {
        Some(e) => (Cell::est(e.estimate, e.p_value), Cell::opt(e.se)),
        None => (Cell::NotApplicable, Cell::NotApplicable),
    }
}

pub fn effects(opts: &Options) -> CliResult<Report> {
    let (panel, notes, w) = spatial_inputs(opts)?;
    let blocks = fit_blocks(opts, &panel, w.as_ref())?;
    let stage = rep_seed(opts.seed, STAGE_EFFECTS);
    let mut report = Report::new("effects");
    report.notes = notes;
    for (bi, b) in blocks.iter().enumerate() {
        let mut tables: Vec<EffectsTable> = Vec::new();
        for (mi, f) in b.fits.iter().enumerate() {
            let table = match &w {
                Some(w) if f.kind.is_spatial() && opts.draws > 0 => {
                    effects_inference(f, w, opts.draws, rep_seed(stage, 8 * bi + mi))?
                }
                Some(w) if f.kind.is_spatial() => decompose(f, w)?,
                _ => non_spatial_effects(f),
            };
            if table.rejected_draws > 0 {
                report.notes.push(format!(
                    "{} {}: {} inadmissible draws redrawn",
                    b.label, f.kind, table.rejected_draws
                ));
            }
            tables.push(table);
        }
        let cols: Vec<String> = b.fits.iter().map(|f| f.kind.code().to_string()).collect();
        let mut t = Table::new(format!("effects {}", b.label), cols);
        for name in &b.fits[0].regressor_names {
            let rows: Vec<_> = tables.iter().map(|tb| tb.row(name).expect("every model has each regressor")).collect();
            for (kind, pick) in [
                ("direct", (|r: &spatconv::effects::EffectsRow| Some(r.direct)) as fn(&_) -> Option<Effect>),
                ("indirect", |r| r.indirect),
                ("total", |r| Some(r.total)),
            ] {
                let cells: Vec<(Cell, Cell)> = rows.iter().map(|r| effect_cells(pick(r).as_ref())).collect();
                t.push(format!("{name} {kind}"), cells.iter().map(|c| c.0.clone()).collect());
                if opts.draws > 0 {
                    t.push(format!("se({name} {kind})"), cells.into_iter().map(|c| c.1).collect());
                }
            }
        }
        let rates: Vec<Option<ConvergenceReport>> = tables
            .iter()
            .map(|tb| match ConvergenceReport::from_effects(tb) {
                Ok(r) => Some(r),
                Err(e) => {
                    report.notes.push(format!("{} {}: {e}", b.label, tb.model));
                    None
                }
            })
            .collect();
        if b.fits[0].regressor_names.iter().any(|n| n == LAGGED_CI) {
            t.push("convergence rate", rates.iter().map(|r| Cell::opt(r.map(|r| r.rate))).collect());
        }
        report.tables.push(t);
    }
    Ok(report)
}

/// FE, RE and SEM: effects are the coefficients, with their own standard errors.
fn non_spatial_effects(f: &FitResult) -> EffectsTable {
    EffectsTable {
        model: f.kind,
        rows: f
            .regressor_names
            .iter()
            .zip(f.beta.iter().zip(&f.se.beta))
            .map(|(name, (&b, &se))| {
                let e = Effect {
                    estimate: b,
                    se: Some(se),
                    p_value: normal_p(b, se),
                };
                spatconv::effects::EffectsRow {
                    regressor: name.clone(),
                    direct: e,
                    indirect: None,
                    total: e,
                }
            })
            .collect(),
        draws: 0,
        rejected_draws: 0,
        seed: None,
    }
}

pub fn unitroot(opts: &Options) -> CliResult<Report> {
    let (panel, notes) = panel(opts)?;
    let mut report = Report::new("unitroot");
    report.notes = notes;
    let mut t = Table::new(
        "LLC panel unit-root tests",
        ["adjusted t", "p", "t delta", "delta", "mean lags", "n", "T"].map(String::from).to_vec(),
    );
    for var in Variable::ALL {
        let series = (0..panel.n())
            .map(|i| {
                panel
                    .series(var, i)
                    .iter()
                    .map(|&v| {
                        if v > 0.0 {
                            Ok(v.ln())
                        } else {
                            Err(spatconv::Error::Domain(format!(
                                "nonpositive {var} for {} cannot be logged",
                                panel.countries[i]
                            )))
                        }
                    })
                    .collect::<spatconv::Result<Vec<f64>>>()
            })
            .collect::<spatconv::Result<Vec<_>>>()?;
        let r = llc_test(&series, opts.lags, opts.deterministic)?;
        let mean_lags = r.lags.iter().sum::<usize>() as f64 / r.lags.len().max(1) as f64;
        t.push(
            format!("ln {var}"),
            vec![
                Cell::est(r.adjusted_t, Some(r.p_value)),
                Cell::num(r.p_value),
                Cell::num(r.t_delta),
                Cell::num(r.delta),
                Cell::num(mean_lags),
                Cell::count(r.n),
                Cell::count(r.t),
            ],
        );
    }
    report.tables.push(t);
    Ok(report)
}

pub fn simulate(c: &Campaign) -> CliResult<Report> {
    if c.reps == 0 {
        return Err(CliError::Usage("reps must be positive".into()));
    }
    let r = run_campaign(&c.sim, c.reps, &c.estimators)?;
    let mut report = Report::new("simulate");
    let mut d = Table::new("design", vec!["value".into()]);
    d.push("dgp", vec![Cell::text(r.dgp.code())]);
    d.push("n", vec![Cell::count(r.n)]);
    d.push("T", vec![Cell::count(r.t)]);
    d.push("spatial", vec![Cell::num(r.spatial)]);
    d.push("reps", vec![Cell::count(r.reps)]);
    d.push("seed", vec![Cell::text(r.seed.to_string())]);
    d.push("true convergence rate", vec![Cell::opt(r.true_convergence_rate)]);
    report.tables.push(d);

    let mut p = Table::new(
        "parameters",
        ["truth", "mean", "bias", "rmse", "coverage"].map(String::from).to_vec(),
    );
    for e in &r.estimators {
        for s in &e.parameters {
            p.push(
                format!("{} {}", e.model, s.name),
                vec![Cell::num(s.truth), Cell::num(s.mean), Cell::num(s.bias), Cell::num(s.rmse), Cell::num(s.coverage)],
            );
        }
    }
    report.tables.push(p);

    let mut e = Table::new(
        "estimators",
        ["successes", "failures", "mean convergence rate"].map(String::from).to_vec(),
    );
    for s in &r.estimators {
        e.push(
            s.model.code(),
            vec![Cell::count(s.successes), Cell::count(s.failures), Cell::opt(s.mean_convergence_rate)],
        );
    }
    report.tables.push(e);
    if let Some(below) = r.fe_rate_below_sdm {
        report.notes.push(format!("FE convergence rate below SDM: {}", if below { "yes" } else { "no" }));
    }
    Ok(report)
}

/// Every data stage in order: weights (when built from flows), autocorrelation,
/// estimation, effects and unit roots.
pub fn report(opts: &Options, out: Option<&Path>) -> CliResult<Report> {
    let mut all = Report::new("report");
    if opts.flows.is_some() {
        all.extend(weights(opts, out)?);
    }
    all.extend(autocorr(opts)?);
    all.extend(fit_report(opts)?);
    all.extend(effects(opts)?);
    all.extend(unitroot(opts)?);
    Ok(all)
}
