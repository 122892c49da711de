use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spatconv::autocorr::{permutation_test, Statistic};
use spatconv::data::{build_frame, CovariateSet, Indicators, PanelDataset, RegressionFrame};
use spatconv::effects::{decompose, effects_inference, effects_matrix, spatial_multiplier};
use spatconv::montecarlo::{run_campaign, simulate_panel, SimConfig, WeightSource};
use spatconv::spatialpanel::{fit_fe, fit_re, hausman_test, lr_test, wald_test};
use spatconv::weights::{build_weights, graph_gml, FlowRecord};
use spatconv::{fit, FitResult, ModelKind, ModelSpec, WeightMatrix};

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn three_country() -> WeightMatrix {
    let s = DMatrix::from_row_slice(3, 3, &[0.0, 6.0, 2.0, 6.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    WeightMatrix::from_raw(vec!["A".into(), "B".into(), "C".into()], s).unwrap()
}

#[test]
fn three_country_weights_match_record_aggregation() {
    let recs = [("A", "B", 4.0), ("B", "A", 2.0), ("A", "C", 1.0), ("C", "A", 1.0)];
    let flows: Vec<FlowRecord> = recs
        .iter()
        .map(|(o, d, v)| FlowRecord {
            origin: o.to_string(),
            dest: d.to_string(),
            year: 2000,
            value: *v,
        })
        .collect();
    let names = ["A", "B", "C"];
    let lab: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let (w, diag) = build_weights(&flows, &lab, 2000..=2000).unwrap();
    assert!(diag.isolated.is_empty());
    // brute force: every record contributes to both (o,d) and (d,o)
    let mut s = [[0.0; 3]; 3];
    for (o, d, v) in recs {
        let i = names.iter().position(|n| *n == o).unwrap();
        let j = names.iter().position(|n| *n == d).unwrap();
        s[i][j] += v;
        s[j][i] += v;
    }
    for i in 0..3 {
        let total: f64 = s[i].iter().sum();
        for j in 0..3 {
            assert_eq!(w.raw()[(i, j)], s[i][j]);
            assert_abs_diff_eq!(w.w()[(i, j)], s[i][j] / total, epsilon = 1e-15);
        }
    }
    assert_eq!(w.weighted_degree(), vec![8.0, 6.0, 2.0]);
    let gml = graph_gml(&w);
    assert_eq!(gml.matches("edge [").count(), 2);
}

#[test]
fn multiplier_matches_neumann_series() {
    let w = three_country();
    let m = spatial_multiplier(0.5, &w).unwrap();
    let mut sum = DMatrix::<f64>::identity(3, 3);
    let mut term = DMatrix::<f64>::identity(3, 3);
    for _ in 1..30 {
        term = &term * w.w() * 0.5;
        sum += &term;
    }
    assert!((m - sum).abs().max() < 1e-8);
    assert_eq!(spatial_multiplier(0.0, &w).unwrap(), DMatrix::identity(3, 3));
    assert!(spatial_multiplier(1.0, &w).is_err());
}

fn sdm_fit(rho: f64, beta: f64, gamma: f64) -> FitResult {
    FitResult {
        kind: ModelKind::Sdm,
        regressor_names: vec!["ln_ci_lag".into()],
        beta: vec![beta],
        lagged_regressors: vec!["ln_ci_lag".into()],
        gamma: vec![gamma],
        rho: Some(rho),
        lambda: None,
        intercept: None,
        sigma2: 1.0,
        se: spatconv::spatialpanel::StandardErrors {
            beta: vec![0.0],
            gamma: vec![0.0],
            rho: Some(0.0),
            lambda: None,
            sigma2: 0.0,
            intercept: None,
        },
        covariance: DMatrix::zeros(3, 3),
        loglik: 0.0,
        fixed_effects: Vec::new(),
        pseudo_r2: 0.0,
        n: 3,
        t_eff: 1,
        k: 1,
        warnings: Vec::new(),
    }
}

#[test]
fn effects_match_explicit_inverse() {
    let w = three_country();
    let f = sdm_fit(0.5, -0.2, -0.16);
    let inv = (DMatrix::<f64>::identity(3, 3) - w.w() * 0.5).try_inverse().unwrap();
    let s = &inv * (DMatrix::<f64>::identity(3, 3) * -0.2 + w.w() * -0.16);
    let m = effects_matrix(&f, &w, "ln_ci_lag").unwrap();
    assert!((&m - &s).abs().max() < 1e-10);

    let direct = s.diagonal().sum() / 3.0;
    let total = s.sum() / 3.0;
    let t = decompose(&f, &w).unwrap();
    let row = t.row("ln_ci_lag").unwrap();
    assert_abs_diff_eq!(row.direct.estimate, direct, epsilon = 1e-10);
    assert_abs_diff_eq!(row.total.estimate, total, epsilon = 1e-10);
    assert_abs_diff_eq!(row.indirect.unwrap().estimate, total - direct, epsilon = 1e-10);
    assert!(effects_matrix(&f, &w, "nope").is_err());
}

#[test]
fn degenerate_covariance_gives_zero_effect_se() {
    let w = three_country();
    let f = sdm_fit(0.5, -0.2, -0.16);
    let a = effects_inference(&f, &w, 200, 3).unwrap();
    let p = decompose(&f, &w).unwrap();
    for (x, y) in a.rows.iter().zip(&p.rows) {
        assert_eq!(x.total.se, Some(0.0));
        assert_abs_diff_eq!(x.total.estimate, y.total.estimate, epsilon = 1e-12);
    }
    assert_eq!(a, effects_inference(&f, &w, 200, 3).unwrap());
    assert!(effects_inference(&f, &w, 50, 3).is_err());
}

#[test]
fn permutation_p_matches_exhaustive_enumeration() {
    let s = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
    );
    let w = WeightMatrix::from_raw(labels(4), s).unwrap();
    let z = [1.0, 1.0, -1.0, -1.0];
    // I for every permutation of z, computed from the pair structure directly
    let mut extreme = 0;
    let mut all = 0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    if (0..4).any(|i| (0..i).any(|j| p[i] == p[j])) {
                        continue;
                    }
                    all += 1;
                    let v: Vec<f64> = p.iter().map(|&k| z[k]).collect();
                    let i = (v[0] * v[1] + v[2] * v[3]) / 2.0;
                    if (i + 1.0 / 3.0).abs() >= (1.0 + 1.0 / 3.0) - 1e-12 {
                        extreme += 1;
                    }
                }
            }
        }
    }
    assert_eq!(all, 24);
    let exact = extreme as f64 / all as f64;
    assert_abs_diff_eq!(exact, 1.0 / 3.0, epsilon = 1e-12);
    let r = permutation_test(&z, &w, Statistic::MoranI, 999, 42).unwrap();
    assert!((r.p_value - exact).abs() < 0.05, "{}", r.p_value);
}

#[test]
fn exponential_ci_gives_unit_growth() {
    let years: Vec<i32> = (2000..2006).collect();
    let series: Vec<Vec<Indicators>> = (0..4)
        .map(|i| {
            (0..6)
                .map(|t| Indicators {
                    ci: (t as f64).exp(),
                    y: 1.0 + i as f64 + 0.1 * t as f64,
                    ei: 2.0 + 0.05 * (t * i) as f64,
                    ur: 0.5,
                    gvc: 0.3 + 0.01 * t as f64,
                })
                .collect()
        })
        .collect();
    let panel = PanelDataset::from_indicators(labels(4), years, &series).unwrap();
    let f = build_frame(&panel, &CovariateSet::Block1).unwrap();
    assert_eq!(f.t_eff, 5);
    for t in 0..5 {
        for i in 0..4 {
            let r = f.row(i, t);
            assert_abs_diff_eq!(f.y[r], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.x[(r, 0)], t as f64, epsilon = 1e-12);
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `y = μ_i + b·x + ε` with `x` partly driven by `μ_i`.
fn one_regressor_frame(n: usize, t: usize, b: f64, sigma: f64, mu_sd: f64, corr: f64, seed: u64) -> RegressionFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f64> = (0..n).map(|_| mu_sd * normal(&mut rng)).collect();
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t);
    for _ in 0..t {
        for m in &mu {
            let xi = corr * m + normal(&mut rng);
            x.push(xi);
            y.push(m + b * xi + sigma * normal(&mut rng));
        }
    }
    RegressionFrame::new(
        y,
        DMatrix::from_vec(n * t, 1, x),
        vec!["x".into()],
        labels(n),
        (0..t as i32).collect(),
    )
    .unwrap()
}

fn within_oracle(f: &RegressionFrame) -> (f64, f64) {
    let (n, t) = (f.n, f.t_eff);
    let mut xm = vec![0.0; n];
    let mut ym = vec![0.0; n];
    for r in 0..n * t {
        xm[r % n] += f.x[(r, 0)] / t as f64;
        ym[r % n] += f.y[r] / t as f64;
    }
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for r in 0..n * t {
        let dx = f.x[(r, 0)] - xm[r % n];
        sxx += dx * dx;
        sxy += dx * (f.y[r] - ym[r % n]);
    }
    (sxy / sxx, sxx)
}

fn pooled_slope(f: &RegressionFrame) -> f64 {
    let x = DMatrix::from_fn(f.y.len(), 2, |r, c| if c == 0 { 1.0 } else { f.x[(r, 0)] });
    let y = DVector::from_vec(f.y.clone());
    let b = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
    b[1]
}

#[test]
fn fe_recovers_slope_within_analytic_tolerance() {
    let f = one_regressor_frame(50, 10, 0.5, 0.01, 1.0, 0.0, 1);
    let fit = fit_fe(&ModelSpec::fe(&f)).unwrap();
    let (b, sxx) = within_oracle(&f);
    assert_abs_diff_eq!(fit.beta[0], b, epsilon = 1e-12);
    // four OLS standard deviations, σ/√Sxx
    let tol = 4.0 * 0.01 / sxx.sqrt();
    assert!(tol < 0.01);
    assert!((fit.beta[0] - 0.5).abs() < tol);
}

#[test]
fn re_without_heterogeneity_is_pooled_ols() {
    let mut hits = 0;
    for seed in 0..20 {
        let f = one_regressor_frame(30, 6, 0.5, 0.2, 0.0, 0.0, 100 + seed);
        let re = fit_re(&ModelSpec::re(&f)).unwrap();
        if !re.warnings.is_empty() {
            hits += 1;
            assert_abs_diff_eq!(re.beta[0], pooled_slope(&f), epsilon = 1e-6);
        }
        assert_eq!(re, fit_re(&ModelSpec::re(&f)).unwrap());
    }
    assert!(hits > 0);
}

#[test]
fn re_lies_between_fe_and_pooled() {
    for seed in 0..10 {
        let f = one_regressor_frame(40, 5, 0.5, 0.3, 2.0, 0.8, 200 + seed);
        let fe = fit_fe(&ModelSpec::fe(&f)).unwrap().beta[0];
        let re = fit_re(&ModelSpec::re(&f)).unwrap().beta[0];
        let pooled = pooled_slope(&f);
        let (lo, hi) = if fe < pooled { (fe, pooled) } else { (pooled, fe) };
        assert!(lo - 1e-9 <= re && re <= hi + 1e-9, "seed {seed}: {fe} {re} {pooled}");
    }
}

#[test]
fn hausman_detects_correlated_effects() {
    let rejections = (0..40)
        .filter(|s| {
            let f = one_regressor_frame(40, 5, 0.5, 0.3, 1.0, 0.8, 300 + s);
            let fe = fit_fe(&ModelSpec::fe(&f)).unwrap();
            let re = fit_re(&ModelSpec::re(&f)).unwrap();
            hausman_test(&fe, &re).unwrap().p_value < 0.05
        })
        .count();
    assert!(rejections >= 30, "{rejections}/40");
    let f = one_regressor_frame(40, 5, 0.5, 0.3, 1.0, 0.0, 1);
    let fe = fit_fe(&ModelSpec::fe(&f)).unwrap();
    let mut re = fit_re(&ModelSpec::re(&f)).unwrap();
    re.beta = fe.beta.clone();
    assert_eq!(hausman_test(&fe, &re).unwrap().statistic, 0.0);
}

fn sim(model: ModelKind, spatial: f64, beta: Vec<f64>, gamma: Vec<f64>, seed: u64) -> spatconv::montecarlo::SimulatedPanel {
    simulate_panel(&SimConfig {
        n: 40,
        t: 8,
        model,
        spatial,
        beta,
        gamma,
        sigma: 0.1,
        weights: WeightSource::Random { expected_degree: 6.0 },
        seed,
        ..SimConfig::default()
    })
    .unwrap()
}

#[test]
fn strong_signal_wald_rejects() {
    let s = sim(ModelKind::Sar, 0.3, vec![-0.2, 0.3], Vec::new(), 5);
    let f = fit(&ModelSpec::sar(&s.frame, &s.weights)).unwrap();
    let w = wald_test(&f).unwrap();
    assert!(w.p_value < 0.01);
    assert_eq!(w.df, Some(2));
}

#[test]
fn sdm_on_sar_data_finds_no_spatial_lag() {
    let covered = (0..30)
        .filter(|seed| {
            let s = sim(ModelKind::Sar, 0.4, vec![-0.2, 0.3], Vec::new(), 40 + seed);
            let f = fit(&ModelSpec::sdm(&s.frame, &s.weights, &["ln_ci_lag", "x2"])).unwrap();
            f.gamma.iter().zip(&f.se.gamma).all(|(g, se)| g.abs() <= 2.0 * se)
        })
        .count();
    // two independent 95% intervals both cover about 90% of the time
    assert!(covered >= 22, "{covered}/30");
}

#[test]
fn common_factor_sdm_is_close_to_sem() {
    let (lambda, b) = (0.5, vec![-0.2, 0.3]);
    let gamma: Vec<f64> = b.iter().map(|v| -v * lambda).collect();
    let small = (0..20)
        .filter(|seed| {
            let s = sim(ModelKind::Sdm, lambda, b.clone(), gamma.clone(), 70 + seed);
            let sdm = fit(&ModelSpec::sdm(&s.frame, &s.weights, &["ln_ci_lag", "x2"])).unwrap();
            let sem = fit(&ModelSpec::sem(&s.frame, &s.weights)).unwrap();
            let lr = lr_test(&sem, &sdm, 2).unwrap();
            assert!(lr.statistic >= 0.0);
            lr.p_value > 0.05
        })
        .count();
    assert!(small >= 16, "{small}/20");
}

#[test]
fn zero_spatial_dgp_matches_fixed_effects_equation() {
    let s = sim(ModelKind::Sar, 0.0, vec![-0.2, 0.3], Vec::new(), 9);
    let f = &s.frame;
    for r in 0..f.y.len() {
        let xb = -0.2 * f.x[(r, 0)] + 0.3 * f.x[(r, 1)];
        assert_abs_diff_eq!(f.y[r], s.fixed_effects[r % f.n] + xb + s.shocks[r], epsilon = 1e-12);
    }
    let sar = fit(&ModelSpec::sar(&s.frame, &s.weights)).unwrap();
    let fe = fit_fe(&ModelSpec::fe(&s.frame)).unwrap();
    assert!(sar.rho.unwrap().abs() <= 2.0 * sar.se.rho.unwrap());
    let profile = spatconv::spatialpanel::concentrated_loglik(&ModelSpec::sar(&s.frame, &s.weights)).unwrap();
    assert_abs_diff_eq!(profile(0.0), fe.loglik, epsilon = 1e-6);
}

fn campaign(model: ModelKind, spatial: f64, n: usize, estimators: &[ModelKind]) -> spatconv::montecarlo::CampaignReport {
    let cfg = SimConfig {
        n,
        t: 8,
        model,
        spatial,
        beta: vec![-0.2, 0.3],
        gamma: Vec::new(),
        sigma: 0.1,
        weights: WeightSource::Random { expected_degree: 6.0 },
        seed: 11,
        ..SimConfig::default()
    };
    run_campaign(&cfg, 60, estimators).unwrap()
}

#[test]
fn rho_rmse_falls_with_n() {
    let rmse: Vec<f64> = [25, 50, 100]
        .iter()
        .map(|&n| {
            let r = campaign(ModelKind::Sar, 0.4, n, &[ModelKind::Sar]);
            r.estimator(ModelKind::Sar).unwrap().parameter("rho").unwrap().rmse
        })
        .collect();
    assert!(rmse[0] > rmse[1] && rmse[1] > rmse[2], "{rmse:?}");
}

#[test]
fn without_spillovers_fe_and_sar_rates_agree() {
    let r = campaign(ModelKind::Sar, 0.0, 60, &[ModelKind::Fe, ModelKind::Sar]);
    let fe = r.estimator(ModelKind::Fe).unwrap();
    let sar = r.estimator(ModelKind::Sar).unwrap();
    let rmse = fe.parameter("beta_ln_ci_lag").unwrap().rmse;
    let gap = (fe.mean_convergence_rate.unwrap() - sar.mean_convergence_rate.unwrap()).abs();
    // mean over 60 reps: Monte Carlo error is about rmse/√60
    assert!(gap < 4.0 * rmse / 60f64.sqrt() + 1e-3, "gap {gap}, rmse {rmse}");
}
