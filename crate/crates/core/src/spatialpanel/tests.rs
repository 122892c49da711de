use super::*;
use crate::montecarlo::{simulate_panel, SimConfig, WeightSource};

fn sim(model: ModelKind, spatial: f64, seed: u64) -> crate::montecarlo::SimulatedPanel {
    simulate_panel(&SimConfig {
        n: 30,
        t: 8,
        model,
        spatial,
        beta: vec![-0.2, 0.4],
        gamma: if model == ModelKind::Sdm { vec![0.15] } else { Vec::new() },
        sigma: 0.2,
        weights: WeightSource::Random { expected_degree: 5.0 },
        seed,
        ..SimConfig::default()
    })
    .unwrap()
}

#[test]
fn log_det_matches_lu_determinant() {
    let s = sim(ModelKind::Sar, 0.3, 1);
    let w = &s.weights;
    let n = w.n();
    for rho in [-0.8, -0.3, 0.0, 0.25, 0.6, 0.9] {
        let det = (DMatrix::<f64>::identity(n, n) - w.w() * rho).lu().determinant();
        assert!((w.log_det(rho) - det.ln()).abs() < 1e-9, "ρ = {rho}");
    }
}

#[test]
fn sar_profile_at_zero_equals_fe_loglik() {
    let s = sim(ModelKind::Sar, 0.4, 2);
    let fe = fit_fe(&ModelSpec::fe(&s.frame)).unwrap();
    let spec = ModelSpec::sar(&s.frame, &s.weights);
    let profile = concentrated_loglik(&spec).unwrap();
    assert!((profile(0.0) - fe.loglik).abs() < 1e-6);
}

#[test]
fn sar_optimum_is_a_local_maximum() {
    let s = sim(ModelKind::Sar, 0.4, 3);
    let spec = ModelSpec::sar(&s.frame, &s.weights);
    let fit = fit_sar(&spec).unwrap();
    let profile = concentrated_loglik(&spec).unwrap();
    let rho = fit.rho.unwrap();
    assert!((profile(rho) - fit.loglik).abs() < 1e-8);
    for h in [1e-4, 1e-3, 1e-2] {
        assert!(profile(rho + h) <= fit.loglik + 1e-9);
        assert!(profile(rho - h) <= fit.loglik + 1e-9);
    }
}

#[test]
fn sdm_nests_sar_and_sem() {
    for seed in 0..5 {
        let s = sim(ModelKind::Sar, 0.4, 10 + seed);
        let sar = fit(&ModelSpec::sar(&s.frame, &s.weights)).unwrap();
        let sem = fit(&ModelSpec::sem(&s.frame, &s.weights)).unwrap();
        let sdm = fit(&ModelSpec::sdm(&s.frame, &s.weights, &["ln_ci_lag", "x2"])).unwrap();
        assert!(sdm.loglik >= sar.loglik - 1e-6);
        assert!(sdm.loglik >= sem.loglik - 1e-6);
    }
}

#[test]
fn fe_is_invariant_to_per_country_constants() {
    let s = sim(ModelKind::Sar, 0.1, 4);
    let a = fit_fe(&ModelSpec::fe(&s.frame)).unwrap();
    let mut shifted = s.frame.clone();
    for r in 0..shifted.y.len() {
        let i = r % shifted.n;
        shifted.y[r] += 3.0 * i as f64 - 7.0;
        shifted.x[(r, 1)] += 0.5 * i as f64;
    }
    let b = fit_fe(&ModelSpec::fe(&shifted)).unwrap();
    for j in 0..2 {
        assert!((a.beta[j] - b.beta[j]).abs() < 1e-10);
        assert!((a.se.beta[j] - b.se.beta[j]).abs() < 1e-10);
    }
    assert!((a.loglik - b.loglik).abs() < 1e-8);
}

#[test]
fn sdm_without_weights_is_a_usage_error() {
    let s = sim(ModelKind::Sar, 0.2, 5);
    let spec = ModelSpec::new(ModelKind::Sdm, &s.frame, None, vec!["x2".into()]);
    assert!(matches!(fit(&spec), Err(Error::Usage(_))));
}

#[test]
fn numerical_and_analytic_standard_errors_agree() {
    for kind in [ModelKind::Sar, ModelKind::Sem] {
        let s = sim(kind, 0.4, 6);
        let spec = ModelSpec::new(kind, &s.frame, Some(&s.weights), Vec::new());
        let a = fit(&spec).unwrap();
        let opts = FitOptions {
            numerical_hessian: true,
            ..FitOptions::default()
        };
        let b = fit(&spec.clone().with_options(opts)).unwrap();
        let sa = a.se.rho.or(a.se.lambda).unwrap();
        let sb = b.se.rho.or(b.se.lambda).unwrap();
        assert!((sa / sb - 1.0).abs() < 0.05, "{kind}: {sa} vs {sb}");
        for j in 0..2 {
            assert!((a.se.beta[j] / b.se.beta[j] - 1.0).abs() < 0.05);
        }
    }
}

#[test]
fn mismatched_labels_are_rejected() {
    let s = sim(ModelKind::Sar, 0.2, 7);
    let mut frame = s.frame.clone();
    frame.countries.swap(0, 1);
    assert!(matches!(fit_sar(&ModelSpec::sar(&frame, &s.weights)), Err(Error::Usage(_))));
}

#[test]
fn lee_yu_rescales_sigma2() {
    let s = sim(ModelKind::Sar, 0.3, 8);
    let spec = ModelSpec::sar(&s.frame, &s.weights);
    let a = fit_sar(&spec).unwrap();
    let b = fit_sar(&spec.clone().with_options(FitOptions {
        lee_yu: true,
        ..FitOptions::default()
    }))
    .unwrap();
    let t = s.frame.t_eff as f64;
    assert!((b.sigma2 - a.sigma2 * t / (t - 1.0)).abs() < 1e-12);
    assert_eq!(a.rho, b.rho);
}

#[test]
fn model_kind_round_trips() {
    for k in [ModelKind::Fe, ModelKind::Re, ModelKind::Sar, ModelKind::Sem, ModelKind::Sdm] {
        assert_eq!(k.code().parse::<ModelKind>().unwrap(), k);
    }
}
