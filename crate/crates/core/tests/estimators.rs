use std::sync::Arc;

use survfuse::data::{inspection_window, FusedObservation, FusedSample};
use survfuse::estimators::{
    estimate_covariate_shift, estimate_cross_fitted, estimate_cs_only, estimate_fusion_dr,
    estimate_fusion_eff, estimate_rc_only, CsOnlyConfig, EstimationOptions, EstimatorError,
    EstimatorKind, FusionEngine, FusionKind,
};
use survfuse::fredholm::{solve_h_grid, FredholmProblem, GridSolver};
use survfuse::nuisance::W1Law;
use survfuse::nuisance::{oracle_bundle, CensoringModel, HazardModel, NuisanceBundle};
use survfuse::numerics::{RngStream, TimeGrid};
use survfuse::simulation::{generate_dataset, true_phi, true_phi_for, DgpSpec};

fn benchmark_sample(n: usize, seed: u64) -> FusedSample {
    generate_dataset(&DgpSpec::benchmark(), n, &mut RngStream::new(seed, 0)).unwrap()
}

/// Benchmark design with the censoring switched off.
fn uncensored_sample(n: usize, seed: u64) -> (FusedSample, NuisanceBundle) {
    let dgp = DgpSpec::benchmark();
    let mut stream = RngStream::new(seed, 1);
    let n1 = DgpSpec::n_right_censored(n);
    let obs: Vec<FusedObservation> = (0..n)
        .map(|i| {
            if i < n1 {
                let o = dgp.draw_right_censored(&mut stream);
                // redraw T alone so that every row is an event
                let rate = dgp.event_rate_at(&o.covariates);
                let t = -(1.0 - stream.uniform()).ln() / rate;
                FusedObservation::right_censored(o.covariates, t, true)
            } else {
                dgp.draw_current_status(&mut stream)
            }
        })
        .collect();
    let mut bundle = oracle_bundle(&dgp);
    bundle.censoring = CensoringModel::none(2);
    (FusedSample::new(obs).unwrap(), bundle)
}

#[test]
fn rc_only_without_censoring_is_the_empirical_survival() {
    let (sample, bundle) = uncensored_sample(600, 3);
    for &t_star in &[0.2, 0.7, 0.9] {
        let est = estimate_rc_only(&sample, &bundle, t_star, 0.05).unwrap();
        let direct: Vec<f64> = sample
            .right_censored()
            .map(|(_, y, _)| if y > t_star { 1.0 } else { 0.0 })
            .collect();
        let direct = direct.iter().sum::<f64>() / direct.len() as f64;
        assert!(
            (est.point - direct).abs() < 1e-6,
            "{} vs {direct}",
            est.point
        );
    }
}

#[test]
fn efficient_equals_uncensored_gradient_when_gamma_is_one() {
    let (sample, bundle) = uncensored_sample(450, 4);
    let t_star = 0.7;
    let eff = estimate_fusion_eff(&sample, &bundle, t_star, 0.05).unwrap();
    let dr = estimate_fusion_dr(&sample, &bundle, t_star, 0.05).unwrap();
    assert!(
        (eff.point - dr.point).abs() < 1e-6,
        "{} vs {}",
        eff.point,
        dr.point
    );

    // oracle: mean of μ + S h*(T) + (1-S)(Δ - F)/(F(1-F)) H*(C), h* from the
    // standalone grid solver on the same grid
    let engine =
        FusionEngine::new(&sample, &bundle, &[t_star], EstimationOptions::default()).unwrap();
    let grid: Arc<TimeGrid> = engine.grid().clone();
    let pi = sample.pi();
    let mut total = 0.0;
    for o in sample.observations() {
        let w = o.covariates.clone();
        let problem = FredholmProblem::new(pi, t_star, &bundle, w.clone(), grid.clone()).unwrap();
        let h = solve_h_grid(&problem, GridSolver::Sweep).unwrap();
        let mu = bundle.event.survival(t_star, &w);
        total += mu;
        match o.outcome {
            survfuse::data::Outcome::RightCensored { y, .. } => {
                total += h.values.values()[grid.index_of(y).unwrap()];
            }
            survfuse::data::Outcome::CurrentStatus { c, delta_c } => {
                let k = grid.index_of(c).unwrap();
                let f = bundle.event.cdf(c, &w);
                let d = if delta_c { 1.0 } else { 0.0 };
                total += (d - f) / (f * (1.0 - f)) * h.derived.values()[k];
            }
        }
    }
    let oracle = total / sample.len() as f64;
    assert!(
        (eff.point - oracle).abs() < 1e-6,
        "{} vs {oracle}",
        eff.point
    );
}

#[test]
fn dr_with_pi_one_matches_rc_only() {
    let full = benchmark_sample(600, 5);
    let rc_rows: Vec<FusedObservation> = full
        .observations()
        .iter()
        .filter(|o| o.is_right_censored())
        .cloned()
        .collect();
    let sample = FusedSample::new(rc_rows).unwrap();
    let bundle = oracle_bundle(&DgpSpec::benchmark());
    let options = EstimationOptions {
        pi: Some(1.0),
        ..EstimationOptions::default()
    };
    let engine = FusionEngine::new(&sample, &bundle, &[0.7], options).unwrap();
    let out = engine
        .estimate(&[FusionKind::RcOnly, FusionKind::Dr])
        .unwrap();
    assert!((out[0].point - out[1].point).abs() < 1e-6);
    assert!((out[0].se - out[1].se).abs() < 1e-6);
}

#[test]
fn censored_row_before_t_star_is_minus_the_compensator() {
    // constant rates so that the compensator has a closed form
    let (lam, lam_r) = (0.9, 0.6);
    let mut bundle = oracle_bundle(&DgpSpec::benchmark());
    bundle.event = survfuse::nuisance::ConditionalEventModel::new(HazardModel::constant(lam, 2));
    bundle.censoring = CensoringModel::new(HazardModel::constant(lam_r, 2));
    let t_star = 0.7;
    let y = 0.4;
    let obs = vec![
        FusedObservation::right_censored(vec![0.3, 1.0], y, false),
        FusedObservation::right_censored(vec![0.6, 0.0], 1.3, true),
    ];
    let sample = FusedSample::new(obs).unwrap();
    let options = EstimationOptions {
        grid_points: 20000,
        ..EstimationOptions::default()
    };
    let engine = FusionEngine::new(&sample, &bundle, &[t_star], options).unwrap();
    let est = engine.estimate(&[FusionKind::RcOnly]).unwrap().remove(0);
    let mu = (-lam * t_star).exp();
    // ∫_0^y μ e^{(λ+λ_R)u} λ du
    let comp = -mu * lam / (lam + lam_r) * (((lam + lam_r) * y).exp() - 1.0);
    let expected = -comp + mu - est.point;
    let got = est.gradient_values[0];
    assert!(got.is_finite());
    assert!((got - expected).abs() < 2e-3, "{got} vs {expected}");
    let again = engine.estimate(&[FusionKind::RcOnly]).unwrap().remove(0);
    assert_eq!(got.to_bits(), again.gradient_values[0].to_bits());
}

#[test]
fn bookkeeping_and_term_sums() {
    let sample = benchmark_sample(300, 6);
    let bundle = oracle_bundle(&DgpSpec::benchmark());
    let engine =
        FusionEngine::new(&sample, &bundle, &[0.7, 0.9], EstimationOptions::default()).unwrap();
    let out = engine
        .estimate(&[
            FusionKind::RcOnly,
            FusionKind::Dr,
            FusionKind::Eff,
            FusionKind::Shift(1),
        ])
        .unwrap();
    assert_eq!(out.len(), 8);
    for r in &out {
        assert_eq!(r.point, r.plug_in + r.correction);
        for (t, g) in r.terms.iter().zip(&r.gradient_values) {
            assert_eq!(t.rc_term + t.cs_term + t.mu_term, *g);
        }
        let mean = r.gradient_values.iter().sum::<f64>() / r.gradient_values.len() as f64;
        assert!(mean.abs() < 1e-12, "{:?} mean {mean}", r.kind);
        assert!(r.se > 0.0 && r.ci.0 <= r.point && r.point <= r.ci.1);
        assert!(r.diagnostics.max_residual <= 1e-8);
    }
    // a later t* is estimated independently of the earlier one
    let single = estimate_fusion_dr(&sample, &bundle, 0.9, 0.05).unwrap();
    assert!((single.point - out[5].point).abs() < 1e-3);
}

#[test]
fn permutation_invariance() {
    let sample = benchmark_sample(240, 7);
    let bundle = oracle_bundle(&DgpSpec::benchmark());
    let mut rows = sample.observations().to_vec();
    rows.reverse();
    rows.rotate_left(17);
    let permuted = FusedSample::new(rows).unwrap();
    for kind in [FusionKind::RcOnly, FusionKind::Dr, FusionKind::Eff] {
        let a = FusionEngine::new(&sample, &bundle, &[0.7], EstimationOptions::default())
            .unwrap()
            .estimate(&[kind])
            .unwrap()
            .remove(0);
        let b = FusionEngine::new(&permuted, &bundle, &[0.7], EstimationOptions::default())
            .unwrap()
            .estimate(&[kind])
            .unwrap()
            .remove(0);
        assert_eq!(a.point.to_bits(), b.point.to_bits(), "{kind:?}");
        assert_eq!(a.se.to_bits(), b.se.to_bits(), "{kind:?}");
    }
}

#[test]
fn oracle_gradients_centre_at_truth() {
    let sample = benchmark_sample(1500, 8);
    let bundle = oracle_bundle(&DgpSpec::benchmark());
    let phi = true_phi(&DgpSpec::benchmark(), 0.7);
    let engine = FusionEngine::new(&sample, &bundle, &[0.7], EstimationOptions::default()).unwrap();
    for r in engine
        .estimate(&[FusionKind::RcOnly, FusionKind::Dr, FusionKind::Eff])
        .unwrap()
    {
        assert!(
            (r.point - phi).abs() < 4.0 * r.se,
            "{:?}: {} vs {phi} (se {})",
            r.kind,
            r.point,
            r.se
        );
    }
}

#[test]
fn cs_only_examples() {
    // single draws sit about one sd (0.03) from the truth, so check the
    // average over replications
    let mut points = Vec::new();
    for seed in 0..20 {
        let sample = benchmark_sample(1500, 100 + seed);
        let est = estimate_cs_only(&sample, 0.7, 0.05, &CsOnlyConfig::default()).unwrap();
        assert_eq!(est.kind, EstimatorKind::CsOnly);
        assert!(est.ci.0 <= est.point && est.point <= est.ci.1);
        assert!(est.gradient_values.is_empty());
        points.push(est.point);
    }
    let mean = points.iter().sum::<f64>() / points.len() as f64;
    assert!((mean - 0.4823).abs() < 0.015, "{mean}");

    let sample = benchmark_sample(1500, 9);

    assert!(matches!(
        estimate_cs_only(&sample, 0.2, 0.05, &CsOnlyConfig::default()),
        Err(EstimatorError::NotIdentified { .. })
    ));

    let all_events: Vec<FusedObservation> = sample
        .observations()
        .iter()
        .map(|o| match o.outcome {
            survfuse::data::Outcome::CurrentStatus { c, .. } => {
                FusedObservation::current_status(o.covariates.clone(), c, true)
            }
            _ => o.clone(),
        })
        .collect();
    let s = FusedSample::new(all_events).unwrap();
    assert_eq!(
        estimate_cs_only(&s, 0.7, 0.05, &CsOnlyConfig::default())
            .unwrap()
            .point,
        0.0
    );
}

#[test]
fn cs_only_is_reproducible() {
    let sample = benchmark_sample(300, 10);
    let cfg = CsOnlyConfig {
        seed: 4,
        ..CsOnlyConfig::default()
    };
    let a = estimate_cs_only(&sample, 0.8, 0.05, &cfg).unwrap();
    let b = estimate_cs_only(&sample, 0.8, 0.05, &cfg).unwrap();
    assert_eq!(a.ci, b.ci);
}

#[test]
fn shift_without_shift_matches_dr() {
    let sample = benchmark_sample(900, 11);
    let bundle = oracle_bundle(&DgpSpec::benchmark());
    let dr = estimate_fusion_dr(&sample, &bundle, 0.7, 0.05).unwrap();
    for target in [0u8, 1] {
        let s = estimate_covariate_shift(&sample, &bundle, 0.7, target, 0.05).unwrap();
        assert_eq!(s.estimand.target_source, Some(target));
        assert!(
            (s.point - dr.point).abs() < 2.0 * s.se,
            "target {target}: {} vs {}",
            s.point,
            dr.point
        );
        assert_eq!(s.diagnostics.clipped_fraction, Some(0.0));
    }
}

#[test]
fn shift_to_current_status_population() {
    let dgp = DgpSpec::benchmark_shifted();
    let sample = generate_dataset(&dgp, 3000, &mut RngStream::new(12, 0)).unwrap();
    let bundle = oracle_bundle(&dgp);
    let t_star = 0.7;
    let target = true_phi_for(&dgp, t_star, W1Law::Linear);
    let pooled = true_phi(&dgp, t_star);
    assert!((target - pooled).abs() > 0.01);
    let s = estimate_covariate_shift(&sample, &bundle, t_star, 0, 0.05).unwrap();
    assert!(
        (s.point - target).abs() < 4.0 * s.se,
        "{} vs {target}",
        s.point
    );
}

#[test]
fn shift_argument_errors() {
    let sample = benchmark_sample(120, 13);
    let mut bundle = oracle_bundle(&DgpSpec::benchmark());
    assert!(matches!(
        estimate_covariate_shift(&sample, &bundle, 0.7, 2, 0.05),
        Err(EstimatorError::InvalidArgument(_))
    ));
    let options = EstimationOptions {
        pi: Some(1.0),
        ..EstimationOptions::default()
    };
    let engine = FusionEngine::new(&sample, &bundle, &[0.7], options).unwrap();
    assert!(matches!(
        engine.estimate(&[FusionKind::Shift(0)]),
        Err(EstimatorError::InvalidArgument(_))
    ));
    bundle.ratio = None;
    assert!(estimate_covariate_shift(&sample, &bundle, 0.7, 1, 0.05).is_err());
}

#[test]
fn positivity_error_when_censoring_is_extreme() {
    let sample = benchmark_sample(120, 14);
    let mut bundle = oracle_bundle(&DgpSpec::benchmark());
    bundle.censoring = CensoringModel::new(HazardModel::constant(50.0, 2));
    assert!(matches!(
        estimate_fusion_dr(&sample, &bundle, 0.7, 0.05),
        Err(EstimatorError::Positivity { .. })
    ));
}

#[test]
fn cross_fitting_agrees_with_the_full_sample_fit() {
    let sample = benchmark_sample(1200, 31);
    let window = inspection_window(&sample, (0.0, 1.0)).unwrap();
    let config = survfuse::nuisance::NuisanceConfig::default();
    let bundle = survfuse::nuisance::fit_bundle(&sample, window, &config).unwrap();
    let options = EstimationOptions::default();
    let full = FusionEngine::new(&sample, &bundle, &[0.7], options.clone())
        .unwrap()
        .estimate(&[FusionKind::Dr])
        .unwrap();
    let cross = estimate_cross_fitted(
        &sample,
        window,
        &[0.7],
        &[FusionKind::Dr],
        3,
        &config,
        &options,
        5,
    )
    .unwrap();
    assert_eq!(cross.len(), 1);
    let (a, b) = (&full[0], &cross[0]);
    assert_eq!(b.gradient_values.len(), sample.len());
    assert!(
        (a.point - b.point).abs() < a.se,
        "{} vs {}",
        a.point,
        b.point
    );
    assert!((b.se / a.se - 1.0).abs() < 0.25, "{} vs {}", a.se, b.se);
    assert!(b.ci.0 <= b.point && b.point <= b.ci.1);
    let again = estimate_cross_fitted(
        &sample,
        window,
        &[0.7],
        &[FusionKind::Dr],
        3,
        &config,
        &options,
        5,
    )
    .unwrap();
    assert_eq!(again[0].point, b.point);
    assert!(matches!(
        estimate_cross_fitted(
            &sample,
            window,
            &[0.7],
            &[FusionKind::Dr],
            1,
            &config,
            &options,
            5
        ),
        Err(EstimatorError::InvalidArgument(_))
    ));
}
