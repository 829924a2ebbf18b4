use survfuse::estimators::EstimatorKind;
use survfuse::nuisance::W1Law;
use survfuse::numerics::RngStream;
use survfuse::simulation::{
    generate_dataset, rate_study, run_replications, run_replications_with, true_phi, true_phi_for,
    DgpSpec, NuisanceMode, SimConfig,
};

fn small_config() -> SimConfig {
    SimConfig {
        n_total: vec![300],
        t_star: vec![0.2, 0.7],
        replications: 2,
        seed: 5,
        estimators: vec![
            EstimatorKind::CsOnly,
            EstimatorKind::RcOnly,
            EstimatorKind::FusionDr,
            EstimatorKind::FusionEff,
            EstimatorKind::NaiveIvw,
        ],
        ..SimConfig::default()
    }
}

#[test]
fn true_phi_examples() {
    let d = DgpSpec::benchmark();
    assert_eq!(true_phi(&d, 0.0), 1.0);
    // four-decimal reference values; 0.3925 is 6e-5 above the closed form
    assert!((true_phi(&d, 0.7) - 0.4823).abs() < 1e-4);
    assert!((true_phi(&d, 0.9) - 0.3925).abs() < 1e-4);
    assert!((true_phi(&d, 0.2) - 0.8110).abs() < 1e-4);
}

#[test]
fn true_phi_matches_midpoint_quadrature() {
    // 10^6 midpoint nodes in w1 for each value of w2
    let d = DgpSpec::benchmark();
    for t in [0.2, 0.7, 0.9, 2.0] {
        let m = 1_000_000;
        let mut acc = 0.0;
        for i in 0..m {
            let w = (i as f64 + 0.5) / m as f64;
            acc += 0.5 * (-(0.8 + 0.4 * w) * t).exp() + 0.5 * (-(0.8 + 0.6 * w) * t).exp();
        }
        let q = acc / m as f64;
        assert!((q - true_phi(&d, t)).abs() < 1e-8, "t = {t}");
        assert_eq!(true_phi_for(&d, t, W1Law::Uniform), true_phi(&d, t));
    }
}

#[test]
fn dataset_shape_and_support() {
    let d = DgpSpec::benchmark();
    let s = generate_dataset(&d, 300, &mut RngStream::new(1, 0)).unwrap();
    assert_eq!(s.n_right_censored(), 100);
    assert_eq!(s.n_current_status(), 200);
    assert!(s.current_status().all(|(_, c, _)| c > 0.5 && c < 1.0));
}

#[test]
fn current_status_indicator_matches_the_cdf_near_three_quarters() {
    let d = DgpSpec::benchmark();
    let s = generate_dataset(&d, 150_000, &mut RngStream::new(2, 0)).unwrap();
    let near: Vec<bool> = s
        .current_status()
        .filter(|(_, c, _)| (c - 0.75).abs() < 0.01)
        .map(|(_, _, delta)| delta)
        .collect();
    let p = near.iter().filter(|&&x| x).count() as f64 / near.len() as f64;
    // E[F(0.75 | W) | C = 0.75]: W reweighted by the inspection density at 0.75
    let (mut num, mut den) = (0.0, 0.0);
    let m = 20_000;
    for w2 in [0.0, 1.0] {
        for i in 0..m {
            let w1 = (i as f64 + 0.5) / m as f64;
            let rate = 0.8 + 0.4 * w1 + 0.2 * w1 * w2;
            let b = 0.75 + 0.5 * w1 + 0.1 * w2;
            let g = 2.0 * b * 0.5f64.powf(b - 1.0);
            num += g * (1.0 - (-rate * 0.75).exp());
            den += g;
        }
    }
    let target = num / den;
    assert!(near.len() > 2000);
    assert!(
        (p - target).abs() < 0.01 + 3.0 * (target * (1.0 - target) / near.len() as f64).sqrt(),
        "{p} vs {target}"
    );
}

#[test]
fn replications_are_deterministic() {
    let c = SimConfig {
        replications: 1,
        ..small_config()
    };
    let a = serde_json::to_string(&run_replications(&c).unwrap()).unwrap();
    let b = serde_json::to_string(&run_replications(&c).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn threads_do_not_change_the_report() {
    let c = small_config();
    let a = run_replications_with(&c, 1).unwrap();
    let b = run_replications_with(&c, 3).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn report_shape_and_invariants() {
    let c = small_config();
    let r = run_replications(&c).unwrap();
    assert_eq!(r.cells.len(), 2 * 5);
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 1 + 10);
    for cell in &r.cells {
        if let (Some(b), Some(m)) = (cell.bias, cell.mse) {
            assert!(m >= b * b * (1.0 - 1e-12));
        }
        if let Some(cov) = cell.coverage {
            assert!((0.0..=1.0).contains(&cov));
        }
    }
    // out of the window the current-status estimators are not identified
    let cs = r.cell(EstimatorKind::CsOnly, 300, 0.2).unwrap();
    assert_eq!(cs.not_identified, 2);
    assert_eq!(cs.failures, 0);
    assert!(cs.mean_point.is_none());
    assert!(!r.cell(EstimatorKind::FusionDr, 300, 0.7).unwrap().flagged);
}

#[test]
fn oracle_and_misspecified_modes_run() {
    for mode in [
        NuisanceMode::Oracle,
        NuisanceMode::MisspecEvent,
        NuisanceMode::MisspecGr,
    ] {
        let c = SimConfig {
            nuisance: mode,
            replications: 1,
            t_star: vec![0.7],
            estimators: vec![EstimatorKind::FusionDr],
            ..small_config()
        };
        let r = run_replications(&c).unwrap();
        assert_eq!(r.cells[0].failures, 0, "{mode:?}: {:?}", r.failure_messages);
    }
}

#[test]
fn rate_study_preconditions() {
    let c = SimConfig {
        n_total: vec![300, 600],
        ..SimConfig::rate_default()
    };
    assert!(rate_study(&c, 1).is_err());
    let c = SimConfig {
        replications: 10,
        ..SimConfig::rate_default()
    };
    assert!(rate_study(&c, 1).is_err());
}
