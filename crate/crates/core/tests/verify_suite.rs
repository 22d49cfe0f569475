use std::f64::consts::PI;

use kahler_killing::construction::{ConstructionData, Perturbation};
use kahler_killing::profiles::{Interval, MomentumProfile};
use kahler_killing::surfaces::{GammaField, Surface};
use kahler_killing::verify::{all_pass, run_suite, CheckReport, GridSpec, VerifyConfig};

fn profile() -> MomentumProfile {
    MomentumProfile::canonical(Interval::new(0.0, 1.0).unwrap(), 2.0).unwrap()
}

fn torus(perturbation: Perturbation) -> ConstructionData {
    let surface = Surface::torus(PI * 6f64.sqrt(), GammaField::TorusCos { c0: 3.0, c1: 0.5 }, 2.0, 0.5).unwrap();
    ConstructionData::new(profile(), surface)
        .unwrap()
        .with_perturbation(perturbation)
}

fn small() -> VerifyConfig {
    VerifyConfig {
        grid: GridSpec { bx: 3, by: 3, nt: 5, nth: 2 },
        oracle_samples: 12,
        ..Default::default()
    }
}

fn failing(r: &[CheckReport]) -> Vec<&str> {
    r.iter().filter(|c| !c.pass).map(|c| c.check.as_str()).collect()
}

#[test]
fn torus_passes_on_a_small_grid() {
    let r = run_suite(&torus(Perturbation::None), &small()).unwrap();
    assert!(all_pass(&r), "{:?}", failing(&r));
    assert!(r.windows(2).all(|w| w[0].check < w[1].check));
}

#[test]
fn sphere_passes_on_both_charts() {
    let surface = Surface::sphere(1.3, Some((-2.0, 0.7)), 2.0, 0.5).unwrap();
    let data = ConstructionData::new(profile(), surface).unwrap();
    let r = run_suite(&data, &small()).unwrap();
    assert!(all_pass(&r), "{:?}", failing(&r));
    assert!(r[0].grid.starts_with("2x"));
}

#[test]
fn gauge_shift_leaves_residuals_passing() {
    let surface = Surface::torus(PI * 6f64.sqrt(), GammaField::TorusCos { c0: 3.0, c1: 0.5 }, 2.0, 0.5)
        .unwrap()
        .with_gauge_shift(0.7);
    let data = ConstructionData::new(profile(), surface).unwrap();
    let r = run_suite(&data, &small()).unwrap();
    assert!(all_pass(&r), "{:?}", failing(&r));
}

#[test]
fn negative_controls_fail_their_designated_checks() {
    let cases: [(Perturbation, &[&str]); 3] = [
        (
            Perturbation::BetaPower { power: 1.5 },
            &["kaehler.nabla_j", "laplacian_identity", "gamma_recovery.distance", "ode.dvp"],
        ),
        (Perturbation::ReversedJ, &["kaehler.nabla_j"]),
        (
            Perturbation::FibreWarp { eps: 0.1 },
            &["geodesic_gradient.dq_wedge_dtau", "geodesic_gradient.nabla_v_v"],
        ),
    ];
    for (p, expected) in cases {
        let r = run_suite(&torus(p.clone()), &small()).unwrap();
        let f = failing(&r);
        for e in expected {
            assert!(f.contains(e), "{p:?}: {e} passed; failing = {f:?}");
        }
        assert!(!r.iter().any(|c| c.check == "oracle.christoffel"));
    }
}

#[test]
fn reports_are_reproducible() {
    let a = serde_json::to_string(&run_suite(&torus(Perturbation::None), &small()).unwrap()).unwrap();
    let b = serde_json::to_string(&run_suite(&torus(Perturbation::None), &small()).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = small();
    cfg.tol_scale = 0.0;
    assert!(run_suite(&torus(Perturbation::None), &cfg).is_err());
}

#[test]
fn numeric_laplacian_at_the_reference_point() {
    use kahler_killing::verify::Probe;
    let data = torus(Perturbation::None);
    let c = &data.charts()[0];
    let (j, tau) = (c.complex_structure(), c.tau());
    let probe = Probe::new(c, &j, &tau);
    let jet = probe.jet(&[0.25, 0.0, 0.5, 0.0]).unwrap();
    assert!((jet.laplacian + 0.4).abs() < 1e-9);
    assert!((jet.phi + 0.2).abs() < 1e-9);
    assert!(jet.psi.abs() < 1e-9);
    assert!((jet.q - 1.0).abs() < 1e-12);
}
