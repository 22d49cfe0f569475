use std::f64::consts::PI;

use kahler_killing::construction::{ConstructionData, Perturbation};
use kahler_killing::extract::Oracle;
use kahler_killing::{Error, Rp1};
use kahler_killing::extract::{extract_all, round_trip, ConstructionOracle, ExtractOptions, RoundTripOptions};
use kahler_killing::profiles::{Interval, MomentumProfile};
use kahler_killing::surfaces::{GammaField, Surface};

fn canonical() -> MomentumProfile {
    MomentumProfile::canonical(Interval::new(0.0, 1.0).unwrap(), 2.0).unwrap()
}

#[test]
fn torus_round_trip() {
    let surface = Surface::torus(PI * 6f64.sqrt(), GammaField::TorusCos { c0: 3.0, c1: 0.5 }, 2.0, 0.5).unwrap();
    let data = ConstructionData::new(canonical(), surface).unwrap();
    let r = round_trip(&data, &ExtractOptions::default(), &RoundTripOptions::default()).unwrap();
    assert!(r.max_metric_deviation < 1e-3);
    assert!(r.gamma_outside_interval);
}

#[test]
fn sphere_round_trip() {
    let surface = Surface::sphere(1.3, Some((-2.0, 0.7)), 2.0, 0.5).unwrap();
    let data = ConstructionData::new(canonical(), surface).unwrap();
    let r = round_trip(&data, &ExtractOptions::default(), &RoundTripOptions::default()).unwrap();
    assert!(r.max_metric_deviation < 1e-3);
    assert!(r.gamma_outside_interval);
}

#[test]
fn shaped_profile_is_recovered() {
    let profile = MomentumProfile::new(Interval::new(-1.0, 2.0).unwrap(), 1.5, vec![0.1, -0.05, 0.02]).unwrap();
    let surface = Surface::torus(2.0, GammaField::Constant(5.0), 1.5, 0.5).unwrap();
    let data = ConstructionData::new(profile.clone(), surface).unwrap();
    let o = ConstructionOracle::new(data.charts().remove(0), vec![[0.3, 0.3]]);
    let ex = extract_all(&[&o], &ExtractOptions::default()).unwrap().remove(0);
    assert!(ex.gamma[0].gamma.chordal_distance(&kahler_killing::Rp1::Finite(5.0)) < 1e-9);
    let p = &ex.profile.profile;
    assert!((p.a - 1.5).abs() < 1e-9);
    for k in 0..=20 {
        let t = -1.0 + 3.0 * k as f64 / 20.0;
        assert!((p.q(t) - profile.q(t)).abs() < 1e-6);
    }
}

struct Scaled {
    inner: ConstructionOracle,
    tau: ScaledTau,
}

struct ScaledTau(kahler_killing::construction::TauField);

impl kahler_killing::geometry::ScalarField for ScaledTau {
    fn value(&self, p: &[f64]) -> kahler_killing::Result<f64> {
        Ok(2.0 * self.0.value(p)?)
    }
}

impl Oracle for Scaled {
    fn metric(&self) -> &dyn kahler_killing::geometry::MetricField {
        self.inner.metric()
    }
    fn potential(&self) -> &dyn kahler_killing::geometry::ScalarField {
        &self.tau
    }
    fn complex_structure(&self) -> &dyn kahler_killing::geometry::AlmostComplexField {
        self.inner.complex_structure()
    }
    fn seeds(&self) -> Vec<Vec<f64>> {
        self.inner.seeds()
    }
    fn base_point(&self, p: &[f64]) -> Option<[f64; 2]> {
        self.inner.base_point(p)
    }
}

fn torus_data() -> ConstructionData {
    let surface = Surface::torus(PI * 6f64.sqrt(), GammaField::TorusCos { c0: 3.0, c1: 0.5 }, 2.0, 0.5).unwrap();
    ConstructionData::new(canonical(), surface).unwrap()
}

#[test]
fn doubled_potential_doubles_interval_and_a() {
    let chart = torus_data().charts().remove(0);
    let o = Scaled {
        tau: ScaledTau(chart.tau()),
        inner: ConstructionOracle::new(chart, vec![[0.25, 0.5]]),
    };
    let ex = extract_all(&[&o], &ExtractOptions::default()).unwrap().remove(0);
    let iv = ex.profile.profile.interval;
    assert!(iv.tau_min.abs() < 1e-9 && (iv.tau_max - 2.0).abs() < 1e-9);
    assert!((ex.profile.profile.a - 4.0).abs() < 1e-8);
    assert!(ex.gamma[0].gamma.chordal_distance(&Rp1::Finite(6.0)) < 1e-9);
}

#[test]
fn seeds_rotated_in_theta_give_the_same_data() {
    struct Rotated(ConstructionOracle);
    impl Oracle for Rotated {
        fn metric(&self) -> &dyn kahler_killing::geometry::MetricField {
            self.0.metric()
        }
        fn potential(&self) -> &dyn kahler_killing::geometry::ScalarField {
            self.0.potential()
        }
        fn complex_structure(&self) -> &dyn kahler_killing::geometry::AlmostComplexField {
            self.0.complex_structure()
        }
        fn seeds(&self) -> Vec<Vec<f64>> {
            self.0.seeds().into_iter().map(|mut s| {
                s[3] += 2.1;
                s
            }).collect()
        }
        fn base_point(&self, p: &[f64]) -> Option<[f64; 2]> {
            self.0.base_point(p)
        }
    }
    let chart = torus_data().charts().remove(0);
    let a = ConstructionOracle::new(chart.clone(), vec![[0.7, 0.1]]);
    let b = Rotated(ConstructionOracle::new(chart, vec![[0.7, 0.1]]));
    let opts = ExtractOptions::default();
    let ea = extract_all(&[&a], &opts).unwrap().remove(0);
    let eb = extract_all(&[&b], &opts).unwrap().remove(0);
    assert!(ea.gamma[0].gamma.chordal_distance(&eb.gamma[0].gamma) < 1e-12);
    for k in 0..3 {
        assert!((ea.h[0].h[k] - eb.h[0].h[k]).abs() < 1e-9);
    }
}

#[test]
fn fibre_warp_is_not_a_function_of_tau() {
    let data = torus_data().with_perturbation(Perturbation::FibreWarp { eps: 0.1 });
    let o = ConstructionOracle::new(data.charts().remove(0), vec![[0.1, 0.5], [0.4, 0.5]]);
    let err = extract_all(&[&o], &ExtractOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NotFunctionOfTau { .. }), "{err:?}");
}

#[test]
fn beta_power_breaks_gamma_recovery() {
    let data = torus_data().with_perturbation(Perturbation::BetaPower { power: 1.5 });
    let o = ConstructionOracle::new(data.charts().remove(0), vec![[0.1, 0.5]]);
    let err = extract_all(&[&o], &ExtractOptions::default()).unwrap_err();
    assert!(matches!(err, Error::FiberInconsistency { .. } | Error::InconsistentOracle(_)), "{err:?}");
}
