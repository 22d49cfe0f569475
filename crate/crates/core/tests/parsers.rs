use kahler_killing::pipeline::{parse_config, Command, OracleKind};
use kahler_killing::profiles::ProfileSpec;
use kahler_killing::verify::{GridSpec, Tolerances};
use kahler_killing::Rp1;
use proptest::prelude::*;

fn torus(gamma: &str) -> String {
    format!(
        r#"{{"profile": {{"tau_min": 0, "tau_max": 1, "a": 2}},
            "surface": {{"type": "torus", "gamma": {gamma}}}}}"#
    )
}

#[test]
fn minimal_torus_config_gets_defaults() {
    let cfg = parse_config(&torus(r#"{"type": "cos", "c0": 3, "c1": 0.5}"#)).unwrap();
    assert_eq!(cfg.verify.grid, GridSpec { bx: 8, by: 8, nt: 16, nth: 4 });
    assert_eq!(cfg.verify.tolerances, Tolerances::default());
    assert_eq!(cfg.verify.tol_scale, 1.0);
    assert_eq!(cfg.oracle, OracleKind::Construction);
    assert_eq!(cfg.command, None);
}

#[test]
fn gamma_meeting_the_interval_is_rejected() {
    let err = parse_config(&torus(r#"{"type": "cos", "c0": 0.7, "c1": 0.5}"#)).unwrap_err();
    assert_eq!(err.kind(), "config");
    assert!(err.to_string().contains("surface.gamma"));
}

#[test]
fn infinite_gamma_literal() {
    parse_config(&torus(r#""inf""#)).unwrap();
    assert!(parse_config(&torus(r#""infinity""#)).is_err());
}

#[test]
fn errors_carry_the_json_path() {
    let e = parse_config(r#"{"verify": {"grid": {"bx": 8, "by": 8, "nt": 16, "nth": "4"}}}"#).unwrap_err();
    assert!(e.to_string().contains("verify.grid.nth"), "{e}");
    let e = parse_config(r#"{"verify": {"tolerances": {"ricci": -1}}, "oracle": "fubini"}"#).unwrap_err();
    assert!(e.to_string().contains("ricci"), "{e}");
}

#[test]
fn fubini_needs_no_construction() {
    let cfg = parse_config(r#"{"oracle": "fubini", "command": "fubini-check"}"#).unwrap();
    assert_eq!(cfg.command, Some(Command::FubiniCheck));
    assert_eq!((cfg.fubini.k, cfg.fubini.l), (0, 1));
    assert!(parse_config(r#"{"oracle": "fubini", "fubini": {"k": 0, "l": 0}}"#).is_err());
    assert!(parse_config("{}").is_err());
}

#[test]
fn trailing_garbage_is_rejected() {
    assert!(parse_config(r#"{"oracle": "fubini"} x"#).is_err());
}

proptest! {
    #[test]
    fn parse_config_never_panics(s in "\\PC{0,200}") {
        let _ = parse_config(&s);
    }

    #[test]
    fn constant_gamma_accepted_iff_outside(c0 in -5.0f64..5.0) {
        let r = parse_config(&torus(&format!(r#"{{"type": "constant", "c0": {c0}}}"#)));
        prop_assert_eq!(r.is_ok(), !(0.0..=1.0).contains(&c0));
    }

    #[test]
    fn rp1_display_round_trips(x in -1e6f64..1e6) {
        let p = Rp1::from_real(x);
        let back: Rp1 = p.to_string().parse().unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn rp1_parse_never_panics(s in "\\PC{0,40}") {
        let _ = s.parse::<Rp1>();
    }

    #[test]
    fn grid_spec_round_trips(bx in 1usize..64, by in 1usize..64, nt in 1usize..64, nth in 1usize..64) {
        let g: GridSpec = format!("{bx},{by},{nt},{nth}").parse().unwrap();
        prop_assert_eq!(g, GridSpec { bx, by, nt, nth });
    }

    #[test]
    fn profile_spec_serde_round_trips(lo in -3.0f64..3.0, len in 0.1f64..4.0, a in 0.1f64..5.0,
                                      coeffs in proptest::collection::vec(-0.05f64..0.05, 0..4)) {
        let json = serde_json::json!({
            "tau_min": lo, "tau_max": lo + len, "a": a,
            "q_factor": {"type": "poly", "coeffs": coeffs}
        });
        let spec: ProfileSpec = serde_json::from_value(json.clone()).unwrap();
        prop_assert_eq!(serde_json::to_value(&spec).unwrap(), json);
        match spec.build() {
            Ok(p) => {
                for k in 1..16 {
                    prop_assert!(p.q(lo + len * k as f64 / 16.0) > 0.0);
                }
            }
            Err(e) => prop_assert_eq!(e.kind(), "invalid-profile"),
        }
    }
}
