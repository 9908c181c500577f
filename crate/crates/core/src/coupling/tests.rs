use super::*;
use crate::microgrid::{build_microgrid, MicrogridParams};
use crate::model::discretize_euler;
use crate::signal::{Signal, SignalSet};
use crate::wann::{realize_state_space, WannParams};
use approx::assert_relative_eq;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const DT: f64 = 0.001;

fn case_subsystems() -> Vec<SubsystemModel> {
    let mg = discretize_euler(&build_microgrid(MicrogridParams::default()).unwrap(), DT).unwrap();
    let dc = realize_state_space(&WannParams::reference()).unwrap();
    vec![mg, dc]
}

fn case_terms() -> Vec<CouplingTerm> {
    vec![
        CouplingTerm::parse("dc.u_DC = COP * mg.D_load * mg.V_bus * mg.I_O @ scale 1e-3").unwrap(),
        CouplingTerm::parse("mg.I_O = mg.V_bus / R_DC").unwrap(),
        CouplingTerm::parse("mg.I_loss = mg.V_bus * H(dc.x1)").unwrap(),
    ]
}

fn stub(id: &str, states: &[&str], controls: &[&str], dists: &[&str]) -> SubsystemModel {
    let mk = |names: &[&str], role: fn(&str, &str) -> Signal| {
        SignalSet::new(names.iter().map(|n| role(n, "-")).collect()).unwrap()
    };
    SubsystemModel::new(
        id,
        mk(states, |n, u| Signal::state(n.to_string(), u)),
        mk(controls, |n, u| Signal::control(n.to_string(), u)),
        mk(dists, |n, u| Signal::disturbance(n.to_string(), u)),
        SignalSet::empty(),
        DT,
        Arc::new(|x, u, d, out| {
            let drive: f64 = u.iter().sum::<f64>() + d.iter().sum::<f64>();
            for (o, xi) in out.iter_mut().zip(x) {
                *o = 0.5 * xi + drive;
            }
        }),
        Arc::new(|_x, _out| {}),
    )
    .unwrap()
}

#[test]
fn case_study_terms_pass_all_rules() {
    let report = validate(&case_terms(), &case_subsystems()).unwrap();
    assert!(report.is_valid(), "{report}");
}

#[test]
fn duplicate_receiver_breaks_rule_3() {
    let mut terms = case_terms();
    terms.push(CouplingTerm::parse("dc.u_DC = mg.V_bus").unwrap());
    let report = validate(&terms, &case_subsystems()).unwrap();
    assert!(report.violations.iter().any(|v| v.rule == 3));
    assert!(report.to_string().contains("dc.u_DC"));
}

#[test]
fn mutual_dependence_breaks_rule_4_with_cycle_trace() {
    // the load-current term rewritten to depend on the cooling input, while
    // the cooling input still depends on the load current
    let terms = vec![
        CouplingTerm::parse("dc.u_DC = COP * mg.D_load * mg.V_bus * mg.I_O @ scale 1e-3").unwrap(),
        CouplingTerm::parse("mg.I_O = dc.u_DC / 3.7").unwrap(),
        CouplingTerm::parse("mg.I_loss = mg.V_bus * H(dc.x1)").unwrap(),
    ];
    let report = validate(&terms, &case_subsystems()).unwrap();
    let v4: Vec<_> = report.violations.iter().filter(|v| v.rule == 4).collect();
    assert_eq!(v4.len(), 1);
    assert!(v4[0].message.contains("dc.u_DC"), "{}", v4[0].message);
    assert!(v4[0].message.contains("mg.I_O"), "{}", v4[0].message);

    // deterministic: the same input yields the same report
    let again = validate(&terms, &case_subsystems()).unwrap();
    assert_eq!(report, again);
}

#[test]
fn three_subsystem_term_breaks_rule_1() {
    let subs = vec![
        stub("a", &["x"], &["u"], &[]),
        stub("b", &["y"], &[], &[]),
        stub("c", &["z"], &[], &[]),
    ];
    let terms = vec![CouplingTerm::parse("a.u = b.y + c.z").unwrap()];
    let report = validate(&terms, &subs).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].rule, 1);
}

#[test]
fn state_receiver_breaks_rule_2() {
    let terms = vec![CouplingTerm::parse("mg.V_bus = dc.x1").unwrap()];
    let report = validate(&terms, &case_subsystems()).unwrap();
    assert!(report.violations.iter().any(|v| v.rule == 2));
}

#[test]
fn unknown_signal_is_config_error() {
    let terms = vec![CouplingTerm::parse("mg.I_O = dc.bogus").unwrap()];
    let err = validate(&terms, &case_subsystems()).unwrap_err();
    assert!(matches!(err, ModelError::Config { .. }));
}

#[test]
fn h_with_zero_gamma_is_flat() {
    let p = CouplingParams {
        h: HFamily::Linear {
            h0: 1.02e-4,
            t_ref: 20.0,
            gamma: 0.0,
        },
        ..CouplingParams::default()
    };
    for t in [-40.0, 0.0, 20.0, 150.0] {
        assert_eq!(eval_h(&p, t), 1.02e-4);
    }
}

#[test]
fn h_slope_sign_follows_gamma() {
    for (gamma, sign) in [(0.005, 1.0), (-1.0, -1.0)] {
        let p = CouplingParams {
            h: HFamily::Linear {
                h0: 1.02e-4,
                t_ref: 20.0,
                gamma,
            },
            ..CouplingParams::default()
        };
        let lo = eval_h(&p, 10.0);
        let hi = eval_h(&p, 60.0);
        assert!((hi - lo) * sign > 0.0);
    }
}

#[test]
fn case_b_h_goes_negative_above_t_ref_plus_one() {
    let p = CouplingParams {
        h: HFamily::Linear {
            h0: 1.02e-4,
            t_ref: 20.0,
            gamma: -1.0,
        },
        ..CouplingParams::default()
    };
    assert!(eval_h(&p, 21.5) < 0.0);
    assert!(eval_h(&p, 20.5) > 0.0);
}

#[test]
fn composed_dimensions_match_the_case_study() {
    let sys = compose(case_subsystems(), case_terms(), CouplingParams::default()).unwrap();
    use crate::model::DiscreteSystem;
    assert_eq!(sys.state_dim(), 15);
    assert_eq!(sys.control_names(), &["mg.D_sd", "mg.D_su", "mg.D_load"]);
    assert_eq!(sys.disturbance_names(), &["mg.G", "mg.T_inf"]);
    assert_eq!(sys.state_names()[0], "mg.SOC");
    assert_eq!(sys.state_names()[12], "dc.x1");
}

#[test]
fn zero_bus_voltage_kills_every_coupling() {
    let sys = compose(case_subsystems(), case_terms(), CouplingParams::default()).unwrap();
    let x = vec![0.0; 15];
    let u = [0.5, 0.15, 1.0];
    let d = [0.0, 25.0];
    let mut vals = vec![f64::NAN; 3];
    let mut env = sys.scratch();
    sys.coupling_values_into(&x, &u, &d, &mut vals, &mut env);
    assert_eq!(vals, vec![0.0, 0.0, 0.0]);
}

fn random_case_point(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut x = vec![
        rng.gen_range(0.1..0.9),
        rng.gen_range(-200.0..200.0),
        rng.gen_range(-20.0..100.0),
        rng.gen_range(250.0..400.0),
        rng.gen_range(120.0..200.0),
        rng.gen_range(10.0..80.0),
        rng.gen_range(-20.0..300.0),
        rng.gen_range(0.0..32.0),
        rng.gen_range(120.0..200.0),
        rng.gen_range(-50.0..50.0),
        rng.gen_range(-50.0..50.0),
        rng.gen_range(120.0..200.0),
    ];
    x.extend([rng.gen_range(10.0..40.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    let u = vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let d = vec![rng.gen_range(0.0..1200.0), rng.gen_range(0.0..40.0)];
    (x, u, d)
}

/// Stepping the coupled system must equal evaluating the three coupling
/// expressions by hand and stepping each subsystem with the substituted
/// inputs — exactly, not approximately.
#[test]
fn coupled_step_matches_manual_substitution() {
    let subs = case_subsystems();
    let params = CouplingParams::default();
    let sys = compose(subs.clone(), case_terms(), params.clone()).unwrap();
    use crate::model::DiscreteSystem;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..25 {
        let (x, u, d) = random_case_point(&mut rng);
        let mut got = vec![0.0; 15];
        sys.step_into(&x, &u, &d, &mut got).unwrap();

        // manual substitution in dependency order
        let v_bus = x[11];
        let i_o = v_bus / params.r_dc;
        let u_dc = 1e-3 * (params.cop * u[2] * v_bus * i_o);
        let i_loss = v_bus * params.eval_h(x[12]);

        let mut mg_next = vec![0.0; 12];
        subs[0]
            .step_into(&x[..12], &u, &[d[0], d[1], i_o, i_loss], &mut mg_next)
            .unwrap();
        let mut dc_next = vec![0.0; 3];
        subs[1].step_into(&x[12..], &[u_dc], &[], &mut dc_next).unwrap();

        assert_eq!(&got[..12], &mg_next[..]);
        assert_eq!(&got[12..], &dc_next[..]);
    }
}

/// Removing the terms and feeding the pre-computed coupling values as plain
/// disturbances must reproduce the coupled step exactly.
#[test]
fn decoupling_oracle() {
    let params = CouplingParams::default();
    let coupled = compose(case_subsystems(), case_terms(), params.clone()).unwrap();
    let open = compose(case_subsystems(), Vec::new(), params.clone()).unwrap();
    use crate::model::DiscreteSystem;
    assert_eq!(open.control_dim(), 4); // dc.u_DC stays external
    assert_eq!(open.disturbance_dim(), 4);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (x, u, d) = random_case_point(&mut rng);
        let mut coupled_next = vec![0.0; 15];
        coupled.step_into(&x, &u, &d, &mut coupled_next).unwrap();

        let mut vals = vec![0.0; 3];
        let mut env = coupled.scratch();
        coupled.coupling_values_into(&x, &u, &d, &mut vals, &mut env);
        let (u_dc, i_o, i_loss) = (vals[0], vals[1], vals[2]);

        let mut open_next = vec![0.0; 15];
        open.step_into(
            &x,
            &[u[0], u[1], u[2], u_dc],
            &[d[0], d[1], i_o, i_loss],
            &mut open_next,
        )
        .unwrap();
        assert_eq!(coupled_next, open_next);
    }
}

/// The electrical power diverted to the load equals the cooling input times
/// the unit adapter and the coefficient of performance, restated.
#[test]
fn power_bookkeeping_at_the_boundary() {
    let params = CouplingParams::default();
    let sys = compose(case_subsystems(), case_terms(), params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (x, u, d) = random_case_point(&mut rng);
        let mut vals = vec![0.0; 3];
        let mut env = sys.scratch();
        sys.coupling_values_into(&x, &u, &d, &mut vals, &mut env);
        let (u_dc, i_o, _) = (vals[0], vals[1], vals[2]);
        let electrical = u[2] * i_o * x[11];
        let from_cooling = u_dc / params.cop * 1000.0;
        assert_relative_eq!(electrical, from_cooling, max_relative = 1e-12, epsilon = 1e-12);
    }
}

#[test]
fn compose_is_idempotent_in_behavior() {
    let a = compose(case_subsystems(), case_terms(), CouplingParams::default()).unwrap();
    let b = compose(case_subsystems(), case_terms(), CouplingParams::default()).unwrap();
    use crate::model::DiscreteSystem;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (x, u, d) = random_case_point(&mut rng);
    let mut na = vec![0.0; 15];
    let mut nb = vec![0.0; 15];
    a.step_into(&x, &u, &d, &mut na).unwrap();
    b.step_into(&x, &u, &d, &mut nb).unwrap();
    let bits_a: Vec<u64> = na.iter().map(|v| v.to_bits()).collect();
    let bits_b: Vec<u64> = nb.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_a, bits_b);
}

#[test]
fn compose_rejects_invalid_terms_with_report() {
    let mut terms = case_terms();
    terms.push(CouplingTerm::parse("dc.u_DC = mg.V_bus").unwrap());
    let err = compose(case_subsystems(), terms, CouplingParams::default()).unwrap_err();
    match err {
        ModelError::Config { message, .. } => assert!(message.contains("rule 3"), "{message}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn term_parse_errors_carry_columns() {
    let err = CouplingTerm::parse("mg.I_O = mg.V_bus +").unwrap_err();
    assert!(matches!(err, ModelError::Parse { .. }));
    let err = CouplingTerm::parse("no_dot = 1").unwrap_err();
    assert!(matches!(err, ModelError::Parse { .. }));
    let err = CouplingTerm::parse("mg.I_O = 1 @ skale 2").unwrap_err();
    assert!(matches!(err, ModelError::Parse { .. }));
}

#[test]
fn parsed_scale_is_applied() {
    let t = CouplingTerm::parse("mg.I_O = mg.V_bus @ scale 0.5").unwrap();
    assert_eq!(t.unit_scale, 0.5);
    let sys = compose(
        case_subsystems(),
        vec![t],
        CouplingParams::default(),
    )
    .unwrap();
    let mut x = vec![0.0; 15];
    x[11] = 100.0;
    let mut vals = vec![0.0; 1];
    let mut env = sys.scratch();
    sys.coupling_values_into(&x, &[0.0; 3], &[0.0, 0.0, 0.0], &mut vals, &mut env);
    assert_eq!(vals[0], 50.0);
}

#[test]
fn table_h_family_interpolates() {
    let p = CouplingParams {
        h: HFamily::Table {
            t: vec![0.0, 50.0, 100.0],
            h: vec![1e-4, 2e-4, 0.0],
        },
        ..CouplingParams::default()
    };
    assert_relative_eq!(eval_h(&p, 25.0), 1.5e-4);
    assert_relative_eq!(eval_h(&p, 75.0), 1e-4);
}

#[test]
fn expression_h_family_evaluates_in_t() {
    let p = CouplingParams {
        h: HFamily::Expression {
            expr: parse_expression("1e-4 * (21 - T)").unwrap(),
        },
        ..CouplingParams::default()
    };
    assert_relative_eq!(eval_h(&p, 20.0), 1e-4);
    assert!(eval_h(&p, 25.0) < 0.0);
}
