use std::f64::consts::PI;

use approx::assert_relative_eq;

use lumpsim::leg::{default_leg, LEG2D_TOML};
use lumpsim::model::*;
use lumpsim::oracle::build_oracle;
use lumpsim::Error;

#[test]
fn bundled_file_is_the_default_leg() {
    let d = parse_description(LEG2D_TOML).unwrap();
    assert_eq!(d, default_leg());
    assert_eq!(d.dof(), 2);
    let ids: Vec<_> = d.actuators.iter().map(|a| a.id.as_str()).collect();
    assert_eq!(ids, ["MAA", "BAA"]);
    let table = [
        (0.1865, 367.8, 10.8, 0.1744, 6.54e-4),
        (0.2727, 291.8, 11.3, 0.2536, 6.37e-4),
    ];
    for (a, t) in d.actuators.iter().zip(table) {
        assert_eq!((a.mass, a.stiffness, a.damping, a.rest_length, a.area), t);
    }
    assert_eq!(d.joints[0].limits, [PI / 6.0, 2.0 * PI / 3.0]);
    assert_eq!(d.joints[1].limits, [0.0, PI / 2.0]);
}

#[test]
fn actuators_at_rest_length_in_nominal_pose() {
    let d = default_leg();
    let l = build_oracle(&d).unwrap().actuator_lengths(&[PI / 2.0, 0.0]);
    assert_relative_eq!(l[0], 0.1744, epsilon = 1e-9);
    assert_relative_eq!(l[1], 0.2536, epsilon = 1e-9);
}

#[test]
fn toml_and_json_round_trip() {
    let d = default_leg();
    assert_eq!(parse_description(&d.to_toml()).unwrap(), d);
    assert_eq!(parse_description(&d.to_json()).unwrap(), d);
    let stance = d.with_phase(Phase::Stance);
    assert_eq!(parse_description(&stance.to_json()).unwrap(), stance);
}

#[test]
fn defaults_are_applied() {
    let text = LEG2D_TOML
        .lines()
        .filter(|l| !l.starts_with("gravity") && !l.starts_with("phase"))
        .collect::<Vec<_>>()
        .join("\n");
    let d = parse_description(&text).unwrap();
    assert_eq!(d.gravity, 9.81);
    assert_eq!(d.phase, Phase::Swing);
}

fn expect_validation(text: &str) {
    match parse_description(text) {
        Err(Error::Validation(_)) => {}
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn dangling_link_is_rejected() {
    expect_validation(&LEG2D_TOML.replacen("child = \"calf\"", "child = \"calfX\"", 1));
}

#[test]
fn cycle_is_rejected() {
    // make the base a child of the calf as well
    let extra = "\n[[joints]]\nid = \"loop\"\nparent = \"calf\"\nchild = \"base\"\nparent_anchor = [0.0, 0.0]\nchild_anchor = [0.0, 0.0]\nlimits = [0.0, 1.0]\n";
    let text = LEG2D_TOML.replacen("[[actuators]]", &format!("{extra}\n[[actuators]]"), 1);
    expect_validation(&text);
}

#[test]
fn nonpositive_parameters_are_rejected() {
    expect_validation(&LEG2D_TOML.replacen("mass = 0.05", "mass = 0.0", 1));
    expect_validation(&LEG2D_TOML.replacen("stiffness_n_per_m = 367.8", "stiffness_n_per_m = -1.0", 1));
    expect_validation(&LEG2D_TOML.replacen(
        "limits = [0.0, 1.5707963267948966]",
        "limits = [1.0, 0.5]",
        1,
    ));
}

#[test]
fn unknown_keys_are_schema_errors() {
    let text = LEG2D_TOML.replacen("mass_kg = 0.1865", "mass_kg = 0.1865\ncolour = \"red\"", 1);
    assert!(matches!(parse_description(&text), Err(Error::Schema(_))));
    assert!(matches!(parse_description("links = 3"), Err(Error::Schema(_))));
}

#[test]
fn actuator_on_a_single_link_is_rejected() {
    let mut d = default_leg();
    d.actuators[0].attach_b.link = d.actuators[0].attach_a.link.clone();
    assert!(matches!(d.validate(), Err(Error::Validation(_))));
}

#[test]
fn state_validation_uses_closed_limits() {
    let d = default_leg();
    let ok = |q: Vec<f64>| validate_state(&d, &JointState::at_rest(q)).unwrap();
    assert!(ok(vec![PI / 2.0, PI / 4.0]));
    assert!(!ok(vec![0.0, 0.0]));
    assert!(ok(vec![PI / 6.0, 0.0]));
    assert!(matches!(
        validate_state(&d, &JointState::at_rest(vec![0.0])),
        Err(Error::Dimension { .. })
    ));
}
