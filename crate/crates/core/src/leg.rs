//! The bundled two-joint leg: base, hip, thigh, knee, calf, with a mono-articular
//! actuator spanning the hip and a bi-articular actuator spanning hip and knee.
//!
//! Link and attachment geometry is synthetic. The base-side attachment heights
//! are solved so that both actuators sit exactly at rest length at the nominal
//! pose (θ1, θ2) = (π/2, 0).

use std::f64::consts::PI;

use crate::math::{rotate, vec2, Vec2};
use crate::model::{Attachment, ElasticActuatorSpec, Joint, Link, Phase, RobotDescription};

pub const HIP_LIMITS: [f64; 2] = [PI / 6.0, 2.0 * PI / 3.0];
pub const KNEE_LIMITS: [f64; 2] = [0.0, PI / 2.0];
pub const NOMINAL_POSE: [f64; 2] = [PI / 2.0, 0.0];

/// Actuator constants of the bundled leg: (id, m, k, c, l0, S).
pub const ACTUATOR_TABLE: [(&str, f64, f64, f64, f64, f64); 2] = [
    ("MAA", 0.1865, 367.8, 10.8, 0.1744, 6.54e-4),
    ("BAA", 0.2727, 291.8, 11.3, 0.2536, 6.37e-4),
];

/// Free geometric choices of the synthetic leg.
#[derive(Debug, Clone, PartialEq)]
pub struct LegGeometry {
    pub base_mass: f64,
    pub thigh_mass: f64,
    pub calf_mass: f64,
    pub thigh_length: f64,
    pub calf_length: f64,
    pub hip_damping: f64,
    pub knee_damping: f64,
    /// x of the mono-articular base attachment; y is solved.
    pub maa_base_x: f64,
    /// Mono-articular attachment on the thigh, thigh frame.
    pub maa_thigh: [f64; 2],
    pub baa_base_x: f64,
    /// Bi-articular attachment on the calf, calf frame.
    pub baa_calf: [f64; 2],
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            base_mass: 0.04,
            thigh_mass: 0.05,
            calf_mass: 0.09,
            thigh_length: 0.255,
            calf_length: 0.15,
            hip_damping: 0.05,
            knee_damping: 0.045,
            maa_base_x: 0.14,
            maa_thigh: [0.165, 0.078],
            baa_base_x: 0.134,
            baa_calf: [0.139, 0.106],
        }
    }
}

/// Height on the base that puts a base attachment at distance `l0` from `target`,
/// taking the solution above the target.
fn base_height(x: f64, target: Vec2, l0: f64) -> f64 {
    let dx = target.x - x;
    assert!(dx.abs() < l0, "attachment cannot reach rest length");
    target.y + (l0 * l0 - dx * dx).sqrt()
}

pub fn leg_with(g: &LegGeometry) -> RobotDescription {
    let rod_link = |id: &str, mass: f64, len: f64| Link {
        id: id.into(),
        mass,
        com: [len / 2.0, 0.0],
        rod_length: len,
        inertia_zz: mass * len * len / 12.0,
    };
    let links = vec![
        Link {
            id: "base".into(),
            mass: g.base_mass,
            com: [0.0, 0.0],
            rod_length: 0.3,
            inertia_zz: g.base_mass * 0.3 * 0.3 / 12.0,
        },
        rod_link("thigh", g.thigh_mass, g.thigh_length),
        rod_link("calf", g.calf_mass, g.calf_length),
    ];
    // The thigh hangs straight down at θ1 = π/2.
    let hip_offset = -PI;
    let joints = vec![
        Joint {
            id: "hip".into(),
            parent: "base".into(),
            child: "thigh".into(),
            parent_anchor: [0.0, 0.0],
            child_anchor: [0.0, 0.0],
            limits: HIP_LIMITS,
            offset: hip_offset,
            damping: g.hip_damping,
        },
        Joint {
            id: "knee".into(),
            parent: "thigh".into(),
            child: "calf".into(),
            parent_anchor: [g.thigh_length, 0.0],
            child_anchor: [0.0, 0.0],
            limits: KNEE_LIMITS,
            offset: 0.0,
            damping: g.knee_damping,
        },
    ];

    let thigh_angle = hip_offset + NOMINAL_POSE[0];
    let calf_angle = thigh_angle + NOMINAL_POSE[1];
    let knee = rotate(thigh_angle, Vec2::new(g.thigh_length, 0.0));
    let maa_b = rotate(thigh_angle, vec2(g.maa_thigh));
    let baa_b = knee + rotate(calf_angle, vec2(g.baa_calf));

    let actuator = |row: (&str, f64, f64, f64, f64, f64), a: Attachment, b: Attachment| {
        let (id, m, k, c, l0, s) = row;
        ElasticActuatorSpec {
            id: id.into(),
            mass: m,
            stiffness: k,
            damping: c,
            rest_length: l0,
            area: s,
            attach_a: a,
            attach_b: b,
        }
    };
    let [maa, baa] = ACTUATOR_TABLE;
    let actuators = vec![
        actuator(
            maa,
            Attachment::new("base", [g.maa_base_x, base_height(g.maa_base_x, maa_b, maa.4)]),
            Attachment::new("thigh", g.maa_thigh),
        ),
        actuator(
            baa,
            Attachment::new("base", [g.baa_base_x, base_height(g.baa_base_x, baa_b, baa.4)]),
            Attachment::new("calf", g.baa_calf),
        ),
    ];

    RobotDescription {
        links,
        joints,
        actuators,
        gravity: crate::model::DEFAULT_GRAVITY,
        phase: Phase::Swing,
        stance_foot: Some(Attachment::new("calf", [g.calf_length, 0.0])),
        nominal_pose: Some(NOMINAL_POSE.to_vec()),
    }
}

/// The bundled leg in swing phase.
pub fn default_leg() -> RobotDescription {
    leg_with(&LegGeometry::default())
}

/// Text of the bundled `leg2d.toml`.
pub const LEG2D_TOML: &str = include_str!("../data/leg2d.toml");

/// Pressure schedule cycling through the three vertices of a triangle in
/// pressure space, 2 s per vertex, as JSON.
pub const TRIANGLE_SCHEDULE_JSON: &str = include_str!("../data/tri.json");
