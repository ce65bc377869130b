//! Robot descriptions: planar skeletons with revolute joints and the elastic
//! actuators spanning them.
//!
//! Descriptions are read from TOML (or JSON, which shares the schema) in strict
//! mode: unknown keys are schema errors, and a parsed description is always
//! validated before it is returned.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRAVITY: f64 = 9.81;

fn default_gravity() -> f64 {
    DEFAULT_GRAVITY
}

/// A point fixed in a link's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attachment {
    pub link: String,
    pub point: [f64; 2],
}

impl Attachment {
    pub fn new(link: impl Into<String>, point: [f64; 2]) -> Self {
        Self {
            link: link.into(),
            point,
        }
    }
}

/// Continuous parameters of one linear elastic actuator.
///
/// Positive force is extensile: it does positive work on elongation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticActuatorSpec {
    pub id: String,
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    #[serde(rename = "stiffness_n_per_m")]
    pub stiffness: f64,
    #[serde(rename = "damping_ns_per_m")]
    pub damping: f64,
    #[serde(rename = "rest_length_m")]
    pub rest_length: f64,
    /// Effective area mapping pressure to axial force, F = S·P.
    #[serde(rename = "area_m2")]
    pub area: f64,
    pub attach_a: Attachment,
    pub attach_b: Attachment,
}

impl ElasticActuatorSpec {
    /// Mass per unit length at the current length `length`.
    pub fn linear_density(&self, length: f64) -> f64 {
        self.mass / length
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        let positive = [
            ("mass_kg", self.mass),
            ("stiffness_n_per_m", self.stiffness),
            ("rest_length_m", self.rest_length),
            ("area_m2", self.area),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "actuator '{id}': {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::Validation(format!(
                "actuator '{id}': damping_ns_per_m must be nonnegative, got {}",
                self.damping
            )));
        }
        if self.attach_a.link == self.attach_b.link {
            return Err(Error::Validation(format!(
                "actuator '{id}': both ends attach to link '{}'",
                self.attach_a.link
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: String,
    pub mass: f64,
    /// Centre of mass in the link frame, m.
    pub com: [f64; 2],
    pub rod_length: f64,
    /// Rotational inertia about the centre of mass, kg·m².
    pub inertia_zz: f64,
}

/// Revolute joint. The child frame sits at angle `parent + offset + q` and the
/// two anchors coincide in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub id: String,
    pub parent: String,
    pub child: String,
    pub parent_anchor: [f64; 2],
    pub child_anchor: [f64; 2],
    /// Closed interval [lo, hi] in rad.
    pub limits: [f64; 2],
    #[serde(default)]
    pub offset: f64,
    /// Viscous joint friction, N·m·s/rad.
    #[serde(default)]
    pub damping: f64,
}

impl Joint {
    pub fn within_limits(&self, q: f64) -> bool {
        q >= self.limits[0] && q <= self.limits[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Root link fixed to the world.
    #[default]
    Swing,
    /// Foot pinned to the ground; the root keeps its orientation and translates.
    Stance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    #[serde(default)]
    pub actuators: Vec<ElasticActuatorSpec>,
    /// Magnitude of gravity along −y, m/s².
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance_foot: Option<Attachment>,
    /// Reference pose used for initial states and model export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_pose: Option<Vec<f64>>,
}

/// Input document format for [`parse_description_as`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Toml,
    Json,
}

/// Parse and validate a description. JSON is detected by a leading `{`.
pub fn parse_description(text: &str) -> Result<RobotDescription> {
    let format = if text.trim_start().starts_with('{') {
        DocFormat::Json
    } else {
        DocFormat::Toml
    };
    parse_description_as(text, format)
}

pub fn parse_description_as(text: &str, format: DocFormat) -> Result<RobotDescription> {
    let desc: RobotDescription = match format {
        DocFormat::Toml => toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?,
        DocFormat::Json => {
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?
        }
    };
    desc.validate()?;
    Ok(desc)
}

impl RobotDescription {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.links.iter().position(|l| l.id == id)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("description serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("description serializes to JSON")
    }

    pub fn with_phase(&self, phase: Phase) -> Self {
        Self {
            phase,
            ..self.clone()
        }
    }

    /// Reference pose; the midpoint of each joint range when not given.
    pub fn nominal_pose(&self) -> Vec<f64> {
        match &self.nominal_pose {
            Some(q) => q.clone(),
            None => self
                .joints
                .iter()
                .map(|j| 0.5 * (j.limits[0] + j.limits[1]))
                .collect(),
        }
    }

    pub fn areas(&self) -> Vec<f64> {
        self.actuators.iter().map(|a| a.area).collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        self.joints.iter().zip(q).all(|(j, &v)| j.within_limits(v))
    }

    /// Index of the unique root link. Only meaningful on a validated description.
    pub fn root_link(&self) -> usize {
        let children: HashSet<&str> = self.joints.iter().map(|j| j.child.as_str()).collect();
        self.links
            .iter()
            .position(|l| !children.contains(l.id.as_str()))
            .expect("validated description has a root")
    }

    pub fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));

        if self.links.is_empty() {
            return v("description has no links".into());
        }
        let mut link_ids = HashSet::new();
        for l in &self.links {
            if !link_ids.insert(l.id.as_str()) {
                return v(format!("duplicate link id '{}'", l.id));
            }
            if !(l.mass.is_finite() && l.mass > 0.0) {
                return v(format!("link '{}': mass must be positive", l.id));
            }
            if !(l.inertia_zz.is_finite() && l.inertia_zz >= 0.0) {
                return v(format!("link '{}': inertia_zz must be nonnegative", l.id));
            }
            if !(l.rod_length.is_finite() && l.rod_length >= 0.0) {
                return v(format!("link '{}': rod_length must be nonnegative", l.id));
            }
            if !l.com.iter().all(|c| c.is_finite()) {
                return v(format!("link '{}': com must be finite", l.id));
            }
        }

        let mut joint_ids = HashSet::new();
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        for j in &self.joints {
            if !joint_ids.insert(j.id.as_str()) {
                return v(format!("duplicate joint id '{}'", j.id));
            }
            for end in [&j.parent, &j.child] {
                if !link_ids.contains(end.as_str()) {
                    return v(format!("joint '{}' references undefined link '{end}'", j.id));
                }
            }
            if j.parent == j.child {
                return v(format!("joint '{}' connects link '{}' to itself", j.id, j.child));
            }
            if !(j.limits[0].is_finite() && j.limits[1].is_finite() && j.limits[0] < j.limits[1])
            {
                return v(format!("joint '{}': limits must satisfy lo < hi", j.id));
            }
            if !(j.damping.is_finite() && j.damping >= 0.0) || !j.offset.is_finite() {
                return v(format!("joint '{}': damping must be nonnegative", j.id));
            }
            if parent_of.insert(j.child.as_str(), j.parent.as_str()).is_some() {
                return v(format!(
                    "link '{}' has more than one parent joint (skeleton must be a tree)",
                    j.child
                ));
            }
        }

        // Walking up from every link must reach the root without revisiting a link.
        let roots: Vec<&str> = self
            .links
            .iter()
            .map(|l| l.id.as_str())
            .filter(|id| !parent_of.contains_key(id))
            .collect();
        for l in &self.links {
            let mut seen = HashSet::new();
            let mut cur = l.id.as_str();
            while let Some(&p) = parent_of.get(cur) {
                if !seen.insert(cur) {
                    return v(format!("skeleton joints form a cycle through link '{cur}'"));
                }
                cur = p;
            }
        }
        match roots.len() {
            1 => {}
            0 => return v("skeleton joints form a cycle (no root link)".into()),
            n => return v(format!("skeleton has {n} root links; exactly one is required")),
        }

        let mut act_ids = HashSet::new();
        for a in &self.actuators {
            if !act_ids.insert(a.id.as_str()) {
                return v(format!("duplicate actuator id '{}'", a.id));
            }
            for end in [&a.attach_a, &a.attach_b] {
                if !link_ids.contains(end.link.as_str()) {
                    return v(format!(
                        "actuator '{}' attaches to undefined link '{}'",
                        a.id, end.link
                    ));
                }
            }
            a.validate()?;
        }

        if !(self.gravity.is_finite()) {
            return v("gravity must be finite".into());
        }
        if self.phase == Phase::Stance && self.stance_foot.is_none() {
            return v("stance phase requires stance_foot".into());
        }
        if let Some(foot) = &self.stance_foot {
            if !link_ids.contains(foot.link.as_str()) {
                return v(format!("stance_foot references undefined link '{}'", foot.link));
            }
        }
        if let Some(q) = &self.nominal_pose {
            if q.len() != self.dof() {
                return v(format!(
                    "nominal_pose has {} entries for {} joints",
                    q.len(),
                    self.dof()
                ));
            }
        }
        Ok(())
    }
}

/// Joint-space state at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl JointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self {
            t: 0.0,
            q,
            qdot: vec![0.0; n],
        }
    }
}

/// True iff every joint angle lies in its closed limit interval.
pub fn validate_state(desc: &RobotDescription, s: &JointState) -> Result<bool> {
    let n = desc.dof();
    if s.q.len() != n {
        return Err(Error::Dimension {
            what: "q",
            expected: n,
            got: s.q.len(),
        });
    }
    if s.qdot.len() != n {
        return Err(Error::Dimension {
            what: "qdot",
            expected: n,
            got: s.qdot.len(),
        });
    }
    Ok(desc.within_limits(&s.q))
}
