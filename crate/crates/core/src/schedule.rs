//! Piecewise-constant actuator inputs.
//!
//! Pressure schedules are what the outside world provides (JSON files, the CLI);
//! both simulators consume force schedules, obtained through F = S·P.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant vector signal. Value on `[t_i, t_{i+1})` is `values_i`;
/// before the first breakpoint the signal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    points: Vec<(f64, Vec<f64>)>,
}

impl Schedule {
    pub fn new(points: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("schedule has no breakpoints".into()));
        }
        let width = points[0].1.len();
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Validation(
                    "schedule times must be strictly increasing".into(),
                ));
            }
        }
        for (t, v) in &points {
            if !t.is_finite() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation("schedule entries must be finite".into()));
            }
            if v.len() != width {
                return Err(Error::Validation("schedule rows differ in width".into()));
            }
        }
        Ok(Self { points })
    }

    pub fn constant(values: Vec<f64>) -> Self {
        Self {
            points: vec![(0.0, values)],
        }
    }

    /// `before` on [0, t_step), `after` from `t_step` on.
    pub fn step(before: Vec<f64>, t_step: f64, after: Vec<f64>) -> Self {
        Self::new(vec![(0.0, before), (t_step, after)]).expect("valid step schedule")
    }

    pub fn width(&self) -> usize {
        self.points[0].1.len()
    }

    pub fn points(&self) -> &[(f64, Vec<f64>)] {
        &self.points
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        match self.points.iter().rposition(|(ti, _)| *ti <= t) {
            Some(i) => self.points[i].1.clone(),
            None => vec![0.0; self.width()],
        }
    }

    /// Breakpoint times strictly inside `(t0, t1)`.
    pub fn breakpoints_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.points
            .iter()
            .map(|(t, _)| *t)
            .filter(|&t| t > t0 && t < t1)
            .collect()
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|(t, v)| (*t, v.iter().enumerate().map(|(i, x)| f(i, *x)).collect()))
                .collect(),
        }
    }
}

/// Actuator forces in N.
pub type ForceSchedule = Schedule;

/// Actuator pressures in Pa.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSchedule(pub Schedule);

impl PressureSchedule {
    pub fn new(points: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let s = Schedule::new(points)?;
        if s.points.iter().any(|(_, p)| p.iter().any(|&x| x < 0.0)) {
            return Err(Error::Validation("pressures must be nonnegative".into()));
        }
        Ok(Self(s))
    }

    pub fn constant(p: Vec<f64>) -> Result<Self> {
        Self::new(vec![(0.0, p)])
    }

    /// F_i = S_i · P_i.
    pub fn to_forces(&self, areas: &[f64]) -> Result<ForceSchedule> {
        if areas.len() != self.0.width() {
            return Err(Error::Dimension {
                what: "pressure channels",
                expected: areas.len(),
                got: self.0.width(),
            });
        }
        Ok(self.0.map(|i, p| areas[i] * p))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<PressureRow> =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let points = rows
            .into_iter()
            .map(|r| {
                let p = r
                    .p_pa
                    .iter()
                    .map(PressureValue::pascals)
                    .collect::<Result<Vec<_>>>()?;
                Ok((r.t_s, p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<PressureRow> = self
            .0
            .points
            .iter()
            .map(|(t, p)| PressureRow {
                t_s: *t,
                p_pa: p.iter().map(|&x| PressureValue::Pa(x)).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("schedule serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PressureRow {
    t_s: f64,
    #[serde(rename = "P_pa")]
    p_pa: Vec<PressureValue>,
}

/// A bare number is Pa; strings carry an explicit unit suffix ("6.15 kPa").
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PressureValue {
    Pa(f64),
    WithUnit(String),
}

impl PressureValue {
    fn pascals(&self) -> Result<f64> {
        match self {
            PressureValue::Pa(v) => Ok(*v),
            PressureValue::WithUnit(s) => parse_pressure(s),
        }
    }
}

/// Parse a pressure with a mandatory unit suffix: `Pa`, `kPa` or `MPa`.
pub fn parse_pressure(s: &str) -> Result<f64> {
    let s = s.trim();
    let split = s
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| Error::Schema(format!("pressure '{s}' is missing a unit suffix")))?;
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("cannot parse pressure value '{s}'")))?;
    let scale = match unit.trim() {
        "Pa" => 1.0,
        "kPa" => 1e3,
        "MPa" => 1e6,
        other => return Err(Error::Schema(format!("unknown pressure unit '{other}'"))),
    };
    Ok(value * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_lookup() {
        let s = Schedule::new(vec![(0.5, vec![1.0]), (1.0, vec![2.0])]).unwrap();
        assert_eq!(s.value_at(0.0), vec![0.0]);
        assert_eq!(s.value_at(0.5), vec![1.0]);
        assert_eq!(s.value_at(0.99), vec![1.0]);
        assert_eq!(s.value_at(3.0), vec![2.0]);
        assert_eq!(s.breakpoints_in(0.0, 2.0), vec![0.5, 1.0]);
    }

    #[test]
    fn rejects_non_increasing_times() {
        assert!(Schedule::new(vec![(1.0, vec![0.0]), (1.0, vec![1.0])]).is_err());
    }

    #[test]
    fn kpa_suffix_is_converted() {
        let json = r#"[{"t_s": 0.0, "P_pa": ["6.15 kPa", 2730.0]},
                      {"t_s": 2.0, "P_pa": ["3.76kPa", "7.26 kPa"]}]"#;
        let p = PressureSchedule::from_json(json).unwrap();
        assert!((p.0.value_at(0.0)[0] - 6150.0).abs() < 1e-9);
        assert_eq!(p.0.value_at(0.0)[1], 2730.0);
        assert!((p.0.value_at(2.5)[1] - 7260.0).abs() < 1e-9);
        let f = p.to_forces(&[1e-3, 2e-3]).unwrap();
        assert!((f.value_at(0.0)[0] - 6.15).abs() < 1e-12);
    }

    #[test]
    fn bare_string_without_unit_is_rejected() {
        assert!(parse_pressure("6.15").is_err());
        assert!(parse_pressure("6.15 psi").is_err());
    }

    #[test]
    fn negative_pressure_rejected() {
        assert!(PressureSchedule::constant(vec![-1.0]).is_err());
    }
}
