//! Sampled simulation output and its CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct Energies {
    pub kinetic: f64,
    pub gravity: f64,
    pub elastic: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.kinetic + self.gravity + self.elastic
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrajRow {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Actuator lengths.
    pub l: Vec<f64>,
    /// Actuator elongation rates.
    pub ld: Vec<f64>,
    pub energy: Energies,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct Trajectory {
    pub rows: Vec<TrajRow>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.rows.first().map_or(0, |r| r.q.len())
    }

    pub fn last(&self) -> Option<&TrajRow> {
        self.rows.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Rows with `t <= t_end`.
    pub fn prefix(&self, t_end: f64) -> Trajectory {
        Trajectory {
            rows: self
                .rows
                .iter()
                .filter(|r| r.t <= t_end + 1e-12)
                .cloned()
                .collect(),
        }
    }

    pub fn header(n_dof: usize, n_act: usize) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n_dof).map(|i| format!("q{i}")));
        cols.extend((1..=n_dof).map(|i| format!("qd{i}")));
        cols.extend((1..=n_act).map(|i| format!("l{i}")));
        cols.extend((1..=n_act).map(|i| format!("ld{i}")));
        cols.extend(["T", "Vg", "Ve"].map(String::from));
        cols.join(",")
    }

    /// CSV with 17 significant digits and LF line endings.
    pub fn to_csv(&self) -> String {
        let (n, m) = self
            .rows
            .first()
            .map_or((0, 0), |r| (r.q.len(), r.l.len()));
        let mut out = Trajectory::header(n, m);
        out.push('\n');
        for r in &self.rows {
            let fields = std::iter::once(r.t)
                .chain(r.q.iter().copied())
                .chain(r.qd.iter().copied())
                .chain(r.l.iter().copied())
                .chain(r.ld.iter().copied())
                .chain([r.energy.kinetic, r.energy.gravity, r.energy.elastic]);
            let mut first = true;
            for v in fields {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Trajectory> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty trajectory CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let n = cols.iter().filter(|c| is_indexed(c, "q")).count();
        let m = cols.iter().filter(|c| is_indexed(c, "l")).count();
        if cols.len() != 1 + 2 * n + 2 * m + 3 || cols[0] != "t" {
            return Err(Error::Schema(format!("unexpected trajectory header '{header}'")));
        }
        if header != Trajectory::header(n, m) {
            return Err(Error::Schema(format!("unexpected trajectory header '{header}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?;
            if vals.len() != cols.len() {
                return Err(Error::Schema(format!("row {} has {} fields", i + 1, vals.len())));
            }
            let mut it = vals.into_iter();
            let t = it.next().unwrap();
            let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<_>>();
            let q = take(n);
            let qd = take(n);
            let l = take(m);
            let ld = take(m);
            let e = take(3);
            rows.push(TrajRow {
                t,
                q,
                qd,
                l,
                ld,
                energy: Energies {
                    kinetic: e[0],
                    gravity: e[1],
                    elastic: e[2],
                },
            });
        }
        if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Schema("trajectory times must increase".into()));
        }
        Ok(Trajectory { rows })
    }

    /// Joint angles and rates linearly interpolated at time `t` (clamped to the
    /// trajectory's range).
    pub fn interpolate(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let rows = &self.rows;
        if t <= rows[0].t {
            return (rows[0].q.clone(), rows[0].qd.clone());
        }
        let last = rows.last().unwrap();
        if t >= last.t {
            return (last.q.clone(), last.qd.clone());
        }
        let i = rows.partition_point(|r| r.t <= t) - 1;
        let (a, b) = (&rows[i], &rows[i + 1]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| p + w * (q - p)).collect()
        };
        (lerp(&a.q, &b.q), lerp(&a.qd, &b.qd))
    }

    pub fn max_abs_velocity(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.qd.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn is_indexed(col: &str, prefix: &str) -> bool {
    col.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
}

/// Per-joint squared-error sums and maxima between aligned trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAccumulator {
    pub sum_sq: Vec<f64>,
    pub max_abs: Vec<f64>,
    pub count: usize,
}

impl ErrorAccumulator {
    pub fn new(n_dof: usize) -> Self {
        Self {
            sum_sq: vec![0.0; n_dof],
            max_abs: vec![0.0; n_dof],
            count: 0,
        }
    }

    pub fn add_sample(&mut self, a: &[f64], b: &[f64]) {
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            let d = (x - y).abs();
            self.sum_sq[j] += d * d;
            self.max_abs[j] = self.max_abs[j].max(d);
        }
        self.count += 1;
    }

    /// Add every sample of two trajectories on the same grid.
    pub fn add_trajectories(&mut self, a: &Trajectory, b: &Trajectory) -> Result<()> {
        if a.len() != b.len() {
            return Err(Error::GridMismatch);
        }
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            if (ra.t - rb.t).abs() > 1e-9 {
                return Err(Error::GridMismatch);
            }
            self.add_sample(&ra.q, &rb.q);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ErrorAccumulator) {
        for j in 0..self.sum_sq.len() {
            self.sum_sq[j] += other.sum_sq[j];
            self.max_abs[j] = self.max_abs[j].max(other.max_abs[j]);
        }
        self.count += other.count;
    }

    pub fn rmse(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.sum_sq.len()];
        }
        self.sum_sq
            .iter()
            .map(|s| (s / self.count as f64).sqrt())
            .collect()
    }

    /// RMS over all joints and samples.
    pub fn overall_rmse(&self) -> f64 {
        if self.count == 0 || self.sum_sq.is_empty() {
            return 0.0;
        }
        (self.sum_sq.iter().sum::<f64>() / (self.count * self.sum_sq.len()) as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory {
            rows: (0..4)
                .map(|i| TrajRow {
                    t: i as f64 * 0.005,
                    q: vec![0.1 * i as f64, -1.0 / 3.0],
                    qd: vec![1.0, 2.0],
                    l: vec![0.17],
                    ld: vec![0.0],
                    energy: Energies {
                        kinetic: 1.0,
                        gravity: -2.0,
                        elastic: std::f64::consts::PI,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn csv_header_layout() {
        assert_eq!(
            Trajectory::header(2, 2),
            "t,q1,q2,qd1,qd2,l1,l2,ld1,ld2,T,Vg,Ve"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let tr = sample();
        let csv = tr.to_csv();
        assert!(!csv.contains('\r'));
        assert_eq!(Trajectory::from_csv(&csv).unwrap(), tr);
    }

    #[test]
    fn interpolation_midpoint() {
        let tr = sample();
        let (q, _) = tr.interpolate(0.0075);
        assert!((q[0] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn accumulator_single_sample_max_equals_rmse() {
        let mut acc = ErrorAccumulator::new(2);
        acc.add_sample(&[1.0, 2.0], &[1.5, 1.0]);
        assert_eq!(acc.rmse(), acc.max_abs);
    }
}
