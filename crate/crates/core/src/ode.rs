//! Dormand–Prince 5(4) with embedded error control.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 0.005,
            min_step: 1e-12,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.max_step > 0.0) {
            return Err(Error::Validation(
                "integrator tolerances and max_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive stepper that owns its scratch space.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    cfg: IntegratorConfig,
    h: f64,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fsal: bool,
    pub steps: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(dim: usize, cfg: IntegratorConfig) -> Self {
        Self {
            cfg,
            h: cfg.max_step.min(1e-3),
            k: std::array::from_fn(|_| vec![0.0; dim]),
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            fsal: false,
            steps: 0,
            rejected: 0,
        }
    }

    /// Forget the cached derivative; call when the right-hand side changes.
    pub fn reset(&mut self) {
        self.fsal = false;
    }

    /// Step from `*t` to exactly `t_target`, never evaluating past it.
    pub fn advance<F>(&mut self, f: &mut F, t: &mut f64, y: &mut [f64], t_target: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        if !self.fsal {
            f(*t, y, &mut self.k[0])?;
            self.fsal = true;
        }
        while t_target - *t > 1e-12 * t_target.abs().max(1.0) {
            let remaining = t_target - *t;
            let mut h = self.h.min(self.cfg.max_step);
            let last = h >= remaining * (1.0 - 1e-9);
            if last {
                h = remaining;
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        acc += a * self.k[j][i];
                    }
                    self.ytmp[i] = y[i] + h * acc;
                }
                f(*t + C[s] * h, &self.ytmp, &mut self.k[s])?;
                if s == 6 {
                    self.ynew.copy_from_slice(&self.ytmp);
                }
            }
            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for (j, w) in E.iter().enumerate() {
                    e += w * self.k[j][i];
                }
                let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(self.ynew[i].abs());
                err += (h * e / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                if h <= self.cfg.min_step {
                    return Err(Error::NonFinite(*t));
                }
                self.h = h * 0.1;
                self.rejected += 1;
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                *t = if last { t_target } else { *t + h };
                y.copy_from_slice(&self.ynew);
                self.k.swap(0, 6);
                self.steps += 1;
                // a step shortened to hit the target says nothing about the next size
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
            } else {
                self.rejected += 1;
                self.h = h * factor.min(1.0);
                if self.h < self.cfg.min_step {
                    return Err(Error::StepFailure { t: *t, h: self.h });
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*t));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut s = Dopri5::new(1, IntegratorConfig::default());
        let mut f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = -y[0];
            Ok(())
        };
        let (mut t, mut y) = (0.0, vec![1.0]);
        s.advance(&mut f, &mut t, &mut y, 2.0).unwrap();
        assert_eq!(t, 2.0);
        assert!((y[0] - (-2.0_f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_long_run() {
        let cfg = IntegratorConfig {
            max_step: 0.1,
            ..Default::default()
        };
        let mut s = Dopri5::new(2, cfg);
        let mut f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
            Ok(())
        };
        let (mut t, mut y) = (0.0, vec![1.0, 0.0]);
        for k in 1..=100 {
            s.advance(&mut f, &mut t, &mut y, 0.1 * k as f64).unwrap();
        }
        assert!((y[0] - 10.0_f64.cos()).abs() < 1e-7);
        assert!((y[1] + 10.0_f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn blow_up_reports_failure() {
        let mut s = Dopri5::new(1, IntegratorConfig::default());
        let mut f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[0] * y[0];
            Ok(())
        };
        let (mut t, mut y) = (0.0, vec![1.0]);
        assert!(s.advance(&mut f, &mut t, &mut y, 2.0).is_err());
    }
}
