//! Parameter identification: linear static regression for stiffness and
//! area, and differential-evolution calibration of the full parameter vector
//! against recorded trajectories.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{compile_engine, BaselineMode, EngineConfig};
use crate::error::{Error, Result};
use crate::model::{JointState, RobotDescription};
use crate::oracle::build_oracle;
use crate::schedule::PressureSchedule;
use crate::trajectory::Trajectory;

/// One equilibrium observation: pose and the pressures that hold it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSample {
    pub q: Vec<f64>,
    pub pressures: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticFit {
    pub stiffness: Vec<f64>,
    pub area: Vec<f64>,
    /// Present when rest lengths were fitted too.
    pub rest_length: Option<Vec<f64>>,
    /// RMS of predicted minus measured pressure, Pa.
    pub residual_rms_pa: f64,
}

/// Gravity part of the potential gradient, `∇V − Σ k(l − l0)·∂l/∂q`.
fn gravity_gradient(desc: &RobotDescription, q: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let o = build_oracle(desc)?;
    let kin = o.forward_kinematics(q);
    let mut g = o.potential_gradient_at(q);
    for (i, a) in desc.actuators.iter().enumerate() {
        let stretch = a.stiffness * (kin.lengths[i] - a.rest_length);
        for (gj, d) in g.iter_mut().zip(&kin.dl_dq[i]) {
            *gj -= stretch * d;
        }
    }
    Ok((g, kin.lengths, kin.dl_dq))
}

/// Least-squares fit of the static equilibrium equations
/// `Σ_i (S_i·P_i − k_i·(l_i − l0_i))·∂l_i/∂q = G(q)`, which are linear in
/// (k, S) for known rest lengths, and in (k, S, k·l0) otherwise.
///
/// Geometry and masses come from `desc`; its stiffness, area and (when
/// `fit_rest_lengths`) rest-length values are ignored.
pub fn static_regress(
    samples: &[StaticSample],
    desc: &RobotDescription,
    fit_rest_lengths: bool,
) -> Result<StaticFit> {
    desc.validate()?;
    let n = desc.dof();
    let na = desc.actuators.len();
    let unknowns = if fit_rest_lengths { 3 * na } else { 2 * na };
    if samples.len() * n < unknowns {
        return Err(Error::TooFewSamples {
            needed: unknowns.div_ceil(n),
            got: samples.len(),
        });
    }
    let rows = samples.len() * n;
    let mut a = DMatrix::zeros(rows, unknowns);
    let mut b = DVector::zeros(rows);
    let mut geo = Vec::with_capacity(samples.len());
    for (s, smp) in samples.iter().enumerate() {
        if smp.q.len() != n || smp.pressures.len() != na {
            return Err(Error::Dimension {
                what: "static sample",
                expected: n + na,
                got: smp.q.len() + smp.pressures.len(),
            });
        }
        let (g, l, dl) = gravity_gradient(desc, &smp.q)?;
        for j in 0..n {
            let r = s * n + j;
            b[r] = g[j];
            for i in 0..na {
                a[(r, na + i)] = smp.pressures[i] * dl[i][j];
                if fit_rest_lengths {
                    a[(r, i)] = -l[i] * dl[i][j];
                    a[(r, 2 * na + i)] = dl[i][j];
                } else {
                    a[(r, i)] = -(l[i] - desc.actuators[i].rest_length) * dl[i][j];
                }
            }
        }
        geo.push((g, l, dl));
    }
    // column scaling keeps the rank test meaningful across mixed units
    let scale: Vec<f64> = (0..unknowns)
        .map(|c| a.column(c).norm().max(1e-300))
        .collect();
    for (c, s) in scale.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::RankDeficient);
    }
    let x = svd.solve(&b, 0.0).map_err(|_| Error::RankDeficient)?;
    let mut x: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v / s).collect();
    // The pressures enter the regressor, so noise on them biases the linear
    // fit toward small areas. With no more actuators than joints the
    // equilibrium fixes the pressures, and a few Gauss-Newton steps on the
    // pressure residual remove that bias.
    let fixed_l0: Option<Vec<f64>> =
        (!fit_rest_lengths).then(|| desc.actuators.iter().map(|a| a.rest_length).collect());
    if na <= n {
        refine_in_pressure_space(samples, &geo, fixed_l0.as_deref(), &mut x)?;
    }
    let stiffness = x[..na].to_vec();
    let area = x[na..2 * na].to_vec();
    let rest_length = fit_rest_lengths.then(|| (0..na).map(|i| x[2 * na + i] / x[i]).collect::<Vec<_>>());
    let mut sum_sq = 0.0;
    for (smp, g) in samples.iter().zip(&geo) {
        let (p, _) = predicted_pressures(g, fixed_l0.as_deref(), &x)?;
        sum_sq += p.iter().zip(&smp.pressures).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(StaticFit {
        stiffness,
        area,
        rest_length,
        residual_rms_pa: (sum_sq / (samples.len() * na) as f64).sqrt(),
    })
}

type Geometry = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Pressures holding one sample's pose under parameters `x` = `[k, S]` or
/// `[k, S, k·l0]`, and their Jacobian with respect to `x`.
fn predicted_pressures(
    (g, l, dl): &Geometry,
    fixed_l0: Option<&[f64]>,
    x: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = g.len();
    let na = l.len();
    // r = M⁺(G + Σ_j k_j t_j − Σ_j c_j ∂l_j), p_i = r_i / S_i
    let m = DMatrix::from_fn(n, na, |j, i| dl[i][j]);
    let svd = m.svd(true, true);
    let solve = |v: DVector<f64>| svd.solve(&v, 1e-14).map_err(|_| Error::RankDeficient);
    let col = |i: usize, w: f64| DVector::from_fn(n, |j, _| w * dl[i][j]);
    let u = solve(DVector::from_column_slice(g))?;
    let mut r = u.clone();
    let mut vk = Vec::with_capacity(na);
    let mut vc = Vec::new();
    for i in 0..na {
        let t = match fixed_l0 {
            Some(l0) => l[i] - l0[i],
            None => l[i],
        };
        let v = solve(col(i, t))?;
        r += x[i] * &v;
        vk.push(v);
        if fixed_l0.is_none() {
            let z = solve(col(i, -1.0))?;
            r += x[2 * na + i] * &z;
            vc.push(z);
        }
    }
    let area = &x[na..2 * na];
    let p: Vec<f64> = (0..na).map(|i| r[i] / area[i]).collect();
    let mut jac = DMatrix::zeros(na, x.len());
    for i in 0..na {
        for j in 0..na {
            jac[(i, j)] = vk[j][i] / area[i];
            if let Some(z) = vc.get(j) {
                jac[(i, 2 * na + j)] = z[i] / area[i];
            }
        }
        jac[(i, na + i)] = -p[i] / area[i];
    }
    Ok((p, jac))
}

fn refine_in_pressure_space(
    samples: &[StaticSample],
    geo: &[Geometry],
    fixed_l0: Option<&[f64]>,
    x: &mut [f64],
) -> Result<()> {
    let na = samples[0].pressures.len();
    let rows = samples.len() * na;
    let cost = |x: &[f64]| -> Result<f64> {
        let mut c = 0.0;
        for (smp, g) in samples.iter().zip(geo) {
            let (p, _) = predicted_pressures(g, fixed_l0, x)?;
            c += p.iter().zip(&smp.pressures).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(c)
    };
    if x[na..2 * na].iter().any(|&s| !(s > 0.0)) {
        return Ok(());
    }
    let mut current = cost(x)?;
    for _ in 0..50 {
        let mut jac = DMatrix::zeros(rows, x.len());
        let mut res = DVector::zeros(rows);
        for (s, (smp, g)) in samples.iter().zip(geo).enumerate() {
            let (p, j) = predicted_pressures(g, fixed_l0, x)?;
            jac.view_mut((s * na, 0), (na, x.len())).copy_from(&j);
            for i in 0..na {
                res[s * na + i] = smp.pressures[i] - p[i];
            }
        }
        let Ok(step) = jac.svd(true, true).solve(&res, 1e-14) else {
            break;
        };
        // halve the step until the residual drops
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if trial[na..2 * na].iter().all(|&s| s > 0.0) {
                if let Ok(c) = cost(&trial) {
                    if c <= current {
                        let small = step.iter().zip(x.iter()).all(|(d, v)| (t * d).abs() <= 1e-12 * v.abs().max(1e-300));
                        x.copy_from_slice(&trial);
                        current = c;
                        accepted = !small;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(())
}

/// Uniform pose inside the limit box, shrunk toward the centre by `margin`
/// of each range on both sides.
pub fn sample_pose(desc: &RobotDescription, rng: &mut impl Rng, margin: f64) -> Vec<f64> {
    desc.joints
        .iter()
        .map(|j| {
            let w = j.limits[1] - j.limits[0];
            rng.gen_range(j.limits[0] + margin * w..=j.limits[1] - margin * w)
        })
        .collect()
}

/// Noise-free (or Gaussian-noise) equilibria of `desc` at random poses with
/// nonnegative holding pressures.
pub fn synthetic_static_samples(
    desc: &RobotDescription,
    n: usize,
    noise_pa: f64,
    seed: u64,
) -> Result<Vec<StaticSample>> {
    let o = build_oracle(desc)?;
    let areas = desc.areas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_pa.max(0.0)).map_err(|e| Error::Validation(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(Error::Validation(
                "no poses with nonnegative holding pressures".into(),
            ));
        }
        let q = sample_pose(desc, &mut rng, 0.0);
        let f = o.balancing_force(&q)?;
        let p: Vec<f64> = f.iter().zip(&areas).map(|(f, s)| f / s).collect();
        if p.iter().any(|&x| x < 0.0) {
            continue;
        }
        let pressures = p
            .iter()
            .map(|&x| {
                if noise_pa > 0.0 {
                    x + noise.sample(&mut rng)
                } else {
                    x
                }
            })
            .collect();
        out.push(StaticSample { q, pressures });
    }
    Ok(out)
}

/// Parameters calibrated by dynamic identification, laid out as
/// `[k…, S…, l0…, c…, joint damping…]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub n_actuators: usize,
    pub n_joints: usize,
}

impl ParamVector {
    pub fn of(desc: &RobotDescription) -> Self {
        let a = &desc.actuators;
        let mut values: Vec<f64> = a.iter().map(|x| x.stiffness).collect();
        values.extend(a.iter().map(|x| x.area));
        values.extend(a.iter().map(|x| x.rest_length));
        values.extend(a.iter().map(|x| x.damping));
        values.extend(desc.joints.iter().map(|j| j.damping));
        Self {
            values,
            n_actuators: a.len(),
            n_joints: desc.joints.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn block(&self, b: usize) -> &[f64] {
        let na = self.n_actuators;
        if b < 4 {
            &self.values[b * na..(b + 1) * na]
        } else {
            &self.values[4 * na..]
        }
    }

    pub fn stiffness(&self) -> &[f64] {
        self.block(0)
    }

    pub fn area(&self) -> &[f64] {
        self.block(1)
    }

    pub fn rest_length(&self) -> &[f64] {
        self.block(2)
    }

    pub fn damping(&self) -> &[f64] {
        self.block(3)
    }

    pub fn joint_damping(&self) -> &[f64] {
        self.block(4)
    }

    pub fn names(&self, desc: &RobotDescription) -> Vec<String> {
        let mut out = Vec::new();
        for p in ["stiffness", "area", "rest_length", "damping"] {
            out.extend(desc.actuators.iter().map(|a| format!("{}.{p}", a.id)));
        }
        out.extend(desc.joints.iter().map(|j| format!("{}.damping", j.id)));
        out
    }

    /// Copy of `desc` carrying these parameters.
    pub fn apply(&self, desc: &RobotDescription) -> RobotDescription {
        let mut d = desc.clone();
        for (i, a) in d.actuators.iter_mut().enumerate() {
            a.stiffness = self.stiffness()[i];
            a.area = self.area()[i];
            a.rest_length = self.rest_length()[i];
            a.damping = self.damping()[i];
        }
        for (j, jt) in d.joints.iter_mut().enumerate() {
            jt.damping = self.joint_damping()[j];
        }
        d
    }

    fn from_values(&self, values: &[f64]) -> Self {
        Self {
            values: values.to_vec(),
            ..self.clone()
        }
    }
}

/// Default search box around a nominal description: ×[0.5, 2] for stiffness,
/// area and damping, ±10% for rest lengths, ×[0.2, 5] for joint damping.
pub fn default_bounds(desc: &RobotDescription) -> Vec<(f64, f64)> {
    let p = ParamVector::of(desc);
    let na = p.n_actuators;
    p.values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = match i / na.max(1) {
                _ if i >= 4 * na => (0.2, 5.0),
                2 => (0.9, 1.1),
                _ => (0.5, 2.0),
            };
            (v * lo, v * hi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentConfig {
    /// Weight of the velocity-sign term.
    pub lambda: f64,
    pub population: usize,
    pub max_generations: usize,
    /// Differential weight.
    pub mutation: f64,
    pub crossover: f64,
    /// Stop when the best value improves by less than `stall_tol` over this
    /// many generations.
    pub stall_generations: usize,
    pub stall_tol: f64,
    /// Search box; `None` uses [`default_bounds`] of the description.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub seed: u64,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            population: 25,
            max_generations: 10_000,
            mutation: 0.8,
            crossover: 0.9,
            stall_generations: 200,
            stall_tol: 1e-10,
            bounds: None,
            seed: 0,
        }
    }
}

impl IdentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Validation("lambda must be nonnegative".into()));
        }
        if self.population < 4 {
            return Err(Error::Validation(
                "rand/1 mutation needs a population of at least 4".into(),
            ));
        }
        if !(self.mutation > 0.0 && (0.0..=1.0).contains(&self.crossover)) {
            return Err(Error::Validation("mutation must be positive, crossover in [0, 1]".into()));
        }
        if let Some(b) = &self.bounds {
            check_bounds(b)?;
        }
        Ok(())
    }
}

fn check_bounds(b: &[(f64, f64)]) -> Result<()> {
    if b.is_empty() {
        return Err(Error::Validation("empty search box".into()));
    }
    for (lo, hi) in b {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!("bad bounds [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v.abs() < 1e-4 {
        0.0
    } else {
        v.signum()
    }
}

/// `MSE(angle) + λ·MSE(sign(rate))` of `model` against `reference`.
///
/// Off-grid models are linearly interpolated onto the reference times inside
/// the overlap of both time ranges.
pub fn traj_error(reference: &Trajectory, model: &Trajectory, lambda: f64) -> Result<f64> {
    if reference.is_empty() || model.is_empty() {
        return Err(Error::GridMismatch);
    }
    let same_grid = reference.len() == model.len()
        && reference
            .rows
            .iter()
            .zip(&model.rows)
            .all(|(a, b)| (a.t - b.t).abs() <= 1e-9);
    let (t0, t1) = (model.rows[0].t, model.last().map_or(0.0, |r| r.t));
    let (mut se_q, mut se_s, mut n) = (0.0, 0.0, 0usize);
    for (k, r) in reference.rows.iter().enumerate() {
        let (q, qd) = if same_grid {
            (model.rows[k].q.clone(), model.rows[k].qd.clone())
        } else {
            if r.t < t0 - 1e-9 || r.t > t1 + 1e-9 {
                continue;
            }
            model.interpolate(r.t)
        };
        if q.len() != r.q.len() {
            return Err(Error::Dimension {
                what: "trajectory dof",
                expected: r.q.len(),
                got: q.len(),
            });
        }
        for j in 0..q.len() {
            se_q += (q[j] - r.q[j]).powi(2);
            se_s += (sign(qd[j]) - sign(r.qd[j])).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::GridMismatch);
    }
    Ok((se_q + lambda * se_s) / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best value after the initial population and after each generation.
    pub history: Vec<f64>,
    pub generations: usize,
    pub evaluations: usize,
}

/// DE/rand/1/bin minimization over a box.
///
/// Trial vectors are drawn serially from a seeded ChaCha stream and evaluated
/// in parallel, so results do not depend on the thread count. Non-finite
/// objective values count as +∞. Mutants leaving the box are clamped.
pub fn differential_evolution<F>(objective: F, bounds: &[(f64, f64)], cfg: &IdentConfig) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    check_bounds(bounds)?;
    let dim = bounds.len();
    let np = cfg.population;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = |xs: &[Vec<f64>]| -> Vec<f64> {
        xs.par_iter()
            .map(|x| {
                let v = objective(x);
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            })
            .collect()
    };

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
        .collect();
    let mut fit = eval(&pop);
    let mut evaluations = np;
    let best_of = |fit: &[f64]| {
        (0..fit.len()).fold(0, |b, i| if fit[i] < fit[b] { i } else { b })
    };
    let mut history = vec![fit[best_of(&fit)]];
    let mut generations = 0;

    while generations < cfg.max_generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let r = rng.gen_range(0..np);
                    if r != i {
                        break r;
                    }
                };
                let r1 = pick();
                let r2 = loop {
                    let r = pick();
                    if r != r1 {
                        break r;
                    }
                };
                let r3 = loop {
                    let r = pick();
                    if r != r1 && r != r2 {
                        break r;
                    }
                };
                let forced = rng.gen_range(0..dim);
                (0..dim)
                    .map(|d| {
                        let cross: f64 = rng.gen();
                        if d == forced || cross < cfg.crossover {
                            let v = pop[r1][d] + cfg.mutation * (pop[r2][d] - pop[r3][d]);
                            v.clamp(bounds[d].0, bounds[d].1)
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect()
            })
            .collect();
        let tf = eval(&trials);
        evaluations += np;
        for (i, (x, f)) in trials.into_iter().zip(tf).enumerate() {
            if f <= fit[i] {
                pop[i] = x;
                fit[i] = f;
            }
        }
        generations += 1;
        history.push(fit[best_of(&fit)]);
        let w = cfg.stall_generations;
        if w > 0 && history.len() > w {
            let old = history[history.len() - 1 - w];
            if old - history[history.len() - 1] < cfg.stall_tol {
                break;
            }
        }
    }
    let b = best_of(&fit);
    Ok(DeResult {
        best: pop[b].clone(),
        best_value: fit[b],
        history,
        generations,
        evaluations,
    })
}

/// A recorded trajectory and the pressure schedule that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSample {
    pub pressures: PressureSchedule,
    pub trajectory: Trajectory,
}

/// Engine simulation of one sample under `desc`, on the sample's time grid.
/// Engine settings used to synthesize and replay trajectories: the coarser
/// 5 ms step keeps a full calibration within minutes.
pub fn replay_engine() -> EngineConfig {
    EngineConfig {
        dt: 0.005,
        ..Default::default()
    }
}

pub fn replay(desc: &RobotDescription, sample: &DynamicSample, engine: EngineConfig) -> Result<Trajectory> {
    let first = sample.trajectory.rows.first().ok_or(Error::EmptyDataset)?;
    let t_end = sample.trajectory.last().map_or(0.0, |r| r.t);
    let m = compile_engine(desc, BaselineMode::ThreeTwoOne, engine)?;
    let forces = sample.pressures.to_forces(&desc.areas())?;
    let s0 = JointState {
        t: first.t,
        q: first.q.clone(),
        qdot: first.qd.clone(),
    };
    Ok(m.simulate(&s0, &forces, t_end)?.trajectory)
}

/// Summed trajectory error of parameters `p` over a dataset; failed
/// simulations score `FAILED_RUN` each.
pub fn dataset_error(
    desc: &RobotDescription,
    p: &ParamVector,
    data: &[DynamicSample],
    lambda: f64,
    engine: EngineConfig,
) -> f64 {
    let d = p.apply(desc);
    data.iter()
        .map(|s| {
            replay(&d, s, engine)
                .and_then(|tr| traj_error(&s.trajectory, &tr, lambda))
                .unwrap_or(FAILED_RUN)
        })
        .sum()
}

/// Objective contribution of a trajectory whose simulation failed.
pub const FAILED_RUN: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct IdentReport {
    pub params: ParamVector,
    pub names: Vec<String>,
    pub objective: f64,
    /// Angle RMSE of the refit against each recorded trajectory, rad.
    pub per_trajectory_rmse: Vec<f64>,
    pub generations: usize,
    pub evaluations: usize,
    pub history: Vec<f64>,
    pub wall_s: f64,
    pub strategy: &'static str,
}

fn angle_rmse(a: &Trajectory, b: &Trajectory) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        for (u, v) in x.q.iter().zip(&y.q) {
            s += (u - v).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Fit `[k, S, l0, c, joint damping]` of `desc` to a trajectory dataset.
pub fn identify_dynamic(
    data: &[DynamicSample],
    desc: &RobotDescription,
    cfg: &IdentConfig,
) -> Result<IdentReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    desc.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let template = ParamVector::of(desc);
    let bounds = cfg.bounds.clone().unwrap_or_else(|| default_bounds(desc));
    if bounds.len() != template.len() {
        return Err(Error::Dimension {
            what: "parameter bounds",
            expected: template.len(),
            got: bounds.len(),
        });
    }
    let engine = replay_engine();
    let res = differential_evolution(
        |x| dataset_error(desc, &template.from_values(x), data, cfg.lambda, engine),
        &bounds,
        cfg,
    )?;
    let params = template.from_values(&res.best);
    let fitted = params.apply(desc);
    let per_trajectory_rmse = data
        .iter()
        .map(|s| replay(&fitted, s, engine).map(|tr| angle_rmse(&s.trajectory, &tr)))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdentReport {
        names: params.names(desc),
        params,
        objective: res.best_value,
        per_trajectory_rmse,
        generations: res.generations,
        evaluations: res.evaluations,
        history: res.history,
        wall_s: start.elapsed().as_secs_f64(),
        strategy: "rand/1/bin",
    })
}

/// Engine-simulated step sequences of `truth`: each starts at rest at a
/// random equilibrium and steps through two further equilibrium pressure
/// levels, switching at `duration / 2`.
pub fn synthetic_dataset(
    truth: &RobotDescription,
    n: usize,
    duration: f64,
    seed: u64,
) -> Result<Vec<DynamicSample>> {
    let o = build_oracle(truth)?;
    let areas = truth.areas();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let engine = replay_engine();
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(Error::Validation(
                "no equilibria with nonnegative pressures".into(),
            ));
        }
        let mut levels = Vec::new();
        let mut q0 = Vec::new();
        for k in 0..3 {
            let q = sample_pose(truth, &mut rng, 0.1);
            let p: Vec<f64> = o
                .balancing_force(&q)?
                .iter()
                .zip(&areas)
                .map(|(f, s)| f / s)
                .collect();
            if k == 0 {
                q0 = q;
            }
            levels.push(p);
        }
        if levels.iter().flatten().any(|&p| p < 0.0) {
            continue;
        }
        let pressures = PressureSchedule::new(vec![
            (0.0, levels[1].clone()),
            (duration / 2.0, levels[2].clone()),
        ])?;
        let m = compile_engine(truth, BaselineMode::ThreeTwoOne, engine)?;
        let tr = m
            .simulate(&JointState::at_rest(q0), &pressures.to_forces(&areas)?, duration)?
            .trajectory;
        out.push(DynamicSample {
            pressures,
            trajectory: tr,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    csv: String,
    schedule: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    trajectories: Vec<ManifestEntry>,
    lambda: f64,
    bounds: Option<Vec<(f64, f64)>>,
    seed: u64,
}

/// Write one CSV per trajectory plus `manifest.json` into `dir`.
pub fn save_dataset(dir: &Path, data: &[DynamicSample], cfg: &IdentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (i, s) in data.iter().enumerate() {
        let name = format!("traj_{i:02}.csv");
        std::fs::write(dir.join(&name), s.trajectory.to_csv())?;
        entries.push(ManifestEntry {
            csv: name,
            schedule: serde_json::from_str(&s.pressures.to_json())
                .map_err(|e| Error::Schema(e.to_string()))?,
        });
    }
    let m = Manifest {
        trajectories: entries,
        lambda: cfg.lambda,
        bounds: cfg.bounds.clone(),
        seed: cfg.seed,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Read a dataset written by [`save_dataset`]; returns the samples and an
/// [`IdentConfig`] carrying the manifest's λ, bounds and seed.
pub fn load_dataset(dir: &Path) -> Result<(Vec<DynamicSample>, IdentConfig)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    let mut data = Vec::new();
    for e in &m.trajectories {
        let csv = std::fs::read_to_string(dir.join(&e.csv))?;
        data.push(DynamicSample {
            pressures: PressureSchedule::from_json(&e.schedule.to_string())?,
            trajectory: Trajectory::from_csv(&csv)?,
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = IdentConfig {
        lambda: m.lambda,
        bounds: m.bounds,
        seed: m.seed,
        ..Default::default()
    };
    Ok((data, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Energies, TrajRow};

    fn traj(qs: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory {
            rows: qs
                .iter()
                .map(|&(t, q, qd)| TrajRow {
                    t,
                    q: vec![q],
                    qd: vec![qd],
                    l: vec![],
                    ld: vec![],
                    energy: Energies::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn traj_error_spot_values() {
        let a = traj(&[(0.0, 0.1, 1.0), (0.1, 0.2, -1.0), (0.2, 0.3, 0.0)]);
        assert_eq!(traj_error(&a, &a, 100.0).unwrap(), 0.0);
        let shifted = traj(&[(0.0, 0.2, 1.0), (0.1, 0.3, -1.0), (0.2, 0.4, 0.0)]);
        assert!((traj_error(&a, &shifted, 100.0).unwrap() - 0.01).abs() < 1e-15);
        let flipped = traj(&[(0.0, 0.1, -1.0), (0.1, 0.2, 1.0), (0.2, 0.3, 0.0)]);
        // two of three samples carry a ±1 sign, each contributing 4
        assert!((traj_error(&a, &flipped, 100.0).unwrap() - 100.0 * 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn traj_error_deadband_and_grid() {
        let a = traj(&[(0.0, 0.0, 5e-5), (1.0, 0.0, 0.0)]);
        let b = traj(&[(0.0, 0.0, -5e-5), (1.0, 0.0, 0.0)]);
        assert_eq!(traj_error(&a, &b, 100.0).unwrap(), 0.0);
        let far = traj(&[(5.0, 0.0, 0.0), (6.0, 0.0, 0.0)]);
        assert!(matches!(traj_error(&a, &far, 1.0), Err(Error::GridMismatch)));
        // off-grid model is interpolated
        let fine = traj(&[(0.0, 0.0, 0.0), (0.5, 0.5, 0.0), (1.0, 1.0, 0.0)]);
        let coarse = traj(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)]);
        assert!(traj_error(&fine, &coarse, 0.0).unwrap() < 1e-30);
    }

    #[test]
    fn de_sphere() {
        let cfg = IdentConfig {
            max_generations: 2000,
            stall_generations: 0,
            seed: 3,
            ..Default::default()
        };
        let b = vec![(-5.0, 5.0); 10];
        let r = differential_evolution(|x| x.iter().map(|v| v * v).sum(), &b, &cfg).unwrap();
        assert!(r.best_value < 1e-6, "{}", r.best_value);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn de_rejects_bad_bounds() {
        let cfg = IdentConfig::default();
        assert!(differential_evolution(|_| 0.0, &[(1.0, 1.0)], &cfg).is_err());
    }
}
