//! Verification suites comparing the engine against the oracle.
//!
//! Trials are independent; each draws from its own ChaCha stream derived from
//! the master seed and its index, runs on the rayon pool, and is reduced in
//! index order, so reports do not depend on scheduling.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::engine::{compile_engine, BaselineMode, EngineConfig, EngineModel, RunStats};
use crate::error::{Error, Result};
use crate::ident::sample_pose;
use crate::leg::ACTUATOR_TABLE;
use crate::model::{Attachment, ElasticActuatorSpec, Joint, JointState, Link, Phase, RobotDescription};
use crate::ode::IntegratorConfig;
use crate::oracle::{build_oracle, OracleModel};
use crate::schedule::{ForceSchedule, Schedule};
use crate::trajectory::{ErrorAccumulator, TrajRow, Trajectory};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    /// Length of each dynamic trial, s.
    pub duration: f64,
    /// Settled when ‖q̇‖ stays below this for `settle_window` samples, rad/s.
    pub settle_tol: f64,
    pub settle_window: usize,
    /// Give up settling after this long, s.
    pub settle_cap: f64,
    pub engine: EngineConfig,
    pub integrator: IntegratorConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            duration: 10.0,
            settle_tol: 1e-5,
            settle_window: 20,
            settle_cap: 30.0,
            engine: EngineConfig::default(),
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Oracle-versus-engine error summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub suite: String,
    pub mode: BaselineMode,
    /// Per joint, rad.
    pub rmse: Vec<f64>,
    /// Per joint, rad.
    pub max_ae: Vec<f64>,
    pub overall_rmse: f64,
    pub trials: usize,
    pub valid: usize,
    pub discarded: usize,
    pub samples: usize,
    /// Largest constraint residual seen in any engine step, m.
    pub max_drift: f64,
    /// Largest |s1 − s2| seen in any engine step, m.
    pub max_segment_mismatch: f64,
    pub extra: serde_json::Value,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
}

impl EquivalenceReport {
    fn new(suite: &str, mode: BaselineMode, acc: &ErrorAccumulator, cfg: &SuiteConfig) -> Self {
        Self {
            suite: suite.into(),
            mode,
            rmse: acc.rmse(),
            max_ae: acc.max_abs.clone(),
            overall_rmse: acc.overall_rmse(),
            trials: 0,
            valid: 0,
            discarded: 0,
            samples: acc.count,
            max_drift: 0.0,
            max_segment_mismatch: 0.0,
            extra: serde_json::Value::Null,
            config: serde_json::to_value(cfg).expect("config serializes"),
            seed: cfg.seed,
            code_version: CODE_VERSION.into(),
        }
    }

    fn absorb(&mut self, s: &RunStats) {
        self.max_drift = self.max_drift.max(s.max_drift);
        self.max_segment_mismatch = self.max_segment_mismatch.max(s.max_segment_mismatch);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// True when every joint's RMSE is within `tol`.
    pub fn within(&self, tol: &[f64]) -> bool {
        self.rmse.iter().zip(tol).all(|(r, t)| r <= t)
    }
}

/// Independent random stream for trial `i`.
pub fn trial_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64 + 1);
    r
}

fn speed(qd: &[f64]) -> f64 {
    qd.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Stateful settle detector fed one row at a time.
struct Settle {
    tol: f64,
    window: usize,
    run: usize,
    q: Option<Vec<f64>>,
}

impl Settle {
    fn new(cfg: &SuiteConfig) -> Self {
        Self {
            tol: cfg.settle_tol,
            window: cfg.settle_window.max(1),
            run: 0,
            q: None,
        }
    }

    /// Returns false once settled, or once the pose leaves the limits of
    /// `desc` (the run then counts as discarded).
    fn feed(&mut self, desc: &RobotDescription, row: &TrajRow) -> bool {
        if !desc.within_limits(&row.q) {
            self.q = None;
            return false;
        }
        if speed(&row.qd) < self.tol {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run >= self.window {
            self.q = Some(row.q.clone());
            return false;
        }
        true
    }
}

fn settle_oracle(o: &OracleModel, desc: &RobotDescription, s0: &JointState, f: &ForceSchedule, cfg: &SuiteConfig) -> Result<Option<Vec<f64>>> {
    let mut s = Settle::new(cfg);
    o.integrate_with(s0, f, cfg.settle_cap, &cfg.integrator, cfg.engine.dt, |r| s.feed(desc, &r))?;
    Ok(s.q)
}

fn settle_engine(e: &EngineModel, desc: &RobotDescription, s0: &JointState, f: &ForceSchedule, cfg: &SuiteConfig) -> Result<(Option<Vec<f64>>, RunStats)> {
    let mut s = Settle::new(cfg);
    let stats = e.simulate_with(s0, f, cfg.settle_cap, |r| s.feed(desc, &r))?;
    Ok((s.q, stats))
}

/// Run until `t_end`; the flag is false if the trajectory left the limits
/// (the run stops there).
fn oracle_run(o: &OracleModel, desc: &RobotDescription, s0: &JointState, f: &ForceSchedule, t_end: f64, cfg: &SuiteConfig) -> Result<(Trajectory, bool)> {
    let mut tr = Trajectory::default();
    let mut ok = true;
    o.integrate_with(s0, f, t_end, &cfg.integrator, cfg.engine.dt, |r| {
        ok = desc.within_limits(&r.q);
        tr.rows.push(r);
        ok
    })?;
    Ok((tr, ok))
}

fn engine_run(e: &EngineModel, desc: &RobotDescription, s0: &JointState, f: &ForceSchedule, t_end: f64) -> Result<(Trajectory, bool, RunStats)> {
    let mut tr = Trajectory::default();
    let mut ok = true;
    let stats = e.simulate_with(s0, f, t_end, |r| {
        ok = desc.within_limits(&r.q);
        tr.rows.push(r);
        ok
    })?;
    Ok((tr, ok, stats))
}

/// Static sweep: random poses, balancing forces, both backends settled from
/// rest at the centre of the limit box; compares settled poses. Trials that leave the
/// limits or do not settle within the cap are discarded.
pub fn run_static_sweep(desc: &RobotDescription, cfg: &SuiteConfig) -> Result<EquivalenceReport> {
    if cfg.trials == 0 {
        return Err(Error::Validation("at least one trial".into()));
    }
    let o = build_oracle(desc)?;
    let e = compile_engine(desc, BaselineMode::ThreeTwoOne, cfg.engine)?;
    let start = JointState::at_rest(limit_center(desc));
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(cfg.seed, i);
            let q = sample_pose(desc, &mut rng, 0.0);
            let f = Schedule::constant(o.balancing_force(&q)?);
            let qo = settle_oracle(&o, desc, &start, &f, cfg)?;
            let (qe, stats) = settle_engine(&e, desc, &start, &f, cfg)?;
            Ok((qo.zip(qe), stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = ErrorAccumulator::new(desc.dof());
    let mut discarded = 0;
    let mut stats_all = Vec::new();
    for (pair, stats) in outcomes {
        match pair {
            Some((qo, qe)) => acc.add_sample(&qo, &qe),
            None => discarded += 1,
        }
        stats_all.push(stats);
    }
    let mut r = EquivalenceReport::new("static", BaselineMode::ThreeTwoOne, &acc, cfg);
    r.trials = cfg.trials;
    r.discarded = discarded;
    r.valid = cfg.trials - discarded;
    for s in &stats_all {
        r.absorb(s);
    }
    Ok(r)
}

/// One step-response trial against several engine modes.
#[derive(Debug, Clone)]
pub struct SwingTrial {
    pub oracle_ok: bool,
    pub mode_ok: Vec<bool>,
    pub errors: Vec<ErrorAccumulator>,
    pub stats: Vec<RunStats>,
}

/// Step response from rest at `start` under `f(target)` in every backend.
pub fn swing_trial(
    desc: &RobotDescription,
    o: &OracleModel,
    engines: &[EngineModel],
    start: &[f64],
    target: &[f64],
    cfg: &SuiteConfig,
) -> Result<SwingTrial> {
    let f = Schedule::constant(o.balancing_force(target)?);
    let s0 = JointState::at_rest(start.to_vec());
    let (to, oracle_ok) = oracle_run(o, desc, &s0, &f, cfg.duration, cfg)?;
    let mut t = SwingTrial {
        oracle_ok,
        mode_ok: Vec::new(),
        errors: Vec::new(),
        stats: Vec::new(),
    };
    for e in engines {
        let (te, ok, stats) = engine_run(e, desc, &s0, &f, cfg.duration)?;
        let mut acc = ErrorAccumulator::new(desc.dof());
        if ok && oracle_ok {
            acc.add_trajectories(&to, &te)?;
        }
        t.mode_ok.push(ok);
        t.errors.push(acc);
        t.stats.push(stats);
    }
    Ok(t)
}

/// Runs `cfg.trials` random swing trials for each mode.
pub fn swing_trials(desc: &RobotDescription, modes: &[BaselineMode], cfg: &SuiteConfig) -> Result<Vec<SwingTrial>> {
    if cfg.trials == 0 {
        return Err(Error::Validation("at least one trial".into()));
    }
    let o = build_oracle(desc)?;
    let engines = modes
        .iter()
        .map(|&m| compile_engine(desc, m, cfg.engine))
        .collect::<Result<Vec<_>>>()?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(cfg.seed, i);
            let q = sample_pose(desc, &mut rng, 0.0);
            let q2 = sample_pose(desc, &mut rng, 0.0);
            swing_trial(desc, &o, &engines, &q, &q2, cfg)
        })
        .collect()
}

/// Report for mode `k`; a trial counts when the oracle and every mode in
/// `require` stayed inside the limits.
pub fn swing_report(trials: &[SwingTrial], k: usize, mode: BaselineMode, require: &[usize], cfg: &SuiteConfig) -> EquivalenceReport {
    let dof = trials.first().map_or(0, |t| t.errors[k].sum_sq.len());
    let mut acc = ErrorAccumulator::new(dof);
    let mut valid = 0;
    let mut stats = Vec::new();
    for t in trials {
        let ok = t.oracle_ok && require.iter().all(|&j| t.mode_ok[j]);
        if ok {
            valid += 1;
            acc.merge(&t.errors[k]);
        }
        stats.push(t.stats[k]);
    }
    let mut r = EquivalenceReport::new("dynamic_swing", mode, &acc, cfg);
    r.trials = trials.len();
    r.valid = valid;
    r.discarded = trials.len() - valid;
    for s in &stats {
        r.absorb(s);
    }
    r
}

pub fn run_dynamic_swing(desc: &RobotDescription, cfg: &SuiteConfig) -> Result<EquivalenceReport> {
    let t = swing_trials(desc, &[BaselineMode::ThreeTwoOne], cfg)?;
    Ok(swing_report(&t, 0, BaselineMode::ThreeTwoOne, &[0], cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub three_two_one: EquivalenceReport,
    pub naive: EquivalenceReport,
    /// Overall RMSE of the naive mode over that of the 3-2-1 mode.
    pub ratio: f64,
    pub three_two_one_within_swing_tolerance: bool,
    pub naive_within_swing_tolerance: bool,
}

impl BaselineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-joint swing tolerances for a two-joint leg, rad.
pub const SWING_TOLERANCE: [f64; 2] = [0.01, 0.02];

/// Swing suite for both modes over the trials where every backend stayed in
/// the limits, plus the standalone 3-2-1 report with the usual discard rule.
pub fn run_swing_and_baseline(desc: &RobotDescription, cfg: &SuiteConfig) -> Result<(EquivalenceReport, BaselineReport)> {
    let modes = [BaselineMode::ThreeTwoOne, BaselineMode::NaiveLumped];
    let t = swing_trials(desc, &modes, cfg)?;
    let swing = swing_report(&t, 0, modes[0], &[0], cfg);
    let a = swing_report(&t, 0, modes[0], &[0, 1], cfg);
    let b = swing_report(&t, 1, modes[1], &[0, 1], cfg);
    let base = BaselineReport {
        ratio: b.overall_rmse / a.overall_rmse,
        three_two_one_within_swing_tolerance: a.within(&SWING_TOLERANCE),
        naive_within_swing_tolerance: b.within(&SWING_TOLERANCE),
        three_two_one: a,
        naive: b,
    };
    Ok((swing, base))
}

pub fn run_baseline_compare(desc: &RobotDescription, cfg: &SuiteConfig) -> Result<BaselineReport> {
    Ok(run_swing_and_baseline(desc, cfg)?.1)
}

/// Stance: from rest at the nominal pose, where the balancing force would
/// hold, the actuator forces step to `force` at t = 0.
pub fn run_stance_impulse(desc: &RobotDescription, force: &[f64], cfg: &SuiteConfig) -> Result<EquivalenceReport> {
    let d = desc.with_phase(Phase::Stance);
    let o = build_oracle(&d)?;
    let e = compile_engine(&d, BaselineMode::ThreeTwoOne, cfg.engine)?;
    let q0 = d.nominal_pose();
    let f0 = o.balancing_force(&q0)?;
    if force.len() != f0.len() {
        return Err(Error::Dimension {
            what: "stance force channels",
            expected: f0.len(),
            got: force.len(),
        });
    }
    let f = Schedule::constant(force.to_vec());
    let s0 = JointState::at_rest(q0);
    let to = o.integrate(&s0, &f, cfg.duration, &cfg.integrator, cfg.engine.dt)?;
    let sim = e.simulate(&s0, &f, cfg.duration)?;
    let mut acc = ErrorAccumulator::new(d.dof());
    acc.add_trajectories(&to, &sim.trajectory)?;
    let in_limits = to.rows.iter().chain(&sim.trajectory.rows).all(|r| d.within_limits(&r.q));
    let mut r = EquivalenceReport::new("stance_impulse", BaselineMode::ThreeTwoOne, &acc, cfg);
    r.trials = 1;
    r.valid = 1;
    r.absorb(&sim.stats);
    r.extra = serde_json::json!({
        "holding_force_n": f0,
        "step_force_n": force,
        "stayed_in_limits": in_limits,
    });
    Ok(r)
}

/// Hex SHA-256 of the description's JSON form.
pub fn morphology_hash(desc: &RobotDescription) -> String {
    let mut h = Sha256::new();
    h.update(desc.to_json().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Random hanging three-joint chain with three actuators. Actuator `i` ends
/// on link `i + 1` and starts on the base or an earlier link, so it spans at
/// least one joint. Rest lengths equal the lengths at the nominal pose.
pub fn random_chain(rng: &mut impl Rng) -> RobotDescription {
    let lo = |j: usize| ACTUATOR_TABLE.iter().map(|r| [r.1, r.2, r.3, r.5][j]).fold(f64::INFINITY, f64::min);
    let hi = |j: usize| ACTUATOR_TABLE.iter().map(|r| [r.1, r.2, r.3, r.5][j]).fold(0.0, f64::max);
    let mut links = vec![Link {
        id: "base".into(),
        mass: 0.05,
        com: [0.0, 0.0],
        rod_length: 0.2,
        inertia_zz: 0.05 * 0.04 / 12.0,
    }];
    let mut lengths = Vec::new();
    for i in 1..=3 {
        let len: f64 = rng.gen_range(0.1..0.4);
        let mass: f64 = rng.gen_range(0.03..0.12);
        lengths.push(len);
        links.push(Link {
            id: format!("link{i}"),
            mass,
            com: [len / 2.0, 0.0],
            rod_length: len,
            inertia_zz: mass * len * len / 12.0,
        });
    }
    let joints: Vec<Joint> = (0..3)
        .map(|i| Joint {
            id: format!("joint{}", i + 1),
            parent: links[i].id.clone(),
            child: links[i + 1].id.clone(),
            parent_anchor: if i == 0 { [0.0, 0.0] } else { [lengths[i - 1], 0.0] },
            child_anchor: [0.0, 0.0],
            limits: [-0.9, 0.9],
            offset: if i == 0 { -FRAC_PI_2 } else { 0.0 },
            damping: rng.gen_range(0.02..0.08),
        })
        .collect();
    let nominal: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.3..0.3)).collect();

    let mut actuators = Vec::new();
    for i in 0..3 {
        let a_link = rng.gen_range(0..=i);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let a_point = if a_link == 0 {
            [rng.gen_range(-0.1..0.1), side * rng.gen_range(0.03..0.1)]
        } else {
            let l = lengths[a_link - 1];
            [rng.gen_range(0.1..0.9) * l, side * rng.gen_range(0.02..0.08)]
        };
        let l = lengths[i];
        let b_point = [rng.gen_range(0.2..0.8) * l, side * rng.gen_range(0.0..0.05)];
        let mut pick = |j: usize| rng.gen_range(0.5 * lo(j)..2.0 * hi(j));
        actuators.push(ElasticActuatorSpec {
            id: format!("act{}", i + 1),
            mass: pick(0),
            stiffness: pick(1),
            damping: pick(2),
            rest_length: 1.0,
            area: pick(3),
            attach_a: Attachment::new(links[a_link].id.clone(), a_point),
            attach_b: Attachment::new(links[i + 1].id.clone(), b_point),
        });
    }
    let mut desc = RobotDescription {
        links,
        joints,
        actuators,
        gravity: crate::model::DEFAULT_GRAVITY,
        phase: Phase::Swing,
        stance_foot: None,
        nominal_pose: Some(nominal.clone()),
    };
    if let Ok(o) = build_oracle(&desc) {
        let ls = o.actuator_lengths(&nominal);
        for (a, l) in desc.actuators.iter_mut().zip(ls) {
            a.rest_length = l;
        }
    }
    desc
}

/// Positive-definite stiffness of the potential under forces held at
/// `f(q)`, by central differences.
fn stable_at(o: &OracleModel, q: &[f64]) -> Result<bool> {
    let f = o.balancing_force(q)?;
    let n = q.len();
    let grad = |q: &[f64]| {
        let mut g = o.potential_gradient_at(q);
        let k = o.forward_kinematics(q);
        for (i, fi) in f.iter().enumerate() {
            for j in 0..n {
                g[j] -= fi * k.dl_dq[i][j];
            }
        }
        g
    };
    let h = 1e-6;
    let mut hess = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut qp, mut qm) = (q.to_vec(), q.to_vec());
        qp[j] += h;
        qm[j] -= h;
        let (gp, gm) = (grad(&qp), grad(&qm));
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Ok(sym.symmetric_eigenvalues().min() > 1e-3)
}

/// A random chain that compiles in both backends, has full actuation and a
/// stable equilibrium at its nominal pose and at every pulse target.
/// Returns the description, the pulse targets and the regeneration count.
pub fn generate_morphology(seed: u64) -> Result<(RobotDescription, Vec<Vec<f64>>, usize)> {
    for attempt in 0..1000 {
        let mut rng = trial_rng(seed, attempt);
        let desc = random_chain(&mut rng);
        let targets: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                desc.nominal_pose()
                    .iter()
                    .map(|q| q + rng.gen_range(-0.15..0.15))
                    .collect()
            })
            .collect();
        let ok = (|| -> Result<bool> {
            let o = build_oracle(&desc)?;
            compile_engine(&desc, BaselineMode::ThreeTwoOne, EngineConfig::default())?;
            let mut all = vec![desc.nominal_pose()];
            all.extend(targets.iter().cloned());
            for q in &all {
                if !stable_at(&o, q)? {
                    return Ok(false);
                }
            }
            Ok(true)
        })();
        if matches!(ok, Ok(true)) {
            return Ok((desc, targets, attempt));
        }
    }
    Err(Error::Compile("no usable morphology in 1000 draws".into()))
}

/// Rectangular pulses to `f(target_k)` for 0.5 s every 2 s, returning to the
/// nominal holding force in between.
pub fn pulse_schedule(o: &OracleModel, nominal: &[f64], targets: &[Vec<f64>]) -> Result<ForceSchedule> {
    let f0 = o.balancing_force(nominal)?;
    let mut pts = Vec::new();
    for (k, q) in targets.iter().enumerate() {
        let t = 2.0 * k as f64;
        pts.push((t, o.balancing_force(q)?));
        pts.push((t + 0.5, f0.clone()));
    }
    Schedule::new(pts)
}

pub fn run_morphology_3dof(seed: u64, cfg: &SuiteConfig) -> Result<EquivalenceReport> {
    let (desc, targets, regenerations) = generate_morphology(seed)?;
    let o = build_oracle(&desc)?;
    let e = compile_engine(&desc, BaselineMode::ThreeTwoOne, cfg.engine)?;
    let f = pulse_schedule(&o, &desc.nominal_pose(), &targets)?;
    let t_end = 2.0 * targets.len() as f64;
    let s0 = JointState::at_rest(desc.nominal_pose());
    let to = o.integrate(&s0, &f, t_end, &cfg.integrator, cfg.engine.dt)?;
    let sim = e.simulate(&s0, &f, t_end)?;
    let mut acc = ErrorAccumulator::new(desc.dof());
    acc.add_trajectories(&to, &sim.trajectory)?;
    let mut r = EquivalenceReport::new("morphology_3dof", BaselineMode::ThreeTwoOne, &acc, cfg);
    r.seed = seed;
    r.trials = 1;
    r.valid = 1;
    r.absorb(&sim.stats);
    r.extra = serde_json::json!({
        "morphology_hash": morphology_hash(&desc),
        "regenerations": regenerations,
    });
    Ok(r)
}

/// Start and target of the standard swing test: the centre of the limit box
/// ∓ 0.15 rad on every joint.
pub fn limit_center(desc: &RobotDescription) -> Vec<f64> {
    desc.joints.iter().map(|j| 0.5 * (j.limits[0] + j.limits[1])).collect()
}

pub fn standard_swing(desc: &RobotDescription) -> (Vec<f64>, Vec<f64>) {
    let mid = limit_center(desc);
    (
        mid.iter().map(|m| m - 0.15).collect(),
        mid.iter().map(|m| m + 0.15).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveParam {
    Mass,
    Stiffness,
    RestLength,
    Damping,
    Area,
}

impl SensitiveParam {
    pub const ALL: [SensitiveParam; 5] = [
        SensitiveParam::Mass,
        SensitiveParam::Stiffness,
        SensitiveParam::RestLength,
        SensitiveParam::Damping,
        SensitiveParam::Area,
    ];

    fn scale(&self, a: &mut ElasticActuatorSpec, f: f64) {
        match self {
            SensitiveParam::Mass => a.mass *= f,
            SensitiveParam::Stiffness => a.stiffness *= f,
            SensitiveParam::RestLength => a.rest_length *= f,
            SensitiveParam::Damping => a.damping *= f,
            SensitiveParam::Area => a.area *= f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub param: SensitiveParam,
    /// Signed perturbation, percent.
    pub level_pct: f64,
    /// Per joint, rad.
    pub delta_rmse: Vec<f64>,
    pub delta_rmse_overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
    /// Per parameter: ΔRMSE nondecreasing in |level| for both signs.
    pub monotone: Vec<(SensitiveParam, bool)>,
    /// Parameter with the largest ΔRMSE at the largest level.
    pub most_sensitive: SensitiveParam,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
}

impl SensitivityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Engine sensitivity of the standard swing test to every actuator
/// parameter, scaled on all actuators at once. Inputs are pressures, so area
/// perturbations change the applied force.
pub fn run_sensitivity(desc: &RobotDescription, levels_pct: &[f64], cfg: &SuiteConfig) -> Result<SensitivityReport> {
    let o = build_oracle(desc)?;
    let (start, target) = standard_swing(desc);
    let pressures: Vec<f64> = o
        .balancing_force(&target)?
        .iter()
        .zip(desc.areas())
        .map(|(f, s)| f / s)
        .collect();
    let s0 = JointState::at_rest(start);
    let sim = |d: &RobotDescription| -> Result<Trajectory> {
        let e = compile_engine(d, BaselineMode::ThreeTwoOne, cfg.engine)?;
        let f = Schedule::constant(pressures.iter().zip(d.areas()).map(|(p, s)| p * s).collect());
        Ok(e.simulate(&s0, &f, cfg.duration)?.trajectory)
    };
    let reference = sim(desc)?;
    let mut levels: Vec<f64> = vec![0.0];
    for &l in levels_pct {
        levels.push(l);
        levels.push(-l);
    }
    let jobs: Vec<(SensitiveParam, f64)> = SensitiveParam::ALL
        .iter()
        .flat_map(|&p| levels.iter().map(move |&l| (p, l)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(p, l)| {
            let mut d = desc.clone();
            for a in &mut d.actuators {
                p.scale(a, 1.0 + l / 100.0);
            }
            let tr = sim(&d)?;
            let mut acc = ErrorAccumulator::new(desc.dof());
            acc.add_trajectories(&reference, &tr)?;
            Ok(SensitivityRow {
                param: p,
                level_pct: l,
                delta_rmse: acc.rmse(),
                delta_rmse_overall: acc.overall_rmse(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let get = |p: SensitiveParam, l: f64| {
        rows.iter()
            .find(|r| r.param == p && r.level_pct == l)
            .map_or(0.0, |r| r.delta_rmse_overall)
    };
    let mut sorted: Vec<f64> = levels_pct.to_vec();
    sorted.sort_by(f64::total_cmp);
    let monotone = SensitiveParam::ALL
        .iter()
        .map(|&p| {
            let ok = [1.0, -1.0].iter().all(|s| {
                sorted
                    .windows(2)
                    .all(|w| get(p, s * w[1]) >= get(p, s * w[0]))
            });
            (p, ok)
        })
        .collect();
    let top = sorted.last().copied().unwrap_or(0.0);
    let most_sensitive = SensitiveParam::ALL
        .iter()
        .copied()
        .max_by(|&a, &b| {
            let va = get(a, top).max(get(a, -top));
            let vb = get(b, top).max(get(b, -top));
            va.total_cmp(&vb)
        })
        .expect("nonempty");
    Ok(SensitivityReport {
        rows,
        monotone,
        most_sensitive,
        config: serde_json::to_value(cfg).expect("config serializes"),
        seed: cfg.seed,
        code_version: CODE_VERSION.into(),
    })
}
