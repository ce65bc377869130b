//! Extended-coordinate constrained engine.
//!
//! Each actuator is realized as a hinge mount on the `attach_a` link carrying
//! two collinear slides. Three point masses ride on the mount, at the first
//! slide and at the end of the second slide. A connect constraint closes the
//! loop at `attach_b`, and an equality constraint keeps the two slide lengths
//! equal. In stance the root link may translate and the foot is pinned.
//!
//! Each step solves the saddle-point system
//! `[M Jᵀ; J 0]·[ẍ; λ] = [Q − h; −J̇ẋ − α·Jẋ − β·c]`, advances with
//! semi-implicit Euler, then projects positions and velocities back onto the
//! constraint manifold. Linear dampers are taken implicitly (`M + dt·D`), as
//! in MuJoCo's Euler integrator; without that the massless baseline element
//! is unstable at practical step sizes.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::equivalence::{assembly_from, EquivalentAssembly, MIN_LENGTH};
use crate::error::{Error, Result};
use crate::math::{cross, perp, vec2, Vec2};
use crate::model::{JointState, Phase, RobotDescription};
use crate::schedule::ForceSchedule;
use crate::skeleton::{Frames, LinkPoint, Skeleton};
use crate::trajectory::{Energies, TrajRow, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Three masses, two segments, one equality constraint per actuator.
    #[default]
    ThreeTwoOne,
    /// One massless spring-damper-force element per actuator.
    NaiveLumped,
}

impl BaselineMode {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMode::ThreeTwoOne => "three_two_one",
            BaselineMode::NaiveLumped => "naive_lumped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EngineConfig {
    pub dt: f64,
    /// Stabilization natural frequency, rad/s.
    pub omega: f64,
    /// Stabilization damping ratio.
    pub zeta: f64,
    /// Allowed position-level constraint residual, m.
    pub drift_tol: f64,
    /// Multiplier on every actuator mass. Zero gives massless assemblies.
    pub actuator_mass_scale: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dt: 0.0025,
            omega: 100.0,
            zeta: 1.0,
            drift_tol: 1e-6,
            actuator_mass_scale: 1.0,
        }
    }
}

impl EngineConfig {
    /// (α, β) = (2ζω, ω²).
    pub fn gains(&self) -> (f64, f64) {
        (2.0 * self.zeta * self.omega, self.omega * self.omega)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.omega >= 0.0) || !(self.zeta >= 0.0) {
            return Err(Error::Validation(
                "engine dt must be positive and gains nonnegative".into(),
            ));
        }
        if !(self.actuator_mass_scale >= 0.0) || !(self.drift_tol > 0.0) {
            return Err(Error::Validation(
                "actuator mass scale must be nonnegative and drift tolerance positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Body {
    com: LinkPoint,
    mass: f64,
    inertia: f64,
}

#[derive(Debug, Clone)]
struct Actuator {
    a: LinkPoint,
    b: LinkPoint,
    asm: EquivalentAssembly,
    stiffness: f64,
    damping: f64,
    rest_length: f64,
    /// Index of the mount angle; the slides follow it.
    col: usize,
}

#[derive(Debug, Clone)]
pub struct EngineModel {
    skel: Skeleton,
    bodies: Vec<Body>,
    acts: Vec<Actuator>,
    joint_damping: Vec<f64>,
    gravity: f64,
    foot: Option<LinkPoint>,
    mode: BaselineMode,
    cfg: EngineConfig,
    n: usize,
    q0: usize,
    nx: usize,
    nc: usize,
}

/// Extended state: coordinates, rates and time.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Per-run diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub wall_ms_per_step: f64,
    /// Largest position-level constraint residual after any step, m.
    pub max_drift: f64,
    /// Largest |s1 − s2| after any step, m.
    pub max_segment_mismatch: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub stats: RunStats,
}

/// Scratch space for one simulation.
#[derive(Debug, Clone)]
pub struct Workspace {
    frames: Frames,
    jp: Vec<Vec2>,
    jb: Vec<Vec2>,
    mass: DMatrix<f64>,
    /// ∂(−Q)/∂ẋ of all dampers.
    damp: DMatrix<f64>,
    force: DVector<f64>,
    jc: DMatrix<f64>,
    resid: DVector<f64>,
    bias: DVector<f64>,
    kkt: DMatrix<f64>,
    rhs: DVector<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Residual left by the previous step, if any.
    last_drift: Option<f64>,
}

pub fn compile_engine(
    desc: &RobotDescription,
    mode: BaselineMode,
    cfg: EngineConfig,
) -> Result<EngineModel> {
    desc.validate()?;
    compile_unchecked(desc, mode, cfg)
}

fn compile_unchecked(
    desc: &RobotDescription,
    mode: BaselineMode,
    cfg: EngineConfig,
) -> Result<EngineModel> {
    cfg.validate()?;
    let skel = Skeleton::new(desc)?;
    let n = skel.dof();
    let stance = desc.phase == Phase::Stance;
    let q0 = if stance { 2 } else { 0 };
    let per_act = match mode {
        BaselineMode::ThreeTwoOne => 3,
        BaselineMode::NaiveLumped => 0,
    };
    let mut acts = Vec::new();
    for (i, a) in desc.actuators.iter().enumerate() {
        acts.push(Actuator {
            a: skel.resolve(desc, &a.attach_a)?,
            b: skel.resolve(desc, &a.attach_b)?,
            asm: assembly_from(
                a.mass * cfg.actuator_mass_scale,
                a.stiffness,
                a.damping,
                a.rest_length,
            ),
            stiffness: a.stiffness,
            damping: a.damping,
            rest_length: a.rest_length,
            col: q0 + n + per_act * i,
        });
    }
    let foot = if stance {
        let f = desc
            .stance_foot
            .as_ref()
            .ok_or_else(|| Error::Compile("stance phase without a foot".into()))?;
        Some(skel.resolve(desc, f)?)
    } else {
        None
    };
    let nx = q0 + n + per_act * acts.len();
    let nc = per_act * acts.len() + if stance { 2 } else { 0 };
    let model = EngineModel {
        bodies: desc
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| Body {
                com: LinkPoint {
                    link: i,
                    local: vec2(l.com),
                },
                mass: l.mass,
                inertia: l.inertia_zz,
            })
            .collect(),
        joint_damping: desc.joints.iter().map(|j| j.damping).collect(),
        gravity: desc.gravity,
        skel,
        acts,
        foot,
        mode,
        cfg,
        n,
        q0,
        nx,
        nc,
    };

    let s0 = model.assemble_state(&JointState::at_rest(desc.nominal_pose()))?;
    if nc > 0 {
        let mut ws = model.workspace();
        model.constraints(&mut ws, &s0.x, &s0.v);
        let sv = ws.jc.clone().svd(false, false).singular_values;
        let smax = sv.max();
        if !(sv.min() > 1e-9 * smax.max(1e-300)) {
            return Err(Error::Compile(
                "constraint Jacobian is rank deficient at the nominal pose".into(),
            ));
        }
    }
    Ok(model)
}

/// Compile with every actuator mass multiplied by `scale`, skipping the
/// positive-mass check. Used for massless comparisons.
pub fn compile_engine_scaled_mass(
    desc: &RobotDescription,
    mode: BaselineMode,
    cfg: EngineConfig,
    scale: f64,
) -> Result<EngineModel> {
    compile_unchecked(
        desc,
        mode,
        EngineConfig {
            actuator_mass_scale: scale,
            ..cfg
        },
    )
}

impl EngineModel {
    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn n_coords(&self) -> usize {
        self.nx
    }

    pub fn n_constraints(&self) -> usize {
        self.nc
    }

    pub fn mode(&self) -> BaselineMode {
        self.mode
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn n_actuators(&self) -> usize {
        self.acts.len()
    }

    pub fn workspace(&self) -> Workspace {
        let (nx, nc) = (self.nx, self.nc);
        Workspace {
            frames: self.skel.frames(),
            jp: vec![Vec2::zeros(); nx],
            jb: vec![Vec2::zeros(); nx],
            mass: DMatrix::zeros(nx, nx),
            damp: DMatrix::zeros(nx, nx),
            force: DVector::zeros(nx),
            jc: DMatrix::zeros(nc, nx),
            resid: DVector::zeros(nc),
            bias: DVector::zeros(nc),
            kkt: DMatrix::zeros(nx + nc, nx + nc),
            rhs: DVector::zeros(nx + nc),
            lu: None,
            last_drift: None,
        }
    }

    fn is_stance(&self) -> bool {
        self.foot.is_some()
    }

    fn update_frames(&self, f: &mut Frames, x: &[f64], v: &[f64]) {
        let (q0, n) = (self.q0, self.n);
        let (base, base_vel) = if self.is_stance() {
            (Vec2::new(x[0], x[1]), Vec2::new(v[0], v[1]))
        } else {
            (Vec2::zeros(), Vec2::zeros())
        };
        self.skel
            .update(f, &x[q0..q0 + n], &v[q0..q0 + n], base, base_vel);
    }

    /// Jacobian of a skeleton point with respect to `x`.
    fn skel_jac(&self, f: &Frames, p: LinkPoint, out: &mut [Vec2]) {
        out.fill(Vec2::zeros());
        if self.is_stance() {
            out[0] = Vec2::new(1.0, 0.0);
            out[1] = Vec2::new(0.0, 1.0);
        }
        let world = f.point(p);
        for j in 0..self.n {
            out[self.q0 + j] = f.jacobian_col(&self.skel, p, world, j);
        }
    }

    /// Mount direction angle, its rate, unit vector.
    fn mount(&self, f: &Frames, act: &Actuator, x: &[f64], v: &[f64]) -> (Vec2, f64) {
        let beta = f.angle[act.a.link] + x[act.col];
        let rate = f.omega[act.a.link] + v[act.col];
        (Vec2::new(beta.cos(), beta.sin()), rate)
    }

    /// Position, velocity, velocity-product acceleration and Jacobian of the
    /// point at distance `s = x[s1] (+ x[s2])` along the mount.
    fn slide_point(
        &self,
        f: &Frames,
        act: &Actuator,
        x: &[f64],
        v: &[f64],
        both: bool,
        jac: &mut [Vec2],
    ) -> (Vec2, Vec2, Vec2) {
        let (e, w) = self.mount(f, act, x, v);
        let c = act.col;
        let (s, sd) = if both {
            (x[c + 1] + x[c + 2], v[c + 1] + v[c + 2])
        } else {
            (x[c + 1], v[c + 1])
        };
        self.skel_jac(f, act.a, jac);
        let en = perp(e);
        for j in 0..self.n {
            if self.skel.moves(act.a.link, j) {
                jac[self.q0 + j] += s * en;
            }
        }
        jac[c] = s * en;
        jac[c + 1] = e;
        if both {
            jac[c + 2] = e;
        }
        let pa = f.point(act.a);
        let pos = pa + s * e;
        let vel = f.velocity(act.a) + s * w * en + sd * e;
        let acc = f.acc_q(act.a) + 2.0 * sd * w * en - s * w * w * e;
        (pos, vel, acc)
    }

    fn add_mass(ws: &mut Workspace, jac_is_p: bool, mass: f64, aq: Vec2, g: f64, nx: usize) {
        if mass == 0.0 {
            return;
        }
        let jac = if jac_is_p { &ws.jp } else { &ws.jb };
        for i in 0..nx {
            let ji = jac[i];
            if ji.x == 0.0 && ji.y == 0.0 {
                continue;
            }
            for j in i..nx {
                ws.mass[(i, j)] += mass * ji.dot(&jac[j]);
            }
            ws.force[i] -= mass * ji.dot(&aq) + mass * g * ji.y;
        }
    }

    /// Fill mass matrix and applied-minus-velocity-product forces.
    fn dynamics(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        v: &[f64],
        forces: &[f64],
        damp_dt: f64,
    ) -> Result<()> {
        let (nx, n, q0) = (self.nx, self.n, self.q0);
        let g = self.gravity;
        self.update_frames(&mut ws.frames, x, v);
        ws.mass.fill(0.0);
        ws.damp.fill(0.0);
        ws.force.fill(0.0);

        for b in &self.bodies {
            let mut jp = std::mem::take(&mut ws.jp);
            self.skel_jac(&ws.frames, b.com, &mut jp);
            ws.jp = jp;
            let aq = ws.frames.acc_q(b.com);
            Self::add_mass(ws, true, b.mass, aq, g, nx);
            for i in 0..n {
                if !self.skel.moves(b.com.link, i) {
                    continue;
                }
                for j in i..n {
                    if self.skel.moves(b.com.link, j) {
                        ws.mass[(q0 + i, q0 + j)] += b.inertia;
                    }
                }
            }
        }

        for (act, &f) in self.acts.iter().zip(forces) {
            match self.mode {
                BaselineMode::ThreeTwoOne => {
                    let m = act.asm.masses;
                    let mut jp = std::mem::take(&mut ws.jp);
                    self.skel_jac(&ws.frames, act.a, &mut jp);
                    ws.jp = jp;
                    let aq = ws.frames.acc_q(act.a);
                    Self::add_mass(ws, true, m[0], aq, g, nx);

                    let mut jp = std::mem::take(&mut ws.jp);
                    let (_, _, aq) = self.slide_point(&ws.frames, act, x, v, false, &mut jp);
                    ws.jp = jp;
                    Self::add_mass(ws, true, m[1], aq, g, nx);

                    let mut jp = std::mem::take(&mut ws.jp);
                    let (_, _, aq) = self.slide_point(&ws.frames, act, x, v, true, &mut jp);
                    ws.jp = jp;
                    Self::add_mass(ws, true, m[2], aq, g, nx);

                    let c = act.col;
                    let (k, r, d) = (
                        act.asm.segment_stiffness,
                        act.asm.segment_rest_length,
                        act.asm.segment_damping,
                    );
                    for s in [c + 1, c + 2] {
                        ws.force[s] += f - k * (x[s] - r) - d * v[s];
                        ws.damp[(s, s)] += d;
                    }
                }
                BaselineMode::NaiveLumped => {
                    let mut jp = std::mem::take(&mut ws.jp);
                    let mut jb = std::mem::take(&mut ws.jb);
                    self.skel_jac(&ws.frames, act.a, &mut jp);
                    self.skel_jac(&ws.frames, act.b, &mut jb);
                    let d = ws.frames.point(act.b) - ws.frames.point(act.a);
                    let l = d.norm();
                    if !(l > MIN_LENGTH) {
                        return Err(Error::Geometry("actuator collapsed to zero length".into()));
                    }
                    let e = d / l;
                    let mut ld = 0.0;
                    for i in 0..nx {
                        ld += e.dot(&(jb[i] - jp[i])) * v[i];
                    }
                    // velocity-product part of l̈, so the implicit damper sees
                    // the end-of-step rate exactly as the slide dampers do
                    let dv = ws.frames.velocity(act.b) - ws.frames.velocity(act.a);
                    let da = ws.frames.acc_q(act.b) - ws.frames.acc_q(act.a);
                    let ldd_q = e.dot(&da) + (dv.norm_squared() - ld * ld) / l;
                    let axial = f
                        - act.stiffness * (l - act.rest_length)
                        - act.damping * (ld + damp_dt * ldd_q);
                    for i in 0..nx {
                        let gi = e.dot(&(jb[i] - jp[i]));
                        ws.force[i] += axial * gi;
                        for j in 0..nx {
                            ws.damp[(i, j)] += act.damping * gi * e.dot(&(jb[j] - jp[j]));
                        }
                    }
                    ws.jp = jp;
                    ws.jb = jb;
                }
            }
        }
        for j in 0..n {
            ws.force[q0 + j] -= self.joint_damping[j] * v[q0 + j];
            ws.damp[(q0 + j, q0 + j)] += self.joint_damping[j];
        }
        for i in 0..nx {
            for j in 0..i {
                ws.mass[(i, j)] = ws.mass[(j, i)];
            }
        }
        Ok(())
    }

    /// Constraint residual, Jacobian and velocity-product term `J̇ẋ`.
    fn constraints(&self, ws: &mut Workspace, x: &[f64], v: &[f64]) {
        self.update_frames(&mut ws.frames, x, v);
        let nx = self.nx;
        let mut row = 0;
        if self.mode == BaselineMode::ThreeTwoOne {
            for act in &self.acts {
                let mut jp = std::mem::take(&mut ws.jp);
                let mut jb = std::mem::take(&mut ws.jb);
                let (pos, _, aq) = self.slide_point(&ws.frames, act, x, v, true, &mut jp);
                self.skel_jac(&ws.frames, act.b, &mut jb);
                let d = pos - ws.frames.point(act.b);
                let a = aq - ws.frames.acc_q(act.b);
                for i in 0..nx {
                    let col = jp[i] - jb[i];
                    ws.jc[(row, i)] = col.x;
                    ws.jc[(row + 1, i)] = col.y;
                }
                ws.resid[row] = d.x;
                ws.resid[row + 1] = d.y;
                ws.bias[row] = a.x;
                ws.bias[row + 1] = a.y;
                ws.jp = jp;
                ws.jb = jb;

                for i in 0..nx {
                    ws.jc[(row + 2, i)] = 0.0;
                }
                ws.jc[(row + 2, act.col + 1)] = 1.0;
                ws.jc[(row + 2, act.col + 2)] = -1.0;
                ws.resid[row + 2] = x[act.col + 1] - x[act.col + 2];
                ws.bias[row + 2] = 0.0;
                row += 3;
            }
        }
        if let Some(foot) = self.foot {
            let mut jp = std::mem::take(&mut ws.jp);
            self.skel_jac(&ws.frames, foot, &mut jp);
            let p = ws.frames.point(foot);
            let a = ws.frames.acc_q(foot);
            for i in 0..nx {
                ws.jc[(row, i)] = jp[i].x;
                ws.jc[(row + 1, i)] = jp[i].y;
            }
            ws.resid[row] = p.x;
            ws.resid[row + 1] = p.y;
            ws.bias[row] = a.x;
            ws.bias[row + 1] = a.y;
            ws.jp = jp;
        }
    }

    fn residual_norm(&self, ws: &Workspace) -> f64 {
        ws.resid.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// Factor `[M + h·D, Jᵀ; J, 0]` and solve for `rhs` in place.
    fn solve_kkt(&self, ws: &mut Workspace, t: f64, damp_dt: f64) -> Result<()> {
        self.factor_kkt(ws, t, damp_dt)?;
        self.solve_factored(ws, t)
    }

    fn factor_kkt(&self, ws: &mut Workspace, t: f64, damp_dt: f64) -> Result<()> {
        let (nx, nc) = (self.nx, self.nc);
        ws.kkt.fill(0.0);
        ws.kkt.view_mut((0, 0), (nx, nx)).copy_from(&ws.mass);
        if damp_dt != 0.0 {
            let mut top = ws.kkt.view_mut((0, 0), (nx, nx));
            top += &ws.damp * damp_dt;
        }
        if nc > 0 {
            ws.kkt.view_mut((nx, 0), (nc, nx)).copy_from(&ws.jc);
            ws.kkt
                .view_mut((0, nx), (nx, nc))
                .copy_from(&ws.jc.transpose());
        }
        let lu = ws.kkt.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::SolverSingular(t));
        }
        ws.lu = Some(lu);
        Ok(())
    }

    /// Solve with the last factorization; the top block of `rhs` is the answer.
    fn solve_factored(&self, ws: &mut Workspace, t: f64) -> Result<()> {
        let lu = ws.lu.as_ref().ok_or(Error::SolverSingular(t))?;
        if !lu.solve_mut(&mut ws.rhs) || ws.rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverSingular(t));
        }
        Ok(())
    }

    /// Accelerations `ẍ` at (x, v) under actuator forces.
    pub fn accelerations(
        &self,
        ws: &mut Workspace,
        t: f64,
        x: &[f64],
        v: &[f64],
        forces: &[f64],
    ) -> Result<Vec<f64>> {
        self.accelerations_damped(ws, t, x, v, forces, 0.0)
    }

    /// Accelerations with dampers evaluated at the end-of-step velocity
    /// `v + h·ẍ`, i.e. `(M + h·D)` on the left.
    fn accelerations_damped(
        &self,
        ws: &mut Workspace,
        t: f64,
        x: &[f64],
        v: &[f64],
        forces: &[f64],
        h: f64,
    ) -> Result<Vec<f64>> {
        let (nx, nc) = (self.nx, self.nc);
        self.dynamics(ws, x, v, forces, h)?;
        self.constraints(ws, x, v);
        let (alpha, beta) = self.cfg.gains();
        for i in 0..nx {
            ws.rhs[i] = ws.force[i];
        }
        for r in 0..nc {
            let mut jv = 0.0;
            for i in 0..nx {
                jv += ws.jc[(r, i)] * v[i];
            }
            ws.rhs[nx + r] = -ws.bias[r] - alpha * jv - beta * ws.resid[r];
        }
        self.solve_kkt(ws, t, h)?;
        Ok(ws.rhs.as_slice()[..nx].to_vec())
    }

    /// Project positions, then velocities, onto the constraint manifold.
    ///
    /// The metric is the mass matrix alone, so massless coordinates absorb
    /// corrections for free. One factorization at the first post-step
    /// Jacobian serves all chord iterations; every fourth pass refactors in
    /// case convergence is slow. Leaves the final residual in `ws`.
    fn project(&self, ws: &mut Workspace, st: &mut EngineState) -> Result<()> {
        let (nx, nc) = (self.nx, self.nc);
        if nc == 0 {
            return Ok(());
        }
        let mut factored = false;
        for it in 0..16 {
            self.constraints(ws, &st.x, &st.v);
            if self.residual_norm(ws) < 1e-14 {
                break;
            }
            if it % 4 == 0 {
                self.factor_kkt(ws, st.t, 0.0)?;
                factored = true;
            }
            ws.rhs.fill(0.0);
            for r in 0..nc {
                ws.rhs[nx + r] = -ws.resid[r];
            }
            self.solve_factored(ws, st.t)?;
            for i in 0..nx {
                st.x[i] += ws.rhs[i];
            }
        }
        for it in 1..=16 {
            ws.rhs.fill(0.0);
            let mut worst = 0.0_f64;
            for r in 0..nc {
                let mut jv = 0.0;
                for i in 0..nx {
                    jv += ws.jc[(r, i)] * st.v[i];
                }
                worst = worst.max(jv.abs());
                ws.rhs[nx + r] = -jv;
            }
            if worst < 1e-13 {
                break;
            }
            if !factored || it % 4 == 0 {
                self.factor_kkt(ws, st.t, 0.0)?;
                factored = true;
            }
            self.solve_factored(ws, st.t)?;
            for i in 0..nx {
                st.v[i] += ws.rhs[i];
            }
        }
        Ok(())
    }

    /// Position residual of every constraint at `x`.
    pub fn constraint_residual(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        let v = vec![0.0; self.nx];
        self.constraints(&mut ws, x, &v);
        ws.resid.iter().copied().collect()
    }

    /// Jacobian of the constraints at `x`, one row per scalar constraint.
    pub fn constraint_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut ws = self.workspace();
        let v = vec![0.0; self.nx];
        self.constraints(&mut ws, x, &v);
        ws.jc.clone()
    }

    /// Advance one `dt` under actuator forces `forces`. `ws` caches the
    /// previous residual, so use one workspace per trajectory.
    pub fn step(&self, ws: &mut Workspace, st: &mut EngineState, forces: &[f64]) -> Result<()> {
        let nx = self.nx;
        let dt = self.cfg.dt;
        if self.nc > 0 {
            let r = match ws.last_drift {
                Some(r) => r,
                None => {
                    self.constraints(ws, &st.x, &st.v);
                    self.residual_norm(ws)
                }
            };
            if r > 10.0 * self.cfg.drift_tol {
                return Err(Error::DriftExceeded {
                    t: st.t,
                    drift: r,
                    tol: 10.0 * self.cfg.drift_tol,
                });
            }
        }
        let acc = self.accelerations_damped(ws, st.t, &st.x, &st.v, forces, dt)?;
        for i in 0..nx {
            st.v[i] += dt * acc[i];
            st.x[i] += dt * st.v[i];
        }
        st.t += dt;
        self.project(ws, st)?;
        if st.x.iter().chain(&st.v).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(st.t));
        }
        if self.nc > 0 {
            let r = self.residual_norm(ws);
            ws.last_drift = Some(r);
            if r > self.cfg.drift_tol {
                return Err(Error::DriftExceeded {
                    t: st.t,
                    drift: r,
                    tol: self.cfg.drift_tol,
                });
            }
        }
        Ok(())
    }

    /// Extended state consistent with joint state `s`: constraints hold exactly
    /// and both slides take half the endpoint distance.
    pub fn assemble_state(&self, s: &JointState) -> Result<EngineState> {
        let (n, q0, nx) = (self.n, self.q0, self.nx);
        for (what, got) in [("q", s.q.len()), ("qdot", s.qdot.len())] {
            if got != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got,
                });
            }
        }
        let mut x = vec![0.0; nx];
        let mut v = vec![0.0; nx];
        x[q0..q0 + n].copy_from_slice(&s.q);
        v[q0..q0 + n].copy_from_slice(&s.qdot);
        let mut f = self.skel.frames();
        if let Some(foot) = self.foot {
            self.update_frames(&mut f, &x, &v);
            let (p, pv) = (f.point(foot), f.velocity(foot));
            x[0] = -p.x;
            x[1] = -p.y;
            v[0] = -pv.x;
            v[1] = -pv.y;
        }
        self.update_frames(&mut f, &x, &v);
        if self.mode == BaselineMode::ThreeTwoOne {
            for act in &self.acts {
                let (pa, pb) = (f.point(act.a), f.point(act.b));
                let d = pb - pa;
                let l = d.norm();
                if !(l > MIN_LENGTH) {
                    return Err(Error::Geometry("actuator attachment points coincide".into()));
                }
                let dd = f.velocity(act.b) - f.velocity(act.a);
                let beta = d.y.atan2(d.x);
                let beta_rate = cross(d, dd) / (l * l);
                let c = act.col;
                x[c] = beta - f.angle[act.a.link];
                v[c] = beta_rate - f.omega[act.a.link];
                x[c + 1] = 0.5 * l;
                x[c + 2] = 0.5 * l;
                let ld = d.dot(&dd) / l;
                v[c + 1] = 0.5 * ld;
                v[c + 2] = 0.5 * ld;
            }
        }
        Ok(EngineState { t: s.t, x, v })
    }

    pub fn extract_joint_state(&self, st: &EngineState) -> JointState {
        let (q0, n) = (self.q0, self.n);
        JointState {
            t: st.t,
            q: st.x[q0..q0 + n].to_vec(),
            qdot: st.v[q0..q0 + n].to_vec(),
        }
    }

    /// Largest |s1 − s2| over all assemblies.
    pub fn segment_mismatch(&self, x: &[f64]) -> f64 {
        match self.mode {
            BaselineMode::ThreeTwoOne => self
                .acts
                .iter()
                .map(|a| (x[a.col + 1] - x[a.col + 2]).abs())
                .fold(0.0, f64::max),
            BaselineMode::NaiveLumped => 0.0,
        }
    }

    /// World position of the middle mass of actuator `i` and the endpoint
    /// midpoint (A + B)/2.
    pub fn midpoint_check(&self, st: &EngineState, i: usize) -> (Vec2, Vec2) {
        let mut f = self.skel.frames();
        self.update_frames(&mut f, &st.x, &st.v);
        let act = &self.acts[i];
        let mut jac = vec![Vec2::zeros(); self.nx];
        let (pos, _, _) = self.slide_point(&f, act, &st.x, &st.v, false, &mut jac);
        (pos, 0.5 * (f.point(act.a) + f.point(act.b)))
    }

    /// Lengths, rates and discrete energies at the current state.
    /// Energies of the discrete assembly at `st`.
    pub fn energies(&self, st: &EngineState) -> Energies {
        self.row(&mut self.workspace(), st).energy
    }

    fn row(&self, ws: &mut Workspace, st: &EngineState) -> TrajRow {
        self.update_frames(&mut ws.frames, &st.x, &st.v);
        let f = &ws.frames;
        let g = self.gravity;
        let mut e = Energies::default();
        for b in &self.bodies {
            let moving = self.is_stance() || b.com.link != self.skel.root();
            if moving {
                let vel = f.velocity(b.com);
                let w = f.omega[b.com.link];
                e.kinetic += 0.5 * b.mass * vel.norm_squared() + 0.5 * b.inertia * w * w;
            }
            e.gravity += b.mass * g * f.point(b.com).y;
        }
        let (mut l, mut ld) = (Vec::new(), Vec::new());
        let mut jac = std::mem::take(&mut ws.jp);
        for act in &self.acts {
            match self.mode {
                BaselineMode::ThreeTwoOne => {
                    let c = act.col;
                    let m = act.asm.masses;
                    let pts = [
                        (f.point(act.a), f.velocity(act.a)),
                        {
                            let (p, v, _) = self.slide_point(f, act, &st.x, &st.v, false, &mut jac);
                            (p, v)
                        },
                        {
                            let (p, v, _) = self.slide_point(f, act, &st.x, &st.v, true, &mut jac);
                            (p, v)
                        },
                    ];
                    for (mi, (p, v)) in m.iter().zip(pts) {
                        e.kinetic += 0.5 * mi * v.norm_squared();
                        e.gravity += mi * g * p.y;
                    }
                    let (s1, s2) = (st.x[c + 1], st.x[c + 2]);
                    e.elastic += crate::equivalence::elastic_pe_discrete(&act.asm, s1, s2);
                    l.push(s1 + s2);
                    ld.push(st.v[c + 1] + st.v[c + 2]);
                }
                BaselineMode::NaiveLumped => {
                    let d = f.point(act.b) - f.point(act.a);
                    let dv = f.velocity(act.b) - f.velocity(act.a);
                    let len = d.norm();
                    e.elastic += crate::equivalence::elastic_pe(act.stiffness, len, act.rest_length);
                    l.push(len);
                    ld.push(d.dot(&dv) / len);
                }
            }
        }
        ws.jp = jac;
        let js = self.extract_joint_state(st);
        // positions relative to the foot, so energies match a foot-rooted frame
        if let Some(foot) = self.foot {
            let p = f.point(foot);
            let total_mass: f64 = self.bodies.iter().map(|b| b.mass).sum::<f64>()
                + self.acts.iter().map(|a| a.asm.total_mass()).sum::<f64>();
            e.gravity -= total_mass * g * p.y;
        }
        TrajRow {
            t: st.t,
            q: js.q,
            qd: js.qdot,
            l,
            ld,
            energy: e,
        }
    }

    /// Simulate from joint state `s0` to `t_end`, one row per step.
    pub fn simulate(
        &self,
        s0: &JointState,
        forces: &ForceSchedule,
        t_end: f64,
    ) -> Result<Simulation> {
        let mut tr = Trajectory::default();
        let stats = self.simulate_with(s0, forces, t_end, |row| {
            tr.rows.push(row);
            true
        })?;
        Ok(Simulation {
            trajectory: tr,
            stats,
        })
    }

    /// Like [`simulate`](Self::simulate) but streams rows to `sink`; stops
    /// early when `sink` returns false.
    pub fn simulate_with(
        &self,
        s0: &JointState,
        forces: &ForceSchedule,
        t_end: f64,
        mut sink: impl FnMut(TrajRow) -> bool,
    ) -> Result<RunStats> {
        if forces.width() != self.acts.len() {
            return Err(Error::Dimension {
                what: "force schedule channels",
                expected: self.acts.len(),
                got: forces.width(),
            });
        }
        let mut st = self.assemble_state(s0)?;
        let mut ws = self.workspace();
        let mut stats = RunStats::default();
        let t0 = s0.t;
        let dt = self.cfg.dt;
        let n_steps = ((t_end - t0) / dt + 1e-9).floor() as usize;
        let start = Instant::now();
        if !sink(self.row(&mut ws, &st)) {
            return Ok(stats);
        }
        for k in 0..n_steps {
            let u = forces.value_at(t0 + k as f64 * dt);
            self.step(&mut ws, &mut st, &u)?;
            st.t = t0 + (k + 1) as f64 * dt;
            stats.steps += 1;
            if self.nc > 0 {
                stats.max_drift = stats.max_drift.max(self.residual_norm(&ws));
            }
            stats.max_segment_mismatch = stats.max_segment_mismatch.max(self.segment_mismatch(&st.x));
            if !sink(self.row(&mut ws, &st)) {
                break;
            }
        }
        if stats.steps > 0 {
            stats.wall_ms_per_step = start.elapsed().as_secs_f64() * 1e3 / stats.steps as f64;
        }
        Ok(stats)
    }

    /// JSON sidecar describing a run.
    pub fn sidecar_json(&self, stats: &RunStats) -> String {
        let (alpha, beta) = self.cfg.gains();
        serde_json::to_string_pretty(&serde_json::json!({
            "mode": self.mode.name(),
            "dt": self.cfg.dt,
            "gains": { "alpha": alpha, "beta": beta, "omega": self.cfg.omega, "zeta": self.cfg.zeta },
            "wall_ms_per_step": stats.wall_ms_per_step,
            "max_drift": stats.max_drift,
            "max_segment_mismatch": stats.max_segment_mismatch,
            "steps": stats.steps,
        }))
        .expect("sidecar serializes")
    }
}
