//! Minimal-coordinate Lagrangian model of a robot with continuous actuators.
//!
//! Generalized coordinates are the joint angles. Actuator kinetic and
//! gravitational energy use the closed forms for a uniform bar between the
//! two attachment points; actuator elasticity is a linear spring on the
//! endpoint distance. Velocity-product terms are built from Christoffel
//! symbols of a finite-differenced mass matrix.
//!
//! In stance the chain is re-rooted at the foot: every position is measured
//! relative to the foot point, the root keeps its orientation, and the root
//! mass moves with the chain.

use nalgebra::{DMatrix, DVector};

use crate::equivalence::{self, MIN_LENGTH};
use crate::error::{Error, Result};
use crate::math::{vec2, Vec2};
use crate::model::{JointState, Phase, RobotDescription};
use crate::ode::{Dopri5, IntegratorConfig};
use crate::schedule::ForceSchedule;
use crate::skeleton::{Frames, LinkPoint, Skeleton};
use crate::trajectory::{Energies, TrajRow, Trajectory};

/// Default output sampling interval, s.
pub const DEFAULT_DT_OUT: f64 = 0.005;

const FD_STEP: f64 = 1e-6;

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
    mass: f64,
    stiffness: f64,
    damping: f64,
    rest_length: f64,
}

#[derive(Debug, Clone)]
pub struct OracleModel {
    skel: Skeleton,
    bodies: Vec<Body>,
    acts: Vec<Actuator>,
    joint_damping: Vec<f64>,
    gravity: f64,
    /// Present in stance only.
    foot: Option<LinkPoint>,
    n: usize,
}

/// Positions and actuator geometry at one pose.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub link_origins: Vec<Vec2>,
    pub link_angles: Vec<f64>,
    /// Actuator endpoints (A, B).
    pub endpoints: Vec<(Vec2, Vec2)>,
    pub lengths: Vec<f64>,
    /// ∂l_i/∂q, one row per actuator.
    pub dl_dq: Vec<Vec<f64>>,
    /// Foot point in the same coordinates; the origin in stance.
    pub foot: Option<Vec2>,
}

/// Scratch buffers for kinematic evaluation.
#[derive(Debug, Clone)]
struct Kin {
    frames: Frames,
    ja: Vec<Vec2>,
    jb: Vec<Vec2>,
    jfoot: Vec<Vec2>,
    foot: Vec2,
    foot_vel: Vec2,
}

/// Per-integration scratch space. Create one per thread.
#[derive(Debug, Clone)]
pub struct Workspace {
    kin: Kin,
    mass: DMatrix<f64>,
    dmass: Vec<DMatrix<f64>>,
    qtmp: Vec<f64>,
    rhs: DVector<f64>,
}

pub fn build_oracle(desc: &RobotDescription) -> Result<OracleModel> {
    desc.validate()?;
    let skel = Skeleton::new(desc)?;
    let bodies = desc
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
        .collect();
    let mut acts = Vec::new();
    for a in &desc.actuators {
        acts.push(Actuator {
            a: skel.resolve(desc, &a.attach_a)?,
            b: skel.resolve(desc, &a.attach_b)?,
            mass: a.mass,
            stiffness: a.stiffness,
            damping: a.damping,
            rest_length: a.rest_length,
        });
    }
    let foot = match desc.phase {
        Phase::Swing => None,
        Phase::Stance => {
            let f = desc
                .stance_foot
                .as_ref()
                .ok_or_else(|| Error::Compile("stance phase without a foot".into()))?;
            Some(skel.resolve(desc, f)?)
        }
    };
    let model = OracleModel {
        n: skel.dof(),
        skel,
        bodies,
        acts,
        joint_damping: desc.joints.iter().map(|j| j.damping).collect(),
        gravity: desc.gravity,
        foot,
    };
    let q0 = desc.nominal_pose();
    let kin = model.forward_kinematics(&q0);
    if let Some(i) = kin.lengths.iter().position(|&l| !(l > MIN_LENGTH)) {
        return Err(Error::Compile(format!(
            "actuator '{}' has zero length at the nominal pose",
            desc.actuators[i].id
        )));
    }
    Ok(model)
}

impl OracleModel {
    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn n_actuators(&self) -> usize {
        self.acts.len()
    }

    pub fn is_stance(&self) -> bool {
        self.foot.is_some()
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.n;
        Workspace {
            kin: Kin {
                frames: self.skel.frames(),
                ja: vec![Vec2::zeros(); n],
                jb: vec![Vec2::zeros(); n],
                jfoot: vec![Vec2::zeros(); n],
                foot: Vec2::zeros(),
                foot_vel: Vec2::zeros(),
            },
            mass: DMatrix::zeros(n, n),
            dmass: vec![DMatrix::zeros(n, n); n],
            qtmp: vec![0.0; n],
            rhs: DVector::zeros(n),
        }
    }

    fn update(&self, k: &mut Kin, q: &[f64], qd: Option<&[f64]>) {
        match qd {
            Some(qd) => self
                .skel
                .update(&mut k.frames, q, qd, Vec2::zeros(), Vec2::zeros()),
            None => self.skel.update_positions(&mut k.frames, q, Vec2::zeros()),
        }
        if let Some(f) = self.foot {
            k.foot = k.frames.point(f);
            k.frames.jacobian(&self.skel, f, &mut k.jfoot);
            if qd.is_some() {
                k.foot_vel = k.frames.velocity(f);
            }
        }
    }

    #[inline]
    fn point(&self, k: &Kin, p: LinkPoint) -> Vec2 {
        k.frames.point(p) - k.foot
    }

    #[inline]
    fn velocity(&self, k: &Kin, p: LinkPoint) -> Vec2 {
        k.frames.velocity(p) - k.foot_vel
    }

    fn jacobian(&self, k: &Kin, p: LinkPoint, out: &mut [Vec2]) {
        k.frames.jacobian(&self.skel, p, out);
        if self.foot.is_some() {
            for (o, f) in out.iter_mut().zip(&k.jfoot) {
                *o -= f;
            }
        }
    }

    fn mass_matrix_into(&self, k: &mut Kin, q: &[f64], out: &mut DMatrix<f64>) {
        self.update(k, q, None);
        out.fill(0.0);
        let n = self.n;
        let mut ja = std::mem::take(&mut k.ja);
        let mut jb = std::mem::take(&mut k.jb);
        for b in &self.bodies {
            self.jacobian(k, b.com, &mut ja);
            for i in 0..n {
                let wi = self.skel.moves(b.com.link, i);
                for j in i..n {
                    let mut v = b.mass * ja[i].dot(&ja[j]);
                    if wi && self.skel.moves(b.com.link, j) {
                        v += b.inertia;
                    }
                    out[(i, j)] += v;
                }
            }
        }
        for a in &self.acts {
            self.jacobian(k, a.a, &mut ja);
            self.jacobian(k, a.b, &mut jb);
            let (m3, m6) = (a.mass / 3.0, a.mass / 6.0);
            for i in 0..n {
                for j in i..n {
                    out[(i, j)] += m3 * (ja[i].dot(&ja[j]) + jb[i].dot(&jb[j]))
                        + m6 * (ja[i].dot(&jb[j]) + jb[i].dot(&ja[j]));
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        k.ja = ja;
        k.jb = jb;
    }

    /// Joint-space mass matrix.
    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let mut ws = self.workspace();
        let mut m = DMatrix::zeros(self.n, self.n);
        self.mass_matrix_into(&mut ws.kin, q, &mut m);
        m
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Kinematics {
        let mut ws = self.workspace();
        let k = &mut ws.kin;
        self.update(k, q, None);
        let mut endpoints = Vec::new();
        let mut lengths = Vec::new();
        let mut dl_dq = Vec::new();
        let n = self.n;
        let (mut ja, mut jb) = (vec![Vec2::zeros(); n], vec![Vec2::zeros(); n]);
        for a in &self.acts {
            let (pa, pb) = (self.point(k, a.a), self.point(k, a.b));
            let d = pb - pa;
            let l = d.norm();
            self.jacobian(k, a.a, &mut ja);
            self.jacobian(k, a.b, &mut jb);
            let e = if l > MIN_LENGTH { d / l } else { Vec2::zeros() };
            dl_dq.push((0..n).map(|j| e.dot(&(jb[j] - ja[j]))).collect());
            endpoints.push((pa, pb));
            lengths.push(l);
        }
        let nl = self.skel.n_links();
        Kinematics {
            link_origins: (0..nl).map(|i| k.frames.origin[i] - k.foot).collect(),
            link_angles: k.frames.angle.clone(),
            endpoints,
            lengths,
            dl_dq,
            foot: self.foot.map(|f| self.point(k, f)),
        }
    }

    /// Gradient of gravitational plus elastic energy, added into `out`.
    fn potential_gradient(&self, k: &mut Kin, out: &mut [f64]) {
        let g = self.gravity;
        let n = self.n;
        let mut ja = std::mem::take(&mut k.ja);
        let mut jb = std::mem::take(&mut k.jb);
        for b in &self.bodies {
            self.jacobian(k, b.com, &mut ja);
            for j in 0..n {
                out[j] += b.mass * g * ja[j].y;
            }
        }
        for a in &self.acts {
            self.jacobian(k, a.a, &mut ja);
            self.jacobian(k, a.b, &mut jb);
            let d = self.point(k, a.b) - self.point(k, a.a);
            let l = d.norm();
            let e = d / l;
            let tension = a.stiffness * (l - a.rest_length);
            for j in 0..n {
                out[j] += 0.5 * a.mass * g * (ja[j].y + jb[j].y) + tension * e.dot(&(jb[j] - ja[j]));
            }
        }
        k.ja = ja;
        k.jb = jb;
    }

    /// G(q) + ∂Ve/∂q.
    pub fn potential_gradient_at(&self, q: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.update(&mut ws.kin, q, None);
        let mut out = vec![0.0; self.n];
        self.potential_gradient(&mut ws.kin, &mut out);
        out
    }

    /// Actuator and joint-friction generalized forces at the current kinematics.
    fn applied_forces(&self, k: &mut Kin, qd: &[f64], forces: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let mut ja = std::mem::take(&mut k.ja);
        let mut jb = std::mem::take(&mut k.jb);
        let mut res = Ok(());
        for (a, &f) in self.acts.iter().zip(forces) {
            self.jacobian(k, a.a, &mut ja);
            self.jacobian(k, a.b, &mut jb);
            let d = self.point(k, a.b) - self.point(k, a.a);
            let l = d.norm();
            if !(l > MIN_LENGTH) {
                res = Err(Error::Geometry("actuator collapsed to zero length".into()));
                break;
            }
            let e = d / l;
            let mut ldot = 0.0;
            for j in 0..n {
                ldot += e.dot(&(jb[j] - ja[j])) * qd[j];
            }
            let axial = f - a.damping * ldot;
            for j in 0..n {
                out[j] += axial * e.dot(&(jb[j] - ja[j]));
            }
        }
        k.ja = ja;
        k.jb = jb;
        for j in 0..n {
            out[j] -= self.joint_damping[j] * qd[j];
        }
        res
    }

    /// Joint accelerations for joint state (q, q̇) under actuator forces `forces`.
    pub fn accelerations(
        &self,
        ws: &mut Workspace,
        q: &[f64],
        qd: &[f64],
        forces: &[f64],
        qdd: &mut [f64],
    ) -> Result<()> {
        let n = self.n;
        // ∂M/∂q_k by central differences
        for kk in 0..n {
            ws.qtmp.copy_from_slice(q);
            ws.qtmp[kk] = q[kk] + FD_STEP;
            let mut mp = std::mem::replace(&mut ws.dmass[kk], DMatrix::zeros(0, 0));
            self.mass_matrix_into(&mut ws.kin, &ws.qtmp, &mut mp);
            ws.qtmp[kk] = q[kk] - FD_STEP;
            self.mass_matrix_into(&mut ws.kin, &ws.qtmp, &mut ws.mass);
            mp -= &ws.mass;
            mp /= 2.0 * FD_STEP;
            ws.dmass[kk] = mp;
        }
        self.mass_matrix_into(&mut ws.kin, q, &mut ws.mass);

        let rhs = ws.rhs.as_mut_slice();
        rhs.fill(0.0);
        // C_i = Σ_jk (∂_k M_ij − ½ ∂_i M_jk) q̇_j q̇_k
        for i in 0..n {
            let mut c = 0.0;
            for kk in 0..n {
                for j in 0..n {
                    c += (ws.dmass[kk][(i, j)] - 0.5 * ws.dmass[i][(j, kk)]) * qd[j] * qd[kk];
                }
            }
            rhs[i] = -c;
        }
        let mut grad = vec![0.0; n];
        self.potential_gradient(&mut ws.kin, &mut grad);
        for i in 0..n {
            rhs[i] -= grad[i];
        }
        self.update(&mut ws.kin, q, Some(qd));
        self.applied_forces(&mut ws.kin, qd, forces, rhs)?;

        let chol = ws
            .mass
            .clone()
            .cholesky()
            .ok_or(Error::SingularMass(f64::INFINITY))?;
        let l = chol.l_dirty();
        let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
        for i in 0..n {
            dmin = dmin.min(l[(i, i)].abs());
            dmax = dmax.max(l[(i, i)].abs());
        }
        let cond = (dmax / dmin).powi(2);
        if !(cond <= 1e12) {
            return Err(Error::SingularMass(cond));
        }
        let sol = chol.solve(&ws.rhs);
        qdd.copy_from_slice(sol.as_slice());
        if qdd.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(f64::NAN));
        }
        Ok(())
    }

    /// q̈ at state `s` under actuator forces `forces` (N, extensile positive).
    pub fn eom_rhs(&self, s: &JointState, forces: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(&s.q, &s.qdot, forces)?;
        let mut ws = self.workspace();
        let mut qdd = vec![0.0; self.n];
        self.accelerations(&mut ws, &s.q, &s.qdot, forces, &mut qdd)?;
        Ok(qdd)
    }

    fn check_dims(&self, q: &[f64], qd: &[f64], forces: &[f64]) -> Result<()> {
        for (what, got, expected) in [
            ("q", q.len(), self.n),
            ("qdot", qd.len(), self.n),
            ("actuator forces", forces.len(), self.acts.len()),
        ] {
            if got != expected {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    /// Actuator lengths and elongation rates.
    fn lengths_and_rates(&self, k: &Kin, l: &mut Vec<f64>, ld: &mut Vec<f64>) {
        l.clear();
        ld.clear();
        for a in &self.acts {
            let d = self.point(k, a.b) - self.point(k, a.a);
            let v = self.velocity(k, a.b) - self.velocity(k, a.a);
            let len = d.norm();
            l.push(len);
            ld.push(if len > MIN_LENGTH { d.dot(&v) / len } else { 0.0 });
        }
    }

    fn energies(&self, k: &Kin, l: &[f64]) -> Energies {
        let g = self.gravity;
        let mut e = Energies::default();
        for b in &self.bodies {
            let moving = self.foot.is_some() || b.com.link != self.skel.root();
            if moving {
                let v = self.velocity(k, b.com);
                let w = k.frames.omega[b.com.link];
                e.kinetic += 0.5 * b.mass * v.norm_squared() + 0.5 * b.inertia * w * w;
            }
            e.gravity += b.mass * g * self.point(k, b.com).y;
        }
        for (a, &len) in self.acts.iter().zip(l) {
            let (ra, rb) = (self.point(k, a.a), self.point(k, a.b));
            let (va, vb) = (self.velocity(k, a.a), self.velocity(k, a.b));
            e.kinetic += equivalence::kinetic_continuous(a.mass, va, vb);
            e.gravity += equivalence::grav_pe_continuous(a.mass, ra, rb, g);
            e.elastic += equivalence::elastic_pe(a.stiffness, len, a.rest_length);
        }
        e
    }

    /// Kinetic, gravitational and elastic energy.
    pub fn total_energy(&self, s: &JointState) -> Energies {
        let mut ws = self.workspace();
        self.update(&mut ws.kin, &s.q, Some(&s.qdot));
        let (mut l, mut ld) = (Vec::new(), Vec::new());
        self.lengths_and_rates(&ws.kin, &mut l, &mut ld);
        self.energies(&ws.kin, &l)
    }

    fn row(&self, ws: &mut Workspace, t: f64, q: &[f64], qd: &[f64]) -> TrajRow {
        self.update(&mut ws.kin, q, Some(qd));
        let (mut l, mut ld) = (Vec::new(), Vec::new());
        self.lengths_and_rates(&ws.kin, &mut l, &mut ld);
        let energy = self.energies(&ws.kin, &l);
        TrajRow {
            t,
            q: q.to_vec(),
            qd: qd.to_vec(),
            l,
            ld,
            energy,
        }
    }

    /// Integrate from `s0` to `t_end`, sampling every `dt_out`.
    pub fn integrate(
        &self,
        s0: &JointState,
        forces: &ForceSchedule,
        t_end: f64,
        cfg: &IntegratorConfig,
        dt_out: f64,
    ) -> Result<Trajectory> {
        let mut tr = Trajectory::default();
        self.integrate_with(s0, forces, t_end, cfg, dt_out, |row| {
            tr.rows.push(row);
            true
        })?;
        Ok(tr)
    }

    /// Like [`integrate`](Self::integrate) but hands each row to `sink`;
    /// integration stops early when `sink` returns false.
    pub fn integrate_with(
        &self,
        s0: &JointState,
        forces: &ForceSchedule,
        t_end: f64,
        cfg: &IntegratorConfig,
        dt_out: f64,
        mut sink: impl FnMut(TrajRow) -> bool,
    ) -> Result<()> {
        cfg.validate()?;
        if forces.width() != self.acts.len() {
            return Err(Error::Dimension {
                what: "force schedule channels",
                expected: self.acts.len(),
                got: forces.width(),
            });
        }
        self.check_dims(&s0.q, &s0.qdot, &vec![0.0; self.acts.len()])?;
        if !(dt_out > 0.0) {
            return Err(Error::Validation("output interval must be positive".into()));
        }
        let n = self.n;
        let mut ws = self.workspace();
        let mut y: Vec<f64> = s0.q.iter().chain(&s0.qdot).copied().collect();
        let mut stepper = Dopri5::new(2 * n, *cfg);
        let t0 = s0.t;
        let n_out = ((t_end - t0) / dt_out + 1e-9).floor() as usize;

        if !sink(self.row(&mut ws, t0, &y[..n], &y[n..])) {
            return Ok(());
        }
        let mut t = t0;
        let mut u = forces.value_at(t0);
        let mut rhs_ws = self.workspace();
        for kstep in 1..=n_out {
            let target = t0 + kstep as f64 * dt_out;
            let mut stops = forces.breakpoints_in(t, target);
            stops.push(target);
            for stop in stops {
                let u_now = forces.value_at(t);
                if u_now != u {
                    u = u_now;
                    stepper.reset();
                }
                let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
                    let (q, qd) = y.split_at(n);
                    dy[..n].copy_from_slice(qd);
                    self.accelerations(&mut rhs_ws, q, qd, &u, &mut dy[n..])
                };
                stepper.advance(&mut f, &mut t, &mut y, stop)?;
            }
            t = target;
            if !sink(self.row(&mut ws, t, &y[..n], &y[n..])) {
                return Ok(());
            }
        }
        Ok(())
    }

    /// Actuator forces that hold pose `q` in static equilibrium.
    pub fn balancing_force(&self, q: &[f64]) -> Result<Vec<f64>> {
        let m = self.acts.len();
        if m != self.n {
            return Err(Error::Dimension {
                what: "actuators (balancing needs one per joint)",
                expected: self.n,
                got: m,
            });
        }
        if q.len() != self.n {
            return Err(Error::Dimension {
                what: "q",
                expected: self.n,
                got: q.len(),
            });
        }
        let kin = self.forward_kinematics(q);
        if kin.lengths.iter().any(|&l| !(l > MIN_LENGTH)) {
            return Err(Error::SingularActuation);
        }
        // Σ_i F_i ∂l_i/∂q = ∇(Vg + Ve)
        let a = DMatrix::from_fn(self.n, m, |r, c| kin.dl_dq[c][r]);
        let b = DVector::from_vec(self.potential_gradient_at(q));
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax.max(1e-300)) {
            return Err(Error::SingularActuation);
        }
        let f = a.lu().solve(&b).ok_or(Error::SingularActuation)?;
        Ok(f.iter().copied().collect())
    }

    /// Actuator lengths at pose `q`.
    pub fn actuator_lengths(&self, q: &[f64]) -> Vec<f64> {
        self.forward_kinematics(q).lengths
    }
}
