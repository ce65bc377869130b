//! Planar kinematic tree compiled from a [`RobotDescription`].
//!
//! Every link carries a frame (origin, angle). The root frame is the world
//! frame unless a translation is supplied. Joint `j` places its child at angle
//! `parent + offset_j + q_j`, and the parent and child anchors coincide.

use crate::error::{Error, Result};
use crate::math::{perp, rotate, vec2, Vec2};
use crate::model::{Attachment, RobotDescription};

#[derive(Debug, Clone)]
struct JointGeom {
    parent: usize,
    child: usize,
    parent_anchor: Vec2,
    child_anchor: Vec2,
    offset: f64,
}

/// A point fixed on a link, resolved to indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPoint {
    pub link: usize,
    pub local: Vec2,
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    joints: Vec<JointGeom>,
    /// Joint indices in an order where every parent frame is computed first.
    order: Vec<usize>,
    root: usize,
    /// `moves[link][joint]` is true when the joint lies on the path from the root.
    moves: Vec<Vec<bool>>,
    n_links: usize,
}

/// Link frames, rates and velocity-product accelerations at one state.
#[derive(Debug, Clone)]
pub struct Frames {
    pub angle: Vec<f64>,
    pub origin: Vec<Vec2>,
    pub omega: Vec<f64>,
    pub vel: Vec<Vec2>,
    /// Acceleration of each origin with all second derivatives of q set to zero.
    pub acc_q: Vec<Vec2>,
    /// World position of each joint axis.
    pub joint_pos: Vec<Vec2>,
}

impl Skeleton {
    pub fn new(desc: &RobotDescription) -> Result<Self> {
        let n_links = desc.links.len();
        let idx = |id: &str| {
            desc.link_index(id)
                .ok_or_else(|| Error::Compile(format!("unknown link '{id}'")))
        };
        let mut joints = Vec::with_capacity(desc.joints.len());
        for j in &desc.joints {
            joints.push(JointGeom {
                parent: idx(&j.parent)?,
                child: idx(&j.child)?,
                parent_anchor: vec2(j.parent_anchor),
                child_anchor: vec2(j.child_anchor),
                offset: j.offset,
            });
        }
        let root = desc.root_link();

        let mut order = Vec::with_capacity(joints.len());
        let mut placed = vec![false; n_links];
        placed[root] = true;
        while order.len() < joints.len() {
            let before = order.len();
            for (k, j) in joints.iter().enumerate() {
                if placed[j.parent] && !placed[j.child] {
                    placed[j.child] = true;
                    order.push(k);
                }
            }
            if order.len() == before {
                return Err(Error::Compile("skeleton is not a connected tree".into()));
            }
        }
        if placed.iter().any(|p| !p) {
            return Err(Error::Compile("some links are not reachable from the root".into()));
        }

        let mut moves = vec![vec![false; joints.len()]; n_links];
        for &k in &order {
            let j = &joints[k];
            let mut m = moves[j.parent].clone();
            m[k] = true;
            moves[j.child] = m;
        }
        Ok(Self {
            joints,
            order,
            root,
            moves,
            n_links,
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn moves(&self, link: usize, joint: usize) -> bool {
        self.moves[link][joint]
    }

    pub fn resolve(&self, desc: &RobotDescription, a: &Attachment) -> Result<LinkPoint> {
        let link = desc
            .link_index(&a.link)
            .ok_or_else(|| Error::Compile(format!("unknown link '{}'", a.link)))?;
        Ok(LinkPoint {
            link,
            local: vec2(a.point),
        })
    }

    pub fn frames(&self) -> Frames {
        let n = self.n_links;
        Frames {
            angle: vec![0.0; n],
            origin: vec![Vec2::zeros(); n],
            omega: vec![0.0; n],
            vel: vec![Vec2::zeros(); n],
            acc_q: vec![Vec2::zeros(); n],
            joint_pos: vec![Vec2::zeros(); self.joints.len()],
        }
    }

    /// Fill `f` for joint angles `q`, rates `qd`, and root translation `base`.
    pub fn update(&self, f: &mut Frames, q: &[f64], qd: &[f64], base: Vec2, base_vel: Vec2) {
        let r = self.root;
        f.angle[r] = 0.0;
        f.origin[r] = base;
        f.omega[r] = 0.0;
        f.vel[r] = base_vel;
        f.acc_q[r] = Vec2::zeros();
        for &k in &self.order {
            let j = &self.joints[k];
            let (p, c) = (j.parent, j.child);
            let pa = rotate(f.angle[p], j.parent_anchor);
            let jp = f.origin[p] + pa;
            let jv = f.vel[p] + f.omega[p] * perp(pa);
            let ja = f.acc_q[p] - f.omega[p] * f.omega[p] * pa;
            let angle = f.angle[p] + j.offset + q[k];
            let omega = f.omega[p] + qd[k];
            let ca = rotate(angle, j.child_anchor);
            f.joint_pos[k] = jp;
            f.angle[c] = angle;
            f.omega[c] = omega;
            f.origin[c] = jp - ca;
            f.vel[c] = jv - omega * perp(ca);
            f.acc_q[c] = ja + omega * omega * ca;
        }
    }

    /// Positions only.
    pub fn update_positions(&self, f: &mut Frames, q: &[f64], base: Vec2) {
        let r = self.root;
        f.angle[r] = 0.0;
        f.origin[r] = base;
        for &k in &self.order {
            let j = &self.joints[k];
            let (p, c) = (j.parent, j.child);
            let jp = f.origin[p] + rotate(f.angle[p], j.parent_anchor);
            let angle = f.angle[p] + j.offset + q[k];
            f.joint_pos[k] = jp;
            f.angle[c] = angle;
            f.origin[c] = jp - rotate(angle, j.child_anchor);
        }
    }
}

impl Frames {
    #[inline]
    pub fn point(&self, p: LinkPoint) -> Vec2 {
        self.origin[p.link] + rotate(self.angle[p.link], p.local)
    }

    #[inline]
    pub fn velocity(&self, p: LinkPoint) -> Vec2 {
        let r = rotate(self.angle[p.link], p.local);
        self.vel[p.link] + self.omega[p.link] * perp(r)
    }

    /// Velocity-product part of the point's acceleration.
    #[inline]
    pub fn acc_q(&self, p: LinkPoint) -> Vec2 {
        let r = rotate(self.angle[p.link], p.local);
        let w = self.omega[p.link];
        self.acc_q[p.link] - w * w * r
    }

    /// Column `j` of the point's Jacobian with respect to the joint angles.
    #[inline]
    pub fn jacobian_col(&self, skel: &Skeleton, p: LinkPoint, world: Vec2, j: usize) -> Vec2 {
        if skel.moves[p.link][j] {
            perp(world - self.joint_pos[j])
        } else {
            Vec2::zeros()
        }
    }

    /// Point Jacobian with respect to the joint angles, one column per joint.
    pub fn jacobian(&self, skel: &Skeleton, p: LinkPoint, out: &mut [Vec2]) {
        let world = self.point(p);
        for (j, col) in out.iter_mut().enumerate() {
            *col = self.jacobian_col(skel, p, world, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Joint, Link};

    fn two_link() -> RobotDescription {
        let link = |id: &str| Link {
            id: id.into(),
            mass: 1.0,
            com: [0.5, 0.0],
            rod_length: 1.0,
            inertia_zz: 0.1,
        };
        let joint = |id: &str, p: &str, c: &str, pa: [f64; 2]| Joint {
            id: id.into(),
            parent: p.into(),
            child: c.into(),
            parent_anchor: pa,
            child_anchor: [0.0, 0.0],
            limits: [-3.0, 3.0],
            offset: 0.0,
            damping: 0.0,
        };
        RobotDescription {
            links: vec![link("c"), link("a"), link("b")],
            joints: vec![joint("j2", "a", "b", [1.0, 0.0]), joint("j1", "c", "a", [0.0, 0.0])],
            actuators: vec![],
            gravity: 9.81,
            phase: Default::default(),
            stance_foot: None,
            nominal_pose: None,
        }
    }

    #[test]
    fn textbook_two_link_tip() {
        let d = two_link();
        let s = Skeleton::new(&d).unwrap();
        let mut f = s.frames();
        // joint order in the file is (j2, j1)
        let (q1, q2) = (0.3, -0.7);
        s.update_positions(&mut f, &[q2, q1], Vec2::zeros());
        let tip = f.point(LinkPoint {
            link: 2,
            local: Vec2::new(1.0, 0.0),
        });
        let expect = Vec2::new(q1.cos() + (q1 + q2).cos(), q1.sin() + (q1 + q2).sin());
        assert!((tip - expect).norm() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = two_link();
        let s = Skeleton::new(&d).unwrap();
        let p = LinkPoint {
            link: 2,
            local: Vec2::new(0.4, 0.2),
        };
        let q = [0.4, 1.1];
        let mut f = s.frames();
        s.update_positions(&mut f, &q, Vec2::zeros());
        let mut jac = [Vec2::zeros(); 2];
        f.jacobian(&s, p, &mut jac);
        let h = 1e-6;
        for j in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            s.update_positions(&mut f, &qp, Vec2::zeros());
            let a = f.point(p);
            s.update_positions(&mut f, &qm, Vec2::zeros());
            let b = f.point(p);
            assert!(((a - b) / (2.0 * h) - jac[j]).norm() < 1e-8);
        }
    }

    #[test]
    fn quadratic_acceleration_matches_second_difference() {
        let d = two_link();
        let s = Skeleton::new(&d).unwrap();
        let p = LinkPoint {
            link: 2,
            local: Vec2::new(0.4, 0.2),
        };
        let (q, qd) = ([0.4, 1.1], [0.7, -1.3]);
        let mut f = s.frames();
        s.update(&mut f, &q, &qd, Vec2::zeros(), Vec2::zeros());
        let a = f.acc_q(p);
        // constant-rate motion: q(t) = q + t·qd has zero q̈
        let h = 1e-4;
        let at = |t: f64, f: &mut Frames| {
            let qt = [q[0] + t * qd[0], q[1] + t * qd[1]];
            s.update_positions(f, &qt, Vec2::zeros());
            f.point(p)
        };
        let fd = (at(h, &mut f) - 2.0 * at(0.0, &mut f) + at(-h, &mut f)) / (h * h);
        assert!((fd - a).norm() < 1e-5);
    }
}
