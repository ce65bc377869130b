//! MJCF emission of a description with every actuator realized as a 3-2-1
//! assembly, plus a canonical comparison for golden files.
//!
//! The plane of motion is MuJoCo's x-z plane; planar (x, y) maps to (x, 0, y)
//! and hinges turn about −y so positive angles are counterclockwise. Floats
//! are written in shortest round-trip form; comparison canonicalizes them to
//! nine significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::equivalence::{equivalize, MIN_LENGTH};
use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::model::RobotDescription;
use crate::skeleton::Skeleton;

/// `%.9g`.
pub fn fmt_g9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

fn nums(vs: &[f64]) -> String {
    vs.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ")
}

fn pos3(p: Vec2) -> String {
    nums(&[p.x, 0.0, p.y])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Names(HashSet<String>);

impl Names {
    fn claim(&mut self, n: String) -> Result<String> {
        if !self.0.insert(n.clone()) {
            return Err(Error::NameCollision(n));
        }
        Ok(n)
    }
}

const RADIUS: f64 = 0.005;
const HINGE_AXIS: &str = "0 -1 0";

/// MJCF text for `desc`. The tree is laid out at the all-zero joint
/// configuration, which is MuJoCo's reference pose.
pub fn emit_mjcf(desc: &RobotDescription) -> Result<String> {
    desc.validate()?;
    let skel = Skeleton::new(desc)?;
    let mut frames = skel.frames();
    skel.update_positions(&mut frames, &vec![0.0; desc.dof()], Vec2::zeros());

    let mut names = Names(HashSet::new());
    for l in &desc.links {
        names.claim(l.id.clone())?;
    }
    for j in &desc.joints {
        names.claim(j.id.clone())?;
    }

    // per link: joints whose parent it is
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); desc.links.len()];
    let mut parent_joint: Vec<Option<usize>> = vec![None; desc.links.len()];
    for (k, j) in desc.joints.iter().enumerate() {
        let p = desc.link_index(&j.parent).expect("validated");
        let c = desc.link_index(&j.child).expect("validated");
        children[p].push(k);
        parent_joint[c] = Some(k);
    }

    struct Muscle {
        prefix: String,
        a_local: Vec2,
        mount: f64,
        half: f64,
        masses: [f64; 3],
        stiffness: f64,
        damping: f64,
        springref: f64,
        area: f64,
    }
    let mut muscles: Vec<Vec<Muscle>> = (0..desc.links.len()).map(|_| Vec::new()).collect();
    let mut all = Vec::new();
    for a in &desc.actuators {
        let pa = skel.resolve(desc, &a.attach_a)?;
        let pb = skel.resolve(desc, &a.attach_b)?;
        let d = frames.point(pb) - frames.point(pa);
        let l = d.norm();
        if !(l > MIN_LENGTH) {
            return Err(Error::Geometry(format!(
                "actuator '{}' has coincident endpoints at the reference pose",
                a.id
            )));
        }
        let prefix = format!("muscle{}", a.id);
        for s in [
            "_uLink",
            "_mLink",
            "_lLink",
            "_uRotJoint",
            "_mSlideJoint",
            "_lSlideJoint",
            "_mForce",
            "_lForce",
            "_uGeom",
            "_mGeom",
            "_lGeom",
            "_equal",
            "_close",
        ] {
            names.claim(format!("{prefix}{s}"))?;
        }
        let asm = equivalize(a);
        all.push((prefix.clone(), a.attach_b.link.clone()));
        muscles[pa.link].push(Muscle {
            prefix,
            a_local: pa.local,
            mount: d.y.atan2(d.x) - frames.angle[pa.link],
            half: 0.5 * l,
            masses: asm.masses,
            stiffness: asm.segment_stiffness,
            damping: asm.segment_damping,
            springref: asm.segment_rest_length,
            area: a.area,
        });
    }

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "<mujoco model=\"lumpsim\">");
    let _ = writeln!(
        w,
        "  <!-- Each muscleX assembly: masses m/6, 2m/3, m/6 on uLink, mLink, lLink; \
slide joints carry stiffness 2k, damping 2c, springref l0/2. \
Drive muscleX_mForce and muscleX_lForce with the same control, a pressure in Pa; \
their gain is the actuator area. -->"
    );
    let _ = writeln!(w, "  <compiler angle=\"radian\"/>");
    let _ = writeln!(
        w,
        "  <option timestep=\"0.005\" gravity=\"0 0 {}\"/>",
        num(-desc.gravity)
    );
    let _ = writeln!(w, "  <worldbody>");

    fn body(
        w: &mut String,
        desc: &RobotDescription,
        link: usize,
        depth: usize,
        children: &[Vec<usize>],
        parent_joint: &[Option<usize>],
        muscles: &[Vec<Muscle>],
    ) {
        let ind = "  ".repeat(depth);
        let l = &desc.links[link];
        let (pos, angle) = match parent_joint[link] {
            Some(k) => {
                let j = &desc.joints[k];
                let ca = crate::math::rotate(j.offset, vec_of(j.child_anchor));
                (vec_of(j.parent_anchor) - ca, j.offset)
            }
            None => (Vec2::zeros(), 0.0),
        };
        let _ = writeln!(
            w,
            "{ind}<body name=\"{}\" pos=\"{}\" axisangle=\"{HINGE_AXIS} {}\">",
            escape(&l.id),
            pos3(pos),
            num(angle)
        );
        let _ = writeln!(
            w,
            "{ind}  <inertial pos=\"{}\" mass=\"{}\" diaginertia=\"{}\"/>",
            pos3(vec_of(l.com)),
            num(l.mass),
            nums(&[l.inertia_zz; 3])
        );
        if let Some(k) = parent_joint[link] {
            let j = &desc.joints[k];
            let _ = writeln!(
                w,
                "{ind}  <joint name=\"{}\" type=\"hinge\" pos=\"{}\" axis=\"{HINGE_AXIS}\" limited=\"true\" range=\"{}\" damping=\"{}\"/>",
                escape(&j.id),
                pos3(vec_of(j.child_anchor)),
                nums(&j.limits),
                num(j.damping)
            );
        }
        let _ = writeln!(
            w,
            "{ind}  <geom type=\"capsule\" fromto=\"0 0 0 {}\" size=\"{}\" mass=\"0\" contype=\"0\" conaffinity=\"0\"/>",
            nums(&[l.rod_length, 0.0, 0.0]),
            num(RADIUS)
        );
        for &k in &children[link] {
            let c = desc.link_index(&desc.joints[k].child).expect("validated");
            body(w, desc, c, depth + 1, children, parent_joint, muscles);
        }
        for m in &muscles[link] {
            let p = &m.prefix;
            let seg = |w: &mut String, d: usize, name: &str, mass: f64| {
                let ind = "  ".repeat(d);
                let _ = writeln!(
                    w,
                    "{ind}<geom name=\"{p}_{name}Geom\" type=\"capsule\" size=\"{} {}\" mass=\"{}\" contype=\"0\" conaffinity=\"0\"/>",
                    num(RADIUS),
                    num(RADIUS),
                    num(mass)
                );
            };
            let slide = |w: &mut String, d: usize, name: &str| {
                let ind = "  ".repeat(d);
                let _ = writeln!(
                    w,
                    "{ind}<joint name=\"{p}_{name}SlideJoint\" type=\"slide\" axis=\"1 0 0\" ref=\"{}\" stiffness=\"{}\" damping=\"{}\" springref=\"{}\"/>",
                    num(m.half),
                    num(m.stiffness),
                    num(m.damping),
                    num(m.springref)
                );
            };
            let _ = writeln!(
                w,
                "{ind}  <body name=\"{p}_uLink\" pos=\"{}\" axisangle=\"{HINGE_AXIS} {}\">",
                pos3(m.a_local),
                num(m.mount)
            );
            let _ = writeln!(
                w,
                "{ind}    <joint name=\"{p}_uRotJoint\" type=\"hinge\" axis=\"{HINGE_AXIS}\" limited=\"false\"/>"
            );
            seg(w, depth + 2, "u", m.masses[0]);
            let _ = writeln!(w, "{ind}    <body name=\"{p}_mLink\" pos=\"{}\">", nums(&[m.half, 0.0, 0.0]));
            slide(w, depth + 3, "m");
            seg(w, depth + 3, "m", m.masses[1]);
            let _ = writeln!(w, "{ind}      <body name=\"{p}_lLink\" pos=\"{}\">", nums(&[m.half, 0.0, 0.0]));
            slide(w, depth + 4, "l");
            seg(w, depth + 4, "l", m.masses[2]);
            let _ = writeln!(w, "{ind}      </body>");
            let _ = writeln!(w, "{ind}    </body>");
            let _ = writeln!(w, "{ind}  </body>");
        }
        let _ = writeln!(w, "{ind}</body>");
    }
    body(w, desc, desc.root_link(), 2, &children, &parent_joint, &muscles);
    let _ = writeln!(w, "  </worldbody>");

    let _ = writeln!(w, "  <equality>");
    for (p, b_link) in &all {
        let _ = writeln!(
            w,
            "    <joint name=\"{p}_equal\" joint1=\"{p}_mSlideJoint\" joint2=\"{p}_lSlideJoint\" polycoef=\"0 1 0 0 0\"/>"
        );
        let _ = writeln!(
            w,
            "    <connect name=\"{p}_close\" body1=\"{p}_lLink\" body2=\"{}\" anchor=\"0 0 0\"/>",
            escape(b_link)
        );
    }
    let _ = writeln!(w, "  </equality>");

    let _ = writeln!(w, "  <actuator>");
    for ms in &muscles {
        for m in ms {
            let p = &m.prefix;
            for s in ["m", "l"] {
                let _ = writeln!(
                    w,
                    "    <general name=\"{p}_{s}Force\" joint=\"{p}_{s}SlideJoint\" gainprm=\"{}\"/>",
                    num(m.area)
                );
            }
        }
    }
    let _ = writeln!(w, "  </actuator>");
    let _ = writeln!(w, "</mujoco>");
    Ok(out)
}

fn vec_of(p: [f64; 2]) -> Vec2 {
    Vec2::new(p[0], p[1])
}

fn canon_value(v: &str) -> String {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if !parts.is_empty() {
        if let Ok(xs) = parts.iter().map(|p| p.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>() {
            return xs.iter().map(|&x| fmt_g9(x)).collect::<Vec<_>>().join(" ");
        }
    }
    parts.join(" ")
}

/// One line per element and attribute, with attributes sorted, numbers at
/// nine significant digits and whitespace collapsed.
pub fn canonicalize(xml: &str) -> Result<Vec<String>> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Schema(format!("xml: {e}")))?;
    let mut lines = Vec::new();
    fn walk(n: roxmltree::Node, path: &str, lines: &mut Vec<String>) {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for c in n.children() {
            if c.is_element() {
                let tag = c.tag_name().name().to_string();
                let idx = counts.entry(tag.clone()).or_insert(0);
                let label = match c.attribute("name") {
                    Some(nm) => format!("{tag}[{nm}]"),
                    None => format!("{tag}#{idx}"),
                };
                *idx += 1;
                let p = format!("{path}/{label}");
                lines.push(p.clone());
                let mut attrs: Vec<_> = c.attributes().map(|a| (a.name(), a.value())).collect();
                attrs.sort();
                for (k, v) in attrs {
                    lines.push(format!("{p}@{k}={}", canon_value(v)));
                }
                walk(c, &p, lines);
            } else if c.is_text() || c.is_comment() {
                let t = c.text().unwrap_or("").split_whitespace().collect::<Vec<_>>().join(" ");
                if !t.is_empty() {
                    let kind = if c.is_comment() { "comment" } else { "text" };
                    lines.push(format!("{path}#{kind}={t}"));
                }
            }
        }
    }
    walk(doc.root(), "", &mut lines);
    Ok(lines)
}

/// Ok when `doc` and `golden` agree after canonicalization; otherwise a
/// [`Error::Mismatch`] listing the differing lines.
pub fn golden_check(doc: &str, golden: &str) -> Result<()> {
    let a = canonicalize(doc)?;
    let b = canonicalize(golden)?;
    if a == b {
        return Ok(());
    }
    let sa: HashSet<&String> = a.iter().collect();
    let sb: HashSet<&String> = b.iter().collect();
    let mut diff = String::new();
    for l in b.iter().filter(|l| !sa.contains(l)).take(20) {
        let _ = writeln!(diff, "- {l}");
    }
    for l in a.iter().filter(|l| !sb.contains(l)).take(20) {
        let _ = writeln!(diff, "+ {l}");
    }
    if diff.is_empty() {
        diff.push_str("element order differs\n");
    }
    Err(Error::Mismatch(diff))
}

/// Assembly parameters read back from emitted MJCF.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAssembly {
    pub prefix: String,
    pub masses: [f64; 3],
    pub segment_stiffness: [f64; 2],
    pub segment_damping: [f64; 2],
    pub segment_rest_length: [f64; 2],
    pub gains: [f64; 2],
}

pub fn parse_assemblies(xml: &str) -> Result<Vec<ParsedAssembly>> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Schema(format!("xml: {e}")))?;
    let by_name = |name: &str| {
        doc.descendants()
            .find(|n| n.attribute("name") == Some(name))
            .ok_or_else(|| Error::Schema(format!("missing element '{name}'")))
    };
    let attr = |n: roxmltree::Node, a: &str| -> Result<f64> {
        n.attribute(a)
            .ok_or_else(|| Error::Schema(format!("missing attribute '{a}'")))?
            .parse::<f64>()
            .map_err(|e| Error::Schema(e.to_string()))
    };
    let mut out = Vec::new();
    for n in doc.descendants().filter(|n| n.has_tag_name("body")) {
        let Some(prefix) = n.attribute("name").and_then(|s| s.strip_suffix("_uLink")) else {
            continue;
        };
        let mut masses = [0.0; 3];
        for (i, s) in ["u", "m", "l"].iter().enumerate() {
            masses[i] = attr(by_name(&format!("{prefix}_{s}Geom"))?, "mass")?;
        }
        let mut k = [0.0; 2];
        let mut c = [0.0; 2];
        let mut r = [0.0; 2];
        let mut g = [0.0; 2];
        for (i, s) in ["m", "l"].iter().enumerate() {
            let j = by_name(&format!("{prefix}_{s}SlideJoint"))?;
            k[i] = attr(j, "stiffness")?;
            c[i] = attr(j, "damping")?;
            r[i] = attr(j, "springref")?;
            g[i] = attr(by_name(&format!("{prefix}_{s}Force"))?, "gainprm")?;
        }
        out.push(ParsedAssembly {
            prefix: prefix.to_string(),
            masses,
            segment_stiffness: k,
            segment_damping: c,
            segment_rest_length: r,
            gains: g,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_formatting() {
        assert_eq!(fmt_g9(735.6), "735.6");
        assert_eq!(fmt_g9(0.0872), "0.0872");
        assert_eq!(fmt_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_g9(6.54e-4), "0.000654");
        assert_eq!(fmt_g9(1.5e-5), "1.5e-05");
        assert_eq!(fmt_g9(123456789.0), "123456789");
        assert_eq!(fmt_g9(1234567890.0), "1.23456789e+09");
        assert_eq!(fmt_g9(-2.0), "-2");
        assert_eq!(fmt_g9(0.1865 / 6.0), "0.0310833333");
    }

    #[test]
    fn canonical_ignores_whitespace_and_attr_order() {
        let a = r#"<a><b x="1.0" y="2"/></a>"#;
        let b = "<a>\n   <b  y=\"2.000000000001\"   x=\"1\" />\n</a>";
        assert_eq!(canonicalize(a).unwrap(), canonicalize(b).unwrap());
        let c = r#"<a><b x="1.1" y="2"/></a>"#;
        let e = golden_check(c, a).unwrap_err().to_string();
        assert!(e.contains("@x=1.1"), "{e}");
    }
}
