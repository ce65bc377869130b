use lumpsim::equivalence::equivalize;
use lumpsim::leg::default_leg;
use lumpsim::mjcf::*;
use lumpsim::Error;

const GOLDEN: &str = include_str!("golden/leg2d.xml");

#[test]
fn default_leg_matches_the_golden_file() {
    let xml = emit_mjcf(&default_leg()).unwrap();
    golden_check(&xml, GOLDEN).unwrap();
}

#[test]
fn loop_closures_and_equalities_are_present() {
    let xml = emit_mjcf(&default_leg()).unwrap();
    let doc = roxmltree::Document::parse(&xml).unwrap();
    let eq = doc.descendants().find(|n| n.has_tag_name("equality")).unwrap();
    let tags: Vec<_> = eq.children().filter(|n| n.is_element()).map(|n| n.tag_name().name()).collect();
    assert_eq!(tags.iter().filter(|t| **t == "connect").count(), 2);
    assert_eq!(tags.iter().filter(|t| **t == "joint").count(), 2);
}

#[test]
fn assemblies_read_back() {
    let d = default_leg();
    let xml = emit_mjcf(&d).unwrap();
    let parsed = parse_assemblies(&xml).unwrap();
    assert_eq!(parsed.len(), d.actuators.len());
    for (p, a) in parsed.iter().zip(&d.actuators) {
        let asm = equivalize(a);
        assert!(p.prefix.ends_with(&a.id));
        let total: f64 = p.masses.iter().sum();
        assert!((total - a.mass).abs() < 1e-8);
        assert!((p.masses[1] / p.masses[0] - 4.0).abs() < 1e-6);
        assert!((p.masses[2] / p.masses[0] - 1.0).abs() < 1e-6);
        for s in 0..2 {
            assert!((p.segment_stiffness[s] - 2.0 * a.stiffness).abs() < 1e-6);
            assert!((p.segment_damping[s] - asm.segment_damping).abs() < 1e-6);
            assert!((p.segment_rest_length[s] - a.rest_length / 2.0).abs() < 1e-9);
            assert!((p.gains[s] - a.area).abs() < 1e-12);
        }
    }
    let maa = &parsed[0];
    assert_eq!(maa.segment_stiffness, [735.6, 735.6]);
    assert_eq!(maa.segment_damping, [21.6, 21.6]);
    assert_eq!(maa.segment_rest_length, [0.0872, 0.0872]);
}

#[test]
fn perturbed_stiffness_is_named_in_the_diff() {
    let mut d = default_leg();
    d.actuators[0].stiffness *= 1.01;
    let xml = emit_mjcf(&d).unwrap();
    match golden_check(&xml, GOLDEN) {
        Err(Error::Mismatch(diff)) => {
            assert!(diff.contains("@stiffness="), "{diff}");
            assert!(diff.contains("muscleMAA"), "{diff}");
        }
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn formatting_only_changes_pass() {
    let xml = emit_mjcf(&default_leg()).unwrap();
    let reflowed = xml.replace("\n", "\n\n   ").replace("\" ", "\"   ");
    golden_check(&reflowed, GOLDEN).unwrap();
}

#[test]
fn output_is_deterministic_and_well_formed() {
    let a = emit_mjcf(&default_leg()).unwrap();
    let b = emit_mjcf(&default_leg()).unwrap();
    assert_eq!(a, b);
    assert!(canonicalize(&a).unwrap().len() > 50);
    assert!(matches!(canonicalize("<a><b></a>"), Err(Error::Schema(_))));
}

#[test]
fn colliding_names_are_rejected() {
    let mut d = default_leg();
    d.links[1].id = "muscleMAA_uLink".into();
    for j in &mut d.joints {
        if j.parent == default_leg().links[1].id {
            j.parent = d.links[1].id.clone();
        }
        if j.child == default_leg().links[1].id {
            j.child = d.links[1].id.clone();
        }
    }
    for a in &mut d.actuators {
        for at in [&mut a.attach_a, &mut a.attach_b] {
            if at.link == default_leg().links[1].id {
                at.link = d.links[1].id.clone();
            }
        }
    }
    assert!(emit_mjcf(&d).is_err());
}
