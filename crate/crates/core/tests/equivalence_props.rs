use approx::assert_relative_eq;
use proptest::prelude::*;

use lumpsim::equivalence::*;
use lumpsim::leg::default_leg;
use lumpsim::math::Vec2;

/// Composite midpoint rule over `n` panels of f(ξ), ξ ∈ [0, 1].
fn integrate01(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / n as f64;
    (0..n).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// ½ρ|v|² integrated along the actuator, v linear between the ends.
fn kinetic_by_quadrature(m: f64, va: Vec2, vb: Vec2) -> f64 {
    integrate01(20_000, |x| 0.5 * m * ((1.0 - x) * va + x * vb).norm_squared())
}

fn grav_by_quadrature(m: f64, ra: Vec2, rb: Vec2, g: f64) -> f64 {
    integrate01(20_000, |x| m * g * ((1.0 - x) * ra.y + x * rb.y))
}

#[test]
fn continuous_formulas_match_quadrature() {
    let v = |x, y| Vec2::new(x, y);
    assert_relative_eq!(grav_pe_continuous(0.6, v(0.0, 0.0), v(0.0, 1.0), 9.81), 2.943, epsilon = 1e-12);
    assert_relative_eq!(
        grav_pe_continuous(0.6, v(0.0, 0.0), v(0.0, 1.0), 9.81),
        grav_by_quadrature(0.6, v(0.0, 0.0), v(0.0, 1.0), 9.81),
        epsilon = 1e-9
    );
    assert_relative_eq!(kinetic_continuous(0.6, v(0.0, 0.0), v(2.0, 0.0)), 0.4, epsilon = 1e-12);
    assert_relative_eq!(
        kinetic_continuous(0.6, v(0.0, 0.0), v(2.0, 0.0)),
        kinetic_by_quadrature(0.6, v(0.0, 0.0), v(2.0, 0.0)),
        epsilon = 1e-8
    );
    // degenerate and symmetric cases
    assert_relative_eq!(grav_pe_continuous(2.0, v(0.0, 1.5), v(0.0, 1.5), 9.81), 2.0 * 9.81 * 1.5, epsilon = 1e-12);
    assert_eq!(grav_pe_continuous(2.0, v(0.0, 1.0), v(0.0, -1.0), 9.81), 0.0);
    let w = v(0.3, -0.7);
    assert_relative_eq!(kinetic_continuous(1.3, w, w), 0.5 * 1.3 * w.norm_squared(), epsilon = 1e-12);
    assert_relative_eq!(kinetic_continuous(1.3, w, -w), 1.3 / 6.0 * w.norm_squared(), epsilon = 1e-12);
    let asm = assembly_from(1.2, 1.0, 0.0, 1.0);
    assert_relative_eq!(kinetic_discrete(&asm, v(1.0, 0.0), v(-1.0, 0.0)), 0.2, epsilon = 1e-12);
    assert_relative_eq!(kinetic_continuous(1.2, v(1.0, 0.0), v(-1.0, 0.0)), 0.2, epsilon = 1e-12);
}

#[test]
fn elastic_spot_values() {
    let asm = assembly_from(0.1865, 367.8, 10.8, 0.1744);
    let cont = elastic_pe(367.8, 0.20, 0.1744);
    assert_relative_eq!(cont, 0.5 * 367.8 * 0.0256 * 0.0256, epsilon = 1e-15);
    assert_relative_eq!(elastic_pe_discrete(&asm, 0.10, 0.10), cont, max_relative = 1e-12);
    assert!(elastic_pe_discrete(&asm, 0.09, 0.11) > cont);
    assert_eq!(elastic_pe(367.8, 0.1744, 0.1744), 0.0);
}

#[test]
fn bundled_actuators_equivalize() {
    let leg = default_leg();
    let maa = equivalize(&leg.actuators[0]);
    assert_relative_eq!(maa.masses[0], 0.1865 / 6.0, epsilon = 1e-15);
    assert_relative_eq!(maa.masses[1], 0.1865 * 2.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(maa.segment_stiffness, 735.6, epsilon = 1e-12);
    assert_relative_eq!(maa.segment_damping, 21.6, epsilon = 1e-12);
    assert_relative_eq!(maa.segment_rest_length, 0.0872, epsilon = 1e-15);
    let baa = equivalize(&leg.actuators[1]);
    assert_relative_eq!(baa.masses[0], 0.04545, epsilon = 1e-12);
    assert_relative_eq!(baa.masses[1], 0.1818, epsilon = 1e-12);
    assert_relative_eq!(baa.segment_stiffness, 583.6, epsilon = 1e-12);
    assert_relative_eq!(baa.segment_damping, 22.6, epsilon = 1e-12);
    assert_relative_eq!(baa.segment_rest_length, 0.1268, epsilon = 1e-15);
    assert!(maa.shared_force && maa.equal_segments);
}

#[test]
fn generalized_force_virtual_work_by_differences() {
    // Q_j = F ∂l/∂q_j for a two-link arm with an actuator from the base to
    // the forearm; ∂l/∂q by central differences.
    let (a1, a2) = (0.3, 0.25);
    let base = Vec2::new(0.05, -0.02);
    let len = |q: [f64; 2]| {
        let elbow = Vec2::new(a1 * q[0].cos(), a1 * q[0].sin());
        let p = elbow + 0.6 * a2 * Vec2::new((q[0] + q[1]).cos(), (q[0] + q[1]).sin());
        (p - base).norm()
    };
    let q = [0.7, 0.4];
    let h = 1e-6;
    let dl: Vec<f64> = (0..2)
        .map(|j| {
            let (mut p, mut m) = (q, q);
            p[j] += h;
            m[j] -= h;
            (len(p) - len(m)) / (2.0 * h)
        })
        .collect();
    let qf = actuator_generalized_force(10.0, 0.0, len(q), 0.0, &dl).unwrap();
    for j in 0..2 {
        let (mut p, mut m) = (q, q);
        p[j] += h;
        m[j] -= h;
        let work = 10.0 * (len(p) - len(m)) / (2.0 * h);
        assert_relative_eq!(qf[j], work, epsilon = 1e-9);
    }
    let q = actuator_generalized_force(10.0, 0.0, 0.2, 0.0, &[0.03, -0.01]).unwrap();
    assert_relative_eq!(q[0], 0.3, epsilon = 1e-15);
    assert_relative_eq!(q[1], -0.1, epsilon = 1e-15);
    let q = actuator_generalized_force(2.0, 4.0, 0.2, 0.5, &[0.03, -0.01]).unwrap();
    assert_eq!(q, vec![0.0, 0.0]);
    assert!(actuator_generalized_force(1.0, 0.0, 1e-10, 0.0, &[1.0]).is_err());
}

fn vec2() -> impl Strategy<Value = Vec2> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn discrete_energies_equal_continuous(
        m in 0.001..5.0f64, ra in vec2(), rb in vec2(), va in vec2(), vb in vec2(), g in 0.1..20.0f64
    ) {
        let asm = assembly_from(m, 100.0, 1.0, 0.2);
        prop_assert!(rel(kinetic_discrete(&asm, va, vb), kinetic_continuous(m, va, vb)) < 1e-12);
        let (gd, gc) = (grav_pe_discrete(&asm, ra, rb, g), grav_pe_continuous(m, ra, rb, g));
        prop_assert!((gd - gc).abs() <= 1e-12 * (m * g * (ra.y.abs() + rb.y.abs())));
    }

    #[test]
    fn kinetic_matches_quadrature(m in 0.01..2.0f64, va in vec2(), vb in vec2()) {
        let q = kinetic_by_quadrature(m, va, vb);
        let scale = m * (va.norm_squared() + vb.norm_squared()) + 1e-12;
        prop_assert!((kinetic_continuous(m, va, vb) - q).abs() < 1e-8 * scale);
    }

    #[test]
    fn elastic_equal_at_half_lengths(k in 1.0..2000.0f64, l0 in 0.01..0.5f64, l in 0.01..0.6f64) {
        let asm = assembly_from(1.0, k, 0.0, l0);
        let a = elastic_pe(k, l, l0);
        let b = elastic_pe_discrete(&asm, 0.5 * l, 0.5 * l);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(b) + 1e-18);
    }

    #[test]
    fn unequal_segments_store_more(k in 1.0..2000.0f64, l0 in 0.01..0.5f64, l in 0.01..0.6f64, d in 0.001..0.01f64) {
        let asm = assembly_from(1.0, k, 0.0, l0);
        prop_assert!(elastic_pe_discrete(&asm, 0.5 * l - d, 0.5 * l + d) > elastic_pe(k, l, l0));
    }

    #[test]
    fn segment_forces_sum_to_actuator_force(
        f in -100.0..100.0f64, c in 0.0..50.0f64, l in 0.05..0.5f64, ld in -3.0..3.0f64,
        dl in prop::collection::vec(-0.2..0.2f64, 1..5)
    ) {
        let asm = assembly_from(0.2, 300.0, c, 0.2);
        let a = actuator_generalized_force(f, c, l, ld, &dl).unwrap();
        let b = assembly_generalized_force(&asm, f, ld, &dl);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn moment_conditions_hold(mut xi in prop::collection::vec(0.0..1.0f64, 3..8)) {
        xi.sort_by(|a, b| a.total_cmp(b));
        prop_assume!(xi.windows(2).all(|w| w[1] - w[0] > 1e-3));
        let mu = solve_mass_fractions(&MassFractionProblem::new(xi.clone())).unwrap();
        let moment = |p: i32| mu.iter().zip(&xi).map(|(m, x)| m * x.powi(p)).sum::<f64>();
        prop_assert!((moment(0) - 1.0).abs() < 1e-12);
        prop_assert!((moment(1) - 0.5).abs() < 1e-12);
        prop_assert!((moment(2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn assembly_scales_with_parameters(
        a in 0.1..10.0f64, b in 0.1..10.0f64, g in 0.1..10.0f64, d in 0.1..10.0f64
    ) {
        let base = assembly_from(0.3, 200.0, 5.0, 0.2);
        let s = assembly_from(0.3 * a, 200.0 * b, 5.0 * g, 0.2 * d);
        for i in 0..3 {
            prop_assert!(rel(s.masses[i], a * base.masses[i]) < 1e-14);
        }
        prop_assert!(rel(s.segment_stiffness, b * base.segment_stiffness) < 1e-14);
        prop_assert!(rel(s.segment_damping, g * base.segment_damping) < 1e-14);
        prop_assert!(rel(s.segment_rest_length, d * base.segment_rest_length) < 1e-14);
    }
}
