//! Energy-equivalent lumped-mass realization of a continuous elastic actuator.
//!
//! A uniform actuator of mass `m` between endpoints A and B is replaced by
//! three point masses at ξ = 0, ½, 1 with fractions (1/6, 2/3, 1/6), two
//! series segments of stiffness 2k, damping 2c and rest length l0/2 driven by
//! the same force, and a constraint keeping both segment lengths equal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::model::ElasticActuatorSpec;

/// Normalized positions of candidate point masses along an actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct MassFractionProblem {
    pub xi: Vec<f64>,
}

impl MassFractionProblem {
    pub fn new(xi: Vec<f64>) -> Self {
        Self { xi }
    }
}

/// Mass fractions `μ` with Σμ = 1, Σμξ = ½, Σμξ² = ⅓.
///
/// Three points give the unique solution. More points give the minimum-norm
/// solution, which may contain negative entries; see [`is_physical`].
pub fn solve_mass_fractions(p: &MassFractionProblem) -> Result<Vec<f64>> {
    let n = p.xi.len();
    if n < 3 {
        return Err(Error::NoSolution(format!(
            "three moment conditions need at least 3 points, got {n}"
        )));
    }
    let mut sorted = p.xi.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-12) {
        return Err(Error::SingularSystem("duplicate mass-point positions".into()));
    }
    let a = DMatrix::from_fn(3, n, |r, c| p.xi[c].powi(r as i32));
    let rhs = DVector::from_column_slice(&[1.0, 0.5, 1.0 / 3.0]);
    let mu = if n == 3 {
        a.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("Vandermonde system".into()))?
    } else {
        // minimum-norm solution through the SVD; the normal equations square
        // the condition number of clustered points
        a.svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::SingularSystem(format!("moment system: {e}")))?
    };
    Ok(mu.iter().copied().collect())
}

/// True when every fraction is nonnegative, i.e. realizable with real masses.
pub fn is_physical(mu: &[f64]) -> bool {
    mu.iter().all(|&m| m >= -1e-15)
}

/// The 3-2-1 discrete assembly of one actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentAssembly {
    /// Point masses at ξ = 0, ½, 1.
    pub masses: [f64; 3],
    pub segment_stiffness: f64,
    pub segment_damping: f64,
    pub segment_rest_length: f64,
    /// Both segments carry the actuator force unchanged.
    pub shared_force: bool,
    /// Segment lengths are constrained equal.
    pub equal_segments: bool,
}

impl EquivalentAssembly {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

pub fn equivalize(spec: &ElasticActuatorSpec) -> EquivalentAssembly {
    assembly_from(spec.mass, spec.stiffness, spec.damping, spec.rest_length)
}

/// Assembly for raw parameters; also used with `m = 0` for massless checks.
pub fn assembly_from(m: f64, k: f64, c: f64, l0: f64) -> EquivalentAssembly {
    EquivalentAssembly {
        masses: [m / 6.0, 2.0 * m / 3.0, m / 6.0],
        segment_stiffness: 2.0 * k,
        segment_damping: 2.0 * c,
        segment_rest_length: l0 / 2.0,
        shared_force: true,
        equal_segments: true,
    }
}

/// Gravitational energy of a uniform actuator; `g` acts along −y.
pub fn grav_pe_continuous(m: f64, ra: Vec2, rb: Vec2, g: f64) -> f64 {
    0.5 * m * g * (ra.y + rb.y)
}

pub fn kinetic_continuous(m: f64, va: Vec2, vb: Vec2) -> f64 {
    m / 6.0 * (va.dot(&vb) + va.norm_squared() + vb.norm_squared())
}

/// Midpoint mass placed at the mean of the endpoints.
pub fn grav_pe_discrete(asm: &EquivalentAssembly, ra: Vec2, rb: Vec2, g: f64) -> f64 {
    let mid = 0.5 * (ra + rb);
    g * (asm.masses[0] * ra.y + asm.masses[1] * mid.y + asm.masses[2] * rb.y)
}

pub fn kinetic_discrete(asm: &EquivalentAssembly, va: Vec2, vb: Vec2) -> f64 {
    let vm = 0.5 * (va + vb);
    0.5 * (asm.masses[0] * va.norm_squared()
        + asm.masses[1] * vm.norm_squared()
        + asm.masses[2] * vb.norm_squared())
}

pub fn elastic_pe(k: f64, l: f64, l0: f64) -> f64 {
    0.5 * k * (l - l0) * (l - l0)
}

/// Elastic energy of both segments at lengths `s1`, `s2`.
pub fn elastic_pe_discrete(asm: &EquivalentAssembly, s1: f64, s2: f64) -> f64 {
    let (k, r) = (asm.segment_stiffness, asm.segment_rest_length);
    0.5 * k * ((s1 - r).powi(2) + (s2 - r).powi(2))
}

/// Minimum actuator length for which the direction (and so ∂l/∂q) is defined.
pub const MIN_LENGTH: f64 = 1e-9;

/// Generalized force of an actuator: `(F − c·l̇)·∂l/∂q`.
pub fn actuator_generalized_force(
    force: f64,
    damping: f64,
    length: f64,
    length_rate: f64,
    dl_dq: &[f64],
) -> Result<Vec<f64>> {
    if !(length > MIN_LENGTH) {
        return Err(Error::Geometry(format!(
            "actuator length {length:e} is below {MIN_LENGTH:e}; direction undefined"
        )));
    }
    let axial = force - damping * length_rate;
    Ok(dl_dq.iter().map(|d| axial * d).collect())
}

/// Generalized force of the discrete assembly: each segment sees the shared
/// force and its own damper acting on half the total elongation rate.
pub fn assembly_generalized_force(
    asm: &EquivalentAssembly,
    force: f64,
    length_rate: f64,
    dl_dq: &[f64],
) -> Vec<f64> {
    let seg_rate = 0.5 * length_rate;
    let per_seg = force - asm.segment_damping * seg_rate;
    // each segment length is l/2, so ∂s/∂q = ½ ∂l/∂q
    dl_dq.iter().map(|d| 2.0 * per_seg * 0.5 * d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn midpoint_fractions() {
        let mu = solve_mass_fractions(&MassFractionProblem::new(vec![0.0, 0.5, 1.0])).unwrap();
        assert_relative_eq!(mu[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(mu[1], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(mu[2], 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn third_point_fractions() {
        let mu =
            solve_mass_fractions(&MassFractionProblem::new(vec![0.0, 1.0 / 3.0, 1.0])).unwrap();
        // independent Cramer's-rule solution of the 3×3 system
        let (x1, x2, x3) = (0.0_f64, 1.0 / 3.0_f64, 1.0_f64);
        let det = (x2 - x1) * (x3 - x1) * (x3 - x2);
        let m = [
            (x2 * x3 - 0.5 * (x2 + x3) + 1.0 / 3.0) * (x3 - x2) / det,
            -(x1 * x3 - 0.5 * (x1 + x3) + 1.0 / 3.0) * (x3 - x1) / det,
            (x1 * x2 - 0.5 * (x1 + x2) + 1.0 / 3.0) * (x2 - x1) / det,
        ];
        for i in 0..3 {
            assert_relative_eq!(mu[i], m[i], epsilon = 1e-12);
        }
        assert_relative_eq!(mu[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(mu[1], 0.75, epsilon = 1e-12);
        assert_relative_eq!(mu[2], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn too_few_points() {
        let e = solve_mass_fractions(&MassFractionProblem::new(vec![0.0, 0.5])).unwrap_err();
        assert!(matches!(e, Error::NoSolution(_)));
    }

    #[test]
    fn duplicate_points() {
        let e = solve_mass_fractions(&MassFractionProblem::new(vec![0.0, 0.5, 0.5]))
            .unwrap_err();
        assert!(matches!(e, Error::SingularSystem(_)));
    }

    #[test]
    fn overdetermined_points_satisfy_moments() {
        let xi = vec![0.0, 0.2, 0.45, 0.7, 1.0];
        let mu = solve_mass_fractions(&MassFractionProblem::new(xi.clone())).unwrap();
        for (p, target) in [(0, 1.0), (1, 0.5), (2, 1.0 / 3.0)] {
            let s: f64 = mu.iter().zip(&xi).map(|(m, x)| m * x.powi(p)).sum();
            assert!((s - target).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_assembly() {
        let a = assembly_from(1.0, 1.0, 0.0, 1.0);
        assert_eq!(a.masses, [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]);
        assert_eq!(a.segment_stiffness, 2.0);
        assert_eq!(a.segment_damping, 0.0);
        assert_eq!(a.segment_rest_length, 0.5);
    }

    #[test]
    fn energy_spot_values() {
        let g = 9.81;
        let e = grav_pe_continuous(0.6, Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), g);
        assert_relative_eq!(e, 2.943, epsilon = 1e-12);
        let t = kinetic_continuous(0.6, Vec2::zeros(), Vec2::new(2.0, 0.0));
        assert_relative_eq!(t, 0.4, epsilon = 1e-12);
        let asm = assembly_from(1.2, 1.0, 0.0, 1.0);
        let (va, vb) = (Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0));
        assert_relative_eq!(kinetic_discrete(&asm, va, vb), 0.2, epsilon = 1e-12);
        assert_relative_eq!(kinetic_continuous(1.2, va, vb), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn elastic_spot_values() {
        let asm = assembly_from(0.1865, 367.8, 10.8, 0.1744);
        let cont = elastic_pe(367.8, 0.20, 0.1744);
        assert_relative_eq!(cont, 0.5 * 367.8 * 0.0256 * 0.0256, epsilon = 1e-12);
        assert_relative_eq!(cont, 0.12053, epsilon = 1e-5);
        assert_relative_eq!(elastic_pe_discrete(&asm, 0.10, 0.10), cont, max_relative = 1e-12);
        assert!(elastic_pe_discrete(&asm, 0.09, 0.11) > cont);
    }

    #[test]
    fn generalized_force_cases() {
        assert_eq!(
            actuator_generalized_force(0.0, 5.0, 0.2, 0.0, &[0.1, 0.2]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            actuator_generalized_force(3.0, 2.0, 0.2, 1.5, &[0.1, 0.2]).unwrap(),
            vec![0.0, 0.0]
        );
        let q = actuator_generalized_force(10.0, 0.0, 0.2, 0.3, &[0.03, -0.01]).unwrap();
        assert_relative_eq!(q[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(q[1], -0.1, epsilon = 1e-15);
        assert!(actuator_generalized_force(1.0, 0.0, 0.0, 0.0, &[1.0]).is_err());
    }
}
