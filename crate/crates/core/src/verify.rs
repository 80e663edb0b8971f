//! Nodal checks that a pair `(u, v)` is an upper or lower solution, and
//! helpers that build the standard bracket from constant loads.
//!
//! Testing the one-sided inequality against every hat function `φ_i` is
//! enough: nonnegative Dirichlet fields are nonnegative combinations of the
//! interior hats, so the inequality extends to the whole nonnegative cone.

use serde::Serialize;

use crate::assembly::DiscreteProblem;
use crate::discretization::{compare, max_excess, NodalField};
use crate::error::{Error, Result};
use crate::iteration::Bracket;
use crate::monotone_graph::{PiecewiseMonotone, PiecewiseSpec, Side};
use crate::nonlinearity::Decomposition;
use crate::vi_solver::{solve_vi, ViTolerances};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Upper,
    Lower,
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketCheckReport {
    pub kind: Kind,
    /// `−max_i dist(v_i, β(u_i))`.
    pub membership_margin: f64,
    pub membership_node: usize,
    /// `min u` on the boundary for an upper solution, `−max u` for a lower one.
    pub boundary_margin: f64,
    /// Worst mass-normalized slack of the one-sided inequality over interior
    /// nodes: `((Au)_i + m_i v_i − b_i)/m_i` for an upper solution, its
    /// negative for a lower one.
    pub residual_margin: f64,
    pub residual_node: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(p: &DiscreteProblem, u: &[f64], v: &[f64], tol: f64, kind: Kind) -> Result<BracketCheckReport> {
    let mesh = p.mesh();
    mesh.check_field(u)?;
    mesh.check_field(v)?;
    let graph = p.graph();
    let (mut membership, mut membership_node) = (0.0_f64, 0);
    for (i, (&s, &w)) in u.iter().zip(v).enumerate() {
        let d = graph.interval(s).distance(w);
        if d > membership {
            membership = d;
            membership_node = i;
        }
    }
    let sign = match kind {
        Kind::Upper => 1.0,
        Kind::Lower => -1.0,
    };
    let boundary_margin = mesh
        .boundary_nodes()
        .map(|i| sign * u[i])
        .fold(f64::INFINITY, f64::min);

    let au = p.apply_a(u)?;
    let b = p.load_from(u);
    let mass = p.mass();
    let (mut residual, mut residual_node) = (f64::INFINITY, 0);
    for &i in p.interior() {
        let slack = sign * (au[i] + mass[i] * v[i] - b[i]) / mass[i];
        if slack < residual {
            residual = slack;
            residual_node = i;
        }
    }
    if p.interior().is_empty() {
        residual = 0.0;
    }
    let membership_margin = -membership;
    let passed = membership_margin >= -tol && boundary_margin >= -tol && residual >= -tol;
    Ok(BracketCheckReport {
        kind,
        membership_margin,
        membership_node,
        boundary_margin,
        residual_margin: residual,
        residual_node,
        tolerance: tol,
        passed,
    })
}

/// `v_i ∈ β(u_i)`, `u ≥ 0` on the boundary and `(Au)_i + m_i v_i ≥ m_i g(u_i)`
/// at every interior node, all up to `tol`.
pub fn check_upper(p: &DiscreteProblem, u: &[f64], v: &[f64], tol: f64) -> Result<BracketCheckReport> {
    check(p, u, v, tol, Kind::Upper)
}

/// Mirror image of [`check_upper`].
pub fn check_lower(p: &DiscreteProblem, u: &[f64], v: &[f64], tol: f64) -> Result<BracketCheckReport> {
    check(p, u, v, tol, Kind::Lower)
}

/// Solves the `β`-free problem with the constant load `c` on the same mesh
/// and operator.
fn constant_load_solution(p: &DiscreteProblem, c: f64) -> Result<NodalField> {
    let aux = p.with_decomposition(Decomposition::new(
        PiecewiseMonotone::new(PiecewiseSpec::constant(c))?,
        PiecewiseMonotone::zero(),
        Side::Right,
    ));
    let zero = NodalField::zeros(p.mesh().num_nodes());
    let tol = ViTolerances::for_dim(p.mesh().dim()).with_stat(1e-11);
    Ok(solve_vi(&aux, &zero, &zero, &tol)?.u)
}

/// Upper solution from `−div a(x, ∇ū) = c_upper`, with `v̄_i` the element of
/// `β(ū_i)` closest to zero (equal to `h⁻(ū_i)` wherever `ū_i > 0`).
/// Fails when `g(ū_i) > c_upper` somewhere, since then the constant does not
/// dominate `g` on the range the iteration visits.
pub fn linear_bracket_helper(p: &DiscreteProblem, c_upper: f64) -> Result<(NodalField, NodalField)> {
    let u = constant_load_solution(p, c_upper)?;
    let g_max = u.iter().map(|&s| p.nemitskii().eval(s)).fold(f64::NEG_INFINITY, f64::max);
    if g_max > c_upper {
        return Err(Error::BracketCheck(format!(
            "g reaches {g_max} on the helper upper solution, above c_upper = {c_upper}; increase c_upper"
        )));
    }
    let v = closest_to_zero(p, &u);
    Ok((u, v))
}

/// Lower solution from `−div a(x, ∇u̲) = c_lower` with `c_lower ≤ inf g`.
pub fn lower_bracket_helper(p: &DiscreteProblem, c_lower: f64) -> Result<(NodalField, NodalField)> {
    let u = constant_load_solution(p, c_lower)?;
    let g_min = u.iter().map(|&s| p.nemitskii().eval(s)).fold(f64::INFINITY, f64::min);
    if g_min < c_lower {
        return Err(Error::BracketCheck(format!(
            "g drops to {g_min} on the helper lower solution, below c_lower = {c_lower}; decrease c_lower"
        )));
    }
    let v = closest_to_zero(p, &u);
    Ok((u, v))
}

fn closest_to_zero(p: &DiscreteProblem, u: &[f64]) -> NodalField {
    let graph = p.graph();
    u.iter().map(|&s| graph.interval(s).project(0.0)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketVerification {
    pub upper: BracketCheckReport,
    pub lower: BracketCheckReport,
    /// `max_i (u̲_i − ū_i)`; the bracket is ordered when this is ≤ tol.
    pub order_excess: f64,
    pub passed: bool,
}

impl Bracket {
    /// Runs both one-sided checks and the order check, and records the
    /// outcome in `self.verified`.
    pub fn verify(&mut self, p: &DiscreteProblem, tol: f64) -> Result<BracketVerification> {
        let upper = check_upper(p, &self.upper_u, &self.upper_v, tol)?;
        let lower = check_lower(p, &self.lower_u, &self.lower_v, tol)?;
        let order_excess = max_excess(&self.lower_u, &self.upper_u).0;
        let passed = upper.passed && lower.passed && compare(&self.lower_u, &self.upper_u, tol);
        self.verified = passed;
        Ok(BracketVerification {
            upper,
            lower,
            order_excess,
            passed,
        })
    }

    /// Bracket from the two constant-load helpers.
    pub fn from_helpers(p: &DiscreteProblem, c_lower: f64, c_upper: f64) -> Result<Self> {
        let lower = lower_bracket_helper(p, c_lower)?;
        let upper = linear_bracket_helper(p, c_upper)?;
        Bracket::new(lower, upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Mesh;
    use crate::iteration::certify_solution;
    use crate::operator::OperatorSpec;
    use std::sync::Arc;

    fn problem(n: usize, pexp: f64, g: PiecewiseSpec, h: PiecewiseSpec) -> DiscreteProblem {
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, n).unwrap());
        let d = Decomposition::from_specs(&g, &h, Side::Right).unwrap();
        DiscreteProblem::new(mesh, OperatorSpec::p_laplacian(pexp).unwrap(), d)
    }

    fn quadratic(p: &DiscreteProblem, scale: f64) -> NodalField {
        NodalField::from_fn(p.mesh(), |x| scale * 0.5 * x[0] * (1.0 - x[0]))
    }

    #[test]
    fn analytic_upper_solution_is_tight() {
        let p = problem(40, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::default());
        let u = quadratic(&p, 1.0);
        let r = check_upper(&p, &u, &NodalField::zeros(41), DEFAULT_TOLERANCE).unwrap();
        assert!(r.passed);
        assert!(r.residual_margin.abs() < 1e-10, "{}", r.residual_margin);
    }

    #[test]
    fn zero_is_not_an_upper_solution_for_positive_load() {
        let p = problem(10, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::default());
        let z = NodalField::zeros(11);
        let r = check_upper(&p, &z, &z, DEFAULT_TOLERANCE).unwrap();
        assert!(!r.passed);
        assert!((r.residual_margin + 1.0).abs() < 1e-12);
        assert!(check_lower(&p, &z, &z, DEFAULT_TOLERANCE).unwrap().passed);
    }

    #[test]
    fn jump_selection_only_adds() {
        let p = problem(40, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::heaviside(0.05, 5.0));
        for scale in [1.0, 2.0, 3.0] {
            let u = quadratic(&p, scale);
            let v: NodalField = u.iter().map(|&s| p.graph().h().eval(s, Side::Left)).collect();
            assert!(check_upper(&p, &u, &v, DEFAULT_TOLERANCE).unwrap().passed);
        }
    }

    #[test]
    fn strict_upper_solution_is_not_lower() {
        let p = problem(20, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::default());
        let u = quadratic(&p, 2.0);
        let z = NodalField::zeros(21);
        assert!(check_upper(&p, &u, &z, DEFAULT_TOLERANCE).unwrap().passed);
        assert!(!check_lower(&p, &u, &z, DEFAULT_TOLERANCE).unwrap().passed);
    }

    #[test]
    fn boundary_and_membership_are_checked() {
        let p = problem(10, 2.0, PiecewiseSpec::constant(0.0), PiecewiseSpec::heaviside(0.0, 1.0));
        let mut u = NodalField::zeros(11);
        u[0] = -0.1;
        let r = check_upper(&p, &u, &NodalField::zeros(11), DEFAULT_TOLERANCE).unwrap();
        assert!(!r.passed && (r.boundary_margin + 0.1).abs() < 1e-15);
        let v = NodalField::constant(11, 2.0);
        let r = check_upper(&p, &NodalField::zeros(11), &v, DEFAULT_TOLERANCE).unwrap();
        assert!(!r.passed && (r.membership_margin + 1.0).abs() < 1e-15);
    }

    #[test]
    fn helper_examples() {
        let p = problem(50, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::heaviside(0.2, 5.0));
        let (u, v) = linear_bracket_helper(&p, 1.0).unwrap();
        assert!(u.sup_distance(&quadratic(&p, 1.0)) < 1e-10);
        assert!(check_upper(&p, &u, &v, DEFAULT_TOLERANCE).unwrap().passed);

        let q = problem(10, 2.0, PiecewiseSpec::constant(0.0), PiecewiseSpec::default());
        let (u, _) = linear_bracket_helper(&q, 0.0).unwrap();
        assert_eq!(u.sup_norm(), 0.0);

        // g = min(2, 1 + s) is bounded by 2.
        let g = PiecewiseSpec {
            breakpoints: vec![1.0],
            slopes: vec![1.0, 0.0],
            value_at_zero: 1.0,
            jumps: vec![],
        };
        let r = problem(40, 3.0, g, PiecewiseSpec::heaviside(0.1, 1.0));
        let (u, v) = linear_bracket_helper(&r, 2.0).unwrap();
        assert!(check_upper(&r, &u, &v, DEFAULT_TOLERANCE).unwrap().passed);

        let steep = problem(20, 2.0, PiecewiseSpec::linear(50.0).with_value_at_zero(1.0), PiecewiseSpec::default());
        assert!(matches!(linear_bracket_helper(&steep, 1.0), Err(Error::BracketCheck(_))));
    }

    #[test]
    fn helper_bracket_verifies() {
        let p = problem(30, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::heaviside(0.05, 5.0));
        let mut b = Bracket::from_helpers(&p, 0.0, 1.0).unwrap();
        assert!(!b.verified);
        let report = b.verify(&p, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed && b.verified);
    }

    #[test]
    fn certified_solutions_are_upper_and_lower() {
        let p = problem(40, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::heaviside(0.05, 5.0));
        let z = NodalField::zeros(41);
        let tol = ViTolerances::default().with_stat(1e-12);
        let u = solve_vi(&p, &z, &z, &tol).unwrap().u;
        let (v, cert) = certify_solution(&p, &u, 1e-9).unwrap();
        assert!(cert.passed);
        assert!(check_upper(&p, &u, &v, 1e-8).unwrap().passed);
        assert!(check_lower(&p, &u, &v, 1e-8).unwrap().passed);
    }
}
