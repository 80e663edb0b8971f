//! Outer monotone iteration `uⁿ⁺¹ = T uⁿ` started from an upper or lower
//! solution, plus the solution certificate and the maximality probe.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{pairing, DiscreteProblem};
use crate::discretization::{compare, max_excess, NodalField};
use crate::error::{Error, Result};
use crate::monotone_graph::Side;
use crate::vi_solver::{solve_vi, SolverPath, ViTolerances};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Start at the upper solution; converges to the maximal solution.
    FromUpper,
    /// Start at the lower solution; converges to the minimal solution.
    FromLower,
}

impl Direction {
    /// One-sided evaluation of `g` the iteration needs at jumps of `g`.
    pub fn required_side(self) -> Side {
        match self {
            Direction::FromUpper => Side::Right,
            Direction::FromLower => Side::Left,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::FromUpper => "maximal",
            Direction::FromLower => "minimal",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    /// Stop when `‖uⁿ⁺¹ − uⁿ‖_∞` falls below this.
    pub outer: f64,
    /// Inner prox residual.
    pub stat: f64,
    /// Allowed movement against the expected direction per step.
    pub mono: f64,
    /// Allowed distance of the extracted selection from `β(u)`.
    pub member: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub path: SolverPath,
}

impl Tolerances {
    pub fn for_dim(dim: usize) -> Self {
        Self::from_outer(if dim == 1 { 1e-8 } else { 1e-6 })
    }

    /// `stat = outer / 100`, `mono = 10 stat`, `member = outer`.
    pub fn from_outer(outer: f64) -> Self {
        let stat = outer / 100.0;
        Self {
            outer,
            stat,
            mono: 10.0 * stat,
            member: outer,
            max_outer_iterations: 500,
            max_inner_iterations: 500_000,
            path: SolverPath::Auto,
        }
    }

    pub fn inner(&self) -> ViTolerances {
        ViTolerances {
            stat: self.stat,
            max_iterations: self.max_inner_iterations,
            path: self.path,
        }
    }
}

/// An ordered pair of a lower and an upper solution with their selections.
#[derive(Clone, Debug)]
pub struct Bracket {
    pub lower_u: NodalField,
    pub lower_v: NodalField,
    pub upper_u: NodalField,
    pub upper_v: NodalField,
    /// Set by [`Bracket::verify`] when both one-sided checks pass.
    pub verified: bool,
    /// Skip the verification requirement of [`solve_extremal`].
    pub waived: bool,
}

impl Bracket {
    pub fn new(
        lower: (NodalField, NodalField),
        upper: (NodalField, NodalField),
    ) -> Result<Self> {
        let n = upper.0.len();
        for f in [&lower.0, &lower.1, &upper.1] {
            if f.len() != n {
                return Err(Error::FieldLength {
                    expected: n,
                    got: f.len(),
                });
            }
        }
        if !compare(&lower.0, &upper.0, 0.0) {
            let (excess, node) = max_excess(&lower.0, &upper.0);
            return Err(Error::Precondition(format!(
                "lower solution exceeds upper solution by {excess:.3e} at node {node}"
            )));
        }
        Ok(Self {
            lower_u: lower.0,
            lower_v: lower.1,
            upper_u: upper.0,
            upper_v: upper.1,
            verified: false,
            waived: false,
        })
    }

    pub fn waive_verification(mut self) -> Self {
        self.waived = true;
        self
    }

    /// Largest distance of `u` outside `[lower_u, upper_u]`, with the node.
    pub fn excess(&self, u: &[f64]) -> (f64, usize) {
        let (above, at_above) = max_excess(u, &self.upper_u);
        let (below, at_below) = max_excess(&self.lower_u, u);
        if above >= below {
            (above, at_above)
        } else {
            (below, at_below)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    pub sup_increment: f64,
    /// Largest nodal move against the expected direction (≤ 0 is ideal).
    pub mono_margin: f64,
    pub inner_iters: usize,
    /// Final value of the inner objective.
    pub energy: f64,
    pub inner_residual: f64,
    pub inner_stationarity: f64,
    pub inner_path: SolverPath,
    /// `Σ_e |∇u|^p |e|` of the new iterate.
    pub seminorm: f64,
    /// `⟨b, u⟩ − λ Σ_e |∇u|^p |e|`; nonnegative by coercivity.
    pub bound_margin: f64,
    /// Distance of the new iterate outside the bracket.
    pub bracket_excess: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    /// max over interior nodes of `dist((b_i − (Au)_i)/m_i, β(u_i))`.
    pub membership_distance: f64,
    /// max over interior nodes of `|u_i − (I + β)⁻¹(u_i + v_i)|` for the raw
    /// extracted `v_i`.
    pub graph_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub direction: Direction,
    #[serde(skip)]
    pub u: NodalField,
    #[serde(skip)]
    pub v: NodalField,
    pub outer_iterations: usize,
    pub iterations: Vec<IterationRecord>,
    /// `‖T u − u‖_∞` at the returned field.
    pub fixed_point_residual: f64,
    pub certificate: CertificateReport,
    pub worst_mono_margin: f64,
    pub worst_bound_margin: f64,
    pub worst_bracket_excess: f64,
    #[serde(skip)]
    pub wall_time: f64,
    pub passed: bool,
}

fn side_check(p: &DiscreteProblem, direction: Direction) -> Result<()> {
    let required = direction.required_side();
    let actual = p.decomposition().g_side();
    if actual != required && p.decomposition().g().has_jumps() {
        return Err(Error::SideMismatch(format!(
            "iterating toward the {} solution needs g evaluated from the {:?} at its jumps, got {:?}",
            direction.label(),
            required,
            actual
        )));
    }
    Ok(())
}

/// Runs `uⁿ⁺¹ = T uⁿ` from one end of the bracket until the sup-norm
/// increment drops below `tol.outer`, then certifies the limit.
pub fn solve_extremal(
    p: &DiscreteProblem,
    bracket: &Bracket,
    direction: Direction,
    tol: &Tolerances,
) -> Result<SolveReport> {
    let start = Instant::now();
    if !bracket.verified && !bracket.waived {
        return Err(Error::Precondition(
            "bracket is not verified; verify it or waive verification explicitly".into(),
        ));
    }
    side_check(p, direction)?;
    p.mesh().check_field(&bracket.upper_u)?;

    let inner = tol.inner();
    let mut u = match direction {
        Direction::FromUpper => bracket.upper_u.clone(),
        Direction::FromLower => bracket.lower_u.clone(),
    };
    let lambda = p.operator().lambda();
    let mut records = Vec::new();
    let mut converged = false;

    for n in 1..=tol.max_outer_iterations {
        let b = p.load_from(&u);
        let sol = solve_vi(p, &u, &u, &inner)?;
        let (against, node) = match direction {
            Direction::FromUpper => max_excess(&sol.u, &u),
            Direction::FromLower => max_excess(&u, &sol.u),
        };
        if against > tol.mono {
            return Err(Error::MonotonicityViolated {
                iteration: n,
                node,
                margin: against,
            });
        }
        let (excess, at) = bracket.excess(&sol.u);
        if excess > tol.outer {
            return Err(Error::BracketEscaped {
                iteration: n,
                node: at,
                excess,
            });
        }
        let increment = sol.u.sup_distance(&u);
        let seminorm = p.seminorm_p(&sol.u);
        records.push(IterationRecord {
            n,
            sup_increment: increment,
            mono_margin: against,
            inner_iters: sol.inner_iterations,
            energy: *sol.energy_trace.last().unwrap_or(&f64::NAN),
            inner_residual: sol.residual,
            inner_stationarity: sol.stationarity,
            inner_path: sol.path,
            seminorm,
            bound_margin: pairing(&b, &sol.u) - lambda * seminorm,
            bracket_excess: excess,
        });
        u = sol.u;
        if increment <= tol.outer {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::OuterNotConverged {
            iterations: tol.max_outer_iterations,
            increment: records.last().map_or(f64::NAN, |r| r.sup_increment),
        });
    }

    // One more application of T: its distance to u is the fixed-point
    // residual, and its output is certified. The load of that solve was
    // G(u), which differs from G(Tu) only through that residual.
    let check = solve_vi(p, &u, &u, &inner)?;
    let fixed_point_residual = check.u.sup_distance(&u);
    let u = check.u;
    let (v, certificate) = certify_solution(p, &u, tol.member)?;

    let worst = |f: fn(&IterationRecord) -> f64| records.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let worst_mono_margin = worst(|r| r.mono_margin);
    let worst_bracket_excess = worst(|r| r.bracket_excess);
    let worst_bound_margin = records
        .iter()
        .map(|r| r.bound_margin)
        .fold(f64::INFINITY, f64::min);
    let bound_slack = tol.outer * (1.0 + records.iter().map(|r| r.seminorm).fold(0.0, f64::max));
    let passed = certificate.passed
        && fixed_point_residual <= 2.0 * tol.outer
        && worst_bound_margin >= -bound_slack;

    Ok(SolveReport {
        direction,
        u,
        v,
        outer_iterations: records.len(),
        iterations: records,
        fixed_point_residual,
        certificate,
        worst_mono_margin,
        worst_bound_margin,
        worst_bracket_excess,
        wall_time: start.elapsed().as_secs_f64(),
        passed,
    })
}

/// Extracts `v_i = (b_i − (Au)_i)/m_i` with `b = M g(u)` and measures its
/// distance from `β(u_i)`. The returned selection is projected onto `β(u_i)`
/// so it is a genuine member at every node; boundary nodes get the element of
/// `β(u_i)` closest to zero.
pub fn certify_solution(
    p: &DiscreteProblem,
    u: &[f64],
    tol_member: f64,
) -> Result<(NodalField, CertificateReport)> {
    p.mesh().check_field(u)?;
    let b = p.load_from(u);
    let au = p.apply_a(u)?;
    let graph = p.graph();
    let mass = p.mass();
    let mut v: NodalField = u.iter().map(|&s| graph.interval(s).project(0.0)).collect();
    let mut distance: f64 = 0.0;
    let mut residual: f64 = 0.0;
    for &i in p.interior() {
        let raw = (b[i] - au[i]) / mass[i];
        let iv = graph.interval(u[i]);
        distance = distance.max(iv.distance(raw));
        residual = residual.max(graph.graph_residual(u[i], raw));
        v[i] = iv.project(raw);
    }
    let report = CertificateReport {
        membership_distance: distance,
        graph_residual: residual,
        tolerance: tol_member,
        passed: distance <= tol_member,
    };
    Ok((v, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeViolation {
    pub candidate: usize,
    pub node: usize,
    /// Distance outside `[u_min, u_max]`.
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub candidates: usize,
    /// Candidates whose own certificate failed; they are still compared.
    pub uncertified: Vec<usize>,
    /// Largest distance of any candidate outside `[u_min, u_max]`.
    pub worst_margin: f64,
    pub violation: Option<ProbeViolation>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `u_min − tol ≤ w ≤ u_max + tol` for every candidate solution `w`.
/// This can only falsify extremality, never prove it.
pub fn maximality_probe(
    p: &DiscreteProblem,
    u_min: &[f64],
    u_max: &[f64],
    candidates: &[NodalField],
    tol: f64,
    tol_member: f64,
) -> Result<ProbeReport> {
    let mut worst = f64::NEG_INFINITY;
    let mut violation = None;
    let mut uncertified = Vec::new();
    for (k, w) in candidates.iter().enumerate() {
        p.mesh().check_field(w)?;
        if !certify_solution(p, w, tol_member)?.1.passed {
            uncertified.push(k);
        }
        let (above, at_above) = max_excess(w, u_max);
        let (below, at_below) = max_excess(u_min, w);
        let (margin, node) = if above >= below {
            (above, at_above)
        } else {
            (below, at_below)
        };
        if margin > worst {
            worst = margin;
            if margin > tol {
                violation = Some(ProbeViolation {
                    candidate: k,
                    node,
                    margin,
                });
            }
        }
    }
    Ok(ProbeReport {
        candidates: candidates.len(),
        uncertified,
        worst_margin: if candidates.is_empty() { 0.0 } else { worst },
        passed: violation.is_none(),
        violation,
        tolerance: tol,
    })
}

/// Picard iteration `w ← T w` from random fields inside the bracket. Starts
/// that do not settle within `max_steps` are dropped.
pub fn random_start_fixed_points(
    p: &DiscreteProblem,
    bracket: &Bracket,
    count: usize,
    seed: u64,
    tol: &Tolerances,
    max_steps: usize,
) -> Result<Vec<NodalField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = tol.inner();
    let mut found = Vec::new();
    for _ in 0..count {
        let mut w: NodalField = bracket
            .lower_u
            .iter()
            .zip(bracket.upper_u.iter())
            .map(|(&lo, &hi)| lo + rng.gen::<f64>() * (hi - lo))
            .collect();
        for &i in p.mesh().boundary_nodes().collect::<Vec<_>>().iter() {
            w[i] = 0.0;
        }
        for _ in 0..max_steps {
            let next = solve_vi(p, &w, &w, &inner)?.u;
            let step = next.sup_distance(&w);
            w = next;
            if step <= tol.outer {
                found.push(w);
                break;
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Mesh;
    use crate::monotone_graph::PiecewiseSpec;
    use crate::nonlinearity::Decomposition;
    use crate::operator::OperatorSpec;
    use std::sync::Arc;

    fn problem(n: usize, g: PiecewiseSpec, h: PiecewiseSpec, side: Side) -> DiscreteProblem {
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, n).unwrap());
        let d = Decomposition::from_specs(&g, &h, side).unwrap();
        DiscreteProblem::new(mesh, OperatorSpec::p_laplacian(2.0).unwrap(), d)
    }

    fn analytic_bracket(p: &DiscreteProblem) -> Bracket {
        let n = p.mesh().num_nodes();
        let upper = NodalField::from_fn(p.mesh(), |x| 0.5 * x[0] * (1.0 - x[0]));
        let mut b = Bracket::new(
            (NodalField::zeros(n), NodalField::zeros(n)),
            (upper, NodalField::zeros(n)),
        )
        .unwrap();
        b.verified = true;
        b
    }

    #[test]
    fn constant_g_takes_one_step() {
        let p = problem(50, PiecewiseSpec::constant(1.0), PiecewiseSpec::default(), Side::Right);
        let bracket = analytic_bracket(&p);
        let report = solve_extremal(&p, &bracket, Direction::FromUpper, &Tolerances::for_dim(1)).unwrap();
        assert_eq!(report.outer_iterations, 1);
        let exact = NodalField::from_fn(p.mesh(), |x| 0.5 * x[0] * (1.0 - x[0]));
        assert!(report.u.sup_distance(&exact) < 1e-10);
        assert!(report.passed);
        assert!(report.certificate.membership_distance <= 1e-9);
        assert!(report.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unverified_bracket_is_refused_unless_waived() {
        let p = problem(10, PiecewiseSpec::constant(1.0), PiecewiseSpec::default(), Side::Right);
        let mut bracket = analytic_bracket(&p);
        bracket.verified = false;
        let tol = Tolerances::for_dim(1);
        assert!(matches!(
            solve_extremal(&p, &bracket, Direction::FromUpper, &tol),
            Err(Error::Precondition(_))
        ));
        let bracket = bracket.waive_verification();
        assert!(solve_extremal(&p, &bracket, Direction::FromUpper, &tol).is_ok());
    }

    #[test]
    fn side_mismatch_only_matters_with_jumps() {
        let tol = Tolerances::for_dim(1);
        let smooth = problem(10, PiecewiseSpec::linear(1.0), PiecewiseSpec::default(), Side::Left);
        let bracket = analytic_bracket(&smooth);
        assert!(solve_extremal(&smooth, &bracket, Direction::FromUpper, &tol).is_ok());
        let jumpy = problem(10, PiecewiseSpec::heaviside(0.05, 0.5), PiecewiseSpec::default(), Side::Left);
        assert!(matches!(
            solve_extremal(&jumpy, &bracket, Direction::FromUpper, &tol),
            Err(Error::SideMismatch(_))
        ));
    }

    #[test]
    fn iterates_decrease_from_above_and_increase_from_below() {
        // g(s) = 1 + 2s: the scheme contracts at rate about 2/π².
        let p = problem(40, PiecewiseSpec::linear(2.0).with_value_at_zero(1.0),
            PiecewiseSpec::heaviside(0.03, 4.0), Side::Right);
        let n = p.mesh().num_nodes();
        // c x(1 − x) is a supersolution of −u″ = 1 + 2u once 2c ≥ 1 + c/2.
        let upper = NodalField::from_fn(p.mesh(), |x| 0.8 * x[0] * (1.0 - x[0]));
        let mut bracket = Bracket::new(
            (NodalField::zeros(n), NodalField::zeros(n)),
            (upper, NodalField::zeros(n)),
        )
        .unwrap()
        .waive_verification();
        bracket.verified = false;
        let tol = Tolerances::for_dim(1);
        let hi = solve_extremal(&p, &bracket, Direction::FromUpper, &tol).unwrap();
        let lo = solve_extremal(&p.with_decomposition(p.decomposition().with_side(Side::Left)),
            &bracket, Direction::FromLower, &tol).unwrap();
        assert!(hi.outer_iterations > 3);
        assert!(hi.worst_mono_margin <= tol.mono && lo.worst_mono_margin <= tol.mono);
        assert!(hi.passed && lo.passed);
        assert!(hi.fixed_point_residual <= 2.0 * tol.outer);
        assert!(compare(&lo.u, &hi.u, 1e-7));
        let probe = maximality_probe(&p, &lo.u, &hi.u, &[lo.u.clone(), hi.u.clone()], 1e-7, 1e-6).unwrap();
        assert!(probe.passed);
        let empty = maximality_probe(&p, &lo.u, &hi.u, &[], 1e-7, 1e-6).unwrap();
        assert!(empty.passed && empty.candidates == 0);
    }

    #[test]
    fn certificate_examples() {
        let p = problem(20, PiecewiseSpec::constant(0.0), PiecewiseSpec::heaviside(0.0, 1.0), Side::Right);
        let (v, report) = certify_solution(&p, &NodalField::zeros(21), 1e-12).unwrap();
        assert!(report.passed && v.iter().all(|&x| x == 0.0));
        let u = NodalField::from_fn(p.mesh(), |x| x[0] * (1.0 - x[0]));
        let (_, report) = certify_solution(&p, &u, 1e-6).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn probe_flags_an_out_of_range_candidate() {
        let p = problem(10, PiecewiseSpec::constant(1.0), PiecewiseSpec::default(), Side::Right);
        let lo = NodalField::zeros(11);
        let hi = NodalField::from_fn(p.mesh(), |x| 0.5 * x[0] * (1.0 - x[0]));
        let mut above = hi.clone();
        above[4] += 0.01;
        let report = maximality_probe(&p, &lo, &hi, &[hi.clone(), above], 1e-9, 1e-6).unwrap();
        assert!(!report.passed);
        let v = report.violation.unwrap();
        assert_eq!((v.candidate, v.node), (1, 4));
        assert!((v.margin - 0.01).abs() < 1e-12);
        assert_eq!(report.uncertified, vec![1]);
    }

    #[test]
    fn random_starts_reach_the_unique_fixed_point() {
        let p = problem(30, PiecewiseSpec::linear(1.0).with_value_at_zero(1.0),
            PiecewiseSpec::default(), Side::Right);
        let n = p.mesh().num_nodes();
        let upper = NodalField::from_fn(p.mesh(), |x| 0.6 * x[0] * (1.0 - x[0]));
        let bracket = Bracket::new(
            (NodalField::zeros(n), NodalField::zeros(n)),
            (upper, NodalField::zeros(n)),
        )
        .unwrap();
        let tol = Tolerances::for_dim(1);
        let found = random_start_fixed_points(&p, &bracket, 3, 7, &tol, 200).unwrap();
        assert_eq!(found.len(), 3);
        for w in &found[1..] {
            assert!(w.sup_distance(&found[0]) < 1e-7);
        }
    }
}
