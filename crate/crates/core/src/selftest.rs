//! Invariant suites that can run inside a release binary on fixed seeds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{pairing, DiscreteProblem};
use crate::discretization::{Mesh, NodalField};
use crate::error::Result;
use crate::monotone_graph::{MonotoneGraph, PiecewiseMonotone, PiecewiseSpec, Side};
use crate::nonlinearity::Decomposition;
use crate::operator::OperatorSpec;
use crate::vi_solver::{check_t_monotone, ViTolerances};

#[derive(Clone, Copy, Debug, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Replace every operator by one whose flux has the wrong sign while its
    /// potential is unchanged. Used to check that the suites catch it.
    pub inject_flux_sign_fault: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    /// Largest normalized error seen; the suite passes when it is ≤ `bound`.
    pub worst: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

impl SelftestReport {
    pub fn failing(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.suites.iter().filter(|s| !s.passed).map(|s| s.name)
    }
}

fn suite(name: &'static str, cases: usize, worst: f64, bound: f64) -> SuiteResult {
    SuiteResult {
        name,
        cases,
        worst,
        bound,
        passed: worst <= bound,
    }
}

fn graphs() -> Vec<PiecewiseSpec> {
    vec![
        PiecewiseSpec::heaviside(0.0, 1.0),
        PiecewiseSpec::linear(1.0).with_jump(1.0, 2.0),
        PiecewiseSpec::heaviside(-0.5, 1.0).with_jump(0.4, 3.0),
    ]
}

fn operator(p: f64, faulty: bool) -> Result<OperatorSpec> {
    if !faulty {
        return OperatorSpec::p_laplacian(p);
    }
    let reference = OperatorSpec::p_laplacian(p)?;
    let flux_ref = reference.clone();
    let pot_ref = reference;
    OperatorSpec::custom(
        "p_laplacian_flipped",
        p,
        1.0,
        1.0,
        Arc::new(|_| 0.0),
        Arc::new(move |x, xi| {
            let a = flux_ref.flux(x, xi);
            [-a[0], -a[1]]
        }),
        Some(Arc::new(move |x, xi| pot_ref.potential(x, xi).unwrap_or(f64::NAN))),
    )
}

fn random_dirichlet(p: &DiscreteProblem, rng: &mut ChaCha8Rng, amplitude: f64) -> NodalField {
    let mut u = NodalField::zeros(p.mesh().num_nodes());
    for &i in p.interior() {
        u[i] = rng.gen_range(-amplitude..amplitude);
    }
    u
}

/// Resolvent certificate `y − x ∈ λβ(x)` and potential normalization.
fn monotone_graph_suite(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for spec in graphs() {
        let graph = MonotoneGraph::new(PiecewiseMonotone::new(spec)?);
        worst = worst.max(graph.potential().value(0.0).abs());
        for _ in 0..200 {
            let lambda = 10f64.powf(rng.gen_range(-2.0..2.0));
            let y = rng.gen_range(-5.0..5.0);
            let x = graph.resolvent(lambda, y)?;
            let v = (y - x) / lambda;
            worst = worst.max(graph.interval(x).distance(v) / (1.0 + v.abs()));
            let s = rng.gen_range(-3.0..3.0);
            worst = worst.max((-graph.potential().value(s)).max(0.0));
            cases += 1;
        }
    }
    Ok(suite("monotone-graph", cases, worst, 1e-12))
}

fn truncation_identity_suite(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mesh = Arc::new(Mesh::interval(0.0, 1.0, 20)?);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for h in graphs() {
        let d = Decomposition::from_specs(&PiecewiseSpec::default(), &h, Side::Right)?;
        let p = DiscreteProblem::new(mesh.clone(), OperatorSpec::p_laplacian(2.0)?, d);
        for _ in 0..170 {
            let u: NodalField = (0..mesh.num_nodes()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w: NodalField = (0..mesh.num_nodes()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r = p.truncation_identity_check(&u, &w);
            let scale = 1.0 + p.functional_j(&u).abs() + p.functional_j(&w).abs();
            worst = worst.max(r.abs() / scale);
            cases += 1;
        }
    }
    Ok(suite("truncation-identity", cases, worst, 1e-12))
}

/// `z₁ ≤ z₂ ⇒ T z₁ ≤ T z₂` for an increasing `g` with a jump.
fn t_monotonicity_suite(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let mesh = Arc::new(Mesh::interval(0.0, 1.0, 30)?);
    let d = Decomposition::from_specs(
        &PiecewiseSpec::linear(2.0).with_value_at_zero(1.0).with_jump(0.05, 1.0),
        &PiecewiseSpec::heaviside(0.04, 3.0),
        Side::Right,
    )?;
    let p = DiscreteProblem::new(mesh.clone(), OperatorSpec::p_laplacian(2.0)?, d);
    let tol = ViTolerances::default().with_stat(1e-11);
    let mut failures = 0;
    let cases = 10;
    for _ in 0..cases {
        let mut z1 = NodalField::zeros(mesh.num_nodes());
        let mut z2 = NodalField::zeros(mesh.num_nodes());
        for &i in p.interior() {
            z1[i] = rng.gen_range(0.0..0.2);
            z2[i] = z1[i] + rng.gen_range(0.0..0.1);
        }
        if !check_t_monotone(&p, &z1, &z2, 1e-8, &tol)? {
            failures += 1;
        }
    }
    Ok(suite("t-monotonicity", cases, failures as f64, 0.0))
}

fn gradient_suite(rng: &mut ChaCha8Rng, faulty: bool) -> Result<SuiteResult> {
    let mesh = Arc::new(Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 5, 4)?);
    let d = Decomposition::from_specs(&PiecewiseSpec::default(), &PiecewiseSpec::default(), Side::Right)?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (pexp, bound) in [(2.0, 1e-6), (1.5, 1e-4), (3.0, 1e-4)] {
        let p = DiscreteProblem::new(mesh.clone(), operator(pexp, faulty)?, d.clone());
        for _ in 0..3 {
            let u = random_dirichlet(&p, rng, 1.0);
            let au = p.apply_a(&u)?;
            let scale = p.interior().iter().map(|&i| au[i].abs()).fold(0.0, f64::max);
            let step = 1e-6;
            for &i in p.interior() {
                let mut plus = u.clone();
                let mut minus = u.clone();
                plus[i] += step;
                minus[i] -= step;
                let fd = (p.energy_phi(&plus)? - p.energy_phi(&minus)?) / (2.0 * step);
                // Normalized so that every exponent shares the bound 1.
                worst = worst.max((fd - au[i]).abs() / scale / bound);
            }
            cases += 1;
        }
    }
    Ok(suite("gradient-consistency", cases, worst, 1.0))
}

/// `⟨Au, u⟩ ≥ λ Σ_e |∇u|^p |e|` on random fields.
fn coercivity_suite(rng: &mut ChaCha8Rng, faulty: bool) -> Result<SuiteResult> {
    let mesh = Arc::new(Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 6, 6)?);
    let d = Decomposition::from_specs(&PiecewiseSpec::default(), &PiecewiseSpec::default(), Side::Right)?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for pexp in [1.5, 2.0, 3.0] {
        let p = DiscreteProblem::new(mesh.clone(), operator(pexp, faulty)?, d.clone());
        for _ in 0..100 {
            let u = random_dirichlet(&p, rng, 1.0);
            let lhs = pairing(&p.apply_a(&u)?, &u);
            let rhs = p.operator().lambda() * p.seminorm_p(&u);
            worst = worst.max((rhs - lhs) / rhs.max(f64::MIN_POSITIVE));
            cases += 1;
        }
    }
    Ok(suite("coercivity", cases, worst, 1e-12))
}

pub fn run_selftest(options: SelftestOptions) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let faulty = options.inject_flux_sign_fault;
    let suites = vec![
        monotone_graph_suite(&mut rng)?,
        truncation_identity_suite(&mut rng)?,
        t_monotonicity_suite(&mut rng)?,
        gradient_suite(&mut rng, faulty)?,
        coercivity_suite(&mut rng, faulty)?,
    ];
    let passed = suites.iter().all(|s| s.passed);
    Ok(SelftestReport {
        seed: options.seed,
        suites,
        passed,
    })
}
