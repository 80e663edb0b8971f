//! Discrete realizations of the Leray-Lions operator `A`, its energy `Φ`,
//! the lumped convex functional `J` and the Nemitskii load.

use std::sync::Arc;

use rayon::prelude::*;

use crate::discretization::{positive_part, Mesh, NodalField};
use crate::error::{Error, Result};
use crate::monotone_graph::MonotoneGraph;
use crate::nonlinearity::{Decomposition, NemitskiiG};
use crate::operator::{dot, norm, OperatorSpec};

/// Elements per rayon task; below this the loop stays on one thread.
const ELEMENT_CHUNK: usize = 1024;

#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    mesh: Arc<Mesh>,
    op: OperatorSpec,
    decomposition: Decomposition,
    g: NemitskiiG,
}

impl DiscreteProblem {
    pub fn new(mesh: Arc<Mesh>, op: OperatorSpec, decomposition: Decomposition) -> Self {
        let g = decomposition.nemitskii();
        Self {
            mesh,
            op,
            decomposition,
            g,
        }
    }

    /// Same mesh and operator, different nonlinearity.
    pub fn with_decomposition(&self, decomposition: Decomposition) -> Self {
        Self::new(self.mesh.clone(), self.op.clone(), decomposition)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.op
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }

    pub fn graph(&self) -> &MonotoneGraph {
        self.decomposition.graph()
    }

    pub fn nemitskii(&self) -> &NemitskiiG {
        &self.g
    }

    pub fn interior(&self) -> &[usize] {
        self.mesh.interior()
    }

    pub fn mass(&self) -> &[f64] {
        self.mesh.mass()
    }

    fn element_fluxes(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let mesh = &*self.mesh;
        let local = |e: usize| {
            let xi = mesh.gradient(u, e);
            let a = self.op.flux(mesh.element_midpoint(e), xi);
            let w = mesh.element_measure(e);
            let mut out = [0.0; 3];
            for (k, grad) in mesh.basis_gradients(e).iter().enumerate() {
                out[k] = dot(a, *grad) * w;
            }
            out
        };
        (0..mesh.num_elements())
            .into_par_iter()
            .with_min_len(ELEMENT_CHUNK)
            .map(local)
            .collect()
    }

    /// `(A u)_i = Σ_e a(x_e, ∇u|_e)·∇φ_i|_e |e|` for every node, boundary
    /// rows included. Contributions are gathered in element order.
    pub fn apply_a(&self, u: &[f64]) -> Result<NodalField> {
        self.mesh.check_field(u)?;
        let locals = self.element_fluxes(u);
        let mut out = NodalField::zeros(self.mesh.num_nodes());
        for (e, local) in locals.iter().enumerate() {
            for (k, &n) in self.mesh.element_nodes(e).iter().enumerate() {
                out[n] += local[k];
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flux residual at node {i}")));
        }
        Ok(out)
    }

    /// `Φ(u) = Σ_e φ(x_e, ∇u|_e) |e|`.
    pub fn energy_phi(&self, u: &[f64]) -> Result<f64> {
        if !self.op.has_potential() {
            return Err(Error::UnsupportedOperator(format!(
                "operator '{}' has no potential",
                self.op.name()
            )));
        }
        self.mesh.check_field(u)?;
        let mesh = &*self.mesh;
        let parts: Vec<f64> = (0..mesh.num_elements())
            .into_par_iter()
            .with_min_len(ELEMENT_CHUNK)
            .map(|e| {
                let phi = self
                    .op
                    .potential(mesh.element_midpoint(e), mesh.gradient(u, e))
                    .unwrap_or(f64::NAN);
                phi * mesh.element_measure(e)
            })
            .collect();
        Ok(parts.iter().sum())
    }

    /// `J(u) = Σ_i m_i j(u_i)`.
    pub fn functional_j(&self, u: &[f64]) -> f64 {
        let j = self.graph().potential();
        self.mass()
            .iter()
            .zip(u)
            .map(|(&m, &s)| m * j.value(s))
            .sum()
    }

    /// `b_i = m_i g(z_i)`.
    pub fn load_from(&self, z: &[f64]) -> NodalField {
        self.mass()
            .iter()
            .zip(z)
            .map(|(&m, &s)| m * self.g.eval(s))
            .collect()
    }

    /// Left-hand side of `J(u − (u−w)⁺) − J(u) + J(w + (u−w)⁺) − J(w) = 0`.
    pub fn truncation_identity_check(&self, u: &[f64], w: &[f64]) -> f64 {
        let diff: Vec<f64> = u.iter().zip(w).map(|(a, b)| a - b).collect();
        let plus = positive_part(&diff);
        let lowered: Vec<f64> = u.iter().zip(plus.iter()).map(|(a, d)| a - d).collect();
        let raised: Vec<f64> = w.iter().zip(plus.iter()).map(|(b, d)| b + d).collect();
        (self.functional_j(&lowered) - self.functional_j(u))
            + (self.functional_j(&raised) - self.functional_j(w))
    }

    /// `Σ_e ‖∇u|_e‖^p |e|`, the discrete `W^{1,p}` seminorm to the p-th power.
    pub fn seminorm_p(&self, u: &[f64]) -> f64 {
        let p = self.op.p();
        (0..self.mesh.num_elements())
            .map(|e| norm(self.mesh.gradient(u, e)).powf(p) * self.mesh.element_measure(e))
            .sum()
    }

    /// Objective of the inner variational inequality:
    /// `F(u) = Φ(u) + J(u) − ⟨b, u⟩`.
    pub fn objective(&self, u: &[f64], b: &[f64]) -> Result<f64> {
        Ok(self.energy_phi(u)? + self.functional_j(u) - pairing(b, u))
    }

    /// Matrix-free product with the unit-coefficient Laplacian stiffness.
    pub(crate) fn laplace_apply(&self, u: &[f64]) -> Vec<f64> {
        let mesh = &*self.mesh;
        let mut out = vec![0.0; mesh.num_nodes()];
        for e in 0..mesh.num_elements() {
            let xi = mesh.gradient(u, e);
            let w = mesh.element_measure(e);
            for (k, &n) in mesh.element_nodes(e).iter().enumerate() {
                out[n] += dot(xi, mesh.basis_gradients(e)[k]) * w;
            }
        }
        out
    }
}

/// `⟨a, b⟩ = Σ_i a_i b_i`.
pub fn pairing(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone_graph::{PiecewiseSpec, Side};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem_1d(n: usize, p: f64, g: PiecewiseSpec, h: PiecewiseSpec) -> DiscreteProblem {
        let mesh = Arc::new(Mesh::interval(0.0, 1.0, n).unwrap());
        let d = Decomposition::from_specs(&g, &h, Side::Right).unwrap();
        DiscreteProblem::new(mesh, OperatorSpec::p_laplacian(p).unwrap(), d)
    }

    fn problem_2d(p: f64) -> DiscreteProblem {
        let mesh = Arc::new(Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 5, 4).unwrap());
        let d = Decomposition::from_specs(
            &PiecewiseSpec::constant(1.0),
            &PiecewiseSpec::heaviside(0.1, 2.0),
            Side::Right,
        )
        .unwrap();
        DiscreteProblem::new(mesh, OperatorSpec::p_laplacian(p).unwrap(), d)
    }

    fn random_dirichlet(p: &DiscreteProblem, rng: &mut ChaCha8Rng) -> NodalField {
        let mut u = NodalField::zeros(p.mesh().num_nodes());
        for &i in p.interior() {
            u[i] = rng.gen_range(-1.0..1.0);
        }
        u
    }

    #[test]
    fn stiffness_row_for_hat_function() {
        let p = problem_1d(4, 2.0, PiecewiseSpec::default(), PiecewiseSpec::default());
        let mut u = NodalField::zeros(5);
        u[2] = 1.0;
        let au = p.apply_a(&u).unwrap();
        // Hand-assembled 3-point stencil (−1, 2, −1)/h with h = 1/4.
        let h = 0.25;
        let expected = [0.0, -1.0 / h, 2.0 / h, -1.0 / h, 0.0];
        for i in 1..4 {
            assert!((au[i] - expected[i]).abs() < 1e-12, "row {i}: {}", au[i]);
        }
        assert_eq!(&au[1..4], &[-4.0, 8.0, -4.0]);
    }

    #[test]
    fn zero_and_linear_fields() {
        let p = problem_1d(8, 2.0, PiecewiseSpec::default(), PiecewiseSpec::default());
        let zero = NodalField::zeros(9);
        assert!(p.apply_a(&zero).unwrap().iter().all(|&v| v == 0.0));
        let lin = NodalField::from_fn(p.mesh(), |x| 3.0 * x[0] - 1.0);
        let au = p.apply_a(&lin).unwrap();
        assert!(p.interior().iter().all(|&i| au[i].abs() < 1e-12));

        let p2 = problem_2d(2.0);
        let lin = NodalField::from_fn(p2.mesh(), |x| x[0] - 2.0 * x[1]);
        let au = p2.apply_a(&lin).unwrap();
        assert!(p2.interior().iter().all(|&i| au[i].abs() < 1e-12));
    }

    #[test]
    fn energy_examples() {
        let p = problem_1d(10, 2.0, PiecewiseSpec::default(), PiecewiseSpec::default());
        assert_eq!(p.energy_phi(&NodalField::zeros(11)).unwrap(), 0.0);
        // ∫₀¹ ½|1|² dx = 1/2 for u = x.
        let u = NodalField::from_fn(p.mesh(), |x| x[0]);
        assert!((p.energy_phi(&u).unwrap() - 0.5).abs() < 1e-14);

        let no_potential = OperatorSpec::custom(
            "flux_only",
            2.0,
            1.0,
            1.0,
            Arc::new(|_| 0.0),
            Arc::new(|_, xi| xi),
            None,
        )
        .unwrap();
        let q = DiscreteProblem::new(p.mesh_arc().clone(), no_potential, p.decomposition().clone());
        assert!(matches!(q.energy_phi(&u), Err(Error::UnsupportedOperator(_))));
    }

    fn fd_gradient_error(p: &DiscreteProblem, u: &NodalField) -> f64 {
        let au = p.apply_a(u).unwrap();
        let mut worst: f64 = 0.0;
        let scale = p.interior().iter().map(|&i| au[i].abs()).fold(0.0, f64::max);
        for &i in p.interior() {
            let h = 1e-6;
            let mut plus = u.clone();
            let mut minus = u.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (p.energy_phi(&plus).unwrap() - p.energy_phi(&minus).unwrap()) / (2.0 * h);
            worst = worst.max((fd - au[i]).abs() / scale);
        }
        worst
    }

    #[test]
    fn energy_gradient_matches_apply_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (p, tol) in [(2.0, 1e-6), (1.5, 1e-4), (3.0, 1e-4)] {
            for problem in [
                problem_1d(12, p, PiecewiseSpec::default(), PiecewiseSpec::default()),
                problem_2d(p),
            ] {
                for _ in 0..5 {
                    let u = random_dirichlet(&problem, &mut rng);
                    let err = fd_gradient_error(&problem, &u);
                    assert!(err < tol, "p = {p}: relative error {err}");
                }
            }
        }
    }

    #[test]
    fn discrete_coercivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [1.5, 2.0, 3.0] {
            let problem = problem_2d(p);
            for _ in 0..100 {
                let u = random_dirichlet(&problem, &mut rng);
                let lhs = pairing(&problem.apply_a(&u).unwrap(), &u);
                let rhs = problem.operator().lambda() * problem.seminorm_p(&u);
                assert!(lhs >= rhs - 1e-12 * rhs.abs());
            }
        }
    }

    #[test]
    fn functional_j_examples() {
        let p = problem_1d(10, 2.0, PiecewiseSpec::default(), PiecewiseSpec::heaviside(0.0, 1.0));
        assert_eq!(p.functional_j(&NodalField::zeros(11)), 0.0);
        // Σ m_i j(1) = Σ m_i = 1.
        let ones = NodalField::constant(11, 1.0);
        assert!((p.functional_j(&ones) - 1.0).abs() < 1e-14);
        let neg = NodalField::from_fn(p.mesh(), |x| -x[0]);
        assert_eq!(p.functional_j(&neg), 0.0);
    }

    #[test]
    fn load_examples() {
        let p = problem_1d(4, 2.0, PiecewiseSpec::constant(1.0), PiecewiseSpec::default());
        let b = p.load_from(&NodalField::from_fn(p.mesh(), |x| x[0]));
        assert_eq!(&b[..], p.mass());

        let p = problem_1d(4, 2.0, PiecewiseSpec::linear(1.0), PiecewiseSpec::default());
        assert!(p.load_from(&NodalField::zeros(5)).iter().all(|&v| v == 0.0));

        let p = problem_1d(4, 2.0, PiecewiseSpec::heaviside(0.0, 1.0), PiecewiseSpec::default());
        assert_eq!(&p.load_from(&NodalField::zeros(5))[..], p.mass());
    }

    #[test]
    fn truncation_identity_trivial_cases() {
        let p = problem_1d(10, 2.0, PiecewiseSpec::default(), PiecewiseSpec::heaviside(0.0, 1.0));
        let u = NodalField::from_fn(p.mesh(), |x| (7.0 * x[0]).sin());
        assert_eq!(p.truncation_identity_check(&u, &u), 0.0);
        let w: NodalField = u.iter().map(|v| v + 0.5).collect();
        assert_eq!(p.truncation_identity_check(&u, &w), 0.0);
    }

    proptest! {
        #[test]
        fn truncation_identity_random(
            seed in any::<u64>(), which in 0usize..3
        ) {
            let h = match which {
                0 => PiecewiseSpec::heaviside(0.0, 1.0),
                1 => PiecewiseSpec::linear(1.0).with_jump(1.0, 2.0),
                _ => PiecewiseSpec::heaviside(-0.5, 1.0).with_jump(0.4, 3.0),
            };
            let p = problem_1d(20, 2.0, PiecewiseSpec::default(), h);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: NodalField = (0..21).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w: NodalField = (0..21).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r = p.truncation_identity_check(&u, &w);
            let bound = 1e-12 * (1.0 + p.functional_j(&u).abs() + p.functional_j(&w).abs());
            prop_assert!(r.abs() <= bound, "residual {}", r);
        }

        #[test]
        fn functional_j_convex_and_nonnegative(seed in any::<u64>()) {
            let p = problem_1d(
                16, 2.0, PiecewiseSpec::default(),
                PiecewiseSpec::linear(0.5).with_jump(0.2, 1.0),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: NodalField = (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w: NodalField = (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mid: NodalField = u.iter().zip(w.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
            prop_assert!(p.functional_j(&u) >= 0.0);
            prop_assert!(
                p.functional_j(&mid) <= 0.5 * (p.functional_j(&u) + p.functional_j(&w)) + 1e-12
            );
        }
    }
}
