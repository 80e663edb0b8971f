//! The inner map `z ↦ Tz`: for a frozen load `b = M g(z)`, find the Dirichlet
//! field `u` with
//!
//! ```text
//! ⟨A u, w − u⟩ + J(w) − J(u) ≥ ⟨b, w − u⟩   for every Dirichlet field w,
//! ```
//!
//! i.e. the minimizer of the convex objective `F(u) = Φ(u) + J(u) − ⟨b, u⟩`.
//!
//! Two algorithms are available. The general one is accelerated
//! forward-backward splitting in the lumped-mass metric: a gradient step on
//! `Φ` followed by the nodal resolvent of `β`, with backtracking and a
//! function-value restart so that `F` never increases. Linear fluxes
//! (`p = 2`) use a semismooth Newton (active-set) iteration on the same
//! fixed-point equation with a banded Cholesky solve per step, safeguarded by
//! the same descent test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::DiscreteProblem;
use crate::banded::BandedSpd;
use crate::discretization::{compare, NodalField};
use crate::error::{Error, Result};
use crate::monotone_graph::ResolventPiece;
use crate::operator::dot;

const NODE_CHUNK: usize = 4096;
const MAX_NEWTON_STEPS: usize = 200;
const RESIDUAL_CHECK_EVERY: usize = 10;
const ROUNDOFF_SAFETY: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    /// Active-set Newton for p-Laplacian fluxes, forward-backward otherwise.
    Auto,
    ForwardBackward,
    ActiveSet,
}

#[derive(Clone, Debug)]
pub struct ViTolerances {
    /// Bound on the prox fixed-point residual `‖u − prox_1(u)‖_∞`.
    pub stat: f64,
    pub max_iterations: usize,
    pub path: SolverPath,
}

impl Default for ViTolerances {
    fn default() -> Self {
        Self {
            stat: 1e-9,
            max_iterations: 500_000,
            path: SolverPath::Auto,
        }
    }
}

impl ViTolerances {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            stat: if dim == 1 { 1e-9 } else { 1e-7 },
            ..Self::default()
        }
    }

    pub fn with_stat(mut self, stat: f64) -> Self {
        self.stat = stat;
        self
    }

    pub fn with_path(mut self, path: SolverPath) -> Self {
        self.path = path;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ViSolution {
    pub u: NodalField,
    /// Selection `v_i ∈ β(u_i)` closest to `(b_i − (Au)_i)/m_i`.
    pub v: NodalField,
    pub residual: f64,
    /// max over interior nodes of `|(Au)_i + m_i v_i − b_i| / m_i`.
    pub stationarity: f64,
    pub inner_iterations: usize,
    pub energy_trace: Vec<f64>,
    pub residual_history: Vec<f64>,
    /// Residual that rounding alone produces at `u`; see [`roundoff_floor`].
    /// Convergence is declared at `max(stat, residual_floor)`.
    pub residual_floor: f64,
    pub path: SolverPath,
}

/// `u⁺_i = (I + τβ)⁻¹(u_i − τ((Au)_i − b_i)/m_i)` at interior nodes, zero on
/// the boundary.
pub fn prox_step(p: &DiscreteProblem, u: &[f64], tau: f64, b: &[f64]) -> Result<NodalField> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidResolventParameter(tau));
    }
    let grad = p.apply_a(u)?;
    Ok(prox_with_gradient(p, u, &grad, tau, b))
}

fn prox_with_gradient(
    p: &DiscreteProblem,
    y: &[f64],
    grad: &[f64],
    tau: f64,
    b: &[f64],
) -> NodalField {
    let graph = p.graph();
    let mass = p.mass();
    let values: Vec<f64> = p
        .interior()
        .par_iter()
        .with_min_len(NODE_CHUNK)
        .map(|&i| {
            let w = y[i] - tau * (grad[i] - b[i]) / mass[i];
            graph.resolvent_unchecked(tau, w).0
        })
        .collect();
    let mut out = NodalField::zeros(y.len());
    for (&i, v) in p.interior().iter().zip(values) {
        out[i] = v;
    }
    out
}

/// `‖u − prox_step(u, 1, b)‖_∞` over interior nodes.
pub fn prox_residual(p: &DiscreteProblem, u: &[f64], b: &[f64]) -> Result<f64> {
    let grad = p.apply_a(u)?;
    Ok(residual_with_gradient(p, u, &grad, b))
}

/// Projects `(b − Au)/m` onto `β(u)` nodally; returns the selection and the
/// largest projection distance over interior nodes.
pub fn extract_selection(p: &DiscreteProblem, u: &[f64], b: &[f64]) -> Result<(NodalField, f64)> {
    let au = p.apply_a(u)?;
    let graph = p.graph();
    let mass = p.mass();
    let mut v = NodalField::zeros(u.len());
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = graph.interval(u[i]).project(0.0);
    }
    let mut worst: f64 = 0.0;
    for &i in p.interior() {
        let raw = (b[i] - au[i]) / mass[i];
        let iv = graph.interval(u[i]);
        v[i] = iv.project(raw);
        worst = worst.max(iv.distance(raw));
    }
    Ok((v, worst))
}

fn dirichlet_copy(p: &DiscreteProblem, u: &[f64]) -> NodalField {
    let mut out = NodalField::zeros(u.len());
    for &i in p.interior() {
        out[i] = u[i];
    }
    out
}

/// Solves the variational inequality with load `b = M g(z)`.
pub fn solve_vi(
    p: &DiscreteProblem,
    z: &[f64],
    u_init: &[f64],
    tol: &ViTolerances,
) -> Result<ViSolution> {
    p.mesh().check_field(z)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("load field z".into()));
    }
    let b = p.load_from(z);
    solve_vi_with_load(p, &b, u_init, tol)
}

pub fn solve_vi_with_load(
    p: &DiscreteProblem,
    b: &[f64],
    u_init: &[f64],
    tol: &ViTolerances,
) -> Result<ViSolution> {
    p.mesh().check_field(b)?;
    p.mesh().check_field(u_init)?;
    if !p.operator().has_potential() {
        return Err(Error::UnsupportedOperator(format!(
            "operator '{}' has no potential; the inner solver needs one",
            p.operator().name()
        )));
    }
    let path = match tol.path {
        SolverPath::Auto if p.operator().is_p_laplacian() => SolverPath::ActiveSet,
        SolverPath::Auto => SolverPath::ForwardBackward,
        SolverPath::ActiveSet if !p.operator().is_p_laplacian() => {
            return Err(Error::UnsupportedOperator(format!(
                "active-set path needs a p-Laplacian flux, got '{}'",
                p.operator().name()
            )))
        }
        other => other,
    };

    let mut trace = Vec::new();
    let mut history = Vec::new();
    let start = dirichlet_copy(p, u_init);
    let (u, iterations, used) = match path {
        SolverPath::ActiveSet => {
            match active_set(p, b, start, tol, &mut trace, &mut history)? {
                Outcome::Converged(u, k) => (u, k, SolverPath::ActiveSet),
                Outcome::GaveUp(u, k) => {
                    let budget = tol.max_iterations.saturating_sub(k);
                    let (u, m) =
                        forward_backward(p, b, u, tol.stat, budget, &mut trace, &mut history)?;
                    (u, k + m, SolverPath::ForwardBackward)
                }
            }
        }
        _ => {
            let (u, k) = forward_backward(
                p,
                b,
                start,
                tol.stat,
                tol.max_iterations,
                &mut trace,
                &mut history,
            )?;
            (u, k, SolverPath::ForwardBackward)
        }
    };

    let residual = *history.last().expect("residual recorded before returning");
    let (v, stationarity) = extract_selection(p, &u, b)?;
    let residual_floor = roundoff_floor(p, &u, b);
    Ok(ViSolution {
        u,
        v,
        residual,
        stationarity,
        inner_iterations: iterations,
        energy_trace: trace,
        residual_history: history,
        residual_floor,
        path: used,
    })
}

/// Estimate of the prox residual that rounding alone produces at `u`.
///
/// Each element gradient carries a rounding error of about
/// `ε max_e|u| Σ_k |∇φ_k|`; the flux change it causes, plus `ε|a|` and
/// `ε|b_i|`, is assembled like `Au` and divided by the lumped mass. Fine
/// meshes make this large because `m_i` shrinks while flux errors do not.
pub fn roundoff_floor(p: &DiscreteProblem, u: &[f64], b: &[f64]) -> f64 {
    let mesh = p.mesh();
    let op = p.operator();
    let mut acc = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        let x = mesh.element_midpoint(e);
        let xi = mesh.gradient(u, e);
        let nodes = mesh.element_nodes(e);
        let grads = mesh.basis_gradients(e);
        let u_max = nodes.iter().map(|&n| u[n].abs()).fold(0.0, f64::max);
        let g_sum: f64 = grads.iter().map(|g| dot(*g, *g).sqrt()).sum();
        let delta = f64::EPSILON * u_max * g_sum;
        let r = dot(xi, xi).sqrt();
        let dir = if r > 0.0 { [xi[0] / r, xi[1] / r] } else { [1.0, 0.0] };
        let a = op.flux(x, xi);
        let a2 = op.flux(x, [xi[0] + delta * dir[0], xi[1] + delta * dir[1]]);
        let da = dot([a2[0] - a[0], a2[1] - a[1]], [a2[0] - a[0], a2[1] - a[1]]).sqrt()
            + f64::EPSILON * dot(a, a).sqrt();
        let w = mesh.element_measure(e);
        for (k, &n) in nodes.iter().enumerate() {
            acc[n] += da * dot(grads[k], grads[k]).sqrt() * w;
        }
    }
    let mass = p.mass();
    p.interior()
        .iter()
        .map(|&i| ROUNDOFF_SAFETY * (acc[i] + f64::EPSILON * b[i].abs()) / mass[i])
        .fold(0.0, f64::max)
}

/// Rounding allowance on objective comparisons. Near the minimizer `F`
/// changes by the square of the residual, far below the rounding level of `F`.
fn descent_slack(f: f64) -> f64 {
    1e-14 * (1.0 + f.abs())
}

/// Step size from a power-iteration estimate of the largest eigenvalue of
/// the unit Laplacian stiffness: `τ₀ = m_min / (α L)`.
fn initial_step(p: &DiscreteProblem) -> f64 {
    let n = p.mesh().num_nodes();
    let interior = p.interior();
    let mut v = vec![0.0; n];
    for (k, &i) in interior.iter().enumerate() {
        v[i] = 1.0 + 0.5 * ((k as f64) * 1.3).sin();
    }
    let mut estimate = 1.0;
    for _ in 0..30 {
        let kv = p.laplace_apply(&v);
        let norm = interior.iter().map(|&i| kv[i] * kv[i]).sum::<f64>().sqrt();
        let prev = interior.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
        if norm == 0.0 || prev == 0.0 {
            break;
        }
        estimate = norm / prev;
        for &i in interior {
            v[i] = kv[i] / norm;
        }
    }
    let m_min = interior
        .iter()
        .map(|&i| p.mass()[i])
        .fold(f64::INFINITY, f64::min);
    let scale = p.operator().alpha().max(f64::MIN_POSITIVE);
    m_min / (scale * estimate)
}

/// Accelerated proximal gradient with backtracking and restart. The step is
/// accepted when `⟨∇Φ(z) − ∇Φ(y), z − y⟩ ≤ ‖z − y‖²_M / (2τ)`, which for
/// convex `Φ` implies the usual quadratic upper bound and, unlike a
/// comparison of energies, stays accurate near the minimizer. Momentum is
/// reset when it points against the last step or when an extrapolated step
/// would raise `F`.
fn forward_backward(
    p: &DiscreteProblem,
    b: &[f64],
    mut x: NodalField,
    tol: f64,
    budget: usize,
    trace: &mut Vec<f64>,
    history: &mut Vec<f64>,
) -> Result<(NodalField, usize)> {
    let mass = p.mass();
    let interior = p.interior();
    let mut fx = p.objective(&x, b)?;
    trace.push(fx);
    let mut grad_x = p.apply_a(&x)?;
    let r0 = residual_with_gradient(p, &x, &grad_x, b);
    history.push(r0);
    if r0 <= tol || r0 <= roundoff_floor(p, &x, b) {
        return Ok((x, 0));
    }

    let mut x_prev = x.clone();
    let mut t: f64 = 1.0;
    let mut tau = initial_step(p);

    for it in 1..=budget {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let (y, grad_y) = if beta > 0.0 {
            let mut y = x.clone();
            for &i in interior {
                y[i] += beta * (x[i] - x_prev[i]);
            }
            let g = p.apply_a(&y)?;
            (y, g)
        } else {
            (x.clone(), grad_x.clone())
        };
        let (z, grad_z) = loop {
            let z = prox_with_gradient(p, &y, &grad_y, tau, b);
            let grad_z = p.apply_a(&z)?;
            let mut curvature = 0.0;
            let mut quad = 0.0;
            for &i in interior {
                let d = z[i] - y[i];
                curvature += (grad_z[i] - grad_y[i]) * d;
                quad += mass[i] * d * d;
            }
            if curvature <= quad / (2.0 * tau) {
                break (z, grad_z);
            }
            tau *= 0.5;
        };
        let fz = p.objective(&z, b)?;
        let against: f64 = interior
            .iter()
            .map(|&i| mass[i] * (y[i] - z[i]) * (z[i] - x[i]))
            .sum();
        if beta > 0.0 && fz > fx + descent_slack(fx) {
            x_prev = x.clone();
            t = 1.0;
            continue;
        }
        x_prev = std::mem::replace(&mut x, z);
        grad_x = grad_z;
        fx = fz;
        trace.push(fx);
        t = if against > 0.0 { 1.0 } else { t_next };

        if it % RESIDUAL_CHECK_EVERY == 0 {
            let r = residual_with_gradient(p, &x, &grad_x, b);
            history.push(r);
            if r <= tol || r <= roundoff_floor(p, &x, b) {
                return Ok((x, it));
            }
        }
        tau *= 1.1;
    }
    let r = residual_with_gradient(p, &x, &grad_x, b);
    history.push(r);
    if r <= tol || r <= roundoff_floor(p, &x, b) {
        return Ok((x, budget));
    }
    Err(Error::InnerNotConverged {
        iterations: budget,
        residual: r,
        residual_history: history.clone(),
    })
}

fn residual_with_gradient(p: &DiscreteProblem, u: &[f64], grad: &[f64], b: &[f64]) -> f64 {
    let next = prox_with_gradient(p, u, grad, 1.0, b);
    p.interior()
        .iter()
        .map(|&i| (next[i] - u[i]).abs())
        .fold(0.0, f64::max)
}

enum Outcome {
    Converged(NodalField, usize),
    GaveUp(NodalField, usize),
}

/// Interior numbering and band structure of the P1 stiffness pattern.
struct Pattern {
    dof_of: Vec<usize>,
    bandwidth: usize,
}

impl Pattern {
    fn new(p: &DiscreteProblem) -> Self {
        let mesh = p.mesh();
        let mut dof_of = vec![usize::MAX; mesh.num_nodes()];
        for (d, &i) in p.interior().iter().enumerate() {
            dof_of[i] = d;
        }
        let mut bandwidth = 0;
        for e in 0..mesh.num_elements() {
            for &a in mesh.element_nodes(e) {
                for &c in mesh.element_nodes(e) {
                    if dof_of[a] != usize::MAX && dof_of[c] != usize::MAX {
                        bandwidth = bandwidth.max(dof_of[a].abs_diff(dof_of[c]));
                    }
                }
            }
        }
        Self { dof_of, bandwidth }
    }

    /// Jacobian of `u ↦ Au` for `a(x, ξ) = c(x)‖ξ‖^{p−2}ξ`, restricted to
    /// interior nodes. The norm is regularized to `(‖ξ‖² + ε²)^{1/2}` so the
    /// matrix stays positive definite where the gradient vanishes.
    fn tangent(&self, p: &DiscreteProblem, u: &[f64], eps: f64) -> BandedSpd {
        let mesh = p.mesh();
        let op = p.operator();
        let pexp = op.p();
        let mut matrix = BandedSpd::zeros(p.interior().len(), self.bandwidth);
        for e in 0..mesh.num_elements() {
            let c = op
                .p_laplacian_weight(mesh.element_midpoint(e))
                .expect("p-Laplacian flux");
            let xi = mesh.gradient(u, e);
            let (s, q) = if pexp == 2.0 {
                (1.0, 0.0)
            } else {
                let r2 = dot(xi, xi) + eps * eps;
                let s = r2.powf(0.5 * (pexp - 2.0));
                (s, (pexp - 2.0) / r2)
            };
            let w = c * s * mesh.element_measure(e);
            let nodes = mesh.element_nodes(e);
            let grads = mesh.basis_gradients(e);
            for (k, &a) in nodes.iter().enumerate() {
                let da = self.dof_of[a];
                if da == usize::MAX {
                    continue;
                }
                for (l, &cn) in nodes.iter().enumerate().take(k + 1) {
                    let dc = self.dof_of[cn];
                    if dc == usize::MAX {
                        continue;
                    }
                    let v = w * (dot(grads[k], grads[l]) + q * dot(xi, grads[k]) * dot(xi, grads[l]));
                    matrix.add(da, dc, v);
                }
            }
        }
        matrix
    }
}

/// Typical gradient size of the solution, from `|∇u|^{p−1} ≈ ‖b/m‖_∞ L`.
fn gradient_scale(p: &DiscreteProblem, b: &[f64]) -> f64 {
    let mass = p.mass();
    let load = p
        .interior()
        .iter()
        .map(|&i| (b[i] / mass[i]).abs())
        .fold(0.0, f64::max);
    let (lo, hi) = p.mesh().extent();
    let length = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = (load * length / p.operator().lambda()).powf(1.0 / (p.operator().p() - 1.0));
    if scale > 0.0 && scale.is_finite() {
        scale
    } else {
        1.0
    }
}

/// Semismooth Newton on `u = (I + β)⁻¹(u − M⁻¹(Au − b))`.
///
/// Each step classifies every interior node by the piece of `h` the resolvent
/// lands on: nodes on a jump are pinned to the jump location, the rest obey
/// the affine law `h(s) = value + slope (s − anchor)` and enter a Newton
/// step on `Au + M h(u) = b` with the tangent of `A`. For linear fluxes a
/// classification that reproduces itself is an exact solution. Steps are
/// damped until `F` decreases.
fn active_set(
    p: &DiscreteProblem,
    b: &[f64],
    mut u: NodalField,
    tol: &ViTolerances,
    trace: &mut Vec<f64>,
    history: &mut Vec<f64>,
) -> Result<Outcome> {
    let pattern = Pattern::new(p);
    let graph = p.graph();
    let mass = p.mass();
    let interior = p.interior();
    let linear = p.operator().p() == 2.0;
    let eps_floor = 1e-8 * gradient_scale(p, b);
    let fixed = if linear {
        Some(pattern.tangent(p, &u, 0.0))
    } else {
        None
    };
    let mut f = p.objective(&u, b)?;
    trace.push(f);

    let steps = MAX_NEWTON_STEPS.min(tol.max_iterations.max(1));
    let mut short_steps = 0;
    for step in 0..steps {
        let au = p.apply_a(&u)?;
        let mut pieces = Vec::with_capacity(interior.len());
        let mut residual: f64 = 0.0;
        for &i in interior {
            let w = u[i] - (au[i] - b[i]) / mass[i];
            let (x, piece) = graph.resolvent_unchecked(1.0, w);
            residual = residual.max((x - u[i]).abs());
            pieces.push(piece);
        }
        history.push(residual);
        if residual <= tol.stat || residual <= roundoff_floor(p, &u, b) {
            return Ok(Outcome::Converged(u, step));
        }

        let mut matrix = match &fixed {
            Some(m) => m.clone(),
            None => pattern.tangent(p, &u, eps_floor),
        };
        let mut rhs = vec![0.0; interior.len()];
        let mut pinned = Vec::new();
        for (d, (&i, piece)) in interior.iter().zip(&pieces).enumerate() {
            match *piece {
                ResolventPiece::Affine {
                    anchor,
                    value,
                    slope,
                } => {
                    matrix.add(d, d, mass[i] * slope);
                    let h = value + slope * (u[i] - anchor);
                    rhs[d] = b[i] - au[i] - mass[i] * h;
                }
                ResolventPiece::Flat { at } => pinned.push((d, at - u[i])),
            }
        }
        for &(d, delta) in &pinned {
            matrix.fix_dof(d, delta, &mut rhs);
        }
        matrix.factor().map_err(Error::LinearSolve)?;
        matrix.solve_factored(&mut rhs);
        for &(d, delta) in &pinned {
            rhs[d] = delta;
        }

        let mut accepted = false;
        let mut theta = 1.0;
        while theta > 1e-10 {
            let mut trial = u.clone();
            for &i in interior {
                let d = pattern.dof_of[i];
                trial[i] = if theta == 1.0 {
                    u[i] + rhs[d]
                } else {
                    u[i] + theta * rhs[d]
                };
            }
            if theta == 1.0 {
                // Land pinned nodes exactly on their jump.
                for (&(d, delta), _) in pinned.iter().zip(0..) {
                    let i = interior[d];
                    trial[i] = u[i] + delta;
                }
            }
            let f_trial = p.objective(&trial, b)?;
            if f_trial <= f + descent_slack(f) {
                u = trial;
                f = f_trial;
                trace.push(f);
                accepted = true;
                break;
            }
            theta *= 0.5;
        }
        if !accepted {
            return Ok(Outcome::GaveUp(u, step + 1));
        }
        // Heavily damped steps mean the classification is not settling;
        // forward-backward is the better tool from here.
        short_steps = if theta < 0.1 { short_steps + 1 } else { 0 };
        if short_steps >= 3 {
            return Ok(Outcome::GaveUp(u, step + 1));
        }
    }
    Ok(Outcome::GaveUp(u, steps))
}

/// Solves at `z1 ≤ z2` and checks `T z1 ≤ T z2 + tol` nodally.
pub fn check_t_monotone(
    p: &DiscreteProblem,
    z1: &[f64],
    z2: &[f64],
    tol: f64,
    vi_tol: &ViTolerances,
) -> Result<bool> {
    if !compare(z1, z2, 0.0) {
        return Err(Error::Precondition("check_t_monotone needs z1 <= z2".into()));
    }
    let u1 = solve_vi(p, z1, z1, vi_tol)?;
    let u2 = solve_vi(p, z2, z2, vi_tol)?;
    Ok(compare(&u1.u, &u2.u, tol))
}
