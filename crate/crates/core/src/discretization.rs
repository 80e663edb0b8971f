//! Structured P1 meshes on an interval or a rectangle, nodal fields and
//! lumped masses.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::operator::Point;

#[derive(Clone, Debug, PartialEq)]
pub enum MeshConfig {
    Interval { x: [f64; 2], n: usize },
    Rectangle {
        x: [f64; 2],
        y: [f64; 2],
        nx: usize,
        ny: usize,
    },
}

/// Nodal values of a P1 function.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodalField(Vec<f64>);

impl NodalField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        Self(mesh.coords.iter().map(|&x| f(x)).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// True iff the field vanishes on every boundary node.
    pub fn is_dirichlet(&self, mesh: &Mesh) -> bool {
        mesh.boundary_nodes().all(|i| self.0[i] == 0.0)
    }

    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl Deref for NodalField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for NodalField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl FromIterator<f64> for NodalField {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `max(u, 0)` componentwise.
pub fn positive_part(u: &[f64]) -> NodalField {
    u.iter().map(|&v| v.max(0.0)).collect()
}

pub fn pointwise_min(u: &[f64], w: &[f64]) -> NodalField {
    u.iter().zip(w).map(|(&a, &b)| a.min(b)).collect()
}

pub fn pointwise_max(u: &[f64], w: &[f64]) -> NodalField {
    u.iter().zip(w).map(|(&a, &b)| a.max(b)).collect()
}

/// `u ≤ w + tol` at every node.
pub fn compare(u: &[f64], w: &[f64], tol: f64) -> bool {
    u.len() == w.len() && u.iter().zip(w).all(|(&a, &b)| a <= b + tol)
}

/// Largest `u_i − w_i` and the node where it occurs.
pub fn max_excess(u: &[f64], w: &[f64]) -> (f64, usize) {
    u.iter()
        .zip(w)
        .map(|(a, b)| a - b)
        .enumerate()
        .fold((f64::NEG_INFINITY, 0), |(best, at), (i, d)| {
            if d > best {
                (d, i)
            } else {
                (best, at)
            }
        })
}

/// Diagonal mass matrix: `m_i = ∫ φ_i dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct LumpedMass(Vec<f64>);

impl Deref for LumpedMass {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<Point>,
    /// Node indices per element; 1D elements use the first two slots.
    elements: Vec<[usize; 3]>,
    measures: Vec<f64>,
    midpoints: Vec<Point>,
    basis_gradients: Vec<[Point; 3]>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    mass: LumpedMass,
    extent: (Point, Point),
    cells: (usize, usize),
}

impl Mesh {
    pub fn build(config: &MeshConfig) -> Result<Self> {
        match *config {
            MeshConfig::Interval { x, n } => Self::interval(x[0], x[1], n),
            MeshConfig::Rectangle { x, y, nx, ny } => Self::rectangle(x, y, nx, ny),
        }
    }

    /// `n` uniform cells on `[x0, x1]`.
    pub fn interval(x0: f64, x1: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidMesh(format!("need at least 2 cells, got {n}")));
        }
        if !(x0.is_finite() && x1.is_finite() && x1 > x0) {
            return Err(Error::InvalidMesh(format!("invalid interval [{x0}, {x1}]")));
        }
        let h = (x1 - x0) / n as f64;
        let coords: Vec<Point> = (0..=n)
            .map(|i| {
                let x = if i == n { x1 } else { x0 + i as f64 * h };
                [x, 0.0]
            })
            .collect();
        let elements: Vec<[usize; 3]> = (0..n).map(|e| [e, e + 1, usize::MAX]).collect();
        let mut boundary = vec![false; n + 1];
        boundary[0] = true;
        boundary[n] = true;
        Ok(Self::assemble(
            1,
            coords,
            elements,
            boundary,
            ([x0, 0.0], [x1, 0.0]),
            (n, 0),
        ))
    }

    /// `nx × ny` cells on a rectangle, each cut along its rising diagonal.
    pub fn rectangle(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2x2 cells, got {nx}x{ny}"
            )));
        }
        if !(x.iter().chain(&y).all(|v| v.is_finite()) && x[1] > x[0] && y[1] > y[0]) {
            return Err(Error::InvalidMesh(format!("invalid rectangle {x:?} x {y:?}")));
        }
        let hx = (x[1] - x[0]) / nx as f64;
        let hy = (y[1] - y[0]) / ny as f64;
        let node = |i: usize, j: usize| j * (nx + 1) + i;
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let px = if i == nx { x[1] } else { x[0] + i as f64 * hx };
                let py = if j == ny { y[1] } else { y[0] + j as f64 * hy };
                coords.push([px, py]);
                boundary.push(i == 0 || j == 0 || i == nx || j == ny);
            }
        }
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            }
        }
        Ok(Self::assemble(
            2,
            coords,
            elements,
            boundary,
            ([x[0], y[0]], [x[1], y[1]]),
            (nx, ny),
        ))
    }

    fn assemble(
        dim: usize,
        coords: Vec<Point>,
        elements: Vec<[usize; 3]>,
        boundary: Vec<bool>,
        extent: (Point, Point),
        cells: (usize, usize),
    ) -> Self {
        let per = dim + 1;
        let mut measures = Vec::with_capacity(elements.len());
        let mut midpoints = Vec::with_capacity(elements.len());
        let mut basis_gradients = Vec::with_capacity(elements.len());
        let mut mass = vec![0.0; coords.len()];
        for el in &elements {
            let (measure, mid, grads) = if dim == 1 {
                let (a, b) = (coords[el[0]][0], coords[el[1]][0]);
                let h = b - a;
                (
                    h,
                    [0.5 * (a + b), 0.0],
                    [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]],
                )
            } else {
                let [p0, p1, p2] = [coords[el[0]], coords[el[1]], coords[el[2]]];
                let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
                (
                    0.5 * det,
                    [
                        (p0[0] + p1[0] + p2[0]) / 3.0,
                        (p0[1] + p1[1] + p2[1]) / 3.0,
                    ],
                    [
                        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
                    ],
                )
            };
            for &n in &el[..per] {
                mass[n] += measure / per as f64;
            }
            measures.push(measure);
            midpoints.push(mid);
            basis_gradients.push(grads);
        }
        let interior = (0..coords.len()).filter(|&i| !boundary[i]).collect();
        Self {
            dim,
            coords,
            elements,
            measures,
            midpoints,
            basis_gradients,
            boundary,
            interior,
            mass: LumpedMass(mass),
            extent,
            cells,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.dim + 1]
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    pub fn element_midpoint(&self, e: usize) -> Point {
        self.midpoints[e]
    }

    /// Gradients of the local hat functions on element `e`.
    pub fn basis_gradients(&self, e: usize) -> &[Point] {
        &self.basis_gradients[e][..self.dim + 1]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.coords.len()).filter(|&i| self.boundary[i])
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn mass(&self) -> &LumpedMass {
        &self.mass
    }

    /// Lower-left and upper-right corners.
    pub fn extent(&self) -> (Point, Point) {
        self.extent
    }

    /// Cells per direction (`ny = 0` in 1D).
    pub fn cells(&self) -> (usize, usize) {
        self.cells
    }

    pub fn domain_measure(&self) -> f64 {
        let (lo, hi) = self.extent;
        if self.dim == 1 {
            hi[0] - lo[0]
        } else {
            (hi[0] - lo[0]) * (hi[1] - lo[1])
        }
    }

    /// Exact (element-constant) gradient of the P1 interpolant of `u`.
    #[inline]
    pub fn gradient(&self, u: &[f64], e: usize) -> Point {
        let grads = &self.basis_gradients[e];
        let nodes = &self.elements[e];
        let mut g = [0.0, 0.0];
        for k in 0..=self.dim {
            let v = u[nodes[k]];
            g[0] += v * grads[k][0];
            g[1] += v * grads[k][1];
        }
        g
    }

    pub fn check_field(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_nodes() {
            return Err(Error::FieldLength {
                expected: self.num_nodes(),
                got: u.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_mass_is_hat_integrals() {
        let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
        assert_eq!(mesh.num_nodes(), 5);
        let h = 0.25;
        assert_eq!(&mesh.mass()[..], &[h / 2.0, h, h, h, h / 2.0]);
        assert_eq!(mesh.interior(), &[1, 2, 3]);
    }

    #[test]
    fn square_mass_sums_to_area() {
        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 2, 2).unwrap();
        assert_eq!(mesh.num_nodes(), 9);
        assert_eq!(mesh.num_elements(), 8);
        // Oracle: every triangle has area 1/8 and gives a third to each vertex.
        let oracle: f64 = (0..8).map(|_| 3.0 * (0.125 / 3.0)).sum();
        let total: f64 = mesh.mass().iter().sum();
        assert!((total - oracle).abs() < 1e-15 && (total - 1.0).abs() < 1e-15);
        assert!(mesh.mass().iter().all(|&m| m > 0.0));
        assert_eq!(mesh.interior(), &[4]);
        assert!((0..8).all(|e| mesh.element_measure(e) > 0.0));
    }

    #[test]
    fn mass_matches_domain_measure() {
        let mesh = Mesh::rectangle([-1.0, 2.0], [0.5, 1.25], 7, 5).unwrap();
        let total: f64 = mesh.mass().iter().sum();
        assert!((total - mesh.domain_measure()).abs() <= 1e-12 * mesh.domain_measure());
        let mesh = Mesh::interval(-0.3, 0.7, 13).unwrap();
        let total: f64 = mesh.mass().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rejects_coarse_or_degenerate_meshes() {
        assert!(Mesh::interval(0.0, 1.0, 1).is_err());
        assert!(Mesh::interval(1.0, 0.0, 4).is_err());
        assert!(Mesh::rectangle([0.0, 1.0], [0.0, 1.0], 1, 4).is_err());
        assert!(Mesh::rectangle([0.0, 1.0], [0.0, 0.0], 4, 4).is_err());
    }

    #[test]
    fn gradients_reproduce_linear_fields() {
        let mesh = Mesh::interval(0.0, 1.0, 6).unwrap();
        let u = NodalField::from_fn(&mesh, |x| x[0]);
        for e in 0..mesh.num_elements() {
            let g = mesh.gradient(&u, e);
            assert!((g[0] - 1.0).abs() < 1e-12);
        }
        let c = NodalField::constant(mesh.num_nodes(), 3.0);
        assert!((0..6).all(|e| mesh.gradient(&c, e)[0].abs() < 1e-12));

        let mesh = Mesh::rectangle([0.0, 1.0], [0.0, 2.0], 3, 5).unwrap();
        let u = NodalField::from_fn(&mesh, |x| x[0] + 2.0 * x[1]);
        for e in 0..mesh.num_elements() {
            let g = mesh.gradient(&u, e);
            assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn order_operations() {
        let u = [-1.0, 0.0, 2.0];
        assert_eq!(&positive_part(&u)[..], &[0.0, 0.0, 2.0]);
        let diff: Vec<f64> = u.iter().zip(&u).map(|(a, b)| a - b).collect();
        assert!(positive_part(&diff).iter().all(|&v| v == 0.0));
        let shifted: Vec<f64> = u.iter().map(|v| v + 1e-12).collect();
        assert!(compare(&u, &shifted, 1e-10));
        assert!(!compare(&shifted, &u, 0.0));
        assert_eq!(&pointwise_min(&u, &[0.0, 0.0, 0.0])[..], &[-1.0, 0.0, 0.0]);
        assert_eq!(&pointwise_max(&u, &[0.0, 0.0, 0.0])[..], &[0.0, 0.0, 2.0]);
        assert_eq!(max_excess(&[1.0, 3.0], &[0.0, 1.0]), (2.0, 1));
    }

    #[test]
    fn dirichlet_flag() {
        let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
        let u = NodalField::from_fn(&mesh, |x| x[0] * (1.0 - x[0]));
        assert!(u.is_dirichlet(&mesh));
        let w = NodalField::from_fn(&mesh, |x| x[0]);
        assert!(!w.is_dirichlet(&mesh));
    }
}
