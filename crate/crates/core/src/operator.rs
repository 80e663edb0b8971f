//! Leray-Lions fluxes `a(x, ξ)` with sampled checks of coercivity, strict
//! monotonicity and growth.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// A point or vector in the plane; 1D problems leave the second slot at zero.
pub type Point = [f64; 2];

pub type FluxFn = dyn Fn(Point, Point) -> Point + Send + Sync;
pub type PotentialFn = dyn Fn(Point, Point) -> f64 + Send + Sync;
pub type SpatialFn = dyn Fn(Point) -> f64 + Send + Sync;

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Clone)]
enum Kind {
    PLaplacian { weight: Option<Arc<SpatialFn>> },
    Custom,
}

#[derive(Clone)]
pub struct OperatorSpec {
    name: String,
    p: f64,
    lambda: f64,
    alpha: f64,
    k: Arc<SpatialFn>,
    flux: Arc<FluxFn>,
    potential: Option<Arc<PotentialFn>>,
    kind: Kind,
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("name", &self.name)
            .field("p", &self.p)
            .field("lambda", &self.lambda)
            .field("alpha", &self.alpha)
            .field("has_potential", &self.potential.is_some())
            .finish()
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

#[inline]
fn p_laplacian_flux(p: f64, c: f64, xi: Point) -> Point {
    let n = norm(xi);
    if n == 0.0 {
        return [0.0, 0.0];
    }
    let scale = if p == 2.0 { c } else { c * n.powf(p - 2.0) };
    [scale * xi[0], scale * xi[1]]
}

impl OperatorSpec {
    /// `a(x, ξ) = ‖ξ‖^{p−2} ξ`.
    pub fn p_laplacian(p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self {
            name: "p_laplacian".into(),
            p,
            lambda: 1.0,
            alpha: 1.0,
            k: Arc::new(|_| 0.0),
            flux: Arc::new(move |_, xi| p_laplacian_flux(p, 1.0, xi)),
            potential: Some(Arc::new(move |_, xi| norm(xi).powf(p) / p)),
            kind: Kind::PLaplacian { weight: None },
        })
    }

    /// `a(x, ξ) = c(x) ‖ξ‖^{p−2} ξ` with `0 < c_min ≤ c(x) ≤ c_max`.
    pub fn weighted_p_laplacian(
        p: f64,
        weight: Arc<SpatialFn>,
        c_min: f64,
        c_max: f64,
    ) -> Result<Self> {
        check_exponent(p)?;
        if !(c_min > 0.0 && c_max >= c_min && c_max.is_finite()) {
            return Err(Error::InvalidOperator(format!(
                "weight bounds must satisfy 0 < c_min <= c_max < inf, got [{c_min}, {c_max}]"
            )));
        }
        let w = weight.clone();
        let wp = weight.clone();
        Ok(Self {
            name: "weighted_p_laplacian".into(),
            p,
            lambda: c_min,
            alpha: c_max,
            k: Arc::new(|_| 0.0),
            flux: Arc::new(move |x, xi| p_laplacian_flux(p, w(x), xi)),
            potential: Some(Arc::new(move |x, xi| wp(x) * norm(xi).powf(p) / p)),
            kind: Kind::PLaplacian {
                weight: Some(weight),
            },
        })
    }

    /// An arbitrary flux with user-declared constants. Nothing here checks
    /// the hypotheses; run [`validate`] for that.
    pub fn custom(
        name: impl Into<String>,
        p: f64,
        lambda: f64,
        alpha: f64,
        k: Arc<SpatialFn>,
        flux: Arc<FluxFn>,
        potential: Option<Arc<PotentialFn>>,
    ) -> Result<Self> {
        check_exponent(p)?;
        if !(lambda > 0.0 && lambda.is_finite()) || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidOperator(format!(
                "need lambda > 0 and alpha >= 0, got lambda = {lambda}, alpha = {alpha}"
            )));
        }
        Ok(Self {
            name: name.into(),
            p,
            lambda,
            alpha,
            k,
            flux,
            potential,
            kind: Kind::Custom,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self, x: Point) -> f64 {
        (self.k)(x)
    }

    #[inline]
    pub fn flux(&self, x: Point, xi: Point) -> Point {
        (self.flux)(x, xi)
    }

    pub fn potential(&self, x: Point, xi: Point) -> Option<f64> {
        self.potential.as_ref().map(|phi| phi(x, xi))
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some()
    }

    /// `Some(c(x))` when the flux is `c(x) ‖ξ‖^{p−2} ξ`.
    pub fn p_laplacian_weight(&self, x: Point) -> Option<f64> {
        match &self.kind {
            Kind::PLaplacian { weight } => Some(weight.as_ref().map_or(1.0, |w| w(x))),
            Kind::Custom => None,
        }
    }

    pub fn is_p_laplacian(&self) -> bool {
        matches!(self.kind, Kind::PLaplacian { .. })
    }

    /// `Some(c(x))` when the flux is linear, `a(x, ξ) = c(x) ξ`.
    pub fn linear_coefficient(&self, x: Point) -> Option<f64> {
        if self.p == 2.0 {
            self.p_laplacian_weight(x)
        } else {
            None
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear_coefficient([0.0, 0.0]).is_some()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// min over samples of `(a·ξ − λ‖ξ‖^p) / (λ‖ξ‖^p)`.
    pub coercivity_margin: f64,
    /// min over samples of `(a(ξ) − a(η))·(ξ − η)`; must stay positive.
    pub monotonicity_margin: f64,
    /// min over samples of `1 − ‖a‖ / (α(k + ‖ξ‖^{p−1}))`.
    pub growth_margin: f64,
    /// max relative mismatch between finite differences of the potential and the flux.
    pub potential_error: Option<f64>,
    pub coercivity_ok: bool,
    pub monotonicity_ok: bool,
    pub growth_ok: bool,
    pub potential_ok: bool,
    pub passed: bool,
}

const MARGIN_TOL: f64 = 1e-12;
const POTENTIAL_TOL: f64 = 1e-6;

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Point {
    let r = 10f64.powf(rng.gen_range(-3.0..1.0));
    if dim == 1 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        [sign * r, 0.0]
    } else {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        [r * theta.cos(), r * theta.sin()]
    }
}

/// Draws `sample_count` random `(x, ξ, η)` triples in the unit box and
/// reports the worst margins of the three structural hypotheses.
pub fn validate(spec: &OperatorSpec, dim: usize, sample_count: usize, seed: u64) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.p;
    let mut coercivity = f64::INFINITY;
    let mut monotonicity = f64::INFINITY;
    let mut growth = f64::INFINITY;
    let mut potential_error: Option<f64> = spec.potential.as_ref().map(|_| 0.0);

    for _ in 0..sample_count.max(1) {
        let x = if dim == 1 {
            [rng.gen::<f64>(), 0.0]
        } else {
            [rng.gen::<f64>(), rng.gen::<f64>()]
        };
        let xi = random_vector(&mut rng, dim);
        let eta = if rng.gen_bool(0.5) {
            random_vector(&mut rng, dim)
        } else {
            let d = random_vector(&mut rng, dim);
            [xi[0] + 1e-2 * d[0], xi[1] + 1e-2 * d[1]]
        };

        let a = spec.flux(x, xi);
        let nx = norm(xi);
        let lower = spec.lambda * nx.powf(p);
        coercivity = coercivity.min((dot(a, xi) - lower) / lower);

        let diff = [xi[0] - eta[0], xi[1] - eta[1]];
        if norm(diff) >= 1e-12 {
            let b = spec.flux(x, eta);
            monotonicity = monotonicity.min(dot([a[0] - b[0], a[1] - b[1]], diff));
        }

        let bound = spec.alpha * (spec.k(x) + nx.powf(p - 1.0));
        growth = growth.min(1.0 - norm(a) / bound);

        if let (Some(phi), Some(err)) = (spec.potential.as_ref(), potential_error.as_mut()) {
            if nx >= 1e-2 {
                let h = 1e-5 * nx;
                let mut worst: f64 = 0.0;
                for c in 0..dim {
                    let mut plus = xi;
                    let mut minus = xi;
                    plus[c] += h;
                    minus[c] -= h;
                    let fd = (phi(x, plus) - phi(x, minus)) / (2.0 * h);
                    worst = worst.max((fd - a[c]).abs() / norm(a).max(1e-300));
                }
                *err = err.max(worst);
            }
        }
    }

    let coercivity_ok = coercivity >= -MARGIN_TOL;
    let monotonicity_ok = monotonicity > 0.0;
    let growth_ok = growth >= -MARGIN_TOL;
    let potential_ok = potential_error.is_none_or(|e| e <= POTENTIAL_TOL);
    ValidationReport {
        samples: sample_count,
        coercivity_margin: coercivity,
        monotonicity_margin: monotonicity,
        growth_margin: growth,
        potential_error,
        coercivity_ok,
        monotonicity_ok,
        growth_ok,
        potential_ok,
        passed: coercivity_ok && monotonicity_ok && growth_ok && potential_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_laplacian_flux_values() {
        let op = OperatorSpec::p_laplacian(2.0).unwrap();
        assert_eq!(op.flux([0.3, 0.0], [1.5, -2.0]), [1.5, -2.0]);
        assert_eq!(op.lambda(), 1.0);
        let op = OperatorSpec::p_laplacian(3.0).unwrap();
        assert_eq!(op.flux([0.0, 0.0], [2.0, 0.0]), [4.0, 0.0]);
        let op = OperatorSpec::p_laplacian(1.5).unwrap();
        assert_eq!(op.flux([0.0, 0.0], [0.0, 0.0]), [0.0, 0.0]);
        assert!((op.p_conj() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(matches!(
            OperatorSpec::p_laplacian(1.0),
            Err(Error::InvalidExponent(_))
        ));
        assert!(OperatorSpec::p_laplacian(0.5).is_err());
        assert!(OperatorSpec::p_laplacian(f64::NAN).is_err());
    }

    #[test]
    fn validation_of_shipped_operators() {
        let report = validate(&OperatorSpec::p_laplacian(2.0).unwrap(), 2, 2000, 7);
        assert!(report.passed, "{report:?}");
        assert!(report.coercivity_margin.abs() < 1e-14);

        for &p in &[1.5, 3.0] {
            for dim in [1, 2] {
                let report = validate(&OperatorSpec::p_laplacian(p).unwrap(), dim, 10_000, 11);
                assert!(report.passed, "p = {p}, dim = {dim}: {report:?}");
            }
        }

        let weight: Arc<SpatialFn> = Arc::new(|x: Point| 1.0 + x[0] * x[1]);
        let op = OperatorSpec::weighted_p_laplacian(2.5, weight, 1.0, 2.0).unwrap();
        assert!(validate(&op, 2, 5000, 3).passed);
        assert!(op.linear_coefficient([0.5, 0.5]).is_none());
        let op = OperatorSpec::weighted_p_laplacian(2.0, Arc::new(|x: Point| 2.0 + x[0]), 2.0, 3.0)
            .unwrap();
        assert_eq!(op.linear_coefficient([0.5, 0.0]), Some(2.5));
    }

    #[test]
    fn anti_monotone_flux_fails() {
        let op = OperatorSpec::custom(
            "negated",
            2.0,
            1.0,
            1.0,
            Arc::new(|_| 0.0),
            Arc::new(|_, xi: Point| [-xi[0], -xi[1]]),
            None,
        )
        .unwrap();
        let report = validate(&op, 2, 100, 1);
        assert!(!report.monotonicity_ok);
        assert!(!report.passed);
    }

    #[test]
    fn inconsistent_potential_is_caught() {
        let op = OperatorSpec::custom(
            "bad_potential",
            2.0,
            1.0,
            1.0,
            Arc::new(|_| 0.0),
            Arc::new(|_, xi: Point| xi),
            Some(Arc::new(|_, xi: Point| norm(xi).powi(2))),
        )
        .unwrap();
        let report = validate(&op, 1, 100, 1);
        assert!(report.monotonicity_ok && !report.potential_ok);
    }
}
