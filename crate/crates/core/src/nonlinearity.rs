//! The splitting `f = g − h` into nondecreasing parts and the superposition
//! operator `G(u)(x) = g(u(x))`.

use serde::Serialize;

use crate::discretization::NodalField;
use crate::error::Result;
use crate::monotone_graph::{MonotoneGraph, PiecewiseMonotone, PiecewiseSpec, RawPiecewise, Side};

#[derive(Clone, Debug)]
pub struct Decomposition {
    g: PiecewiseMonotone,
    graph: MonotoneGraph,
    g_side: Side,
}

impl Decomposition {
    /// Normalizes `h` so that `0 ∈ β(0)` and moves the same constant into `g`.
    pub fn new(g: PiecewiseMonotone, h: PiecewiseMonotone, g_side: Side) -> Self {
        let graph = MonotoneGraph::new(h);
        let g = if graph.shift() != 0.0 {
            g.shifted(graph.shift())
        } else {
            g
        };
        Self { g, graph, g_side }
    }

    pub fn from_specs(g: &PiecewiseSpec, h: &PiecewiseSpec, g_side: Side) -> Result<Self> {
        Ok(Self::new(
            PiecewiseMonotone::new(g.clone())?,
            PiecewiseMonotone::new(h.clone())?,
            g_side,
        ))
    }

    pub fn g(&self) -> &PiecewiseMonotone {
        &self.g
    }

    pub fn graph(&self) -> &MonotoneGraph {
        &self.graph
    }

    pub fn g_side(&self) -> Side {
        self.g_side
    }

    /// Constant subtracted from both `g` and `h` during normalization.
    pub fn shift(&self) -> f64 {
        self.graph.shift()
    }

    pub fn with_side(&self, g_side: Side) -> Self {
        Self {
            g_side,
            ..self.clone()
        }
    }

    pub fn eval_g(&self, s: f64) -> f64 {
        self.g.eval(s, self.g_side)
    }

    /// `f(s) = g(s) − h(s)`; meaningful at continuity points of both parts.
    pub fn eval_f(&self, s: f64) -> f64 {
        self.eval_g(s) - self.graph.h().eval(s, self.g_side)
    }

    pub fn nemitskii(&self) -> NemitskiiG {
        NemitskiiG {
            g: self.g.clone(),
            side: self.g_side,
        }
    }
}

/// `G(u)_i = g(u_i)` with a fixed one-sided evaluation at jumps.
#[derive(Clone, Debug)]
pub struct NemitskiiG {
    g: PiecewiseMonotone,
    side: Side,
}

impl NemitskiiG {
    pub fn new(g: PiecewiseMonotone, side: Side) -> Self {
        Self { g, side }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.g.eval(s, self.side)
    }

    pub fn apply(&self, u: &[f64]) -> NodalField {
        u.iter().map(|&s| self.eval(s)).collect()
    }

    pub fn side(&self) -> Side {
        self.side
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    /// min over consecutive samples `s < t` of `f⁻(t) − f⁺(s)`, and over
    /// events of `f⁺ − f⁻`.
    pub worst_margin: f64,
    /// Location of the worst violation, if any.
    pub violation_at: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub g: MonotonicityReport,
    pub h: MonotonicityReport,
    pub passed: bool,
}

fn check_monotone(f: &RawPiecewise, sample_count: usize) -> MonotonicityReport {
    let events = f.events();
    let lo = events[0] - 1.0;
    let hi = events[events.len() - 1] + 1.0;
    let n = sample_count.max(2);
    let mut points: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .chain(events.iter().copied())
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut worst = f64::INFINITY;
    let mut at = None;
    let mut record = |margin: f64, s: f64| {
        if margin < worst {
            worst = margin;
            if margin < 0.0 {
                at = Some(s);
            }
        }
    };
    for w in points.windows(2) {
        let (_, right) = f.limits(w[0]);
        let (left, _) = f.limits(w[1]);
        record(left - right, w[0]);
    }
    for &e in events {
        let (left, right) = f.limits(e);
        record(right - left, e);
    }
    MonotonicityReport {
        worst_margin: worst,
        violation_at: at,
        passed: worst >= 0.0,
    }
}

/// Sampled check that both parts of a user-supplied splitting are
/// nondecreasing. Works on raw descriptions so the offending location can be
/// reported instead of a constructor error.
pub fn validate_decomposition(
    g: &PiecewiseSpec,
    h: &PiecewiseSpec,
    sample_count: usize,
) -> Result<DecompositionReport> {
    let g = check_monotone(&g.tabulate()?, sample_count);
    let h = check_monotone(&h.tabulate()?, sample_count);
    let passed = g.passed && h.passed;
    Ok(DecompositionReport { g, h, passed })
}
