//! Nondecreasing scalar functions with finitely many jumps, the maximal
//! monotone graph `β(s) = [h⁻(s), h⁺(s)]` they induce, the convex potential
//! `j` with `∂j = β`, and the scalar resolvent `(I + λβ)⁻¹`.
//!
//! Every function is stored as an event table: the sorted set of breakpoints,
//! jump locations and the origin, with exact one-sided values at each event
//! and the (constant) slope on every open segment between events. Left/right
//! limits, the potential and the resolvent are all evaluated exactly from
//! that table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which one-sided limit to use when evaluating a function at a jump.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub at: f64,
    pub height: f64,
}

/// Serializable description of a piecewise-linear function with jumps.
///
/// The continuous part has value `value_at_zero` at the origin and slope
/// `slopes[k]` on the k-th interval cut out by `breakpoints` (so
/// `slopes.len() == breakpoints.len() + 1`, or `slopes` empty for a constant).
/// Each jump adds `height` strictly to the right of `at`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseSpec {
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default)]
    pub slopes: Vec<f64>,
    #[serde(default)]
    pub value_at_zero: f64,
    #[serde(default)]
    pub jumps: Vec<Jump>,
}

impl PiecewiseSpec {
    pub fn constant(c: f64) -> Self {
        Self {
            value_at_zero: c,
            ..Self::default()
        }
    }

    pub fn linear(slope: f64) -> Self {
        Self {
            slopes: vec![slope],
            ..Self::default()
        }
    }

    pub fn heaviside(at: f64, height: f64) -> Self {
        Self::default().with_jump(at, height)
    }

    pub fn with_jump(mut self, at: f64, height: f64) -> Self {
        self.jumps.push(Jump { at, height });
        self
    }

    pub fn with_value_at_zero(mut self, c: f64) -> Self {
        self.value_at_zero = c;
        self
    }

    fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidFunction(msg));
        if !self.value_at_zero.is_finite() {
            return bad("value_at_zero must be finite".into());
        }
        if let Some(b) = self.breakpoints.iter().find(|b| !b.is_finite()) {
            return bad(format!("non-finite breakpoint {b}"));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("breakpoints must be strictly increasing".into());
        }
        if !self.slopes.is_empty() && self.slopes.len() != self.breakpoints.len() + 1 {
            return bad(format!(
                "{} breakpoints need {} slopes, got {}",
                self.breakpoints.len(),
                self.breakpoints.len() + 1,
                self.slopes.len()
            ));
        }
        if self.slopes.is_empty() && !self.breakpoints.is_empty() {
            return bad("breakpoints given without slopes".into());
        }
        if let Some(s) = self.slopes.iter().find(|s| !s.is_finite()) {
            return bad(format!("non-finite slope {s}"));
        }
        for (k, jump) in self.jumps.iter().enumerate() {
            if !jump.at.is_finite() || !jump.height.is_finite() {
                return bad(format!("jump {k} is not finite"));
            }
            if self.jumps[..k].iter().any(|other| other.at == jump.at) {
                return bad(format!("duplicate jump location {}", jump.at));
            }
        }
        Ok(())
    }

    fn slope_at(&self, t: f64) -> f64 {
        if self.slopes.is_empty() {
            return 0.0;
        }
        self.slopes[self.breakpoints.partition_point(|&b| b <= t)]
    }

    /// Continuous part at `t`, integrating the slope outward from the origin.
    fn continuous_part(&self, t: f64) -> f64 {
        let mut value = self.value_at_zero;
        let mut prev = 0.0;
        if t >= 0.0 {
            for &b in self.breakpoints.iter().filter(|&&b| b > 0.0 && b < t) {
                value += self.slope_at(0.5 * (prev + b)) * (b - prev);
                prev = b;
            }
            if t > prev {
                value += self.slope_at(0.5 * (prev + t)) * (t - prev);
            }
        } else {
            for &b in self.breakpoints.iter().rev().filter(|&&b| b < 0.0 && b > t) {
                value -= self.slope_at(0.5 * (prev + b)) * (prev - b);
                prev = b;
            }
            value -= self.slope_at(0.5 * (prev + t)) * (prev - t);
        }
        value
    }

    /// Builds the event table without any monotonicity requirement.
    pub fn tabulate(&self) -> Result<RawPiecewise> {
        self.check_structure()?;
        let mut at: Vec<f64> = self
            .breakpoints
            .iter()
            .copied()
            .chain(self.jumps.iter().map(|j| j.at))
            .chain(std::iter::once(0.0))
            .collect();
        at.sort_by(f64::total_cmp);
        at.dedup();

        let mut left = Vec::with_capacity(at.len());
        let mut right = Vec::with_capacity(at.len());
        for &e in &at {
            let cont = self.continuous_part(e);
            let below: f64 = self.jumps.iter().filter(|j| j.at < e).map(|j| j.height).sum();
            let here: f64 = self.jumps.iter().filter(|j| j.at == e).map(|j| j.height).sum();
            left.push(cont + below);
            right.push(cont + below + here);
        }

        let n = at.len();
        let mut slopes = Vec::with_capacity(n + 1);
        slopes.push(self.slope_at(at[0] - 1.0));
        for w in at.windows(2) {
            slopes.push(self.slope_at(0.5 * (w[0] + w[1])));
        }
        slopes.push(self.slope_at(at[n - 1] + 1.0));

        Ok(RawPiecewise(EventTable {
            at,
            left,
            right,
            slopes,
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EventTable {
    at: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    /// `slopes[i]` holds on the open segment ending at `at[i]`; the last entry
    /// continues past the final event.
    slopes: Vec<f64>,
}

impl EventTable {
    fn limits(&self, s: f64) -> (f64, f64) {
        let i = self.at.partition_point(|&e| e < s);
        if i < self.at.len() && self.at[i] == s {
            return (self.left[i], self.right[i]);
        }
        let v = if i == 0 {
            self.left[0] - self.slopes[0] * (self.at[0] - s)
        } else {
            self.right[i - 1] + self.slopes[i] * (s - self.at[i - 1])
        };
        (v, v)
    }

    fn zero_index(&self) -> usize {
        self.at.partition_point(|&e| e < 0.0)
    }
}

/// An arbitrary (not necessarily monotone) piecewise-linear function with
/// jumps; used to locate monotonicity violations in user input.
#[derive(Clone, Debug)]
pub struct RawPiecewise(EventTable);

impl RawPiecewise {
    pub fn limits(&self, s: f64) -> (f64, f64) {
        self.0.limits(s)
    }

    pub fn events(&self) -> &[f64] {
        &self.0.at
    }
}

/// A nondecreasing piecewise-linear function with finitely many upward jumps.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseMonotone {
    spec: PiecewiseSpec,
    table: EventTable,
}

impl PiecewiseMonotone {
    pub fn new(spec: PiecewiseSpec) -> Result<Self> {
        let table = spec.tabulate()?.0;
        if let Some(s) = spec.slopes.iter().find(|&&s| s < 0.0) {
            return Err(Error::NotMonotone(format!("negative slope {s}")));
        }
        if let Some(j) = spec.jumps.iter().find(|j| j.height <= 0.0) {
            return Err(Error::NotMonotone(format!(
                "jump at {} has non-positive height {}",
                j.at, j.height
            )));
        }
        Ok(Self { spec, table })
    }

    pub fn zero() -> Self {
        Self::new(PiecewiseSpec::default()).expect("zero function is valid")
    }

    pub fn spec(&self) -> &PiecewiseSpec {
        &self.spec
    }

    /// `(h⁻(s), h⁺(s))`.
    pub fn limits(&self, s: f64) -> (f64, f64) {
        self.table.limits(s)
    }

    pub fn eval(&self, s: f64, side: Side) -> f64 {
        let (l, r) = self.limits(s);
        match side {
            Side::Left => l,
            Side::Right => r,
        }
    }

    pub fn jump_locations(&self) -> impl Iterator<Item = f64> + '_ {
        self.spec.jumps.iter().map(|j| j.at)
    }

    pub fn has_jumps(&self) -> bool {
        !self.spec.jumps.is_empty()
    }

    /// Largest `|h|` over `[lo, hi]` (attained at events or endpoints).
    pub fn sup_abs_on(&self, lo: f64, hi: f64) -> f64 {
        let (a, _) = self.limits(lo);
        let (_, b) = self.limits(hi);
        a.abs().max(b.abs())
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut spec = self.spec.clone();
        spec.value_at_zero -= c;
        let mut table = self.table.clone();
        table.left.iter_mut().for_each(|v| *v -= c);
        table.right.iter_mut().for_each(|v| *v -= c);
        Self { spec, table }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lo - tol <= v && v <= self.hi + tol
    }

    pub fn distance(&self, v: f64) -> f64 {
        (self.lo - v).max(v - self.hi).max(0.0)
    }

    pub fn project(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Local shape of `h` at the point returned by the resolvent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResolventPiece {
    /// The resolvent sits on a jump: `x = at` for a whole interval of inputs.
    Flat { at: f64 },
    /// `h(s) = value + slope·(s − anchor)` near the returned point.
    Affine { anchor: f64, value: f64, slope: f64 },
}

/// `j(s) = ∫₀ˢ h(t) dt`, stored as exact per-segment quadratics.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPotential {
    table: EventTable,
    at_events: Vec<f64>,
}

impl ConvexPotential {
    fn new(table: EventTable) -> Self {
        let n = table.at.len();
        let z = table.zero_index();
        let mut at_events = vec![0.0; n];
        for i in z + 1..n {
            let d = table.at[i] - table.at[i - 1];
            at_events[i] =
                at_events[i - 1] + table.right[i - 1] * d + 0.5 * table.slopes[i] * d * d;
        }
        for i in (0..z).rev() {
            let d = table.at[i + 1] - table.at[i];
            at_events[i] =
                at_events[i + 1] - table.left[i + 1] * d + 0.5 * table.slopes[i + 1] * d * d;
        }
        Self { table, at_events }
    }

    pub fn value(&self, s: f64) -> f64 {
        let t = &self.table;
        let i = t.at.partition_point(|&e| e < s);
        if i < t.at.len() && t.at[i] == s {
            return self.at_events[i];
        }
        if s > 0.0 {
            // 0 is an event, so the segment's left end is >= 0.
            let d = s - t.at[i - 1];
            self.at_events[i - 1] + t.right[i - 1] * d + 0.5 * t.slopes[i] * d * d
        } else if i < t.at.len() {
            let d = t.at[i] - s;
            self.at_events[i] - t.left[i] * d + 0.5 * t.slopes[i] * d * d
        } else {
            unreachable!("origin is always an event")
        }
    }

    pub fn left_derivative(&self, s: f64) -> f64 {
        self.table.limits(s).0
    }

    pub fn right_derivative(&self, s: f64) -> f64 {
        self.table.limits(s).1
    }
}

/// The maximal monotone graph `β(s) = [h⁻(s), h⁺(s)]`, normalized so that
/// `0 ∈ β(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneGraph {
    h: PiecewiseMonotone,
    shift: f64,
    potential: ConvexPotential,
}

impl MonotoneGraph {
    /// Normalizes `h` by a constant so that `0 ∈ β(0)`. The constant is
    /// reported by [`MonotoneGraph::shift`]; callers must subtract it from `g`
    /// as well so that `f = g − h` is unchanged.
    pub fn new(h: PiecewiseMonotone) -> Self {
        let (l, r) = h.limits(0.0);
        let shift = if l > 0.0 {
            l
        } else if r < 0.0 {
            r
        } else {
            0.0
        };
        let h = if shift != 0.0 { h.shifted(shift) } else { h };
        let potential = ConvexPotential::new(h.table.clone());
        Self {
            h,
            shift,
            potential,
        }
    }

    pub fn zero() -> Self {
        Self::new(PiecewiseMonotone::zero())
    }

    pub fn h(&self) -> &PiecewiseMonotone {
        &self.h
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn potential(&self) -> &ConvexPotential {
        &self.potential
    }

    pub fn is_zero(&self) -> bool {
        let t = &self.h.table;
        t.slopes.iter().all(|&s| s == 0.0)
            && t.left.iter().chain(&t.right).all(|&v| v == 0.0)
    }

    pub fn interval(&self, s: f64) -> Interval {
        let (lo, hi) = self.h.limits(s);
        Interval { lo, hi }
    }

    pub fn member(&self, s: f64, v: f64, tol: f64) -> bool {
        self.interval(s).contains(v, tol)
    }

    /// `x = (I + λβ)⁻¹ y`, together with the piece of `h` it landed on.
    ///
    /// The event list is bisected on the nondecreasing map `s ↦ s + λh(s)`;
    /// inside a segment that map is affine and is inverted in closed form.
    pub fn resolvent_with_piece(&self, lambda: f64, y: f64) -> Result<(f64, ResolventPiece)> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidResolventParameter(lambda));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("resolvent argument {y}")));
        }
        Ok(self.resolvent_unchecked(lambda, y))
    }

    pub fn resolvent(&self, lambda: f64, y: f64) -> Result<f64> {
        self.resolvent_with_piece(lambda, y).map(|(x, _)| x)
    }

    pub(crate) fn resolvent_unchecked(&self, lambda: f64, y: f64) -> (f64, ResolventPiece) {
        let t = &self.h.table;
        let n = t.at.len();
        let i = partition_point(n, |k| t.at[k] + lambda * t.right[k] < y);
        if i < n && t.at[i] + lambda * t.left[i] <= y {
            let e = t.at[i];
            if t.right[i] > t.left[i] {
                return (e, ResolventPiece::Flat { at: e });
            }
            return (
                e,
                ResolventPiece::Affine {
                    anchor: e,
                    value: t.left[i],
                    slope: t.slopes[i + 1],
                },
            );
        }
        let slope = t.slopes[i];
        let (anchor, value) = if i == 0 {
            (t.at[0], t.left[0])
        } else {
            (t.at[i - 1], t.right[i - 1])
        };
        let mut x = anchor + (y - (anchor + lambda * value)) / (1.0 + lambda * slope);
        if i > 0 {
            x = x.max(t.at[i - 1]);
        }
        if i < n {
            x = x.min(t.at[i]);
        }
        (
            x,
            ResolventPiece::Affine {
                anchor,
                value,
                slope,
            },
        )
    }

    /// Natural residual `|s − (I + β)⁻¹(s + v)|`: zero iff `v ∈ β(s)`, and
    /// otherwise the sup-norm distance from `(s, v)` to the graph along the
    /// anti-diagonal.
    pub fn graph_residual(&self, s: f64, v: f64) -> f64 {
        let (x, _) = self.resolvent_unchecked(1.0, s + v);
        (s - x).abs()
    }
}

fn partition_point(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}
