//! Piecewise expanding maps of the unit interval and their perturbation families.
//!
//! A [`PiecewiseMap`] is an ordered list of monotone branches whose domains tile
//! `[0, 1]`. At a shared branch endpoint the map is bi-valued: both one-sided
//! limits are reported by [`PiecewiseMap::evaluate`]. Nothing extra is stored
//! for those points, the limits come from the two adjacent branches.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::ENDPOINT_TOL;

/// Default depth for the finite (I2) check.
pub const DEFAULT_HYPOTHESIS_DEPTH: usize = 8;
/// Distance below which a postcritical point counts as hitting an infinitesimal hole.
pub const I2_TOL: f64 = 1e-9;
/// Absolute tolerance of the bracketing root finder for smooth branches.
pub const ROOT_TOL: f64 = 1e-13;

const SAMPLE_START: usize = 1025;
const SAMPLE_MAX: usize = 1 << 20;

/// A closed subinterval of `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Domain(format!("interval [{lo}, {hi}] is not finite")));
        }
        if lo > hi {
            return Err(Error::Domain(format!("interval [{lo}, {hi}] has lo > hi")));
        }
        if lo < -ENDPOINT_TOL || hi > 1.0 + ENDPOINT_TOL {
            return Err(Error::Domain(format!("interval [{lo}, {hi}] leaves [0, 1]")));
        }
        Ok(Interval { lo: lo.max(0.0), hi: hi.min(1.0) })
    }

    pub fn unit() -> Self {
        Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - ENDPOINT_TOL && x <= self.hi + ENDPOINT_TOL
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Length of the intersection with `[lo, hi]`.
    pub fn overlap(&self, lo: f64, hi: f64) -> f64 {
        (self.hi.min(hi) - self.lo.max(lo)).max(0.0)
    }

    /// Distance from `x` to the interval (zero inside).
    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// A real function of one variable.
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A smooth branch given by the function and its first two derivatives.
#[derive(Clone)]
pub struct SmoothFns {
    pub f: RealFn,
    pub df: RealFn,
    pub d2f: RealFn,
}

#[derive(Clone)]
pub enum BranchKind {
    Affine { slope: f64, intercept: f64 },
    Smooth(SmoothFns),
}

impl fmt::Debug for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchKind::Affine { slope, intercept } => f
                .debug_struct("Affine")
                .field("slope", slope)
                .field("intercept", intercept)
                .finish(),
            BranchKind::Smooth(_) => f.write_str("Smooth(..)"),
        }
    }
}

/// One monotone `C^2` piece of a map.
#[derive(Clone, Debug)]
pub struct Branch {
    domain: Interval,
    kind: BranchKind,
}

impl Branch {
    pub fn affine(domain: Interval, slope: f64, intercept: f64) -> Self {
        Branch { domain, kind: BranchKind::Affine { slope, intercept } }
    }

    pub fn smooth(
        domain: Interval,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Branch {
            domain,
            kind: BranchKind::Smooth(SmoothFns { f: Arc::new(f), df: Arc::new(df), d2f: Arc::new(d2f) }),
        }
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn kind(&self) -> &BranchKind {
        &self.kind
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, BranchKind::Affine { .. })
    }

    /// Branch formula; valid on (a neighbourhood of) the closed domain.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, intercept } => slope * x + intercept,
            BranchKind::Smooth(s) => (s.f)(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, .. } => *slope,
            BranchKind::Smooth(s) => (s.df)(x),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { .. } => 0.0,
            BranchKind::Smooth(s) => (s.d2f)(x),
        }
    }

    pub fn is_increasing(&self) -> bool {
        self.derivative(self.domain.midpoint()) > 0.0
    }

    /// `(min, max)` of the branch over its closed domain.
    pub fn image(&self) -> (f64, f64) {
        let a = self.eval(self.domain.lo);
        let b = self.eval(self.domain.hi);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Unique preimage of `y` in the domain. `y` must lie in the closed image.
    pub fn inverse(&self, y: f64, index: usize) -> Result<f64> {
        let Interval { lo, hi } = self.domain;
        match &self.kind {
            BranchKind::Affine { slope, intercept } => Ok(((y - intercept) / slope).clamp(lo, hi)),
            BranchKind::Smooth(s) => safeguarded_root(&*s.f, &*s.df, y, lo, hi, index),
        }
    }

    fn min_abs_derivative(&self) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, .. } => slope.abs(),
            BranchKind::Smooth(s) => refine_sampled(self.domain, |x| (s.df)(x).abs(), f64::min),
        }
    }

    fn max_abs_derivative(&self) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, .. } => slope.abs(),
            BranchKind::Smooth(s) => refine_sampled(self.domain, |x| (s.df)(x).abs(), f64::max),
        }
    }

    fn distortion(&self) -> f64 {
        match &self.kind {
            BranchKind::Affine { .. } => 0.0,
            BranchKind::Smooth(s) => {
                refine_sampled(self.domain, |x| (s.d2f)(x).abs() / (s.df)(x).abs(), f64::max)
            }
        }
    }
}

/// Fold `g` over a uniform sample of `domain`, doubling the sample until the
/// folded value stops changing.
fn refine_sampled(domain: Interval, g: impl Fn(f64) -> f64, fold: fn(f64, f64) -> f64) -> f64 {
    let sample = |m: usize| {
        (0..m)
            .map(|k| domain.lo + domain.len() * k as f64 / (m - 1) as f64)
            .map(&g)
            .fold(g(domain.lo), fold)
    };
    let mut m = SAMPLE_START;
    let mut prev = sample(m);
    while m < SAMPLE_MAX {
        m = 2 * m - 1;
        let next = sample(m);
        if (next - prev).abs() <= 1e-9 * next.abs().max(1e-300) {
            return next;
        }
        prev = next;
    }
    prev
}

/// Newton steps safeguarded by bisection for `f(x) = y` on `[lo, hi]`.
fn safeguarded_root(
    f: &(dyn Fn(f64) -> f64 + Send + Sync),
    df: &(dyn Fn(f64) -> f64 + Send + Sync),
    y: f64,
    lo: f64,
    hi: f64,
    branch: usize,
) -> Result<f64> {
    let g = |x: f64| f(x) - y;
    let (glo, ghi) = (g(lo), g(hi));
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        // y sits on the image boundary up to rounding
        if glo.abs() <= ENDPOINT_TOL {
            return Ok(lo);
        }
        if ghi.abs() <= ENDPOINT_TOL {
            return Ok(hi);
        }
        return Err(Error::Numerical {
            branch,
            message: format!("value {y} is not bracketed on [{lo}, {hi}]"),
        });
    }
    // keep g(a) < 0 < g(b)
    let (mut a, mut b) = if glo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let d = df(x);
        let newton = x - gx / d;
        let (mn, mx) = if a < b { (a, b) } else { (b, a) };
        let next = if d != 0.0 && newton > mn && newton < mx { newton } else { 0.5 * (a + b) };
        if (next - x).abs() <= ROOT_TOL || (mx - mn) <= ROOT_TOL {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::Numerical { branch, message: format!("no convergence solving for y = {y}") })
}

/// A preimage together with the index of the branch that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Preimage {
    pub x: f64,
    pub branch: usize,
}

/// A piecewise `C^2`, uniformly expanding map of `[0, 1]`.
#[derive(Clone, Debug)]
pub struct PiecewiseMap {
    branches: Vec<Branch>,
    critical: Vec<f64>,
}

impl PiecewiseMap {
    /// Validate and build a map. Domains must tile `[0, 1]` in order.
    pub fn new(mut branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Model("a map needs at least one branch".into()));
        }
        let first = branches[0].domain;
        if first.lo.abs() > ENDPOINT_TOL {
            return Err(Error::Model(format!("branch 0 starts at {} instead of 0", first.lo)));
        }
        let last = branches[branches.len() - 1].domain;
        if (last.hi - 1.0).abs() > ENDPOINT_TOL {
            return Err(Error::Model(format!(
                "branch {} ends at {} instead of 1",
                branches.len() - 1,
                last.hi
            )));
        }
        for k in 1..branches.len() {
            let prev = branches[k - 1].domain;
            let cur = branches[k].domain;
            if cur.lo < prev.hi - ENDPOINT_TOL {
                return Err(Error::Model(format!("branches {} and {k} overlap", k - 1)));
            }
            if cur.lo > prev.hi + ENDPOINT_TOL {
                return Err(Error::Model(format!("gap between branches {} and {k}", k - 1)));
            }
        }
        // snap shared endpoints so consecutive domains agree exactly
        branches[0].domain.lo = 0.0;
        let d = branches.len();
        branches[d - 1].domain.hi = 1.0;
        for k in 1..d {
            branches[k].domain.lo = branches[k - 1].domain.hi;
        }
        for (k, br) in branches.iter().enumerate() {
            if br.domain.len() <= ENDPOINT_TOL {
                return Err(Error::Model(format!("branch {k} has an empty domain")));
            }
            let lam = br.min_abs_derivative();
            if !(lam > 1.0) {
                return Err(Error::Model(format!(
                    "branch {k} is not uniformly expanding (min |T'| = {lam})"
                )));
            }
            if let BranchKind::Smooth(s) = &br.kind {
                let sign = (s.df)(br.domain.lo).signum();
                let flips = (0..=256)
                    .map(|j| br.domain.lo + br.domain.len() * j as f64 / 256.0)
                    .any(|x| (s.df)(x).signum() != sign);
                if flips {
                    return Err(Error::Model(format!("branch {k} is not monotone")));
                }
            }
            let (ymin, ymax) = br.image();
            if ymin < -ENDPOINT_TOL || ymax > 1.0 + ENDPOINT_TOL {
                return Err(Error::Model(format!(
                    "branch {k} maps into [{ymin}, {ymax}], outside [0, 1]"
                )));
            }
        }
        let mut critical = Vec::with_capacity(d + 1);
        critical.push(0.0);
        critical.extend(branches.iter().map(|b| b.domain.hi));
        Ok(PiecewiseMap { branches, critical })
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// `0 = c_0 < c_1 < ... < c_d = 1`.
    pub fn critical_set(&self) -> &[f64] {
        &self.critical
    }

    pub fn is_affine(&self) -> bool {
        self.branches.iter().all(Branch::is_affine)
    }

    /// Index `k` such that `x` is within tolerance of `c_k`.
    pub fn critical_index(&self, x: f64) -> Option<usize> {
        self.critical.iter().position(|c| (c - x).abs() <= ENDPOINT_TOL)
    }

    /// `T(x)`, or both one-sided limits `{T(c-), T(c+)}` at an interior
    /// critical point (a single value when they coincide).
    pub fn evaluate(&self, x: f64) -> Result<Vec<f64>> {
        if !(-ENDPOINT_TOL..=1.0 + ENDPOINT_TOL).contains(&x) {
            return Err(Error::Domain(format!("x = {x} is outside [0, 1]")));
        }
        if let Some(k) = self.critical_index(x) {
            let c = self.critical[k];
            let left = (k > 0).then(|| self.branches[k - 1].eval(c));
            let right = (k < self.branches.len()).then(|| self.branches[k].eval(c));
            return Ok(match (left, right) {
                (Some(l), Some(r)) if (l - r).abs() <= ENDPOINT_TOL => vec![l],
                (Some(l), Some(r)) => vec![l, r],
                (Some(v), None) | (None, Some(v)) => vec![v],
                (None, None) => unreachable!("critical set has at least two points"),
            });
        }
        let k = self.branch_containing(x);
        Ok(vec![self.branches[k].eval(x)])
    }

    /// One-sided limits at the critical point `c_k`: `(T(c_k-), T(c_k+))`.
    pub fn one_sided(&self, k: usize) -> (Option<f64>, Option<f64>) {
        let c = self.critical[k];
        let left = (k > 0).then(|| self.branches[k - 1].eval(c));
        let right = (k < self.branches.len()).then(|| self.branches[k].eval(c));
        (left, right)
    }

    /// Branch whose domain contains `x` (the right-hand one at shared endpoints).
    pub fn branch_containing(&self, x: f64) -> usize {
        let d = self.branches.len();
        self.critical[1..d].partition_point(|&c| c <= x)
    }

    /// `inf |T'|` over all branches.
    pub fn min_expansion(&self) -> f64 {
        self.branches.iter().map(Branch::min_abs_derivative).fold(f64::INFINITY, f64::min)
    }

    /// `sup |T'|` over all branches.
    pub fn max_expansion(&self) -> f64 {
        self.branches.iter().map(Branch::max_abs_derivative).fold(0.0, f64::max)
    }

    /// `sup |T''| / |T'|`; zero for affine maps.
    pub fn distortion(&self) -> f64 {
        self.branches.iter().map(Branch::distortion).fold(0.0, f64::max)
    }

    /// Smallest branch domain length.
    pub fn min_branch_width(&self) -> f64 {
        self.branches.iter().map(|b| b.domain.len()).fold(f64::INFINITY, f64::min)
    }

    /// Preimages of `y`, one per branch whose closed image contains it.
    pub fn branch_preimages(&self, y: f64) -> Result<Vec<Preimage>> {
        if !(-ENDPOINT_TOL..=1.0 + ENDPOINT_TOL).contains(&y) {
            return Err(Error::Domain(format!("y = {y} is outside [0, 1]")));
        }
        let mut out = Vec::new();
        for (k, br) in self.branches.iter().enumerate() {
            let (ymin, ymax) = br.image();
            if y >= ymin - ENDPOINT_TOL && y <= ymax + ENDPOINT_TOL {
                out.push(Preimage { x: br.inverse(y.clamp(ymin, ymax), k)?, branch: k });
            }
        }
        Ok(out)
    }

    /// Points other than `b` that map to `b`. Each must be a critical point.
    pub fn infinitesimal_holes(&self, b: f64) -> Result<Vec<f64>> {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::Domain(format!("boundary point {b} must lie in (0, 1)")));
        }
        let mut holes: Vec<f64> = Vec::new();
        for p in self.branch_preimages(b)? {
            if (p.x - b).abs() <= ENDPOINT_TOL {
                continue;
            }
            let Some(k) = self.critical_index(p.x) else {
                return Err(Error::HypothesisViolation(format!(
                    "{} maps to the boundary point {b} from the interior of branch {}",
                    p.x, p.branch
                )));
            };
            let c = self.critical[k];
            if !holes.iter().any(|h| (h - c).abs() <= ENDPOINT_TOL) {
                holes.push(c);
            }
        }
        holes.sort_by(f64::total_cmp);
        Ok(holes)
    }
}

/// A smooth additive perturbation `g(x, eps)` with its `x`-derivatives.
#[derive(Clone)]
pub struct SmoothPerturbation {
    pub g: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub dg: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub d2g: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

/// How one branch of the base map depends on `eps`.
#[derive(Clone, Default)]
pub enum BranchPerturbation {
    #[default]
    None,
    /// `slope + eps * slope_eps`, `intercept + eps * intercept_eps`.
    Affine { slope_eps: f64, intercept_eps: f64 },
    Smooth(SmoothPerturbation),
}

impl fmt::Debug for BranchPerturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchPerturbation::None => f.write_str("None"),
            BranchPerturbation::Affine { slope_eps, intercept_eps } => f
                .debug_struct("Affine")
                .field("slope_eps", slope_eps)
                .field("intercept_eps", intercept_eps)
                .finish(),
            BranchPerturbation::Smooth(_) => f.write_str("Smooth(..)"),
        }
    }
}

/// First-order hole geometry near an infinitesimal hole `h`: the hole is
/// `(h - a eps + o(eps), h + b eps + o(eps))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleCoefficient {
    pub point: f64,
    pub a: f64,
    pub b: f64,
}

/// `eps -> T_eps` with fixed critical set and a boundary point `b`.
#[derive(Clone, Debug)]
pub struct PerturbationFamily {
    base: PiecewiseMap,
    perturbations: Vec<BranchPerturbation>,
    boundary: f64,
    hole_coefficients: Option<Vec<HoleCoefficient>>,
}

impl PerturbationFamily {
    pub fn new(
        base: PiecewiseMap,
        perturbations: Vec<BranchPerturbation>,
        boundary: f64,
        hole_coefficients: Option<Vec<HoleCoefficient>>,
    ) -> Result<Self> {
        if perturbations.len() != base.branches().len() {
            return Err(Error::Model(format!(
                "{} perturbations for {} branches",
                perturbations.len(),
                base.branches().len()
            )));
        }
        if !(boundary > 0.0 && boundary < 1.0) {
            return Err(Error::Model(format!("boundary point {boundary} must lie in (0, 1)")));
        }
        if let Some(hc) = &hole_coefficients {
            if let Some(bad) = hc.iter().find(|h| !(h.a >= 0.0 && h.b >= 0.0)) {
                return Err(Error::Model(format!(
                    "hole coefficients at {} must be nonnegative",
                    bad.point
                )));
            }
        }
        Ok(PerturbationFamily { base, perturbations, boundary, hole_coefficients })
    }

    pub fn base(&self) -> &PiecewiseMap {
        &self.base
    }

    pub fn boundary(&self) -> f64 {
        self.boundary
    }

    pub fn perturbations(&self) -> &[BranchPerturbation] {
        &self.perturbations
    }

    pub fn hole_coefficients(&self) -> Option<&[HoleCoefficient]> {
        self.hole_coefficients.as_deref()
    }

    pub fn left(&self) -> Interval {
        Interval { lo: 0.0, hi: self.boundary }
    }

    pub fn right(&self) -> Interval {
        Interval { lo: self.boundary, hi: 1.0 }
    }

    /// `T_eps`. At `eps = 0` every branch coefficient equals the base one.
    pub fn instantiate(&self, eps: f64) -> Result<PiecewiseMap> {
        let branches = self
            .base
            .branches()
            .iter()
            .zip(&self.perturbations)
            .map(|(br, pert)| perturb_branch(br, pert, eps))
            .collect();
        PiecewiseMap::new(branches)
    }

    /// True when every branch of `T_0` is affine and maps its domain onto the
    /// whole half containing it, so Lebesgue measure restricted to each half
    /// is invariant.
    pub fn has_full_branch_affine_halves(&self) -> bool {
        let b = self.boundary;
        self.base.is_affine()
            && self.base.critical_index(b).is_some()
            && self.base.branches().iter().all(|br| {
                let (ymin, ymax) = br.image();
                let half = if br.domain().hi <= b + ENDPOINT_TOL { (0.0, b) } else { (b, 1.0) };
                (ymin - half.0).abs() <= ENDPOINT_TOL && (ymax - half.1).abs() <= ENDPOINT_TOL
            })
    }

    /// Check the hypotheses that are decidable from the map data alone.
    pub fn validate_hypotheses(&self, depth: usize) -> Result<HypothesisReport> {
        if depth < 1 {
            return Err(Error::Domain("hypothesis depth must be at least 1".into()));
        }
        let t0 = &self.base;
        let b = self.boundary;
        let mut diagnostics = Vec::new();

        let min_expansion = t0.min_expansion();
        let distortion = t0.distortion();

        // invariance of the two halves at eps = 0
        let mut invariant_halves = true;
        for (k, br) in t0.branches().iter().enumerate() {
            let dom = br.domain();
            let pieces: Vec<(Interval, Interval)> = if dom.hi <= b + ENDPOINT_TOL {
                vec![(dom, self.left())]
            } else if dom.lo >= b - ENDPOINT_TOL {
                vec![(dom, self.right())]
            } else {
                vec![
                    (Interval { lo: dom.lo, hi: b }, self.left()),
                    (Interval { lo: b, hi: dom.hi }, self.right()),
                ]
            };
            for (piece, half) in pieces {
                let (y0, y1) = (br.eval(piece.lo), br.eval(piece.hi));
                if !(half.contains(y0) && half.contains(y1)) {
                    invariant_halves = false;
                    diagnostics.push(format!(
                        "branch {k} maps {piece} outside its half {half} at eps = 0"
                    ));
                }
            }
        }

        // (I2) to finite depth
        let mut passes_i2 = true;
        match t0.infinitesimal_holes(b) {
            Ok(holes) => {
                let mut frontier: Vec<f64> = (0..t0.critical_set().len())
                    .flat_map(|k| {
                        let (l, r) = t0.one_sided(k);
                        l.into_iter().chain(r)
                    })
                    .collect();
                let mut seen: Vec<f64> = Vec::new();
                'depth: for k in 1..=depth {
                    let mut next = Vec::new();
                    for &v in &frontier {
                        if seen.iter().any(|s| (s - v).abs() <= ENDPOINT_TOL) {
                            continue;
                        }
                        seen.push(v);
                        if let Some(h) = holes.iter().find(|h| (*h - v).abs() <= I2_TOL) {
                            passes_i2 = false;
                            diagnostics.push(format!(
                                "(I2) fails: a critical orbit reaches the infinitesimal hole {h} after {k} steps"
                            ));
                            break 'depth;
                        }
                        next.extend(t0.evaluate(v.clamp(0.0, 1.0))?);
                    }
                    frontier = next;
                }
                if passes_i2 {
                    diagnostics.push(format!(
                        "(I2) checked to depth {depth} only; deeper returns are not examined"
                    ));
                }
            }
            Err(e) => {
                passes_i2 = false;
                diagnostics.push(format!("(I2) not checkable: {e}"));
            }
        }

        let passes_i4a = min_expansion > 2.0;
        if !passes_i4a {
            diagnostics.push(format!(
                "(I4a) fails: minimum expansion {min_expansion} is not > 2; the (I4b) route is not supported"
            ));
        }

        let passes_p2 = if let Some(k) = t0.critical_index(b) {
            let (left, right) = t0.one_sided(k);
            let (l, r) = (left.unwrap_or(f64::NAN), right.unwrap_or(f64::NAN));
            let mut ok = true;
            if !(l < b - ENDPOINT_TOL) {
                ok = false;
                diagnostics.push(format!("(P2b) fails: T_0(b-) = {l} is not < b = {b}"));
            }
            if !(r > b + ENDPOINT_TOL) {
                ok = false;
                diagnostics.push(format!("(P2b) fails: T_0(b+) = {r} is not > b = {b}"));
            }
            for eps in [1e-4, 1e-3] {
                match self.instantiate(eps) {
                    Ok(t) if t.critical_index(b).is_none() => {
                        ok = false;
                        diagnostics.push(format!("(P2b) fails: b is not critical for eps = {eps}"));
                    }
                    Ok(_) => {}
                    Err(e) => diagnostics.push(format!("(P2b) eps = {eps} not instantiable: {e}")),
                }
            }
            ok
        } else {
            let mut ok = true;
            let v = t0.evaluate(b)?[0];
            if (v - b).abs() > ENDPOINT_TOL {
                ok = false;
                diagnostics.push(format!("(P2a) fails: T_0(b) = {v} != b = {b}"));
            }
            for eps in [1e-4, 1e-3, 1e-2] {
                match self.instantiate(eps) {
                    Ok(t) => {
                        let v = t.evaluate(b)?[0];
                        if (v - b).abs() > ENDPOINT_TOL {
                            ok = false;
                            diagnostics.push(format!(
                                "(P2a) fails: T_eps(b) = {v} != b at eps = {eps}"
                            ));
                        }
                    }
                    Err(e) => diagnostics.push(format!("(P2a) eps = {eps} not instantiable: {e}")),
                }
            }
            ok
        };

        diagnostics.push("(I1) assumed; verify via spectral simplicity at eps = 0".into());
        diagnostics.push("(P1) assumed; verify via spectral simplicity at eps > 0".into());
        diagnostics.push("(I3) not checked; requires the eps = 0 densities".into());

        Ok(HypothesisReport {
            min_expansion,
            distortion,
            passes_i2,
            i2_depth: depth,
            passes_i3: None,
            passes_i4a,
            passes_p2,
            invariant_halves,
            diagnostics,
        })
    }
}

fn perturb_branch(br: &Branch, pert: &BranchPerturbation, eps: f64) -> Branch {
    let domain = br.domain();
    match (br.kind(), pert) {
        (_, BranchPerturbation::None) => br.clone(),
        (BranchKind::Affine { slope, intercept }, BranchPerturbation::Affine { slope_eps, intercept_eps }) => {
            Branch::affine(domain, slope + eps * slope_eps, intercept + eps * intercept_eps)
        }
        (BranchKind::Smooth(s), BranchPerturbation::Affine { slope_eps, intercept_eps }) => {
            let (se, ie) = (*slope_eps, *intercept_eps);
            let (f, df, d2f) = (s.f.clone(), s.df.clone(), s.d2f.clone());
            Branch::smooth(
                domain,
                move |x| f(x) + eps * (se * x + ie),
                move |x| df(x) + eps * se,
                move |x| d2f(x),
            )
        }
        (kind, BranchPerturbation::Smooth(p)) => {
            let base = Branch { domain, kind: kind.clone() };
            let (b0, b1, b2) = (base.clone(), base.clone(), base);
            let (g, dg, d2g) = (p.g.clone(), p.dg.clone(), p.d2g.clone());
            Branch::smooth(
                domain,
                move |x| b0.eval(x) + g(x, eps),
                move |x| b1.derivative(x) + dg(x, eps),
                move |x| b2.second_derivative(x) + d2g(x, eps),
            )
        }
    }
}

/// Outcome of [`PerturbationFamily::validate_hypotheses`].
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub min_expansion: f64,
    pub distortion: f64,
    pub passes_i2: bool,
    pub i2_depth: usize,
    /// `None` until [`HypothesisReport::check_i3`] is run with densities.
    pub passes_i3: Option<bool>,
    pub passes_i4a: bool,
    pub passes_p2: bool,
    pub invariant_halves: bool,
    pub diagnostics: Vec<String>,
}

impl HypothesisReport {
    /// (I3): the ergodic densities are positive at the infinitesimal holes.
    pub fn check_i3(
        &mut self,
        family: &PerturbationFamily,
        phi_l: &DensityGrid,
        phi_r: &DensityGrid,
    ) -> Result<bool> {
        let b = family.boundary();
        let holes = family.base().infinitesimal_holes(b)?;
        self.diagnostics.retain(|d| !d.starts_with("(I3) not checked"));
        let mut ok = true;
        for h in holes {
            let phi = if h < b { phi_l } else { phi_r };
            let v = phi.value_near(h);
            if !(v > 0.0) {
                ok = false;
                self.diagnostics.push(format!("(I3) fails: density at hole {h} is {v}"));
            }
        }
        self.passes_i3 = Some(ok);
        Ok(ok)
    }

    /// All decided predicates pass.
    pub fn all_pass(&self) -> bool {
        self.passes_i2
            && self.passes_i4a
            && self.passes_p2
            && self.invariant_halves
            && self.passes_i3.unwrap_or(true)
    }
}
