//! Bounded-variation diagnostics for grid densities.
//!
//! A density is split as `f = f_reg + f_sal` with the saltus part a finite sum
//! of steps `s_u H_u`, where `H_u = -1` left of `u` and `0` right of it, so
//! `f_sal(1) = 0`. Jump locations are matched against the postcritical
//! hierarchy `#(u) = min { k >= 1 : u in T^k(C) }`.

use std::io::Write;

use serde::Serialize;

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::map_model::{Interval, PiecewiseMap};
use crate::transfer::LYConstants;
use crate::ENDPOINT_TOL;

/// Jump threshold factor: a boundary jumps when `|diff| > KAPPA * lip / n`.
pub const KAPPA: f64 = 5.0;
/// Slack on the jump-decay bound.
pub const DECAY_SLACK: f64 = 1.1;

/// `sum |d_{i+1} - d_i|`.
pub fn total_variation(d: &DensityGrid) -> f64 {
    d.total_variation()
}

/// A point of the postcritical set with its minimal depth and a witness orbit.
#[derive(Clone, Debug, Serialize)]
pub struct HierarchyPoint {
    pub u: f64,
    pub depth: usize,
    /// Critical point whose orbit reaches `u`.
    pub generator: f64,
    /// Branch applied at each of the `depth` steps.
    pub path: Vec<usize>,
}

/// Forward images of the one-sided critical values, annotated with `#(u)`.
#[derive(Clone, Debug, Serialize)]
pub struct PostcriticalHierarchy {
    pub points: Vec<HierarchyPoint>,
    /// `sup |T'|` of the generating map; bounds the spacing of Ulam-smeared sub-steps.
    pub max_expansion: f64,
}

/// Breadth-first enumeration to `depth`; revisits keep the minimal depth.
pub fn postcritical_hierarchy(map: &PiecewiseMap, depth: usize) -> Result<PostcriticalHierarchy> {
    if depth < 1 {
        return Err(Error::Domain("hierarchy depth must be at least 1".into()));
    }
    let crit = map.critical_set();
    let d = map.branches().len();
    let mut points: Vec<HierarchyPoint> = Vec::new();
    let mut frontier: Vec<HierarchyPoint> = Vec::new();
    for (k, &c) in crit.iter().enumerate() {
        for br in [k.checked_sub(1), (k < d).then_some(k)].into_iter().flatten() {
            let u = map.branches()[br].eval(c).clamp(0.0, 1.0);
            frontier.push(HierarchyPoint { u, depth: 1, generator: c, path: vec![br] });
        }
    }
    for level in 1..=depth {
        let mut next = Vec::new();
        for pt in frontier {
            if points.iter().any(|q| (q.u - pt.u).abs() <= ENDPOINT_TOL) {
                continue;
            }
            if level < depth {
                // at a critical point both one-sided branches continue the orbit
                let branches: Vec<usize> = match map.critical_index(pt.u) {
                    Some(k) => [k.checked_sub(1), (k < d).then_some(k)].into_iter().flatten().collect(),
                    None => vec![map.branch_containing(pt.u)],
                };
                for br in branches {
                    let mut path = pt.path.clone();
                    path.push(br);
                    let u = map.branches()[br].eval(pt.u).clamp(0.0, 1.0);
                    next.push(HierarchyPoint { u, depth: level + 1, generator: pt.generator, path });
                }
            }
            points.push(pt);
        }
        frontier = next;
    }
    points.sort_by(|a, b| a.u.total_cmp(&b.u));
    Ok(PostcriticalHierarchy { points, max_expansion: map.max_expansion() })
}

impl PostcriticalHierarchy {
    /// Largest discrepancy between each `u` and its orbit recomputed from the generator.
    pub fn soundness_error(&self, map: &PiecewiseMap) -> f64 {
        self.points
            .iter()
            .map(|p| {
                let x = p.path.iter().fold(p.generator, |x, &br| map.branches()[br].eval(x).clamp(0.0, 1.0));
                (x - p.u).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Minimal depth of a point within `tol` of `u`.
    pub fn depth_of(&self, u: f64, tol: f64) -> Option<usize> {
        self.points.iter().filter(|p| (p.u - u).abs() <= tol).map(|p| p.depth).min()
    }
}

/// One saltus jump, possibly merged from adjacent above-threshold boundaries.
#[derive(Clone, Debug, Serialize)]
pub struct Jump {
    /// Boundary with the largest single difference in the cluster.
    pub location: f64,
    /// Net size `f(u+) - f(u-)`.
    pub size: f64,
    /// First and last cell boundary of the cluster.
    pub span: (f64, f64),
    /// `sum |diff|` over the cluster.
    pub variation: f64,
    /// Matched hierarchy depth; `None` for unmatched jumps.
    pub depth: Option<usize>,
}

/// `f = regular + saltus` on the grid.
#[derive(Clone, Debug, Serialize)]
pub struct SaltusDecomposition {
    pub jumps: Vec<Jump>,
    pub regular: DensityGrid,
    pub saltus: DensityGrid,
    /// `max |reg_{i+1} - reg_i| * n`.
    pub lipschitz_estimate: f64,
    pub threshold: f64,
}

impl SaltusDecomposition {
    pub fn reconstruct(&self) -> DensityGrid {
        self.regular.combine(1.0, &self.saltus, 1.0).expect("parts share a grid")
    }

    pub fn unmatched(&self) -> usize {
        self.jumps.iter().filter(|j| j.depth.is_none()).count()
    }

    /// `sum |s_u|`.
    pub fn jump_mass(&self) -> f64 {
        self.jumps.iter().map(|j| j.size.abs()).fold(0.0, |a, x| a + x)
    }

    /// Variation of the saltus part across cell boundaries inside `j`.
    pub fn saltus_variation_on(&self, j: Interval) -> f64 {
        let s = self.saltus.values();
        let n = s.len() as f64;
        s.windows(2)
            .enumerate()
            .filter(|(i, _)| j.contains((*i + 1) as f64 / n))
            .map(|(_, w)| (w[1] - w[0]).abs())
            .fold(0.0, |a, x| a + x)
    }

    /// `location,size,depth` rows; unmatched depths are written as `inf`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "location,size,depth")?;
        for j in &self.jumps {
            let depth = j.depth.map_or("inf".to_string(), |k| k.to_string());
            writeln!(w, "{},{},{}", j.location, j.size, depth)?;
        }
        Ok(())
    }
}

/// `1 + C_LY`: puts the jump threshold above the grid-scale oscillations
/// that Ulam projection leaves around deep postcritical points.
pub fn default_lip_bound(ly: Option<&LYConstants>) -> f64 {
    1.0 + ly.map_or(0.0, |l| l.c_ly)
}

/// Split `d` into regular and saltus parts and match jumps to `hierarchy`.
pub fn saltus_decompose(d: &DensityGrid, hierarchy: &PostcriticalHierarchy, lip_bound: f64) -> Result<SaltusDecomposition> {
    if !(lip_bound > 0.0) {
        return Err(Error::Domain(format!("Lipschitz bound {lip_bound} must be positive")));
    }
    let n = d.n();
    let nf = n as f64;
    let threshold = KAPPA * lip_bound / nf;
    let v = d.values();
    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let above: Vec<bool> = diffs.iter().map(|x| x.abs() > threshold).collect();

    // Ulam smears a deep jump into sub-steps up to ceil(Lambda) cells apart
    let gap = hierarchy.max_expansion.max(1.0).ceil() as usize;
    let half_cell = 0.5 / nf;
    let marked: Vec<usize> = (0..diffs.len()).filter(|&i| above[i]).collect();
    let mut jumps = Vec::new();
    let mut start = 0;
    while start < marked.len() {
        let mut end = start + 1;
        while end < marked.len() && marked[end] - marked[end - 1] <= gap {
            end += 1;
        }
        let run = &marked[start..end];
        start = end;
        let peak = *run.iter().max_by(|&&x, &&y| diffs[x].abs().total_cmp(&diffs[y].abs())).expect("non-empty run");
        let span = ((run[0] + 1) as f64 / nf, (run[run.len() - 1] + 1) as f64 / nf);
        let cluster = Interval { lo: span.0, hi: span.1 };
        let depth = hierarchy
            .points
            .iter()
            .map(|p| (cluster.distance(p.u), p.depth))
            .filter(|&(dist, _)| dist <= half_cell)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, k)| k);
        jumps.push(Jump {
            location: (peak + 1) as f64 / nf,
            size: run.iter().map(|&i| diffs[i]).fold(0.0, |a, x| a + x),
            span,
            variation: run.iter().map(|&i| diffs[i].abs()).fold(0.0, |a, x| a + x),
            depth,
        });
    }

    // f_sal on cell i is minus the jumps at boundaries to its right
    let mut saltus = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n.saturating_sub(1)).rev() {
        if above[i] {
            acc -= diffs[i];
        }
        saltus[i] = acc;
    }
    let regular: Vec<f64> = v.iter().zip(&saltus).map(|(a, s)| a - s).collect();
    let lipschitz_estimate = regular.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max) * nf;
    Ok(SaltusDecomposition {
        jumps,
        regular: DensityGrid::new(regular)?,
        saltus: DensityGrid::new(saltus)?,
        lipschitz_estimate,
        threshold,
    })
}

/// One row of the jump-decay check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecayRow {
    pub m: usize,
    /// `sum_{#(u) > m} |s_u|`, unmatched jumps included for every `m`.
    pub tail: f64,
    /// `lambda^{-m} C_LY`.
    pub bound: f64,
    pub pass: bool,
}

/// Tail sums of jump sizes against `lambda^{-m} C_LY` for `m = 0..=m_max`.
pub fn jump_decay_profile(dec: &SaltusDecomposition, ly: &LYConstants, m_max: usize) -> Vec<DecayRow> {
    (0..=m_max)
        .map(|m| {
            let tail = dec
                .jumps
                .iter()
                .filter(|j| j.depth.is_none_or(|k| k > m))
                .map(|j| j.size.abs())
                .fold(0.0, |a, x| a + x);
            let bound = ly.lambda.powi(-(m as i32)) * ly.c_ly;
            DecayRow { m, tail, bound, pass: tail <= DECAY_SLACK * bound }
        })
        .collect()
}
