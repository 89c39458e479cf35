//! Ulam discretization of the transfer operator.
//!
//! For the uniform partition `A_0, ..., A_{n-1}` of `[0, 1]` the Ulam matrix
//! has entries `P[i][j] = Leb(A_i ∩ T^{-1} A_j) / Leb(A_i)`. Acting on cell
//! averages, `(L d)_j = sum_i d_i P[i][j]` is the discrete transfer operator.
//! Affine branches give exact preimage intervals; smooth branches go through
//! the bracketing inverse of [`Branch::inverse`](crate::map_model::Branch::inverse).

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::map_model::{BranchKind, PiecewiseMap};
use crate::ENDPOINT_TOL;

/// Matrices with fewer rows than this are stored densely.
pub const DENSE_BELOW: usize = 512;
/// Allowed deviation of a row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Image slivers shorter than this are rounding noise and are dropped.
const SLIVER: f64 = 1e-15;

#[derive(Clone, Debug)]
enum Storage {
    Dense(Vec<f64>),
    Sparse { offsets: Vec<usize>, cols: Vec<usize>, vals: Vec<f64> },
}

/// Row-stochastic `n x n` matrix.
#[derive(Clone, Debug)]
pub struct UlamMatrix {
    n: usize,
    storage: Storage,
}

impl UlamMatrix {
    /// Build from per-row `(column, value)` lists sorted by column.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rows.len() });
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(&(j, v)) = row.iter().find(|(j, v)| *j >= n || !(0.0..=1.0 + ROW_SUM_TOL).contains(v)) {
                return Err(Error::Domain(format!("entry ({i}, {j}) = {v} is not a probability")));
            }
        }
        let storage = if n < DENSE_BELOW {
            let mut data = vec![0.0; n * n];
            for (i, row) in rows.iter().enumerate() {
                for &(j, v) in row {
                    data[i * n + j] += v;
                }
            }
            Storage::Dense(data)
        } else {
            let mut offsets = Vec::with_capacity(n + 1);
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            offsets.push(0);
            for row in rows {
                for (j, v) in row {
                    cols.push(j);
                    vals.push(v);
                }
                offsets.push(cols.len());
            }
            Storage::Sparse { offsets, cols, vals }
        };
        Ok(UlamMatrix { n, storage })
    }

    /// Build from a row-major dense array.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: data.len() });
        }
        let rows = data
            .chunks(n)
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
            .collect();
        Self::from_rows(n, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    /// Visit the nonzero entries of row `i` in ascending column order.
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(data) => {
                for (j, &v) in data[i * self.n..(i + 1) * self.n].iter().enumerate() {
                    if v != 0.0 {
                        f(j, v);
                    }
                }
            }
            Storage::Sparse { offsets, cols, vals } => {
                for k in offsets[i]..offsets[i + 1] {
                    f(cols[k], vals[k]);
                }
            }
        }
    }

    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.for_each_in_row(i, |j, v| out.push((j, v)));
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let mut out = 0.0;
        self.for_each_in_row(i, |c, v| {
            if c == j {
                out += v;
            }
        });
        out
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        let mut k = 0;
        self.for_each_in_row(i, |_, _| k += 1);
        k
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let mut s = 0.0;
        self.for_each_in_row(i, |_, v| s += v);
        s
    }

    /// `max_i |sum_j P[i][j] - 1|`.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n).map(|i| (self.row_sum(i) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut data = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            self.for_each_in_row(i, |j, v| data[i * self.n + j] += v);
        }
        data
    }

    /// `y_j = sum_i x_i P[i][j]`, summed in ascending `i`.
    pub fn apply_raw(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                self.for_each_in_row(i, |j, v| y[j] += xi * v);
            }
        }
    }

    /// Sub-block on `cells x cells` with the columns flagged in `killed`
    /// (indexed relative to `cells.start`) set to zero.
    pub fn restrict(&self, cells: Range<usize>, killed: &[bool]) -> Result<UlamMatrix> {
        let m = cells.len();
        if killed.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: killed.len() });
        }
        let rows = cells
            .clone()
            .map(|i| {
                let mut row = Vec::new();
                self.for_each_in_row(i, |j, v| {
                    if cells.contains(&j) && !killed[j - cells.start] {
                        row.push((j - cells.start, v));
                    }
                });
                row
            })
            .collect();
        // sub-stochastic blocks are allowed here
        UlamMatrix::from_rows(m, rows)
    }

    /// Dump as `row,col,value` lines with a header.
    pub fn write_triplets(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{i},{j},{v}")?;
            }
        }
        Ok(())
    }
}

/// Assemble the Ulam matrix of `map` on `n` uniform cells.
pub fn build_ulam(map: &PiecewiseMap, n: usize) -> Result<UlamMatrix> {
    let d = map.branches().len();
    if n < 2 * d {
        return Err(Error::Domain(format!("grid of {n} cells is too coarse for {d} branches")));
    }
    for (k, br) in map.branches().iter().enumerate() {
        let (ymin, ymax) = br.image();
        if ymin < -ENDPOINT_TOL || ymax > 1.0 + ENDPOINT_TOL {
            return Err(Error::Model(format!("branch {k} image [{ymin}, {ymax}] escapes [0, 1]")));
        }
    }
    let rows = (0..n)
        .into_par_iter()
        .map(|i| ulam_row(map, n, i))
        .collect::<Result<Vec<_>>>()?;
    UlamMatrix::from_rows(n, rows)
}

fn ulam_row(map: &PiecewiseMap, n: usize, i: usize) -> Result<Vec<(usize, f64)>> {
    let nf = n as f64;
    let (x0, x1) = (i as f64 / nf, (i + 1) as f64 / nf);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    let first = map.branch_containing(x0);
    for (k, br) in map.branches().iter().enumerate().skip(first) {
        let dom = br.domain();
        if dom.lo >= x1 {
            break;
        }
        let (a, b) = (x0.max(dom.lo), x1.min(dom.hi));
        if b - a <= SLIVER {
            continue;
        }
        let (ya, yb) = (br.eval(a), br.eval(b));
        let (y0, y1) = if ya <= yb { (ya.max(0.0), yb.min(1.0)) } else { (yb.max(0.0), ya.min(1.0)) };
        let j0 = ((y0 * nf).floor() as usize).min(n - 1);
        let j1 = ((y1 * nf).ceil() as usize).clamp(j0 + 1, n);
        for j in j0..j1 {
            let lo = y0.max(j as f64 / nf);
            let hi = y1.min((j + 1) as f64 / nf);
            if hi - lo <= SLIVER {
                continue;
            }
            let len = match br.kind() {
                BranchKind::Affine { slope, .. } => (hi - lo) / slope.abs(),
                BranchKind::Smooth(_) => (br.inverse(hi, k)? - br.inverse(lo, k)?).abs(),
            };
            entries.push((j, len * nf));
        }
    }
    entries.sort_by_key(|e| e.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (j, v) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => merged.push((j, v)),
        }
    }
    Ok(merged)
}

/// One step of the discrete transfer operator.
pub fn apply_transfer(p: &UlamMatrix, d: &DensityGrid) -> Result<DensityGrid> {
    if d.n() != p.n() {
        return Err(Error::DimensionMismatch { expected: p.n(), found: d.n() });
    }
    let mut out = vec![0.0; p.n()];
    p.apply_raw(d.values(), &mut out);
    DensityGrid::new(out)
}

/// Constants of the Lasota–Yorke inequality in the `lambda > 2` regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LYConstants {
    pub lambda: f64,
    pub distortion: f64,
    pub c_eps: f64,
    pub beta: f64,
    pub c_ly: f64,
}

impl LYConstants {
    /// Right-hand side of `Var(L^k f) <= C_LY beta^k Var f + C_LY |f|_1`.
    pub fn iterated_bound(&self, k: u32, variation: f64, l1: f64) -> f64 {
        self.c_ly * self.beta.powi(k as i32) * variation + self.c_ly * l1
    }
}

/// `C = D / lambda + 2 / min_i |c_{i+1} - c_i|`.
fn one_step_constant(map: &PiecewiseMap) -> (f64, f64, f64) {
    let lambda = map.min_expansion();
    let distortion = map.distortion();
    (lambda, distortion, distortion / lambda + 2.0 / map.min_branch_width())
}

/// Lasota–Yorke constants of `map`, which also serves as the base map.
pub fn lasota_yorke_constants(map: &PiecewiseMap) -> Result<LYConstants> {
    lasota_yorke_constants_relative(map, map)
}

/// Lasota–Yorke constants of `map_eps`, with `C_LY` built from the one-step
/// constant of `base`.
pub fn lasota_yorke_constants_relative(map_eps: &PiecewiseMap, base: &PiecewiseMap) -> Result<LYConstants> {
    let (lambda, distortion, c_eps) = one_step_constant(map_eps);
    if !(lambda > 2.0) {
        return Err(Error::UnsupportedRegime(format!(
            "minimum expansion {lambda} <= 2; uniform estimates would need the no-periodic-critical-point route (I4b)"
        )));
    }
    let (_, _, c0) = one_step_constant(base);
    let beta = 2.0 / lambda;
    Ok(LYConstants { lambda, distortion, c_eps, beta, c_ly: 2.0 * c0 / (1.0 - beta) })
}

/// `(1 / N) sum_{k < N} L^k 1`.
pub fn cesaro_density(p: &UlamMatrix, n_terms: usize) -> Result<DensityGrid> {
    if n_terms < 1 {
        return Err(Error::Domain("the Cesàro average needs at least one term".into()));
    }
    let n = p.n();
    let mut cur = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for k in 0..n_terms {
        acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += c);
        if k + 1 < n_terms {
            p.apply_raw(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
    }
    let inv = 1.0 / n_terms as f64;
    DensityGrid::new(acc.into_iter().map(|a| a * inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::{Branch, Interval};
    use crate::scenario::builtin;

    fn doubling() -> PiecewiseMap {
        PiecewiseMap::new(vec![
            Branch::affine(Interval { lo: 0.0, hi: 0.5 }, 2.0, 0.0),
            Branch::affine(Interval { lo: 0.5, hi: 1.0 }, 2.0, -1.0),
        ])
        .unwrap()
    }

    #[test]
    fn family_a_first_row_on_six_cells() {
        let t0 = builtin::family_a().instantiate(0.0).unwrap();
        let p = build_ulam(&t0, 12).unwrap();
        // 12 cells: A_0 = [0, 1/12] maps onto [0, 1/4] = cells 0..3
        for j in 0..12 {
            let expect = if j < 3 { 1.0 / 3.0 } else { 0.0 };
            assert!((p.get(0, j) - expect).abs() < 1e-15, "col {j}");
        }
    }

    #[test]
    fn family_a_first_row_coarse_grid() {
        // n = 6 is below the 2 * branches floor
        let t0 = builtin::family_a().instantiate(0.0).unwrap();
        assert!(build_ulam(&t0, 6).is_err());
    }

    #[test]
    fn doubling_on_two_cells() {
        let p = build_ulam(&doubling(), 4).unwrap();
        // row 0 = [0, 1/4] -> [0, 1/2]: half into each of the first two cells
        assert_eq!(p.row(0), vec![(0, 0.5), (1, 0.5)]);
        let p2 = UlamMatrix::from_dense(2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        for i in 0..2 {
            assert_eq!(p2.row_sum(i), 1.0);
        }
    }

    #[test]
    fn rows_sum_to_one_and_storage_switches() {
        let fam = builtin::family_a();
        for (eps, n) in [(0.0, 60), (0.01, 600), (0.02, 1200)] {
            let p = build_ulam(&fam.instantiate(eps).unwrap(), n).unwrap();
            assert!(p.max_row_sum_error() <= ROW_SUM_TOL);
            assert_eq!(p.is_sparse(), n >= DENSE_BELOW);
        }
    }

    #[test]
    fn lebesgue_is_fixed_for_family_a() {
        let p = build_ulam(&builtin::family_a().instantiate(0.0).unwrap(), 96).unwrap();
        let out = apply_transfer(&p, &DensityGrid::uniform(96)).unwrap();
        assert!(out.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        let z = apply_transfer(&p, &DensityGrid::zeros(96)).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        assert!(apply_transfer(&p, &DensityGrid::uniform(95)).is_err());
    }

    #[test]
    fn ly_constants() {
        let t0 = builtin::family_a().instantiate(0.0).unwrap();
        let ly = lasota_yorke_constants(&t0).unwrap();
        assert_eq!(ly.lambda, 3.0);
        assert_eq!(ly.distortion, 0.0);
        assert!((ly.c_eps - 12.0).abs() < 1e-12);
        assert!((ly.beta - 2.0 / 3.0).abs() < 1e-15);
        assert!((ly.c_ly - 72.0).abs() < 1e-9);

        let steep = PiecewiseMap::new(vec![
            Branch::affine(Interval { lo: 0.0, hi: 0.5 }, 4.0, -1.0),
            Branch::affine(Interval { lo: 0.5, hi: 1.0 }, -4.0, 3.0),
        ]);
        // slope 4 on a half overshoots; use images clipped to [0,1] via a 4-branch map instead
        assert!(steep.is_err());
        let full4 = PiecewiseMap::new(vec![
            Branch::affine(Interval { lo: 0.0, hi: 0.5 }, 2.0, 0.0),
            Branch::affine(Interval { lo: 0.5, hi: 1.0 }, -2.0, 2.0),
        ])
        .unwrap();
        assert!(matches!(lasota_yorke_constants(&full4), Err(Error::UnsupportedRegime(m)) if m.contains("I4b")));
    }

    #[test]
    fn cesaro_single_term_is_uniform() {
        let p = build_ulam(&builtin::family_a().instantiate(0.01).unwrap(), 120).unwrap();
        assert_eq!(cesaro_density(&p, 1).unwrap(), DensityGrid::uniform(120));
        assert!(cesaro_density(&p, 0).is_err());
        let t0 = build_ulam(&builtin::family_a().instantiate(0.0).unwrap(), 120).unwrap();
        let f = cesaro_density(&t0, 37).unwrap();
        let worst = f.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn triplet_dump() {
        let p = UlamMatrix::from_dense(2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        p.write_triplets(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,col,value\n0,0,0.25\n0,1,0.75\n1,0,1\n");
    }
}
