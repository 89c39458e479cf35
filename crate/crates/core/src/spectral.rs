//! Leading spectral data of Ulam matrices: the invariant density, the second
//! eigenpair `(rho, psi)` and escape rates of open subsystems.
//!
//! The iterative solvers are plain power iterations acting on densities
//! (`x -> P^T x`). A dense Schur decomposition backs them up for small grids
//! and serves as the cross-check oracle.

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::map_model::Interval;
use crate::transfer::UlamMatrix;

/// Default L¹ tolerance of the iterations.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest `n` for which the dense fallback is attempted.
pub const DENSE_FALLBACK_CAP: usize = 4096;
/// Seed of the mean-zero restart noise.
pub const RESTART_SEED: u64 = 0x5EED;

/// Step changes below this are floating-point noise for unit-mass vectors.
const NOISE_FLOOR: f64 = 1e-14;
/// Consecutive negatively correlated iterates that trigger the dense fallback.
const OSCILLATION_STREAK: usize = 20;

/// `max(10 n ln n, 100000)`.
pub fn default_max_iter(n: usize) -> usize {
    let nf = n.max(2) as f64;
    ((10.0 * nf * nf.ln()).ceil() as usize).max(100_000)
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn mass(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stopping rule for a linearly converging iteration. With step ratio `r`
/// the distance to the limit is about `step * r / (1 - r)`; two consecutive
/// estimates below `tol` end the iteration.
struct Stopper {
    tol: f64,
    prev: f64,
    hits: usize,
}

impl Stopper {
    fn new(tol: f64) -> Self {
        Stopper { tol, prev: f64::INFINITY, hits: 0 }
    }

    fn done(&mut self, step: f64) -> bool {
        if step <= NOISE_FLOOR {
            return true;
        }
        let r = step / self.prev;
        self.prev = step;
        let estimate = if r < 1.0 { step * r / (1.0 - r) } else { f64::INFINITY };
        self.hits = if estimate < self.tol { self.hits + 1 } else { 0 };
        self.hits >= 2
    }
}

/// Outcome of one mass-renormalized power iteration.
struct PowerRun {
    density: Vec<f64>,
    iterations: usize,
    /// Mass multiplier of the last step (the leading eigenvalue).
    growth: f64,
}

fn power_iterate(p: &UlamMatrix, start: Vec<f64>, tol: f64, max_iter: usize) -> Result<PowerRun> {
    let mut x = start;
    let m = mass(&x);
    if !(m > 0.0) {
        return Err(Error::Degenerate("power iteration started from a vector without mass".into()));
    }
    x.iter_mut().for_each(|v| *v /= m);
    let mut y = vec![0.0; x.len()];
    let mut stop = Stopper::new(tol);
    for it in 1..=max_iter {
        p.apply_raw(&x, &mut y);
        let g = mass(&y);
        if !(g > 0.0) {
            return Err(Error::Degenerate("all mass escaped".into()));
        }
        y.iter_mut().for_each(|v| *v /= g);
        let step = l1_diff(&x, &y);
        std::mem::swap(&mut x, &mut y);
        if stop.done(step) {
            return Ok(PowerRun { density: x, iterations: it, growth: g });
        }
    }
    p.apply_raw(&x, &mut y);
    let g = mass(&y);
    let residual = y.iter().zip(&x).map(|(a, b)| (a - g * b).abs()).sum::<f64>() / x.len() as f64;
    Err(Error::NonConvergence { iterations: max_iter, residual })
}

/// `‖P^T x - c x‖₁`.
fn residual(p: &UlamMatrix, x: &[f64], c: f64) -> f64 {
    let mut y = vec![0.0; x.len()];
    p.apply_raw(x, &mut y);
    y.iter().zip(x).map(|(a, b)| (a - c * b).abs()).sum::<f64>() / x.len() as f64
}

/// Result of [`invariant_density`].
#[derive(Clone, Debug)]
pub struct InvariantDensity {
    /// Limit of the run started from the uniform density.
    pub phi: DensityGrid,
    /// False when the independent start converged elsewhere.
    pub leading_simple: bool,
    /// Limit of the independent start when the eigenvalue is not simple.
    pub alternate: Option<DensityGrid>,
    /// `‖L phi - phi‖₁`.
    pub residual: f64,
    pub iterations: usize,
}

/// Fixed density of `P` by power iteration from the uniform density, probed
/// for simplicity by a second run from `2 * 1_[0,1/2]`.
pub fn invariant_density(p: &UlamMatrix, tol: f64) -> Result<InvariantDensity> {
    invariant_density_with_probe(p, tol, Interval { lo: 0.0, hi: 0.5 })
}

/// As [`invariant_density`], with the second start the normalized indicator of `probe`.
pub fn invariant_density_with_probe(p: &UlamMatrix, tol: f64, probe: Interval) -> Result<InvariantDensity> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let n = p.n();
    let max_iter = default_max_iter(n);
    let main = power_iterate(p, vec![1.0; n], tol, max_iter)?;
    let start = DensityGrid::indicator(n, probe, 1.0).into_values();
    let other = power_iterate(p, start, tol, max_iter)?;
    let gap = l1_diff(&main.density, &other.density);
    let leading_simple = gap <= 10.0 * tol;
    let res = residual(p, &main.density, 1.0);
    Ok(InvariantDensity {
        residual: res,
        iterations: main.iterations.max(other.iterations),
        leading_simple,
        alternate: if leading_simple { None } else { Some(DensityGrid::new(other.density)?) },
        phi: DensityGrid::new(main.density)?,
    })
}

/// Which solver produced a second eigenpair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    Iterative,
    Dense,
}

/// `(rho, psi)` with `‖psi‖₁ = 1`, `∫ psi = 0` and `∫_{I_l} psi > 0`.
#[derive(Clone, Debug)]
pub struct SecondEigenpair {
    pub rho: f64,
    pub psi: DensityGrid,
    /// `‖L psi - rho psi‖₁`.
    pub residual: f64,
    pub iterations: usize,
    pub path: SolverPath,
}

/// Rescale to unit L¹ norm and orient so that the integral over `i_l` is positive.
fn normalize_signed(v: &mut [f64], i_l: Interval) -> Result<()> {
    let norm = l1(v);
    if !(norm > 0.0) {
        return Err(Error::Degenerate("eigenvector iterate vanished".into()));
    }
    let grid = DensityGrid::new(v.to_vec())?;
    let mut left = grid.integrate(i_l);
    if left == 0.0 {
        left = v.iter().copied().find(|x| *x != 0.0).unwrap_or(1.0);
    }
    let s = left.signum() / norm;
    v.iter_mut().for_each(|x| *x *= s);
    Ok(())
}

/// `v - (∫ v) phi`.
fn deflate(v: &mut [f64], phi: &[f64]) {
    let m = mass(v);
    v.iter_mut().zip(phi).for_each(|(x, f)| *x -= m * f);
}

fn restart_noise(n: usize, phi: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    deflate(&mut v, phi);
    v
}

/// Deflated start vector: `1_{I_l} - 1_{I_r}` plus a little seeded noise,
/// projected onto the mean-zero subspace. Falls back to pure noise when the
/// projection vanishes.
fn deflated_start(n: usize, phi: &[f64], i_l: Interval) -> Vec<f64> {
    let noise = restart_noise(n, phi);
    let ind = DensityGrid::indicator(n, i_l, 1.0);
    let mut v: Vec<f64> = ind.values().iter().zip(&noise).map(|(a, e)| 2.0 * a - 1.0 + 1e-3 * e).collect();
    deflate(&mut v, phi);
    if l1(&v) < 1e-12 {
        noise
    } else {
        v
    }
}

/// Second eigenpair by power iteration on the mean-zero subspace, with a
/// dense fallback when the iterates oscillate or stall.
pub fn second_eigenpair(p: &UlamMatrix, phi: &DensityGrid, i_l: Interval, tol: f64) -> Result<SecondEigenpair> {
    let n = p.n();
    if phi.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: phi.n() });
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let f = phi.values();
    let mut v = deflated_start(n, f, i_l);
    normalize_signed(&mut v, i_l)?;
    let mut w = vec![0.0; n];
    let mut stop = Stopper::new(tol);
    let mut neg_streak = 0;
    let max_iter = default_max_iter(n);
    let mut converged = None;
    for it in 1..=max_iter {
        p.apply_raw(&v, &mut w);
        deflate(&mut w, f);
        let rq = dot(&v, &w) / dot(&v, &v);
        neg_streak = if rq < 0.0 { neg_streak + 1 } else { 0 };
        if neg_streak >= OSCILLATION_STREAK {
            break;
        }
        if l1(&w) < 1e-300 {
            // the start lay in the kernel; retry from noise
            w = restart_noise(n, f);
        }
        normalize_signed(&mut w, i_l)?;
        let step = l1_diff(&v, &w);
        std::mem::swap(&mut v, &mut w);
        if stop.done(step) {
            converged = Some((rq, it));
            break;
        }
    }
    if let Some((_, it)) = converged {
        p.apply_raw(&v, &mut w);
        deflate(&mut w, f);
        let rho = dot(&v, &w) / dot(&v, &v);
        if rho > 0.0 {
            let res = w.iter().zip(&v).map(|(a, b)| (a - rho * b).abs()).sum::<f64>() / n as f64;
            return Ok(SecondEigenpair {
                rho,
                psi: DensityGrid::new(v)?,
                residual: res,
                iterations: it,
                path: SolverPath::Iterative,
            });
        }
    }
    if n > DENSE_FALLBACK_CAP {
        return Err(Error::Unsupported(format!(
            "second eigenpair oscillates at n = {n}, above the dense fallback cap {DENSE_FALLBACK_CAP}"
        )));
    }
    dense_second_eigenpair(p, i_l)
}

/// Dense oracle: eigenvalues of `P^T` from a real Schur form, then inverse
/// iteration for the eigenvector of the second largest one.
pub fn dense_second_eigenpair(p: &UlamMatrix, i_l: Interval) -> Result<SecondEigenpair> {
    let n = p.n();
    if n < 2 {
        return Err(Error::Domain("a second eigenpair needs n >= 2".into()));
    }
    let lt = DMatrix::from_row_slice(n, n, &p.to_dense()).transpose();
    let schur = Schur::try_new(lt.clone(), f64::EPSILON, 1000 * n)
        .ok_or(Error::NonConvergence { iterations: 1000 * n, residual: f64::NAN })?;
    let eig = schur.complex_eigenvalues();
    let perron = (0..n)
        .min_by(|&a, &b| (eig[a] - 1.0).norm().total_cmp(&(eig[b] - 1.0).norm()))
        .expect("n >= 2");
    let second = (0..n)
        .filter(|&k| k != perron)
        .max_by(|&a, &b| eig[a].norm().total_cmp(&eig[b].norm()))
        .expect("n >= 2");
    let z = eig[second];
    if z.im.abs() > 1e-8 * z.norm().max(1.0) {
        return Err(Error::Degenerate(format!(
            "second eigenvalue {} {:+}i is complex; outside the real, simple regime",
            z.re, z.im
        )));
    }
    let rho = z.re;
    let shifted = &lt - DMatrix::identity(n, n) * (rho + 1e-9);
    let lu = shifted.lu();
    let mut x = DVector::from_vec(deflated_start(n, &vec![1.0; n], i_l));
    for _ in 0..4 {
        x = lu.solve(&x).ok_or_else(|| Error::Degenerate("shifted matrix is singular".into()))?;
        let s = x.amax();
        x /= s;
    }
    let mut v: Vec<f64> = x.iter().copied().collect();
    // an eigenvector for rho != 1 has zero mass; remove rounding residue
    let m = mass(&v);
    v.iter_mut().for_each(|e| *e -= m);
    normalize_signed(&mut v, i_l)?;
    let res = residual(p, &v, rho);
    Ok(SecondEigenpair { rho, psi: DensityGrid::new(v)?, residual: res, iterations: 0, path: SolverPath::Dense })
}

/// Open-system escape data.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EscapeReport {
    /// `-log lambda_open`.
    pub rate: f64,
    /// Invariant measure of the hole cells under the closed sub-system.
    pub hole_measure: f64,
    /// `hole_measure / rate`; NaN for an empty hole.
    pub ratio: f64,
    pub lambda_open: f64,
}

/// Escape rate of the sub-system on `sub_domain` with `hole_cells` (global
/// indices) removed. `P` should describe the unperturbed map, for which
/// `sub_domain` is invariant.
pub fn escape_rate(p: &UlamMatrix, hole_cells: &[usize], sub_domain: Interval) -> Result<EscapeReport> {
    let cells = DensityGrid::aligned_cells(p.n(), sub_domain)?;
    let m = cells.len();
    let mut killed = vec![false; m];
    for &c in hole_cells {
        if !cells.contains(&c) {
            return Err(Error::Domain(format!("hole cell {c} lies outside {sub_domain}")));
        }
        killed[c - cells.start] = true;
    }
    let holes = killed.iter().filter(|k| **k).count();
    if holes == m {
        return Err(Error::Degenerate("the hole covers the whole sub-domain".into()));
    }
    if holes == 0 {
        return Ok(EscapeReport { rate: 0.0, hole_measure: 0.0, ratio: f64::NAN, lambda_open: 1.0 });
    }
    let closed = p.restrict(cells.clone(), &vec![false; m])?;
    let mu = power_iterate(&closed, vec![1.0; m], DEFAULT_TOL, default_max_iter(m))?;
    let hole_measure = mu.density.iter().zip(&killed).filter(|(_, k)| **k).map(|(d, _)| d).sum::<f64>() / m as f64;
    let open = p.restrict(cells, &killed)?;
    let run = power_iterate(&open, vec![1.0; m], DEFAULT_TOL, default_max_iter(m))?;
    let rate = -run.growth.ln();
    Ok(EscapeReport { rate, hole_measure, ratio: hole_measure / rate, lambda_open: run.growth })
}

/// Top-two spectral data of one Ulam matrix.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub phi: DensityGrid,
    pub rho: f64,
    pub psi: DensityGrid,
    pub leading_simple: bool,
    /// `(‖L phi - phi‖₁, ‖L psi - rho psi‖₁)`.
    pub residuals: (f64, f64),
    pub path: SolverPath,
}

/// Invariant density and second eigenpair in one call.
pub fn analyze(p: &UlamMatrix, i_l: Interval, tol: f64) -> Result<SpectralReport> {
    let inv = invariant_density_with_probe(p, tol, i_l)?;
    if !inv.leading_simple {
        return Err(Error::Degenerate("the leading eigenvalue is not simple".into()));
    }
    let second = second_eigenpair(p, &inv.phi, i_l, tol)?;
    Ok(SpectralReport {
        phi: inv.phi,
        rho: second.rho,
        psi: second.psi,
        leading_simple: inv.leading_simple,
        residuals: (inv.residual, second.residual),
        path: second.path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;
    use crate::transfer::build_ulam;

    const HALF: Interval = Interval { lo: 0.0, hi: 0.5 };

    fn chain(lr: f64, rl: f64) -> UlamMatrix {
        UlamMatrix::from_dense(2, vec![1.0 - lr, lr, rl, 1.0 - rl]).unwrap()
    }

    #[test]
    fn markov_chain_stationary_and_second_pair() {
        let p = chain(0.01, 0.03);
        let inv = invariant_density(&p, DEFAULT_TOL).unwrap();
        assert!(inv.leading_simple);
        // cell values are densities: probabilities times n
        assert!((inv.phi.values()[0] / 2.0 - 0.75).abs() < 1e-9);
        let sec = second_eigenpair(&p, &inv.phi, HALF, DEFAULT_TOL).unwrap();
        assert!((sec.rho - 0.96).abs() < 1e-9);
        assert!(sec.psi.values()[0] > 0.0);
        assert!((sec.psi.values()[0] + sec.psi.values()[1]).abs() < 1e-12);
        assert!((sec.psi.l1_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn family_a_at_zero_is_not_simple() {
        let p = build_ulam(&builtin::family_a().instantiate(0.0).unwrap(), 120).unwrap();
        let inv = invariant_density(&p, DEFAULT_TOL).unwrap();
        assert!(!inv.leading_simple);
        let alt = inv.alternate.unwrap();
        assert!((alt.integrate(HALF) - 1.0).abs() < 1e-12);
        assert!(analyze(&p, HALF, DEFAULT_TOL).is_err());
    }

    #[test]
    fn iterative_matches_dense_on_a_small_grid() {
        let p = build_ulam(&builtin::family_a().instantiate(0.02).unwrap(), 240).unwrap();
        let rep = analyze(&p, HALF, DEFAULT_TOL).unwrap();
        assert_eq!(rep.path, SolverPath::Iterative);
        let dense = dense_second_eigenpair(&p, HALF).unwrap();
        assert!((rep.rho - dense.rho).abs() < 1e-8);
        assert!(rep.psi.l1_distance(&dense.psi).unwrap() < 1e-6);
        assert!(rep.psi.mass().abs() < 1e-12);
        assert!(rep.residuals.0 < 1e-9 && rep.residuals.1 < 1e-8);
    }

    #[test]
    fn constant_start_is_annihilated_and_restarted() {
        let phi = DensityGrid::new(vec![1.5, 0.5]).unwrap();
        let mut c = vec![1.5, 0.5];
        deflate(&mut c, phi.values());
        assert!(c.iter().all(|x| x.abs() < 1e-15));
        let noise = restart_noise(2, phi.values());
        assert!(mass(&noise).abs() < 1e-15 && l1(&noise) > 0.0);
        assert_eq!(noise, restart_noise(2, phi.values()));
    }

    #[test]
    fn rotation_is_reported_as_degenerate() {
        // 3-cycle: eigenvalues are the cube roots of unity
        let p = UlamMatrix::from_dense(3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let phi = DensityGrid::uniform(3);
        let r = second_eigenpair(&p, &phi, Interval { lo: 0.0, hi: 1.0 / 3.0 }, DEFAULT_TOL);
        assert!(matches!(r, Err(Error::Degenerate(_))), "{r:?}");
    }

    #[test]
    fn escape_rates() {
        let p = build_ulam(&builtin::family_a().instantiate(0.0).unwrap(), 120).unwrap();
        let empty = escape_rate(&p, &[], HALF).unwrap();
        assert_eq!(empty.rate, 0.0);
        let all: Vec<usize> = (0..60).collect();
        assert!(matches!(escape_rate(&p, &all, HALF), Err(Error::Degenerate(_))));
        assert!(escape_rate(&p, &[70], HALF).is_err());
        let small = escape_rate(&p, &[38, 39], HALF).unwrap();
        let big = escape_rate(&p, &[37, 38, 39], HALF).unwrap();
        assert!(small.rate > 0.0 && big.rate >= small.rate);
        assert!((small.hole_measure - 2.0 / 60.0).abs() < 1e-9);
    }
}
