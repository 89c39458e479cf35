//! Holes, hole ratios, the mixture prediction and ε-sweeps.
//!
//! For `T_eps` with boundary `b`, the holes are `H_l = I_l ∩ T_eps^{-1}(I_r)`
//! and `H_r = I_r ∩ T_eps^{-1}(I_l)`. The invariant density of `T_eps`
//! approaches `alpha phi_l + (1 - alpha) phi_r` with
//! `alpha / (1 - alpha) = lim mu_r(H_r) / mu_l(H_l)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bv::{default_lip_bound, jump_decay_profile, postcritical_hierarchy, saltus_decompose, DecayRow, SaltusDecomposition};
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::map_model::{Interval, PerturbationFamily, PiecewiseMap};
use crate::spectral::{self, escape_rate, EscapeReport, SolverPath, DEFAULT_TOL};
use crate::transfer::{build_ulam, lasota_yorke_constants_relative, LYConstants, UlamMatrix};
use crate::ENDPOINT_TOL;

/// Hole geometry of one `T_eps`, optionally completed with ε = 0 measures.
#[derive(Clone, Debug, Serialize)]
pub struct HoleReport {
    pub h_l: Vec<Interval>,
    pub h_r: Vec<Interval>,
    pub leb_l: f64,
    pub leb_r: f64,
    pub mu_l_hl: Option<f64>,
    pub mu_r_hr: Option<f64>,
    /// `mu_r(H_r) / mu_l(H_l)`.
    pub ratio: Option<f64>,
    pub boundary: f64,
    pub warnings: Vec<String>,
}

/// Append `iv`, merging it into the previous interval when they touch.
fn push_merged(list: &mut Vec<Interval>, iv: Interval) {
    if iv.len() <= ENDPOINT_TOL {
        return;
    }
    match list.last_mut() {
        Some(last) if (iv.lo - last.hi).abs() <= ENDPOINT_TOL => last.hi = iv.hi,
        _ => list.push(iv),
    }
}

/// Solve `T_eps(x) = b` branch by branch and collect the points of each half
/// that cross to the other half.
pub fn compute_holes(map_eps: &PiecewiseMap, b: f64) -> Result<HoleReport> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::Domain(format!("boundary point {b} must lie in (0, 1)")));
    }
    let (mut h_l, mut h_r) = (Vec::new(), Vec::new());
    for (k, br) in map_eps.branches().iter().enumerate() {
        let dom = br.domain();
        let mut pieces = Vec::new();
        if dom.lo < b - ENDPOINT_TOL {
            pieces.push((Interval { lo: dom.lo, hi: dom.hi.min(b) }, true));
        }
        if dom.hi > b + ENDPOINT_TOL {
            pieces.push((Interval { lo: dom.lo.max(b), hi: dom.hi }, false));
        }
        for (piece, left) in pieces {
            let (ya, yb) = (br.eval(piece.lo), br.eval(piece.hi));
            // points of the piece whose image lies on the far side of b
            let crosses = |y: f64| if left { y > b } else { y < b };
            let hole = match (crosses(ya), crosses(yb)) {
                (false, false) => None,
                (true, true) => Some(piece),
                (ca, _) => {
                    let x = br.inverse(b, k)?.clamp(piece.lo, piece.hi);
                    Some(if ca { Interval { lo: piece.lo, hi: x } } else { Interval { lo: x, hi: piece.hi } })
                }
            };
            if let Some(h) = hole {
                push_merged(if left { &mut h_l } else { &mut h_r }, h);
            }
        }
    }
    let mut warnings = Vec::new();
    for h in h_l.iter().chain(&h_r) {
        if h.distance(b) <= ENDPOINT_TOL {
            warnings.push(format!("boundary violation: hole {h} touches b = {b}"));
        }
    }
    Ok(HoleReport {
        leb_l: h_l.iter().map(Interval::len).fold(0.0, |a, x| a + x),
        leb_r: h_r.iter().map(Interval::len).fold(0.0, |a, x| a + x),
        h_l,
        h_r,
        mu_l_hl: None,
        mu_r_hr: None,
        ratio: None,
        boundary: b,
        warnings,
    })
}

/// Warning when the smallest holes are resolved by fewer than 4 cells.
pub fn resolution_warning(n: usize, eps_min: f64) -> Option<String> {
    let need = (12.0 / eps_min).ceil();
    ((n as f64) < need).then(|| {
        format!("grid: n = {n} is below 12 / eps_min = {need}; the smallest holes are resolved by fewer than 4 cells")
    })
}

fn integrate_all(d: &DensityGrid, holes: &[Interval]) -> f64 {
    holes.iter().map(|h| d.integrate(*h)).fold(0.0, |a, x| a + x)
}

/// Measures of the holes under the ε = 0 densities and their ratio.
pub fn hole_measures(report: &HoleReport, phi_l: &DensityGrid, phi_r: &DensityGrid) -> Result<HoleReport> {
    let mu_l = integrate_all(phi_l, &report.h_l);
    let mu_r = integrate_all(phi_r, &report.h_r);
    if mu_l == 0.0 && mu_r == 0.0 {
        return Err(Error::Degenerate("both holes have zero measure; there is no perturbation".into()));
    }
    if mu_l == 0.0 {
        return Err(Error::Domain(
            "mu_l(H_l) = 0 while mu_r(H_r) > 0; relabel the halves so the left hole is positive".into(),
        ));
    }
    let mut out = report.clone();
    out.mu_l_hl = Some(mu_l);
    out.mu_r_hr = Some(mu_r);
    out.ratio = Some(mu_r / mu_l);
    Ok(out)
}

/// First-order hole ratio `sum_r phi_r(h)(a + b) / sum_l phi_l(h)(a + b)`.
pub fn analytic_lhr(family: &PerturbationFamily, phi_l: &DensityGrid, phi_r: &DensityGrid) -> Result<f64> {
    let coeffs = family
        .hole_coefficients()
        .ok_or_else(|| Error::Domain("the family declares no hole coefficients".into()))?;
    let b = family.boundary();
    let (mut left, mut right) = (0.0, 0.0);
    for h in coeffs {
        if h.point < b {
            left += phi_l.value_near(h.point) * (h.a + h.b);
        } else {
            right += phi_r.value_near(h.point) * (h.a + h.b);
        }
    }
    if left == 0.0 {
        return Err(Error::Degenerate("left hole coefficients vanish; the hole ratio is undefined".into()));
    }
    Ok(right / left)
}

/// `alpha = lhr / (1 + lhr)` (1 for an infinite ratio) and the mixture density.
pub fn predict_mixture(lhr: f64, phi_l: &DensityGrid, phi_r: &DensityGrid) -> Result<(f64, DensityGrid)> {
    if !(lhr >= 0.0) {
        return Err(Error::Domain(format!("hole ratio {lhr} must be nonnegative")));
    }
    let alpha = if lhr.is_infinite() { 1.0 } else { lhr / (1.0 + lhr) };
    Ok((alpha, phi_l.combine(alpha, phi_r, 1.0 - alpha)?))
}

/// Stationary weight of the left state and second eigenvalue of the
/// two-state chain with switching rates `eps_lr`, `eps_rl`.
pub fn markov_stationary(eps_lr: f64, eps_rl: f64) -> Result<(f64, f64)> {
    if !(eps_lr >= 0.0 && eps_rl >= 0.0) || eps_lr + eps_rl > 1.0 {
        return Err(Error::Domain(format!("rates ({eps_lr}, {eps_rl}) must be nonnegative with sum <= 1")));
    }
    if eps_lr == 0.0 && eps_rl == 0.0 {
        return Err(Error::Degenerate("both switching rates are zero".into()));
    }
    Ok((eps_rl / (eps_lr + eps_rl), 1.0 - eps_lr - eps_rl))
}

/// The chain as a 2 x 2 row-stochastic matrix.
pub fn markov_matrix(eps_lr: f64, eps_rl: f64) -> Result<UlamMatrix> {
    markov_stationary(eps_lr, eps_rl)?;
    UlamMatrix::from_dense(2, vec![1.0 - eps_lr, eps_lr, eps_rl, 1.0 - eps_rl])
}

/// `|mu_eps(H_l) - mu_eps(H_r)|`.
pub fn flux_balance(phi_eps: &DensityGrid, report: &HoleReport) -> f64 {
    (integrate_all(phi_eps, &report.h_l) - integrate_all(phi_eps, &report.h_r)).abs()
}

/// Where the ε = 0 densities came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDensitySource {
    /// Normalized Lebesgue measure on each half.
    ClosedForm,
    /// Ulam solve restricted to each half.
    RestrictedUlam,
}

/// `(phi_l, phi_r)`: ε = 0 ergodic densities on `[0, b]` and `[b, 1]`, each of mass 1.
pub fn zero_eps_densities(
    family: &PerturbationFamily,
    p0: &UlamMatrix,
    tol: f64,
) -> Result<(DensityGrid, DensityGrid, ZeroDensitySource)> {
    let n = p0.n();
    let (left, right) = (family.left(), family.right());
    if family.has_full_branch_affine_halves() {
        return Ok((
            DensityGrid::indicator(n, left, 1.0 / left.len()),
            DensityGrid::indicator(n, right, 1.0 / right.len()),
            ZeroDensitySource::ClosedForm,
        ));
    }
    let half = |iv: Interval| -> Result<DensityGrid> {
        let cells = DensityGrid::aligned_cells(n, iv)?;
        let m = cells.len();
        let sub = p0.restrict(cells.clone(), &vec![false; m])?;
        let inv = spectral::invariant_density(&sub, tol)?;
        let mut full = vec![0.0; n];
        let scale = n as f64 / m as f64;
        for (k, v) in inv.phi.values().iter().enumerate() {
            full[cells.start + k] = v * scale;
        }
        DensityGrid::new(full)
    };
    Ok((half(left)?, half(right)?, ZeroDensitySource::RestrictedUlam))
}

/// Cells whose centers lie in one of the intervals.
pub fn cells_in(n: usize, holes: &[Interval]) -> Vec<usize> {
    (0..n)
        .filter(|&i| {
            let c = (i as f64 + 0.5) / n as f64;
            holes.iter().any(|h| c > h.lo && c < h.hi)
        })
        .collect()
}

/// Sweep settings.
#[derive(Clone, Debug, Serialize)]
pub struct SweepConfig {
    pub n: usize,
    pub tol: f64,
    pub second_pair: bool,
    pub escape: bool,
    pub saltus: bool,
    pub hierarchy_depth: usize,
    pub decay_m_max: usize,
    /// Lipschitz scale of the saltus threshold; [`default_lip_bound`] when absent.
    pub lip_bound: Option<f64>,
    /// Worker threads; the global pool when absent.
    pub jobs: Option<usize>,
}

impl SweepConfig {
    pub fn new(n: usize) -> Self {
        SweepConfig {
            n,
            tol: DEFAULT_TOL,
            second_pair: true,
            escape: true,
            saltus: true,
            hierarchy_depth: 6,
            decay_m_max: 4,
            lip_bound: None,
            jobs: None,
        }
    }
}

/// One line of the sweep table. Quantities a row could not compute are NaN
/// and `failure` says why.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub lhr_emp: f64,
    pub alpha_pred: f64,
    pub l1_phi_vs_mixture: f64,
    pub l1_psi_vs_half_diff: f64,
    pub rho: f64,
    pub flux_gap: f64,
    pub escape_ratio_l: f64,
    pub escape_ratio_r: f64,
    pub mu_eps_left: f64,
    pub tv_phi: f64,
    pub sup_phi: f64,
    pub lipschitz_reg: f64,
    pub unmatched_jumps: usize,
    pub failure: Option<String>,
}

impl SweepRow {
    fn failed(eps: f64, why: String) -> Self {
        SweepRow {
            eps,
            lhr_emp: f64::NAN,
            alpha_pred: f64::NAN,
            l1_phi_vs_mixture: f64::NAN,
            l1_psi_vs_half_diff: f64::NAN,
            rho: f64::NAN,
            flux_gap: f64::NAN,
            escape_ratio_l: f64::NAN,
            escape_ratio_r: f64::NAN,
            mu_eps_left: f64::NAN,
            tv_phi: f64::NAN,
            sup_phi: f64::NAN,
            lipschitz_reg: f64::NAN,
            unmatched_jumps: 0,
            failure: Some(why),
        }
    }
}

/// Grids and sub-reports behind one sweep row.
#[derive(Clone, Debug)]
pub struct RowDetail {
    pub phi: DensityGrid,
    pub psi: Option<DensityGrid>,
    pub mixture: Option<DensityGrid>,
    pub holes: HoleReport,
    pub escape: Option<(EscapeReport, EscapeReport)>,
    pub saltus: Option<SaltusDecomposition>,
    pub decay: Vec<DecayRow>,
    pub ly: Option<LYConstants>,
    pub solver: Option<SolverPath>,
    pub warnings: Vec<String>,
}

/// Full result of [`convergence_study`].
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub details: Vec<Option<RowDetail>>,
    pub phi_l: DensityGrid,
    pub phi_r: DensityGrid,
    pub zero_source: ZeroDensitySource,
    /// Hole ratio behind `alpha_pred`; NaN when the tool abstains.
    pub lhr: f64,
    pub lhr_source: LhrSource,
    pub alpha_pred: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LhrSource {
    Analytic,
    SmallestEps,
    Abstained,
}

/// Relative spread of the empirical ratios above which no single alpha is reported.
pub const LHR_DRIFT_TOL: f64 = 0.05;

/// Run the full pipeline for every `eps` in `eps_list` (strictly decreasing).
pub fn convergence_study(family: &PerturbationFamily, eps_list: &[f64], config: &SweepConfig) -> Result<SweepOutcome> {
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Domain("every eps must be positive".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("eps values must be strictly decreasing".into()));
    }
    let n = config.n;
    DensityGrid::aligned_cells(n, family.left())?;
    let mut warnings = Vec::new();
    if let Some(&eps_min) = eps_list.last() {
        warnings.extend(resolution_warning(n, eps_min));
    }
    let t0 = family.base();
    let p0 = build_ulam(t0, n)?;
    let (phi_l, phi_r, zero_source) = zero_eps_densities(family, &p0, config.tol)?;
    let half_diff = phi_l.combine(0.5, &phi_r, -0.5)?;

    let run_rows = || -> Vec<Result<(SweepRow, RowDetail)>> {
        eps_list
            .par_iter()
            .map(|&eps| sweep_row(family, eps, config, &p0, &phi_l, &phi_r, &half_diff))
            .collect()
    };
    let results = match config.jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?
            .install(run_rows),
        None => run_rows(),
    };

    let mut rows = Vec::with_capacity(results.len());
    let mut details = Vec::with_capacity(results.len());
    for (res, &eps) in results.into_iter().zip(eps_list) {
        match res {
            Ok((row, det)) => {
                rows.push(row);
                details.push(Some(det));
            }
            Err(e) => {
                rows.push(SweepRow::failed(eps, e.to_string()));
                details.push(None);
            }
        }
    }

    let ratios: Vec<f64> = rows.iter().map(|r| r.lhr_emp).filter(|r| r.is_finite()).collect();
    let (lhr, lhr_source) = match family.hole_coefficients() {
        Some(_) => (analytic_lhr(family, &phi_l, &phi_r)?, LhrSource::Analytic),
        None => match rows.iter().rev().find(|r| r.lhr_emp.is_finite()) {
            Some(last) => {
                let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
                if hi - lo > LHR_DRIFT_TOL * hi.abs() {
                    warnings.push(format!(
                        "empirical hole ratios drift across the sweep ({lo} .. {hi}); no single alpha is reported"
                    ));
                    (f64::NAN, LhrSource::Abstained)
                } else {
                    (last.lhr_emp, LhrSource::SmallestEps)
                }
            }
            None => (f64::NAN, LhrSource::Abstained),
        },
    };
    let (alpha_pred, mixture) = if lhr.is_nan() {
        (f64::NAN, None)
    } else {
        let (a, m) = predict_mixture(lhr, &phi_l, &phi_r)?;
        (a, Some(m))
    };
    for (row, det) in rows.iter_mut().zip(details.iter_mut()) {
        row.alpha_pred = alpha_pred;
        if let (Some(det), Some(mix)) = (det.as_mut(), mixture.as_ref()) {
            row.l1_phi_vs_mixture = det.phi.l1_distance(mix)?;
            det.mixture = Some(mix.clone());
        }
    }
    Ok(SweepOutcome { rows, details, phi_l, phi_r, zero_source, lhr, lhr_source, alpha_pred, warnings })
}

fn sweep_row(
    family: &PerturbationFamily,
    eps: f64,
    config: &SweepConfig,
    p0: &UlamMatrix,
    phi_l: &DensityGrid,
    phi_r: &DensityGrid,
    half_diff: &DensityGrid,
) -> Result<(SweepRow, RowDetail)> {
    let n = config.n;
    let b = family.boundary();
    let (left, right) = (family.left(), family.right());
    let t = family.instantiate(eps)?;
    let p = build_ulam(&t, n)?;
    let mut warnings = Vec::new();
    let mut failures = Vec::new();

    let inv = spectral::invariant_density_with_probe(&p, config.tol, left)?;
    if !inv.leading_simple {
        failures.push("leading eigenvalue is not simple".to_string());
    }
    let phi = inv.phi;

    let (mut rho, mut psi, mut solver, mut l1_psi) = (f64::NAN, None, None, f64::NAN);
    if config.second_pair && inv.leading_simple {
        match spectral::second_eigenpair(&p, &phi, left, config.tol) {
            Ok(sec) => {
                rho = sec.rho;
                l1_psi = sec.psi.l1_distance(half_diff)?;
                solver = Some(sec.path);
                psi = Some(sec.psi);
            }
            Err(e) => failures.push(format!("second eigenpair: {e}")),
        }
    }

    let geometry = compute_holes(&t, b)?;
    warnings.extend(geometry.warnings.iter().cloned());
    let holes = hole_measures(&geometry, phi_l, phi_r)?;
    let lhr_emp = holes.ratio.unwrap_or(f64::NAN);
    let flux_gap = flux_balance(&phi, &holes);

    let mut escape = None;
    let (mut esc_l, mut esc_r) = (f64::NAN, f64::NAN);
    if config.escape {
        let cells_l = cells_in(n, &holes.h_l);
        let cells_r = cells_in(n, &holes.h_r);
        if cells_l.is_empty() || cells_r.is_empty() {
            warnings.push(format!("eps = {eps}: a hole covers no cell center; escape ratios skipped"));
        } else {
            match (escape_rate(p0, &cells_l, left), escape_rate(p0, &cells_r, right)) {
                (Ok(l), Ok(r)) => {
                    esc_l = l.ratio;
                    esc_r = r.ratio;
                    escape = Some((l, r));
                }
                (Err(e), _) | (_, Err(e)) => failures.push(format!("escape rate: {e}")),
            }
        }
    }

    let ly = match lasota_yorke_constants_relative(&t, family.base()) {
        Ok(ly) => Some(ly),
        Err(e) => {
            warnings.push(format!("eps = {eps}: {e}"));
            None
        }
    };
    let (mut saltus, mut decay) = (None, Vec::new());
    let (mut lipschitz_reg, mut unmatched) = (f64::NAN, 0);
    if config.saltus {
        let hier = postcritical_hierarchy(&t, config.hierarchy_depth)?;
        let lip = config.lip_bound.unwrap_or_else(|| default_lip_bound(ly.as_ref()));
        let dec = saltus_decompose(&phi, &hier, lip)?;
        lipschitz_reg = dec.lipschitz_estimate;
        unmatched = dec.unmatched();
        if let Some(ly) = &ly {
            decay = jump_decay_profile(&dec, ly, config.decay_m_max);
        }
        saltus = Some(dec);
    }

    let row = SweepRow {
        eps,
        lhr_emp,
        alpha_pred: f64::NAN,
        l1_phi_vs_mixture: f64::NAN,
        l1_psi_vs_half_diff: l1_psi,
        rho,
        flux_gap,
        escape_ratio_l: esc_l,
        escape_ratio_r: esc_r,
        mu_eps_left: phi.integrate(Interval { lo: 0.0, hi: b }),
        tv_phi: phi.total_variation(),
        sup_phi: phi.sup_norm(),
        lipschitz_reg,
        unmatched_jumps: unmatched,
        failure: (!failures.is_empty()).then(|| failures.join("; ")),
    };
    Ok((row, RowDetail { phi, psi, mixture: None, holes, escape, saltus, decay, ly, solver, warnings }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn family_a_holes() {
        let t = builtin::family_a().instantiate(0.01).unwrap();
        let h = compute_holes(&t, 0.5).unwrap();
        assert_eq!(h.h_l.len(), 1);
        assert_eq!(h.h_r.len(), 1);
        assert!(approx(h.h_l[0].lo, 1.0 / 3.0 - 0.01, 1e-14) && approx(h.h_l[0].hi, 1.0 / 3.0, 1e-15));
        assert!(approx(h.h_r[0].lo, 2.0 / 3.0, 1e-15) && approx(h.h_r[0].hi, 2.0 / 3.0 + 0.01 / 3.0, 1e-14));
        assert!(h.warnings.is_empty());
        let h0 = compute_holes(&builtin::family_a().instantiate(0.0).unwrap(), 0.5).unwrap();
        assert!(h0.h_l.is_empty() && h0.h_r.is_empty());
    }

    #[test]
    fn family_b_holes() {
        let t = builtin::family_b().instantiate(0.01).unwrap();
        let h = compute_holes(&t, 0.5).unwrap();
        assert_eq!((h.h_l.len(), h.h_r.len()), (3, 3));
        assert!(approx(h.leb_l, 0.03, 1e-13));
        assert!(approx(h.leb_r, 0.01, 1e-13));
        assert!(h.warnings.iter().any(|w| w.contains("boundary violation")));
    }

    #[test]
    fn measures_and_ratio() {
        let fam = builtin::family_a();
        let n = 600;
        let phi_l = DensityGrid::indicator(n, fam.left(), 2.0);
        let phi_r = DensityGrid::indicator(n, fam.right(), 2.0);
        let h = compute_holes(&fam.instantiate(0.01).unwrap(), 0.5).unwrap();
        let m = hole_measures(&h, &phi_l, &phi_r).unwrap();
        assert!(approx(m.mu_l_hl.unwrap(), 0.02, 1e-13));
        assert!(approx(m.mu_r_hr.unwrap(), 0.02 / 3.0, 1e-13));
        assert!(approx(m.ratio.unwrap(), 1.0 / 3.0, 1e-11));
        let h0 = compute_holes(&fam.instantiate(0.0).unwrap(), 0.5).unwrap();
        assert!(matches!(hole_measures(&h0, &phi_l, &phi_r), Err(Error::Degenerate(_))));
        assert!(approx(analytic_lhr(&fam, &phi_l, &phi_r).unwrap(), 1.0 / 3.0, 1e-15));
        assert!(analytic_lhr(&builtin::family_b(), &phi_l, &phi_r).is_err());
    }

    #[test]
    fn mixture_weights() {
        let fam = builtin::family_a();
        let phi_l = DensityGrid::indicator(12, fam.left(), 2.0);
        let phi_r = DensityGrid::indicator(12, fam.right(), 2.0);
        let (a, m) = predict_mixture(1.0 / 3.0, &phi_l, &phi_r).unwrap();
        assert!(approx(a, 0.25, 1e-15));
        assert!(m.values()[..6].iter().all(|v| approx(*v, 0.5, 1e-15)));
        assert!(m.values()[6..].iter().all(|v| approx(*v, 1.5, 1e-15)));
        assert_eq!(predict_mixture(1.0, &phi_l, &phi_r).unwrap().0, 0.5);
        let (a, m) = predict_mixture(f64::INFINITY, &phi_l, &phi_r).unwrap();
        assert_eq!(a, 1.0);
        assert_eq!(m, phi_l);
        assert!(predict_mixture(-1.0, &phi_l, &phi_r).is_err());
    }

    #[test]
    fn markov_closed_form() {
        let (a, r) = markov_stationary(0.01, 0.03).unwrap();
        assert!(approx(a, 0.75, 1e-12) && approx(r, 0.96, 1e-12));
        assert_eq!(markov_stationary(0.02, 0.02).unwrap().0, 0.5);
        assert_eq!(markov_stationary(0.0, 0.03).unwrap().0, 1.0);
        assert!(matches!(markov_stationary(0.0, 0.0), Err(Error::Degenerate(_))));
        assert!(markov_stationary(-0.1, 0.2).is_err());
        assert!(markov_stationary(0.7, 0.6).is_err());
        // flux balance of the chain: alpha eps_lr = (1 - alpha) eps_rl
        let (lr, rl) = (0.01, 0.03);
        let (a, _) = markov_stationary(lr, rl).unwrap();
        assert!(approx(a * lr, (1.0 - a) * rl, 1e-15));
    }

    #[test]
    fn empty_sweep_and_bad_lists() {
        let fam = builtin::family_a();
        let cfg = SweepConfig::new(120);
        let out = convergence_study(&fam, &[], &cfg).unwrap();
        assert!(out.rows.is_empty());
        assert!(convergence_study(&fam, &[0.01, 0.02], &cfg).is_err());
        assert!(convergence_study(&fam, &[0.01, -0.02], &cfg).is_err());
    }

    #[test]
    fn small_sweep_runs() {
        let fam = builtin::family_a();
        let out = convergence_study(&fam, &[0.04, 0.02], &SweepConfig::new(600)).unwrap();
        assert_eq!(out.lhr_source, LhrSource::Analytic);
        assert!(approx(out.alpha_pred, 0.25, 1e-12));
        for r in &out.rows {
            assert!(r.failure.is_none(), "{r:?}");
            assert!(r.rho > 0.0 && r.rho < 1.0);
            assert!(r.flux_gap <= 2.0 * r.sup_phi / 600.0);
        }
        assert!(out.rows[1].l1_phi_vs_mixture < out.rows[0].l1_phi_vs_mixture);
    }
}
