//! Running a scenario end to end and writing its artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bv::{DecayRow, Jump};
use crate::error::{Error, Result};
use crate::map_model::{HypothesisReport, PerturbationFamily};
use crate::metastability::{
    convergence_study, markov_matrix, markov_stationary, HoleReport, LhrSource, SweepConfig, SweepOutcome, SweepRow,
    ZeroDensitySource,
};
use crate::plot::{LinePlot, Series};
use crate::scenario::{Scenario, ScenarioKind};
use crate::spectral::{self, EscapeReport, SolverPath, DEFAULT_TOL};
use crate::transfer::LYConstants;

/// Exit status of a completed run.
pub const EXIT_OK: i32 = 0;
/// Some sweep rows failed; the rest of the artifacts are valid.
pub const EXIT_DEGRADED: i32 = 2;

/// What a run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub failed_rows: usize,
    pub outcome: Option<SweepOutcome>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Writer { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        f.write_all(body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }
}

/// Hypothesis report for the scenario's family.
pub fn validate(scenario: &Scenario) -> Result<Option<HypothesisReport>> {
    match &scenario.kind {
        ScenarioKind::Family { family, .. } => Ok(Some(family.validate_hypotheses(scenario.toggles.hypothesis_depth)?)),
        ScenarioKind::Markov { .. } => Ok(None),
    }
}

/// Run `scenario`, writing every artifact into `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path, jobs: Option<usize>) -> Result<RunSummary> {
    let mut w = Writer::new(out_dir)?;
    match &scenario.kind {
        ScenarioKind::Markov { pairs } => run_markov(pairs, &mut w, scenario.warnings.clone()),
        ScenarioKind::Family { family, eps_list, grid, .. } => {
            run_family(scenario, family, eps_list, *grid, jobs, &mut w)
        }
    }
}

#[derive(Serialize)]
struct MarkovRow {
    eps_lr: f64,
    eps_rl: f64,
    alpha: f64,
    rho: f64,
    alpha_numeric: f64,
    rho_numeric: f64,
}

fn run_markov(pairs: &[(f64, f64)], w: &mut Writer, warnings: Vec<String>) -> Result<RunSummary> {
    let mut rows = Vec::new();
    for &(lr, rl) in pairs {
        let (alpha, rho) = markov_stationary(lr, rl)?;
        let p = markov_matrix(lr, rl)?;
        let inv = spectral::invariant_density(&p, DEFAULT_TOL)?;
        // the probe start is the left state, so a non-simple chain is caught here
        let second = spectral::dense_second_eigenpair(&p, crate::map_model::Interval { lo: 0.0, hi: 0.5 })?;
        rows.push(MarkovRow {
            eps_lr: lr,
            eps_rl: rl,
            alpha,
            rho,
            alpha_numeric: inv.phi.values()[0] / 2.0,
            rho_numeric: second.rho,
        });
    }
    let mut csv = String::from("eps_lr,eps_rl,alpha,rho,alpha_numeric,rho_numeric\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.eps_lr, r.eps_rl, r.alpha, r.rho, r.alpha_numeric, r.rho_numeric));
    }
    w.write("markov.csv", csv.as_bytes())?;
    w.write("markov.json", &json(&rows)?)?;
    Ok(RunSummary { exit_code: EXIT_OK, files: std::mem::take(&mut w.files), warnings, failed_rows: 0, outcome: None })
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

/// Sweep table header; the columns follow [`SweepRow`].
pub const SWEEP_HEADER: &str = "eps,lhr_emp,alpha_pred,l1_phi_vs_mixture,l1_psi_vs_half_diff,rho,flux_gap,escape_ratio_l,escape_ratio_r,mu_eps_left,tv_phi,sup_phi,lipschitz_reg,unmatched_jumps,failure";

/// CSV rendering of the sweep table.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let failure = r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.eps,
            r.lhr_emp,
            r.alpha_pred,
            r.l1_phi_vs_mixture,
            r.l1_psi_vs_half_diff,
            r.rho,
            r.flux_gap,
            r.escape_ratio_l,
            r.escape_ratio_r,
            r.mu_eps_left,
            r.tv_phi,
            r.sup_phi,
            r.lipschitz_reg,
            r.unmatched_jumps,
            failure
        ));
    }
    s
}

#[derive(Serialize)]
struct DetailJson<'a> {
    eps: f64,
    holes: &'a HoleReport,
    escape: Option<&'a (EscapeReport, EscapeReport)>,
    jumps: Option<&'a [Jump]>,
    decay: &'a [DecayRow],
    ly: Option<&'a LYConstants>,
    solver: Option<SolverPath>,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct SweepJson<'a> {
    scenario: &'a str,
    grid: usize,
    lhr: f64,
    lhr_source: LhrSource,
    alpha_pred: f64,
    zero_density_source: ZeroDensitySource,
    hypotheses: &'a HypothesisReport,
    warnings: &'a [String],
    rows: &'a [SweepRow],
    details: Vec<Option<DetailJson<'a>>>,
}

fn run_family(
    scenario: &Scenario,
    family: &PerturbationFamily,
    eps_list: &[f64],
    grid: usize,
    jobs: Option<usize>,
    w: &mut Writer,
) -> Result<RunSummary> {
    let t = &scenario.toggles;
    let mut hyp = family.validate_hypotheses(t.hypothesis_depth)?;
    let mut config = SweepConfig::new(grid);
    config.second_pair = t.second_pair;
    config.escape = t.escape;
    config.saltus = t.saltus;
    config.jobs = jobs;
    let outcome = convergence_study(family, eps_list, &config)?;
    hyp.check_i3(family, &outcome.phi_l, &outcome.phi_r)?;

    let mut warnings = scenario.warnings.clone();
    let row_warnings = outcome.details.iter().flatten().flat_map(|d| &d.warnings);
    for msg in outcome.warnings.iter().chain(row_warnings) {
        if !warnings.contains(msg) {
            warnings.push(msg.clone());
        }
    }

    w.write("hypotheses.json", &json(&hyp)?)?;
    w.write("sweep.csv", sweep_csv(&outcome.rows).as_bytes())?;
    let details = outcome
        .rows
        .iter()
        .zip(&outcome.details)
        .map(|(r, d)| {
            d.as_ref().map(|d| DetailJson {
                eps: r.eps,
                holes: &d.holes,
                escape: d.escape.as_ref(),
                jumps: d.saltus.as_ref().map(|s| s.jumps.as_slice()),
                decay: &d.decay,
                ly: d.ly.as_ref(),
                solver: d.solver,
                warnings: &d.warnings,
            })
        })
        .collect();
    let sj = SweepJson {
        scenario: &scenario.name,
        grid,
        lhr: outcome.lhr,
        lhr_source: outcome.lhr_source,
        alpha_pred: outcome.alpha_pred,
        zero_density_source: outcome.zero_source,
        hypotheses: &hyp,
        warnings: &warnings,
        rows: &outcome.rows,
        details,
    };
    w.write("sweep.json", &json(&sj)?)?;

    let mut density_series = Vec::new();
    for (r, d) in outcome.rows.iter().zip(&outcome.details) {
        let Some(d) = d else { continue };
        let n = d.phi.n();
        let mut csv = String::from("x,phi,mixture,psi\n");
        for i in 0..n {
            let x = d.phi.cell_center(i);
            let mix = d.mixture.as_ref().map_or(f64::NAN, |m| m.values()[i]);
            let psi = d.psi.as_ref().map_or(f64::NAN, |p| p.values()[i]);
            csv.push_str(&format!("{x},{},{mix},{psi}\n", d.phi.values()[i]));
        }
        w.write(&format!("density_eps_{}.csv", r.eps), csv.as_bytes())?;
        if let Some(s) = &d.saltus {
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            w.write(&format!("saltus_eps_{}.csv", r.eps), &buf)?;
        }
        let step = (n / 480).max(1);
        density_series.push(Series::new(
            format!("eps = {}", r.eps),
            (0..n).step_by(step).map(|i| (d.phi.cell_center(i), d.phi.values()[i])).collect(),
        ));
    }
    if let Some(mix) = outcome.details.iter().flatten().find_map(|d| d.mixture.as_ref()) {
        let step = (mix.n() / 480).max(1);
        density_series.push(Series::new(
            "mixture",
            (0..mix.n()).step_by(step).map(|i| (mix.cell_center(i), mix.values()[i])).collect(),
        ));
    }
    let densities = LinePlot {
        title: format!("{}: invariant densities", scenario.name),
        x_label: "x".into(),
        y_label: "density".into(),
        series: density_series,
        ..Default::default()
    };
    w.write("densities.svg", densities.to_svg().as_bytes())?;

    let col = |f: fn(&SweepRow) -> f64| -> Vec<(f64, f64)> { outcome.rows.iter().map(|r| (r.eps, f(r))).collect() };
    let l1 = LinePlot {
        title: format!("{}: L1 distances", scenario.name),
        x_label: "eps".into(),
        y_label: "L1 distance".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series::new("phi vs mixture", col(|r| r.l1_phi_vs_mixture)),
            Series::new("psi vs half difference", col(|r| r.l1_psi_vs_half_diff)),
        ],
    };
    w.write("l1_vs_eps.svg", l1.to_svg().as_bytes())?;
    let rho = LinePlot {
        title: format!("{}: second eigenvalue", scenario.name),
        x_label: "eps".into(),
        y_label: "rho".into(),
        log_x: true,
        series: vec![Series::new("rho", col(|r| r.rho))],
        ..Default::default()
    };
    w.write("rho_vs_eps.svg", rho.to_svg().as_bytes())?;

    let failed_rows = outcome.rows.iter().filter(|r| r.failure.is_some()).count();
    Ok(RunSummary {
        exit_code: if failed_rows > 0 { EXIT_DEGRADED } else { EXIT_OK },
        files: std::mem::take(&mut w.files),
        warnings,
        failed_rows,
        outcome: Some(outcome),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    #[test]
    fn small_family_run_writes_artifacts() {
        let s = parse_scenario(r#"{"builtin": "family_a", "grid": 600, "eps": [0.04, 0.02]}"#).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sum = run(&s, dir.path(), Some(2)).unwrap();
        assert_eq!(sum.exit_code, EXIT_OK);
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(SWEEP_HEADER));
        for f in ["sweep.json", "hypotheses.json", "density_eps_0.02.csv", "saltus_eps_0.04.csv", "densities.svg", "l1_vs_eps.svg", "rho_vs_eps.svg"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn markov_run() {
        let s = Scenario::builtin("markov2").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sum = run(&s, dir.path(), None).unwrap();
        assert_eq!(sum.exit_code, EXIT_OK);
        let csv = fs::read_to_string(dir.path().join("markov.csv")).unwrap();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((row[2] - 0.75).abs() < 1e-12 && (row[4] - 0.75).abs() < 1e-9);
        assert!((row[3] - 0.96).abs() < 1e-12 && (row[5] - 0.96).abs() < 1e-9);
    }
}
