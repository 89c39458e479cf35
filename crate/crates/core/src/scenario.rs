//! Declarative scenarios and the built-in families.
//!
//! A scenario is a JSON object. Coordinates may be JSON numbers or strings
//! holding exact rationals (`"1/6"`, `"-3"`) or decimals (`"0.02"`); strings
//! are parsed exactly and converted to `f64` once. See the README for the
//! full grammar.

use std::path::{Path, PathBuf};

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::{Branch, BranchPerturbation, HoleCoefficient, Interval, PerturbationFamily, PiecewiseMap};
use crate::map_model::DEFAULT_HYPOTHESIS_DEPTH;
use crate::ENDPOINT_TOL;

pub const DEFAULT_GRID: usize = 3840;
pub const DEFAULT_EPS: [f64; 4] = [0.02, 0.01, 0.005, 0.0025];
pub const DEFAULT_MARKOV_PAIRS: [(f64, f64); 1] = [(0.01, 0.03)];
pub const BUILTIN_NAMES: [&str; 3] = ["family_a", "family_b", "markov2"];

/// Built-in families.
pub mod builtin {
    use super::*;

    fn affine(lo: f64, hi: f64, slope: f64, intercept: f64) -> Branch {
        Branch::affine(Interval { lo, hi }, slope, intercept)
    }

    fn shift(intercept_eps: f64) -> BranchPerturbation {
        BranchPerturbation::Affine { slope_eps: 0.0, intercept_eps }
    }

    /// Compliant family: full affine branches on each half, holes opening at
    /// `1/3` (left) and `2/3` (right).
    pub fn family_a() -> PerturbationFamily {
        let base = PiecewiseMap::new(vec![
            affine(0.0, 1.0 / 6.0, 3.0, 0.0),
            affine(1.0 / 6.0, 1.0 / 3.0, 3.0, -0.5),
            affine(1.0 / 3.0, 0.5, -3.0, 1.5),
            affine(0.5, 2.0 / 3.0, -3.0, 2.5),
            affine(2.0 / 3.0, 5.0 / 6.0, 3.0, -1.5),
            affine(5.0 / 6.0, 1.0, 3.0, -2.0),
        ])
        .expect("family A is a valid map");
        let pert = vec![
            BranchPerturbation::None,
            shift(3.0),
            BranchPerturbation::None,
            BranchPerturbation::None,
            shift(-1.0),
            BranchPerturbation::None,
        ];
        let holes = vec![
            HoleCoefficient { point: 1.0 / 3.0, a: 1.0, b: 0.0 },
            HoleCoefficient { point: 2.0 / 3.0, a: 0.0, b: 1.0 / 3.0 },
        ];
        PerturbationFamily::new(base, pert, 0.5, Some(holes)).expect("family A is a valid family")
    }

    /// Boundary-violating family: `3x mod 1/2` shifted up by `3 eps` on the
    /// left, `-3x mod 1/2` shifted down by `eps` on the right.
    pub fn family_b() -> PerturbationFamily {
        let base = PiecewiseMap::new(vec![
            affine(0.0, 1.0 / 6.0, 3.0, 0.0),
            affine(1.0 / 6.0, 1.0 / 3.0, 3.0, -0.5),
            affine(1.0 / 3.0, 0.5, 3.0, -1.0),
            affine(0.5, 2.0 / 3.0, -3.0, 2.5),
            affine(2.0 / 3.0, 5.0 / 6.0, -3.0, 3.0),
            affine(5.0 / 6.0, 1.0, -3.0, 3.5),
        ])
        .expect("family B is a valid map");
        let pert = [3.0, 3.0, 3.0, -1.0, -1.0, -1.0].into_iter().map(shift).collect();
        PerturbationFamily::new(base, pert, 0.5, None).expect("family B is a valid family")
    }
}

/// A coordinate as written in the file: a JSON number or an exact string.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Num {
    Float(f64),
    Text(String),
}

/// Parse `"p/q"`, `"k"` or a plain decimal `"-0.0125"` exactly.
pub fn parse_rational(s: &str) -> std::result::Result<Rational64, String> {
    let t = s.trim();
    if let Ok(r) = t.parse::<Rational64>() {
        return Ok(r);
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int, frac) = body.split_once('.').ok_or_else(|| format!("'{s}' is not a rational or decimal"))?;
    if frac.len() > 17 || !(int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())) || (int.is_empty() && frac.is_empty()) {
        return Err(format!("'{s}' is not a rational or decimal"));
    }
    let denom = 10i64.pow(frac.len() as u32);
    let digits = format!("{int}{frac}");
    let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| format!("'{s}' overflows"))? };
    let r = Rational64::new(numer, denom);
    Ok(if neg { -r } else { r })
}

fn ratio_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// A parsed coordinate with its exact value when one was given.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Coord {
    value: f64,
    exact: Option<Rational64>,
}

impl Num {
    fn resolve(&self, path: &str, errors: &mut Vec<String>) -> Option<Coord> {
        match self {
            Num::Float(v) if v.is_finite() => Some(Coord { value: *v, exact: None }),
            Num::Float(v) => {
                errors.push(format!("{path}: {v} is not finite"));
                None
            }
            Num::Text(s) => match parse_rational(s) {
                Ok(r) => Some(Coord { value: ratio_to_f64(r), exact: Some(r) }),
                Err(e) => {
                    errors.push(format!("{path}: {e}"));
                    None
                }
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchSpec {
    domain: [Num; 2],
    slope: Num,
    intercept: Num,
    #[serde(default)]
    slope_eps: Option<Num>,
    #[serde(default)]
    intercept_eps: Option<Num>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HoleSpec {
    point: Num,
    a: Num,
    b: Num,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilySpec {
    branches: Vec<BranchSpec>,
    boundary: Num,
    #[serde(default)]
    hole_coefficients: Option<Vec<HoleSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TogglesSpec {
    second_pair: Option<bool>,
    escape: Option<bool>,
    saltus: Option<bool>,
    hypothesis_depth: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSpec {
    name: Option<String>,
    builtin: Option<String>,
    family: Option<FamilySpec>,
    eps: Option<Vec<Num>>,
    grid: Option<usize>,
    markov_pairs: Option<Vec<[Num; 2]>>,
    #[serde(default)]
    toggles: TogglesSpec,
    output: Option<PathBuf>,
}

/// Which pipeline parts run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Toggles {
    pub second_pair: bool,
    pub escape: bool,
    pub saltus: bool,
    pub hypothesis_depth: usize,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { second_pair: true, escape: true, saltus: true, hypothesis_depth: DEFAULT_HYPOTHESIS_DEPTH }
    }
}

/// What a scenario runs.
#[derive(Clone, Debug)]
pub enum ScenarioKind {
    /// An interval-map family swept over `eps_list` on an `n`-cell grid.
    Family { family: PerturbationFamily, eps_list: Vec<f64>, grid: usize, exact_points: Vec<Rational64> },
    /// The two-state chain for each `(eps_lr, eps_rl)` pair.
    Markov { pairs: Vec<(f64, f64)> },
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub toggles: Toggles,
    pub output: Option<PathBuf>,
    /// Non-fatal findings, such as holes resolved by fewer than four cells.
    pub warnings: Vec<String>,
}

impl Scenario {
    /// Built-in scenario with default settings.
    pub fn builtin(name: &str) -> Result<Scenario> {
        let kind = match name {
            "family_a" => family_kind(builtin::family_a(), DEFAULT_EPS.to_vec(), DEFAULT_GRID, Vec::new()),
            "family_b" => family_kind(builtin::family_b(), DEFAULT_EPS.to_vec(), DEFAULT_GRID, Vec::new()),
            "markov2" => ScenarioKind::Markov { pairs: DEFAULT_MARKOV_PAIRS.to_vec() },
            other => {
                return Err(Error::Scenario(vec![format!(
                    "builtin: unknown builtin '{other}' (known: {})",
                    BUILTIN_NAMES.join(", ")
                )]))
            }
        };
        let mut s = Scenario { name: name.to_string(), kind, toggles: Toggles::default(), output: None, warnings: Vec::new() };
        s.check_grid()?;
        Ok(s)
    }

    /// Replace the sweep values.
    pub fn with_eps(mut self, eps: Vec<f64>) -> Result<Scenario> {
        match &mut self.kind {
            ScenarioKind::Family { eps_list, .. } => *eps_list = eps,
            ScenarioKind::Markov { .. } => {
                return Err(Error::Scenario(vec!["eps: the markov2 scenario takes rate pairs, not eps".into()]))
            }
        }
        self.check_grid()?;
        Ok(self)
    }

    /// Replace the grid size.
    pub fn with_grid(mut self, n: usize) -> Result<Scenario> {
        match &mut self.kind {
            ScenarioKind::Family { grid, .. } => *grid = n,
            ScenarioKind::Markov { .. } => {
                return Err(Error::Scenario(vec!["grid: the markov2 scenario has no grid".into()]))
            }
        }
        self.check_grid()?;
        Ok(self)
    }

    /// The grid must put every critical point and `b` on a cell boundary;
    /// `n >= 12 / eps_min` is advisory.
    fn check_grid(&mut self) -> Result<()> {
        self.warnings.retain(|w| !w.starts_with("grid:"));
        let ScenarioKind::Family { family, eps_list, grid, exact_points } = &self.kind else {
            return Ok(());
        };
        let n = *grid;
        let mut errors = Vec::new();
        let d = family.base().branches().len();
        if n < 2 * d {
            errors.push(format!("grid: n = {n} is below twice the branch count {d}"));
        }
        if !exact_points.is_empty() {
            for r in exact_points {
                if !(*r * Rational64::from_integer(n as i64)).is_integer() {
                    errors.push(format!("grid: n = {n} does not put {r} on a cell boundary"));
                }
            }
        } else {
            let mut points: Vec<f64> = family.base().critical_set().to_vec();
            points.push(family.boundary());
            for c in points {
                let x = c * n as f64;
                if (x - x.round()).abs() > ENDPOINT_TOL * n as f64 {
                    errors.push(format!("grid: n = {n} does not put {c} on a cell boundary"));
                }
            }
        }
        if eps_list.iter().any(|e| !(*e > 0.0)) {
            errors.push("eps: every value must be positive".into());
        }
        if eps_list.windows(2).any(|w| w[1] >= w[0]) {
            errors.push("eps: values must be strictly decreasing".into());
        }
        if !errors.is_empty() {
            return Err(Error::Scenario(errors));
        }
        if let Some(&eps_min) = eps_list.last() {
            self.warnings.extend(crate::metastability::resolution_warning(n, eps_min));
        }
        Ok(())
    }
}

fn family_kind(family: PerturbationFamily, eps_list: Vec<f64>, grid: usize, exact_points: Vec<Rational64>) -> ScenarioKind {
    ScenarioKind::Family { family, eps_list, grid, exact_points }
}

/// Load `builtin:<name>` or a JSON scenario file.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return Scenario::builtin(name);
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut s = parse_scenario(&text)?;
    if s.name.is_empty() {
        s.name = path.file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(s)
}

/// Parse and validate scenario JSON text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ScenarioSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Scenario(vec![format!("{path}: {inner}")])
    })?;
    build(spec)
}

fn build(spec: ScenarioSpec) -> Result<Scenario> {
    let mut errors = Vec::new();
    let t = &spec.toggles;
    let toggles = Toggles {
        second_pair: t.second_pair.unwrap_or(true),
        escape: t.escape.unwrap_or(true),
        saltus: t.saltus.unwrap_or(true),
        hypothesis_depth: t.hypothesis_depth.unwrap_or(DEFAULT_HYPOTHESIS_DEPTH),
    };
    if toggles.hypothesis_depth < 1 {
        errors.push("toggles.hypothesis_depth: must be at least 1".into());
    }
    let eps_list: Option<Vec<f64>> = spec.eps.as_ref().map(|list| {
        list.iter()
            .enumerate()
            .filter_map(|(i, e)| e.resolve(&format!("eps[{i}]"), &mut errors).map(|c| c.value))
            .collect()
    });

    let (name, kind) = match (spec.builtin.as_deref(), spec.family) {
        (Some(_), Some(_)) => return Err(Error::Scenario(vec!["builtin, family: give one, not both".into()])),
        (None, None) => return Err(Error::Scenario(vec!["builtin, family: one of them is required".into()])),
        (Some("markov2"), None) => {
            if spec.eps.is_some() || spec.grid.is_some() {
                errors.push("markov_pairs: the markov2 scenario takes rate pairs, not eps or grid".into());
            }
            let pairs = match &spec.markov_pairs {
                Some(list) => list
                    .iter()
                    .enumerate()
                    .filter_map(|(i, [a, b])| {
                        let a = a.resolve(&format!("markov_pairs[{i}][0]"), &mut errors)?;
                        let b = b.resolve(&format!("markov_pairs[{i}][1]"), &mut errors)?;
                        Some((a.value, b.value))
                    })
                    .collect(),
                None => DEFAULT_MARKOV_PAIRS.to_vec(),
            };
            ("markov2".to_string(), ScenarioKind::Markov { pairs })
        }
        (Some(name), None) => {
            let family = match name {
                "family_a" => builtin::family_a(),
                "family_b" => builtin::family_b(),
                other => {
                    return Err(Error::Scenario(vec![format!(
                        "builtin: unknown builtin '{other}' (known: {})",
                        BUILTIN_NAMES.join(", ")
                    )]))
                }
            };
            if spec.markov_pairs.is_some() {
                errors.push("markov_pairs: only the markov2 scenario takes rate pairs".into());
            }
            let eps = eps_list.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec());
            (name.to_string(), family_kind(family, eps, spec.grid.unwrap_or(DEFAULT_GRID), Vec::new()))
        }
        (None, Some(fs)) => {
            if spec.markov_pairs.is_some() {
                errors.push("markov_pairs: only the markov2 scenario takes rate pairs".into());
            }
            let (family, exact) = match build_family(&fs, &mut errors) {
                Some(f) => f,
                None => return Err(Error::Scenario(errors)),
            };
            let eps = eps_list.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec());
            (String::new(), family_kind(family, eps, spec.grid.unwrap_or(DEFAULT_GRID), exact))
        }
    };
    if !errors.is_empty() {
        return Err(Error::Scenario(errors));
    }
    let mut s = Scenario {
        name: spec.name.unwrap_or(name),
        kind,
        toggles,
        output: spec.output,
        warnings: Vec::new(),
    };
    s.check_grid()?;
    Ok(s)
}

/// Build a family from its spec; the exact rational endpoints are returned
/// when every endpoint and `b` were given exactly.
fn build_family(fs: &FamilySpec, errors: &mut Vec<String>) -> Option<(PerturbationFamily, Vec<Rational64>)> {
    let start = errors.len();
    let mut branches = Vec::new();
    let mut perts = Vec::new();
    let mut exact = Vec::new();
    let mut all_exact = true;
    for (i, b) in fs.branches.iter().enumerate() {
        let p = format!("family.branches[{i}]");
        let lo = b.domain[0].resolve(&format!("{p}.domain[0]"), errors);
        let hi = b.domain[1].resolve(&format!("{p}.domain[1]"), errors);
        let slope = b.slope.resolve(&format!("{p}.slope"), errors);
        let intercept = b.intercept.resolve(&format!("{p}.intercept"), errors);
        let zero = Num::Float(0.0);
        let se = b.slope_eps.as_ref().unwrap_or(&zero).resolve(&format!("{p}.slope_eps"), errors);
        let ie = b.intercept_eps.as_ref().unwrap_or(&zero).resolve(&format!("{p}.intercept_eps"), errors);
        let (Some(lo), Some(hi), Some(slope), Some(intercept), Some(se), Some(ie)) = (lo, hi, slope, intercept, se, ie) else {
            continue;
        };
        for c in [lo, hi] {
            match c.exact {
                Some(r) => exact.push(r),
                None => all_exact = false,
            }
        }
        match Interval::new(lo.value, hi.value) {
            Ok(dom) => branches.push(Branch::affine(dom, slope.value, intercept.value)),
            Err(e) => errors.push(format!("{p}.domain: {e}")),
        }
        perts.push(if se.value == 0.0 && ie.value == 0.0 {
            BranchPerturbation::None
        } else {
            BranchPerturbation::Affine { slope_eps: se.value, intercept_eps: ie.value }
        });
    }
    let boundary = fs.boundary.resolve("family.boundary", errors);
    let holes: Option<Vec<HoleCoefficient>> = fs.hole_coefficients.as_ref().map(|list| {
        list.iter()
            .enumerate()
            .filter_map(|(i, h)| {
                let p = format!("family.hole_coefficients[{i}]");
                let point = h.point.resolve(&format!("{p}.point"), errors)?;
                let a = h.a.resolve(&format!("{p}.a"), errors)?;
                let b = h.b.resolve(&format!("{p}.b"), errors)?;
                Some(HoleCoefficient { point: point.value, a: a.value, b: b.value })
            })
            .collect()
    });
    if errors.len() > start {
        return None;
    }
    let boundary = boundary?;
    match boundary.exact {
        Some(r) => exact.push(r),
        None => all_exact = false,
    }
    let base = match PiecewiseMap::new(branches) {
        Ok(m) => m,
        Err(e) => {
            errors.push(format!("family.branches: {e}"));
            return None;
        }
    };
    let family = match PerturbationFamily::new(base, perts, boundary.value, holes) {
        Ok(f) => f,
        Err(e) => {
            errors.push(format!("family: {e}"));
            return None;
        }
    };
    exact.sort();
    exact.dedup();
    Some((family, if all_exact { exact } else { Vec::new() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals() {
        assert_eq!(parse_rational("1/6").unwrap(), Rational64::new(1, 6));
        assert_eq!(parse_rational("-3").unwrap(), Rational64::from_integer(-3));
        assert_eq!(parse_rational("0.02").unwrap(), Rational64::new(1, 50));
        assert_eq!(parse_rational("-.5").unwrap(), Rational64::new(-1, 2));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn builtin_defaults() {
        let s = load_scenario("builtin:family_a").unwrap();
        match &s.kind {
            ScenarioKind::Family { eps_list, grid, .. } => {
                assert_eq!(*grid, 3840);
                assert_eq!(eps_list, &DEFAULT_EPS.to_vec());
            }
            _ => panic!("family expected"),
        }
        assert!(s.warnings.iter().any(|w| w.contains("12 / eps_min")));
        let m = load_scenario("builtin:markov2").unwrap();
        assert!(matches!(m.kind, ScenarioKind::Markov { ref pairs } if pairs == &vec![(0.01, 0.03)]));
        assert!(matches!(load_scenario("builtin:nope"), Err(Error::Scenario(e)) if e[0].contains("unknown builtin")));
    }

    #[test]
    fn overlapping_branches_are_named() {
        let text = r#"{
            "family": {
                "branches": [
                    {"domain": ["0", "3/5"], "slope": "3/2", "intercept": "0"},
                    {"domain": ["1/2", "1"], "slope": "2", "intercept": "-1"}
                ],
                "boundary": "1/2"
            }
        }"#;
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(&err, Error::Scenario(e) if e[0].contains("branches 0 and 1 overlap")), "{err}");
    }

    #[test]
    fn schema_errors_carry_paths() {
        let text = r#"{"family": {"branches": [{"domain": ["0", "1"], "slope": true, "intercept": "0"}], "boundary": "1/2"}}"#;
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(&err, Error::Scenario(e) if e[0].starts_with("family.branches[0].slope")), "{err}");
        let bad_num = r#"{"builtin": "family_a", "eps": ["0.o1"]}"#;
        assert!(matches!(parse_scenario(bad_num), Err(Error::Scenario(e)) if e[0].starts_with("eps[0]")));
        let unknown = r#"{"builtin": "family_a", "colour": 1}"#;
        assert!(parse_scenario(unknown).is_err());
    }

    #[test]
    fn grid_rule() {
        let ok = parse_scenario(r#"{"builtin": "family_a", "grid": 4800, "eps": [0.02, "1/400"]}"#).unwrap();
        assert!(ok.warnings.is_empty());
        let misaligned = parse_scenario(r#"{"builtin": "family_a", "grid": 4801}"#);
        assert!(matches!(misaligned, Err(Error::Scenario(e)) if e[0].contains("cell boundary")));
        let increasing = parse_scenario(r#"{"builtin": "family_a", "eps": [0.01, 0.02]}"#);
        assert!(increasing.is_err());
    }

    #[test]
    fn file_family_matches_builtin() {
        let text = r#"{
            "name": "a_from_file",
            "family": {
                "branches": [
                    {"domain": ["0", "1/6"], "slope": 3, "intercept": 0},
                    {"domain": ["1/6", "1/3"], "slope": 3, "intercept": "-1/2", "intercept_eps": 3},
                    {"domain": ["1/3", "1/2"], "slope": -3, "intercept": "3/2"},
                    {"domain": ["1/2", "2/3"], "slope": -3, "intercept": "5/2"},
                    {"domain": ["2/3", "5/6"], "slope": 3, "intercept": "-3/2", "intercept_eps": -1},
                    {"domain": ["5/6", "1"], "slope": 3, "intercept": -2}
                ],
                "boundary": "1/2",
                "hole_coefficients": [
                    {"point": "1/3", "a": 1, "b": 0},
                    {"point": "2/3", "a": 0, "b": "1/3"}
                ]
            },
            "grid": 600,
            "eps": ["0.02", "0.01"],
            "toggles": {"saltus": false}
        }"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.name, "a_from_file");
        assert!(!s.toggles.saltus);
        let ScenarioKind::Family { family, exact_points, .. } = &s.kind else { panic!() };
        assert_eq!(exact_points.len(), 7);
        let a = family.instantiate(0.01).unwrap();
        let b = builtin::family_a().instantiate(0.01).unwrap();
        for x in [0.1, 0.2, 0.4, 0.6, 0.7, 0.9] {
            assert_eq!(a.evaluate(x).unwrap(), b.evaluate(x).unwrap());
        }
        assert!(s.clone().with_grid(601).is_err());
    }
}
