//! Scenario files: schema, validation and lookup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
    #[error("no scenario named {0:?} (try `detlab list-scenarios`)")]
    NotFound(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    /// Integration tolerance for every ODE solve.
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub experiment: Experiment,
}

fn default_tol() -> f64 {
    1e-10
}

/// One monomial `coeff * prod var^power`; variables are named.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    #[serde(default)]
    pub powers: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Zero { dim: usize },
    Rotation { omega: f64 },
    TwistedRotation,
    AxialRotation3d { omega: f64 },
    Linear { matrix: Vec<Vec<f64>> },
    /// Variables are `q1..qN`.
    Polynomial {
        flow: Vec<Vec<Term>>,
        #[serde(default)]
        charges: Vec<Vec<Term>>,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
}

fn default_half_width() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Discrete {
        /// 1-based successor table; `next[k]` is the successor of state `k + 1`.
        next: Vec<usize>,
        #[serde(default = "one")]
        dt: f64,
        #[serde(default)]
        convention: detlab::discrete::PhaseConvention,
    },
    Flow {
        system: SystemSpec,
        q0: Vec<f64>,
        p0: Vec<f64>,
        t_final: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    SplitSpectrum {
        system: SystemSpec,
        coefficients: Vec<f64>,
        q0: Vec<f64>,
        p0: Vec<f64>,
        t_final: f64,
        #[serde(default = "default_n_max")]
        n_max: usize,
        #[serde(default = "default_delta")]
        return_delta: f64,
    },
    Reduce {
        /// Configuration labels; momenta are `p_<label>`.
        coordinates: Vec<String>,
        hamiltonian: Vec<Term>,
        #[serde(default)]
        constraints: Vec<Vec<Term>>,
        /// Optional initial point `(p, q)` for a reduced-flow table.
        #[serde(default)]
        xi0: Option<Vec<f64>>,
        #[serde(default = "one")]
        t_final: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    SamplePaths {
        system: SystemSpec,
        q_start: Vec<f64>,
        q_end: Vec<f64>,
        #[serde(default)]
        t_start: f64,
        t_end: f64,
        n_slices: usize,
        n_samples: usize,
        sigma: f64,
        /// Extra widths for a concentration ladder.
        #[serde(default)]
        sigmas: Vec<f64>,
        #[serde(default = "default_endpoint_tol")]
        endpoint_tol: f64,
        /// Slices for the determinant routes; 0 skips them.
        #[serde(default = "default_det_slices")]
        determinant_slices: usize,
    },
    Koopman {
        system: SystemSpec,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_grid_half")]
        half_width: f64,
        centre: Vec<f64>,
        #[serde(default = "default_blob")]
        width: f64,
        t: f64,
        #[serde(default = "one_usize")]
        steps: usize,
        #[serde(default)]
        allow_exit: bool,
        /// Orbit through `centre` used for the phase cross-check; the
        /// check is skipped when absent.
        #[serde(default)]
        orbit_time: Option<f64>,
        #[serde(default = "default_n_max")]
        n_max: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_samples() -> usize {
    200
}
fn default_n_max() -> usize {
    10
}
fn default_delta() -> f64 {
    detlab::thooft::DEFAULT_RETURN_DELTA
}
fn default_endpoint_tol() -> f64 {
    1e-6
}
fn default_det_slices() -> usize {
    256
}
fn default_grid() -> usize {
    256
}
fn default_grid_half() -> f64 {
    2.0
}
fn default_blob() -> f64 {
    0.25
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Discrete { .. } => "discrete",
            Experiment::Flow { .. } => "flow",
            Experiment::SplitSpectrum { .. } => "split-spectrum",
            Experiment::Reduce { .. } => "reduce",
            Experiment::SamplePaths { .. } => "sample-paths",
            Experiment::Koopman { .. } => "koopman",
        }
    }
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Zero { dim } => *dim,
            SystemSpec::Rotation { .. } | SystemSpec::TwistedRotation => 2,
            SystemSpec::AxialRotation3d { .. } => 3,
            SystemSpec::Linear { matrix } => matrix.len(),
            SystemSpec::Polynomial { flow, .. } => flow.len(),
        }
    }

    fn validate(&self, v: &mut Validator) {
        match self {
            SystemSpec::Zero { dim } => v.check(*dim >= 1 && *dim <= 16, "system.dim must be in 1..=16"),
            SystemSpec::Rotation { omega } | SystemSpec::AxialRotation3d { omega } => {
                v.check(omega.is_finite() && *omega != 0.0, "system.omega must be finite and non-zero")
            }
            SystemSpec::TwistedRotation => {}
            SystemSpec::Linear { matrix } => {
                let n = matrix.len();
                v.check((1..=16).contains(&n), "system.matrix must have 1..=16 rows");
                v.check(matrix.iter().all(|r| r.len() == n), "system.matrix must be square");
                v.check(matrix.iter().flatten().all(|x| x.is_finite()), "system.matrix entries must be finite");
            }
            SystemSpec::Polynomial { flow, charges, half_width } => {
                let n = flow.len();
                v.check((1..=16).contains(&n), "system.flow must have 1..=16 components");
                v.check(*half_width > 0.0 && half_width.is_finite(), "system.half_width must be positive");
                let names: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
                for terms in flow.iter().chain(charges) {
                    check_terms(v, terms, &names, "system");
                }
            }
        }
    }
}

fn check_terms(v: &mut Validator, terms: &[Term], names: &[String], what: &str) {
    for t in terms {
        v.check(t.coeff.is_finite(), format!("{what}: coefficients must be finite"));
        for var in t.powers.keys() {
            v.check(names.contains(var), format!("{what}: unknown variable {var:?} (expected one of {names:?})"));
        }
    }
}

struct Validator {
    errors: Vec<String>,
}

impl Validator {
    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.errors.push(msg.into());
        }
    }

    fn finite(&mut self, xs: &[f64], what: &str) {
        self.check(xs.iter().all(|x| x.is_finite()), format!("{what} must be finite"));
    }
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let s: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse { origin: origin.into(), message: e.to_string() })?;
        s.validate().map_err(|message| ScenarioError::Invalid { origin: origin.into(), message })?;
        Ok(s)
    }

    /// All range checks; messages are joined with `; `.
    pub fn validate(&self) -> Result<(), String> {
        let mut v = Validator { errors: vec![] };
        v.check(
            !self.name.is_empty() && self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'),
            "name must be non-empty and use only [A-Za-z0-9_-]",
        );
        v.check(self.tol > 0.0 && self.tol <= 1e-3, "tol must be in (0, 1e-3]");
        match &self.experiment {
            Experiment::Discrete { next, dt, .. } => {
                v.check(!next.is_empty() && next.len() <= 512, "next must list 1..=512 states");
                v.check(next.iter().all(|&s| s >= 1 && s <= next.len()), "next entries must be 1-based state labels");
                v.check(*dt > 0.0 && dt.is_finite(), "dt must be positive");
            }
            Experiment::Flow { system, q0, p0, t_final, samples } => {
                system.validate(&mut v);
                let n = system.dim();
                v.check(q0.len() == n && p0.len() == n, format!("q0 and p0 must have {n} components"));
                v.finite(q0, "q0");
                v.finite(p0, "p0");
                v.check(*t_final > 0.0 && t_final.is_finite(), "t_final must be positive");
                v.check((1..=100_000).contains(samples), "samples must be in 1..=100000");
            }
            Experiment::SplitSpectrum { system, coefficients, q0, p0, t_final, n_max, return_delta } => {
                system.validate(&mut v);
                let n = system.dim();
                v.check(q0.len() == n && p0.len() == n, format!("q0 and p0 must have {n} components"));
                v.finite(q0, "q0");
                v.finite(p0, "p0");
                v.finite(coefficients, "coefficients");
                v.check(*t_final > 0.0 && t_final.is_finite(), "t_final must be positive");
                v.check(*n_max <= 10_000, "n_max must be at most 10000");
                v.check(*return_delta > 0.0, "return_delta must be positive");
            }
            Experiment::Reduce { coordinates, hamiltonian, constraints, xi0, t_final, samples } => {
                v.check((1..=8).contains(&coordinates.len()), "coordinates must list 1..=8 labels");
                let mut names: Vec<String> = coordinates.iter().map(|q| format!("p_{q}")).collect();
                names.extend(coordinates.iter().cloned());
                let mut uniq = names.clone();
                uniq.sort();
                uniq.dedup();
                v.check(uniq.len() == names.len(), "coordinate labels must be distinct");
                check_terms(&mut v, hamiltonian, &names, "hamiltonian");
                for c in constraints {
                    check_terms(&mut v, c, &names, "constraints");
                }
                if let Some(x) = xi0 {
                    v.check(x.len() == names.len(), format!("xi0 must have {} components", names.len()));
                    v.finite(x, "xi0");
                }
                v.check(*t_final > 0.0 && t_final.is_finite(), "t_final must be positive");
                v.check((1..=100_000).contains(samples), "samples must be in 1..=100000");
            }
            Experiment::SamplePaths {
                system,
                q_start,
                q_end,
                t_start,
                t_end,
                n_slices,
                n_samples,
                sigma,
                sigmas,
                endpoint_tol,
                determinant_slices,
            } => {
                system.validate(&mut v);
                let n = system.dim();
                v.check(q_start.len() == n && q_end.len() == n, format!("q_start and q_end must have {n} components"));
                v.finite(q_start, "q_start");
                v.finite(q_end, "q_end");
                v.check(t_start.is_finite() && t_end.is_finite() && t_end > t_start, "t_end must exceed t_start");
                v.check((2..=4096).contains(n_slices), "n_slices must be in 2..=4096");
                v.check((1..=10_000_000).contains(n_samples), "n_samples must be in 1..=10000000");
                let floor = detlab::pathint::SIGMA_FLOOR;
                v.check(sigma.is_finite() && *sigma >= floor, format!("sigma must be at least {floor:e}"));
                v.check(
                    sigmas.iter().all(|s| s.is_finite() && *s >= floor),
                    format!("every entry of sigmas must be at least {floor:e}"),
                );
                v.check(*endpoint_tol > 0.0, "endpoint_tol must be positive");
                v.check(*determinant_slices <= 4096, "determinant_slices must be at most 4096");
            }
            Experiment::Koopman {
                system,
                grid,
                half_width,
                centre,
                width,
                t,
                steps,
                orbit_time,
                n_max,
                ..
            } => {
                system.validate(&mut v);
                let n = system.dim();
                v.check(centre.len() == n, format!("centre must have {n} components"));
                v.finite(centre, "centre");
                v.check((2..=2048).contains(grid), "grid must be in 2..=2048");
                v.check((grid.pow(n.min(4) as u32)) <= 1 << 24, "grid has too many cells");
                v.check(*half_width > 0.0 && half_width.is_finite(), "half_width must be positive");
                v.check(*width > 0.0 && width.is_finite(), "width must be positive");
                v.check(t.is_finite(), "t must be finite");
                v.check((1..=10_000).contains(steps), "steps must be in 1..=10000");
                if let Some(ot) = orbit_time {
                    v.check(*ot > 0.0 && ot.is_finite(), "orbit_time must be positive");
                }
                v.check(*n_max <= 10_000, "n_max must be at most 10000");
            }
        }
        if v.errors.is_empty() {
            Ok(())
        } else {
            Err(v.errors.join("; "))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Scenario files shipped inside the binary.
pub const BUNDLED: &[(&str, &str)] = &[
    ("axial_rotation", include_str!("../scenarios/axial_rotation.toml")),
    ("four_state_infoloss", include_str!("../scenarios/four_state_infoloss.toml")),
    ("linear_determinants", include_str!("../scenarios/linear_determinants.toml")),
    ("path_concentration", include_str!("../scenarios/path_concentration.toml")),
    ("rotation_flow", include_str!("../scenarios/rotation_flow.toml")),
    ("rotation_koopman", include_str!("../scenarios/rotation_koopman.toml")),
    ("rotation_levels", include_str!("../scenarios/rotation_levels.toml")),
    ("rotation_reduce", include_str!("../scenarios/rotation_reduce.toml")),
    ("three_state_clock", include_str!("../scenarios/three_state_clock.toml")),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Bundled,
    File(PathBuf),
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Bundled => write!(f, "bundled"),
            Source::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
    pub source: Source,
}

fn dir_files(dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let rd = std::fs::read_dir(dir).map_err(|source| ScenarioError::Io { path: dir.into(), source })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Bundled scenarios plus `*.toml` files in `dir`, sorted by name. A file
/// whose scenario name matches a bundled one is listed separately.
pub fn catalog(dir: Option<&Path>) -> Result<Vec<CatalogEntry>, ScenarioError> {
    let mut out = Vec::new();
    for (name, text) in BUNDLED {
        let s = Scenario::parse(text, name)?;
        out.push(CatalogEntry { name: s.name, description: s.description, source: Source::Bundled });
    }
    if let Some(dir) = dir {
        for path in dir_files(dir)? {
            let s = load_file(&path)?;
            out.push(CatalogEntry { name: s.name, description: s.description, source: Source::File(path) });
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.source.to_string().cmp(&b.source.to_string())));
    Ok(out)
}

pub fn load_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
    Scenario::parse(&text, &path.display().to_string())
}

/// Resolves a path, or a scenario name in `dir` and then among the bundled
/// ones.
pub fn resolve(arg: &str, dir: Option<&Path>) -> Result<(Scenario, Source), ScenarioError> {
    let p = Path::new(arg);
    if p.extension().is_some_and(|x| x == "toml") || p.is_file() {
        return Ok((load_file(p)?, Source::File(p.into())));
    }
    if let Some(dir) = dir {
        for path in dir_files(dir)? {
            let s = load_file(&path)?;
            if s.name == arg {
                return Ok((s, Source::File(path)));
            }
        }
    }
    for (name, text) in BUNDLED {
        if *name == arg {
            return Ok((Scenario::parse(text, name)?, Source::Bundled));
        }
    }
    Err(ScenarioError::NotFound(arg.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse_and_match_their_keys() {
        for (key, text) in BUNDLED {
            let s = Scenario::parse(text, key).unwrap();
            assert_eq!(&s.name, key);
            assert!(!s.description.is_empty());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "name = \"x\"\nbogus = 1\n[experiment]\nkind = \"discrete\"\nnext = [1]\n";
        assert!(matches!(Scenario::parse(text, "t"), Err(ScenarioError::Parse { .. })));
        let text = "name = \"x\"\n[experiment]\nkind = \"discrete\"\nnext = [1]\nextra = 2\n";
        assert!(matches!(Scenario::parse(text, "t"), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn ranges_are_checked() {
        let text = r#"
name = "bad"
[experiment]
kind = "sample-paths"
system = { type = "rotation", omega = 1.0 }
q_start = [1.0, 0.0]
q_end = [1.0, 0.0]
t_end = 1.0
n_slices = 16
n_samples = 10
sigma = -0.1
"#;
        let err = Scenario::parse(text, "t").unwrap_err();
        assert!(err.to_string().contains("sigma"), "{err}");
    }

    #[test]
    fn successor_labels_are_one_based() {
        let text = "name = \"x\"\n[experiment]\nkind = \"discrete\"\nnext = [0, 1]\n";
        assert!(matches!(Scenario::parse(text, "t"), Err(ScenarioError::Invalid { .. })));
    }

    #[test]
    fn toml_round_trip() {
        for (key, text) in BUNDLED {
            let s = Scenario::parse(text, key).unwrap();
            assert_eq!(Scenario::parse(&s.to_toml(), key).unwrap(), s);
        }
    }
}
