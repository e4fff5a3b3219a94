//! Run configuration: one TOML file fully specifies a run.
//!
//! ```toml
//! command = "sweep"
//! domain = "domain.toml"
//! out = "results"
//!
//! [solver]
//! m = 6
//! tol = 1e-8
//! shift = -1.0
//! tau = 1.0
//!
//! [sweep]
//! alpha = 2.0
//! eps_list = [0.2, 0.1, 0.05]
//! ```
//!
//! Every table and key except `command` is optional. Relative `domain` and
//! `out` paths are resolved against the directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use curlcurl::atlas::{CosProduct, Cutoff, ProfileFunction};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Largest number of eigenpairs a run may request.
pub const MAX_EIGENPAIRS: usize = 200;
/// Largest admissible solver tolerance.
pub const MAX_TOL: f64 = 1e-2;

/// The job a run performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Mesh,
    Solve,
    CubeBench,
    Sweep,
    PiolaVerify,
    Mazya,
    CheckAtlas,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Mesh,
        Command::Solve,
        Command::CubeBench,
        Command::Sweep,
        Command::PiolaVerify,
        Command::Mazya,
        Command::CheckAtlas,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Solve => "solve",
            Command::CubeBench => "cube-bench",
            Command::Sweep => "sweep",
            Command::PiolaVerify => "piola-verify",
            Command::Mazya => "mazya",
            Command::CheckAtlas => "check-atlas",
        }
    }

    /// Whether the command needs a domain file; `sweep` and `piola-verify`
    /// fall back to the unit box `(0, 1)² × (-1, 0)`.
    pub fn needs_domain(self) -> bool {
        matches!(self, Command::Mesh | Command::Solve | Command::CheckAtlas)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown command '{s}'"))
    }
}

/// Eigensolver and discretization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Number of eigenpairs (`solve`) or eigenvalue clusters (`cube-bench`).
    pub m: usize,
    pub tol: f64,
    pub shift: f64,
    /// Penalty weight of the divergence term.
    pub tau: f64,
    /// Polynomial order of the vector Lagrange elements.
    pub order: usize,
    /// Relative width used to group eigenvalues into clusters.
    pub cluster_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            m: 6,
            tol: 1e-8,
            shift: -1.0,
            tau: 1.0,
            order: 2,
            cluster_tol: 1e-3,
        }
    }
}

/// Mesh resolution for `mesh`, `solve` and `cube-bench`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshParams {
    /// Cells per axis; `cube-bench` uses the first entry for all axes.
    pub n: [usize; 3],
}

impl Default for MeshParams {
    fn default() -> Self {
        Self { n: [8, 8, 8] }
    }
}

/// Perturbation family and sweep settings, shared by `sweep`,
/// `piola-verify` and `check-atlas`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub alpha: f64,
    pub eps_list: Vec<f64>,
    /// Boundary chart carrying the oscillation.
    pub chart: usize,
    pub b: CosProduct,
    pub cutoff: Cutoff,
    /// Exponent `e` in `κ_ε = ε^e`.
    pub kappa_exponent: f64,
    pub n_horizontal: usize,
    pub n_vertical: usize,
    /// Number of eigenvalues `n = 1..=modes` reported per ε.
    pub modes: usize,
    pub e_clusters: usize,
    pub gap_tol: f64,
    pub quad_n: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            eps_list: vec![0.2, 0.1, 0.05],
            chart: 0,
            b: CosProduct::new([1.0, 1.0]),
            cutoff: Cutoff::Bump {
                center: [0.5, 0.5],
                half_width: [0.35, 0.35],
            },
            kappa_exponent: 7.0 / 6.0,
            n_horizontal: 16,
            n_vertical: 8,
            modes: 6,
            e_clusters: 2,
            gap_tol: 0.05,
            quad_n: 4,
        }
    }
}

/// One test field `φ = ∇f` or `φ = a ⊙ ∇f` with `f = Π sin(m_i π (x_i - lo_i)/(hi_i - lo_i))`
/// on the box under the base profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub m: [f64; 3],
    /// Amplitudes; absent for the pure gradient field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[f64; 3]>,
}

/// Settings of `piola-verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiolaParams {
    /// Quadrature points per axis.
    pub points: usize,
    pub fields: Vec<FieldSpec>,
}

impl Default for PiolaParams {
    fn default() -> Self {
        Self {
            points: 8,
            fields: vec![
                FieldSpec {
                    name: "F1".into(),
                    m: [1.0, 1.0, 1.0],
                    a: None,
                },
                FieldSpec {
                    name: "F2".into(),
                    m: [1.0, 1.0, 1.0],
                    a: Some([1.0, -2.0, 1.0]),
                },
                FieldSpec {
                    name: "F3".into(),
                    m: [1.0, 2.0, 1.0],
                    a: Some([1.0, 0.0, 1.0]),
                },
            ],
        }
    }
}

/// Settings of `mazya`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazyaParams {
    pub xbar: [f64; 2],
    pub delta: f64,
    pub rho_list: Vec<f64>,
    pub n_dim: usize,
    pub quad_n: usize,
    /// Integration range of the Dini integral.
    pub t_min: f64,
    pub t_max: f64,
    pub dini_quad_n: usize,
    pub profiles: Vec<ProfileFunction>,
}

impl Default for MazyaParams {
    fn default() -> Self {
        Self {
            xbar: [0.0, 0.0],
            delta: 0.1,
            rho_list: vec![0.2, 0.1, 0.05],
            n_dim: 3,
            quad_n: 16,
            t_min: 1e-8,
            t_max: 1e4,
            dini_quad_n: 32,
            profiles: vec![
                ProfileFunction::HoelderPower { c: 1.0, beta: 0.75 },
                ProfileFunction::LogCounterexample,
            ],
        }
    }
}

/// Settings of `check-atlas`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtlasCheckParams {
    pub grid_n: usize,
    /// Class `C^{k,γ}` sampled when the domain declares none.
    pub k: usize,
    pub gamma: f64,
}

impl Default for AtlasCheckParams {
    fn default() -> Self {
        Self {
            grid_n: 64,
            k: 1,
            gamma: 1.0,
        }
    }
}

/// A fully specified run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub mesh: MeshParams,
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default)]
    pub piola: PiolaParams,
    #[serde(default)]
    pub mazya: MazyaParams,
    #[serde(default)]
    pub atlas: AtlasCheckParams,
}

impl RunConfig {
    /// Default configuration for `command`.
    pub fn for_command(command: Command) -> Self {
        Self {
            command: Some(command),
            domain: None,
            out: None,
            solver: SolverParams::default(),
            mesh: MeshParams::default(),
            sweep: SweepParams::default(),
            piola: PiolaParams::default(),
            mazya: MazyaParams::default(),
            atlas: AtlasCheckParams::default(),
        }
    }

    /// Canonical TOML text; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }
}

/// Parses config text; relative paths are resolved against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    for p in [&mut cfg.domain, &mut cfg.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base_dir.join(&*p);
        }
    }
    validate(&cfg).map_err(|(section, key, message)| CliError::Config {
        line: key_line(text, section, key),
        message,
    })?;
    Ok(cfg)
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, dir)
}

type RangeError = (Option<&'static str>, &'static str, String);

fn range_error(section: &'static str, key: &'static str, requirement: &str, got: impl fmt::Display) -> RangeError {
    (
        Some(section),
        key,
        format!("{section}.{key} must be {requirement}, got {got}"),
    )
}

fn validate(cfg: &RunConfig) -> Result<(), RangeError> {
    let s = &cfg.solver;
    if !(s.tau > 0.0 && s.tau.is_finite()) {
        return Err(range_error("solver", "tau", "> 0", s.tau));
    }
    if !(s.tol > 0.0 && s.tol <= MAX_TOL) {
        return Err(range_error("solver", "tol", "in (0, 1e-2]", s.tol));
    }
    if s.m == 0 || s.m > MAX_EIGENPAIRS {
        return Err(range_error("solver", "m", "in 1..=200", s.m));
    }
    if !s.shift.is_finite() {
        return Err(range_error("solver", "shift", "finite", s.shift));
    }
    if !(s.order == 1 || s.order == 2) {
        return Err(range_error("solver", "order", "1 or 2", s.order));
    }
    if !(s.cluster_tol > 0.0 && s.cluster_tol < 1.0) {
        return Err(range_error("solver", "cluster_tol", "in (0, 1)", s.cluster_tol));
    }
    if cfg.mesh.n.iter().any(|&n| n == 0) {
        return Err(range_error("mesh", "n", "positive in every axis", format!("{:?}", cfg.mesh.n)));
    }
    let w = &cfg.sweep;
    if !(w.alpha > 0.0 && w.alpha.is_finite()) {
        return Err(range_error("sweep", "alpha", "> 0", w.alpha));
    }
    if w.eps_list.is_empty() || w.eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(range_error("sweep", "eps_list", "a non-empty list of values in (0, 1)", format!("{:?}", w.eps_list)));
    }
    if !(w.kappa_exponent > 0.0) {
        return Err(range_error("sweep", "kappa_exponent", "> 0", w.kappa_exponent));
    }
    if w.n_horizontal == 0 || w.n_vertical == 0 {
        return Err(range_error("sweep", "n_horizontal", "positive (with n_vertical)", format!("{} x {}", w.n_horizontal, w.n_vertical)));
    }
    if w.modes == 0 || w.modes > MAX_EIGENPAIRS {
        return Err(range_error("sweep", "modes", "in 1..=200", w.modes));
    }
    if !(w.gap_tol > 0.0) {
        return Err(range_error("sweep", "gap_tol", "> 0", w.gap_tol));
    }
    if w.quad_n == 0 {
        return Err(range_error("sweep", "quad_n", "positive", w.quad_n));
    }
    if cfg.piola.points < 2 {
        return Err(range_error("piola", "points", ">= 2", cfg.piola.points));
    }
    if cfg.piola.fields.is_empty() {
        return Err(range_error("piola", "fields", "non-empty", "[]"));
    }
    let z = &cfg.mazya;
    if !(z.n_dim == 2 || z.n_dim == 3) {
        return Err(range_error("mazya", "n_dim", "2 or 3", z.n_dim));
    }
    if z.rho_list.is_empty() || z.rho_list.iter().any(|r| !(*r > 0.0)) {
        return Err(range_error("mazya", "rho_list", "a non-empty list of positive values", format!("{:?}", z.rho_list)));
    }
    if z.quad_n < 2 {
        return Err(range_error("mazya", "quad_n", ">= 2", z.quad_n));
    }
    if !(z.t_min > 0.0 && z.t_max > z.t_min) {
        return Err(range_error("mazya", "t_min", "positive and below t_max", format!("{} / {}", z.t_min, z.t_max)));
    }
    if cfg.atlas.grid_n < 2 {
        return Err(range_error("atlas", "grid_n", ">= 2", cfg.atlas.grid_n));
    }
    if let Some(c) = cfg.command {
        if c.needs_domain() && cfg.domain.is_none() {
            return Err((None, "domain", format!("command '{c}' needs a domain file")));
        }
    }
    Ok(())
}

/// 1-based line holding byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line where `key` is assigned inside `[section]` (or at top level).
fn key_line(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            let name = h.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            current = Some(name.to_string());
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        let k = k.trim();
        let hit = match (section, current.as_deref()) {
            (None, None) => k == key,
            (Some(s), Some(c)) => c == s && k == key,
            (Some(s), None) => k == format!("{s}.{key}"),
            (None, Some(_)) => false,
        };
        if hit {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        parse_config_str(text, Path::new("/base"))
    }

    #[test]
    fn minimal_cube_bench_gets_defaults() {
        let cfg = parse("command = \"cube-bench\"\n").unwrap();
        assert_eq!(cfg.command, Some(Command::CubeBench));
        assert_eq!(cfg.solver.tau, 1.0);
        assert_eq!(cfg.solver.order, 2);
        assert_eq!(cfg.solver.m, 6);
        assert_eq!(cfg, RunConfig::for_command(Command::CubeBench));
    }

    #[test]
    fn negative_tau_names_the_field_and_line() {
        let err = parse("command = \"cube-bench\"\n\n[solver]\nm = 4\ntau = -1\n").unwrap_err();
        let CliError::Config { line, message } = &err else {
            panic!("expected a config error, got {err:?}");
        };
        assert!(message.contains("solver.tau"), "{message}");
        assert_eq!(*line, Some(5));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn tolerance_and_count_ranges() {
        for (text, field) in [
            ("[solver]\ntol = 0.0\n", "solver.tol"),
            ("[solver]\ntol = 0.02\n", "solver.tol"),
            ("[solver]\nm = 201\n", "solver.m"),
            ("[solver]\norder = 3\n", "solver.order"),
            ("[sweep]\neps_list = []\n", "sweep.eps_list"),
            ("[mazya]\nn_dim = 4\n", "mazya.n_dim"),
        ] {
            let err = parse(text).unwrap_err();
            assert!(err.to_string().contains(field), "{text}: {err}");
            assert!(matches!(err, CliError::Config { line: Some(_), .. }), "{text}: {err:?}");
        }
        assert!(parse("[solver]\ntol = 1e-2\nm = 200\n").is_ok());
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let err = parse("command = \"solve\"\n[solver]\ntau = \n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: Some(3), .. }), "{err:?}");
        let err = parse("command = \"solve\"\n[solver]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: Some(3), .. }), "{err:?}");
    }

    #[test]
    fn unknown_command_is_rejected() {
        let err = parse("command = \"explode\"\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: Some(1), .. }), "{err:?}");
        assert!("explode".parse::<Command>().is_err());
        for c in Command::ALL {
            assert_eq!(c.as_str().parse::<Command>(), Ok(c));
        }
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let cfg = parse("command = \"solve\"\ndomain = \"d.toml\"\nout = \"/abs/out\"\n").unwrap();
        assert_eq!(cfg.domain.as_deref(), Some(Path::new("/base/d.toml")));
        assert_eq!(cfg.out.as_deref(), Some(Path::new("/abs/out")));
    }

    #[test]
    fn domain_is_required_where_needed() {
        let err = parse("command = \"solve\"\n").unwrap_err();
        assert!(err.to_string().contains("domain"), "{err}");
        assert!(parse("command = \"mazya\"\n").is_ok());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::for_command(Command::Sweep);
        cfg.domain = Some(PathBuf::from("/data/box.toml"));
        cfg.out = Some(PathBuf::from("/data/out"));
        cfg.solver.tau = 2.5;
        cfg.solver.tol = 1e-9;
        cfg.sweep.alpha = 1.6;
        cfg.sweep.eps_list = vec![0.3, 0.15];
        cfg.sweep.cutoff = Cutoff::One;
        cfg.mazya.profiles.push(ProfileFunction::Scaled {
            factor: 2.0,
            profile: Box::new(ProfileFunction::Constant { c: 0.1 }),
        });
        let text = cfg.to_toml();
        let back = parse(&text).unwrap();
        assert_eq!(back, cfg, "{text}");
        assert_eq!(back.to_toml(), text);
        let defaults = RunConfig::for_command(Command::Mazya);
        assert_eq!(parse(&defaults.to_toml()).unwrap(), defaults);
    }
}
