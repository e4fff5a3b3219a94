//! Command-line front end: configuration parsing, job dispatch and result
//! persistence.
//!
//! Every command writes deterministic CSV files (first line is a schema
//! version) and a plain-text `summary.txt` into the output directory.
//! Timings and progress go to the log only.

pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use curlcurl::atlas::{
    check_atlas_class, check_convergence_conditions, load_domain_spec, AtlasDomain, ConvergenceConditionReport,
    PerturbationFamily, ProfileFunction, Rect2,
};
use curlcurl::gaffney::{dini_integral, gradient_modulus, mazya_criterion, write_mazya_csv};
use curlcurl::harness::{
    benchmark_on, mesh_domain, solve_domain, sweep_epsilon, sweep_summary, write_cube_csv, write_report_csv,
    write_spectrum_csv, CubeProblem, SweepConfig,
};
use curlcurl::linalg::EigenConfig;
use curlcurl::mesh::mesh_quality;
use curlcurl::piola::{verify_family, write_piola_csv, AnalyticVectorField};
use log::info;

pub use config::{parse_config, parse_config_str, Command, RunConfig};
pub use error::CliError;

/// Version line of the atlas-check CSV.
pub const ATLAS_CSV_VERSION: &str = "# curlcurl-atlas v1";

/// Output directory used when neither the config nor the command line names one.
pub const DEFAULT_OUT_DIR: &str = "out";

/// Files written by a run, in writing order, and the summary text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Runs the configured command and writes its artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let command = cfg
        .command
        .ok_or_else(|| CliError::config("no command given in the config or on the command line"))?;
    if command.needs_domain() && cfg.domain.is_none() {
        return Err(CliError::config(format!("command '{command}' needs a domain file")));
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut w = Writer { dir: out, files: Vec::new() };
    info!("running '{command}'");
    let summary = match command {
        Command::Mesh => run_mesh(cfg, &mut w)?,
        Command::Solve => run_solve(cfg, &mut w)?,
        Command::CubeBench => run_cube_bench(cfg, &mut w)?,
        Command::Sweep => run_sweep(cfg, &mut w)?,
        Command::PiolaVerify => run_piola(cfg, &mut w)?,
        Command::Mazya => run_mazya(cfg, &mut w)?,
        Command::CheckAtlas => run_check_atlas(cfg, &mut w)?,
    };
    w.write("summary.txt", |b| {
        b.extend_from_slice(summary.as_bytes());
        Ok(())
    })?;
    Ok(RunOutcome {
        files: w.files,
        summary,
    })
}

/// Output directory with single-owner files: each file is rendered in
/// memory and written once.
struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn write(
        &mut self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut buf = Vec::new();
        render(&mut buf).map_err(|e| CliError::io(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
        info!("wrote {}", path.display());
        self.files.push(path);
        Ok(())
    }
}

fn domain(cfg: &RunConfig) -> Result<AtlasDomain, CliError> {
    match &cfg.domain {
        Some(p) => load_domain(p),
        None => Ok(unit_box()?),
    }
}

fn load_domain(path: &Path) -> Result<AtlasDomain, CliError> {
    if !path.exists() {
        return Err(CliError::config(format!("domain file {} does not exist", path.display())));
    }
    Ok(load_domain_spec(path)?)
}

/// `(0, 1)² × (-1, 0)` inside the chart `(0, 1)² × (-1, 0.5)`.
fn unit_box() -> Result<AtlasDomain, CliError> {
    Ok(AtlasDomain::single_chart(
        Rect2::new((0.0, 1.0), (0.0, 1.0)),
        -1.0,
        0.5,
        0.02,
        ProfileFunction::zero(),
    )?)
}

fn family(cfg: &RunConfig, base: AtlasDomain) -> Result<PerturbationFamily, CliError> {
    let s = &cfg.sweep;
    if s.chart >= base.atlas().s_prime() {
        return Err(CliError::config(format!(
            "sweep.chart = {} but the domain has {} boundary charts",
            s.chart,
            base.atlas().s_prime()
        )));
    }
    Ok(PerturbationFamily::oscillatory(base, s.chart, s.alpha, s.b, s.cutoff, s.kappa_exponent))
}

fn eigen_config(cfg: &RunConfig) -> EigenConfig {
    EigenConfig {
        count: cfg.solver.m,
        shift: cfg.solver.shift,
        tol: cfg.solver.tol,
        ..Default::default()
    }
}

fn run_mesh(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let dom = domain(cfg)?;
    let mesh = mesh_domain(&dom, cfg.mesh.n)?;
    mesh.check_watertight()?;
    let q = mesh_quality(&mesh);
    w.write("mesh.txt", |b| mesh.write_text(b))?;
    Ok(format!(
        "mesh {:?}: {} vertices, {} tetrahedra, {} boundary faces\nvolume {:.12e}\nmin signed volume {:.6e}\nmax aspect ratio {:.6}\nh_max {:.6e}\n",
        cfg.mesh.n,
        mesh.num_vertices(),
        mesh.num_tets(),
        mesh.boundary_faces().len(),
        mesh.volume(),
        q.min_signed_volume,
        q.max_aspect_ratio,
        q.h_max
    ))
}

fn run_solve(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let dom = domain(cfg)?;
    let s = &cfg.solver;
    let (space, spec) = solve_domain(&dom, cfg.mesh.n, s.order, s.tau, &eigen_config(cfg), s.cluster_tol)?;
    w.write("spectrum.csv", |b| write_spectrum_csv(b, &spec))?;
    let mut out = format!(
        "solve: mesh {:?}, order {}, tau {}, {} dofs, {} eigenpairs\n",
        cfg.mesh.n,
        s.order,
        s.tau,
        space.num_dofs(),
        spec.len()
    );
    for i in 0..spec.len() {
        let _ = writeln!(out, "{i}: {:.10} {}", spec.eigenvalues[i], spec.tags[i].as_str());
    }
    Ok(out)
}

fn run_cube_bench(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let s = &cfg.solver;
    let n = cfg.mesh.n[0];
    let problem = CubeProblem::new(s.tau, n, s.order)?;
    let bench = benchmark_on(&problem, n, s.m)?;
    w.write("spectrum.csv", |b| write_spectrum_csv(b, &bench.spectrum))?;
    w.write("cube.csv", |b| write_cube_csv(b, &bench))?;
    let mut out = format!(
        "cube (0, pi)^3: tau {}, n {n}, order {}, {} dofs, {} clusters\n",
        s.tau,
        s.order,
        bench.dofs,
        bench.rows.len()
    );
    for (i, r) in bench.rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "cluster {i}: exact {} x{} ({}), computed mean {:.8}, max rel error {:.3e}, multiplicity {}, tags M{} G{} U{}",
            r.exact.lambda,
            r.exact.multiplicity(),
            r.exact.tag(),
            r.mean(),
            r.max_rel_error,
            r.computed_multiplicity,
            r.maxwell,
            r.gradient,
            r.unclassified
        );
    }
    let _ = writeln!(
        out,
        "max rel error {:.3e}; within 2% with exact multiplicities and tags: {}",
        bench.max_rel_error(),
        bench.passes(0.02)
    );
    Ok(out)
}

fn sweep_config(cfg: &RunConfig) -> SweepConfig {
    let s = &cfg.sweep;
    SweepConfig {
        eps_list: s.eps_list.clone(),
        n_horizontal: s.n_horizontal,
        n_vertical: s.n_vertical,
        order: cfg.solver.order,
        tau: cfg.solver.tau,
        modes: s.modes,
        e_clusters: s.e_clusters,
        gap_tol: s.gap_tol,
        solver_tol: cfg.solver.tol,
        cluster_tol: cfg.solver.cluster_tol,
        quad_n: s.quad_n,
    }
}

fn run_sweep(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let fam = family(cfg, domain(cfg)?)?;
    let report = sweep_epsilon(&fam, cfg.sweep.alpha, &sweep_config(cfg))?;
    w.write("report.csv", |b| write_report_csv(b, &report))?;
    Ok(sweep_summary(&report))
}

fn run_piola(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let base = domain(cfg)?;
    let chart = base.atlas().chart(cfg.sweep.chart.min(base.atlas().s() - 1));
    let [(x0, x1), (y0, y1), (z_lo, _)] = chart.bounds();
    let g = base.profile(cfg.sweep.chart.min(base.profiles().len().saturating_sub(1)));
    let z_top = g.value([0.5 * (x0 + x1), 0.5 * (y0 + y1)]);
    let (lo, hi) = ([x0, y0, z_lo], [x1, y1, z_top]);
    let fam = family(cfg, base.clone())?;
    let mut out = format!(
        "piola: alpha {}, eps {:?}, {} points per axis\n",
        cfg.sweep.alpha, cfg.sweep.eps_list, cfg.piola.points
    );
    for f in &cfg.piola.fields {
        let phi = match f.a {
            Some(a) => AnalyticVectorField::box_mode(f.name.clone(), lo, hi, f.m, a),
            None => AnalyticVectorField::box_gradient(f.name.clone(), lo, hi, f.m),
        };
        let reports = verify_family(&phi, &fam, &cfg.sweep.eps_list, cfg.piola.points)?;
        let name = format!("piola_{}.csv", sanitize(&f.name));
        w.write(&name, |b| write_piola_csv(b, &reports))?;
        let gaps: Vec<f64> = reports.iter().map(|r| r.norm_gap()).collect();
        let dists: Vec<f64> = reports.iter().map(|r| r.overlap_distance).collect();
        let _ = writeln!(
            out,
            "{}: identity below the perturbation: {}; norm gaps [{}] (decreasing: {}); overlap distances [{}] (decreasing: {})",
            f.name,
            reports.iter().all(|r| r.identity_on_compact),
            sci_list(&gaps),
            strictly_decreasing(&gaps),
            sci_list(&dists),
            strictly_decreasing(&dists)
        );
    }
    Ok(out)
}

fn run_mazya(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let z = &cfg.mazya;
    let mut rows = Vec::new();
    let mut out = format!("mazya: xbar {:?}, delta {}, N = {}\n", z.xbar, z.delta, z.n_dim);
    for g in &z.profiles {
        g.validate()?;
        let dini = gradient_modulus(g).map(|m| {
            m.validate()
                .map(|_| dini_integral(&m, z.t_min, z.t_max, z.dini_quad_n))
        });
        let dini = dini.transpose()?;
        let reports = mazya_criterion(g, z.xbar, z.delta, &z.rho_list, z.n_dim, z.quad_n)?;
        let _ = writeln!(
            out,
            "{}: dini {}",
            g.kind_name(),
            match &dini {
                Some(d) if d.divergent => "divergent".to_string(),
                Some(d) => d.value.map_or("divergent".to_string(), |v| format!("{v:.10}")),
                None => "unknown".to_string(),
            }
        );
        for r in reports {
            rows.push((r, dini.clone()));
        }
    }
    w.write("mazya.csv", |b| write_mazya_csv(b, &rows))?;
    Ok(out)
}

fn run_check_atlas(cfg: &RunConfig, w: &mut Writer) -> Result<String, CliError> {
    let dom = domain(cfg)?;
    let a = &cfg.atlas;
    dom.validate(a.grid_n)?;
    let (k, gamma) = dom.regularity().map_or((a.k, a.gamma), |c| (c.k, c.gamma));
    let class_norm = check_atlas_class(&dom, k, gamma, a.grid_n)?;
    let fam = family(cfg, dom.clone())?;
    let conditions = check_convergence_conditions(&fam, &cfg.sweep.eps_list, a.grid_n)?;
    w.write("atlas.csv", |b| write_atlas_csv(b, &conditions))?;
    let mut out = format!(
        "atlas: {} charts ({} on the boundary), rho {}\nsampled C^{{{k},{gamma}}} norm {class_norm:.6e}\n",
        dom.atlas().s(),
        dom.atlas().s_prime(),
        dom.atlas().rho()
    );
    if let Some(c) = dom.regularity() {
        let _ = writeln!(out, "declared M {} covers the sampled norm", c.m);
    }
    let _ = writeln!(
        out,
        "convergence-condition ratios decreasing (value, gradient, hessian): {:?}",
        conditions.decreasing
    );
    Ok(out)
}

/// Writes the convergence-condition rows, one per ε.
pub fn write_atlas_csv<W: std::io::Write>(mut w: W, r: &ConvergenceConditionReport) -> std::io::Result<()> {
    writeln!(w, "{ATLAS_CSV_VERSION}")?;
    writeln!(
        w,
        "eps,kappa,sup_value,sup_gradient,sup_hessian,ratio_value,ratio_gradient,ratio_hessian,kappa_dominates"
    )?;
    for row in &r.rows {
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            row.eps,
            row.kappa,
            row.sup_norms[0],
            row.sup_norms[1],
            row.sup_norms[2],
            row.ratios[0],
            row.ratios[1],
            row.ratios[2],
            row.kappa_dominates
        )?;
    }
    Ok(())
}

fn sci_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// File-name-safe version of a field name.
fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitized_names_are_file_safe() {
        assert_eq!(sanitize("F1"), "F1");
        assert_eq!(sanitize("a/b c"), "a_b_c");
    }

    #[test]
    fn missing_command_is_a_config_error() {
        let mut cfg = RunConfig::for_command(Command::Mazya);
        cfg.command = None;
        assert_eq!(run(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn missing_domain_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::for_command(Command::Mesh);
        cfg.domain = Some(dir.path().join("absent.toml"));
        cfg.out = Some(dir.path().to_path_buf());
        assert_eq!(run(&cfg).unwrap_err().exit_code(), 2);
    }
}
