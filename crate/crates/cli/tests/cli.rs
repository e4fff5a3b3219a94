//! End-to-end runs of the `curlcurl` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn curlcurl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curlcurl"))
        .args(args)
        .env_remove("CURLCURL_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Lines of a CSV after the version and column-header lines.
fn body(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# curlcurl-"), "{}", path.display());
    lines.next().unwrap();
    lines.map(str::to_string).collect()
}

const BOX_DOMAIN: &str = "[atlas]\nrho = 0.02\n\n[[chart]]\nbounds = [[0.0, 1.0], [0.0, 1.0], [-1.0, 0.5]]\nboundary = true\nprofile = { kind = \"constant\", c = 0.0 }\n";

#[test]
fn unknown_command_exits_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "command = \"mazya\"\n");
    let o = curlcurl(&["explode", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("unknown command 'explode'"), "{err}");
    assert!(err.contains("Usage:"), "{err}");
}

#[test]
fn missing_config_flag_exits_2_with_usage() {
    let o = curlcurl(&["mazya"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage:"), "{}", stderr(&o));
}

#[test]
fn range_error_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "command = \"cube-bench\"\n[solver]\ntau = -1.0\n");
    let o = curlcurl(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("solver.tau") && err.contains("line 3"), "{err}");
}

#[test]
fn conflicting_commands_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "command = \"mazya\"\n");
    let o = curlcurl(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "not_a_dir", "x");
    let cfg = write(dir.path(), "run.toml", "command = \"mazya\"\n");
    let o = curlcurl(&["--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn bad_domain_file_exits_2_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "domain.toml", "[atlas]\nrho = 0.02\n\n[[chart]]\nbounds = 3\n");
    let cfg = write(dir.path(), "run.toml", "command = \"mesh\"\ndomain = \"domain.toml\"\n");
    let o = curlcurl(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn cube_bench_writes_six_clusters_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "command = \"cube-bench\"\n[mesh]\nn = [4, 4, 4]\n");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = curlcurl(&["cube-bench", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(out);
    }
    let cube = body(&outputs[0].join("cube.csv"));
    assert_eq!(cube.len(), 6);
    let exact: Vec<f64> = cube.iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(exact, vec![2.0, 3.0, 5.0, 6.0, 8.0, 9.0]);
    let spectrum = body(&outputs[0].join("spectrum.csv"));
    let multiplicity: usize = cube.iter().map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(spectrum.len(), multiplicity);
    assert_eq!(multiplicity, 3 + 3 + 6 + 9 + 3 + 9);
    for l in &spectrum {
        let tag = l.rsplit(',').next().unwrap();
        assert!(["maxwell", "gradient", "unclassified"].contains(&tag), "{l}");
    }
    for name in ["cube.csv", "spectrum.csv", "summary.txt"] {
        assert_eq!(
            fs::read(outputs[0].join(name)).unwrap(),
            fs::read(outputs[1].join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
}

#[test]
fn sweep_writes_one_row_per_eps_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "command = \"sweep\"\n[solver]\norder = 1\n[sweep]\neps_list = [0.2, 0.1]\nn_horizontal = 6\nn_vertical = 3\nmodes = 4\ne_clusters = 1\n",
    );
    let out = dir.path().join("out");
    let o = curlcurl(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&out.join("report.csv"));
    assert_eq!(rows.len(), 3 * 4);
    let keys: Vec<(String, String)> = rows
        .iter()
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    let mut expected = Vec::new();
    for eps in ["0", "0.2", "0.1"] {
        for n in 1..=4 {
            expected.push((eps.to_string(), n.to_string()));
        }
    }
    assert_eq!(keys, expected);
    assert!(out.join("summary.txt").exists());
}

#[test]
fn mesh_solve_and_check_atlas_on_a_domain_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "domain.toml", BOX_DOMAIN);
    let common = "domain = \"domain.toml\"\n[mesh]\nn = [3, 3, 3]\n[solver]\nm = 5\norder = 1\n[atlas]\ngrid_n = 16\n";
    for (cmd, file) in [("mesh", "mesh.txt"), ("solve", "spectrum.csv"), ("check-atlas", "atlas.csv")] {
        let cfg = write(dir.path(), &format!("{cmd}.toml"), &format!("command = \"{cmd}\"\n{common}"));
        let out = dir.path().join(cmd);
        let o = curlcurl(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert!(out.join(file).exists(), "{cmd}");
    }
    assert_eq!(body(&dir.path().join("solve/spectrum.csv")).len(), 5);
    assert_eq!(body(&dir.path().join("check-atlas/atlas.csv")).len(), 3);
    let mesh = fs::read_to_string(dir.path().join("mesh/mesh.txt")).unwrap();
    assert!(!mesh.is_empty());
}

#[test]
fn mazya_flags_the_log_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "command = \"mazya\"\n[mazya]\nrho_list = [0.1]\nquad_n = 8\n");
    let out = dir.path().join("out");
    let o = curlcurl(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = body(&out.join("mazya.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("hoelder_power,"), "{}", rows[0]);
    assert!(rows[1].starts_with("log_counterexample,") && rows[1].ends_with(",divergent"), "{}", rows[1]);
    let value: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert!(value.is_finite() && value > 0.0);
}

#[test]
fn piola_verify_writes_one_csv_per_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "command = \"piola-verify\"\n[sweep]\neps_list = [0.2, 0.1]\n[piola]\npoints = 3\n",
    );
    let out = dir.path().join("out");
    let o = curlcurl(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["F1", "F2", "F3"] {
        assert_eq!(body(&out.join(format!("piola_{f}.csv"))).len(), 2, "{f}");
    }
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "command = \"mazya\"\n[mazya]\nrho_list = [0.1]\nquad_n = 4\n");
    let o = Command::new(env!("CARGO_BIN_EXE_curlcurl"))
        .args(["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .env("CURLCURL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "zero threads is rejected: {}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_curlcurl"))
        .args(["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .env("CURLCURL_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        if text.contains("[[chart]]") {
            curlcurl::atlas::parse_domain_spec(&text).unwrap();
        } else {
            let cfg = curlcurl_cli::parse_config(&path).unwrap();
            let again = curlcurl_cli::parse_config_str(&cfg.to_toml(), Path::new("/")).unwrap();
            assert_eq!(again, cfg, "{}", path.display());
        }
        seen += 1;
    }
    assert!(seen >= 6);
}

#[test]
fn documented_domain_example_parses() {
    let doc = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/formats.md")).unwrap();
    let start = doc.find("## Domain specification").unwrap();
    let block = &doc[start..];
    let body = &block[block.find("```toml\n").unwrap() + 8..];
    let body = &body[..body.find("```").unwrap()];
    let dom = curlcurl::atlas::parse_domain_spec(body).unwrap();
    assert_eq!(dom.regularity().unwrap().k, 1);
}

#[test]
fn documented_run_config_parses() {
    let doc = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/formats.md")).unwrap();
    let start = doc.find("## Run configuration").unwrap();
    let block = &doc[start..];
    let body = &block[block.find("```toml\n").unwrap() + 8..];
    let body = &body[..body.find("```").unwrap()];
    let cfg = curlcurl_cli::parse_config_str(body, Path::new("/cfg")).unwrap();
    assert_eq!(cfg.piola.fields.len(), 2);
    assert_eq!(cfg.mazya.profiles.len(), 2);
}
