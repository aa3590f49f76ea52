//! End-to-end tests of the batch front end: exit codes, determinism of
//! emitted CSVs, sweep manifests and report files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vfpk")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("vfpk_cli_tests").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SMALL_EVOLVE: &str = "\
potential.family = quadratic
grid.half_width = 9
grid.nodes = 64
kernel.family = synchrotron
kernel.strength = 0.05
velocity.modes = 8
velocity.nu = 1.0
evolve.dt = 5e-3
evolve.t_end = 0.05
evolve.output_stride = 2
evolve.track_functionals = false
perturb.kind = bump
perturb.amplitude = 1e-3
";

#[test]
fn unknown_kernel_family_exits_2_with_path() {
    let dir = scratch("bad_kernel");
    let cfg = write_cfg(&dir, "run.cfg", "kernel.family = coulombic\n");
    let out = Command::new(bin())
        .args(["steady", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel.family"), "stderr: {err}");
}

#[test]
fn unknown_key_exits_2_with_path() {
    let dir = scratch("bad_key");
    let cfg = write_cfg(&dir, "run.cfg", "grid.nodes = 64\nkernel.strenght = 1\n");
    let out = Command::new(bin())
        .args(["steady", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel.strenght"), "stderr: {err}");
}

#[test]
fn zero_kernel_steady_converges_in_one_iteration() {
    let dir = scratch("steady_zero");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        "potential.family = quadratic\ngrid.half_width = 9\ngrid.nodes = 129\nkernel.family = zero\n",
    );
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["steady", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "iteration,residual,contraction_factor,zeta");
    assert_eq!(rows.len(), 2, "one data row expected: {csv}");
    assert!(out_dir.join("steady.rho").exists());
}

#[test]
fn identical_config_and_seed_give_bit_identical_csv() {
    let dir = scratch("determinism");
    let cfg = write_cfg(&dir, "run.cfg", SMALL_EVOLVE);
    for sub in ["a", "b"] {
        let out = Command::new(bin())
            .args(["evolve", "--quiet", "--seed", "17", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.join(sub))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.join("a/series.csv")).unwrap();
    let b = fs::read(dir.join("b/series.csv")).unwrap();
    assert_eq!(a, b, "series.csv differs between identical runs");
    let fa = fs::read(dir.join("a/final.pss")).unwrap();
    let fb = fs::read(dir.join("b/final.pss")).unwrap();
    assert_eq!(fa, fb, "final snapshot differs between identical runs");
}

#[test]
fn series_csv_has_header_and_constant_column_count() {
    let dir = scratch("csv_shape");
    let cfg = write_cfg(&dir, "run.cfg", SMALL_EVOLVE);
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["evolve", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,mass,free_energy,l2_fstar,h1x_fstar,gradv_l2,twisted,e0,e11"));
    let width = header.split(',').count();
    for line in lines {
        assert_eq!(line.split(',').count(), width, "ragged row: {line}");
    }
}

#[test]
fn cfl_violation_exits_4() {
    let dir = scratch("cfl");
    let mut body = SMALL_EVOLVE.to_string();
    body.push_str("evolve.dt = 1.0\n");
    body = body.replace("evolve.dt = 5e-3\n", "");
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out = Command::new(bin())
        .args(["evolve", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_over_interaction_strength_writes_manifest() {
    let dir = scratch("sweep");
    let mut body = SMALL_EVOLVE.to_string();
    body.push_str("sweep.parameters = kernel.strength\n");
    // Duplicate value is deduplicated with a warning.
    body.push_str("sweep.values.kernel.strength = 0, 0.1, 0.1\n");
    body.push_str("sweep.experiment = evolve\n");
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["sweep", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("duplicate sweep value"), "missing dedup warning: {err}");
    let manifest = fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().collect();
    assert_eq!(rows[0], "point,kernel.strength,status,converged,lambda_hat,gap");
    assert_eq!(rows.len(), 3, "two points expected: {manifest}");
    for row in &rows[1..] {
        assert!(row.contains(",ok,true,"), "row not converged: {row}");
    }
    assert!(out_dir.join("point_0000/series.csv").exists());
    assert!(out_dir.join("point_0001/point.cfg").exists());
}

#[test]
fn sweep_without_parameters_is_a_single_point() {
    let dir = scratch("sweep_single");
    let mut body = SMALL_EVOLVE.to_string();
    body.push_str("sweep.experiment = evolve\n");
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["sweep", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let manifest = fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
    assert!(out_dir.join("point_0000/series.csv").exists());
}

#[test]
fn diagnose_and_poincare_emit_reports() {
    let dir = scratch("reports");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        "potential.family = quadratic\ngrid.half_width = 9\ngrid.nodes = 128\n\
         kernel.family = synchrotron\nkernel.strength = 0.05\n\
         diagnose.nodes = 24\ndiagnose.modes = 6\ndiagnose.trials = 20\n",
    );
    let out_dir = dir.join("diag");
    let out = Command::new(bin())
        .args(["diagnose", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("operators.json")).unwrap();
    assert!(report.contains("\"skew_defect\""));
    assert!(report.contains("\"lambda_macro\""));

    // The poincare command does not understand the diagnose.* keys; a
    // separate config exercises it (unknown keys are rejected by design).
    let pcfg = write_cfg(
        &dir,
        "poincare.cfg",
        "potential.family = quadratic\ngrid.half_width = 9\ngrid.nodes = 128\n\
         kernel.family = synchrotron\nkernel.strength = 0.05\npoincare.trials = 20\n",
    );
    let out_dir = dir.join("poincare");
    let out = Command::new(bin())
        .args(["poincare", "--quiet", "--config"])
        .arg(&pcfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("poincare.json")).unwrap();
    assert!(report.contains("\"gap\""));
    assert!(report.contains("\"envelope_upper\""));
}

#[test]
fn rough_run_blanks_initial_h1x_but_not_later_rows() {
    let dir = scratch("rough_blank");
    let mut body = SMALL_EVOLVE.replace("perturb.kind = bump", "perturb.kind = rough");
    body.push_str("evolve.log_sampling = true\n");
    body.push_str("evolve.filter = true\n");
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["linear", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let h1x_idx = header.iter().position(|c| *c == "h1x_fstar").unwrap();
    let first: Vec<&str> = lines[1].split(',').collect();
    assert!(first[h1x_idx].is_empty(), "t = 0 H1 cell should be blank");
    let second: Vec<&str> = lines[2].split(',').collect();
    assert!(!second[h1x_idx].is_empty(), "later H1 cells must be finite");
}

#[test]
fn max_iter_exhaustion_exits_3() {
    let dir = scratch("maxiter");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        "potential.family = quadratic\ngrid.half_width = 9\ngrid.nodes = 129\n\
         kernel.family = synchrotron\nkernel.strength = 0.2\n\
         steady.tol = 1e-14\nsteady.max_iter = 2\n",
    );
    let out = Command::new(bin())
        .args(["steady", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // The convergence CSV is still written for the best iterate.
    assert!(dir.join("out/convergence.csv").exists());
}

#[test]
fn manufactured_source_runs_in_linear_mode() {
    let dir = scratch("source");
    let mut body = SMALL_EVOLVE.replace("perturb.kind = bump", "perturb.kind = none");
    body.push_str("linear.source = manufactured\n");
    body.push_str("linear.source_amplitude = 1e-3\n");
    body.push_str("linear.source_mode = 2\n");
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["linear", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let l2_idx = header.iter().position(|c| *c == "l2_fstar").unwrap();
    let mass_idx = header.iter().position(|c| *c == "mass").unwrap();
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    // The divergence-form source grows microscopic content but injects no
    // mass: the residual drift is the scheme-level transport defect only.
    let l2: f64 = last[l2_idx].parse().unwrap();
    let mass: f64 = last[mass_idx].parse().unwrap();
    assert!(l2 > 0.0, "source produced no perturbation");
    assert!(mass.abs() < 1e-8, "source must be mass-neutral, got {mass}");
}

#[test]
fn evolve_can_load_a_steady_snapshot() {
    let dir = scratch("load_steady");
    let steady_cfg = write_cfg(
        &dir,
        "steady.cfg",
        "potential.family = quadratic\ngrid.half_width = 9\ngrid.nodes = 64\n\
         kernel.family = synchrotron\nkernel.strength = 0.05\n",
    );
    let out = Command::new(bin())
        .args(["steady", "--quiet", "--config"])
        .arg(&steady_cfg)
        .arg("--out")
        .arg(dir.join("s"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let mut body = SMALL_EVOLVE.to_string();
    body.push_str(&format!("steady.load = {}\n", dir.join("s/steady.rho").display()));
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out = Command::new(bin())
        .args(["evolve", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("e"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("e/series.csv").exists());
}

#[test]
fn shifted_gaussian_data_tracks_moments() {
    let dir = scratch("ou_cli");
    let cfg = write_cfg(
        &dir,
        "run.cfg",
        "potential.family = quadratic\ngrid.half_width = 10\ngrid.nodes = 128\n\
         kernel.family = zero\nvelocity.modes = 32\nvelocity.nu = 1.0\n\
         evolve.dt = 2e-3\nevolve.t_end = 0.2\nevolve.transport = spectral\n\
         evolve.limiter = none\nevolve.output_stride = 10\n\
         evolve.track_functionals = false\nevolve.track_energy = false\n\
         perturb.kind = shifted_gaussian\nperturb.mean_x = 1.0\n\
         perturb.sigma_x = 0.8\nperturb.mean_v = 0.5\n",
    );
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["evolve", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let mx = header.iter().position(|c| *c == "mean_x").unwrap();
    let mv = header.iter().position(|c| *c == "mean_v").unwrap();
    let first: Vec<&str> = lines[1].split(',').collect();
    let mean_x0: f64 = first[mx].parse().unwrap();
    let mean_v0: f64 = first[mv].parse().unwrap();
    assert!((mean_x0 - 1.0).abs() < 1e-10, "initial mean_x {mean_x0}");
    assert!((mean_v0 - 0.5).abs() < 1e-10, "initial mean_v {mean_v0}");
    // With m_v(0) = 0.5 the mean first drifts outward while the velocity
    // relaxes: m_x' = m_v > 0 and m_v' = -m_x - nu m_v < 0.
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    let mean_x1: f64 = last[mx].parse().unwrap();
    let mean_v1: f64 = last[mv].parse().unwrap();
    assert!(mean_x1 > mean_x0 && mean_x1 < 1.1, "mean_x {mean_x0} -> {mean_x1}");
    assert!(mean_v1 < mean_v0, "mean_v should decrease: {mean_v0} -> {mean_v1}");
}

#[test]
fn config_file_can_set_output_dir_and_seed() {
    let dir = scratch("cfg_out");
    let out_dir = dir.join("from_config");
    let body = format!(
        "potential.family = quadratic\ngrid.half_width = 9\ngrid.nodes = 65\n\
         kernel.family = zero\noutput.dir = {}\nseed = 7\n",
        out_dir.display()
    );
    let cfg = write_cfg(&dir, "run.cfg", &body);
    let out = Command::new(bin())
        .args(["steady", "--quiet", "--config"])
        .arg(&cfg)
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("steady.rho").exists());
}
