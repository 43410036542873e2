use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use symmin::config::{bundled, ExperimentConfig};
use symmin::functional::{GrowthParams, Weight};
use symmin::io::read_field_csv;
use symmin::{DomainSpec, Grid, GridMode};

fn symmin(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symmin"))
        .args(args)
        .env("SYMMIN_OUTPUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, c: &ExperimentConfig) -> String {
    let path = dir.join(format!("{}.json", c.name));
    std::fs::write(&path, c.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_wiggle() -> ExperimentConfig {
    let mut c = bundled("wiggle_disk").unwrap();
    c.name = "small".into();
    c.grid = GridMode::Cartesian { per_axis: 16 };
    c.pipeline.seq_len = 3;
    c.outputs.fields = true;
    c
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn list_integrands_names_builtins() {
    let tmp = tempfile::tempdir().unwrap();
    let o = symmin(&["list-integrands"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["baseline", "wiggle", "tilted"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{text}");
    }
}

#[test]
fn exponent_violation_exits_2_and_names_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = bundled("wiggle_disk").unwrap();
    c.integrand.growth = Some(GrowthParams::pure(2, 1.5, 1.0, 1.5).with_lower(Weight::Constant(1.0), 1.5));
    let path = write_config(tmp.path(), &c);
    let o = symmin(&["run", &path], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("γ₂"), "{}", stderr(&o));
}

#[test]
fn malformed_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_json = tmp.path().join("bad.json");
    std::fs::write(&bad_json, "{ not json").unwrap();
    assert_eq!(symmin(&["run", bad_json.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    let extra = tmp.path().join("extra.json");
    std::fs::write(&extra, small_wiggle().to_json().replacen('{', "{\"seeds\": [1],", 1)).unwrap();
    assert_eq!(symmin(&["run", extra.to_str().unwrap()], tmp.path()).status.code(), Some(2));

    let mut c = small_wiggle();
    c.domain = DomainSpec { inner_radius: 2.0, ..c.domain };
    assert_eq!(symmin(&["run", &write_config(tmp.path(), &c)], tmp.path()).status.code(), Some(2));
}

#[test]
fn missing_config_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = symmin(&["run", "/nonexistent/config.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tilted_integrand_exits_3_naming_the_check() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_wiggle();
    c.name = "tilted".into();
    c.grid = GridMode::Cartesian { per_axis: 32 };
    c.integrand.name = "tilted".into();
    c.pipeline.polarization_trials = 200;
    c.pipeline.rng_seed = 1;
    let o = symmin(&["run", &write_config(tmp.path(), &c)], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("polarization monotonicity"), "{}", stderr(&o));
}

#[test]
fn rerun_is_byte_identical_and_honors_output_override() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small_wiggle();
    let path = write_config(tmp.path(), &c);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = symmin(&["run", &path], dir);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["small.csv", "small.meta.json", "small.v1.csv", "small.v3.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        assert_eq!(x, std::fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let header = std::fs::read_to_string(a.join("small.csv")).unwrap();
    assert!(header.starts_with("h,eps,J_u,J_v,defect,grad_p_norm,linf_norm,w1q_norm,dist_w11,dist_bound,C_meas,flags\n"));
    let grid = Arc::new(Grid::new(c.domain, c.grid).unwrap());
    let v = read_field_csv(grid, &a.join("small.v3.csv")).unwrap();
    assert!(v.is_nonnegative());
}

#[test]
fn baseline_disk_defect_positive_and_decreasing() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("baseline_disk.json");
    std::fs::write(&path, bundled("baseline_disk").unwrap().to_json()).unwrap();
    let o = symmin(&["run", path.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(tmp.path().join("baseline_disk.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "defect").unwrap();
    let defects: Vec<f64> = r.records().map(|rec| rec.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(defects.len(), 12);
    assert!(defects.iter().all(|&d| d > 0.0), "{defects:?}");
    assert!(defects.windows(2).all(|w| w[1] < w[0]), "{defects:?}");
}

#[test]
fn verify_oracle_reports_case_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = symmin(&["verify", "oracle", "--quick"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("PASS oracle_polarize equivalence: 100 cases, 0 failures"), "{text}");
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(symmin(&["verify", "everything"], tmp.path()).status.code(), Some(2));
}
