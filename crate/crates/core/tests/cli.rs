use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tapertrap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapertrap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "mode1.power_mW = 0.8\nmode2.power_mW = 4\nmodel.diameter_max_nm = 900\nmodel.force_scale = 1035\n\
         sweep.R = 0.12, 0.16, 0.2\ndynamics.duration_s = 12\ndynamics.gamma_kg_s = 1.35e-8\n\
         dynamics.injection_z_um = 0, 900\ndynamics.injection_t_s = 0, 1\ndynamics.z_max_um = 1000\n\
         analysis.min_dwell_s = 1\n{extra}"
    );
    let path = dir.join("exp.conf");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "particle.radius_nm = -5\n");
    let out = tapertrap(&["trap-scan", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 12"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "mystery.key = 1\n");
    let out = tapertrap(&["modes", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown key"));

    let out = tapertrap(&["trap-scan", "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tapertrap(&["not-a-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn injection_outside_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "").replace("exp.conf", "exp2.conf");
    let text = fs::read_to_string(dir.path().join("exp.conf"))
        .unwrap()
        .replace("injection_z_um = 0, 900", "injection_z_um = 0, 5000");
    fs::write(&cfg, text).unwrap();
    let out = tapertrap(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("injection_z_um"));
}

#[test]
fn full_pipeline_with_provenance_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (a_s, b_s) = (a.to_str().unwrap(), b.to_str().unwrap());

    let out = tapertrap(&["trap-scan", "--config", &cfg, "--out", a_s, "--jobs", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let scan = fs::read_to_string(a.join("trap_scan.csv")).unwrap();
    let mut lines = scan.lines();
    let prov = lines.next().unwrap();
    assert!(prov.starts_with("# tapertrap ") && prov.contains("config_sha256=") && prov.contains("seed=1"));
    assert_eq!(
        lines.next().unwrap(),
        "R,z0_m,diameter_m,stiffness_N_per_m,depth_J,depth_kBT,stable"
    );
    assert_eq!(lines.filter(|l| l.ends_with(",true")).count(), 3);
    assert!(a.join("trap_scan.svg").exists() && a.join("potentials.csv").exists());

    for dir in [a_s, b_s] {
        let out = tapertrap(&["simulate", "--config", &cfg, "--out", dir, "--seed", "11"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let ka = fs::read_to_string(a.join("kymograph_R0.16.txt")).unwrap();
    assert_eq!(ka, fs::read_to_string(b.join("kymograph_R0.16.txt")).unwrap());
    assert!(ka.contains("power_ratio 0.16") && ka.contains("seed=11"));
    assert_eq!(
        fs::read(a.join("truth_R0.2.csv")).unwrap(),
        fs::read(b.join("truth_R0.2.csv")).unwrap()
    );
    let out = tapertrap(&["simulate", "--config", &cfg, "--out", b_s, "--seed", "12"]);
    assert!(out.status.success());
    assert_ne!(ka, fs::read_to_string(b.join("kymograph_R0.16.txt")).unwrap());

    let out = tapertrap(&["analyze", "--config", &cfg, "--out", a_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(a.join("analysis_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("analysis_kymograph_R0.16.json")).unwrap()).unwrap();
    assert!(json["result"]["trap_position_m"].as_f64().is_some());
    assert_eq!(json["provenance"]["seed"], 1);

    let out = tapertrap(&["report", "--config", &cfg, "--out", a_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(fs::read_to_string(a.join("report.svg")).unwrap().contains("</svg>"));
}

#[test]
fn partial_batch_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.R = 0.16\n").replace("exp.conf", "one.conf");
    let text = fs::read_to_string(dir.path().join("exp.conf"))
        .unwrap()
        .replace("sweep.R = 0.12, 0.16, 0.2\n", "");
    fs::write(&cfg, text).unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(tapertrap(&["simulate", "--config", &cfg, "--out", d]).status.success());
    let junk = dir.path().join("kymograph_junk.txt");
    fs::write(&junk, "pixel_pitch_m oops\ndata\n1 2\n").unwrap();
    let out = tapertrap(&["analyze", "--config", &cfg, "--out", d]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("kymograph_junk"));
    let out = tapertrap(&["analyze", "--config", &cfg, "--out", d, junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn json_format_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = tapertrap(&["report", "--out", d]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = dir.path().join("m.conf");
    fs::write(&cfg, "model.diameter_max_nm = 500\n").unwrap();
    let out = tapertrap(&["modes", "--config", cfg.to_str().unwrap(), "--out", d, "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("modes.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 101);
    assert_eq!(v["columns"][0], "diameter_m");
    assert!(v["provenance"]["config_sha256"].as_str().unwrap().len() == 64);
    let out = tapertrap(&["report", "--out", d]);
    assert!(out.status.success(), "{}", stderr(&out));
}
