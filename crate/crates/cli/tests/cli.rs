use std::path::Path;
use std::process::{Command, Output};

fn surfdefect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surfdefect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = surfdefect(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn step_by_step_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let nominal = d.join("nominal.stl");
    let truth = d.join("truth.stl");
    let report = ok(&["mesh", "--out", s(&nominal)]);
    assert!(report.contains("\"n_f\":1280"), "{report}");
    ok(&["mesh", "--mesh-size-mm", "2", "--defect-radius-mm", "5", "--out", s(&truth)]);

    let clouds = d.join("clouds");
    ok(&[
        "simulate", "--mesh", s(&truth), "--distance-mm", "500", "--seed", "3", "--n-clouds", "2", "--stride", "4",
        "--out", s(&clouds),
    ]);
    assert!(clouds.join("cloud_001.ply").exists());
    assert!(clouds.join("cloud_002.json").exists());

    let ck = d.join("ck");
    let log = ok(&[
        "estimate", "--mesh", s(&nominal), "--clouds", s(&clouds), "--sigma0-mm", "50", "--border-mm", "6", "--mode",
        "info", "--icp", "off", "--out", s(&ck),
    ]);
    assert_eq!(log.lines().count(), 2);
    let state = ck.join("state_002.json");
    assert!(state.exists());

    let out = d.join("report.json");
    let summary = ok(&[
        "evaluate", "--state", s(&state), "--truth-mesh", s(&truth), "--nominal-mesh", s(&nominal), "--border-mm", "6",
        "--defect-center-mm", "0,0", "--out", s(&out),
    ]);
    assert!(summary.contains("faces selected"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["per_face_error"].as_array().unwrap().len(), 1280);
    assert!(r["defect_face"].is_u64());
    assert!(d.join("report.csv").exists());
}

#[test]
fn covariance_mode_matches_info_mode() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let nominal = d.join("n.stl");
    ok(&["mesh", "--width-mm", "40", "--height-mm", "30", "--mesh-size-mm", "5", "--out", s(&nominal)]);
    let clouds = d.join("c");
    ok(&["simulate", "--mesh", s(&nominal), "--n-clouds", "2", "--stride", "3", "--out", s(&clouds)]);
    for mode in ["info", "covariance"] {
        ok(&["estimate", "--mesh", s(&nominal), "--clouds", s(&clouds), "--mode", mode, "--out", s(&d.join(mode))]);
    }
    let load = |m: &str| -> Vec<f64> {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join(m).join("state_002.json")).unwrap()).unwrap();
        serde_json::from_value(v["x_hat"].clone()).unwrap()
    };
    let (a, b) = (load("info"), load("covariance"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn pipeline_rerun_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "n_clouds = 2\nseed = 4\n[camera]\nstride = 4\n").unwrap();
    let run = d.join("run");
    let first = ok(&["pipeline", "--config", s(&cfg), "--out", s(&run)]);
    for sub in ["meshes/nominal.stl", "clouds/cloud_002.ply", "checkpoints/state_002.json", "report.json", "rmse.csv"] {
        assert!(run.join(sub).exists(), "missing {sub}");
    }
    let again = ok(&["rerun", "--dir", s(&run), "--stage", "estimate"]);
    assert_eq!(first.lines().skip(1).collect::<Vec<_>>(), again.lines().collect::<Vec<_>>());

    let sw = d.join("sweep");
    ok(&[
        "sweep", "--config", s(&cfg), "--axis", "seed", "--values", "1,2,3", "--n-clouds", "1", "--out", s(&sw),
    ]);
    let q = std::fs::read_to_string(sw.join("quartiles.csv")).unwrap();
    assert_eq!(q.lines().count(), 1 + 3);
    let table = std::fs::read_to_string(sw.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3);
    assert!(sw.join("run_002/report.json").exists());
}

#[test]
fn defaults_print_as_toml() {
    let text = ok(&["config"]);
    assert!(text.contains("sigma0_mm = 50.0"));
    assert!(text.contains("n_clouds = 50"));
}

#[test]
fn mixed_provenance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("a.json");
    std::fs::write(&cfg, r#"{"n_clouds": 1, "camera": {"stride": 6}}"#).unwrap();
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&d.join("a"))]);
    ok(&["pipeline", "--config", s(&cfg), "--seed", "9", "--out", s(&d.join("b"))]);
    let out = surfdefect(&[
        "evaluate", "--state", s(&d.join("a/checkpoints/state_001.json")), "--truth-mesh",
        s(&d.join("b/meshes/truth.stl")), "--nominal-mesh", s(&d.join("a/meshes/nominal.stl")), "--out",
        s(&d.join("r.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mixed"));
}

#[test]
fn bad_input_fails_cleanly() {
    let out = surfdefect(&["estimate", "--mesh", "/nonexistent.stl", "--clouds", "/nonexistent", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    let out = surfdefect(&["sweep", "--axis", "speed", "--values", "1", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep axis"));
}
