use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use nalgebra::Vector3;
use verf_core::flow::{write_flo, DenseFlowField};
use verf_core::scene::{save_png, ManifestFlow, ManifestView, ViewKey};
use verf_core::{generate_scene, CameraIntrinsics, Manifest, Pose, RenderBackend, SceneKind, SceneRenderer};

fn verf(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_verf"));
    cmd.args(args).env_remove("VERF_SEED");
    if let Some(s) = seed {
        cmd.env("VERF_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, "n_trials = 4\nmethods = [\"light\", \"pnp\"]\nepsilon = 0.05\n[flow]\nnoise_sigma_px = 0.5\n").unwrap();
    path.to_str().unwrap().to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = verf(&["run", "--config", &small_config(dir.path()), "--out", path_str(&out)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 4 * 2);
    assert!(out.join("summary.csv").is_file() && out.join("scatter.svg").is_file());
}

#[test]
fn seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        assert!(verf(&["run", "--config", &cfg, "--out", path_str(&out)], seed).status.success());
        fs::read_to_string(out.join("trials.csv")).unwrap()
    };
    let a = run("a", Some("7"));
    assert_eq!(a, run("b", Some("7")));
    assert_ne!(a, run("c", None));
    assert_eq!(verf(&["run", "--config", &cfg, "--out", path_str(&dir.path().join("d"))], Some("x")).status.code(), Some(1));
}

#[test]
fn config_and_io_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "n_trials = 0\n").unwrap();
    assert_eq!(verf(&["run", "--config", path_str(&bad)], None).status.code(), Some(1));
    let missing = dir.path().join("nope.toml");
    assert_eq!(verf(&["run", "--config", path_str(&missing)], None).status.code(), Some(2));
    let records = dir.path().join("none.csv");
    assert_eq!(verf(&["report", "--records", path_str(&records), "--out", path_str(dir.path())], None).status.code(), Some(2));
}

#[test]
fn report_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(verf(&["run", "--config", &small_config(dir.path()), "--out", path_str(&out)], None).status.success());
    let again = dir.path().join("again");
    let o = verf(&["report", "--records", path_str(&out.join("trials.csv")), "--out", path_str(&again)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), fs::read(again.join("summary.csv")).unwrap());

    let lone = dir.path().join("lone");
    fs::create_dir_all(&lone).unwrap();
    fs::copy(out.join("trials.csv"), lone.join("trials.csv")).unwrap();
    let no_eps = verf(&["report", "--records", path_str(&lone.join("trials.csv")), "--out", path_str(&lone)], None);
    assert_eq!(no_eps.status.code(), Some(1));
    let with_eps = verf(&["report", "--records", path_str(&lone.join("trials.csv")), "--out", path_str(&lone), "--epsilon", "0.05"], None);
    assert!(with_eps.status.success());
}

/// Stored estimate render, sensor render and a uniform 3 px flow between them.
fn image_directory(dir: &Path) -> (Pose, String) {
    let k = CameraIntrinsics::centered(500.0, 640, 480);
    let scene = Arc::new(generate_scene(SceneKind::RandomBox, 500, 1.0, 3).unwrap());
    let renderer = SceneRenderer::new(scene, k);
    let gt = Pose::look_at(Vector3::new(1.0, -2.5, 1.5), Vector3::zeros(), Vector3::z()).unwrap();
    let est = gt.translated(&Vector3::new(0.02, 0.0, 0.0));
    save_png(dir.join("est.png"), &renderer.render(&est).unwrap()).unwrap();
    save_png(dir.join("sensor.png"), &renderer.render(&gt).unwrap()).unwrap();
    write_flo(dir.join("est_sensor.flo"), &DenseFlowField::from_fn(640, 480, |_, _| [3.0, 0.0])).unwrap();
    let pose = est.to_row_major().to_vec();
    Manifest {
        intrinsics: Some(k),
        views: vec![ManifestView { pose: pose.clone(), file: "est.png".into() }],
        flows: vec![ManifestFlow { from: ViewKey::Pose(pose), to: ViewKey::Named("sensor".into()), file: "est_sensor.flo".into() }],
    }
    .save(dir.join("manifest.json"))
    .unwrap();
    let pose_arg = est.to_row_major().iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",");
    (est, pose_arg)
}

#[test]
fn verify_against_image_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (_, pose) = image_directory(dir.path());
    let manifest = dir.path().join("manifest.json");
    let sensor = dir.path().join("sensor.png");
    let args = |method: &'static str| -> Vec<String> {
        ["verify", "--image", path_str(&sensor), "--pose", &pose, "--manifest", path_str(&manifest), "--epsilon", "0.05", "--method", method]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    let run = |method: &'static str| {
        let a = args(method);
        verf(&a.iter().map(String::as_str).collect::<Vec<_>>(), None)
    };

    let o = run("disparity");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let q = report["confidence"].as_f64().unwrap();
    // folded normal tail at 3 px with sigma 4 px
    assert!((q - 0.453_254_161_5).abs() < 1e-6, "{q}");
    assert_eq!(report["decision"], "incorrect");

    // a uniform shift carries no epipolar geometry
    let light: serde_json::Value = serde_json::from_slice(&run("light").stdout).unwrap();
    assert_eq!(light["failure_reason"], "essential_failed");
    assert_eq!(light["confidence"], 0.0);

    let mut short = args("pnp");
    short[4] = "1,0,0".into();
    assert_eq!(verf(&short.iter().map(String::as_str).collect::<Vec<_>>(), None).status.code(), Some(1));
}
