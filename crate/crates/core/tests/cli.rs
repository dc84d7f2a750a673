use std::path::Path;
use std::process::{Command, Output};

use cortexreg::energy::DeformationField;
use cortexreg::graph::GraphSurface;
use cortexreg::io::KeyValues;
use cortexreg::testbed::SyntheticScene;
use cortexreg::volume::{load_volume, write_volume, BinaryMask3, Grid3, ScalarField3};

fn cortexreg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cortexreg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_SCENE: [&str; 6] = ["--set", "dims=65,65", "--set", "band=8", "--set", "curve_separation=4"];

fn small_scene_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = extra.to_vec();
    v.extend_from_slice(&SMALL_SCENE);
    v
}

#[test]
fn redistance_sphere_mask() {
    let dir = tempfile::tempdir().unwrap();
    let n = 32;
    let grid = Grid3::new([n, n, n], 1.0, [0.0; 3]).unwrap();
    let c = 15.5;
    let r = 8.0;
    let dist = |p: [f64; 3]| ((p[0] - c).powi(2) + (p[1] - c).powi(2) + (p[2] - c).powi(2)).sqrt() - r;
    BinaryMask3::from_fn(grid, |p| dist(p) < 0.0)
        .write(&dir.path().join("mask.hdr"))
        .unwrap();
    let out = cortexreg(&["redistance", "--mask", "mask.hdr", "--out", "sdf.hdr"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sdf = load_volume(&dir.path().join("sdf.hdr")).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, &d) in sdf.values.iter().enumerate() {
        let [i, j, k] = grid.coords(idx);
        let exact = dist(grid.position(i, j, k));
        if exact.abs() < 6.0 {
            worst = worst.max((d - exact).abs());
        }
    }
    assert!(worst <= 1.5, "max error {worst}");
    let manifest = KeyValues::read(&dir.path().join("sdf.hdr.manifest")).unwrap();
    assert_eq!(manifest.get("command"), Some("redistance"));
}

#[test]
fn redistance_reports_missing_input_and_full_mask() {
    let dir = tempfile::tempdir().unwrap();
    let out = cortexreg(&["redistance", "--mask", "absent.hdr", "--out", "sdf.hdr"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent.hdr"));

    let grid = Grid3::new([6, 6, 6], 1.0, [0.0; 3]).unwrap();
    BinaryMask3::from_fn(grid, |_| true)
        .write(&dir.path().join("full.hdr"))
        .unwrap();
    let out = cortexreg(&["redistance", "--mask", "full.hdr", "--out", "sdf.hdr"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("mask has no outside voxels"), "{}", stderr(&out));
}

fn write_plane_sdf(dir: &Path) -> Grid3 {
    let grid = Grid3::new([36, 36, 36], 1.0, [0.0; 3]).unwrap();
    let sdf = ScalarField3::from_fn(grid, |p| p[2] - 18.0).unwrap();
    write_volume(&sdf, &dir.join("plane.hdr")).unwrap();
    grid
}

#[test]
fn classify_plane_gives_reference_value() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write_plane_sdf(dir.path());
    let out = cortexreg(&["classify", "--sdf", "plane.hdr", "--out", "c.hdr"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let c = load_volume(&dir.path().join("c.hdr")).unwrap();
    assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
    let mut seen = 0;
    for j in 9..27 {
        for i in 9..27 {
            let v = c.at(i, j, 18);
            assert!((v - 0.5556).abs() <= 0.02, "C({i},{j}) = {v}");
            seen += 1;
        }
    }
    assert!(seen > 0);
    assert_eq!(grid.dims, c.grid.dims);
}

#[test]
fn classify_rejects_small_eps() {
    let dir = tempfile::tempdir().unwrap();
    write_plane_sdf(dir.path());
    let out = cortexreg(&["classify", "--sdf", "plane.hdr", "--out", "c.hdr", "--eps", "1.5"], dir.path());
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

fn write_sphere_sdf(dir: &Path, r: f64) {
    let grid = Grid3::new([64, 64, 64], 1.0, [-31.5, -31.5, -31.5]).unwrap();
    let sdf = ScalarField3::from_fn(grid, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r).unwrap();
    write_volume(&sdf, &dir.join("sphere.hdr")).unwrap();
}

#[test]
fn extract_sphere_cap_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = 20.0;
    write_sphere_sdf(dir.path(), r);
    let out = cortexreg(
        &["extract", "--sdf", "sphere.hdr", "--out", "cap.hdr", "--region", "-6,-6,6,6", "--dims", "25,25"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let surf = GraphSurface::load(&dir.path().join("cap.hdr")).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..25 {
        for i in 0..25 {
            let [x, y, z] = surf.local_point(i, j);
            worst = worst.max((z - (r * r - x * x - y * y).sqrt()).abs());
        }
    }
    assert!(worst <= 0.05, "height error {worst}");
    surf.write(&dir.path().join("again.hdr")).unwrap();
    assert_eq!(GraphSurface::load(&dir.path().join("again.hdr")).unwrap(), surf);
}

#[test]
fn extract_ray_miss_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write_sphere_sdf(dir.path(), 5.0);
    let out = cortexreg(
        &["extract", "--sdf", "sphere.hdr", "--out", "cap.hdr", "--region", "-20,-20,20,20", "--dims", "9,9"],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("first failing node (0, 0)"), "{}", stderr(&out));
}

#[test]
fn synthesize_is_reproducible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let args = small_scene_args(&["--seed", "4", "synthesize", "--out", name]);
        let out = cortexreg(&args, dir.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in ["surface.hdr", "psi_true.hdr", "camera.txt", "f.hdr", "g.hdr", "manifest.txt"] {
        assert!(dir.path().join("a").join(file).exists(), "{file} missing");
    }
    for file in ["manifest.txt", "surface.raw", "psi_true.raw", "g.raw", "f.raw"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        let a_text = String::from_utf8_lossy(&a).replace("out=a", "out=b");
        if file == "manifest.txt" {
            assert_eq!(a_text.as_bytes(), b.as_slice());
        } else {
            assert_eq!(a, b, "{file} differs");
        }
    }
}

#[test]
fn synthesize_rejects_folding_deformation() {
    let dir = tempfile::tempdir().unwrap();
    let args = small_scene_args(&["synthesize", "--out", "s", "--amplitude", "60"]);
    let out = cortexreg(&args, dir.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("self-occludes"), "{}", stderr(&out));
}

#[test]
fn register_and_evaluate_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_scene_args(&["--seed", "2", "synthesize", "--out", "scene"]);
    assert_eq!(code(&cortexreg(&synth, dir.path())), 0);

    let run = ["register", "--scene", "scene", "--levels", "3", "--max-iters", "60"];
    let mut first = run.to_vec();
    first.extend(["--out", "psi1.hdr"]);
    let out = cortexreg(&first, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut second = run.to_vec();
    second.extend(["--out", "psi2.hdr"]);
    assert_eq!(code(&cortexreg(&second, dir.path())), 0);
    let a = std::fs::read(dir.path().join("psi1.raw")).unwrap();
    let b = std::fs::read(dir.path().join("psi2.raw")).unwrap();
    assert_eq!(a, b, "registration output is not deterministic");

    for suffix in [".trace.csv", ".energy.log", ".metrics", ".manifest"] {
        assert!(dir.path().join(format!("psi1.hdr{suffix}")).exists(), "{suffix} missing");
    }
    let manifest = KeyValues::read(&dir.path().join("psi1.hdr.manifest")).unwrap();
    assert_eq!(manifest.get("levels"), Some("3"));
    assert!(manifest.contains("lambda_used"));

    // Evaluate through the CLI and through the library.
    let out = cortexreg(&["evaluate", "--psi", "psi1.hdr", "--scene", "scene", "--out", "m.txt"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cli = std::fs::read_to_string(dir.path().join("m.txt")).unwrap();
    let scene = SyntheticScene::read_bundle(&dir.path().join("scene")).unwrap();
    let psi = DeformationField::load(&dir.path().join("psi1.hdr")).unwrap();
    let lib = scene.score(&psi).unwrap().to_kv().to_string();
    assert_eq!(cli, lib);
    let reg_metrics = std::fs::read_to_string(dir.path().join("psi1.hdr.metrics")).unwrap();
    assert_eq!(reg_metrics, lib);
}

#[test]
fn register_rejects_non_positive_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_scene_args(&["synthesize", "--out", "scene"]);
    assert_eq!(code(&cortexreg(&synth, dir.path())), 0);
    for lambda in ["0", "-2"] {
        let out = cortexreg(&["register", "--scene", "scene", "--out", "p.hdr", "--lambda", lambda], dir.path());
        assert_eq!(code(&out), 3, "lambda {lambda}: {}", stderr(&out));
    }
}

#[test]
fn evaluate_truth_is_zero_and_dims_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_scene_args(&["synthesize", "--out", "scene"]);
    assert_eq!(code(&cortexreg(&synth, dir.path())), 0);
    let out = cortexreg(
        &["evaluate", "--psi", "scene/psi_true.hdr", "--scene", "scene", "--out", "m.txt"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = KeyValues::read(&dir.path().join("m.txt")).unwrap();
    assert_eq!(m.require_value::<f64>("rms_surface_error").unwrap(), 0.0);
    assert_eq!(m.require_value::<f64>("max_surface_error").unwrap(), 0.0);
    assert_eq!(m.require_value::<f64>("ratio").unwrap(), 0.0);

    let other = GraphSurface::flat([33, 33], [1.0, 1.0], [0.0, 0.0], 0.0);
    DeformationField::identity(&other)
        .write(&dir.path().join("small.hdr"))
        .unwrap();
    let out = cortexreg(&["evaluate", "--psi", "small.hdr", "--scene", "scene", "--out", "m2.txt"], dir.path());
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "dims=65,65\nband=8\ncurve_separation=4\nseed=9\ncurves=5\n").unwrap();
    let out = cortexreg(&["--config", "run.cfg", "synthesize", "--out", "s", "--curves", "3"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = KeyValues::read(&dir.path().join("s/manifest.txt")).unwrap();
    assert_eq!(m.get("seed"), Some("9"));
    assert_eq!(m.get("curve_count"), Some("3"));
    assert_eq!(m.get("dims"), Some("65,65"));
}

#[test]
fn usage_errors_and_bad_threads_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cortexreg(&["register", "--bogus"], dir.path())), 3);
    let synth = small_scene_args(&["--threads", "0", "synthesize", "--out", "s"]);
    assert_eq!(code(&cortexreg(&synth, dir.path())), 3);
    assert_eq!(code(&cortexreg(&["--help"], dir.path())), 0);
}
