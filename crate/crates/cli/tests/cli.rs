use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_latent-render");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_scene(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CHAIN: &str = r#"{
    "canvas": {"width": 8, "height": 8},
    "objects": [
        {"id": "C", "bbox": [0, 0, 1, 1], "color": [0, 0, 0]},
        {"id": "A", "bbox": [0, 0, 0.5, 0.5], "color": [1, 1, 1]},
        {"id": "B", "bbox": [0.25, 0.25, 0.75, 0.75], "color": [0.5, 0.5, 0.5]}
    ],
    "occlusions": [["A", "B"], ["B", "C"]]
}"#;

const RED_OVER_BLUE: &str = r#"{
    "canvas": {"width": 8, "height": 8},
    "objects": [
        {"id": "red", "bbox": [0, 0, 0.5, 0.5], "opacity": 0.999999, "color": [1, 0, 0]},
        {"id": "blue", "bbox": [0.25, 0.25, 0.75, 0.75], "opacity": 0.999999, "color": [0, 0, 1]},
        {"id": "bg", "bbox": [0, 0, 1, 1], "opacity": 0.999999, "color": [1, 1, 1]}
    ],
    "occlusions": [["red", "blue"], ["blue", "bg"]]
}"#;

fn ppm_pixel(bytes: &[u8], width: usize, row: usize, col: usize) -> [u8; 3] {
    let header = format!("P6\n{width} ");
    assert!(bytes.starts_with(header.as_bytes()));
    // Header is three newline-terminated lines.
    let body = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(2)
        .map(|(i, _)| i + 1)
        .unwrap();
    let at = body + 3 * (row * width + col);
    [bytes[at], bytes[at + 1], bytes[at + 2]]
}

#[test]
fn validate_accepts_a_good_scene() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "chain.json", CHAIN);
    let out = run(&["validate", "--scene", s(&scene)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("scene is valid: 3 objects"));
}

#[test]
fn validate_reports_opacity_one_as_json() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "bad.json", &CHAIN.replace(r#""color": [1, 1, 1]"#, r#""color": [1, 1, 1], "opacity": 1.0"#));
    let out = run(&["validate", "--scene", s(&scene), "--json-diagnostics"]);
    assert!(!out.status.success());
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["valid"], false);
    let diag = &report["diagnostics"][0];
    assert_eq!(diag["severity"], "error");
    assert_eq!(diag["path"], "objects[1].opacity");
    assert!(diag["message"].as_str().unwrap().contains("[0, 1)"));
    let streamed: Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(streamed["diagnostics"][0]["path"], "objects[1].opacity");
}

#[test]
fn warnings_alone_keep_exit_status_zero() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(
        &dir,
        "warn.json",
        r#"{"canvas": {"width": 4, "height": 4}, "objects": [{"id": "a", "bbox": [0, 0, 0.5, 0.5]}]}"#,
    );
    let out = run(&["validate", "--scene", s(&scene)]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("warning: objects[0].color"));
    let out = run(&["sort", "--scene", s(&scene)]);
    assert!(out.status.success());
}

#[test]
fn unknown_occlusion_id_fails_every_command() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "dangling.json", &CHAIN.replace(r#"["B", "C"]"#, r#"["B", "Q"]"#));
    for cmd in ["validate", "sort", "render", "simulate"] {
        let out = run(&[cmd, "--scene", s(&scene), "--out", s(dir.path())]);
        assert!(!out.status.success(), "{cmd}");
        assert!(stderr(&out).contains("\"Q\""), "{cmd}: {}", stderr(&out));
    }
}

#[test]
fn malformed_and_missing_scenes_fail() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "broken.json", "{ not json");
    let out = run(&["sort", "--scene", s(&scene)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("malformed scene"));

    let out = run(&["sort"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--scene"));

    let out = run(&["sort", "--scene", s(&dir.path().join("absent.json"))]);
    assert!(!out.status.success());
}

#[test]
fn sort_prints_front_to_back_ids() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "chain.json", CHAIN);
    let out = run(&["sort", "--scene", s(&scene)]);
    assert!(out.status.success());
    let ids: Vec<String> = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(ids, ["A", "B", "C"]);
}

#[test]
fn schedule_csv_runs_from_dt_down_to_d() {
    let dir = TempDir::new().unwrap();
    // opacity 1 - 1/e gives D = 1.
    let alpha = 1.0 - (-1.0f64).exp();
    let body = format!(
        r#"{{"canvas": {{"width": 4, "height": 4}}, "objects": [{{"id": "x", "bbox": [0, 0, 1, 1], "opacity": {alpha:?}}}]}}"#
    );
    let scene = write_scene(&dir, "one.json", &body);
    let out = run(&["schedule", "--scene", s(&scene), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 26);
    assert_eq!((header[1], header[25]), ("t25", "t1"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "x");
    let first: f64 = row[1].parse().unwrap();
    let last: f64 = row[25].parse().unwrap();
    assert!((first - 25.0).abs() < 1e-12 && (last - 1.0).abs() < 1e-12);
    assert_eq!(fs::read_to_string(dir.path().join("schedule.csv")).unwrap(), format!("{text}"));

    let out = run(&["schedule", "--scene", s(&scene), "--format", "json", "--steps", "4"]);
    let table: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(table["t"], serde_json::json!([4, 3, 2, 1]));
    assert_eq!(table["kind"], "inverse_proportional");
    let sigma = table["objects"][0]["sigma"].as_array().unwrap();
    assert!((sigma[0].as_f64().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn render_paints_the_front_object_over_the_overlap() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "rob.json", RED_OVER_BLUE);
    let out_dir = dir.path().join("out");
    let out = run(&["render", "--scene", s(&scene), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = fs::read(out_dir.join("composite.ppm")).unwrap();
    assert!(bytes.starts_with(b"P6\n8 8\n255\n"));
    assert_eq!(bytes.len(), 11 + 8 * 8 * 3);
    assert_eq!(ppm_pixel(&bytes, 8, 2, 2), [255, 0, 0]);
    assert_eq!(ppm_pixel(&bytes, 8, 5, 5), [0, 0, 255]);
    assert_eq!(ppm_pixel(&bytes, 8, 7, 7), [255, 255, 255]);

    // Swapping the edge flips the overlap.
    let swapped = write_scene(&dir, "bor.json", &RED_OVER_BLUE.replace(r#"["red", "blue"], ["blue", "bg"]"#, r#"["blue", "red"], ["red", "bg"]"#));
    let out = run(&["render", "--scene", s(&swapped), "--out", s(&out_dir)]);
    assert!(out.status.success());
    let bytes = fs::read(out_dir.join("composite.ppm")).unwrap();
    assert_eq!(ppm_pixel(&bytes, 8, 2, 2), [0, 0, 255]);
}

#[test]
fn render_requires_colors() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(
        &dir,
        "nocolor.json",
        r#"{"canvas": {"width": 4, "height": 4}, "objects": [{"id": "a", "bbox": [0, 0, 1, 1]}]}"#,
    );
    let out = run(&["render", "--scene", s(&scene), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("has no color"));
}

#[test]
fn maps_writes_one_set_per_object() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "rob.json", RED_OVER_BLUE);
    let out = run(&["maps", "--scene", s(&scene), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in [
        "transmittance_00_red.pgm",
        "visibility_01_blue.pgm",
        "weight_02_bg.pgm",
        "normalization.pgm",
    ] {
        let bytes = fs::read(dir.path().join(name)).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"), "{name}");
        assert_eq!(bytes.len(), 11 + 64);
    }
    // The front object sees everything.
    let front_visibility = fs::read(dir.path().join("visibility_00_red.pgm")).unwrap();
    assert!(front_visibility[11..].iter().all(|&b| b == 255));
    let diag: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["order"], serde_json::json!(["red", "blue", "bg"]));
    assert_eq!(diag["weights"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    // Partial blending keeps the seeded initial latent in play.
    let body = RED_OVER_BLUE.replace(r#""occlusions""#, r#""simulate": {"blend": 0.5}, "occlusions""#);
    let scene = write_scene(&dir, "rob.json", &body);
    let run_into = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&["simulate", "--scene", s(&scene), "--out", s(&out_dir), "--seed", seed, "--steps", "4"]);
        assert!(out.status.success(), "{}", stderr(&out));
        let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
        (summary["final_latent"].clone(), fs::read(out_dir.join("trace.json")).unwrap())
    };
    let (a_stats, a_trace) = run_into("a", "3");
    let (b_stats, b_trace) = run_into("b", "3");
    let (c_stats, _) = run_into("c", "4");
    assert_eq!(a_stats, b_stats);
    assert_eq!(a_trace, b_trace);
    assert_ne!(a_stats, c_stats);
    let trace: Value = serde_json::from_slice(&a_trace).unwrap();
    assert_eq!(trace["steps"].as_array().unwrap().len(), 4);
    assert_eq!(trace["config"]["seed"], 3);
}

#[test]
fn no_attention_shaping_flag_reaches_the_simulation() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(
        &dir,
        "prompted.json",
        r#"{"canvas": {"width": 6, "height": 6},
            "objects": [
                {"id": "lamp", "prompt": ["a", "glass", "lamp"], "bbox": [0.2, 0.2, 0.8, 0.8], "embedding_seed": 3},
                {"id": "wall", "bbox": [0, 0, 1, 1]}
            ],
            "occlusions": [["lamp", "wall"]],
            "schedule": {"steps": 3}}"#,
    );
    let run_with = |extra: &[&str]| {
        let mut args = vec!["simulate", "--scene", s(&scene), "--out", s(dir.path())];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
        summary["final_latent"]["norm"].as_f64().unwrap()
    };
    assert_ne!(run_with(&[]), run_with(&["--no-attention-shaping"]));
}

#[test]
fn sweep_writes_one_frame_per_alpha() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(&dir, "rob.json", RED_OVER_BLUE);
    let out = run(&["sweep", "--scene", s(&scene), "--out", s(dir.path()), "--object", "red", "--alphas", "0.1,0.5,0.9"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let shares: Vec<f64> = summary["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["weight_share"].as_f64().unwrap())
        .collect();
    assert!(shares[0] < shares[1] && shares[1] < shares[2]);
    for k in 0..3 {
        assert!(dir.path().join(format!("sweep_{k:02}_red.ppm")).exists());
    }

    let out = run(&["sweep", "--scene", s(&scene), "--out", s(dir.path()), "--object", "ghost"]);
    assert!(!out.status.success());
    let out = run(&["sweep", "--scene", s(&scene), "--out", s(dir.path()), "--object", "red", "--alphas", "1.0"]);
    assert!(!out.status.success());
}
