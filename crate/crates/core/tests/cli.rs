use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_splatcal");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_scene(dir: &Path) -> PathBuf {
    let scene = dir.join("scene");
    ok(&["gen-scene", "--out", p(&scene), "--surface-count", "400", "--cameras", "2", "--image-size", "32"]);
    scene
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn ratio_of(csv: &Path) -> f64 {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "violation_ratio").unwrap();
    let rows: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    rows.iter().sum::<f64>() / rows.len() as f64
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["train", "--out", "/tmp/x", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn invalid_value_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-scene", "--out", p(&dir.path().join("s")), "--image-size", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["gen-scene", "--out", p(&dir.path().join("s")), "--set", "alpha_min=-1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["render", "--out", p(&dir.path().join("o")), "--scene", p(&dir.path().join("absent"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn floaters_raise_the_violation_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen_scene(dir.path());
    let dirty = dir.path().join("dirty");
    ok(&["inject-floaters", "--out", p(&dirty), "--scene", p(&scene), "--count", "300"]);
    assert!(dirty.join("floater_flags.txt").exists());
    for (name, s) in [("clean_r", &scene), ("dirty_r", &dirty)] {
        ok(&["render", "--out", p(&dir.path().join(name)), "--scene", p(s)]);
    }
    let clean_imgs: Vec<String> = ["0.ppm", "1.ppm"].iter().map(|f| p(&dir.path().join("clean_r/renders").join(f)).to_string()).collect();
    let dirty_imgs: Vec<String> = ["0.ppm", "1.ppm"].iter().map(|f| p(&dir.path().join("dirty_r/renders").join(f)).to_string()).collect();
    let a = dir.path().join("clean_dcp");
    let b = dir.path().join("dirty_dcp");
    let mut args = vec!["analyze-dcp", "--out", p(&a)];
    args.extend(clean_imgs.iter().map(String::as_str));
    ok(&args);
    let mut args = vec!["analyze-dcp", "--out", p(&b)];
    args.extend(dirty_imgs.iter().map(String::as_str));
    ok(&args);
    let (ra, rb) = (ratio_of(&a.join("dcp.csv")), ratio_of(&b.join("dcp.csv")));
    assert!(rb > ra, "clean {ra} dirty {rb}");
}

#[test]
fn config_layers_resolve_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen_scene(dir.path());
    std::fs::write(scene.join("config.toml"), "eta = 0.3\nkappa = 3.0\ntau1 = 0.2\n").unwrap();
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "eta = 0.4\nkappa = 2.0\n").unwrap();
    let out = dir.path().join("o");
    ok(&["render", "--out", p(&out), "--scene", p(&scene), "--config", p(&file), "--eta", "0.5", "--set", "alpha_min=0.02"]);
    let text = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    let table: toml::Table = text.parse().unwrap();
    assert_eq!(table["eta"].as_float(), Some(0.5));
    assert_eq!(table["kappa"].as_float(), Some(2.0));
    assert_eq!(table["tau1"].as_float(), Some(0.2));
    assert_eq!(table["alpha_min"].as_float(), Some(0.02));
}

#[test]
fn inputs_are_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen_scene(dir.path());
    let before = tree_bytes(&scene);
    let out = dir.path().join("t");
    ok(&[
        "train", "--out", p(&out), "--scene", p(&scene), "--iters", "40", "--t-start", "20", "--t-prune", "10",
        "--set", "densify_from=1000", "--set", "densify_until=2000", "--set", "log_interval=20",
    ]);
    assert_eq!(tree_bytes(&scene), before);
    for f in ["gaussians.ply", "resolved_config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = run(&["render", "--out", p(&scene), "--scene", p(&scene)]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(tree_bytes(&scene), before);
}

#[test]
fn gen_scene_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["gen-scene", "--out", p(d), "--surface-count", "300", "--cameras", "2", "--image-size", "32", "--seed", "7"]);
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn eval_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen_scene(dir.path());
    let out = dir.path().join("e");
    ok(&["eval", "--out", p(&out), "--renders", p(&scene.join("images")), "--truth", p(&scene.join("images"))]);
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(text.lines().count() >= 2, "{text}");
}
