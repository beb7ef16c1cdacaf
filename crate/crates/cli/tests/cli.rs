use std::path::Path;
use std::process::{Command, Output};

use kbdd::grid_io::{
    generate_synthetic_dataset, load_labels, load_scene, write_labels, write_scene, CloudLabelGrid, GridGeometry,
    SynthConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kbdd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbdd"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = kbdd(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path) {
    generate_synthetic_dataset(&SynthConfig::default(), 7, dir.join("data")).unwrap();
}

#[test]
fn render_uniform_grid() {
    let dir = tempfile::tempdir().unwrap();
    let g = CloudLabelGrid::filled(GridGeometry::new(40.0, 120.0, 0.05, 12, 20), 0);
    write_labels(dir.path().join("clear.raster"), &g).unwrap();
    ok(&["render", "clear.raster", "--out", "img"], dir.path());
    let img = image::open(dir.path().join("img/clear.png")).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (20, 12));
    let first = *img.get_pixel(0, 0);
    assert!(img.pixels().all(|p| *p == first));
    assert_ne!(first.0, [0, 0, 0]);
}

#[test]
fn stats_writes_sixteen_bands_and_flags_constant_bands() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(&["stats", "data/manifest.csv", "--bins", "200", "--out", "st"], dir.path());
    let ranges = std::fs::read_to_string(dir.path().join("st/ranges.csv")).unwrap();
    assert_eq!(ranges.lines().count(), 17);
    assert_eq!(std::fs::read_dir(dir.path().join("st")).unwrap().count(), 17);

    // Flatten band B07 everywhere.
    for i in 0..10 {
        let p = dir.path().join(format!("data/scene_{i:03}.raster"));
        let mut s = load_scene(&p).unwrap();
        s.planes[6].data.fill(250.0);
        write_scene(&p, &s).unwrap();
    }
    let out = kbdd(&["stats", "data/manifest.csv", "--out", "st2"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    for args in [
        vec!["predict", "data/scene_000.raster", "--checkpoint", "missing.ckpt"],
        vec!["train", "data/manifest.csv", "--mode", "cldnet-x"],
        vec!["evaluate", "--pred", "data/labels_000.raster"],
    ] {
        let out = kbdd(&args, dir.path());
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8_lossy(&out.stderr);
        let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("kbdd: error")).collect();
        assert_eq!(lines.len(), 1, "{err}");
    }
}

#[test]
fn train_predict_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    std::fs::write(d.join("train.cfg"), "max_epochs = 10\n").unwrap();
    ok(&["train", "data/manifest.csv", "--config", "train.cfg", "--tile", "96", "--out", "run"], d);
    let log = std::fs::read_to_string(d.join("run/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 11);
    assert!(log.starts_with("epoch\tlr\ttrain_loss"));
    ok(
        &["predict", "--manifest", "data/manifest.csv", "--checkpoint", "run/model.ckpt", "--out", "pred", "--probability"],
        d,
    );
    let stdout = ok(&["evaluate", "--manifest", "data/manifest.csv", "--pred-dir", "pred", "--out", "eval"], d);
    let acc: f64 = stdout.trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!(acc > 0.9, "accuracy {acc}");
    let csv = std::fs::read_to_string(d.join("eval/confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(d.join("eval/scene_008.density.raster").exists());

    // Running the same prediction again is byte-identical.
    ok(&["predict", "data/scene_008.raster", "--checkpoint", "run/model.ckpt", "--out", "pred2"], d);
    assert_eq!(
        std::fs::read(d.join("pred/scene_008.labels.raster")).unwrap(),
        std::fs::read(d.join("pred2/scene_008.labels.raster")).unwrap()
    );
}

#[test]
fn masked_model_ignores_visible_bands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    std::fs::write(d.join("o.cfg"), "max_epochs = 1\nstem_width = 8\nu_widths = 8,8,16\nbridge_width = 16\naspp_branch_width = 8\naspp_width = 8\nfuse_width = 8\n").unwrap();
    ok(&["train", "data/manifest.csv", "--config", "o.cfg", "--mode", "cldnet-o", "--tile", "96", "--out", "o"], d);
    let scene = load_scene(d.join("data/scene_009.raster")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in ["a", "b"] {
        let mut s = scene.clone();
        for band in &mut s.planes[..6] {
            band.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..120.0));
        }
        std::fs::create_dir_all(d.join(name)).unwrap();
        write_scene(d.join(format!("{name}/scene.raster")), &s).unwrap();
        let scene_arg = format!("{name}/scene.raster");
        let out_arg = format!("{name}/pred");
        ok(
            &["predict", &scene_arg, "--checkpoint", "o/model.ckpt", "--statics", "data", "--mode", "cldnet-o", "--out", &out_arg],
            d,
        );
    }
    let a = load_labels(d.join("a/pred/scene.labels.raster")).unwrap();
    let b = load_labels(d.join("b/pred/scene.labels.raster")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn compare_resolution_on_identical_grids() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
    let g = CloudLabelGrid::new(GridGeometry::new(40.0, 120.0, 0.05, 10, 10), labels).unwrap();
    write_labels(dir.path().join("g.raster"), &g).unwrap();
    let out = ok(&["compare-resolution", "--pred", "g.raster", "--reference", "g.raster", "--out", "cmp"], dir.path());
    assert_eq!(out, "low2high accuracy=1.000000\nhigh2low accuracy=1.000000\n");
    assert_eq!(
        std::fs::read_to_string(dir.path().join("cmp/low2high.txt")).unwrap(),
        std::fs::read_to_string(dir.path().join("cmp/high2low.txt")).unwrap()
    );
}
