use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqflow::io::{ContainerKind, Dataset, SampleShape};
use eqflow::systems::alife::RgbaImage;
use eqflow::velocity_net::{NetworkConfig, VelocityNetwork};

fn eqflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = eqflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    eqflow(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn side(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn ring_dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.eqfd");
    let b = dir.path().join("b.eqfd");
    ok(&["gen-data", "--system", "ring", "--n", "4096", "--seed", "7", "--out", p(&a)]);
    ok(&["gen-data", "--system", "ring", "--n", "4096", "--seed", "7", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = Dataset::load(&a, ContainerKind::Dataset).unwrap();
    assert_eq!(ds.shape, SampleShape::Vector { d: 2 });
    assert_eq!(ds.len(), 4096);
    let manifest = std::fs::read_to_string(side(&a, ".manifest.txt")).unwrap();
    assert!(manifest.starts_with("# eqflow "));
    assert!(manifest.contains("seed = 7\n") && manifest.contains("system = ring\n"));
}

#[test]
fn gray_scott_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("maze.eqfd");
    ok(&["gen-data", "--system", "gray-scott", "--preset", "maze", "--n", "64", "--grid", "64", "--jobs", "2", "--out", p(&out)]);
    let ds = Dataset::load(&out, ContainerKind::Dataset).unwrap();
    assert_eq!(ds.shape, SampleShape::Grid { c: 2, h: 64, w: 64 });
    assert_eq!(ds.len(), 64);
    assert!(ds.data.iter().all(|v| (-0.01..=1.5).contains(v)));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.eqfd");
    assert_eq!(code(&["gen-data", "--system", "gray-scott", "--preset", "coral", "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--system", "spiral", "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--system", "ring", "--preset", "maze", "--out", p(&out)]), 2);
    assert_eq!(code(&["train-score", "--data", p(&dir.path().join("missing")), "--out", p(&out)]), 2);
    let junk = dir.path().join("junk.eqfd");
    std::fs::write(&junk, b"EQFD1 but not really").unwrap();
    assert_eq!(code(&["train-score", "--data", p(&junk), "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--out", p(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.eqfd");
    ok(&["gen-data", "--system", "two-gaussians", "--n", "256", "--out", p(&data)]);
    let out = dir.path().join("s.eqfs");
    let args = ["train-score", "--data", p(&data), "--epochs", "20", "--hidden", "8", "--lr", "1e300", "--out", p(&out)];
    assert_eq!(code(&args), 3);
    assert!(!out.exists());
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# toy run\nsystem = two-moons\nn = 100\nseed = 3\n").unwrap();
    let out = dir.path().join("m.eqfd");
    ok(&["--config", p(&cfg), "gen-data", "--n", "50", "--out", p(&out)]);
    let ds = Dataset::load(&out, ContainerKind::Dataset).unwrap();
    assert_eq!(ds.len(), 50);
    let manifest = std::fs::read_to_string(side(&out, ".manifest.txt")).unwrap();
    assert!(manifest.contains("system = two-moons\n") && manifest.contains("seed = 3\n"));

    // the manifest itself reproduces the artifact
    let again = dir.path().join("again.eqfd");
    ok(&["gen-data", "--config", p(&side(&out, ".manifest.txt")), "--out", p(&again)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&["gen-data", "--system", "ring", "--n", "512", "--seed", "1", "--out", p(&d("ring.eqfd"))]);
    ok(&[
        "train-score", "--data", p(&d("ring.eqfd")), "--objective", "v", "--epochs", "20", "--hidden", "32,32",
        "--out", p(&d("score.eqfs")),
    ]);
    assert_eq!(read_csv(&side(&d("score.eqfs"), ".loss.csv")).len(), 20);
    ok(&[
        "train-flow", "--data", p(&d("ring.eqfd")), "--score", p(&d("score.eqfs")), "--epochs", "3", "--hidden", "16,16",
        "--div", "hutch", "--k", "2", "--seeds", "2", "--seed", "5", "--out", p(&d("flow.eqfv")),
    ]);
    let m0 = d("flow.seed5.eqfv");
    let m1 = d("flow.seed6.eqfv");
    assert!(m0.exists() && m1.exists());
    let report = read_csv(&side(&d("flow.eqfv"), ".report.csv"));
    assert_eq!(report.len(), 2);

    ok(&[
        "rollout", "--model", p(&m0), "--data", p(&d("ring.eqfd")), "--n", "64", "--steps", "20", "--every", "5",
        "--out", p(&d("roll.eqfr")),
    ]);
    let roll = Dataset::load(&d("roll.eqfr"), ContainerKind::Rollout).unwrap();
    assert_eq!(roll.shape, SampleShape::Grid { c: 1, h: 64, w: 2 });
    assert_eq!(roll.len(), 5);
    assert_eq!(read_csv(&side(&d("roll.eqfr"), ".mmd.csv")).len(), 4);
    // a rollout file is not a dataset
    assert_eq!(code(&["train-score", "--data", p(&d("roll.eqfr")), "--out", p(&d("no.eqfs"))]), 2);

    ok(&[
        "eval", "--data", p(&d("ring.eqfd")), "--model", p(&m0), "--model", p(&m1), "--baselines", "3", "--probes",
        "64", "--curve", "--n", "128", "--steps", "10", "--every", "5", "--lyapunov", "--horizon", "200", "--jobs", "2",
        "--out", p(&d("eval.csv")),
    ]);
    let sims = read_csv(&d("eval.csv"));
    // one learned pair plus three random pairs
    assert_eq!(sims.len(), 4);
    assert!(sims.iter().all(|r| (0.0..=1.0).contains(&r[2].parse::<f64>().unwrap())));
    let summary = std::fs::read_to_string(side(&d("eval.csv"), ".summary.md")).unwrap();
    assert!(summary.contains("| learned |") && summary.contains("| random |"));
    assert_eq!(read_csv(&side(&d("eval.csv"), ".lyapunov.csv")).len(), 5);
    let curve = read_csv(&side(&d("eval.csv"), ".mmd.csv"));
    assert_eq!(curve.len(), 5 * 2 + 1);
    let probes = Dataset::load(&side(&d("eval.csv"), ".probes.eqfd"), ContainerKind::Dataset).unwrap();
    assert_eq!(probes.len(), 64);

    // lorenz ground truth needs three-dimensional data
    assert_eq!(code(&["eval", "--data", p(&d("ring.eqfd")), "--model", p(&m0), "--system", "lorenz", "--out", p(&d("e.csv"))]), 2);
}

#[test]
fn zero_field_curve_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("g.eqfd");
    ok(&["gen-data", "--system", "two-gaussians", "--n", "256", "--out", p(&data)]);
    let cfg = NetworkConfig { pe_levels: 2, hidden: vec![8] };
    let mut net = VelocityNetwork::new(2, &cfg, &mut eqflow::rng::seeded(0));
    net.zero_output_layer();
    let model = dir.path().join("zero.eqfv");
    let mut bytes = Vec::new();
    net.write_to(&mut bytes).unwrap();
    std::fs::write(&model, bytes).unwrap();
    let out = dir.path().join("eval.csv");
    ok(&["eval", "--data", p(&data), "--model", p(&model), "--baselines", "0", "--curve", "--n", "64", "--out", p(&out)]);
    let curve = read_csv(&side(&out, ".mmd.csv"));
    let zero_rows: Vec<_> = curve.iter().filter(|r| r[0] == "zero").collect();
    assert_eq!(zero_rows.len(), 10);
    assert!(zero_rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn recover_writes_rollout_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&[
        "gen-data", "--system", "gray-scott", "--preset", "life", "--n", "4", "--grid", "16", "--burn-in", "200",
        "--out", p(&d("life.eqfd")),
    ]);
    ok(&["train-score", "--data", p(&d("life.eqfd")), "--epochs", "1", "--batch", "2", "--out", p(&d("s.eqfs"))]);
    ok(&[
        "recover", "--score", p(&d("s.eqfs")), "--data", p(&d("life.eqfd")), "--preset", "life", "--burn-in", "200",
        "--steps", "6", "--every", "3", "--baselines", "2", "--out", p(&d("r.eqfr")),
    ]);
    let roll = Dataset::load(&d("r.eqfr"), ContainerKind::Rollout).unwrap();
    assert_eq!(roll.shape, SampleShape::Grid { c: 2, h: 16, w: 16 });
    assert_eq!(roll.len(), 3);
    let sims = read_csv(&side(&d("r.eqfr"), ".similarity.csv"));
    assert_eq!(sims.iter().filter(|r| r[0] == "rotation").count(), 2);
    assert_eq!(sims.iter().filter(|r| r[0] == "random-kernel").count(), 2);
    assert!(side(&d("r.eqfr"), ".summary.md").exists());

    ok(&[
        "recover", "--score", p(&d("s.eqfs")), "--data", p(&d("life.eqfd")), "--preset", "life", "--burn-in", "200",
        "--steps", "2", "--gamma", "-1", "--out", p(&d("neg.eqfr")),
    ]);
    let sims = read_csv(&side(&d("neg.eqfr"), ".similarity.csv"));
    assert_eq!(sims.len(), 1);
    assert_eq!(sims[0][1], "-1");
    // the score does not fit a grid of another size
    ok(&["gen-data", "--system", "gray-scott", "--preset", "life", "--n", "2", "--grid", "8", "--burn-in", "10", "--out", p(&d("small.eqfd"))]);
    assert_eq!(code(&["recover", "--score", p(&d("s.eqfs")), "--data", p(&d("small.eqfd")), "--preset", "life", "--out", p(&d("x.eqfr"))]), 2);
}

#[test]
fn alife_scenes_and_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let sprite = dir.path().join("dot.png");
    std::fs::write(&sprite, RgbaImage::disc(2, [250, 40, 40]).encode_png().unwrap()).unwrap();
    let out = dir.path().join("life.eqfr");
    ok(&[
        "alife", "--pattern", p(&sprite), "--canvas", "24", "--scenes", "4", "--patterns", "5", "--epochs", "1",
        "--steps", "4", "--every", "2", "--out", p(&out),
    ]);
    let roll = Dataset::load(&out, ContainerKind::Rollout).unwrap();
    assert_eq!(roll.shape, SampleShape::Grid { c: 3, h: 24, w: 24 });
    assert_eq!(roll.len(), 3);
    let scenes = Dataset::load(&side(&out, ".scenes.eqfd"), ContainerKind::Dataset).unwrap();
    assert_eq!(scenes.len(), 4);
    let placements = read_csv(&side(&out, ".placements.csv"));
    assert!(!placements.is_empty());
    let tracks = read_csv(&side(&out, ".tracks.csv"));
    let first: Vec<_> = tracks.iter().filter(|r| r[0] == "0").collect();
    let in_scene0 = placements.iter().filter(|r| r[0] == "0").count();
    // touching sprites merge into one region
    assert!(!first.is_empty() && first.len() <= in_scene0);
    assert_eq!(code(&["alife", "--pattern", p(&dir.path().join("nope.png")), "--out", p(&out)]), 2);
}
