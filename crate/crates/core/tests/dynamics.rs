use eqflow::eval::cosine_similarity;
use eqflow::io::SampleShape;
use eqflow::rng;
use eqflow::score::{train_denoiser, GaussianScore, NoiseSchedule, Objective, ScoreFn, ScoreModel, ScoreTrainConfig};
use eqflow::systems::gray_scott::{evolve, gray_scott_preset, turing_run, TuringDatasetConfig, PRESETS};
use eqflow::training_free::{langevin_rollout, LangevinConfig, SkewOperator};
use ndarray::{arr2, Array2};

fn gaussian_rows(n: usize, var: [f64; 2], seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((n, 2), |(_, j)| var[j].sqrt() * rng::normal(&mut r))
}

#[test]
fn skew_langevin_keeps_gaussian_covariance() {
    let var = [2.0, 0.5];
    let p = GaussianScore::new(vec![0.0, 0.0], var.to_vec()).unwrap();
    let op = SkewOperator::dense(arr2(&[[0.0, 1.0], [-1.0, 0.0]])).unwrap();
    let x0 = gaussian_rows(20_000, var, 1);
    let cfg = LangevinConfig { eta: 1.0, dt: 0.01, steps: 500, seed: 2 };
    let end = langevin_rollout(x0.view(), &op, &p, &cfg, 500).unwrap().pop().unwrap();
    let n = end.nrows() as f64;
    for j in 0..2 {
        let col = end.column(j);
        let v = col.dot(&col) / n;
        assert!((v / var[j] - 1.0).abs() < 0.05, "var[{j}] = {v}");
    }
    let cross = end.column(0).dot(&end.column(1)) / n;
    assert!(cross.abs() < 0.05, "{cross}");
}

/// Mean winding angle of the particles over a rollout.
fn winding(gamma: f64) -> f64 {
    let p = GaussianScore::standard(2);
    let op = SkewOperator::dense(arr2(&[[0.0, gamma], [-gamma, 0.0]])).unwrap();
    let x0 = gaussian_rows(500, [1.0, 1.0], 3);
    let cfg = LangevinConfig { eta: 0.1, dt: 0.01, steps: 200, seed: 4 };
    let frames = langevin_rollout(x0.view(), &op, &p, &cfg, 1).unwrap();
    let mut total = 0.0;
    for w in frames.windows(2) {
        for (a, b) in w[0].outer_iter().zip(w[1].outer_iter()) {
            let d = b[1].atan2(b[0]) - a[1].atan2(a[0]);
            total += (d + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        }
    }
    total / 500.0
}

#[test]
fn rotation_sense_follows_gamma() {
    let s = GaussianScore::standard(2).score_batch(arr2(&[[1.0, 2.0]]).view()).unwrap();
    let op = SkewOperator::dense(arr2(&[[0.0, 1.0], [-1.0, 0.0]])).unwrap();
    let v = eqflow::training_free::v_skew(&op, s.view()).unwrap();
    // angular momentum x v_y - y v_x = gamma |x|^2
    assert!((1.0 * v[[0, 1]] - 2.0 * v[[0, 0]] - 5.0).abs() < 1e-12);
    let ccw = winding(1.0);
    let cw = winding(-1.0);
    assert!(ccw > 1.0 && cw < -1.0, "{ccw} {cw}");
}

#[test]
fn gray_scott_stays_bounded() {
    for name in PRESETS {
        let p = gray_scott_preset(name).unwrap();
        let cfg = TuringDatasetConfig { n: 1, seed: 5, burn_in: 0, ..Default::default() };
        let mut s = turing_run(&p, &cfg, 0).unwrap();
        evolve(&mut s, &p, 1.0, 10_000).unwrap();
        let (lo, hi) = s.data.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!(lo >= -1e-9 && hi <= 1.0 + 1e-9, "{name}: {lo} {hi}");
    }
}

fn trained_score(objective: Objective) -> ScoreModel {
    let data = gaussian_rows(4096, [1.0, 1.0], 6);
    let schedule = NoiseSchedule::default();
    let cfg = ScoreTrainConfig { objective, epochs: 60, hidden: vec![64; 3], seed: 7, ..Default::default() };
    let model = train_denoiser(data.view(), SampleShape::Vector { d: 2 }, &schedule, &cfg).unwrap().model;
    ScoreModel::new(model, schedule, 0.95).unwrap()
}

#[test]
fn both_objectives_point_toward_the_mode() {
    let probes = gaussian_rows(500, [1.0, 1.0], 8);
    let truth: Vec<f64> = probes.iter().map(|v| -v).collect();
    for objective in [Objective::Eps, Objective::V] {
        let s = trained_score(objective).score_batch(probes.view()).unwrap();
        let cos = cosine_similarity(s.as_slice().unwrap(), &truth).unwrap();
        assert!(cos >= 0.95, "{objective:?}: {cos}");
    }
}
