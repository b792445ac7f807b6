use std::path::Path;

use eqflow::eval::{
    aligned_similarity, fingerprint, lyapunov_max, mean_std, mmd_rbf, pairwise_similarities, preservation_curve,
    DynamicsFingerprint, LyapunovConfig, MMD_SIGMA,
};
use eqflow::field::{rk4_step_batch, VelocityField};
use eqflow::flow::{train_flow, DivMode, FlowTrainConfig};
use eqflow::io::{write_atomic, ContainerKind, Dataset, SampleShape};
use eqflow::rng;
use eqflow::score::{train_denoiser, NoiseSchedule, Objective, ScoreModel, ScoreTrainConfig};
use eqflow::systems::alife::{make_alife_scene, RgbaImage};
use eqflow::systems::gray_scott::{evolve, generate_turing_dataset, gray_scott_preset, turing_run, TuringDatasetConfig};
use eqflow::systems::lorenz::{lorenz_dataset, LorenzDatasetConfig, LorenzField, LorenzParams};
use eqflow::systems::{sample_toy2d, StandardizedField, Standardizer, Toy2d};
use eqflow::training_free::{
    langevin_rollout, recover_turing_dynamics, ConvKernel, LangevinConfig, LinearOperator, SkewOperator,
};
use eqflow::velocity_net::{NetworkConfig, VelocityNetwork};
use ndarray::{s, Array2, ArrayView2};

use crate::cli::{Alife, Eval, GenData, Recover, Rollout, TrainFlow, TrainScore};
use crate::config::{csv, sidecar, tagged};
use crate::tracks::track_regions;
use crate::CliError;

pub struct Ctx {
    pub seed: u64,
    pub jobs: usize,
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path, ContainerKind::Dataset).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Whitening used everywhere a model meets data: per column for vectors,
/// per channel for grids.
fn standardize(ds: &Dataset) -> Result<(Standardizer, Array2<f64>), CliError> {
    let st = match ds.shape {
        SampleShape::Vector { .. } => Standardizer::fit(ds.data.view())?,
        SampleShape::Grid { c, .. } => Standardizer::fit_channels(ds.data.view(), c)?,
    };
    let z = st.apply(ds.data.view());
    Ok((st, z))
}

fn parse_widths(s: &str) -> Result<Vec<usize>, CliError> {
    let w: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| input(format!("bad width list '{s}'")))?;
    if w.is_empty() || w.contains(&0) {
        return Err(input(format!("bad width list '{s}'")));
    }
    Ok(w)
}

fn load_flow(path: &Path) -> Result<VelocityNetwork, CliError> {
    let bytes = std::fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    VelocityNetwork::read_from(&bytes[..]).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_score(path: &Path, alpha: f64) -> Result<ScoreModel, CliError> {
    ScoreModel::load(path, NoiseSchedule::default(), alpha).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn rows_of(frames: &[Array2<f64>], st: &Standardizer) -> Array2<f64> {
    let len = frames[0].len();
    let mut out = Array2::zeros((frames.len(), len));
    for (i, f) in frames.iter().enumerate() {
        let raw = st.invert(f.view());
        out.row_mut(i).iter_mut().zip(raw.iter()).for_each(|(o, v)| *o = *v);
    }
    out
}

fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Runs `f` over `items` on up to `jobs` threads, keeping the input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    let chunk = items.len().div_ceil(jobs).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub fn gen_data(a: &GenData, ctx: &Ctx) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(input("--n must be positive"));
    }
    let ds = match a.system.as_str() {
        "gray-scott" | "gray_scott" => {
            let name = a.preset.as_deref().ok_or_else(|| input("gray-scott needs --preset"))?;
            let p = gray_scott_preset(name)?;
            let cfg = TuringDatasetConfig { n: a.n, h: a.grid, w: a.grid, burn_in: a.burn_in, dt: 1.0, seed: ctx.seed };
            let data = generate_turing_dataset(&p, &cfg, ctx.jobs)?;
            Dataset::new(SampleShape::Grid { c: 2, h: a.grid, w: a.grid }, data)?
        }
        other if a.preset.is_some() => return Err(input(format!("--preset does not apply to {other}"))),
        "lorenz" => {
            let cfg = LorenzDatasetConfig { n: a.n, ..Default::default() };
            let data = lorenz_dataset(&LorenzParams::default(), &cfg, &mut rng::stream(ctx.seed, "lorenz", 0))?;
            Dataset::new(SampleShape::Vector { d: 3 }, data)?
        }
        other => {
            let data = sample_toy2d(Toy2d::parse(other)?, a.n, &mut rng::stream(ctx.seed, "toy2d", 0))?;
            Dataset::new(SampleShape::Vector { d: 2 }, data)?
        }
    };
    ds.save(&a.out, ContainerKind::Dataset)?;
    Ok(())
}

pub fn train_score(a: &TrainScore, ctx: &Ctx) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    let (_, z) = standardize(&ds)?;
    let mut cfg = match ds.shape {
        SampleShape::Vector { .. } => ScoreTrainConfig::default(),
        SampleShape::Grid { .. } => ScoreTrainConfig::for_grids(),
    };
    if let Some(o) = &a.objective {
        cfg.objective = Objective::parse(o)?;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.lr = a.lr;
    cfg.hidden = parse_widths(&a.hidden)?;
    cfg.pe_levels = a.pe_levels;
    cfg.seed = ctx.seed;
    let trained = train_denoiser(z.view(), ds.shape, &NoiseSchedule::default(), &cfg)?;
    let mut bytes = Vec::new();
    trained.model.write_to(&mut bytes)?;
    write_atomic(&a.out, &bytes)?;
    let rows = trained.loss_curve.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]);
    write_text(&sidecar(&a.out, ".loss.csv"), &csv(&["epoch", "loss"], rows))
}

fn parse_div(a: &TrainFlow) -> Result<DivMode, CliError> {
    let mode = match a.div.as_str() {
        "fd" => DivMode::Fd { h: a.h },
        "hutch" | "hutchinson" => DivMode::Hutchinson { k: a.k },
        "exact" => DivMode::Exact,
        other => return Err(input(format!("unknown divergence mode '{other}' (fd, hutch, exact)"))),
    };
    mode.validate()?;
    Ok(mode)
}

pub fn train_flow_cmd(a: &TrainFlow, ctx: &Ctx) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    if !matches!(ds.shape, SampleShape::Vector { .. }) {
        return Err(input("train-flow works on vector datasets"));
    }
    if a.seeds == 0 {
        return Err(input("--seeds must be at least 1"));
    }
    let (_, z) = standardize(&ds)?;
    let score = load_score(&a.score, a.alpha)?;
    let base = FlowTrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        div_mode: parse_div(a)?,
        alpha: a.alpha,
        net: NetworkConfig { pe_levels: a.pe_levels, hidden: parse_widths(&a.hidden)? },
        ..Default::default()
    };
    let mut losses = Vec::new();
    let mut reports = Vec::new();
    for i in 0..a.seeds as u64 {
        let seed = ctx.seed + i;
        let cfg = FlowTrainConfig { seed, ..base.clone() };
        let trained = train_flow(z.view(), &score, &cfg)?;
        if trained.trivial {
            eprintln!("warning: seed {seed} converged to a near-zero field (mean speed {:.3})", trained.mean_speed);
        }
        let path = if a.seeds == 1 { a.out.clone() } else { tagged(&a.out, &format!("seed{seed}")) };
        let mut bytes = Vec::new();
        trained.net.write_to(&mut bytes)?;
        write_atomic(&path, &bytes)?;
        for (e, l) in trained.loss_curve.iter().enumerate() {
            losses.push(vec![seed.to_string(), (e + 1).to_string(), l.to_string()]);
        }
        reports.push(vec![
            seed.to_string(),
            path.display().to_string(),
            trained.report.mean_sq_residual.to_string(),
            trained.mean_speed.to_string(),
            trained.trivial.to_string(),
        ]);
    }
    write_text(&sidecar(&a.out, ".loss.csv"), &csv(&["seed", "epoch", "loss"], losses))?;
    write_text(
        &sidecar(&a.out, ".report.csv"),
        &csv(&["seed", "model", "mean_sq_residual", "mean_speed", "trivial"], reports),
    )
}

pub fn rollout(a: &Rollout, _ctx: &Ctx) -> Result<(), CliError> {
    let net = load_flow(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let SampleShape::Vector { d } = ds.shape else {
        return Err(input("rollout works on vector datasets"));
    };
    if d != net.dim() {
        return Err(input(format!("model is {}-dimensional, data is {d}-dimensional", net.dim())));
    }
    if a.every == 0 || !(a.dt > 0.0) {
        return Err(input("--every and --dt must be positive"));
    }
    let (st, z) = standardize(&ds)?;
    let n = a.n.min(z.nrows());
    let start = z.slice(s![..n, ..]);
    let mut xs = start.to_owned();
    let mut frames = vec![xs.clone()];
    let mut curve = Vec::new();
    for step in 1..=a.steps {
        rk4_step_batch(&net, &mut xs, a.dt)?;
        if step % a.every == 0 || step == a.steps {
            frames.push(xs.clone());
            curve.push(vec![(step as f64 * a.dt).to_string(), mmd_rbf(start, xs.view(), MMD_SIGMA)?.to_string()]);
        }
    }
    let data = rows_of(&frames, &st);
    Dataset::new(SampleShape::Grid { c: 1, h: n, w: d }, data)?.save(&a.out, ContainerKind::Rollout)?;
    write_text(&sidecar(&a.out, ".mmd.csv"), &csv(&["t", "mmd"], curve))
}

fn parse_gammas(s: &str) -> Result<Vec<f64>, CliError> {
    match s {
        "both" => Ok(vec![1.0, -1.0]),
        "1" | "+1" => Ok(vec![1.0]),
        "-1" => Ok(vec![-1.0]),
        other => Err(input(format!("--gamma must be both, 1 or -1, got '{other}'"))),
    }
}

pub fn recover(a: &Recover, ctx: &Ctx) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    let SampleShape::Grid { c: 2, h, w } = ds.shape else {
        return Err(input("recover needs a two-channel grid dataset"));
    };
    let score = load_score(&a.score, a.alpha)?;
    if score.model.sample_len() != 2 * h * w {
        return Err(input("score model and dataset disagree on the grid size"));
    }
    let gammas = parse_gammas(&a.gamma)?;
    let p = gray_scott_preset(&a.preset)?;
    let (st, _) = standardize(&ds)?;
    // the run right after the dataset's last index is never part of it
    let cfg = TuringDatasetConfig { n: ds.len(), h, w, burn_in: a.burn_in, dt: 1.0, seed: ctx.seed };
    let initial = turing_run(&p, &cfg, ds.len())?;
    let mut truth = initial.clone();
    evolve(&mut truth, &p, 1.0, a.gs_steps)?;
    let to_row = |v: &[f64]| st.apply(ArrayView2::from_shape((1, v.len()), v).unwrap());
    let x0 = to_row(&initial.data);
    let target: Vec<f64> = (&to_row(&truth.data) - &x0).iter().copied().collect();

    let lcfg = LangevinConfig { eta: a.eta, dt: a.dt, steps: a.steps, seed: ctx.seed };
    let rec = recover_turing_dynamics(&score, x0.view(), &target, (h, w), &gammas, &lcfg, a.every)?;

    let mut rows: Vec<Vec<String>> = rec
        .candidates
        .iter()
        .map(|(g, sim)| vec!["rotation".into(), g.to_string(), sim.to_string(), ctx.seed.to_string()])
        .collect();
    let template = eqflow::eval::BaselineTemplate::Grid { c: 2, h, w };
    let idx: Vec<u64> = (0..a.baselines as u64).collect();
    let baseline_sims = par_map(&idx, ctx.jobs, |&k| -> Result<f64, CliError> {
        let b = eqflow::eval::make_baseline(
            eqflow::eval::BaselineKind::RandomKernel,
            &template,
            &mut rng::stream(ctx.seed, "baseline", k),
        )?;
        let eqflow::eval::Baseline::Kernel(op) = b else { unreachable!() };
        let frames = langevin_rollout(x0.view(), &op, &score, &lcfg, a.steps)?;
        let change: Vec<f64> = (frames.last().unwrap() - &x0).iter().copied().collect();
        Ok(eqflow::eval::cosine_similarity(&change, &target)?.abs())
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    for (k, sim) in baseline_sims.iter().enumerate() {
        rows.push(vec!["random-kernel".into(), k.to_string(), sim.to_string(), ctx.seed.to_string()]);
    }
    write_text(&sidecar(&a.out, ".similarity.csv"), &csv(&["method", "variant", "similarity", "seed"], rows))?;

    let best = rec.candidates.iter().cloned().fold((f64::NAN, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    let frame_change = {
        let f = &rec.frames;
        let steps: Vec<f64> = f.windows(2).map(|p| rel_change(p[1].as_slice().unwrap(), p[0].as_slice().unwrap())).collect();
        steps.iter().sum::<f64>() / steps.len().max(1) as f64
    };
    let (bm, bs) = mean_std(&baseline_sims);
    let mut summary = String::new();
    summary.push_str("| preset | training-free | random K | selected gamma |\n|---|---|---|---|\n");
    summary.push_str(&format!("| {} | {:.3} | {} | {} |\n", a.preset, best.1, fmt_ms(bm, bs, baseline_sims.len()), best.0));
    summary.push_str(&format!(
        "\nground-truth relative change over {} steps: {:.4e}\nrollout mean relative change per frame: {:.4e}\n",
        a.gs_steps,
        rel_change(&truth.data, &initial.data),
        frame_change
    ));
    write_text(&sidecar(&a.out, ".summary.md"), &summary)?;

    let data = rows_of(&rec.frames, &st);
    Dataset::new(SampleShape::Grid { c: 2, h, w }, data)?.save(&a.out, ContainerKind::Rollout)?;
    Ok(())
}

fn fmt_ms(m: f64, s: f64, n: usize) -> String {
    if n == 0 {
        "n/a".into()
    } else {
        format!("{m:.3} ± {s:.3}")
    }
}

enum Truth {
    Lorenz(LorenzField),
}

pub fn eval(a: &Eval, ctx: &Ctx) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    let SampleShape::Vector { d } = ds.shape else {
        return Err(input("eval works on vector datasets"));
    };
    let (st, z) = standardize(&ds)?;
    let models: Vec<(String, VelocityNetwork)> =
        a.models.iter().map(|p| Ok((stem(p), load_flow(p)?))).collect::<Result<_, CliError>>()?;
    if let Some((name, m)) = models.iter().find(|(_, m)| m.dim() != d) {
        return Err(input(format!("model {name} is {}-dimensional, data is {d}-dimensional", m.dim())));
    }
    let truth = match a.system.as_deref() {
        None => None,
        Some("lorenz") if d == 3 => Some(Truth::Lorenz(LorenzField::default())),
        Some(other) => return Err(input(format!("no analytic ground truth for '{other}' on {d}-dimensional data"))),
    };
    let n_probe = a.probes.min(z.nrows());
    if n_probe == 0 {
        return Err(input("--probes must be positive"));
    }
    let probes = z.slice(s![..n_probe, ..]);
    Dataset::new(SampleShape::Vector { d }, probes.to_owned())?
        .save(&sidecar(&a.out, ".probes.eqfd"), ContainerKind::Dataset)?;

    let template: NetworkConfig = models[0].1.config();
    let randoms: Vec<(String, VelocityNetwork)> = (0..a.baselines as u64)
        .map(|k| (format!("random-{k}"), VelocityNetwork::new(d, &template, &mut rng::stream(ctx.seed, "baseline", k))))
        .collect();

    let prints = |set: &[(String, VelocityNetwork)]| -> Result<Vec<DynamicsFingerprint>, CliError> {
        set.iter().map(|(_, m)| Ok(fingerprint(m, probes)?)).collect()
    };
    let fm = prints(&models)?;
    let fr = prints(&randoms)?;
    let seed = ctx.seed.to_string();
    let mut rows = Vec::new();
    let mut vs_truth = (Vec::new(), Vec::new());
    if let Some(Truth::Lorenz(lz)) = &truth {
        let ft = fingerprint(&StandardizedField { field: lz, standardizer: &st }, probes)?;
        for ((name, _), f) in models.iter().zip(&fm) {
            let sim = aligned_similarity(f, &ft)?;
            vs_truth.0.push(sim);
            rows.push(vec![name.clone(), "lorenz".into(), sim.to_string(), seed.clone()]);
        }
        for ((name, _), f) in randoms.iter().zip(&fr) {
            let sim = aligned_similarity(f, &ft)?;
            vs_truth.1.push(sim);
            rows.push(vec![name.clone(), "lorenz".into(), sim.to_string(), seed.clone()]);
        }
    }
    let mut pair_rows = |set: &[(String, VelocityNetwork)], f: &[DynamicsFingerprint]| -> Result<Vec<f64>, CliError> {
        let sims = pairwise_similarities(f)?;
        let mut k = 0;
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                rows.push(vec![set[i].0.clone(), set[j].0.clone(), sims[k].to_string(), seed.clone()]);
                k += 1;
            }
        }
        Ok(sims)
    };
    let pm = pair_rows(&models, &fm)?;
    let pr = pair_rows(&randoms, &fr)?;
    write_text(&a.out, &csv(&["a", "b", "similarity", "seed"], rows))?;

    let cell = |v: &[f64]| {
        let (m, s) = mean_std(v);
        fmt_ms(m, s, v.len())
    };
    let mut summary = String::from("| dynamics | vs ground truth | pairwise |\n|---|---|---|\n");
    summary.push_str(&format!("| learned | {} | {} |\n", cell(&vs_truth.0), cell(&pm)));
    summary.push_str(&format!("| random | {} | {} |\n", cell(&vs_truth.1), cell(&pr)));
    write_text(&sidecar(&a.out, ".summary.md"), &summary)?;

    let everything: Vec<(&str, &VelocityNetwork)> =
        models.iter().chain(&randoms).map(|(n, m)| (n.as_str(), m)).collect();
    if a.curve {
        if a.every == 0 || !(a.dt > 0.0) {
            return Err(input("--every and --dt must be positive"));
        }
        let n = a.n.min(z.nrows());
        let start = z.slice(s![..n, ..]);
        let mut out = Vec::new();
        let curves = par_map(&everything, ctx.jobs, |(_, m)| preservation_curve(*m, start, a.steps, a.dt, a.every));
        for ((name, _), c) in everything.iter().zip(curves) {
            for (t, v) in c? {
                out.push(vec![name.to_string(), t.to_string(), v.to_string()]);
            }
        }
        if z.nrows() >= 2 * n {
            let floor = mmd_rbf(start, z.slice(s![n..2 * n, ..]), MMD_SIGMA)?;
            out.push(vec!["noise-floor".into(), "0".into(), floor.to_string()]);
        }
        write_text(&sidecar(&a.out, ".mmd.csv"), &csv(&["field", "t", "mmd"], out))?;
    }
    if a.lyapunov {
        let cfg = LyapunovConfig { horizon_steps: a.horizon, ..Default::default() };
        let x0 = z.row(0).to_vec();
        let mut fields: Vec<(&str, &(dyn VelocityField + Sync))> =
            everything.iter().map(|(n, m)| (*n, *m as &(dyn VelocityField + Sync))).collect();
        let lz_std;
        if let Some(Truth::Lorenz(lz)) = &truth {
            lz_std = StandardizedField { field: lz, standardizer: &st };
            fields.push(("lorenz", &lz_std));
        }
        let lambdas = par_map(&fields, ctx.jobs, |(_, f)| lyapunov_max(*f, &x0, &cfg));
        let mut out = Vec::new();
        for ((name, _), l) in fields.iter().zip(lambdas) {
            out.push(vec![name.to_string(), l?.to_string()]);
        }
        write_text(&sidecar(&a.out, ".lyapunov.csv"), &csv(&["field", "lambda_max"], out))?;
    }
    Ok(())
}

pub fn alife(a: &Alife, ctx: &Ctx) -> Result<(), CliError> {
    let pattern = RgbaImage::load_png(&a.pattern).map_err(|e| input(format!("{}: {e}", a.pattern.display())))?;
    if a.scenes < 2 || a.canvas == 0 {
        return Err(input("need at least 2 scenes on a non-empty canvas"));
    }
    let (h, w) = (a.canvas, a.canvas);
    let mut data = Array2::zeros((a.scenes, 3 * h * w));
    let mut placements = Vec::new();
    for i in 0..a.scenes {
        let scene = make_alife_scene(&pattern, (h, w), a.patterns, a.attempts, &mut rng::stream(ctx.seed, "alife-scene", i as u64))?;
        data.row_mut(i).iter_mut().zip(scene.to_channels()).for_each(|(o, v)| *o = v);
        for p in &scene.placements {
            placements.push(vec![i.to_string(), p.y.to_string(), p.x.to_string(), p.angle.to_string(), p.cells.len().to_string()]);
        }
    }
    let ds = Dataset::new(SampleShape::Grid { c: 3, h, w }, data)?;
    ds.save(&sidecar(&a.out, ".scenes.eqfd"), ContainerKind::Dataset)?;
    write_text(&sidecar(&a.out, ".placements.csv"), &csv(&["scene", "y", "x", "angle", "cells"], placements))?;

    let (st, z) = standardize(&ds)?;
    let cfg = ScoreTrainConfig { epochs: a.epochs, seed: ctx.seed, ..ScoreTrainConfig::for_grids() };
    let trained = train_denoiser(z.view(), ds.shape, &NoiseSchedule::default(), &cfg)?;
    let mut bytes = Vec::new();
    trained.model.write_to(&mut bytes)?;
    write_atomic(&sidecar(&a.out, ".score.eqfs"), &bytes)?;
    let score = ScoreModel::new(trained.model, NoiseSchedule::default(), a.alpha)?;

    let kernel = ConvKernel::random_skew(3, a.radius, &mut rng::stream(ctx.seed, "alife-kernel", 0));
    let op = SkewOperator::new(LinearOperator::conv(kernel, h, w)?, 1.0)?;
    let lcfg = LangevinConfig { eta: a.eta, dt: a.dt, steps: a.steps, seed: ctx.seed };
    let frames = langevin_rollout(z.slice(s![..1, ..]), &op, &score, &lcfg, a.every)?;
    let raw = rows_of(&frames, &st);

    let tracks = track_regions(&raw, h, w, (a.canvas / 16).max(4) as f64);
    let rows = tracks.into_iter().map(|t| {
        vec![t.frame.to_string(), t.track.to_string(), format!("{:.3}", t.y), format!("{:.3}", t.x), t.cells.to_string()]
    });
    write_text(&sidecar(&a.out, ".tracks.csv"), &csv(&["frame", "track", "y", "x", "cells"], rows))?;
    Dataset::new(SampleShape::Grid { c: 3, h, w }, raw)?.save(&a.out, ContainerKind::Rollout)?;
    Ok(())
}
