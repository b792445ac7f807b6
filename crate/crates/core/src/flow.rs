//! Equilibrium-flow objective and its training loop.
//!
//! A field `v` leaves `p` stationary when `div v + v . grad log p = 0`
//! everywhere. The loss is the mean squared residual of that identity over
//! points drawn from the slightly noised data distribution.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::field::{divergence_exact, divergence_fd, divergence_hutchinson, VelocityField};
use crate::nn::{clip_global_norm, cosine_lr, Adam, MlpGrads};
use crate::rng::{self, Rng};
use crate::score::ScoreFn;
use crate::velocity_net::{BatchStats, NetworkConfig, VelocityNetwork, NORM_EPS};

/// How the divergence inside the residual is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DivMode {
    /// central differences along each axis
    Fd { h: f64 },
    /// `k` Gaussian probes, directional derivatives in forward mode
    Hutchinson { k: usize },
    /// Jacobian trace, one forward-mode tangent per axis
    Exact,
}

impl Default for DivMode {
    fn default() -> Self {
        DivMode::Fd { h: 1e-3 }
    }
}

impl DivMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DivMode::Fd { h } if !(h > 0.0) => Err(Error::invalid(format!("fd step must be positive, got {h}"))),
            DivMode::Hutchinson { k: 0 } => Err(Error::invalid("hutchinson mode needs k >= 1")),
            _ => Ok(()),
        }
    }
}

/// `div v + v . s` at one point.
pub fn residual(v: &[f64], div_v: f64, s: &[f64]) -> f64 {
    div_v + v.iter().zip(s).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub mean_sq_residual: f64,
    pub residuals: Vec<f64>,
}

impl ResidualReport {
    fn from_residuals(residuals: Vec<f64>) -> Self {
        let n = residuals.len().max(1) as f64;
        let mean_sq_residual = residuals.iter().map(|r| r * r).sum::<f64>() / n;
        Self { mean_sq_residual, residuals }
    }
}

/// Residuals of any field against a score at rows of `xs`.
pub fn field_residuals<F, S>(field: &F, score: &S, xs: ArrayView2<f64>, mode: DivMode, rng: &mut Rng) -> Result<ResidualReport>
where
    F: VelocityField + ?Sized,
    S: ScoreFn + ?Sized,
{
    mode.validate()?;
    if xs.ncols() != field.dim() || score.dim() != field.dim() {
        return Err(Error::shape(field.dim(), xs.ncols()));
    }
    let v = field.eval_batch(xs);
    let sc = score.score_batch(xs)?;
    let mut out = Vec::with_capacity(xs.nrows());
    for (i, row) in xs.outer_iter().enumerate() {
        let x = row.to_vec();
        let div = match mode {
            DivMode::Fd { h } => divergence_fd(field, &x, h)?,
            DivMode::Hutchinson { k } => divergence_hutchinson(field, &x, k, rng)?,
            DivMode::Exact => divergence_exact(field, &x),
        };
        out.push(residual(v.row(i).as_slice().unwrap(), div, sc.row(i).as_slice().unwrap()));
    }
    let report = ResidualReport::from_residuals(out);
    if !report.mean_sq_residual.is_finite() {
        return Err(Error::non_finite("residual"));
    }
    Ok(report)
}

/// Batch loss of a field (mean squared residual).
pub fn field_loss<F, S>(field: &F, score: &S, xs: ArrayView2<f64>, mode: DivMode, rng: &mut Rng) -> Result<f64>
where
    F: VelocityField + ?Sized,
    S: ScoreFn + ?Sized,
{
    Ok(field_residuals(field, score, xs, mode, rng)?.mean_sq_residual)
}

/// Result of one batch pass through the network in training mode.
pub struct BatchPass {
    pub loss: f64,
    pub residuals: Vec<f64>,
    pub stats: BatchStats,
    pub grads: Option<MlpGrads>,
}

/// Training-mode loss on one batch, normalizing with the batch's own statistics.
/// Running statistics are left untouched.
pub fn loss_batch<S: ScoreFn + ?Sized>(
    net: &VelocityNetwork,
    score: &S,
    xs: ArrayView2<f64>,
    mode: DivMode,
    rng: &mut Rng,
) -> Result<f64> {
    let sc = score.score_batch(xs)?;
    let probes = draw_probes(mode, xs.nrows(), net.dim(), rng);
    Ok(batch_pass(net, xs, sc.view(), mode, &probes, false)?.loss)
}

fn draw_probes(mode: DivMode, b: usize, d: usize, rng: &mut Rng) -> Vec<Array2<f64>> {
    match mode {
        DivMode::Hutchinson { k } => (0..k)
            .map(|_| Array2::from_shape_vec((b, d), rng::normal_vec(rng, b * d)).unwrap())
            .collect(),
        _ => Vec::new(),
    }
}

/// Loss and, optionally, parameter gradients for one batch.
///
/// With `raw` the pre-normalization output, `m` and `sd` its batch mean and
/// standard deviation, `v = (raw - m) / sd` and the divergence reduces to
/// `sum_i g_i / sd_i` where `g_i` is the directional derivative of `raw_i`.
pub fn batch_pass(
    net: &VelocityNetwork,
    xs: ArrayView2<f64>,
    sc: ArrayView2<f64>,
    mode: DivMode,
    probes: &[Array2<f64>],
    want_grad: bool,
) -> Result<BatchPass> {
    mode.validate()?;
    let b = xs.nrows();
    let d = net.dim();
    if xs.ncols() != d || sc.dim() != xs.dim() {
        return Err(Error::shape(d, xs.ncols()));
    }
    if b < 2 {
        return Err(Error::invalid(format!("batch needs at least 2 rows, got {b}")));
    }

    let (raw, g, trace, dirs) = match mode {
        DivMode::Fd { h } => {
            let mut all = Array2::zeros(((1 + 2 * d) * b, d));
            for blk in 0..(1 + 2 * d) {
                all.slice_mut(s![blk * b..(blk + 1) * b, ..]).assign(&xs);
            }
            for i in 0..d {
                let plus = (1 + 2 * i) * b;
                let minus = plus + b;
                all.slice_mut(s![plus..plus + b, i]).mapv_inplace(|v| v + h);
                all.slice_mut(s![minus..minus + b, i]).mapv_inplace(|v| v - h);
            }
            let (out, _, trace) = net.mlp.forward_traced(net.encode(all.view()), Vec::new());
            let mut g = Array2::zeros((b, d));
            for i in 0..d {
                let plus = (1 + 2 * i) * b;
                for r in 0..b {
                    g[[r, i]] = (out[[plus + r, i]] - out[[plus + b + r, i]]) / (2.0 * h);
                }
            }
            (out.slice(s![..b, ..]).to_owned(), g, trace, Vec::new())
        }
        DivMode::Exact | DivMode::Hutchinson { .. } => {
            let dirs: Vec<Array2<f64>> = if mode == DivMode::Exact {
                (0..d)
                    .map(|i| {
                        let mut e = Array2::zeros((b, d));
                        e.column_mut(i).fill(1.0);
                        e
                    })
                    .collect()
            } else {
                if probes.is_empty() || probes.iter().any(|p| p.dim() != (b, d)) {
                    return Err(Error::invalid("probe matrices must match the batch"));
                }
                probes.to_vec()
            };
            let tangents = dirs.iter().map(|z| net.encode_tangent(xs, z.view())).collect();
            let (out, t_out, trace) = net.mlp.forward_traced(net.encode(xs), tangents);
            let mut g = Array2::zeros((b, d));
            if mode == DivMode::Exact {
                for i in 0..d {
                    g.column_mut(i).assign(&t_out[i].column(i));
                }
            } else {
                let k = dirs.len() as f64;
                for (z, t) in dirs.iter().zip(&t_out) {
                    g.scaled_add(1.0 / k, &(z * t));
                }
            }
            (out, g, trace, dirs)
        }
    };

    let stats = BatchStats::of(raw.view())?;
    let sd = stats.std(NORM_EPS);
    let v = (&raw - &stats.mean) / &sd;
    let gs = &g / &sd;
    let residuals: Array1<f64> = gs.sum_axis(Axis(1)) + (&v * &sc).sum_axis(Axis(1));
    let loss = residuals.iter().map(|r| r * r).sum::<f64>() / b as f64;
    if !loss.is_finite() {
        return Err(Error::non_finite(format!("flow loss is {loss}")));
    }

    let grads = if want_grad {
        let gr = residuals.mapv(|r| 2.0 * r / b as f64).insert_axis(Axis(1));
        let dv = &sc * &gr;
        let dg = &gr / &sd;
        // sd also enters through the divergence term
        let dsd = -(&gs * &gr).sum_axis(Axis(0)) / &sd;
        let mean_dv = dv.mean_axis(Axis(0)).unwrap();
        let mean_dvv = (&dv * &v).mean_axis(Axis(0)).unwrap();
        let draw = ((&dv - &mean_dv) - &(&v * &mean_dvv)) / &sd + &(&v * &(dsd / b as f64));

        let grads = match mode {
            DivMode::Fd { h } => {
                let mut d_out = Array2::zeros(((1 + 2 * d) * b, d));
                d_out.slice_mut(s![..b, ..]).assign(&draw);
                for i in 0..d {
                    let plus = (1 + 2 * i) * b;
                    for r in 0..b {
                        let q = dg[[r, i]] / (2.0 * h);
                        d_out[[plus + r, i]] = q;
                        d_out[[plus + b + r, i]] = -q;
                    }
                }
                net.mlp.backward(&trace, d_out, Vec::new())
            }
            DivMode::Exact => {
                let d_t = (0..d)
                    .map(|i| {
                        let mut m = Array2::zeros((b, d));
                        m.column_mut(i).assign(&dg.column(i));
                        m
                    })
                    .collect();
                net.mlp.backward(&trace, draw, d_t)
            }
            DivMode::Hutchinson { .. } => {
                let k = dirs.len() as f64;
                let d_t = dirs.iter().map(|z| z * &dg / k).collect();
                net.mlp.backward(&trace, draw, d_t)
            }
        };
        Some(grads)
    } else {
        None
    };
    Ok(BatchPass { loss, residuals: residuals.to_vec(), stats, grads })
}

#[derive(Clone, Debug)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub div_mode: DivMode,
    /// working noise level of the diffused training points
    pub alpha: f64,
    pub seed: u64,
    pub net: NetworkConfig,
    pub grad_clip: Option<f64>,
    /// rows used for the closing residual report
    pub report_rows: usize,
    /// learning rate at the last epoch as a fraction of `lr` (cosine decay)
    pub lr_final_frac: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch: 256,
            lr: 1e-3,
            div_mode: DivMode::default(),
            alpha: 0.95,
            seed: 0,
            net: NetworkConfig::default(),
            grad_clip: Some(10.0),
            report_rows: 1024,
            lr_final_frac: 0.05,
        }
    }
}

/// Below this mean speed a trained field counts as the trivial solution.
pub const MIN_MEAN_SPEED: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct TrainedFlow {
    pub net: VelocityNetwork,
    /// mean batch loss per epoch
    pub loss_curve: Vec<f64>,
    pub report: ResidualReport,
    pub mean_speed: f64,
    /// set when the mean speed is under [`MIN_MEAN_SPEED`]
    pub trivial: bool,
}

/// `sqrt(alpha) x0 + sqrt(1 - alpha) eps` for every row.
pub fn diffuse_rows(x0: ArrayView2<f64>, alpha: f64, rng: &mut Rng) -> Array2<f64> {
    let (sa, sb) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    let mut out = x0.to_owned();
    out.mapv_inplace(|v| sa * v + sb * rng::normal(rng));
    out
}

/// Trains a velocity network against a fixed score teacher.
pub fn train_flow<S: ScoreFn + ?Sized>(samples: ArrayView2<f64>, score: &S, cfg: &FlowTrainConfig) -> Result<TrainedFlow> {
    cfg.div_mode.validate()?;
    let n = samples.nrows();
    let d = samples.ncols();
    if score.dim() != d {
        return Err(Error::shape(score.dim(), d));
    }
    if n < 2 || cfg.batch < 2 {
        return Err(Error::invalid("need at least 2 samples and a batch of at least 2"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {} outside (0, 1]", cfg.alpha)));
    }
    let mut net = VelocityNetwork::new(d, &cfg.net, &mut rng::stream(cfg.seed, "flow-init", 0));
    let mut opt = Adam::new(cfg.lr, &net.mlp.param_sizes());
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.lr = cosine_lr(cfg.lr, cfg.lr_final_frac, epoch as f64 / (cfg.epochs.max(2) - 1) as f64);
        let mut rng = rng::stream(cfg.seed, "flow-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x0 = samples.select(Axis(0), chunk);
            let xs = diffuse_rows(x0.view(), cfg.alpha, &mut rng);
            let sc = score.score_batch(xs.view())?;
            let probes = draw_probes(cfg.div_mode, xs.nrows(), d, &mut rng);
            let pass = batch_pass(&net, xs.view(), sc.view(), cfg.div_mode, &probes, true).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, batch {bi}")),
                other => other,
            })?;
            let mut grads = pass.grads.unwrap();
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads.slices_mut(), c);
            }
            opt.step(net.mlp.params_mut(), grads.slices());
            net.norm.update(&pass.stats);
            total += pass.loss;
            count += 1;
        }
        curve.push(total / count.max(1) as f64);
    }

    let mut rng = rng::stream(cfg.seed, "flow-report", 0);
    let rows = cfg.report_rows.min(n).max(2);
    let xs = diffuse_rows(samples.slice(s![..rows, ..]), cfg.alpha, &mut rng);
    let report = field_residuals(&net, score, xs.view(), cfg.div_mode, &mut rng)?;
    let v = net.infer(xs.view());
    let mean_speed = v.outer_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / rows as f64;
    Ok(TrainedFlow { net, loss_curve: curve, report, mean_speed, trivial: mean_speed < MIN_MEAN_SPEED })
}
