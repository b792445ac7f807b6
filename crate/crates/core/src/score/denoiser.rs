use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::schedule::{NoiseSchedule, ALPHA_FLOOR};
use crate::error::{Error, Result};
use crate::io::{read_f32s, read_f32s_native, read_u32, write_f32s, write_f32s_native, write_u32, SampleShape};
use crate::nn::conv::{ConvUNet, Geom};
use crate::nn::{clip_global_norm, cosine_lr, encoded_width, Adam, Linear, Mlp};
use crate::rng;
use crate::velocity_net::encode_rows;

const MAGIC: &[u8; 5] = b"EQFS1";
/// Rows per forward pass when evaluating the convolutional model.
const CONV_EVAL_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// predict the added noise
    Eps,
    /// predict `sqrt(alpha) eps - sqrt(1 - alpha) x0`
    V,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(Objective::Eps),
            "v" => Ok(Objective::V),
            other => Err(Error::Unknown { kind: "objective", name: other.into() }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Eps => "eps",
            Objective::V => "v",
        }
    }

    /// Regression target for one element.
    #[inline]
    pub fn target(self, x0: f64, eps: f64, alpha: f64) -> f64 {
        match self {
            Objective::Eps => eps,
            Objective::V => alpha.sqrt() * eps - (1.0 - alpha).sqrt() * x0,
        }
    }

    /// Clean-sample estimate from the model output.
    #[inline]
    pub fn x0_from_output(self, x_tau: f64, out: f64, alpha: f64) -> f64 {
        match self {
            Objective::Eps => (x_tau - (1.0 - alpha).sqrt() * out) / alpha.sqrt(),
            Objective::V => alpha.sqrt() * x_tau - (1.0 - alpha).sqrt() * out,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DenoiserNet {
    /// Dense stack over `[x, tau]` and its positional encoding.
    Dense { dim: usize, pe_levels: usize, mlp: Mlp },
    /// Periodic encoder-decoder over `c x h x w` grids, noise level as an extra channel.
    Conv { c: usize, h: usize, w: usize, unet: ConvUNet },
}

impl DenoiserNet {
    pub fn sample_len(&self) -> usize {
        match self {
            DenoiserNet::Dense { dim, .. } => *dim,
            DenoiserNet::Conv { c, h, w, .. } => c * h * w,
        }
    }

    pub fn shape(&self) -> SampleShape {
        match *self {
            DenoiserNet::Dense { dim, .. } => SampleShape::Vector { d: dim },
            DenoiserNet::Conv { c, h, w, .. } => SampleShape::Grid { c, h, w },
        }
    }

    fn dense_input(x: ArrayView2<f64>, taus: &[f64], pe_levels: usize) -> Array2<f64> {
        let d = x.ncols();
        let mut z = Array2::zeros((x.nrows(), d + 1));
        for (i, row) in x.outer_iter().enumerate() {
            for j in 0..d {
                z[[i, j]] = row[j];
            }
            z[[i, d]] = taus[i];
        }
        encode_rows(z.view(), pe_levels)
    }

    fn conv_input(x: ArrayView2<f64>, taus: &[f64], c: usize, hw: usize) -> Array2<f32> {
        let b = x.nrows();
        let mut out = Array2::<f32>::zeros((c + 1, b * hw));
        for (i, row) in x.outer_iter().enumerate() {
            for ch in 0..c {
                for p in 0..hw {
                    out[[ch, i * hw + p]] = row[ch * hw + p] as f32;
                }
            }
            for p in 0..hw {
                out[[c, i * hw + p]] = taus[i] as f32;
            }
        }
        out
    }

    fn conv_output(y: &Array2<f32>, b: usize, c: usize, hw: usize) -> Array2<f64> {
        let mut out = Array2::zeros((b, c * hw));
        for i in 0..b {
            for ch in 0..c {
                for p in 0..hw {
                    out[[i, ch * hw + p]] = y[[ch, i * hw + p]] as f64;
                }
            }
        }
        out
    }

    /// Raw network output for rows `x` at per-row noise levels `taus`.
    pub fn forward(&self, x: ArrayView2<f64>, taus: &[f64]) -> Array2<f64> {
        match self {
            DenoiserNet::Dense { pe_levels, mlp, .. } => mlp.forward(&Self::dense_input(x, taus, *pe_levels)),
            DenoiserNet::Conv { c, h, w, unet } => {
                let hw = h * w;
                let mut out = Array2::zeros((x.nrows(), c * hw));
                let mut start = 0;
                while start < x.nrows() {
                    let end = (start + CONV_EVAL_CHUNK).min(x.nrows());
                    let xb = x.slice(ndarray::s![start..end, ..]);
                    let g = Geom { batch: end - start, h: *h, w: *w };
                    let y = unet.forward(&Self::conv_input(xb, &taus[start..end], *c, hw), g);
                    out.slice_mut(ndarray::s![start..end, ..])
                        .assign(&Self::conv_output(&y, end - start, *c, hw));
                    start = end;
                }
                out
            }
        }
    }
}

/// A trained denoiser with its objective.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub objective: Objective,
    pub net: DenoiserNet,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct ScoreTrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub tau_min: f64,
    pub pe_levels: usize,
    pub hidden: Vec<usize>,
    pub conv_widths: [usize; 3],
    pub grad_clip: Option<f64>,
    /// learning rate at the last epoch as a fraction of `lr` (cosine decay)
    pub lr_final_frac: f64,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Eps,
            epochs: 2000,
            batch: 256,
            lr: 1e-3,
            seed: 0,
            tau_min: 0.01,
            pe_levels: 4,
            hidden: vec![128, 128, 128],
            conv_widths: [16, 32, 64],
            grad_clip: Some(10.0),
            lr_final_frac: 0.05,
        }
    }
}

impl ScoreTrainConfig {
    /// Desk-scale defaults for grid data.
    pub fn for_grids() -> Self {
        Self { objective: Objective::V, epochs: 50, batch: 8, ..Self::default() }
    }
}

/// Outcome of [`train_denoiser`].
#[derive(Clone, Debug)]
pub struct TrainedDenoiser {
    pub model: DenoiserModel,
    /// mean training loss per epoch
    pub loss_curve: Vec<f64>,
}

/// Trains a denoiser on `samples` (one per row) with randomly drawn noise levels.
pub fn train_denoiser(
    samples: ArrayView2<f64>,
    shape: SampleShape,
    schedule: &NoiseSchedule,
    cfg: &ScoreTrainConfig,
) -> Result<TrainedDenoiser> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    if samples.ncols() != shape.len() {
        return Err(Error::shape(shape.len(), samples.ncols()));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("batch and epochs must be positive"));
    }
    if !(cfg.tau_min >= 0.0 && cfg.tau_min < 1.0) {
        return Err(Error::invalid("tau_min must lie in [0, 1)"));
    }
    let mut init_rng = rng::stream(cfg.seed, "score-init", 0);
    let net = match shape {
        SampleShape::Vector { d } => {
            let mut widths = vec![encoded_width(d + 1, cfg.pe_levels)];
            widths.extend(&cfg.hidden);
            widths.push(d);
            DenoiserNet::Dense { dim: d, pe_levels: cfg.pe_levels, mlp: Mlp::new(&widths, &mut init_rng) }
        }
        SampleShape::Grid { c, h, w } => {
            let unet = ConvUNet::new(c + 1, c, cfg.conv_widths, &mut init_rng);
            if !unet.check_geometry(Geom { batch: 1, h, w }) {
                return Err(Error::invalid(format!("grid {h}x{w} must be divisible by 4")));
            }
            DenoiserNet::Conv { c, h, w, unet }
        }
    };
    let mut model = DenoiserModel { objective: cfg.objective, net, final_loss: f64::NAN };
    let mut trainer = Trainer::new(&model.net, cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let len = shape.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / (cfg.epochs.max(2) - 1) as f64;
        trainer.set_lr(cosine_lr(cfg.lr, cfg.lr_final_frac, progress));
        let mut rng = rng::stream(cfg.seed, "score-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let b = chunk.len();
            let mut x_tau = Array2::zeros((b, len));
            let mut target = Array2::zeros((b, len));
            let mut taus = vec![0.0; b];
            for (r, &idx) in chunk.iter().enumerate() {
                let tau = rng.random_range(cfg.tau_min..=1.0);
                let alpha = schedule.alpha(tau)?;
                let (sa, sb) = (alpha.sqrt(), (1.0 - alpha).sqrt());
                taus[r] = tau;
                for j in 0..len {
                    let x0 = samples[[idx, j]];
                    let eps = rng::normal(&mut rng);
                    x_tau[[r, j]] = sa * x0 + sb * eps;
                    target[[r, j]] = cfg.objective.target(x0, eps, alpha);
                }
            }
            let loss = trainer.step(&mut model.net, x_tau.view(), &taus, target.view(), cfg.grad_clip);
            if !loss.is_finite() {
                return Err(Error::non_finite(format!(
                    "denoiser loss became {loss} at epoch {epoch}, batch {bi}"
                )));
            }
            total += loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    model.final_loss = *curve.last().unwrap();
    Ok(TrainedDenoiser { model, loss_curve: curve })
}

enum Trainer {
    Dense(Adam<f64>),
    Conv(Adam<f32>),
}

impl Trainer {
    fn new(net: &DenoiserNet, lr: f64) -> Self {
        match net {
            DenoiserNet::Dense { mlp, .. } => Trainer::Dense(Adam::new(lr, &mlp.param_sizes())),
            DenoiserNet::Conv { unet, .. } => Trainer::Conv(Adam::new(lr as f32, &unet.param_sizes())),
        }
    }

    fn set_lr(&mut self, lr: f64) {
        match self {
            Trainer::Dense(o) => o.lr = lr,
            Trainer::Conv(o) => o.lr = lr as f32,
        }
    }

    /// One optimizer step on the mean squared error; returns the loss before the step.
    fn step(
        &mut self,
        net: &mut DenoiserNet,
        x_tau: ArrayView2<f64>,
        taus: &[f64],
        target: ArrayView2<f64>,
        clip: Option<f64>,
    ) -> f64 {
        let numel = target.len() as f64;
        match (self, net) {
            (Trainer::Dense(opt), DenoiserNet::Dense { pe_levels, mlp, .. }) => {
                let input = DenoiserNet::dense_input(x_tau, taus, *pe_levels);
                let (out, _, trace) = mlp.forward_traced(input, vec![]);
                let diff = &out - &target;
                let loss = diff.iter().map(|v| v * v).sum::<f64>() / numel;
                let mut grads = mlp.backward(&trace, diff * (2.0 / numel), vec![]);
                if let Some(c) = clip {
                    clip_global_norm(&mut grads.slices_mut(), c);
                }
                opt.step(mlp.params_mut(), grads.slices());
                loss
            }
            (Trainer::Conv(opt), DenoiserNet::Conv { c, h, w, unet }) => {
                let hw = *h * *w;
                let b = x_tau.nrows();
                let g = Geom { batch: b, h: *h, w: *w };
                let input = DenoiserNet::conv_input(x_tau, taus, *c, hw);
                let (out, cache) = unet.forward_cached(&input, g);
                let mut d_out = Array2::<f32>::zeros(out.raw_dim());
                let mut loss = 0.0f64;
                for i in 0..b {
                    for ch in 0..*c {
                        for p in 0..hw {
                            let diff = out[[ch, i * hw + p]] as f64 - target[[i, ch * hw + p]];
                            loss += diff * diff;
                            d_out[[ch, i * hw + p]] = (2.0 * diff / numel) as f32;
                        }
                    }
                }
                let mut grads = unet.backward(&cache, &d_out);
                if let Some(cl) = clip {
                    let mut views: Vec<&mut [f32]> = grads.iter_mut().map(|g| g.as_mut_slice()).collect();
                    clip_global_norm(&mut views, cl as f32);
                }
                opt.step(unet.params_mut(), grads.iter().map(|g| g.as_slice()).collect());
                loss / numel
            }
            _ => unreachable!("trainer and network kinds always match"),
        }
    }
}

impl DenoiserModel {
    pub fn sample_len(&self) -> usize {
        self.net.sample_len()
    }

    /// Raw model output (noise or velocity estimate) at a common noise level.
    pub fn predict(&self, x_tau: ArrayView2<f64>, tau: f64) -> Array2<f64> {
        let taus = vec![tau; x_tau.nrows()];
        self.net.forward(x_tau, &taus)
    }

    /// Clean-sample estimate for rows of `x_tau`.
    pub fn predict_x0(&self, schedule: &NoiseSchedule, x_tau: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
        let alpha = schedule.alpha(tau)?;
        self.predict_x0_at(x_tau, tau, alpha)
    }

    /// Like [`DenoiserModel::predict_x0`] with the noise level given both ways.
    pub fn predict_x0_at(&self, x_tau: ArrayView2<f64>, tau: f64, alpha: f64) -> Result<Array2<f64>> {
        if alpha < ALPHA_FLOOR {
            return Err(Error::invalid(format!("alpha {alpha} is below the schedule floor")));
        }
        if x_tau.ncols() != self.sample_len() {
            return Err(Error::shape(self.sample_len(), x_tau.ncols()));
        }
        let out = self.predict(x_tau, tau);
        let mut x0 = out;
        ndarray::Zip::from(&mut x0)
            .and(&x_tau)
            .for_each(|o, &x| *o = self.objective.x0_from_output(x, *o, alpha));
        Ok(x0)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, matches!(self.objective, Objective::V) as u32)?;
        w.write_all(&(self.final_loss as f32).to_le_bytes())?;
        match &self.net {
            DenoiserNet::Dense { dim, pe_levels, mlp } => {
                write_u32(&mut w, 0)?;
                write_u32(&mut w, *dim as u32)?;
                write_u32(&mut w, *pe_levels as u32)?;
                let widths = mlp.widths();
                write_u32(&mut w, widths.len() as u32)?;
                for &x in &widths {
                    write_u32(&mut w, x as u32)?;
                }
                for p in mlp.params() {
                    write_f32s(&mut w, p)?;
                }
            }
            DenoiserNet::Conv { c, h, w: width, unet } => {
                write_u32(&mut w, 1)?;
                for v in [*c, *h, *width, unet.widths[0], unet.widths[1], unet.widths[2]] {
                    write_u32(&mut w, v as u32)?;
                }
                for p in unet.params() {
                    write_f32s_native(&mut w, p)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a score model file (bad magic)".into()));
        }
        let objective = match read_u32(&mut r)? {
            0 => Objective::Eps,
            1 => Objective::V,
            t => return Err(Error::Format(format!("unknown objective tag {t}"))),
        };
        let final_loss = read_f32s(&mut r, 1)?[0];
        let net = match read_u32(&mut r)? {
            0 => {
                let dim = read_u32(&mut r)? as usize;
                let pe_levels = read_u32(&mut r)? as usize;
                let nw = read_u32(&mut r)? as usize;
                if !(2..=64).contains(&nw) {
                    return Err(Error::Format(format!("implausible layer count {nw}")));
                }
                let widths: Vec<usize> =
                    (0..nw).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
                if widths[0] != encoded_width(dim + 1, pe_levels) || widths[nw - 1] != dim {
                    return Err(Error::Format("layer widths inconsistent with dimension".into()));
                }
                let mut layers = Vec::new();
                for win in widths.windows(2) {
                    let weight = read_f32s(&mut r, win[0] * win[1])?;
                    let bias = read_f32s(&mut r, win[1])?;
                    layers.push(Linear {
                        weight: Array2::from_shape_vec((win[0], win[1]), weight).unwrap(),
                        bias: Array1::from(bias),
                    });
                }
                DenoiserNet::Dense { dim, pe_levels, mlp: Mlp { layers } }
            }
            1 => {
                let mut v = [0usize; 6];
                for x in &mut v {
                    *x = read_u32(&mut r)? as usize;
                }
                let [c, h, w, a, b, cc] = v;
                if c == 0 || h % 4 != 0 || w % 4 != 0 || c * h * w > (1 << 24) {
                    return Err(Error::Format("implausible grid header".into()));
                }
                let mut unet = ConvUNet::new(c + 1, c, [a, b, cc], &mut rng::seeded(0));
                for p in unet.params_mut() {
                    let vals = read_f32s_native(&mut r, p.len())?;
                    p.copy_from_slice(&vals);
                }
                DenoiserNet::Conv { c, h, w, unet }
            }
            t => return Err(Error::Format(format!("unknown architecture tag {t}"))),
        };
        Ok(Self { objective, net, final_loss })
    }
}
