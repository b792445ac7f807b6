//! The learned velocity field: positional encoding, a smooth dense stack and a
//! normalization-only output layer.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::io::{read_f32s, read_u32, write_f32s, write_u32};
use crate::nn::{encoded_width, positional_encode_into, positional_tangent_into, Linear, Mlp};
use crate::rng::Rng;

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;
const MAGIC: &[u8; 5] = b"EQFV1";

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub pe_levels: usize,
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { pe_levels: 4, hidden: vec![128, 128, 128] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-component normalization without a learnable scale or shift.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputNorm {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Mean and biased variance of one mini-batch of raw outputs.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

impl BatchStats {
    pub fn of(raw: ArrayView2<f64>) -> Result<Self> {
        let n = raw.nrows();
        if n < 2 {
            return Err(Error::invalid(format!("batch statistics need at least 2 rows, got {n}")));
        }
        let mean = raw.mean_axis(Axis(0)).unwrap();
        let var = raw.var_axis(Axis(0), 0.0);
        Ok(Self { mean, var, count: n })
    }

    pub fn std(&self, eps: f64) -> Array1<f64> {
        self.var.mapv(|v| (v + eps).sqrt())
    }
}

impl OutputNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: NORM_EPS,
            momentum: NORM_MOMENTUM,
        }
    }

    pub fn update(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let unbias = stats.count as f64 / (stats.count as f64 - 1.0);
        for i in 0..self.running_mean.len() {
            self.running_mean[i] = (1.0 - m) * self.running_mean[i] + m * stats.mean[i];
            self.running_var[i] = (1.0 - m) * self.running_var[i] + m * stats.var[i] * unbias;
        }
    }

    pub fn apply(&self, raw: &mut Array2<f64>, mean: &[f64], var: &[f64]) {
        for mut row in raw.outer_iter_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[i]) / (var[i] + self.eps).sqrt();
            }
        }
    }

    fn inv_std(&self) -> Vec<f64> {
        self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
    }
}

/// Dense velocity network `v(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityNetwork {
    dim: usize,
    pe_levels: usize,
    pub mlp: Mlp,
    pub norm: OutputNorm,
}

impl VelocityNetwork {
    pub fn new(dim: usize, cfg: &NetworkConfig, rng: &mut Rng) -> Self {
        let mut widths = vec![encoded_width(dim, cfg.pe_levels)];
        widths.extend(&cfg.hidden);
        widths.push(dim);
        Self {
            dim,
            pe_levels: cfg.pe_levels,
            mlp: Mlp::new(&widths, rng),
            norm: OutputNorm::new(dim),
        }
    }

    pub fn pe_levels(&self) -> usize {
        self.pe_levels
    }

    pub fn config(&self) -> NetworkConfig {
        let w = self.mlp.widths();
        NetworkConfig { pe_levels: self.pe_levels, hidden: w[1..w.len() - 1].to_vec() }
    }

    /// `[x, encode(x)]` for every row.
    pub fn encode(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        encode_rows(xs, self.pe_levels)
    }

    /// Tangent of the encoded input for per-row directions `dirs`.
    pub fn encode_tangent(&self, xs: ArrayView2<f64>, dirs: ArrayView2<f64>) -> Array2<f64> {
        encode_tangent_rows(xs, dirs, self.pe_levels)
    }

    /// Network output before normalization.
    pub fn raw(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        self.mlp.forward(&self.encode(xs))
    }

    /// Forward pass. In training mode the batch statistics normalize the output
    /// and update the running averages; inference uses the running averages.
    pub fn eval_velocity(&mut self, xs: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        self.check_width(xs)?;
        match mode {
            Mode::Infer => Ok(self.infer(xs)),
            Mode::Train => {
                let mut raw = self.raw(xs);
                let stats = BatchStats::of(raw.view())?;
                self.norm.update(&stats);
                self.norm.apply(&mut raw, stats.mean.as_slice().unwrap(), stats.var.as_slice().unwrap());
                Ok(raw)
            }
        }
    }

    pub fn infer(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        let mut raw = self.raw(xs);
        self.norm.apply(&mut raw, &self.norm.running_mean, &self.norm.running_var);
        raw
    }

    fn check_width(&self, xs: ArrayView2<f64>) -> Result<()> {
        if xs.ncols() != self.dim {
            return Err(Error::shape(self.dim, xs.ncols()));
        }
        Ok(())
    }

    /// Sets the final layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.mlp.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    /// The network computing `-v`: final layer and running mean negated.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        let last = out.mlp.layers.last_mut().unwrap();
        last.weight.mapv_inplace(|v| -v);
        last.bias.mapv_inplace(|v| -v);
        out.norm.running_mean.iter_mut().for_each(|v| *v = -*v);
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, self.dim as u32)?;
        write_u32(&mut w, self.pe_levels as u32)?;
        let widths = self.mlp.widths();
        write_u32(&mut w, widths.len() as u32)?;
        for &x in &widths {
            write_u32(&mut w, x as u32)?;
        }
        for p in self.mlp.params() {
            write_f32s(&mut w, p)?;
        }
        write_f32s(&mut w, &self.norm.running_mean)?;
        write_f32s(&mut w, &self.norm.running_var)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a velocity network file (bad magic)".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        let pe_levels = read_u32(&mut r)? as usize;
        let nw = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&nw) {
            return Err(Error::Format(format!("implausible layer count {nw}")));
        }
        let widths: Vec<usize> = (0..nw).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<Result<_>>()?;
        if widths[0] != encoded_width(dim, pe_levels) || widths[nw - 1] != dim {
            return Err(Error::Format("layer widths inconsistent with dimension".into()));
        }
        let mut layers = Vec::with_capacity(nw - 1);
        for win in widths.windows(2) {
            let weight = read_f32s(&mut r, win[0] * win[1])?;
            let bias = read_f32s(&mut r, win[1])?;
            layers.push(Linear {
                weight: Array2::from_shape_vec((win[0], win[1]), weight).unwrap(),
                bias: Array1::from(bias),
            });
        }
        let mut norm = OutputNorm::new(dim);
        norm.running_mean = read_f32s(&mut r, dim)?;
        norm.running_var = read_f32s(&mut r, dim)?;
        Ok(Self { dim, pe_levels, mlp: Mlp { layers }, norm })
    }
}

pub(crate) fn encode_rows(xs: ArrayView2<f64>, levels: usize) -> Array2<f64> {
    let d = xs.ncols();
    let width = encoded_width(d, levels);
    let mut out = Array2::zeros((xs.nrows(), width));
    let mut x = vec![0.0; d];
    for (row, mut dst) in xs.outer_iter().zip(out.outer_iter_mut()) {
        x.iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b);
        let dst = dst.as_slice_mut().unwrap();
        dst[..d].copy_from_slice(&x);
        positional_encode_into(&x, levels, &mut dst[d..]);
    }
    out
}

pub(crate) fn encode_tangent_rows(xs: ArrayView2<f64>, dirs: ArrayView2<f64>, levels: usize) -> Array2<f64> {
    let d = xs.ncols();
    let width = encoded_width(d, levels);
    let mut out = Array2::zeros((xs.nrows(), width));
    let mut x = vec![0.0; d];
    let mut t = vec![0.0; d];
    for ((row, dir), mut dst) in xs.outer_iter().zip(dirs.outer_iter()).zip(out.outer_iter_mut()) {
        x.iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b);
        t.iter_mut().zip(dir.iter()).for_each(|(a, b)| *a = *b);
        let dst = dst.as_slice_mut().unwrap();
        dst[..d].copy_from_slice(&t);
        positional_tangent_into(&x, &t, levels, &mut dst[d..]);
    }
    out
}

impl VelocityField for VelocityNetwork {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let xs = ArrayView2::from_shape((1, self.dim), x).unwrap();
        let v = self.infer(xs);
        out.copy_from_slice(v.as_slice().unwrap());
    }

    fn jvp(&self, x: &[f64], dir: &[f64], out: &mut [f64]) {
        let xs = ArrayView2::from_shape((1, self.dim), x).unwrap();
        let ds = ArrayView2::from_shape((1, self.dim), dir).unwrap();
        let (_, t) = self.mlp.forward_tangent(&self.encode(xs), &[self.encode_tangent(xs, ds)]);
        let inv = self.norm.inv_std();
        for i in 0..self.dim {
            out[i] = t[0][[0, i]] * inv[i];
        }
    }

    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        self.infer(xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{divergence_exact, divergence_fd};
    use crate::rng::seeded;
    use ndarray::arr2;
    use rand::Rng as _;

    fn small(seed: u64) -> VelocityNetwork {
        VelocityNetwork::new(2, &NetworkConfig { pe_levels: 2, hidden: vec![16, 16] }, &mut seeded(seed))
    }

    #[test]
    fn first_layer_width_includes_encoding() {
        let net = VelocityNetwork::new(2, &NetworkConfig::default(), &mut seeded(0));
        assert_eq!(net.mlp.input_width(), 22);
        let net3 = VelocityNetwork::new(3, &NetworkConfig { pe_levels: 4, hidden: vec![8] }, &mut seeded(0));
        assert_eq!(net3.mlp.input_width(), 3 + 2 * 3 * 5);
    }

    #[test]
    fn zeroed_output_layer_gives_zero_velocity() {
        let mut net = small(1);
        net.zero_output_layer();
        let xs = arr2(&[[0.3, -0.2], [1.0, 2.0], [-1.5, 0.5]]);
        let v = net.eval_velocity(xs.view(), Mode::Train).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        assert!(net.infer(xs.view()).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalization_arithmetic() {
        let norm = OutputNorm::new(2);
        let mut raw = arr2(&[[1.0, 0.0], [3.0, 0.0]]);
        let stats = BatchStats::of(raw.view()).unwrap();
        norm.apply(&mut raw, stats.mean.as_slice().unwrap(), stats.var.as_slice().unwrap());
        assert!((raw[[0, 0]] + 1.0).abs() < 1e-5 && (raw[[1, 0]] - 1.0).abs() < 1e-5);
        assert_eq!(raw[[0, 1]], 0.0);
        assert_eq!(raw[[1, 1]], 0.0);
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let mut net = small(2);
        let err = net.eval_velocity(arr2(&[[0.1, 0.2]]).view(), Mode::Train);
        assert!(err.is_err());
        assert!(net.eval_velocity(arr2(&[[0.1, 0.2]]).view(), Mode::Infer).is_ok());
    }

    #[test]
    fn train_mode_batches_are_whitened() {
        let mut net = small(3);
        // a fresh stack has tiny raw spread; scale it so the batch is far from the eps guard
        net.mlp.layers.last_mut().unwrap().weight *= 100.0;
        let mut rng = seeded(4);
        let xs = Array2::from_shape_fn((256, 2), |_| rng.random_range(-2.0..2.0));
        assert!(net.raw(xs.view()).var_axis(ndarray::Axis(0), 0.0).iter().all(|&v| v > 0.1));
        let v = net.eval_velocity(xs.view(), Mode::Train).unwrap();
        for c in 0..2 {
            let col = v.column(c);
            let mean = col.mean().unwrap();
            let var = col.var(0.0);
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-3, "{var}");
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let net = small(5);
        let x = [0.4, -0.9];
        assert_eq!(net.eval_vec(&x), net.eval_vec(&x));
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut net = small(6);
        let xs = arr2(&[[0.0, 0.0], [1.0, 1.0], [2.0, -1.0]]);
        let raw = net.raw(xs.view());
        let stats = BatchStats::of(raw.view()).unwrap();
        net.eval_velocity(xs.view(), Mode::Train).unwrap();
        for i in 0..2 {
            assert!((net.norm.running_mean[i] - 0.1 * stats.mean[i]).abs() < 1e-12);
            let unbiased = stats.var[i] * 3.0 / 2.0;
            assert!((net.norm.running_var[i] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_mode_divergence_matches_central_differences() {
        let net = small(7);
        let x = [0.3, -0.6];
        let exact = divergence_exact(&net, &x);
        let e2 = (divergence_fd(&net, &x, 1e-2).unwrap() - exact).abs();
        let e3 = (divergence_fd(&net, &x, 1e-3).unwrap() - exact).abs();
        // O(h^2): a tenfold smaller step shrinks the error about a hundredfold
        assert!(e2 > 0.0 && e3 < e2 / 30.0, "{e2} {e3}");
        assert!(e3 < 1e-4);
    }

    #[test]
    fn negated_network_negates_outputs() {
        let mut net = small(8);
        let xs = arr2(&[[0.0, 0.5], [1.0, -1.0], [0.2, 0.2]]);
        net.eval_velocity(xs.view(), Mode::Train).unwrap();
        let neg = net.negated();
        assert_eq!(neg.infer(xs.view()), -net.infer(xs.view()));
    }

    #[test]
    fn binary_round_trip() {
        let net = small(9);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"EQFV1");
        let back = VelocityNetwork::read_from(&buf[..]).unwrap();
        let x = [0.7, 0.1];
        let (a, b) = (net.eval_vec(&x), back.eval_vec(&x));
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() < 1e-5);
        }
        assert!(VelocityNetwork::read_from(&b"EQFS1xxxx"[..]).is_err());
    }
}
