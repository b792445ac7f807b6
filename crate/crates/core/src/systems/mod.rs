//! Ground-truth data sources.

pub mod alife;
pub mod gray_scott;
pub mod lorenz;

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Toy2d {
    TwoGaussians,
    Ring,
    TwoMoons,
}

impl Toy2d {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two_gaussians" | "two-gaussians" => Ok(Self::TwoGaussians),
            "ring" => Ok(Self::Ring),
            "two_moons" | "two-moons" => Ok(Self::TwoMoons),
            other => Err(Error::Unknown { kind: "toy distribution", name: other.into() }),
        }
    }
}

/// `n` draws from one of the planar toy distributions.
pub fn sample_toy2d(kind: Toy2d, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut out = Array2::zeros((n, 2));
    for mut row in out.outer_iter_mut() {
        let (x, y) = match kind {
            Toy2d::TwoGaussians => {
                let cx = if rng.random_bool(0.5) { 1.5 } else { -1.5 };
                (cx + 0.4 * rng::normal(rng), 0.4 * rng::normal(rng))
            }
            Toy2d::Ring => {
                let t = rng.random_range(0.0..2.0 * PI);
                let r = 1.0 + 0.1 * rng::normal(rng);
                (r * t.cos(), r * t.sin())
            }
            Toy2d::TwoMoons => {
                let t = rng.random_range(0.0..PI);
                let (x, y) = if rng.random_bool(0.5) { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                (x + 0.1 * rng::normal(rng), y + 0.1 * rng::normal(rng))
            }
        };
        row[0] = x;
        row[1] = y;
    }
    Ok(out)
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(xs: ArrayView2<f64>) -> Result<Self> {
        if xs.nrows() < 2 {
            return Err(Error::invalid("standardization needs at least 2 rows"));
        }
        let mean = xs.mean_axis(Axis(0)).unwrap();
        let std = xs.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Ok(Self { mean, std })
    }

    /// One mean and scale per channel block of `block` columns.
    pub fn fit_channels(xs: ArrayView2<f64>, channels: usize) -> Result<Self> {
        if channels == 0 || xs.ncols() % channels != 0 || xs.nrows() == 0 {
            return Err(Error::invalid("columns must split evenly into channels"));
        }
        let block = xs.ncols() / channels;
        let mut mean = Array1::zeros(xs.ncols());
        let mut std = Array1::ones(xs.ncols());
        for c in 0..channels {
            let part = xs.slice(ndarray::s![.., c * block..(c + 1) * block]);
            let m = part.mean().unwrap();
            let var = part.mapv(|v| (v - m) * (v - m)).mean().unwrap();
            let s = if var > 0.0 { var.sqrt() } else { 1.0 };
            mean.slice_mut(ndarray::s![c * block..(c + 1) * block]).fill(m);
            std.slice_mut(ndarray::s![c * block..(c + 1) * block]).fill(s);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        (&xs - &self.mean) / &self.std
    }

    pub fn invert(&self, zs: ArrayView2<f64>) -> Array2<f64> {
        &zs * &self.std + &self.mean
    }
}

/// A field expressed in standardized coordinates: `z' = v(x(z)) / std`.
pub struct StandardizedField<'a, F: VelocityField + ?Sized> {
    pub field: &'a F,
    pub standardizer: &'a Standardizer,
}

impl<F: VelocityField + ?Sized> VelocityField for StandardizedField<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) {
        let x: Vec<f64> = (0..z.len()).map(|i| z[i] * self.standardizer.std[i] + self.standardizer.mean[i]).collect();
        self.field.eval(&x, out);
        for i in 0..out.len() {
            out[i] /= self.standardizer.std[i];
        }
    }

    fn jvp(&self, z: &[f64], dir: &[f64], out: &mut [f64]) {
        let x: Vec<f64> = (0..z.len()).map(|i| z[i] * self.standardizer.std[i] + self.standardizer.mean[i]).collect();
        let dx: Vec<f64> = (0..z.len()).map(|i| dir[i] * self.standardizer.std[i]).collect();
        self.field.jvp(&x, &dx, out);
        for i in 0..out.len() {
            out[i] /= self.standardizer.std[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_radius_and_mixture_mean() {
        let mut r = rng::seeded(1);
        let ring = sample_toy2d(Toy2d::Ring, 10_000, &mut r).unwrap();
        let mean_r = ring.outer_iter().map(|p| p.dot(&p).sqrt()).sum::<f64>() / 10_000.0;
        assert!((mean_r - 1.0).abs() <= 0.01, "{mean_r}");
        let g = sample_toy2d(Toy2d::TwoGaussians, 10_000, &mut r).unwrap();
        let m = g.mean_axis(Axis(0)).unwrap();
        assert!(m.iter().all(|v| v.abs() < 0.05), "{m}");
        let one = sample_toy2d(Toy2d::TwoMoons, 1, &mut r).unwrap();
        assert!(one.iter().all(|v| v.is_finite()));
        assert!(Toy2d::parse("spiral").is_err());
    }

    #[test]
    fn standardizer_round_trips() {
        let xs = ndarray::arr2(&[[1.0, 10.0], [3.0, 10.0], [5.0, 10.0]]);
        let st = Standardizer::fit(xs.view()).unwrap();
        let z = st.apply(xs.view());
        assert!(z.column(0).mean().unwrap().abs() < 1e-12);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
        assert!((st.invert(z.view()) - &xs).iter().all(|d| d.abs() < 1e-12));
        let ch = Standardizer::fit_channels(ndarray::arr2(&[[0.0, 2.0, 5.0, 5.0]]).view(), 2).unwrap();
        assert_eq!(ch.mean.to_vec(), vec![1.0, 1.0, 5.0, 5.0]);
        assert_eq!(ch.std.to_vec(), vec![1.0, 1.0, 1.0, 1.0]);
    }
}
