//! Noise schedule, denoiser training and score extraction.

mod denoiser;
mod schedule;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Zip};

pub use denoiser::{train_denoiser, DenoiserModel, DenoiserNet, Objective, ScoreTrainConfig, TrainedDenoiser};
pub use schedule::{diffuse, NoiseSchedule, ALPHA_CEIL, ALPHA_FLOOR};

use crate::error::{Error, Result};

/// Anything that yields `grad log p` for rows of a batch.
pub trait ScoreFn: Sync {
    fn dim(&self) -> usize;

    fn score_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>>;

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::shape(self.dim(), x.len()))?;
        Ok(self.score_batch(xs)?.into_raw_vec_and_offset().0)
    }
}

impl<T: ScoreFn + ?Sized> ScoreFn for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).score_batch(xs)
    }
}

impl<T: ScoreFn + ?Sized> ScoreFn for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).score_batch(xs)
    }
}

/// Analytic score of a Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScore {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl GaussianScore {
    pub fn standard(d: usize) -> Self {
        Self { mean: Array1::zeros(d), var: Array1::ones(d) }
    }

    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape(mean.len(), var.len()));
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("variances must be positive"));
        }
        Ok(Self { mean: mean.into(), var: var.into() })
    }

    /// Density (normalized) at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let mut q = 0.0;
        let mut norm = 1.0;
        for i in 0..x.len() {
            let z = x[i] - self.mean[i];
            q += z * z / self.var[i];
            norm *= 2.0 * std::f64::consts::PI * self.var[i];
        }
        (-0.5 * q).exp() / norm.sqrt()
    }
}

impl ScoreFn for GaussianScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.dim() {
            return Err(Error::shape(self.dim(), xs.ncols()));
        }
        Ok((&self.mean - &xs) / &self.var)
    }
}

/// `s = (x0 sqrt(alpha) - x) / (1 - alpha)`, elementwise.
pub fn score_from_x0(x: ArrayView2<f64>, x0: ArrayView2<f64>, alpha: f64) -> Array2<f64> {
    let sa = alpha.sqrt();
    let inv = 1.0 / (1.0 - alpha);
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(&x).and(&x0).for_each(|o, &xv, &x0v| *o = (x0v * sa - xv) * inv);
    out
}

/// A denoiser read out as a score at one fixed noise level.
#[derive(Clone, Debug)]
pub struct ScoreModel {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub alpha: f64,
    pub tau: f64,
}

impl ScoreModel {
    pub fn new(model: DenoiserModel, schedule: NoiseSchedule, alpha: f64) -> Result<Self> {
        if !(alpha > ALPHA_FLOOR && alpha < 1.0) {
            return Err(Error::invalid(format!("working alpha {alpha} must lie in ({ALPHA_FLOOR}, 1)")));
        }
        let tau = schedule.tau_for_alpha(alpha)?;
        Ok(Self { model, schedule, alpha, tau })
    }

    pub fn load(path: &Path, schedule: NoiseSchedule, alpha: f64) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::new(DenoiserModel::read_from(&bytes[..])?, schedule, alpha)
    }
}

impl ScoreFn for ScoreModel {
    fn dim(&self) -> usize {
        self.model.sample_len()
    }

    fn score_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x0 = self.model.predict_x0_at(xs, self.tau, self.alpha)?;
        let s = score_from_x0(xs, x0.view(), self.alpha);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("score estimate"));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn on_manifold_point_has_zero_score() {
        let alpha: f64 = 0.9;
        let x0 = arr2(&[[0.3, -1.2]]);
        let x = x0.mapv(|v| v * alpha.sqrt());
        let s = score_from_x0(x.view(), x0.view(), alpha);
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn score_grows_as_alpha_approaches_one() {
        let x = arr2(&[[1.0]]);
        let x0 = arr2(&[[0.0]]);
        let a = score_from_x0(x.view(), x0.view(), 0.99)[[0, 0]];
        let b = score_from_x0(x.view(), x0.view(), 0.999)[[0, 0]];
        assert!((b / a - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ideal_standard_normal_denoiser_gives_minus_x() {
        // For N(0, I) data the posterior mean is sqrt(alpha) x, so x0_hat = sqrt(alpha) x.
        for alpha in [0.5, 0.9, 0.95] {
            let x = arr2(&[[0.7, -1.3], [2.0, 0.1]]);
            let x0 = x.mapv(|v| v * f64::sqrt(alpha));
            let s = score_from_x0(x.view(), x0.view(), alpha);
            assert!((&s + &x).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn gaussian_score_matches_gradient_of_log_density() {
        let g = GaussianScore::new(vec![0.5, -1.0], vec![2.0, 0.5]).unwrap();
        let x = [0.2, 0.3];
        let s = g.score(&x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            let fd = (g.density(&p).ln() - g.density(&m).ln()) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-6);
        }
    }
}
