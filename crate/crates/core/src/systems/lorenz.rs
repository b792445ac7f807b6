use ndarray::Array2;

use crate::error::{Error, Result};
use crate::field::{integrate_rk4, VelocityField};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }
}

pub fn lorenz_derivative(x: &[f64], p: &LorenzParams) -> [f64; 3] {
    [p.sigma * (x[1] - x[0]), x[0] * (p.rho - x[2]) - x[1], x[0] * x[1] - p.beta * x[2]]
}

/// The Lorenz system as a field, with its exact Jacobian.
#[derive(Clone, Copy, Debug, Default)]
pub struct LorenzField(pub LorenzParams);

impl VelocityField for LorenzField {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&lorenz_derivative(x, &self.0));
    }

    fn jvp(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        let p = &self.0;
        out[0] = p.sigma * (d[1] - d[0]);
        out[1] = (p.rho - x[2]) * d[0] - d[1] - x[0] * d[2];
        out[2] = x[1] * d[0] + x[0] * d[1] - p.beta * d[2];
    }
}

#[derive(Clone, Debug)]
pub struct LorenzDatasetConfig {
    pub n: usize,
    pub dt: f64,
    pub transient: usize,
    pub every: usize,
}

impl Default for LorenzDatasetConfig {
    fn default() -> Self {
        Self { n: 4096, dt: 0.01, transient: 1000, every: 10 }
    }
}

/// Samples from one long trajectory after a transient, taken every `every` steps.
/// Rows are in the system's own units.
pub fn lorenz_dataset(params: &LorenzParams, cfg: &LorenzDatasetConfig, rng: &mut Rng) -> Result<Array2<f64>> {
    if cfg.n == 0 || cfg.every == 0 {
        return Err(Error::invalid("n and every must be positive"));
    }
    let x0: Vec<f64> = [1.0, 1.0, 1.0].iter().map(|v| v + 0.1 * rng::normal(rng)).collect();
    let field = LorenzField(*params);
    let steps = cfg.transient + cfg.n * cfg.every;
    let traj = integrate_rk4(&field, &x0, cfg.dt, steps)?;
    let mut out = Array2::zeros((cfg.n, 3));
    for i in 0..cfg.n {
        let s = &traj[cfg.transient + (i + 1) * cfg.every];
        for j in 0..3 {
            out[[i, j]] = s[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::divergence_exact;

    #[test]
    fn derivative_values() {
        let p = LorenzParams::default();
        assert_eq!(lorenz_derivative(&[0.0, 0.0, 0.0], &p), [0.0, 0.0, 0.0]);
        assert_eq!(lorenz_derivative(&[1.0, 0.0, 0.0], &p), [-10.0, 28.0, 0.0]);
        let c = (p.beta * (p.rho - 1.0)).sqrt();
        assert!((c - 8.4853).abs() < 1e-4);
        let d = lorenz_derivative(&[c, c, p.rho - 1.0], &p);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_is_constant() {
        let f = LorenzField::default();
        let want = -(10.0 + 1.0 + 8.0 / 3.0);
        assert!((divergence_exact(&f, &[3.0, -2.0, 20.0]) - want).abs() < 1e-12);
    }

    #[test]
    fn nearby_trajectories_separate() {
        let f = LorenzField::default();
        // start on the attractor
        let x0 = integrate_rk4(&f, &[1.0, 1.0, 1.0], 0.01, 1000).unwrap().pop().unwrap();
        let mut x1 = x0.clone();
        x1[0] += 1e-8;
        let a = integrate_rk4(&f, &x0, 0.01, 2500).unwrap();
        let b = integrate_rk4(&f, &x1, 0.01, 2500).unwrap();
        let sep = a.iter().zip(&b).map(|(x, y)| {
            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        });
        assert!(sep.fold(0.0, f64::max) > 1.0);
    }

    #[test]
    fn dataset_is_on_the_attractor() {
        let cfg = LorenzDatasetConfig { n: 500, ..Default::default() };
        let xs = lorenz_dataset(&LorenzParams::default(), &cfg, &mut rng::seeded(0)).unwrap();
        assert_eq!(xs.dim(), (500, 3));
        let zmean = xs.column(2).mean().unwrap();
        assert!((15.0..35.0).contains(&zmean), "{zmean}");
        assert!(xs.iter().all(|v| v.abs() < 60.0));
    }
}
