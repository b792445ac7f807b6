use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

pub const ALPHA_FLOOR: f64 = 1e-5;
pub const ALPHA_CEIL: f64 = 1.0 - 1e-5;

/// Cosine noise schedule `alpha(tau) = cos^2((tau + s) / (1 + s) * pi / 2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub offset: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { offset: 0.008 }
    }
}

impl NoiseSchedule {
    pub fn alpha(&self, tau: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(self.alpha_unchecked(tau))
    }

    fn alpha_unchecked(&self, tau: f64) -> f64 {
        let s = self.offset;
        let c = ((tau + s) / (1.0 + s) * FRAC_PI_2).cos();
        (c * c).clamp(ALPHA_FLOOR, ALPHA_CEIL)
    }

    /// Inverse of [`NoiseSchedule::alpha`] by bisection, to `|d alpha| <= 1e-6`.
    ///
    /// Targets above `alpha(0)` map to 0 and targets below `alpha(1)` map to 1.
    pub fn tau_for_alpha(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if alpha >= self.alpha_unchecked(lo) {
            return Ok(0.0);
        }
        if alpha <= self.alpha_unchecked(hi) {
            return Ok(1.0);
        }
        // alpha is non-increasing in tau
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let a = self.alpha_unchecked(mid);
            if (a - alpha).abs() <= 1e-6 && hi - lo < 1e-9 {
                return Ok(mid);
            }
            if a > alpha {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `sqrt(alpha) x0 + sqrt(1 - alpha) eps`, element-wise.
pub fn diffuse(x0: &[f64], alpha: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if x0.len() != eps.len() {
        return Err(Error::shape(x0.len(), eps.len()));
    }
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form inverse of the cosine law, independent of the bisection.
    fn tau_closed_form(s: f64, alpha: f64) -> f64 {
        (1.0 + s) * alpha.sqrt().acos() / FRAC_PI_2 - s
    }

    #[test]
    fn boundary_values() {
        let sch = NoiseSchedule::default();
        let a0 = sch.alpha(0.0).unwrap();
        assert!((a0 - 0.99984).abs() < 1e-5, "{a0}");
        assert_eq!(sch.alpha(1.0).unwrap(), ALPHA_FLOOR);
        assert!((sch.alpha(0.2).unwrap() - 0.8985).abs() < 1e-3);
        assert!(sch.alpha(-0.1).is_err() && sch.alpha(1.5).is_err());
    }

    #[test]
    fn monotone_and_bounded() {
        let sch = NoiseSchedule::default();
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let a = sch.alpha(i as f64 / 1000.0).unwrap();
            assert!(a <= prev);
            prev = a;
        }
        assert!(sch.alpha(0.0).unwrap() >= 0.999);
        assert!(sch.alpha(1.0).unwrap() <= 1e-3);
    }

    #[test]
    fn inverse_round_trip_and_reference_points() {
        let sch = NoiseSchedule::default();
        let t = sch.tau_for_alpha(sch.alpha(0.3).unwrap()).unwrap();
        assert!((t - 0.3).abs() < 1e-5);
        let t95 = sch.tau_for_alpha(0.95).unwrap();
        let oracle = tau_closed_form(0.008, 0.95);
        assert!((t95 - oracle).abs() < 1e-5);
        assert!((t95 - 0.13671).abs() < 1e-4, "{t95}");
        assert!((sch.alpha(t95).unwrap() - 0.95).abs() <= 1e-6);
        assert_eq!(sch.tau_for_alpha(1.0 - 1e-9).unwrap(), 0.0);
        assert!(sch.tau_for_alpha(0.0).is_err() && sch.tau_for_alpha(1.0).is_err());
    }

    #[test]
    fn diffuse_arithmetic() {
        assert_eq!(diffuse(&[3.0, -1.0], 1.0, &[5.0, 5.0]).unwrap(), vec![3.0, -1.0]);
        let v = diffuse(&[2.0], 0.25, &[-1.0]).unwrap();
        assert!((v[0] - 0.133_975).abs() < 1e-5);
        let v = diffuse(&[2.0], 1e-12, &[-1.0]).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-5);
        assert!(diffuse(&[1.0], 0.0, &[1.0]).is_err());
    }
}
