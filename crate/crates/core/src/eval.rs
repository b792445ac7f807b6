//! Metrics: MMD preservation curves, Lyapunov exponents, dynamics fingerprints.

use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{rk4_step_batch, VelocityField};
use crate::rng::Rng;
use crate::training_free::{ChannelWeights, ConvKernel, LinearOperator};
use crate::velocity_net::{NetworkConfig, VelocityNetwork};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_kernel(x: ArrayView2<f64>, y: ArrayView2<f64>, gamma: f64) -> f64 {
    let mut acc = 0.0;
    for a in x.outer_iter() {
        let a = a.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| a.to_vec());
        for b in y.outer_iter() {
            let d = match b.as_slice() {
                Some(bs) => sq_dist(&a, bs),
                None => sq_dist(&a, &b.to_vec()),
            };
            acc += (-gamma * d).exp();
        }
    }
    acc / (x.nrows() * y.nrows()) as f64
}

/// Biased RBF-kernel MMD, returned as the square root of the (clamped) squared value.
pub fn mmd_rbf(x: ArrayView2<f64>, y: ArrayView2<f64>, sigma: f64) -> Result<f64> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::invalid("mmd needs non-empty sample sets"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::shape(x.ncols(), y.ncols()));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let g = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(x, x, g) + mean_kernel(y, y, g) - 2.0 * mean_kernel(x, y, g);
    Ok(v.max(0.0).sqrt())
}

/// Bandwidth used by the preservation protocol.
pub const MMD_SIGMA: f64 = 0.5;

/// MMD between `samples` and their RK4-evolved copies every `every` steps.
pub fn preservation_curve<F: VelocityField + ?Sized>(
    field: &F,
    samples: ArrayView2<f64>,
    steps: usize,
    dt: f64,
    every: usize,
) -> Result<Vec<(f64, f64)>> {
    if every == 0 {
        return Err(Error::invalid("checkpoint interval must be positive"));
    }
    let mut xs = samples.to_owned();
    let mut out = Vec::new();
    for step in 1..=steps {
        rk4_step_batch(field, &mut xs, dt).map_err(|_| Error::non_finite(format!("trajectory blew up at step {step}")))?;
        if step % every == 0 {
            out.push((step as f64 * dt, mmd_rbf(samples, xs.view(), MMD_SIGMA)?));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LyapunovConfig {
    pub d0: f64,
    pub dt: f64,
    pub horizon_steps: usize,
    pub renorm_every: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { d0: 1e-8, dt: 0.01, horizon_steps: 50_000, renorm_every: 10 }
    }
}

/// Largest Lyapunov exponent by the two-trajectory renormalization method,
/// averaged over the second half of the horizon.
///
/// Returns `-inf` when the two trajectories merge to machine precision,
/// as they do when the field contracts onto a fixed point.
pub fn lyapunov_max<F: VelocityField + ?Sized>(field: &F, x0: &[f64], cfg: &LyapunovConfig) -> Result<f64> {
    let d = field.dim();
    if x0.len() != d {
        return Err(Error::shape(d, x0.len()));
    }
    if cfg.renorm_every == 0 || cfg.horizon_steps < cfg.renorm_every {
        return Err(Error::invalid("horizon must cover at least one renormalization interval"));
    }
    if !(cfg.d0 > 0.0 && cfg.dt > 0.0) {
        return Err(Error::invalid("d0 and dt must be positive"));
    }
    let mut x = Array2::from_shape_vec((1, d), x0.to_vec()).unwrap();
    let dir = 1.0 / (d as f64).sqrt();
    let mut y = x.mapv(|v| v + cfg.d0 * dir);
    let sep = |a: &Array2<f64>, b: &Array2<f64>| sq_dist(a.as_slice().unwrap(), b.as_slice().unwrap()).sqrt();
    let mut base = sep(&x, &y);
    let half = cfg.horizon_steps / 2;
    let mut log_sum = 0.0;
    let mut time = 0.0;
    for step in 1..=cfg.horizon_steps {
        rk4_step_batch(field, &mut x, cfg.dt)?;
        rk4_step_batch(field, &mut y, cfg.dt)?;
        if step % cfg.renorm_every == 0 {
            let dist = sep(&x, &y);
            if dist == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            if !dist.is_finite() {
                return Err(Error::non_finite(format!("separation degenerated to {dist} at step {step}")));
            }
            if step > half {
                log_sum += (dist / base).ln();
                time += cfg.renorm_every as f64 * cfg.dt;
            }
            if dist != base {
                let scale = cfg.d0 / dist;
                y = &x + &((&y - &x) * scale);
                base = sep(&x, &y);
            }
        }
    }
    if time == 0.0 {
        return Err(Error::invalid("horizon too short for the averaging window"));
    }
    Ok(log_sum / time)
}

/// Stable identifier for a probe set (shape and exact values).
pub fn probe_set_id(probes: ArrayView2<f64>) -> u64 {
    let mut h = Sha256::new();
    h.update((probes.nrows() as u64).to_le_bytes());
    h.update((probes.ncols() as u64).to_le_bytes());
    for v in probes.iter() {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsFingerprint {
    pub values: Vec<f64>,
    pub probe_set_id: u64,
    /// set once the sign has been aligned against a reference on the same probes
    pub aligned_to: Option<u64>,
}

/// Field values at `probes`, concatenated in probe order.
pub fn fingerprint<F: VelocityField + ?Sized>(field: &F, probes: ArrayView2<f64>) -> Result<DynamicsFingerprint> {
    if probes.ncols() != field.dim() {
        return Err(Error::shape(field.dim(), probes.ncols()));
    }
    let v = field.eval_batch(probes);
    let values: Vec<f64> = v.iter().copied().collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("fingerprint value"));
    }
    Ok(DynamicsFingerprint { values, probe_set_id: probe_set_id(probes), aligned_to: None })
}

fn check_same_probes(a: &DynamicsFingerprint, b: &DynamicsFingerprint) -> Result<()> {
    if a.probe_set_id != b.probe_set_id {
        return Err(Error::ProbeMismatch(a.probe_set_id, b.probe_set_id));
    }
    if a.values.len() != b.values.len() {
        return Err(Error::shape(a.values.len(), b.values.len()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips `e` if it points away from `reference`. A zero dot product leaves it as is.
pub fn align_sign(e: &DynamicsFingerprint, reference: &DynamicsFingerprint) -> Result<DynamicsFingerprint> {
    check_same_probes(e, reference)?;
    let mut out = e.clone();
    if dot(&e.values, &reference.values) < 0.0 {
        out.values.iter_mut().for_each(|v| *v = -*v);
    }
    out.aligned_to = Some(reference.probe_set_id);
    Ok(out)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between fingerprints on the same probe set.
pub fn fingerprint_similarity(a: &DynamicsFingerprint, b: &DynamicsFingerprint) -> Result<f64> {
    check_same_probes(a, b)?;
    cosine_similarity(&a.values, &b.values)
}

/// Similarity after aligning `a` to `b`, which is `|cos|`.
pub fn aligned_similarity(a: &DynamicsFingerprint, b: &DynamicsFingerprint) -> Result<f64> {
    fingerprint_similarity(&align_sign(a, b)?, b)
}

/// Net change `x_T - x_0` of a rollout produced by `stepper`.
pub fn change_fingerprint<F>(initial: &[f64], mut stepper: F, steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(&mut [f64]) -> Result<()>,
{
    let mut x = initial.to_vec();
    for _ in 0..steps {
        stepper(&mut x)?;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("rollout state"));
    }
    Ok(x.iter().zip(initial).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    RandomNetwork,
    RandomKernel,
    ScoreReweight,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random_network" | "random-network" => Ok(Self::RandomNetwork),
            "random_kernel" | "random-kernel" => Ok(Self::RandomKernel),
            "score_reweight" | "score-reweight" => Ok(Self::ScoreReweight),
            other => Err(Error::Unknown { kind: "baseline", name: other.into() }),
        }
    }
}

/// Shape information a baseline is built against.
#[derive(Clone, Debug)]
pub enum BaselineTemplate {
    Network { dim: usize, cfg: NetworkConfig },
    Grid { c: usize, h: usize, w: usize },
}

pub enum Baseline {
    Network(VelocityNetwork),
    Kernel(LinearOperator),
    Reweight(ChannelWeights),
}

pub fn make_baseline(kind: BaselineKind, template: &BaselineTemplate, rng: &mut Rng) -> Result<Baseline> {
    match (kind, template) {
        (BaselineKind::RandomNetwork, BaselineTemplate::Network { dim, cfg }) => {
            Ok(Baseline::Network(VelocityNetwork::new(*dim, cfg, rng)))
        }
        (BaselineKind::RandomKernel, BaselineTemplate::Grid { c, h, w }) => {
            Ok(Baseline::Kernel(LinearOperator::conv(ConvKernel::random(*c, 0, rng), *h, *w)?))
        }
        (BaselineKind::ScoreReweight, BaselineTemplate::Grid { c, h, w }) => Ok(Baseline::Reweight(ChannelWeights {
            weights: crate::rng::normal_vec(rng, *c),
            block: h * w,
        })),
        (k, t) => Err(Error::invalid(format!("baseline {k:?} does not apply to template {t:?}"))),
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aligned similarity over all unordered pairs.
pub fn pairwise_similarities(prints: &[DynamicsFingerprint]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..prints.len() {
        for j in i + 1..prints.len() {
            out.push(aligned_similarity(&prints[i], &prints[j])?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FnField, LinearField, ZeroField};
    use crate::rng;
    use ndarray::arr2;

    #[test]
    fn mmd_closed_form() {
        let x = arr2(&[[0.0]]);
        let y = arr2(&[[1.0]]);
        let want = (2.0 - 2.0 * (-2.0f64).exp()).sqrt();
        assert!((mmd_rbf(x.view(), y.view(), 0.5).unwrap() - want).abs() < 1e-12);
        assert_eq!(mmd_rbf(x.view(), x.view(), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mmd_is_symmetric() {
        let mut r = rng::seeded(1);
        let x = Array2::from_shape_vec((20, 3), rng::normal_vec(&mut r, 60)).unwrap();
        let y = Array2::from_shape_vec((15, 3), rng::normal_vec(&mut r, 45)).unwrap();
        let a = mmd_rbf(x.view(), y.view(), 0.5).unwrap();
        let b = mmd_rbf(y.view(), x.view(), 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_field_preserves_exactly() {
        let mut r = rng::seeded(2);
        let x = Array2::from_shape_vec((30, 2), rng::normal_vec(&mut r, 60)).unwrap();
        let curve = preservation_curve(&ZeroField(2), x.view(), 100, 0.1, 10).unwrap();
        assert_eq!(curve.len(), 10);
        assert!(curve.iter().all(|&(_, m)| m == 0.0));
        assert!((curve[9].0 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_of_contraction_and_zero_field() {
        let cfg = LyapunovConfig { horizon_steps: 2000, ..Default::default() };
        let contract = LinearField::new(arr2(&[[-1.0]])).unwrap();
        let l = lyapunov_max(&contract, &[1.0], &cfg).unwrap();
        assert!((l + 1.0).abs() < 0.05, "{l}");
        assert_eq!(lyapunov_max(&ZeroField(2), &[0.3, 0.1], &cfg).unwrap(), 0.0);
        // away from the origin, merged trajectories round to the same point
        let sink = FnField::new(1, |x, o| o[0] = -160.0 * (x[0] - 3.0));
        let slow_renorm = LyapunovConfig { renorm_every: 100, ..cfg };
        assert_eq!(lyapunov_max(&sink, &[1.0], &slow_renorm).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn fingerprints_negate_and_align() {
        let probes = arr2(&[[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]]);
        let rot = LinearField::rotation(1.0);
        let e = fingerprint(&rot, probes.view()).unwrap();
        let neg = fingerprint(&FnField::new(2, |x, o| {
            o[0] = x[1];
            o[1] = -x[0];
        }), probes.view())
        .unwrap();
        assert!(e.values.iter().zip(&neg.values).all(|(a, b)| *a == -*b));
        assert!(fingerprint(&ZeroField(2), probes.view()).unwrap().values.iter().all(|v| *v == 0.0));
        let aligned = align_sign(&neg, &e).unwrap();
        assert_eq!(aligned.values, e.values);
        assert!((fingerprint_similarity(&aligned, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(align_sign(&e, &e).unwrap().values, e.values);
    }

    #[test]
    fn zero_dot_keeps_sign() {
        let a = DynamicsFingerprint { values: vec![1.0, 0.0], probe_set_id: 5, aligned_to: None };
        let b = DynamicsFingerprint { values: vec![0.0, -3.0], probe_set_id: 5, aligned_to: None };
        assert_eq!(align_sign(&a, &b).unwrap().values, a.values);
    }

    #[test]
    fn mismatched_probes_are_rejected() {
        let rot = LinearField::rotation(1.0);
        let a = fingerprint(&rot, arr2(&[[1.0, 0.0]]).view()).unwrap();
        let b = fingerprint(&rot, arr2(&[[1.0, 1e-12]]).view()).unwrap();
        assert!(matches!(fingerprint_similarity(&a, &b), Err(Error::ProbeMismatch(_, _))));
        assert!(align_sign(&a, &b).is_err());
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn change_of_identity_stepper_is_zero() {
        let c = change_fingerprint(&[1.0, 2.0], |_| Ok(()), 10).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        assert_eq!(change_fingerprint(&[1.0], |x| { x[0] += 1.0; Ok(()) }, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn random_kernels_are_not_skew() {
        let mut r = rng::seeded(3);
        let t = BaselineTemplate::Grid { c: 2, h: 4, w: 4 };
        for _ in 0..100 {
            match make_baseline(BaselineKind::RandomKernel, &t, &mut r).unwrap() {
                Baseline::Kernel(op) => assert!(!op.is_skew()),
                _ => unreachable!(),
            }
        }
        assert!(make_baseline(BaselineKind::RandomNetwork, &t, &mut r).is_err());
    }
}
