//! Distribution-preserving drifts built from skew-symmetric operators, and the
//! irreversible Langevin integrator that carries them.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::rng::{self, Rng};
use crate::score::ScoreFn;

/// Convolution kernel `K[o, i, u, v]` with offsets `u, v` in `-r..=r`,
/// applied with wrap-around on `c x h x w` states.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub c: usize,
    pub r: usize,
    /// row-major over `(o, i, u + r, v + r)`
    pub weights: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(c: usize, r: usize) -> Self {
        let k = 2 * r + 1;
        Self { c, r, weights: vec![0.0; c * c * k * k] }
    }

    pub fn from_weights(c: usize, r: usize, weights: Vec<f64>) -> Result<Self> {
        let k = 2 * r + 1;
        if weights.len() != c * c * k * k {
            return Err(Error::shape(c * c * k * k, weights.len()));
        }
        Ok(Self { c, r, weights })
    }

    /// Kernel with standard-normal entries and no constraint.
    pub fn random(c: usize, r: usize, rng: &mut Rng) -> Self {
        let k = 2 * r + 1;
        Self { c, r, weights: rng::normal_vec(rng, c * c * k * k) }
    }

    /// Random kernel projected onto the skew condition.
    pub fn random_skew(c: usize, r: usize, rng: &mut Rng) -> Self {
        let raw = Self::random(c, r, rng);
        let mut out = Self::zeros(c, r);
        let r = r as isize;
        for o in 0..c {
            for i in 0..c {
                for u in -r..=r {
                    for v in -r..=r {
                        let a = raw.get(o, i, u, v);
                        let b = raw.get(i, o, -u, -v);
                        out.set(o, i, u, v, (a - b) / 2.0);
                    }
                }
            }
        }
        out
    }

    fn index(&self, o: usize, i: usize, u: isize, v: isize) -> usize {
        let k = 2 * self.r + 1;
        let r = self.r as isize;
        (((o * self.c + i) * k) + (u + r) as usize) * k + (v + r) as usize
    }

    pub fn get(&self, o: usize, i: usize, u: isize, v: isize) -> f64 {
        self.weights[self.index(o, i, u, v)]
    }

    pub fn set(&mut self, o: usize, i: usize, u: isize, v: isize, value: f64) {
        let idx = self.index(o, i, u, v);
        self.weights[idx] = value;
    }

    /// `K[o,i,u,v] == -K[i,o,-u,-v]` for every index, compared exactly.
    pub fn is_skew(&self) -> bool {
        let r = self.r as isize;
        for o in 0..self.c {
            for i in 0..self.c {
                for u in -r..=r {
                    for v in -r..=r {
                        if self.get(o, i, u, v) != -self.get(i, o, -u, -v) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let k = 2 * self.r + 1;
        if h < k || w < k {
            return Err(Error::invalid(format!("grid {h}x{w} is smaller than the {k}x{k} kernel support")));
        }
        Ok(())
    }

    /// `out[o, y, x] = sum_{i,u,v} K[o,i,u,v] s[i, y-u, x-v]` with periodic indices.
    pub fn apply(&self, s: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let c = self.c;
        let hw = h * w;
        let r = self.r as isize;
        out.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..c {
            for i in 0..c {
                let src = &s[i * hw..(i + 1) * hw];
                for u in -r..=r {
                    for v in -r..=r {
                        let kv = self.get(o, i, u, v);
                        if kv == 0.0 {
                            continue;
                        }
                        let dst = &mut out[o * hw..(o + 1) * hw];
                        for y in 0..h {
                            let sy = (y as isize - u).rem_euclid(h as isize) as usize;
                            for x in 0..w {
                                let sx = (x as isize - v).rem_euclid(w as isize) as usize;
                                dst[y * w + x] += kv * src[sy * w + sx];
                            }
                        }
                    }
                }
            }
        }
    }

    /// The same operator as an explicit `(c h w) x (c h w)` matrix.
    pub fn to_dense(&self, h: usize, w: usize) -> Result<Array2<f64>> {
        self.check_grid(h, w)?;
        let hw = h * w;
        let n = self.c * hw;
        let mut m = Array2::zeros((n, n));
        let r = self.r as isize;
        for o in 0..self.c {
            for i in 0..self.c {
                for y in 0..h {
                    for x in 0..w {
                        for u in -r..=r {
                            for v in -r..=r {
                                let sy = (y as isize - u).rem_euclid(h as isize) as usize;
                                let sx = (x as isize - v).rem_euclid(w as isize) as usize;
                                m[[o * hw + y * w + x, i * hw + sy * w + sx]] += self.get(o, i, u, v);
                            }
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// A linear map acting on flattened states.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearOperator {
    Dense(Array2<f64>),
    Conv { kernel: ConvKernel, h: usize, w: usize },
}

impl LinearOperator {
    pub fn conv(kernel: ConvKernel, h: usize, w: usize) -> Result<Self> {
        kernel.check_grid(h, w)?;
        Ok(LinearOperator::Conv { kernel, h, w })
    }

    pub fn dim(&self) -> usize {
        match self {
            LinearOperator::Dense(m) => m.nrows(),
            LinearOperator::Conv { kernel, h, w } => kernel.c * h * w,
        }
    }

    pub fn is_skew(&self) -> bool {
        match self {
            LinearOperator::Dense(m) => {
                m.is_square() && m.indexed_iter().all(|((i, j), &v)| v + m[[j, i]] == 0.0)
            }
            LinearOperator::Conv { kernel, .. } => kernel.is_skew(),
        }
    }

    pub fn to_dense(&self) -> Result<Array2<f64>> {
        match self {
            LinearOperator::Dense(m) => Ok(m.clone()),
            LinearOperator::Conv { kernel, h, w } => kernel.to_dense(*h, *w),
        }
    }

    /// Applies the operator to every row of `xs`.
    pub fn apply_rows(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.dim() {
            return Err(Error::shape(self.dim(), xs.ncols()));
        }
        match self {
            LinearOperator::Dense(m) => Ok(xs.dot(&m.t())),
            LinearOperator::Conv { kernel, h, w } => {
                let mut out = Array2::zeros(xs.raw_dim());
                let mut buf = vec![0.0; xs.ncols()];
                for (row, mut dst) in xs.outer_iter().zip(out.outer_iter_mut()) {
                    let src = row.to_vec();
                    kernel.apply(&src, *h, *w, &mut buf);
                    dst.as_slice_mut().unwrap().copy_from_slice(&buf);
                }
                Ok(out)
            }
        }
    }
}

/// A linear operator verified to be skew-symmetric, scaled by `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewOperator {
    op: LinearOperator,
    pub gamma: f64,
}

impl SkewOperator {
    pub fn new(op: LinearOperator, gamma: f64) -> Result<Self> {
        if !op.is_skew() {
            return Err(Error::invalid("operator is not skew-symmetric"));
        }
        if !gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite"));
        }
        Ok(Self { op, gamma })
    }

    pub fn dense(matrix: Array2<f64>) -> Result<Self> {
        Self::new(LinearOperator::Dense(matrix), 1.0)
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { op: self.op.clone(), gamma }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }
}

/// The 1x1 two-channel kernel `gamma [[0, -1], [1, 0]]`.
pub fn make_rotation_kernel(gamma: f64) -> Result<ConvKernel> {
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(Error::invalid("gamma must be finite and nonzero"));
    }
    let mut k = ConvKernel::zeros(2, 0);
    k.set(0, 1, 0, 0, -gamma);
    k.set(1, 0, 0, 0, gamma);
    Ok(k)
}

pub fn validate_skew(op: &LinearOperator) -> bool {
    op.is_skew()
}

pub fn conv_to_dense(kernel: &ConvKernel, h: usize, w: usize) -> Result<Array2<f64>> {
    kernel.to_dense(h, w)
}

/// A drift computed from the score, to which the Langevin wrapper adds `eta s`.
pub trait ScoreDrift: Sync {
    fn drift(&self, s: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl ScoreDrift for LinearOperator {
    fn drift(&self, s: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.apply_rows(s)
    }
}

impl ScoreDrift for SkewOperator {
    fn drift(&self, s: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.op.apply_rows(s)?;
        if self.gamma != 1.0 {
            out *= self.gamma;
        }
        Ok(out)
    }
}

/// Per-channel weights applied to the score, `c` blocks of `hw` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWeights {
    pub weights: Vec<f64>,
    pub block: usize,
}

impl ScoreDrift for ChannelWeights {
    fn drift(&self, s: ArrayView2<f64>) -> Result<Array2<f64>> {
        if s.ncols() != self.weights.len() * self.block {
            return Err(Error::shape(self.weights.len() * self.block, s.ncols()));
        }
        let mut out = s.to_owned();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= self.weights[j / self.block];
            }
        }
        Ok(out)
    }
}

/// `v_S(x) = S grad log p(x)` for a skew operator and a score.
pub fn v_skew(op: &SkewOperator, s: ArrayView2<f64>) -> Result<Array2<f64>> {
    op.drift(s)
}

/// `x -> S s(x)` as a velocity field.
pub struct SkewField<'a, S: ScoreFn + ?Sized> {
    pub op: &'a SkewOperator,
    pub score: &'a S,
}

impl<S: ScoreFn + ?Sized> VelocityField for SkewField<'_, S> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let xs = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let v = self.eval_batch(xs);
        out.copy_from_slice(v.as_slice().unwrap());
    }

    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        let s = self.score.score_batch(xs).expect("score evaluation failed");
        self.op.drift(s.view()).expect("operator shape matches score")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LangevinConfig {
    pub eta: f64,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid(format!("eta must be non-negative, got {}", self.eta)));
        }
        Ok(())
    }
}

/// One Euler-Maruyama step, `x += (drift(s) + eta s) dt + sqrt(2 eta dt) xi`,
/// with one noise stream per row.
pub fn langevin_step<D, S>(
    xs: &mut Array2<f64>,
    drift: &D,
    score: &S,
    eta: f64,
    dt: f64,
    rngs: &mut [Rng],
) -> Result<()>
where
    D: ScoreDrift + ?Sized,
    S: ScoreFn + ?Sized,
{
    if rngs.len() != xs.nrows() {
        return Err(Error::shape(xs.nrows(), rngs.len()));
    }
    let s = score.score_batch(xs.view())?;
    let v = drift.drift(s.view())?;
    let amp = (2.0 * eta * dt).sqrt();
    for (((mut row, vr), sr), rng) in xs.outer_iter_mut().zip(v.outer_iter()).zip(s.outer_iter()).zip(rngs.iter_mut()) {
        for ((x, &vv), &ss) in row.iter_mut().zip(vr).zip(sr) {
            let noise = if amp > 0.0 { amp * rng::normal(rng) } else { 0.0 };
            *x += (vv + eta * ss) * dt + noise;
        }
    }
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite("langevin state diverged"))
    }
}

/// Noise streams keyed by `(seed, row)`, shared by anything rolled out with the same seed.
pub fn particle_streams(seed: u64, n: usize) -> Vec<Rng> {
    (0..n).map(|i| rng::stream(seed, "langevin", i as u64)).collect()
}

/// Rolls `x0` forward, returning the states after every `record_every` steps
/// (the initial state first).
pub fn langevin_rollout<D, S>(
    x0: ArrayView2<f64>,
    drift: &D,
    score: &S,
    cfg: &LangevinConfig,
    record_every: usize,
) -> Result<Vec<Array2<f64>>>
where
    D: ScoreDrift + ?Sized,
    S: ScoreFn + ?Sized,
{
    cfg.validate()?;
    let mut rngs = particle_streams(cfg.seed, x0.nrows());
    let mut x = x0.to_owned();
    let every = record_every.max(1);
    let mut frames = vec![x.clone()];
    for step in 1..=cfg.steps {
        langevin_step(&mut x, drift, score, cfg.eta, cfg.dt, &mut rngs)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {step}")),
                other => other,
            })?;
        if step % every == 0 || step == cfg.steps {
            frames.push(x.clone());
        }
    }
    Ok(frames)
}

/// Outcome of the orientation search.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub op: SkewOperator,
    /// `(gamma, similarity)` for every candidate, in the order tried
    pub candidates: Vec<(f64, f64)>,
    /// frames of the selected rollout
    pub frames: Vec<Array2<f64>>,
}

/// Rolls out the rotation kernel for each candidate `gamma` from the same state
/// and noise, and keeps the one whose net change best matches `target_change`.
pub fn recover_turing_dynamics<S: ScoreFn + ?Sized>(
    score: &S,
    initial: ArrayView2<f64>,
    target_change: &[f64],
    grid: (usize, usize),
    gammas: &[f64],
    cfg: &LangevinConfig,
    record_every: usize,
) -> Result<Recovery> {
    if gammas.is_empty() {
        return Err(Error::invalid("no gamma candidates"));
    }
    if initial.nrows() != 1 || initial.ncols() != target_change.len() {
        return Err(Error::shape(target_change.len(), initial.ncols()));
    }
    let (h, w) = grid;
    let mut best: Option<(SkewOperator, f64, Vec<Array2<f64>>)> = None;
    let mut candidates = Vec::new();
    for &gamma in gammas {
        let op = SkewOperator::new(LinearOperator::conv(make_rotation_kernel(gamma)?, h, w)?, 1.0)?;
        let frames = langevin_rollout(initial, &op, score, cfg, record_every)?;
        let last = frames.last().unwrap();
        let change: Vec<f64> = last.iter().zip(initial.iter()).map(|(a, b)| a - b).collect();
        let sim = crate::eval::cosine_similarity(&change, target_change).unwrap_or(0.0);
        candidates.push((gamma, sim));
        if best.as_ref().is_none_or(|b| sim > b.1) {
            best = Some((op, sim, frames));
        }
    }
    let (op, _, frames) = best.unwrap();
    Ok(Recovery { op, candidates, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::divergence_exact;
    use crate::score::GaussianScore;
    use ndarray::arr2;

    #[test]
    fn rotation_kernel_layout() {
        let k = make_rotation_kernel(1.0).unwrap();
        assert_eq!(k.get(0, 1, 0, 0), -1.0);
        assert_eq!(k.get(1, 0, 0, 0), 1.0);
        assert_eq!(k.get(0, 0, 0, 0), 0.0);
        assert!(k.is_skew());
        assert!(make_rotation_kernel(0.0).is_err());
    }

    #[test]
    fn skew_conditions() {
        assert!(ConvKernel::zeros(3, 1).is_skew());
        let mut k = ConvKernel::zeros(1, 1);
        k.set(0, 0, 1, 0, 0.7);
        k.set(0, 0, -1, 0, -0.7);
        k.set(0, 0, 1, -1, 2.0);
        k.set(0, 0, -1, 1, -2.0);
        assert!(k.is_skew());
        let mut bad = ConvKernel::zeros(2, 0);
        bad.set(0, 1, 0, 0, 1.0);
        bad.set(1, 0, 0, 0, 1.0);
        assert!(!bad.is_skew());
    }

    #[test]
    fn rotation_kernel_on_tiny_grid_densifies_to_skew_matrix() {
        let m = conv_to_dense(&make_rotation_kernel(1.0).unwrap(), 2, 2).unwrap();
        assert_eq!(m.dim(), (8, 8));
        assert!(m.indexed_iter().all(|((i, j), &v)| v + m[[j, i]] == 0.0));
    }

    #[test]
    fn dense_and_conv_application_agree() {
        let mut r = rng::seeded(3);
        for (c, rad, h, w) in [(1, 1, 5, 4), (2, 2, 6, 7), (3, 1, 3, 3)] {
            let k = ConvKernel::random_skew(c, rad, &mut r);
            let op = LinearOperator::conv(k, h, w).unwrap();
            let dense = op.to_dense().unwrap();
            let xs = Array2::from_shape_vec((2, c * h * w), rng::normal_vec(&mut r, 2 * c * h * w)).unwrap();
            let a = op.apply_rows(xs.view()).unwrap();
            let b = xs.dot(&dense.t());
            assert!((&a - &b).iter().all(|d| d.abs() <= 1e-12));
        }
    }

    #[test]
    fn symmetric_kernel_is_not_skew_when_dense() {
        let mut k = ConvKernel::zeros(1, 0);
        k.set(0, 0, 0, 0, 1.0);
        let m = conv_to_dense(&k, 3, 3).unwrap();
        assert!(!LinearOperator::Dense(m).is_skew());
        assert!(conv_to_dense(&ConvKernel::zeros(1, 2), 4, 4).is_err());
    }

    #[test]
    fn skew_drift_is_orthogonal_and_divergence_free() {
        let s_mat = arr2(&[[0.0, -1.0], [1.0, 0.0]]);
        let op = SkewOperator::dense(s_mat).unwrap();
        let g = GaussianScore::standard(2);
        let xs = arr2(&[[1.0, 0.0], [0.3, -2.0]]);
        let sc = g.score_batch(xs.view()).unwrap();
        let v = v_skew(&op, sc.view()).unwrap();
        assert_eq!(v.row(0).to_vec(), vec![0.0, -1.0]);
        for i in 0..2 {
            assert_eq!(v.row(i).dot(&sc.row(i)), 0.0);
        }
        let field = SkewField { op: &op, score: &g };
        assert_eq!(divergence_exact(&field, &[0.4, 0.9]).abs(), 0.0);
    }

    #[test]
    fn rotation_kernel_grid_arithmetic() {
        let op = SkewOperator::new(LinearOperator::conv(make_rotation_kernel(2.0).unwrap(), 1, 2).unwrap(), 1.0).unwrap();
        let s = arr2(&[[1.0, 2.0, 3.0, 4.0]]);
        let v = op.drift(s.view()).unwrap();
        assert_eq!(v.row(0).to_vec(), vec![-6.0, -8.0, 2.0, 4.0]);
        let flipped = op.with_gamma(-1.0).drift(s.view()).unwrap();
        assert_eq!(flipped, -v);
    }

    #[test]
    fn zero_eta_is_deterministic_drift() {
        let op = SkewOperator::dense(arr2(&[[0.0, -1.0], [1.0, 0.0]])).unwrap();
        let g = GaussianScore::standard(2);
        let mut xs = arr2(&[[1.0, 0.0]]);
        let mut rngs = particle_streams(0, 1);
        langevin_step(&mut xs, &op, &g, 0.0, 0.1, &mut rngs).unwrap();
        assert_eq!(xs.row(0).to_vec(), vec![1.0, -0.1]);
    }

    #[test]
    fn channel_weights_of_one_are_identity() {
        let w = ChannelWeights { weights: vec![1.0, 1.0], block: 2 };
        let s = arr2(&[[1.0, -2.0, 3.0, 0.5]]);
        assert_eq!(w.drift(s.view()).unwrap(), s);
    }
}
