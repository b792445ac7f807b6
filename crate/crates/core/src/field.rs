//! Vector fields, divergence operators and fixed-step integration.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// A deterministic map `x -> v(x)` from `R^d` to `R^d`.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Directional derivative `J(x) * dir`.
    ///
    /// The default uses a central difference; fields with an analytic or
    /// forward-mode Jacobian override it.
    fn jvp(&self, x: &[f64], dir: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-5 * scale;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for i in 0..d {
            xp[i] += h * dir[i];
            xm[i] -= h * dir[i];
        }
        let mut vp = vec![0.0; d];
        let mut vm = vec![0.0; d];
        self.eval(&xp, &mut vp);
        self.eval(&xm, &mut vm);
        for i in 0..d {
            out[i] = (vp[i] - vm[i]) / (2.0 * h);
        }
    }

    /// Row-wise evaluation of an `n x d` batch.
    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((xs.nrows(), d));
        let mut buf = vec![0.0; d];
        for (row, mut dst) in xs.outer_iter().zip(out.outer_iter_mut()) {
            let x: Vec<f64> = row.to_vec();
            self.eval(&x, &mut buf);
            dst.iter_mut().zip(&buf).for_each(|(o, v)| *o = *v);
        }
        out
    }

    fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, &mut out);
        out
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval(x, out)
    }
    fn jvp(&self, x: &[f64], dir: &[f64], out: &mut [f64]) {
        (**self).jvp(x, dir, out)
    }
    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        (**self).eval_batch(xs)
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval(x, out)
    }
    fn jvp(&self, x: &[f64], dir: &[f64], out: &mut [f64]) {
        (**self).jvp(x, dir, out)
    }
    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        (**self).eval_batch(xs)
    }
}

/// `v(x) = A x`.
#[derive(Clone, Debug)]
pub struct LinearField {
    pub matrix: Array2<f64>,
}

impl LinearField {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::shape("square matrix", format!("{:?}", matrix.dim())));
        }
        Ok(Self { matrix })
    }

    /// Planar rotation `(x, y) -> omega * (-y, x)`.
    pub fn rotation(omega: f64) -> Self {
        Self {
            matrix: ndarray::arr2(&[[0.0, -omega], [omega, 0.0]]),
        }
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().sum()
    }
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.matrix.outer_iter()) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn jvp(&self, _x: &[f64], dir: &[f64], out: &mut [f64]) {
        self.eval(dir, out)
    }

    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        xs.dot(&self.matrix.t())
    }
}

/// Identically zero field.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField(pub usize);

impl VelocityField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn jvp(&self, _x: &[f64], _dir: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type JvpFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Field backed by closures, with an optional analytic Jacobian-vector product.
pub struct FnField {
    dim: usize,
    f: Box<EvalFn>,
    jvp: Option<Box<JvpFn>>,
}

impl FnField {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Box::new(f),
            jvp: None,
        }
    }

    pub fn with_jvp(
        mut self,
        jvp: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jvp = Some(Box::new(jvp));
        self
    }
}

impl VelocityField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    fn jvp(&self, x: &[f64], dir: &[f64], out: &mut [f64]) {
        match &self.jvp {
            Some(j) => j(x, dir, out),
            None => {
                // central difference fallback, identical to the trait default
                let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let h = 1e-5 * scale;
                let xp: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + h * b).collect();
                let xm: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a - h * b).collect();
                let mut vp = vec![0.0; self.dim];
                let mut vm = vec![0.0; self.dim];
                (self.f)(&xp, &mut vp);
                (self.f)(&xm, &mut vm);
                for i in 0..self.dim {
                    out[i] = (vp[i] - vm[i]) / (2.0 * h);
                }
            }
        }
    }
}

/// `-v(x)` for a wrapped field.
pub struct Negated<F>(pub F);

impl<F: VelocityField> VelocityField for Negated<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.0.eval(x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
    fn jvp(&self, x: &[f64], dir: &[f64], out: &mut [f64]) {
        self.0.jvp(x, dir, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
    fn eval_batch(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        -self.0.eval_batch(xs)
    }
}

/// Divergence computed as the trace of the Jacobian, one axis at a time.
pub fn divergence_exact<F: VelocityField + ?Sized>(field: &F, x: &[f64]) -> f64 {
    let d = field.dim();
    let mut e = vec![0.0; d];
    let mut col = vec![0.0; d];
    let mut tr = 0.0;
    for i in 0..d {
        e[i] = 1.0;
        field.jvp(x, &e, &mut col);
        tr += col[i];
        e[i] = 0.0;
    }
    tr
}

/// Central-difference divergence with step `h` along each input axis.
pub fn divergence_fd<F: VelocityField + ?Sized>(field: &F, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let d = field.dim();
    let mut xs = x.to_vec();
    let mut vp = vec![0.0; d];
    let mut vm = vec![0.0; d];
    let mut div = 0.0;
    for i in 0..d {
        xs[i] = x[i] + h;
        field.eval(&xs, &mut vp);
        xs[i] = x[i] - h;
        field.eval(&xs, &mut vm);
        xs[i] = x[i];
        div += (vp[i] - vm[i]) / (2.0 * h);
    }
    Ok(div)
}

/// Hutchinson estimate `(1/k) sum_j z_j^T J z_j` for explicit probe vectors.
pub fn divergence_hutchinson_with<F: VelocityField + ?Sized>(
    field: &F,
    x: &[f64],
    probes: &[Vec<f64>],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("at least one probe is required"));
    }
    let d = field.dim();
    let mut jz = vec![0.0; d];
    let mut acc = 0.0;
    for z in probes {
        if z.len() != d {
            return Err(Error::shape(d, z.len()));
        }
        field.jvp(x, z, &mut jz);
        acc += z.iter().zip(&jz).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc / probes.len() as f64)
}

/// Hutchinson estimate with `k` standard-normal probes drawn from `rng`.
pub fn divergence_hutchinson<F: VelocityField + ?Sized>(
    field: &F,
    x: &[f64],
    k: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let d = field.dim();
    let mut z = vec![0.0; d];
    let mut jz = vec![0.0; d];
    let mut acc = 0.0;
    for _ in 0..k {
        rng::fill_normal(rng, &mut z);
        field.jvp(x, &z, &mut jz);
        acc += z.iter().zip(&jz).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc / k as f64)
}

fn check_finite(values: &[f64], step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(format!("state diverged at step {step}")))
    }
}

/// Classical fourth-order Runge-Kutta. Returns `steps + 1` states.
pub fn integrate_rk4<F: VelocityField + ?Sized>(
    field: &F,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let d = field.dim();
    if x0.len() != d {
        return Err(Error::shape(d, x0.len()));
    }
    let mut traj = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    check_finite(&x, 0)?;
    traj.push(x.clone());
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for step in 1..=steps {
        rk4_step(field, &mut x, dt, [&mut k1, &mut k2, &mut k3, &mut k4], &mut tmp);
        check_finite(&x, step)?;
        traj.push(x.clone());
    }
    Ok(traj)
}

pub(crate) fn rk4_step<F: VelocityField + ?Sized>(
    field: &F,
    x: &mut [f64],
    dt: f64,
    k: [&mut Vec<f64>; 4],
    tmp: &mut [f64],
) {
    let [k1, k2, k3, k4] = k;
    let d = x.len();
    field.eval(x, k1);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    field.eval(tmp, k2);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    field.eval(tmp, k3);
    for i in 0..d {
        tmp[i] = x[i] + dt * k3[i];
    }
    field.eval(tmp, k4);
    for i in 0..d {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// One RK4 step applied to every row of `xs`, using batched field evaluation.
pub fn rk4_step_batch<F: VelocityField + ?Sized>(field: &F, xs: &mut Array2<f64>, dt: f64) -> Result<()> {
    let k1 = field.eval_batch(xs.view());
    let k2 = field.eval_batch((&*xs + &(&k1 * (0.5 * dt))).view());
    let k3 = field.eval_batch((&*xs + &(&k2 * (0.5 * dt))).view());
    let k4 = field.eval_batch((&*xs + &(&k3 * dt)).view());
    let incr = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    *xs += &incr;
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite("batched trajectory diverged"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn quad() -> FnField {
        FnField::new(2, |x, o| {
            o[0] = x[0] * x[0];
            o[1] = x[1] * x[1];
        })
    }

    #[test]
    fn exact_divergence_of_linear_fields() {
        let a = LinearField::new(arr2(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        for x in [[0.0, 0.0], [1.5, -2.0], [10.0, 3.0]] {
            assert_eq!(divergence_exact(&a, &x), 5.0);
        }
        let neg = LinearField::new(-Array2::<f64>::eye(3)).unwrap();
        assert_eq!(divergence_exact(&neg, &[0.3, 0.1, -0.7]), -3.0);
    }

    #[test]
    fn exact_divergence_of_quadratic_uses_difference_fallback() {
        let f = quad();
        assert!((divergence_exact(&f, &[1.0, 2.0]) - 6.0).abs() < 1e-8);
        let f = quad().with_jvp(|x, d, o| {
            o[0] = 2.0 * x[0] * d[0];
            o[1] = 2.0 * x[1] * d[1];
        });
        assert_eq!(divergence_exact(&f, &[1.0, 2.0]), 6.0);
    }

    #[test]
    fn fd_divergence_is_exact_on_linear_and_quadratic_fields() {
        let a = LinearField::new(arr2(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        for h in [1e-3, 0.1, 1.0, 7.5] {
            assert!((divergence_fd(&a, &[0.2, -0.4], h).unwrap() - 5.0).abs() < 1e-12);
        }
        let f = FnField::new(2, |x, o| {
            o[0] = x[0] * x[0];
            o[1] = 0.0;
        });
        assert!((divergence_fd(&f, &[1.0, 0.0], 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert!(divergence_fd(&f, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn hutchinson_single_probe_is_quadratic_form() {
        let a = LinearField::new(arr2(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        let x = [0.0, 0.0];
        assert_eq!(divergence_hutchinson_with(&a, &x, &[vec![1.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(divergence_hutchinson_with(&a, &x, &[vec![1.0, 1.0]]).unwrap(), 10.0);
        assert!(divergence_hutchinson_with(&a, &x, &[]).is_err());
    }

    #[test]
    fn hutchinson_error_shrinks_with_probe_count() {
        let a = LinearField::new(arr2(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        let mut rng = crate::rng::seeded(11);
        let mean_err = |k: usize, rng: &mut Rng| {
            let reps = 200;
            (0..reps)
                .map(|_| (divergence_hutchinson(&a, &[0.0, 0.0], k, rng).unwrap() - 5.0).abs())
                .sum::<f64>()
                / reps as f64
        };
        let e100 = mean_err(100, &mut rng);
        let e10k = mean_err(10_000, &mut rng);
        // 1/sqrt(k) scaling predicts a ratio of 10
        assert!(e100 / e10k > 5.0 && e100 / e10k < 20.0, "{e100} {e10k}");
    }

    #[test]
    fn hutchinson_large_k_is_close_to_trace() {
        let a = LinearField::new(arr2(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        let mut rng = crate::rng::seeded(3);
        let est = divergence_hutchinson(&a, &[0.0, 0.0], 100_000, &mut rng).unwrap();
        assert!((est - 5.0).abs() < 0.05, "{est}");
    }

    #[test]
    fn rk4_zero_field_and_exponential_decay() {
        let traj = integrate_rk4(&ZeroField(2), &[1.0, -2.0], 0.1, 5).unwrap();
        assert_eq!(traj.len(), 6);
        assert!(traj.iter().all(|x| x == &vec![1.0, -2.0]));

        let decay = LinearField::new(arr2(&[[-1.0]])).unwrap();
        let traj = integrate_rk4(&decay, &[1.0], 0.1, 1).unwrap();
        assert!((traj[1][0] - 0.904_837_5).abs() < 1e-7);
        assert!((traj[1][0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_conserves_norm_under_rotation() {
        let rot = LinearField::rotation(1.0);
        let traj = integrate_rk4(&rot, &[1.0, 0.0], 0.01, 1000).unwrap();
        let r = traj.last().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let decay = LinearField::new(arr2(&[[-1.0]])).unwrap();
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let x = integrate_rk4(&decay, &[1.0], dt, steps).unwrap();
            (x[steps][0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 8.0 * 0.9, "{ratio}");
    }

    #[test]
    fn rk4_reports_blow_up() {
        let f = FnField::new(1, |x, o| o[0] = x[0] * x[0]);
        let res = integrate_rk4(&f, &[10.0], 1.0, 50);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn batched_step_matches_single() {
        let rot = LinearField::rotation(0.7);
        let mut xs = arr2(&[[1.0, 0.0], [0.3, -2.0]]);
        rk4_step_batch(&rot, &mut xs, 0.1).unwrap();
        for (i, x0) in [[1.0, 0.0], [0.3, -2.0]].iter().enumerate() {
            let t = integrate_rk4(&rot, x0, 0.1, 1).unwrap();
            assert!((xs[[i, 0]] - t[1][0]).abs() < 1e-14);
            assert!((xs[[i, 1]] - t[1][1]).abs() < 1e-14);
        }
    }
}
