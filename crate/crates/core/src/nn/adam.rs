use num_traits::Float;

/// Adaptive moment estimation over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(lr: T, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: T::from(0.9).unwrap(),
            beta2: T::from(0.999).unwrap(),
            eps: T::from(1e-8).unwrap(),
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), self.m.len(), "parameter group count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient group count mismatch");
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scales all gradient groups so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Float>(grads: &mut [&mut [T]], max_norm: T) -> T {
    let mut sq = T::zero();
    for g in grads.iter() {
        for &x in g.iter() {
            sq = sq + x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}
