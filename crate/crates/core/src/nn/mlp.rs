use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;

use super::{silu, silu_d1, silu_d2};
use crate::rng::Rng;

/// Affine layer `y = x W + b` with `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform init on `[-1/sqrt(in), 1/sqrt(in)]` for weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Dense stack with the smooth activation between layers and none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Intermediate values of a traced forward pass.
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    t_inputs: Vec<Vec<Array2<f64>>>,
    t_pre: Vec<Vec<Array2<f64>>>,
}

/// Parameter gradients, one `(dW, db)` pair per layer.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (w, b) in &mut self.layers {
            out.push(w.as_slice_mut().expect("contiguous gradient"));
            out.push(b.as_slice_mut().expect("contiguous gradient"));
        }
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (w, b) in &self.layers {
            out.push(w.as_slice().expect("contiguous gradient"));
            out.push(b.as_slice().expect("contiguous gradient"));
        }
        out
    }
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Linear::fan_out));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("contiguous weight"));
            out.push(l.bias.as_slice_mut().expect("contiguous bias"));
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("contiguous weight"));
            out.push(l.bias.as_slice().expect("contiguous bias"));
        }
        out
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.dot(&self.layers[0].weight) + &self.layers[0].bias;
        for layer in &self.layers[1..] {
            h.mapv_inplace(silu);
            h = h.dot(&layer.weight) + &layer.bias;
        }
        h
    }

    /// Forward pass that also pushes tangents (Jacobian-vector products of the
    /// input) through the stack. Tangent matrices share rows with `x`.
    pub fn forward_tangent(&self, x: &Array2<f64>, tangents: &[Array2<f64>]) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut h = x.clone();
        let mut th: Vec<Array2<f64>> = tangents.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.weight) + &layer.bias;
            let ta: Vec<Array2<f64>> = th.iter().map(|t| t.dot(&layer.weight)).collect();
            if l == last {
                return (a, ta);
            }
            let d1 = a.mapv(silu_d1);
            th = ta.into_iter().map(|t| t * &d1).collect();
            h = a.mapv(silu);
        }
        unreachable!()
    }

    /// Traced forward pass for a later [`Mlp::backward`].
    pub fn forward_traced(
        &self,
        x: Array2<f64>,
        tangents: Vec<Array2<f64>>,
    ) -> (Array2<f64>, Vec<Array2<f64>>, MlpTrace) {
        let n = self.layers.len();
        let mut trace = MlpTrace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n - 1),
            t_inputs: Vec::with_capacity(n),
            t_pre: Vec::with_capacity(n - 1),
        };
        let mut h = x;
        let mut th = tangents;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = h.dot(&layer.weight) + &layer.bias;
            let ta: Vec<Array2<f64>> = th.iter().map(|t| t.dot(&layer.weight)).collect();
            trace.inputs.push(h);
            trace.t_inputs.push(th);
            if l == n - 1 {
                return (a, ta, trace);
            }
            let d1 = a.mapv(silu_d1);
            th = ta.iter().map(|t| t * &d1).collect();
            h = a.mapv(silu);
            trace.pre.push(a);
            trace.t_pre.push(ta);
        }
        unreachable!()
    }

    /// Reverse pass given the loss gradient with respect to the outputs and
    /// the output tangents.
    pub fn backward(&self, trace: &MlpTrace, d_out: Array2<f64>, d_tangents: Vec<Array2<f64>>) -> MlpGrads {
        let n = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n);
        let mut da = d_out;
        let mut dta = d_tangents;
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let h = &trace.inputs[l];
            let mut dw = h.t().dot(&da);
            for (t, dt) in trace.t_inputs[l].iter().zip(&dta) {
                dw += &t.t().dot(dt);
            }
            let db = da.sum_axis(Axis(0));
            grads.push((dw, db));
            if l == 0 {
                break;
            }
            let dh = da.dot(&layer.weight.t());
            let dth: Vec<Array2<f64>> = dta.iter().map(|dt| dt.dot(&layer.weight.t())).collect();
            // back through the activation of layer l-1
            let a = &trace.pre[l - 1];
            let ta = &trace.t_pre[l - 1];
            let mut new_da = Array2::zeros(a.raw_dim());
            Zip::from(&mut new_da).and(&dh).and(a).for_each(|o, &g, &z| *o = g * silu_d1(z));
            if !ta.is_empty() {
                let d2 = a.mapv(silu_d2);
                for (dt, t) in dth.iter().zip(ta) {
                    Zip::from(&mut new_da)
                        .and(dt)
                        .and(t)
                        .and(&d2)
                        .for_each(|o, &g, &tz, &s2| *o += g * tz * s2);
                }
            }
            let d1 = a.mapv(silu_d1);
            dta = dth.into_iter().map(|dt| dt * &d1).collect();
            da = new_da;
        }
        grads.reverse();
        MlpGrads { layers: grads }
    }
}
