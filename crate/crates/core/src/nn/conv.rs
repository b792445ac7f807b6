//! Periodic-boundary convolutional encoder-decoder (single precision).
//!
//! Activations are stored as `channels x (batch * height * width)` matrices so
//! that channel concatenation is a row stack and every convolution is one GEMM
//! against an im2col buffer.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

#[inline]
fn silu32(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

#[inline]
fn silu32_d1(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Batch geometry of an activation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl Geom {
    pub fn pixels(&self) -> usize {
        self.batch * self.h * self.w
    }

    fn half(&self) -> Geom {
        Geom { batch: self.batch, h: self.h / 2, w: self.w / 2 }
    }
}

/// Square convolution with circular padding `k / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    /// `cout x (cin * k * k)`
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Conv2d {
    pub fn init(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * k * k;
        let bound = 1.0 / (fan_in as f32).sqrt();
        Self {
            cin,
            cout,
            k,
            stride,
            weight: Array2::from_shape_fn((cout, fan_in), |_| rng.random_range(-bound..bound)),
            bias: Array1::from_shape_fn(cout, |_| rng.random_range(-bound..bound)),
        }
    }

    fn out_geom(&self, g: Geom) -> Geom {
        if self.stride == 2 {
            g.half()
        } else {
            g
        }
    }

    fn im2col(&self, x: &Array2<f32>, g: Geom) -> Array2<f32> {
        let og = self.out_geom(g);
        if self.k == 1 && self.stride == 1 {
            return x.clone();
        }
        let (k, pad, st) = (self.k, (self.k / 2) as isize, self.stride);
        let mut cols = Array2::<f32>::zeros((self.cin * k * k, og.pixels()));
        let xs = x.as_slice().expect("contiguous activation");
        let ncol = og.pixels();
        let cs = cols.as_slice_mut().unwrap();
        let (h, w) = (g.h as isize, g.w as isize);
        for ci in 0..self.cin {
            let src = &xs[ci * g.pixels()..(ci + 1) * g.pixels()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cs[row * ncol..(row + 1) * ncol];
                    for b in 0..g.batch {
                        let sb = &src[b * g.h * g.w..(b + 1) * g.h * g.w];
                        let db = &mut dst[b * og.h * og.w..(b + 1) * og.h * og.w];
                        for oy in 0..og.h {
                            let iy = ((oy * st) as isize + ky as isize - pad).rem_euclid(h) as usize;
                            let srow = &sb[iy * g.w..(iy + 1) * g.w];
                            let drow = &mut db[oy * og.w..(oy + 1) * og.w];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = ((ox * st) as isize + kx as isize - pad).rem_euclid(w) as usize;
                                *d = srow[ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f32>, g: Geom) -> Array2<f32> {
        if self.k == 1 && self.stride == 1 {
            return cols.clone();
        }
        let og = self.out_geom(g);
        let (k, pad, st) = (self.k, (self.k / 2) as isize, self.stride);
        let mut x = Array2::<f32>::zeros((self.cin, g.pixels()));
        let xs = x.as_slice_mut().unwrap();
        let cs = cols.as_slice().expect("contiguous columns");
        let ncol = og.pixels();
        let (h, w) = (g.h as isize, g.w as isize);
        for ci in 0..self.cin {
            let dst = &mut xs[ci * g.pixels()..(ci + 1) * g.pixels()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cs[row * ncol..(row + 1) * ncol];
                    for b in 0..g.batch {
                        let sb = &src[b * og.h * og.w..(b + 1) * og.h * og.w];
                        let db = &mut dst[b * g.h * g.w..(b + 1) * g.h * g.w];
                        for oy in 0..og.h {
                            let iy = ((oy * st) as isize + ky as isize - pad).rem_euclid(h) as usize;
                            let srow = &sb[oy * og.w..(oy + 1) * og.w];
                            let drow = &mut db[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in srow.iter().enumerate() {
                                let ix = ((ox * st) as isize + kx as isize - pad).rem_euclid(w) as usize;
                                drow[ix] += *v;
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the im2col buffer needed for the backward pass.
    pub fn forward(&self, x: &Array2<f32>, g: Geom) -> (Array2<f32>, Array2<f32>) {
        let cols = self.im2col(x, g);
        let mut out = self.weight.dot(&cols);
        out += &self.bias.view().insert_axis(Axis(1));
        (out, cols)
    }

    /// Returns `(d_input, d_weight, d_bias)`.
    pub fn backward(&self, cols: &Array2<f32>, d_out: &Array2<f32>, g: Geom, need_input: bool) -> (Option<Array2<f32>>, Array2<f32>, Array1<f32>) {
        let dw = d_out.dot(&cols.t());
        let db = d_out.sum_axis(Axis(1));
        let dx = need_input.then(|| {
            let dcols = self.weight.t().dot(d_out);
            self.col2im(&dcols, g)
        });
        (dx, dw, db)
    }
}

fn upsample(x: &Array2<f32>, g: Geom) -> Array2<f32> {
    let (h2, w2) = (g.h * 2, g.w * 2);
    let mut out = Array2::<f32>::zeros((x.nrows(), g.batch * h2 * w2));
    for (src, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
        let src = src.as_slice().unwrap();
        let dst = dst.as_slice_mut().unwrap();
        for b in 0..g.batch {
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[b * h2 * w2 + y * w2 + xx] = src[b * g.h * g.w + (y / 2) * g.w + xx / 2];
                }
            }
        }
    }
    out
}

fn upsample_backward(d: &Array2<f32>, g: Geom) -> Array2<f32> {
    let (h2, w2) = (g.h * 2, g.w * 2);
    let mut out = Array2::<f32>::zeros((d.nrows(), g.pixels()));
    for (src, mut dst) in d.outer_iter().zip(out.outer_iter_mut()) {
        let src = src.as_slice().unwrap();
        let dst = dst.as_slice_mut().unwrap();
        for b in 0..g.batch {
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[b * g.h * g.w + (y / 2) * g.w + xx / 2] += src[b * h2 * w2 + y * w2 + xx];
                }
            }
        }
    }
    out
}

/// Encoder-decoder with skip connections: widths `w0 -> w1 -> w2` going down
/// (stride-2 convolutions), mirrored going up (nearest upsampling).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUNet {
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: [usize; 3],
    pub enc1: Conv2d,
    pub enc2: Conv2d,
    pub enc3: Conv2d,
    pub mid: Conv2d,
    pub dec2: Conv2d,
    pub dec1: Conv2d,
    pub head: Conv2d,
}

pub struct UNetCache {
    g: Geom,
    cols: [Array2<f32>; 7],
    pre: [Array2<f32>; 6],
}

impl ConvUNet {
    pub fn new(in_channels: usize, out_channels: usize, widths: [usize; 3], rng: &mut Rng) -> Self {
        let [a, b, c] = widths;
        Self {
            in_channels,
            out_channels,
            widths,
            enc1: Conv2d::init(in_channels, a, 3, 1, rng),
            enc2: Conv2d::init(a, b, 3, 2, rng),
            enc3: Conv2d::init(b, c, 3, 2, rng),
            mid: Conv2d::init(c, c, 3, 1, rng),
            dec2: Conv2d::init(c + b, b, 3, 1, rng),
            dec1: Conv2d::init(b + a, a, 3, 1, rng),
            head: Conv2d::init(a, out_channels, 1, 1, rng),
        }
    }

    pub fn convs(&self) -> [&Conv2d; 7] {
        [&self.enc1, &self.enc2, &self.enc3, &self.mid, &self.dec2, &self.dec1, &self.head]
    }

    fn convs_mut(&mut self) -> [&mut Conv2d; 7] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc3,
            &mut self.mid,
            &mut self.dec2,
            &mut self.dec1,
            &mut self.head,
        ]
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.convs().iter().flat_map(|c| [c.weight.len(), c.bias.len()]).collect()
    }

    pub fn params(&self) -> Vec<&[f32]> {
        self.convs()
            .into_iter()
            .flat_map(|c| [c.weight.as_slice().unwrap(), c.bias.as_slice().unwrap()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        self.convs_mut()
            .into_iter()
            .flat_map(|c| [c.weight.as_slice_mut().unwrap(), c.bias.as_slice_mut().unwrap()])
            .collect()
    }

    pub fn check_geometry(&self, g: Geom) -> bool {
        g.h % 4 == 0 && g.w % 4 == 0 && g.h >= 4 && g.w >= 4
    }

    pub fn forward(&self, x: &Array2<f32>, g: Geom) -> Array2<f32> {
        self.run(x, g).0
    }

    pub fn forward_cached(&self, x: &Array2<f32>, g: Geom) -> (Array2<f32>, UNetCache) {
        self.run(x, g)
    }

    fn run(&self, x: &Array2<f32>, g: Geom) -> (Array2<f32>, UNetCache) {
        let g1 = g;
        let g2 = g1.half();
        let g3 = g2.half();
        let (p1, c1) = self.enc1.forward(x, g1);
        let a1 = p1.mapv(silu32);
        let (p2, c2) = self.enc2.forward(&a1, g1);
        let a2 = p2.mapv(silu32);
        let (p3, c3) = self.enc3.forward(&a2, g2);
        let a3 = p3.mapv(silu32);
        let (p4, c4) = self.mid.forward(&a3, g3);
        let a4 = p4.mapv(silu32);
        let u2 = concatenate![Axis(0), upsample(&a4, g3), a2];
        let (p5, c5) = self.dec2.forward(&u2, g2);
        let a5 = p5.mapv(silu32);
        let u1 = concatenate![Axis(0), upsample(&a5, g2), a1];
        let (p6, c6) = self.dec1.forward(&u1, g1);
        let a6 = p6.mapv(silu32);
        let (out, c7) = self.head.forward(&a6, g1);
        let cache = UNetCache {
            g,
            cols: [c1, c2, c3, c4, c5, c6, c7],
            pre: [p1, p2, p3, p4, p5, p6],
        };
        (out, cache)
    }

    /// Gradients for every parameter tensor, in [`ConvUNet::params`] order.
    pub fn backward(&self, cache: &UNetCache, d_out: &Array2<f32>) -> Vec<Vec<f32>> {
        let g1 = cache.g;
        let g2 = g1.half();
        let g3 = g2.half();
        let [c1, c2, c3, c4, c5, c6, c7] = &cache.cols;
        let [p1, p2, p3, p4, p5, p6] = &cache.pre;
        let act_back = |d: Array2<f32>, p: &Array2<f32>| {
            let mut d = d;
            d.zip_mut_with(p, |g, &z| *g *= silu32_d1(z));
            d
        };
        let (b, c, a) = (self.widths[1], self.widths[2], self.widths[0]);

        let (d6, gw7, gb7) = self.head.backward(c7, d_out, g1, true);
        let d6 = act_back(d6.unwrap(), p6);
        let (du1, gw6, gb6) = self.dec1.backward(c6, &d6, g1, true);
        let du1 = du1.unwrap();
        let d5_up = du1.slice(s![..b, ..]).to_owned();
        let mut d1_skip = du1.slice(s![b..b + a, ..]).to_owned();
        let d5 = act_back(upsample_backward(&d5_up, g2), p5);
        let (du2, gw5, gb5) = self.dec2.backward(c5, &d5, g2, true);
        let du2 = du2.unwrap();
        let d4_up = du2.slice(s![..c, ..]).to_owned();
        let mut d2_skip = du2.slice(s![c..c + b, ..]).to_owned();
        let d4 = act_back(upsample_backward(&d4_up, g3), p4);
        let (d3, gw4, gb4) = self.mid.backward(c4, &d4, g3, true);
        let d3 = act_back(d3.unwrap(), p3);
        let (d2, gw3, gb3) = self.enc3.backward(c3, &d3, g2, true);
        d2_skip += &d2.unwrap();
        let d2 = act_back(d2_skip, p2);
        let (d1, gw2, gb2) = self.enc2.backward(c2, &d2, g1, true);
        d1_skip += &d1.unwrap();
        let d1 = act_back(d1_skip, p1);
        let (_, gw1, gb1) = self.enc1.backward(c1, &d1, g1, false);

        [gw1, gw2, gw3, gw4, gw5, gw6, gw7]
            .into_iter()
            .zip([gb1, gb2, gb3, gb4, gb5, gb6, gb7])
            .flat_map(|(w, b)| [w.into_raw_vec_and_offset().0, b.into_raw_vec_and_offset().0])
            .collect()
    }
}
