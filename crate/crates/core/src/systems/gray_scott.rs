//! Two-species Gray-Scott reaction-diffusion on a periodic lattice.

use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Rates per unit step. `lap_scale` multiplies the 5-point stencil (it is `1/dx^2`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrayScottParams {
    pub du: f64,
    pub dv: f64,
    pub feed: f64,
    pub kill: f64,
    pub lap_scale: f64,
}

/// Stencil scale used by the presets. With a unit spacing the soliton and spiral
/// regimes decay to the uniform state on the desk-scale grid.
pub const PRESET_LAP_SCALE: f64 = 0.3;

pub const PRESETS: [&str; 4] = ["life", "wave", "spirals", "maze"];

pub fn gray_scott_preset(name: &str) -> Result<GrayScottParams> {
    let (feed, kill) = match name {
        "life" => (0.006, 0.045),
        "wave" => (0.018, 0.049),
        "spirals" => (0.007, 0.028),
        "maze" => (0.029, 0.057),
        other => return Err(Error::Unknown { kind: "gray-scott preset", name: other.into() }),
    };
    Ok(GrayScottParams { du: 0.16, dv: 0.08, feed, kill, lap_scale: PRESET_LAP_SCALE })
}

/// `c x h x w` field on a torus, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl GridState {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(c * h * w, data.len()));
        }
        Ok(Self { c, h, w, data })
    }

    /// Two channels, `u = 1`, `v = 0` everywhere.
    pub fn uniform(h: usize, w: usize) -> Self {
        let mut data = vec![1.0; 2 * h * w];
        data[h * w..].fill(0.0);
        Self { c: 2, h, w, data }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 5-point periodic Laplacian (unit spacing).
pub fn laplacian(f: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for y in 0..h {
        let up = if y == 0 { h - 1 } else { y - 1 } * w;
        let dn = if y + 1 == h { 0 } else { y + 1 } * w;
        let row = y * w;
        for x in 0..w {
            let l = if x == 0 { w - 1 } else { x - 1 };
            let r = if x + 1 == w { 0 } else { x + 1 };
            out[row + x] = f[up + x] + f[dn + x] + f[row + l] + f[row + r] - 4.0 * f[row + x];
        }
    }
}

/// Reusable buffers for stepping.
pub struct Stepper {
    lu: Vec<f64>,
    lv: Vec<f64>,
}

impl Stepper {
    pub fn new(h: usize, w: usize) -> Self {
        Self { lu: vec![0.0; h * w], lv: vec![0.0; h * w] }
    }

    /// One explicit Euler step in place.
    pub fn step(&mut self, s: &mut GridState, p: &GrayScottParams, dt: f64) {
        let hw = s.h * s.w;
        if self.lu.len() != hw {
            *self = Self::new(s.h, s.w);
        }
        let (u, v) = s.data.split_at_mut(hw);
        laplacian(u, s.h, s.w, &mut self.lu);
        laplacian(v, s.h, s.w, &mut self.lv);
        let (du, dv) = (p.du * p.lap_scale, p.dv * p.lap_scale);
        for i in 0..hw {
            let (ui, vi) = (u[i], v[i]);
            let uvv = ui * vi * vi;
            u[i] = ui + dt * (du * self.lu[i] - uvv + p.feed * (1.0 - ui));
            v[i] = vi + dt * (dv * self.lv[i] + uvv - (p.feed + p.kill) * vi);
        }
    }
}

pub fn gray_scott_step(state: &GridState, p: &GrayScottParams, dt: f64) -> Result<GridState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if state.c != 2 {
        return Err(Error::shape(2, state.c));
    }
    let mut next = state.clone();
    Stepper::new(state.h, state.w).step(&mut next, p, dt);
    if !next.is_finite() {
        return Err(Error::non_finite("gray-scott state"));
    }
    Ok(next)
}

/// Runs `steps` steps in place, checking finiteness at the end.
pub fn evolve(state: &mut GridState, p: &GrayScottParams, dt: f64, steps: usize) -> Result<()> {
    let mut st = Stepper::new(state.h, state.w);
    for _ in 0..steps {
        st.step(state, p, dt);
    }
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite(format!("gray-scott state after {steps} steps")))
    }
}

pub const SPLOTCH: usize = 6;

/// Uniform background plus 5 to 20 random `6 x 6` patches with `u = v = 0.5`,
/// placed with wrap-around.
pub fn seed_state(h: usize, w: usize, rng: &mut Rng) -> GridState {
    let mut s = GridState::uniform(h, w);
    let hw = h * w;
    let count = rng.random_range(5..=20);
    for _ in 0..count {
        let y0 = rng.random_range(0..h);
        let x0 = rng.random_range(0..w);
        for dy in 0..SPLOTCH {
            for dx in 0..SPLOTCH {
                let i = ((y0 + dy) % h) * w + (x0 + dx) % w;
                s.data[i] = 0.5;
                s.data[hw + i] = 0.5;
            }
        }
    }
    s
}

#[derive(Clone, Debug)]
pub struct TuringDatasetConfig {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub burn_in: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for TuringDatasetConfig {
    fn default() -> Self {
        Self { n: 256, h: 64, w: 64, burn_in: 4000, dt: 1.0, seed: 0 }
    }
}

/// One run of the dataset: seeded from `(seed, index)` and evolved `burn_in` steps.
pub fn turing_run(p: &GrayScottParams, cfg: &TuringDatasetConfig, index: usize) -> Result<GridState> {
    let mut rng = rng::stream(cfg.seed, "gray-scott-run", index as u64);
    let mut s = seed_state(cfg.h, cfg.w, &mut rng);
    evolve(&mut s, p, cfg.dt, cfg.burn_in).map_err(|_| Error::non_finite(format!("run {index} diverged")))?;
    Ok(s)
}

/// `n` independent final states, one per row (`2 h w` columns).
pub fn generate_turing_dataset(p: &GrayScottParams, cfg: &TuringDatasetConfig, jobs: usize) -> Result<Array2<f64>> {
    if cfg.burn_in == 0 || cfg.n == 0 {
        return Err(Error::invalid("burn_in and n must be positive"));
    }
    let len = 2 * cfg.h * cfg.w;
    let jobs = jobs.clamp(1, cfg.n);
    let mut rows: Vec<Option<Result<GridState>>> = (0..cfg.n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (j, chunk) in rows.chunks_mut(cfg.n.div_ceil(jobs)).enumerate() {
            let base = j * cfg.n.div_ceil(jobs);
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(turing_run(p, cfg, base + k));
                }
            });
        }
    });
    let mut out = Array2::zeros((cfg.n, len));
    for (i, r) in rows.into_iter().enumerate() {
        let s = r.unwrap()?;
        out.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&s.data);
    }
    Ok(out)
}

/// Mean of `|x_{t+1} - x_t| / |x_t|` over `steps` further steps.
pub fn mean_relative_change(state: &GridState, p: &GrayScottParams, dt: f64, steps: usize) -> f64 {
    let mut s = state.clone();
    let mut st = Stepper::new(s.h, s.w);
    let mut acc = 0.0;
    for _ in 0..steps {
        let prev = s.data.clone();
        st.step(&mut s, p, dt);
        let num: f64 = s.data.iter().zip(&prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = prev.iter().map(|a| a * a).sum::<f64>().sqrt();
        acc += num / den;
    }
    acc / steps.max(1) as f64
}
