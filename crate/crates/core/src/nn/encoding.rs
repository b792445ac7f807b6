/// Length of `[x, encode(x)]` for a `d`-vector with `levels + 1` octaves.
pub fn encoded_width(d: usize, levels: usize) -> usize {
    d + 2 * d * (levels + 1)
}

/// `[sin(2^0 x), cos(2^0 x), ..., sin(2^n x), cos(2^n x)]`, component-wise.
///
/// Octave-major, then sine before cosine, then component.
pub fn positional_encode(x: &[f64], levels: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * x.len() * (levels + 1)];
    positional_encode_into(x, levels, &mut out);
    out
}

pub fn positional_encode_into(x: &[f64], levels: usize, out: &mut [f64]) {
    let d = x.len();
    debug_assert_eq!(out.len(), 2 * d * (levels + 1));
    for l in 0..=levels {
        let freq = (1u64 << l) as f64;
        let base = 2 * d * l;
        for (i, &xi) in x.iter().enumerate() {
            let (s, c) = (freq * xi).sin_cos();
            out[base + i] = s;
            out[base + d + i] = c;
        }
    }
}

/// Directional derivative of the encoding at `x` along `dir`.
pub fn positional_tangent_into(x: &[f64], dir: &[f64], levels: usize, out: &mut [f64]) {
    let d = x.len();
    for l in 0..=levels {
        let freq = (1u64 << l) as f64;
        let base = 2 * d * l;
        for i in 0..d {
            let (s, c) = (freq * x[i]).sin_cos();
            out[base + i] = freq * c * dir[i];
            out[base + d + i] = -freq * s * dir[i];
        }
    }
}
