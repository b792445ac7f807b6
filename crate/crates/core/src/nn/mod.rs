//! Small hand-written neural-network kernels.
//!
//! The dense stack supports forward-mode tangents alongside reverse-mode
//! gradients, which is what the flow objective needs: the loss depends on
//! Jacobian-vector products of the network, and parameter gradients of that
//! loss need second derivatives of the activation.

mod adam;
pub mod conv;
mod encoding;
mod mlp;

pub use adam::{clip_global_norm, Adam};
pub use encoding::{encoded_width, positional_encode, positional_encode_into, positional_tangent_into};
pub use mlp::{Linear, Mlp, MlpGrads, MlpTrace};

/// Cosine decay from `base` to `base * final_frac` as `progress` goes from 0 to 1.
pub fn cosine_lr(base: f64, final_frac: f64, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    let lo = base * final_frac;
    lo + 0.5 * (base - lo) * (1.0 + (std::f64::consts::PI * p).cos())
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * sigmoid(x)`.
#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub(crate) fn silu_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_derivatives_match_differences() {
        for &x in &[-6.0, -1.3, -0.2, 0.0, 0.4, 2.5, 7.0] {
            let h = 1e-5;
            let d1 = (silu(x + h) - silu(x - h)) / (2.0 * h);
            let d2 = (silu_d1(x + h) - silu_d1(x - h)) / (2.0 * h);
            assert!((d1 - silu_d1(x)).abs() < 1e-8, "{x}");
            assert!((d2 - silu_d2(x)).abs() < 1e-8, "{x}");
        }
        assert_eq!(cosine_lr(1e-3, 0.1, 0.0), 1e-3);
        assert!((cosine_lr(1e-3, 0.1, 1.0) - 1e-4).abs() < 1e-15);
        // second derivative is nonzero away from isolated points
        assert!(silu_d2(0.0) > 0.0);
    }
}
