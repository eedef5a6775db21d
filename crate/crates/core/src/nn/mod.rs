//! Minimal f64 neural-network layers with hand-written backward passes.

pub mod attention;
pub mod layers;
pub mod params;

pub use layers::{Conv2d, Fmap, Linear, MaxPool2d, Upsample};
pub use params::{Grads, ParamCount, ParamId, ParamSet, Tensor};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Maps an unbounded score into the MOS range: `1 + 4·σ(z)`.
pub fn range_head(z: f64) -> f64 {
    1.0 + 4.0 * sigmoid(z.clamp(-RANGE_LOGIT_LIMIT, RANGE_LOGIT_LIMIT))
}

/// Logits beyond this magnitude are clamped so the output stays strictly
/// inside (1, 5) in f64.
pub const RANGE_LOGIT_LIMIT: f64 = 30.0;

/// d(range_head)/dz.
pub fn range_head_grad(z: f64) -> f64 {
    if z.abs() > RANGE_LOGIT_LIMIT {
        return 0.0;
    }
    let s = sigmoid(z);
    4.0 * s * (1.0 - s)
}

/// Inverse of [`range_head`] for values strictly inside (1, 5).
pub fn range_head_inverse(mos: f64) -> f64 {
    let s = (mos - 1.0) / 4.0;
    (s / (1.0 - s)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_head_midpoint_and_bounds() {
        assert_eq!(range_head(0.0), 3.0);
        assert!(range_head(1e6) < 5.0 && range_head(-1e6) > 1.0);
        assert_eq!(range_head_grad(40.0), 0.0);
        assert!((range_head(range_head_inverse(2.2)) - 2.2).abs() < 1e-12);
    }
}
