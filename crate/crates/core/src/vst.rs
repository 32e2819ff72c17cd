//! Variance stabilization for Poisson data.
//!
//! The forward path is the Anscombe transform followed by a global affine
//! rescaling of the stack to `[0, 1]`; the inverse path undoes the rescaling
//! and applies the closed-form approximation of the exact unbiased inverse.

use crate::error::{Error, Result};
use crate::imgio::{Frame, FrameStack};

/// Image of `z = 0` under the Anscombe transform, `2 sqrt(3/8)`.
pub const ANSCOMBE_FLOOR: f64 = 1.224_744_871_391_589;

/// Affine rescaling parameters captured from stabilized data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VstState {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Unit stabilized noise expressed in rescaled units.
    pub sigma_rescaled: f64,
}

impl VstState {
    pub fn new(scale_min: f64, scale_max: f64) -> Result<Self> {
        if !(scale_max > scale_min) || !scale_min.is_finite() || !scale_max.is_finite() {
            return Err(Error::Degenerate(format!(
                "rescaling range [{scale_min}, {scale_max}] is empty"
            )));
        }
        Ok(Self {
            scale_min,
            scale_max,
            sigma_rescaled: 1.0 / (scale_max - scale_min),
        })
    }

    pub fn range(&self) -> f64 {
        self.scale_max - self.scale_min
    }
}

#[inline]
pub fn anscombe(z: f64) -> f64 {
    2.0 * (z + 0.375).sqrt()
}

/// Algebraic inverse `(D/2)^2 - 3/8`.
#[inline]
pub fn anscombe_algebraic_inverse(d: f64) -> f64 {
    (d / 2.0).powi(2) - 0.375
}

/// Closed-form approximation of the exact unbiased inverse, with inputs
/// below `2 sqrt(3/8)` mapped to zero.
#[inline]
pub fn unbiased_inverse(d: f64) -> f64 {
    if d <= ANSCOMBE_FLOOR {
        return 0.0;
    }
    let c = 1.5f64.sqrt();
    let inv = 1.0 / d;
    let v = 0.25 * d * d + 0.25 * c * inv - 1.375 * inv * inv + 0.625 * c * inv * inv * inv - 0.125;
    v.max(0.0)
}

/// Element-wise `2 sqrt(z + 3/8)`.
pub fn anscombe_forward(f: &Frame) -> Result<Frame> {
    if let Some((index, &value)) = f.data().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeValue { index, value });
    }
    Ok(f.map(anscombe))
}

pub fn anscombe_forward_stack(stack: &FrameStack) -> Result<FrameStack> {
    FrameStack::new(stack.iter().map(anscombe_forward).collect::<Result<Vec<_>>>()?)
}

/// Element-wise closed-form exact unbiased inverse.
pub fn exact_unbiased_inverse_cf(d: &Frame) -> Frame {
    d.map(unbiased_inverse)
}

/// Maps the whole stack to `[0, 1]` with one shared min/max.
pub fn rescale_to_unit(stack: &FrameStack) -> Result<(FrameStack, VstState)> {
    let (lo, hi) = stack.min_max();
    let state = VstState::new(lo, hi)?;
    let scale = state.sigma_rescaled;
    Ok((stack.map(|f| f.map(|v| (v - lo) * scale)), state))
}

pub fn rescale_back(f: &Frame, s: &VstState) -> Frame {
    let range = s.range();
    f.map(|v| v * range + s.scale_min)
}

/// Forward half of the pipeline: Anscombe, then rescale to `[0, 1]`.
pub fn stabilize(stack: &FrameStack) -> Result<(FrameStack, VstState)> {
    rescale_to_unit(&anscombe_forward_stack(stack)?)
}

/// Inverse half of the pipeline: rescale back, then the unbiased inverse.
pub fn destabilize(f: &Frame, s: &VstState) -> Frame {
    exact_unbiased_inverse_cf(&rescale_back(f, s))
}
