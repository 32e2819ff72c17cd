//! Fourier low-pass prefilter used to make step-1 block matching robust.
//!
//! The transfer function is flat inside a disc of radius `sigma_lp / 2` and
//! decays like a Gaussian outside it. Frequencies are integer indices of a
//! centered spectrum, rescaled per axis to a 256-sample grid so one
//! `sigma_lp` means the same cutoff for every image size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{Frame, FrameStack};

/// Grid size on which `sigma_lp` is expressed.
pub const REFERENCE_GRID: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterShape {
    /// `exp(-(|x| - s/2)^2 / (2 (s/2)^2))` outside the passband.
    #[default]
    Radial,
    /// `exp(-((x - s/2)^2 + (y - s/2)^2) / (2 (s/2)^2))` outside the
    /// passband, with signed frequency components.
    Componentwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowPassSpec {
    pub sigma_lp: f64,
    #[serde(default)]
    pub shape: FilterShape,
}

impl LowPassSpec {
    pub fn new(sigma_lp: f64) -> Result<Self> {
        let spec = Self {
            sigma_lp,
            shape: FilterShape::Radial,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_lp > 0.0 && self.sigma_lp.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_lp must be positive, got {}",
                self.sigma_lp
            )));
        }
        Ok(())
    }

    /// Filter gain at frequency `(fx, fy)` in reference-grid units.
    pub fn gain(&self, fx: f64, fy: f64) -> f64 {
        let half = self.sigma_lp / 2.0;
        let radius = fx.hypot(fy);
        if radius < half {
            return 1.0;
        }
        let denom = 2.0 * half * half;
        match self.shape {
            FilterShape::Radial => (-(radius - half).powi(2) / denom).exp(),
            FilterShape::Componentwise => (-((fx - half).powi(2) + (fy - half).powi(2)) / denom).exp(),
        }
    }
}

/// Signed frequency index of FFT bin `k` out of `n`.
#[inline]
fn signed_index(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Filters one frame; the imaginary residue of the inverse FFT is dropped.
pub fn lowpass(f: &Frame, spec: &LowPassSpec) -> Frame {
    let (w, h) = f.dims();
    let mut planner = FftPlanner::<f64>::new();
    let row_fwd = planner.plan_fft_forward(w);
    let row_inv = planner.plan_fft_inverse(w);
    let col_fwd = planner.plan_fft_forward(h);
    let col_inv = planner.plan_fft_inverse(h);

    let mut buf: Vec<Complex<f64>> = f.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        row_fwd.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    let sx = REFERENCE_GRID / w as f64;
    let sy = REFERENCE_GRID / h as f64;
    for c in 0..w {
        for (r, v) in column.iter_mut().enumerate() {
            *v = buf[r * w + c];
        }
        col_fwd.process(&mut column);
        let fx = signed_index(c, w) * sx;
        for (r, v) in column.iter_mut().enumerate() {
            *v *= spec.gain(fx, signed_index(r, h) * sy);
        }
        col_inv.process(&mut column);
        for (r, v) in column.iter().enumerate() {
            buf[r * w + c] = *v;
        }
    }
    for row in buf.chunks_exact_mut(w) {
        row_inv.process(row);
    }
    let norm = 1.0 / (w * h) as f64;
    Frame::new(w, h, buf.iter().map(|v| v.re * norm).collect()).expect("finite FFT output")
}

pub fn lowpass_stack(stack: &FrameStack, spec: &LowPassSpec) -> FrameStack {
    stack.map(|f| lowpass(f, spec))
}
