//! Multi-frame denoising methods for Poisson stacks.
//!
//! Every method wraps the engine in the variance-stabilization pipeline:
//! Anscombe, rescale to `[0, 1]`, filter with `sigma = 1 / range`, rescale
//! back, closed-form unbiased inverse. They differ in where averaging
//! happens and in which frames provide references and matches.
//!
//! | method        | pipeline                                                    |
//! |---------------|-------------------------------------------------------------|
//! | `bm3d1`       | average frames, then single-frame BM3D                      |
//! | `bm3d2`       | single-frame BM3D on every frame, then average              |
//! | `bm3d3(r)`    | references from frame `r`, matches searched in every frame  |
//! | `bm3d4`       | references from every frame, matches in every frame         |
//! | `bm3d4_sigma` | `bm3d4` with step-1 grouping on low-passed raw frames       |
//!
//! Frames are assumed registered; no motion compensation is applied.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineConfig};
use crate::error::{Error, Result};
use crate::imgio::{Frame, FrameStack};
use crate::matching::FrameScope;
use crate::prefilter::{lowpass_stack, LowPassSpec};
use crate::vst;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bm3d1,
    Bm3d2,
    Bm3d3 { ref_frame: usize },
    Bm3d4,
    Bm3d4Sigma { lowpass: LowPassSpec },
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Bm3d1 => MethodKind::Bm3d1,
            Method::Bm3d2 => MethodKind::Bm3d2,
            Method::Bm3d3 { .. } => MethodKind::Bm3d3,
            Method::Bm3d4 => MethodKind::Bm3d4,
            Method::Bm3d4Sigma { .. } => MethodKind::Bm3d4Sigma,
        }
    }
}

/// A method without its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Bm3d1,
    Bm3d2,
    Bm3d3,
    Bm3d4,
    Bm3d4Sigma,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Bm3d1,
        MethodKind::Bm3d2,
        MethodKind::Bm3d3,
        MethodKind::Bm3d4,
        MethodKind::Bm3d4Sigma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Bm3d1 => "bm3d1",
            MethodKind::Bm3d2 => "bm3d2",
            MethodKind::Bm3d3 => "bm3d3",
            MethodKind::Bm3d4 => "bm3d4",
            MethodKind::Bm3d4Sigma => "bm3d4_sigma",
        }
    }

    /// Short column heading used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Bm3d1 => "BM-1",
            MethodKind::Bm3d2 => "BM-2",
            MethodKind::Bm3d3 => "BM-3",
            MethodKind::Bm3d4 => "BM-M",
            MethodKind::Bm3d4Sigma => "BM-Ms",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        MethodKind::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| {
                format!("unknown method '{s}' (expected bm3d1, bm3d2, bm3d3, bm3d4 or bm3d4_sigma)")
            })
    }
}

/// Pixel-wise arithmetic mean of the stack.
pub fn average_frames(stack: &FrameStack) -> Frame {
    let (w, h) = stack.dims();
    let mut sum = vec![0.0; w * h];
    for f in stack.iter() {
        for (s, v) in sum.iter_mut().zip(f.data()) {
            *s += v;
        }
    }
    let n = stack.len() as f64;
    Frame::new(w, h, sum.into_iter().map(|s| s / n).collect()).expect("mean of finite frames")
}

/// Single-frame BM3D of one Poisson frame, wrapped in the VST.
fn single_frame(frame: &Frame, cfg: &EngineConfig) -> Result<Frame> {
    let stack = FrameStack::single(frame.clone());
    let (stable, state) = vst::stabilize(&stack)?;
    let cfg = cfg
        .with_sigma(state.sigma_rescaled)
        .with_scopes(FrameScope::Single(0), FrameScope::Single(0));
    let out = engine::run(&stable, &stable, &cfg)?;
    Ok(vst::destabilize(&out, &state))
}

/// Denoises a stack of Poisson frames (raw counts) into one frame in the
/// same units.
///
/// The `sigma`, `ref_scope` and `search_scope` fields of `cfg` are set by
/// the method; all other engine parameters are taken from `cfg`.
pub fn denoise(stack: &FrameStack, method: &Method, cfg: &EngineConfig) -> Result<Frame> {
    match *method {
        Method::Bm3d1 => single_frame(&average_frames(stack), cfg),
        Method::Bm3d2 => {
            let outs = stack
                .frames()
                .par_iter()
                .map(|f| single_frame(f, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(average_frames(&FrameStack::new(outs)?))
        }
        Method::Bm3d3 { ref_frame } => {
            if ref_frame >= stack.len() {
                return Err(Error::InvalidParameter(format!(
                    "reference frame {ref_frame} out of range for {} frames",
                    stack.len()
                )));
            }
            multi_frame(stack, None, FrameScope::Single(ref_frame), cfg)
        }
        Method::Bm3d4 => multi_frame(stack, None, FrameScope::All, cfg),
        Method::Bm3d4Sigma { lowpass } => {
            lowpass.validate()?;
            let source = lowpass_stack(stack, &lowpass);
            multi_frame(stack, Some(&source), FrameScope::All, cfg)
        }
    }
}

fn multi_frame(
    stack: &FrameStack,
    match_source: Option<&FrameStack>,
    ref_scope: FrameScope,
    cfg: &EngineConfig,
) -> Result<Frame> {
    let (stable, state) = vst::stabilize(stack)?;
    let cfg = cfg
        .with_sigma(state.sigma_rescaled)
        .with_scopes(ref_scope, FrameScope::All);
    let source = match_source.unwrap_or(&stable);
    let basic = engine::hard_stage(&stable, source, &cfg)?;
    let out = engine::wiener_stage(&stable, &basic.frames, &cfg)?;
    Ok(vst::destabilize(&out, &state))
}
