//! Multi-frame BM3D denoising for Poisson-corrupted image stacks.
//!
//! The crate is organised bottom-up:
//!
//! * [`imgio`]: frames, frame stacks and PGM/PNG I/O.
//! * [`transforms`]: 2D patch transforms (bior1.5, DCT-II), the 1D
//!   Walsh-Hadamard transform along the group axis, and shrinkage.
//! * [`matching`]: reference-patch enumeration and L2 block matching within
//!   one frame or across every frame of a stack.
//! * [`engine`]: the two-step collaborative filter with per-frame and
//!   cross-frame weighted aggregation.
//! * [`vst`]: Anscombe transform, affine rescaling and the closed-form
//!   exact unbiased inverse.
//! * [`prefilter`]: Fourier low-pass used to robustify step-1 matching.
//! * [`extensions`]: the multi-frame methods built on top of the engine.
//! * [`simeval`]: Poisson noise simulation, PSNR and the benchmark harness.

pub mod engine;
pub mod error;
pub mod extensions;
pub mod imgio;
pub mod matching;
pub mod prefilter;
pub mod simeval;
pub mod transforms;
pub mod vst;

pub use error::{Error, Result};
pub use imgio::{Frame, FrameStack};
