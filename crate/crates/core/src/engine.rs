//! The two-step collaborative filter, parameterized by which frames supply
//! reference patches and which frames are searched for matches.
//!
//! Step 1 groups patches on a matching source, filters the groups with
//! bior1.5 + WHT hard thresholding and aggregates the estimates. Step 2
//! regroups on the basic estimate and applies empirical Wiener shrinkage
//! with DCT + WHT. Both aggregations are weighted averages of every
//! overlapping patch estimate, with a Kaiser window over each patch.
//!
//! Groups are processed in parallel in fixed-size batches and scattered
//! into the accumulators sequentially in reference order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{Frame, FrameStack};
use crate::matching::{enumerate_references, find_similar, FrameScope, SearchConfig};
use crate::transforms::{
    threshold_in_place, wiener_in_place, Basis, PatchOrigin, PatchValues, Spectrum3D, PATCH,
    PATCH_AREA,
};

/// Smallest frame side the engine accepts.
pub const MIN_FRAME_SIDE: usize = 16;

/// References handed to the worker pool at once.
const BATCH: usize = 512;

/// Floor on the Wiener energy `sum W^2` before it is inverted into a weight.
const WIENER_ENERGY_FLOOR: f64 = 1e-12;

/// Which per-frame accumulator a step-1 patch estimate lands in when every
/// frame supplies references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasicPartition {
    /// The frame the patch was taken from.
    #[default]
    Origin,
    /// The frame of the group's reference patch.
    Reference,
}

impl std::str::FromStr for BasicPartition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "origin" => Ok(Self::Origin),
            "reference" => Ok(Self::Reference),
            other => Err(format!("unknown partition '{other}' (expected origin or reference)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Noise standard deviation of the data handed to the engine.
    pub sigma: f64,
    /// Frames whose reference-patch grid drives both steps.
    pub ref_scope: FrameScope,
    /// Frames searched for matches in both steps.
    pub search_scope: FrameScope,
    pub step1: SearchConfig,
    pub step2: SearchConfig,
    /// Hard threshold is `lambda3d * sigma`.
    pub lambda3d: f64,
    /// Kaiser window shape; 0 disables the window.
    pub kaiser_beta: f64,
    pub hard_basis: Basis,
    pub wiener_basis: Basis,
    /// Exempt the group DC coefficient from hard thresholding and from
    /// Wiener shrinkage.
    pub keep_dc: bool,
    pub basic_partition: BasicPartition,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            ref_scope: FrameScope::All,
            search_scope: FrameScope::All,
            step1: SearchConfig::hard_default(),
            step2: SearchConfig::wiener_default(),
            lambda3d: 2.7,
            kaiser_beta: 2.0,
            hard_basis: Basis::Bior15,
            wiener_basis: Basis::Dct,
            keep_dc: true,
            basic_partition: BasicPartition::Origin,
        }
    }
}

impl EngineConfig {
    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn with_scopes(self, ref_scope: FrameScope, search_scope: FrameScope) -> Self {
        Self {
            ref_scope,
            search_scope,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(self.lambda3d >= 0.0) {
            return Err(Error::InvalidParameter("lambda3d must be non-negative".into()));
        }
        if !(self.kaiser_beta >= 0.0) {
            return Err(Error::InvalidParameter("kaiser_beta must be non-negative".into()));
        }
        self.step1.validate()?;
        self.step2.validate()
    }

    fn search(&self, step: &SearchConfig) -> SearchConfig {
        SearchConfig {
            frame_scope: self.search_scope,
            ..*step
        }
    }

    fn check_stack(&self, stack: &FrameStack) -> Result<()> {
        self.validate()?;
        let (w, h) = stack.dims();
        if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
            return Err(Error::FrameTooSmall {
                width: w,
                height: h,
                min: MIN_FRAME_SIDE,
            });
        }
        self.ref_scope.validate(stack.len())?;
        self.search_scope.validate(stack.len())
    }
}

/// Numerator and denominator grids of a weighted aggregation for one frame.
#[derive(Debug, Clone)]
pub struct Accumulator {
    width: usize,
    height: usize,
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl Accumulator {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            numerator: vec![0.0; width * height],
            denominator: vec![0.0; width * height],
        }
    }

    /// Adds `weight * value` and `weight` at one pixel.
    pub fn add(&mut self, row: usize, col: usize, weight: f64, value: f64) {
        let i = row * self.width + col;
        self.numerator[i] += weight * value;
        self.denominator[i] += weight;
    }

    /// Scatters an 8x8 patch estimate with a per-pixel window.
    #[inline]
    pub fn add_patch(
        &mut self,
        row: usize,
        col: usize,
        values: &PatchValues,
        weight: f64,
        window: &PatchValues,
    ) {
        for i in 0..PATCH {
            let base = (row + i) * self.width + col;
            let num = &mut self.numerator[base..base + PATCH];
            let den = &mut self.denominator[base..base + PATCH];
            for j in 0..PATCH {
                let w = weight * window[i * PATCH + j];
                num[j] += w * values[i * PATCH + j];
                den[j] += w;
            }
        }
    }

    fn finish(&self, frame: usize) -> Result<Frame> {
        let mut data = Vec::with_capacity(self.numerator.len());
        for (i, (&n, &d)) in self.numerator.iter().zip(&self.denominator).enumerate() {
            if !(d > 0.0) {
                return Err(Error::ZeroDenominator {
                    frame,
                    row: i / self.width,
                    col: i % self.width,
                });
            }
            data.push(n / d);
        }
        Frame::new(self.width, self.height, data)
    }
}

/// Pixel-wise ratio of the accumulated grids.
pub fn aggregate(acc: &Accumulator) -> Result<Frame> {
    acc.finish(0)
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Separable 2D Kaiser window over a patch.
pub fn kaiser_window(beta: f64) -> PatchValues {
    let n = PATCH as f64;
    let norm = bessel_i0(beta);
    let line: Vec<f64> = (0..PATCH)
        .map(|i| {
            let t = 2.0 * i as f64 / (n - 1.0) - 1.0;
            bessel_i0(beta * (1.0 - t * t).max(0.0).sqrt()) / norm
        })
        .collect();
    let mut w = [0.0; PATCH_AREA];
    for i in 0..PATCH {
        for j in 0..PATCH {
            w[i * PATCH + j] = line[i] * line[j];
        }
    }
    w
}

/// Filtered patches of one group and the group's aggregation weight.
struct GroupEstimate {
    origins: Vec<PatchOrigin>,
    patches: Vec<PatchValues>,
    weight: f64,
}

/// Runs `filter` on every reference in parallel batches and feeds the
/// results to `sink` in reference order.
fn for_each_group<F>(refs: &[PatchOrigin], filter: F, mut sink: impl FnMut(GroupEstimate)) -> Result<()>
where
    F: Fn(PatchOrigin) -> Result<GroupEstimate> + Sync,
{
    for chunk in refs.chunks(BATCH) {
        let results: Vec<Result<GroupEstimate>> = chunk.par_iter().map(|&r| filter(r)).collect();
        for r in results {
            sink(r?);
        }
    }
    Ok(())
}

/// Output of the hard-thresholding step.
#[derive(Debug, Clone)]
pub struct BasicEstimate {
    /// One basic estimate per input frame; this is what step 2 groups on.
    pub frames: FrameStack,
    /// Cross-frame aggregate of every group estimate.
    pub aggregate: Frame,
}

/// Step 1: grouping on `match_source`, hard thresholding of groups drawn
/// from `noisy`, weighted aggregation.
///
/// With `ref_scope = All` each frame's basic estimate aggregates the patch
/// estimates that originate in that frame, or with
/// [`BasicPartition::Reference`] the groups referenced in that frame. With a single reference frame
/// only that frame's grid is covered, and the cross-frame aggregate serves
/// as the basic estimate of every frame.
pub fn hard_stage(noisy: &FrameStack, match_source: &FrameStack, cfg: &EngineConfig) -> Result<BasicEstimate> {
    cfg.check_stack(noisy)?;
    if noisy.dims() != match_source.dims() || noisy.len() != match_source.len() {
        return Err(Error::ShapeMismatch(
            "matching source and noisy stack differ in shape".into(),
        ));
    }
    let (w, h) = noisy.dims();
    let search = cfg.search(&cfg.step1);
    let refs = enumerate_references(noisy, &search, cfg.ref_scope);
    let window = kaiser_window(cfg.kaiser_beta);
    let tau = cfg.lambda3d * cfg.sigma;
    let inv_var = 1.0 / (cfg.sigma * cfg.sigma);
    let basis = cfg.hard_basis;

    let per_frame_needed = cfg.ref_scope == FrameScope::All;
    let mut per_frame: Vec<Accumulator> = if per_frame_needed {
        (0..noisy.len()).map(|_| Accumulator::new(w, h)).collect()
    } else {
        Vec::new()
    };
    let mut cross = Accumulator::new(w, h);

    for_each_group(
        &refs,
        |r| {
            let group = find_similar(r, match_source, &search);
            let mut spectrum = Spectrum3D::forward(&group.gather(noisy), basis)?;
            let kept = threshold_in_place(&mut spectrum, tau, cfg.keep_dc);
            Ok(GroupEstimate {
                origins: group.origins().collect(),
                patches: spectrum.inverse(basis),
                weight: inv_var / kept.max(1) as f64,
            })
        },
        |g| {
            let reference_frame = g.origins[0].frame;
            for (o, p) in g.origins.iter().zip(&g.patches) {
                if per_frame_needed {
                    let f = match cfg.basic_partition {
                        BasicPartition::Origin => o.frame,
                        BasicPartition::Reference => reference_frame,
                    };
                    per_frame[f].add_patch(o.row, o.col, p, g.weight, &window);
                }
                cross.add_patch(o.row, o.col, p, g.weight, &window);
            }
        },
    )?;

    let aggregate = cross.finish(0)?;
    let frames = if per_frame_needed {
        FrameStack::new(
            per_frame
                .iter()
                .enumerate()
                .map(|(i, acc)| acc.finish(i))
                .collect::<Result<Vec<_>>>()?,
        )?
    } else {
        FrameStack::repeat(&aggregate, noisy.len())
    };
    Ok(BasicEstimate { frames, aggregate })
}

/// Step 2: grouping on the basic estimates, Wiener shrinkage of the noisy
/// groups piloted by the basic groups, aggregation into one final frame.
pub fn wiener_stage(noisy: &FrameStack, basic: &FrameStack, cfg: &EngineConfig) -> Result<Frame> {
    cfg.check_stack(noisy)?;
    if noisy.dims() != basic.dims() || noisy.len() != basic.len() {
        return Err(Error::ShapeMismatch(
            "basic estimate and noisy stack differ in shape".into(),
        ));
    }
    let (w, h) = noisy.dims();
    let search = cfg.search(&cfg.step2);
    let refs = enumerate_references(basic, &search, cfg.ref_scope);
    let window = kaiser_window(cfg.kaiser_beta);
    let sigma = cfg.sigma;
    let inv_var = 1.0 / (sigma * sigma);
    let basis = cfg.wiener_basis;
    let mut acc = Accumulator::new(w, h);

    for_each_group(
        &refs,
        |r| {
            let group = find_similar(r, basic, &search);
            let pilot = Spectrum3D::forward(&group.gather(basic), basis)?;
            let mut data = Spectrum3D::forward(&group.gather(noisy), basis)?;
            let energy = wiener_in_place(&mut data, &pilot, sigma, cfg.keep_dc);
            Ok(GroupEstimate {
                origins: group.origins().collect(),
                patches: data.inverse(basis),
                weight: inv_var / energy.max(WIENER_ENERGY_FLOOR),
            })
        },
        |g| {
            for (o, p) in g.origins.iter().zip(&g.patches) {
                acc.add_patch(o.row, o.col, p, g.weight, &window);
            }
        },
    )?;
    acc.finish(0)
}

/// Both steps. `match_source` is used only for step-1 grouping.
pub fn run(noisy: &FrameStack, match_source: &FrameStack, cfg: &EngineConfig) -> Result<Frame> {
    let basic = hard_stage(noisy, match_source, cfg)?;
    wiener_stage(noisy, &basic.frames, cfg)
}
