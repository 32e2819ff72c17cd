//! Block matching: reference-patch grids and L2 search for similar patches,
//! within one frame or across every frame of a stack.
//!
//! There is no distance threshold. A group is always filled with the
//! `max_group` closest candidates in the search window, the reference patch
//! first, ties broken by `(frame, row, col)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::FrameStack;
use crate::transforms::{extract_patch, PatchOrigin, PatchValues, PATCH, PATCH_AREA};

/// Which frames of a stack take part in an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameScope {
    Single(usize),
    All,
}

impl FrameScope {
    pub fn frames(self, len: usize) -> std::ops::Range<usize> {
        match self {
            FrameScope::Single(f) => f..f + 1,
            FrameScope::All => 0..len,
        }
    }

    pub fn validate(self, len: usize) -> Result<()> {
        match self {
            FrameScope::Single(f) if f >= len => Err(Error::InvalidParameter(format!(
                "frame {f} out of range for a stack of {len}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Half-width of the square search window; 19 gives 39x39.
    pub search_radius: usize,
    /// Spacing of the reference-patch grid.
    pub stride: usize,
    /// Upper bound on the group size.
    pub max_group: usize,
    /// Frames searched for candidates.
    pub frame_scope: FrameScope,
}

impl SearchConfig {
    pub fn hard_default() -> Self {
        Self {
            search_radius: 19,
            stride: 3,
            max_group: 16,
            frame_scope: FrameScope::All,
        }
    }

    pub fn wiener_default() -> Self {
        Self {
            max_group: 32,
            ..Self::hard_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be at least 1".into()));
        }
        if self.max_group == 0 {
            return Err(Error::InvalidParameter("max_group must be at least 1".into()));
        }
        Ok(())
    }
}

/// One group member and its distance to the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub origin: PatchOrigin,
    pub distance: f64,
}

/// Locations of a 3D group; member 0 is the reference patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Group3D {
    pub members: Vec<Match>,
}

impl Group3D {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn origins(&self) -> impl Iterator<Item = PatchOrigin> + '_ {
        self.members.iter().map(|m| m.origin)
    }

    /// Pixel values of every member, read from `stack`.
    pub fn gather(&self, stack: &FrameStack) -> Vec<PatchValues> {
        let w = stack.width();
        self.origins()
            .map(|o| extract_patch(stack.frame(o.frame).data(), w, o.row, o.col))
            .collect()
    }
}

/// Mean squared difference between two equally sized patches.
pub fn patch_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "patch sizes {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    let ssd: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(ssd / a.len() as f64)
}

/// Grid positions along one axis: every `stride`, plus the last valid one.
fn axis_positions(len: usize, stride: usize) -> Vec<usize> {
    let last = len.saturating_sub(PATCH);
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Reference-patch origins for the frames in `ref_scope`, in
/// `(frame, row, col)` order.
pub fn enumerate_references(
    stack: &FrameStack,
    cfg: &SearchConfig,
    ref_scope: FrameScope,
) -> Vec<PatchOrigin> {
    let rows = axis_positions(stack.height(), cfg.stride.max(1));
    let cols = axis_positions(stack.width(), cfg.stride.max(1));
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for frame in ref_scope.frames(stack.len()) {
        for &row in &rows {
            for &col in &cols {
                out.push(PatchOrigin { frame, row, col });
            }
        }
    }
    out
}

/// Sum of squared differences between `reference` and the patch at
/// `(row, col)`, or `None` as soon as the running sum exceeds `bound`.
#[inline]
fn ssd_bounded(
    reference: &PatchValues,
    data: &[f64],
    width: usize,
    row: usize,
    col: usize,
    bound: f64,
) -> Option<f64> {
    let mut acc = 0.0;
    for i in 0..PATCH {
        let start = (row + i) * width + col;
        let line = &data[start..start + PATCH];
        let refl = &reference[i * PATCH..(i + 1) * PATCH];
        let mut part = 0.0;
        for j in 0..PATCH {
            let d = refl[j] - line[j];
            part += d * d;
        }
        acc += part;
        if acc > bound {
            return None;
        }
    }
    Some(acc)
}

/// Builds the group for the reference patch at `reference`, searching
/// `cfg.frame_scope` of `stack` inside the clipped square window.
pub fn find_similar(reference: PatchOrigin, stack: &FrameStack, cfg: &SearchConfig) -> Group3D {
    let (w, h) = stack.dims();
    let ref_vals = extract_patch(stack.frame(reference.frame).data(), w, reference.row, reference.col);
    let others = cfg.max_group.max(1) - 1;

    // Sorted ascending by (ssd, origin); iteration below visits origins in
    // increasing order, so an equal-distance newcomer always sorts last.
    let mut best: Vec<(f64, PatchOrigin)> = Vec::with_capacity(others + 1);
    if others > 0 {
        let r = cfg.search_radius;
        let row_lo = reference.row.saturating_sub(r);
        let row_hi = (reference.row + r).min(h - PATCH);
        let col_lo = reference.col.saturating_sub(r);
        let col_hi = (reference.col + r).min(w - PATCH);
        for frame in cfg.frame_scope.frames(stack.len()) {
            let data = stack.frame(frame).data();
            for row in row_lo..=row_hi {
                for col in col_lo..=col_hi {
                    let origin = PatchOrigin { frame, row, col };
                    if origin == reference {
                        continue;
                    }
                    let bound = if best.len() == others {
                        best[others - 1].0
                    } else {
                        f64::INFINITY
                    };
                    let Some(ssd) = ssd_bounded(&ref_vals, data, w, row, col, bound) else {
                        continue;
                    };
                    if best.len() == others {
                        if ssd >= bound {
                            continue;
                        }
                        best.pop();
                    }
                    let at = best.partition_point(|(d, _)| *d <= ssd);
                    best.insert(at, (ssd, origin));
                }
            }
        }
    }

    let available = 1 + best.len();
    let keep = prev_power_of_two(available.min(cfg.max_group.max(1)));
    let scale = 1.0 / PATCH_AREA as f64;
    let members = std::iter::once(Match {
        origin: reference,
        distance: 0.0,
    })
    .chain(best.into_iter().map(|(ssd, origin)| Match {
        origin,
        distance: ssd * scale,
    }))
    .take(keep)
    .collect();
    Group3D { members }
}

/// Largest power of two not exceeding `n` (`n >= 1`).
pub fn prev_power_of_two(n: usize) -> usize {
    debug_assert!(n >= 1);
    1 << (usize::BITS - 1 - n.leading_zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut impl Rng, w: usize, h: usize, frames: usize, levels: u32) -> FrameStack {
        let frames = (0..frames)
            .map(|_| Frame::from_fn(w, h, |_, _| rng.gen_range(0..levels) as f64))
            .collect();
        FrameStack::new(frames).unwrap()
    }

    /// Exhaustive search: score every candidate, sort by (distance, origin).
    fn brute_force(reference: PatchOrigin, stack: &FrameStack, cfg: &SearchConfig) -> Vec<PatchOrigin> {
        let (w, h) = stack.dims();
        let r = cfg.search_radius as isize;
        let pix = |o: &PatchOrigin, i: usize, j: usize| stack.frame(o.frame).get(o.row + i, o.col + j);
        let mut cands: Vec<(f64, PatchOrigin)> = Vec::new();
        for frame in cfg.frame_scope.frames(stack.len()) {
            for row in 0..=h - 8 {
                for col in 0..=w - 8 {
                    let dr = row as isize - reference.row as isize;
                    let dc = col as isize - reference.col as isize;
                    if dr.abs() > r || dc.abs() > r {
                        continue;
                    }
                    let o = PatchOrigin { frame, row, col };
                    if o == reference {
                        continue;
                    }
                    let mut s = 0.0;
                    for i in 0..8 {
                        for j in 0..8 {
                            let d = pix(&reference, i, j) - pix(&o, i, j);
                            s += d * d;
                        }
                    }
                    cands.push((s / 64.0, o));
                }
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = vec![reference];
        out.extend(cands.into_iter().map(|c| c.1));
        let mut k = 1;
        while k * 2 <= out.len().min(cfg.max_group) {
            k *= 2;
        }
        out.truncate(k);
        out
    }

    #[test]
    fn distance_examples() {
        let a = [0.0; 64];
        let b = [1.0; 64];
        assert_eq!(patch_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(patch_distance(&a, &b).unwrap(), 1.0);
        assert!(patch_distance(&a, &b[..32]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut oracle = 0.0;
        for i in 0..64 {
            oracle += (x[i] - y[i]).powi(2);
        }
        oracle /= 64.0;
        assert!((patch_distance(&x, &y).unwrap() - oracle).abs() < 1e-13);
    }

    #[test]
    fn reference_grid() {
        let stack = FrameStack::single(Frame::zeros(16, 16));
        let cfg = SearchConfig::hard_default();
        let refs = enumerate_references(&stack, &cfg, FrameScope::All);
        assert_eq!(refs.len(), 16);
        let rows: Vec<usize> = refs.iter().filter(|o| o.col == 0).map(|o| o.row).collect();
        assert_eq!(rows, vec![0, 3, 6, 8]);

        let five = FrameStack::repeat(&Frame::zeros(16, 16), 5);
        assert_eq!(enumerate_references(&five, &cfg, FrameScope::All).len(), 80);
        let only2 = enumerate_references(&five, &cfg, FrameScope::Single(2));
        assert_eq!(only2.len(), 16);
        assert!(only2.iter().all(|o| o.frame == 2));

        let wide = SearchConfig {
            stride: 100,
            ..cfg
        };
        let corners = enumerate_references(&FrameStack::single(Frame::zeros(20, 17)), &wide, FrameScope::All);
        let got: Vec<(usize, usize)> = corners.iter().map(|o| (o.row, o.col)).collect();
        assert_eq!(got, vec![(0, 0), (0, 12), (9, 0), (9, 12)]);
    }

    #[test]
    fn references_cover_every_pixel() {
        for (w, h, stride) in [(16, 16, 3), (37, 23, 3), (40, 40, 7), (19, 33, 1)] {
            let stack = FrameStack::repeat(&Frame::zeros(w, h), 2);
            let cfg = SearchConfig {
                stride,
                ..SearchConfig::hard_default()
            };
            let mut hits = vec![0u32; 2 * w * h];
            for o in enumerate_references(&stack, &cfg, FrameScope::All) {
                for i in 0..8 {
                    for j in 0..8 {
                        hits[o.frame * w * h + (o.row + i) * w + o.col + j] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&n| n > 0), "{w}x{h} stride {stride}");
        }
    }

    #[test]
    fn constant_stack_uses_tie_break_order() {
        let stack = FrameStack::repeat(&Frame::filled(32, 32, 7.0), 5);
        let reference = PatchOrigin::new(2, 10, 10);
        let group = find_similar(reference, &stack, &SearchConfig::hard_default());
        assert_eq!(group.len(), 16);
        assert_eq!(group.members[0].origin, reference);
        let rest: Vec<PatchOrigin> = group.origins().skip(1).collect();
        let expect: Vec<PatchOrigin> = (0..15).map(|c| PatchOrigin::new(0, 0, c)).collect();
        assert_eq!(rest, expect);
        assert!(group.members.iter().all(|m| m.distance == 0.0));
    }

    #[test]
    fn planted_duplicate_ranks_second() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stack = random_stack(&mut rng, 32, 32, 5, 256).into_frames();
        let reference = PatchOrigin::new(0, 12, 9);
        let src = stack[0].clone();
        for i in 0..8 {
            for j in 0..8 {
                stack[3].set(17 + i, 4 + j, src.get(12 + i, 9 + j));
            }
        }
        let stack = FrameStack::new(stack).unwrap();
        let cfg = SearchConfig::hard_default();
        let group = find_similar(reference, &stack, &cfg);
        assert_eq!(group.members[1].origin, PatchOrigin::new(3, 17, 4));
        assert_eq!(group.members[1].distance, 0.0);
        assert_eq!(group.origins().collect::<Vec<_>>(), brute_force(reference, &stack, &cfg));
    }

    #[test]
    fn single_scope_on_one_frame_equals_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = random_stack(&mut rng, 32, 32, 1, 50);
        let all = SearchConfig::hard_default();
        let single = SearchConfig {
            frame_scope: FrameScope::Single(0),
            ..all
        };
        for o in enumerate_references(&stack, &all, FrameScope::All) {
            assert_eq!(find_similar(o, &stack, &all), find_similar(o, &stack, &single));
        }
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for seed in 0..100 {
            let frames = rng.gen_range(1..=4);
            // Few gray levels on some instances so exact ties are common.
            let levels = if seed % 2 == 0 { 3 } else { 1000 };
            let stack = random_stack(&mut rng, 32, 32, frames, levels);
            let cfg = SearchConfig {
                search_radius: rng.gen_range(1..=20),
                stride: 3,
                max_group: [1, 2, 5, 8, 16, 32][rng.gen_range(0..6)],
                frame_scope: if rng.gen_bool(0.5) {
                    FrameScope::All
                } else {
                    FrameScope::Single(rng.gen_range(0..frames))
                },
            };
            let reference = PatchOrigin::new(
                rng.gen_range(0..frames),
                rng.gen_range(0..=24),
                rng.gen_range(0..=24),
            );
            let group = find_similar(reference, &stack, &cfg);
            assert_eq!(
                group.origins().collect::<Vec<_>>(),
                brute_force(reference, &stack, &cfg),
                "instance {seed}"
            );
            assert!(group.len().is_power_of_two());
            for pair in group.members[1..].windows(2) {
                assert!(pair[0].distance <= pair[1].distance);
            }
        }
    }

    #[test]
    fn power_of_two_truncation() {
        assert_eq!(prev_power_of_two(1), 1);
        assert_eq!(prev_power_of_two(15), 8);
        assert_eq!(prev_power_of_two(16), 16);
        assert_eq!(prev_power_of_two(33), 32);
    }
}
