//! Separable transform stacks applied to 3D groups of patches.
//!
//! A group is transformed by a 2D transform on every 8x8 patch followed by
//! an orthonormal Walsh-Hadamard transform along the group axis. The 2D
//! transforms have unit-norm analysis rows, so white noise of standard
//! deviation `sigma` keeps that deviation in every coefficient and a single
//! threshold applies everywhere.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Side length of a patch.
pub const PATCH: usize = 8;
/// Pixels per patch.
pub const PATCH_AREA: usize = PATCH * PATCH;

/// Pixel or coefficient values of one patch, row-major.
pub type PatchValues = [f64; PATCH_AREA];

/// Top-left corner of a patch inside a frame stack.
///
/// Field order gives the lexicographic `(frame, row, col)` ordering used to
/// break ties in block matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatchOrigin {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

impl PatchOrigin {
    pub const fn new(frame: usize, row: usize, col: usize) -> Self {
        Self { frame, row, col }
    }
}

/// Copies the patch at `(row, col)` out of a row-major raster of width `width`.
#[inline]
pub fn extract_patch(data: &[f64], width: usize, row: usize, col: usize) -> PatchValues {
    let mut out = [0.0; PATCH_AREA];
    for i in 0..PATCH {
        let start = (row + i) * width + col;
        out[i * PATCH..(i + 1) * PATCH].copy_from_slice(&data[start..start + PATCH]);
    }
    out
}

/// Orthonormal Walsh-Hadamard transform. The transform is its own inverse.
pub fn wht_1d(v: &[f64]) -> Result<Vec<f64>> {
    if !v.len().is_power_of_two() {
        return Err(Error::NotPowerOfTwo(v.len()));
    }
    let mut out = v.to_vec();
    wht_in_place(&mut out);
    Ok(out)
}

/// In-place orthonormal WHT. `v.len()` must be a power of two.
pub fn wht_in_place(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
    if n > 1 {
        let scale = 1.0 / (n as f64).sqrt();
        v.iter_mut().for_each(|x| *x *= scale);
    }
}

/// 2D patch transform family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Bi-orthogonal spline wavelet 1.5, three-level periodic decomposition.
    Bior15,
    /// Orthonormal DCT-II.
    Dct,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Bior15 => "bior1.5",
            Basis::Dct => "dct",
        }
    }

    /// Shared, lazily built transform for this basis.
    pub fn transform(self) -> &'static Transform2d {
        static BIOR: OnceLock<Transform2d> = OnceLock::new();
        static DCT: OnceLock<Transform2d> = OnceLock::new();
        match self {
            Basis::Bior15 => BIOR.get_or_init(|| Transform2d::new(Basis::Bior15)),
            Basis::Dct => DCT.get_or_init(|| Transform2d::new(Basis::Dct)),
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bior15" | "bior1.5" => Ok(Basis::Bior15),
            "dct" => Ok(Basis::Dct),
            other => Err(format!("unknown basis '{other}' (expected bior1.5 or dct)")),
        }
    }
}

type Mat8 = [[f64; PATCH]; PATCH];

/// Separable 8x8 transform `C = T P T^t` with its exact inverse.
#[derive(Debug, Clone)]
pub struct Transform2d {
    forward: Mat8,
    inverse: Mat8,
}

impl Transform2d {
    pub fn new(basis: Basis) -> Self {
        let forward = match basis {
            Basis::Dct => dct_matrix(),
            Basis::Bior15 => bior15_matrix(),
        };
        let inverse = invert(&forward);
        Self { forward, inverse }
    }

    /// Analysis matrix; row `k` is the `k`-th basis function.
    pub fn matrix(&self) -> &Mat8 {
        &self.forward
    }

    #[inline]
    pub fn forward(&self, p: &PatchValues) -> PatchValues {
        separable(&self.forward, p)
    }

    #[inline]
    pub fn inverse(&self, c: &PatchValues) -> PatchValues {
        separable(&self.inverse, c)
    }
}

/// Computes `M X M^t` for an 8x8 `X` stored row-major.
#[inline]
fn separable(m: &Mat8, x: &PatchValues) -> PatchValues {
    // tmp = X M^t
    let mut tmp = [0.0; PATCH_AREA];
    for i in 0..PATCH {
        let row = &x[i * PATCH..(i + 1) * PATCH];
        for (l, ml) in m.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..PATCH {
                acc += row[j] * ml[j];
            }
            tmp[i * PATCH + l] = acc;
        }
    }
    // out = M tmp
    let mut out = [0.0; PATCH_AREA];
    for (k, mk) in m.iter().enumerate() {
        let dst = &mut out[k * PATCH..(k + 1) * PATCH];
        for (i, &w) in mk.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src = &tmp[i * PATCH..(i + 1) * PATCH];
            for l in 0..PATCH {
                dst[l] += w * src[l];
            }
        }
    }
    out
}

fn dct_matrix() -> Mat8 {
    let n = PATCH as f64;
    let mut m = [[0.0; PATCH]; PATCH];
    for (k, row) in m.iter_mut().enumerate() {
        let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
        }
    }
    m
}

const BIOR15_DEC_LO: [f64; 10] = [
    0.016572815184059706,
    -0.016572815184059706,
    -0.12153397801643785,
    0.12153397801643785,
    std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
    0.12153397801643785,
    -0.12153397801643785,
    -0.016572815184059706,
    0.016572815184059706,
];

const BIOR15_DEC_HI: [f64; 10] = [
    0.0,
    0.0,
    0.0,
    0.0,
    -std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
    0.0,
    0.0,
    0.0,
    0.0,
];

/// One periodized analysis step: filter, keep every other sample.
fn analysis_step(x: &[f64], filter: &[f64; 10]) -> Vec<f64> {
    let n = x.len() as isize;
    let half = filter.len() as isize / 2;
    (0..x.len() / 2)
        .map(|i| {
            filter
                .iter()
                .enumerate()
                .map(|(k, &f)| f * x[(2 * i as isize + half - k as isize).rem_euclid(n) as usize])
                .sum()
        })
        .collect()
}

/// Full three-level periodic bior1.5 decomposition of length 8 as a matrix,
/// coefficients ordered `[a3, d3, d2, d1]`, with every row scaled to unit
/// norm.
fn bior15_matrix() -> Mat8 {
    let mut m = [[0.0; PATCH]; PATCH];
    for j in 0..PATCH {
        let mut impulse = vec![0.0; PATCH];
        impulse[j] = 1.0;
        let mut approx = impulse;
        let mut details: Vec<Vec<f64>> = Vec::new();
        while approx.len() > 1 {
            let d = analysis_step(&approx, &BIOR15_DEC_HI);
            approx = analysis_step(&approx, &BIOR15_DEC_LO);
            details.insert(0, d);
        }
        let column: Vec<f64> = approx.into_iter().chain(details.into_iter().flatten()).collect();
        for (k, v) in column.into_iter().enumerate() {
            m[k][j] = v;
        }
    }
    for row in m.iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    m
}

/// Gauss-Jordan inversion with partial pivoting.
fn invert(m: &Mat8) -> Mat8 {
    let mut a = *m;
    let mut inv = [[0.0; PATCH]; PATCH];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..PATCH {
        let pivot = (col..PATCH)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-12, "singular transform matrix");
        for j in 0..PATCH {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..PATCH {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..PATCH {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

fn as_patch(values: &[f64], basis: Basis) -> Result<&PatchValues> {
    values
        .try_into()
        .map_err(|_| Error::UnsupportedPatchSize {
            size: (values.len() as f64).sqrt() as usize,
            basis: basis.name(),
        })
}

/// 2D analysis of one 8x8 patch.
pub fn forward_2d(patch: &[f64], basis: Basis) -> Result<PatchValues> {
    Ok(basis.transform().forward(as_patch(patch, basis)?))
}

/// Exact inverse of [`forward_2d`].
pub fn inverse_2d(coeffs: &[f64], basis: Basis) -> Result<PatchValues> {
    Ok(basis.transform().inverse(as_patch(coeffs, basis)?))
}

/// Coefficients of a transformed 3D group: `len()` patches of 64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum3D {
    coeffs: Vec<PatchValues>,
}

impl Spectrum3D {
    pub fn from_coeffs(coeffs: Vec<PatchValues>) -> Self {
        Self { coeffs }
    }

    /// 2D transform of every patch, then the WHT along the group axis.
    pub fn forward(patches: &[PatchValues], basis: Basis) -> Result<Self> {
        if !patches.len().is_power_of_two() {
            return Err(Error::NotPowerOfTwo(patches.len()));
        }
        let t = basis.transform();
        let mut coeffs: Vec<PatchValues> = patches.iter().map(|p| t.forward(p)).collect();
        group_wht(&mut coeffs);
        Ok(Self { coeffs })
    }

    /// Inverse of [`Spectrum3D::forward`].
    pub fn inverse(&self, basis: Basis) -> Vec<PatchValues> {
        let t = basis.transform();
        let mut coeffs = self.coeffs.clone();
        group_wht(&mut coeffs);
        coeffs.iter().map(|c| t.inverse(c)).collect()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[PatchValues] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [PatchValues] {
        &mut self.coeffs
    }

    /// The group DC coefficient.
    pub fn dc(&self) -> f64 {
        self.coeffs[0][0]
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.coeffs.iter().flatten()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.coeffs.iter_mut().flatten()
    }
}

/// WHT along the group axis, independently for each of the 64 positions.
fn group_wht(coeffs: &mut [PatchValues]) {
    let k = coeffs.len();
    if k <= 1 {
        return;
    }
    let mut line = [0.0; 64];
    let line = &mut line[..k.min(64)];
    if k > 64 {
        let mut buf = vec![0.0; k];
        for pos in 0..PATCH_AREA {
            for (b, c) in buf.iter_mut().zip(coeffs.iter()) {
                *b = c[pos];
            }
            wht_in_place(&mut buf);
            for (b, c) in buf.iter().zip(coeffs.iter_mut()) {
                c[pos] = *b;
            }
        }
        return;
    }
    for pos in 0..PATCH_AREA {
        for (b, c) in line.iter_mut().zip(coeffs.iter()) {
            *b = c[pos];
        }
        wht_in_place(line);
        for (b, c) in line.iter().zip(coeffs.iter_mut()) {
            c[pos] = *b;
        }
    }
}

/// Zeroes every coefficient with `|c| < tau`. Returns the filtered spectrum
/// and the number of nonzero survivors.
pub fn hard_threshold(s: &Spectrum3D, tau: f64) -> (Spectrum3D, usize) {
    let mut out = s.clone();
    let kept = threshold_in_place(&mut out, tau, false);
    (out, kept)
}

/// As [`hard_threshold`], but the group DC coefficient always survives.
pub fn hard_threshold_keep_dc(s: &Spectrum3D, tau: f64) -> (Spectrum3D, usize) {
    let mut out = s.clone();
    let kept = threshold_in_place(&mut out, tau, true);
    (out, kept)
}

pub(crate) fn threshold_in_place(s: &mut Spectrum3D, tau: f64, keep_dc: bool) -> usize {
    let dc = s.dc();
    let mut kept = 0;
    for v in s.values_mut() {
        if v.abs() < tau {
            *v = 0.0;
        } else if *v != 0.0 {
            kept += 1;
        }
    }
    if keep_dc && s.coeffs[0][0] != dc {
        s.coeffs[0][0] = dc;
        if dc != 0.0 {
            kept += 1;
        }
    }
    kept
}

/// Empirical Wiener shrinkage of `noisy` driven by the `pilot` spectrum.
///
/// Each coefficient is scaled by `W = pilot^2 / (pilot^2 + sigma^2)`; the
/// returned energy is the sum of `W^2` over the group.
pub fn wiener_shrink(
    noisy: &Spectrum3D,
    pilot: &Spectrum3D,
    sigma: f64,
) -> Result<(Spectrum3D, f64)> {
    if noisy.len() != pilot.len() {
        return Err(Error::ShapeMismatch(format!(
            "noisy group has {} patches, pilot has {}",
            noisy.len(),
            pilot.len()
        )));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let mut out = noisy.clone();
    let energy = wiener_in_place(&mut out, pilot, sigma, false);
    Ok((out, energy))
}

/// With `keep_dc` the group DC coefficient passes with `W = 1`.
pub(crate) fn wiener_in_place(noisy: &mut Spectrum3D, pilot: &Spectrum3D, sigma: f64, keep_dc: bool) -> f64 {
    let s2 = sigma * sigma;
    let mut energy = 0.0;
    for (i, (v, &b)) in noisy.values_mut().zip(pilot.values()).enumerate() {
        let w = if keep_dc && i == 0 {
            1.0
        } else {
            let b2 = b * b;
            b2 / (b2 + s2)
        };
        *v *= w;
        energy += w * w;
    }
    energy
}
