//! Grayscale frames, frame stacks, and PGM/PNG file I/O.
//!
//! Everything downstream works on real-valued [`Frame`]s. Quantization to
//! integers happens only in [`write_image`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A real-valued grayscale raster stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::DataLength {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a frame by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data).expect("from_fn produced an invalid frame")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw pixels. Callers must keep values finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    /// Applies `f` to every pixel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// An ordered list of registered frames sharing one size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    frames: Vec<Frame>,
}

impl FrameStack {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyStack)?;
        let dims = first.dims();
        if let Some(bad) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: bad.dims(),
            });
        }
        Ok(Self { frames })
    }

    pub fn single(frame: Frame) -> Self {
        Self {
            frames: vec![frame],
        }
    }

    /// `count` copies of `frame`.
    pub fn repeat(frame: &Frame, count: usize) -> Self {
        assert!(count >= 1);
        Self {
            frames: vec![frame.clone(); count],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; a stack holds at least one frame.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    #[inline]
    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn map(&self, f: impl Fn(&Frame) -> Frame) -> FrameStack {
        FrameStack {
            frames: self.frames.iter().map(f).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.frames
            .iter()
            .map(Frame::min_max)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Reads an 8- or 16-bit single-channel image.
pub fn read_image(path: &Path, format: ImageFormat) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes).map_err(|reason| Error::Decode {
            path: path.to_owned(),
            reason,
        }),
        ImageFormat::Png => decode_png(path, &bytes),
    }
}

/// Reads an image, picking the format from the extension.
pub fn read_image_auto(path: &Path) -> Result<Frame> {
    let format = ImageFormat::from_path(path).ok_or_else(|| Error::Decode {
        path: path.to_owned(),
        reason: "unknown extension (expected .pgm or .png)".into(),
    })?;
    read_image(path, format)
}

/// Writes an 8-bit image. Values are rounded, then clamped to `[0, 255]`.
pub fn write_image(frame: &Frame, path: &Path, format: ImageFormat) -> Result<()> {
    write_image_with_depth(frame, path, format, BitDepth::Eight)
}

pub fn write_image_with_depth(
    frame: &Frame,
    path: &Path,
    format: ImageFormat,
    depth: BitDepth,
) -> Result<()> {
    let max = depth.max_value();
    let levels: Vec<u16> = frame
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, max) as u16)
        .collect();
    let (w, h) = frame.dims();
    match format {
        ImageFormat::Pgm => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = BufWriter::new(file);
            write!(out, "P5\n{} {}\n{}\n", w, h, max as u32).map_err(|e| Error::io(path, e))?;
            let body: Vec<u8> = match depth {
                BitDepth::Eight => levels.iter().map(|&v| v as u8).collect(),
                BitDepth::Sixteen => levels.iter().flat_map(|v| v.to_be_bytes()).collect(),
            };
            out.write_all(&body).map_err(|e| Error::io(path, e))?;
            out.flush().map_err(|e| Error::io(path, e))
        }
        ImageFormat::Png => {
            let result = match depth {
                BitDepth::Eight => {
                    let buf: Vec<u8> = levels.iter().map(|&v| v as u8).collect();
                    image::GrayImage::from_raw(w as u32, h as u32, buf)
                        .expect("buffer sized from frame")
                        .save_with_format(path, image::ImageFormat::Png)
                }
                BitDepth::Sixteen => {
                    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, levels)
                        .expect("buffer sized from frame")
                        .save_with_format(path, image::ImageFormat::Png)
                }
            };
            result.map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Decode {
                    path: path.to_owned(),
                    reason: other.to_string(),
                },
            })
        }
    }
}

/// Loads a stack from a list of files, or from every `.pgm`/`.png` file in a
/// single directory. Files are read in lexicographic path order.
pub fn load_stack<P: AsRef<Path>>(paths: &[P]) -> Result<FrameStack> {
    let mut files: Vec<PathBuf> = Vec::new();
    for p in paths {
        let p = p.as_ref();
        if p.is_dir() {
            let entries = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io(p, e))?.path();
                if ImageFormat::from_path(&path).is_some() {
                    files.push(path);
                }
            }
        } else {
            files.push(p.to_owned());
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyStack);
    }
    files.sort();
    let frames = files
        .iter()
        .map(|f| read_image_auto(f))
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames)
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut pos = 0usize;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or("missing magic number")?;
    if magic != b"P5" {
        return Err(format!(
            "unsupported magic {:?} (only binary P5 is supported)",
            String::from_utf8_lossy(magic)
        ));
    }
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("missing {name}"))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("invalid {name}"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero-sized image".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let body = bytes.get(pos..pos + n * bytes_per).ok_or("truncated raster")?;
    let data: Vec<f64> = if bytes_per == 1 {
        body.iter().map(|&b| b as f64).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    Frame::new(width, height, data).map_err(|e| e.to_string())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Frame> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        Error::Decode {
            path: path.to_owned(),
            reason: e.to_string(),
        }
    })?;
    let channels = img.color().channel_count();
    if channels != 1 {
        return Err(Error::NotSingleChannel {
            path: path.to_owned(),
            channels,
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(f64::from).collect()
        }
        other => {
            return Err(Error::Decode {
                path: path.to_owned(),
                reason: format!("unsupported pixel type {:?}", other.color()),
            })
        }
    };
    Frame::new(w, h, data)
}

/// Decodes any image the `image` crate understands and converts it to
/// 8-bit luma. Used when importing reference assets, which may be colour.
/// The format is sniffed from the content, not the extension.
pub fn read_as_luma(path: &Path) -> Result<Frame> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Frame::new(
        w as usize,
        h as usize,
        gray.into_raw().into_iter().map(f64::from).collect(),
    )
}
