use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mfbm3d::extensions::{denoise as run_method, Method, MethodKind};
use mfbm3d::imgio::{load_stack, read_image_auto, write_image_with_depth, BitDepth, ImageFormat};
use mfbm3d::prefilter::LowPassSpec;
use mfbm3d::simeval::{
    self, add_poisson, asset_path, default_asset_dir, published, ExperimentSpec, NoiseSpec, ResultRow,
};
use mfbm3d::Frame;
use serde::Serialize;

use crate::settings::{print_effective, resolve, CommonArgs, Resolved};
use crate::CliError;

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn is_text(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("txt"))
}

/// Reads a `.txt` matrix (whitespace-separated rows) or a PGM/PNG image.
fn read_any(path: &Path) -> Result<Frame, CliError> {
    if !is_text(path) {
        return Ok(read_image_auto(path)?);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(CliError::io(format!("{}: ragged rows", path.display())));
        }
        data.extend(row);
        height += 1;
    }
    Ok(Frame::new(width.unwrap_or(0), height, data)?)
}

/// Writes full-precision text for `.txt`, otherwise a quantized image.
fn write_any(frame: &Frame, path: &Path, depth: BitDepth) -> Result<(), CliError> {
    if is_text(path) {
        let mut out = String::new();
        for r in 0..frame.height() {
            let line: Vec<String> = frame.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        return fs::write(path, out).map_err(|e| CliError::io(format!("{}: {e}", path.display())));
    }
    let format = ImageFormat::from_path(path)
        .ok_or_else(|| CliError::usage(format!("{}: output must end in .pgm, .png or .txt", path.display())))?;
    Ok(write_image_with_depth(frame, path, format, depth)?)
}

fn parse_depth(s: &str) -> Result<BitDepth, String> {
    match s {
        "8" => Ok(BitDepth::Eight),
        "16" => Ok(BitDepth::Sixteen),
        _ => Err(format!("bit depth must be 8 or 16, got {s}")),
    }
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    /// Frame files, or one directory of .pgm/.png frames.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    #[arg(long, default_value = "bm3d4")]
    method: MethodKind,
    /// Reference frame for bm3d3.
    #[arg(long)]
    ref_frame: Option<usize>,
    /// Low-pass cutoff for bm3d4_sigma.
    #[arg(long)]
    sigma_lp: Option<f64>,
    /// Output path (.pgm, .png, or .txt for full precision).
    #[arg(long)]
    out: PathBuf,
    /// Clean image to score against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Noise peak; maps the estimate back to the reference intensity scale.
    #[arg(long)]
    peak: Option<f64>,
    /// Factor applied before writing (default: max(reference)/peak when
    /// both are given, else 1).
    #[arg(long)]
    out_scale: Option<f64>,
    #[arg(long, default_value = "8", value_parser = parse_depth)]
    depth: BitDepth,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Serialize)]
struct DenoiseEffective<'a> {
    command: &'static str,
    method: MethodKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    ref_frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_lp: Option<f64>,
    frames: Vec<String>,
    out: String,
    out_scale: f64,
    #[serde(flatten)]
    settings: &'a Resolved,
}

pub fn denoise(a: DenoiseArgs) -> Result<(), CliError> {
    let settings = resolve(&a.common)?;
    let method = match a.method {
        MethodKind::Bm3d1 => Method::Bm3d1,
        MethodKind::Bm3d2 => Method::Bm3d2,
        MethodKind::Bm3d4 => Method::Bm3d4,
        MethodKind::Bm3d3 => Method::Bm3d3 {
            ref_frame: a
                .ref_frame
                .ok_or_else(|| CliError::usage("--method bm3d3 requires --ref-frame"))?,
        },
        MethodKind::Bm3d4Sigma => Method::Bm3d4Sigma {
            lowpass: LowPassSpec {
                sigma_lp: settings
                    .file_sigma_lp
                    .or(a.sigma_lp)
                    .ok_or_else(|| CliError::usage("--method bm3d4_sigma requires --sigma-lp"))?,
                shape: settings.filter_shape,
            },
        },
    };
    if let Some(p) = a.peak {
        if !(p > 0.0) {
            return Err(CliError::usage("--peak must be positive"));
        }
    }
    let reference = a.reference.as_deref().map(read_any).transpose()?;
    let out_scale = match (a.out_scale, &reference, a.peak) {
        (Some(s), _, _) => s,
        (None, Some(r), Some(p)) => r.min_max().1 / p,
        _ => 1.0,
    };
    let (ref_frame, sigma_lp) = match method {
        Method::Bm3d3 { ref_frame } => (Some(ref_frame), None),
        Method::Bm3d4Sigma { lowpass } => (None, Some(lowpass.sigma_lp)),
        _ => (None, None),
    };
    print_effective(&DenoiseEffective {
        command: "denoise",
        method: a.method,
        ref_frame,
        sigma_lp,
        frames: a.frames.iter().map(|p| p.display().to_string()).collect(),
        out: a.out.display().to_string(),
        out_scale,
        settings: &settings,
    });

    let stack = load_stack(&a.frames)?;
    let cfg = settings.engine.to_config();
    let est = with_pool(settings.jobs, || run_method(&stack, &method, &cfg))??;

    if let Some(r) = &reference {
        let p = match a.peak {
            Some(peak) => simeval::score(&est, r, peak)?,
            None => simeval::psnr(&est, r, 255.0)?,
        };
        println!("PSNR: {p:.4} dB");
    }
    write_any(&est.map(|v| v * out_scale), &a.out, a.depth)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Clean image (.pgm, .png or .txt).
    #[arg(long)]
    clean: PathBuf,
    /// Poisson mean of the brightest pixel.
    #[arg(long)]
    peak: f64,
    /// Number of frames.
    #[arg(long = "frames", short = 'L')]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Output format for the frames: pgm or png.
    #[arg(long, default_value = "pgm")]
    format: String,
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Effective<'a> {
        command: &'static str,
        #[serde(flatten)]
        args: &'a SimulateArgs,
    }
    print_effective(&Effective { command: "simulate", args: &a });
    let ext = a.format.to_ascii_lowercase();
    let format = match ext.as_str() {
        "pgm" => ImageFormat::Pgm,
        "png" => ImageFormat::Png,
        other => return Err(CliError::usage(format!("unknown frame format '{other}'"))),
    };
    let clean = read_any(&a.clean)?;
    let stack = add_poisson(
        &clean,
        &NoiseSpec {
            peak: a.peak,
            realisations: a.frames,
            seed: a.seed,
        },
    )?;
    let depth = if stack.min_max().1 > 255.0 {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(format!("{}: {e}", a.out_dir.display())))?;
    for (i, f) in stack.iter().enumerate() {
        let path = a.out_dir.join(format!("frame_{i:03}.{ext}"));
        write_image_with_depth(f, &path, format, depth)?;
    }
    eprintln!("wrote {} frames to {}", stack.len(), a.out_dir.display());
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 255.0)]
    range: f64,
    /// Treat the estimate as Poisson-scale data at this peak and map it back
    /// to the reference intensity scale first.
    #[arg(long)]
    peak: Option<f64>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Effective<'a> {
        command: &'static str,
        #[serde(flatten)]
        args: &'a EvaluateArgs,
    }
    print_effective(&Effective { command: "evaluate", args: &a });
    let est = read_any(&a.estimate)?;
    let reference = read_any(&a.reference)?;
    let est = match a.peak {
        Some(p) if p > 0.0 => simeval::to_intensity(&est, reference.min_max().1, p),
        Some(_) => return Err(CliError::usage("--peak must be positive")),
        None => est,
    };
    let p = simeval::psnr(&est, &reference, a.range)?;
    println!("PSNR: {p:.4} dB");
    Ok(())
}

/// One benchmark cell, written `image:peakP:LN`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    image: String,
    peak: f64,
    frames: usize,
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [image, peak, frames] = parts[..] else {
        return Err(format!("cell '{s}' must look like house:peak1:L5"));
    };
    let peak = peak.trim_start_matches("peak").trim_start_matches('p');
    let frames = frames.trim_start_matches(['L', 'l']);
    Ok(Cell {
        image: image.to_ascii_lowercase(),
        peak: peak.parse().map_err(|_| format!("bad peak in '{s}'"))?,
        frames: frames.parse().map_err(|_| format!("bad frame count in '{s}'"))?,
    })
}

/// Candidate `sigma_lp` values; empty means the published value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid(Vec<f64>);

fn parse_grid(s: &str) -> Result<SigmaGrid, String> {
    if s.eq_ignore_ascii_case("published") {
        return Ok(SigmaGrid(Vec::new()));
    }
    let v: Vec<f64> = s
        .split(':')
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| format!("sigma grid '{s}' must be FROM:TO:STEP or a single value"))?;
    match v[..] {
        [x] if x > 0.0 => Ok(SigmaGrid(vec![x])),
        [from, to, step] if from > 0.0 && to >= from && step > 0.0 => {
            Ok(SigmaGrid(ExperimentSpec::sigma_range(from, to, step)))
        }
        _ => Err(format!("sigma grid '{s}' must be FROM:TO:STEP or a single value")),
    }
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    /// Restrict to these cells, e.g. house:peak1:L5,lena:peak5:L10.
    #[arg(long, value_delimiter = ',', value_parser = parse_cell)]
    subset: Vec<Cell>,
    #[arg(long, value_delimiter = ',', default_value = "house,lena,bridge,peppers")]
    images: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    peaks: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    frame_counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "bm3d1,bm3d2,bm3d3,bm3d4,bm3d4_sigma")]
    methods: Vec<MethodKind>,
    /// Noise seeds; PSNRs are averaged over them.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// bm3d4_sigma cutoffs as FROM:TO:STEP, one value, or "published".
    #[arg(long, default_value = "published", value_parser = parse_grid)]
    sigma_grid: SigmaGrid,
    /// Clean-image directory (default: $MFBM3D_ASSETS or ~/.cache/mfbm3d/assets).
    #[arg(long)]
    assets: Option<PathBuf>,
    /// Write rows as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the text table here as well as to stdout.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Serialize)]
struct ReproduceEffective<'a> {
    command: &'static str,
    cells: &'a [Cell],
    methods: Vec<String>,
    seeds: &'a [u64],
    sigma_grid: String,
    assets: String,
    #[serde(flatten)]
    settings: &'a Resolved,
}

pub fn reproduce(a: ReproduceArgs) -> Result<(), CliError> {
    let settings = resolve(&a.common)?;
    let cells: Vec<Cell> = if a.subset.is_empty() {
        let mut v = Vec::new();
        for image in &a.images {
            for &peak in &a.peaks {
                for &frames in &a.frame_counts {
                    v.push(Cell {
                        image: image.to_ascii_lowercase(),
                        peak,
                        frames,
                    });
                }
            }
        }
        v
    } else {
        a.subset.clone()
    };
    if a.seeds.is_empty() || a.methods.is_empty() {
        return Err(CliError::usage("at least one seed and one method are required"));
    }
    let assets = a.assets.clone().unwrap_or_else(default_asset_dir);
    print_effective(&ReproduceEffective {
        command: "reproduce-table1",
        cells: &cells,
        methods: a.methods.iter().map(|m| m.to_string()).collect(),
        seeds: &a.seeds,
        sigma_grid: if a.sigma_grid.0.is_empty() {
            "published".into()
        } else {
            format!("{:?}", a.sigma_grid.0)
        },
        assets: assets.display().to_string(),
        settings: &settings,
    });

    for cell in &cells {
        let path = asset_path(&assets, &cell.image);
        if !path.exists() {
            return Err(mfbm3d::Error::MissingAsset {
                name: cell.image.clone(),
                path,
            }
            .into());
        }
        if a.methods.contains(&MethodKind::Bm3d4Sigma)
            && a.sigma_grid.0.is_empty()
            && published(&cell.image, cell.peak, cell.frames).is_none()
        {
            return Err(CliError::usage(format!(
                "no published sigma_lp for {}:peak{}:L{}; pass --sigma-grid",
                cell.image, cell.peak, cell.frames
            )));
        }
    }

    let engine = settings.engine.to_config();
    let mut rows: Vec<ResultRow> = Vec::new();
    for cell in &cells {
        let spec = ExperimentSpec {
            images: vec![cell.image.clone()],
            peaks: vec![cell.peak],
            frame_counts: vec![cell.frames],
            methods: a.methods.clone(),
            seeds: a.seeds.clone(),
            sigma_grid: a.sigma_grid.0.clone(),
            filter_shape: settings.filter_shape,
            engine,
            asset_dir: assets.clone(),
        };
        let got = with_pool(settings.jobs, || {
            simeval::run_experiment_with(&spec, |r| {
                eprintln!(
                    "{}:peak{}:L{} {:<11} {:>8.3} dB{}",
                    r.image,
                    r.peak,
                    r.frames,
                    r.method.as_str(),
                    r.psnr,
                    r.sigma_lp.map_or(String::new(), |s| format!(" (sigma_lp {s})"))
                )
            })
        })??;
        rows.extend(got);
    }

    let mut text = simeval::format_table(&rows);
    let mut cmp = String::new();
    for r in &rows {
        if let Some(c) = published(&r.image, r.peak, r.frames) {
            let p = c.psnr(r.method);
            let _ = writeln!(
                cmp,
                "{:<8} peak {} L={:<2} {:<11} {:>7.2}  published {:>6.2}  diff {:+.2}",
                r.image,
                r.peak,
                r.frames,
                r.method.as_str(),
                r.psnr,
                p,
                r.psnr - p
            );
        }
    }
    if !cmp.is_empty() {
        text.push_str("\nagainst published values\n");
        text.push_str(&cmp);
    }
    print!("{text}");
    if let Some(path) = &a.table {
        fs::write(path, &text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &a.csv {
        let file = fs::File::create(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        simeval::write_csv(&rows, file)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse() {
        let c = parse_cell("House:peak1:L5").unwrap();
        assert_eq!((c.image.as_str(), c.peak, c.frames), ("house", 1.0, 5));
        assert_eq!(parse_cell("lena:3:10").unwrap().frames, 10);
        assert!(parse_cell("lena:peak1").is_err());
        assert!(parse_cell("lena:peakx:L5").is_err());
    }

    #[test]
    fn grids_parse() {
        assert!(parse_grid("published").unwrap().0.is_empty());
        assert_eq!(parse_grid("95").unwrap().0, vec![95.0]);
        assert_eq!(parse_grid("80:220:5").unwrap().0.len(), 29);
        assert!(parse_grid("220:80:5").is_err());
    }

    #[test]
    fn text_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let f = Frame::from_fn(5, 3, |r, c| (r as f64 + 0.1) / (c as f64 + 3.0));
        write_any(&f, &path, BitDepth::Eight).unwrap();
        assert_eq!(read_any(&path).unwrap(), f);
    }
}
