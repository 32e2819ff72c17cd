//! Fetching and importing the clean benchmark images.
//!
//! Every image is stored as an 8-bit PGM named after the image. The SHA-256
//! of the source bytes is recorded in `assets.lock` the first time an image
//! is fetched; later fetches must reproduce the recorded digest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::Args;
use mfbm3d::imgio::{read_as_luma, write_image, ImageFormat};
use mfbm3d::simeval::{asset_path, default_asset_dir, BENCHMARK_IMAGES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::settings::print_effective;
use crate::CliError;

const LOCK_FILE: &str = "assets.lock";
const MAX_DOWNLOAD: u64 = 64 << 20;

/// Default download location of each benchmark image.
fn default_url(name: &str) -> Option<&'static str> {
    match name {
        "house" => Some("https://sipi.usc.edu/database/download.php?vol=misc&img=4.1.05"),
        "peppers" => Some("https://sipi.usc.edu/database/download.php?vol=misc&img=4.2.07"),
        "bridge" => Some("https://sipi.usc.edu/database/download.php?vol=misc&img=5.2.10"),
        "lena" => Some("https://upload.wikimedia.org/wikipedia/en/7/7d/Lenna_%28test_image%29.png"),
        _ => None,
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("'{s}' must look like NAME=VALUE"))?;
    Ok((k.trim().to_ascii_lowercase(), v.trim().to_string()))
}

#[derive(Args, Debug, Serialize)]
pub struct FetchArgs {
    /// Asset directory (default: $MFBM3D_ASSETS or ~/.cache/mfbm3d/assets).
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Images to fetch; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Use a local file instead of downloading, as NAME=PATH.
    #[arg(long = "import", value_parser = parse_pair)]
    imports: Vec<(String, String)>,
    /// Override a download location, as NAME=URL.
    #[arg(long = "url", value_parser = parse_pair)]
    urls: Vec<(String, String)>,
    /// Re-fetch images that are already present.
    #[arg(long)]
    force: bool,
    /// Accept a digest that differs from the lock file and record the new one.
    #[arg(long)]
    relock: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
struct LockEntry {
    sha256: String,
    source: String,
}

type Lock = BTreeMap<String, LockEntry>;

fn read_lock(dir: &Path) -> Result<Lock, CliError> {
    let path = dir.join(LOCK_FILE);
    if !path.exists() {
        return Ok(Lock::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_lock(dir: &Path, lock: &Lock) -> Result<(), CliError> {
    let path = dir.join(LOCK_FILE);
    let text = toml::to_string(lock).map_err(|e| CliError::io(e.to_string()))?;
    fs::write(&path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn download(url: &str) -> Result<Vec<u8>, CliError> {
    let resp = ureq::get(url)
        .call()
        .map_err(|e| CliError::io(format!("download of {url} failed: {e}")))?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .take(MAX_DOWNLOAD)
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::io(format!("download of {url} failed: {e}")))?;
    Ok(bytes)
}

/// Converts source bytes to luma and stores them as `<name>.pgm`.
fn store(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = dir.join(format!(".{name}.download"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(format!("{}: {e}", tmp.display())))?;
    let frame = read_as_luma(&tmp);
    let _ = fs::remove_file(&tmp);
    write_image(&frame?, &asset_path(dir, name), ImageFormat::Pgm)?;
    Ok(())
}

pub fn fetch(a: FetchArgs) -> Result<(), CliError> {
    let dir = a.dir.clone().unwrap_or_else(default_asset_dir);
    #[derive(Serialize)]
    struct Effective<'a> {
        command: &'static str,
        dir: String,
        #[serde(flatten)]
        args: &'a FetchArgs,
    }
    print_effective(&Effective {
        command: "fetch-assets",
        dir: dir.display().to_string(),
        args: &a,
    });
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;

    let imports: BTreeMap<_, _> = a.imports.iter().cloned().collect();
    let urls: BTreeMap<_, _> = a.urls.iter().cloned().collect();
    let mut names: Vec<String> = if !a.only.is_empty() {
        a.only.iter().map(|s| s.to_ascii_lowercase()).collect()
    } else if !imports.is_empty() {
        imports.keys().cloned().collect()
    } else {
        BENCHMARK_IMAGES.iter().map(|s| s.to_string()).collect()
    };
    names.dedup();

    let mut lock = read_lock(&dir)?;
    let mut failures = Vec::new();
    for name in &names {
        let target = asset_path(&dir, name);
        if target.exists() && !a.force && !imports.contains_key(name) {
            eprintln!("{name}: present at {}", target.display());
            continue;
        }
        let (bytes, source) = if let Some(path) = imports.get(name) {
            let bytes = fs::read(path).map_err(|e| CliError::io(format!("{path}: {e}")))?;
            (bytes, format!("file:{path}"))
        } else {
            let Some(url) = urls.get(name).map(String::as_str).or_else(|| default_url(name)) else {
                failures.push(format!("{name}: no known source; pass --url {name}=URL or --import {name}=PATH"));
                continue;
            };
            match download(url) {
                Ok(b) => (b, url.to_string()),
                Err(e) => {
                    failures.push(format!("{name}: {e}"));
                    continue;
                }
            }
        };
        let digest = sha256_hex(&bytes);
        if let Some(entry) = lock.get(name) {
            if entry.sha256 != digest && !a.relock {
                failures.push(format!(
                    "{name}: sha256 {digest} does not match locked {} (from {}); use --relock to accept",
                    entry.sha256, entry.source
                ));
                continue;
            }
        }
        store(&dir, name, &bytes)?;
        lock.insert(name.clone(), LockEntry { sha256: digest.clone(), source });
        eprintln!("{name}: stored {} (sha256 {digest})", target.display());
    }
    write_lock(&dir, &lock)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::io(failures.join("\n")))
    }
}
