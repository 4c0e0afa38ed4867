//! Table-style benchmark over the standard test images.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crf_core::degrade::DegradationSpec;
use crf_core::imgcore::{load_image, psnr, Image};
use crf_core::solver::{run, PriorKind, SolverConfig, Task};

use crate::config;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Denoise,
    Inpaint,
}

impl Suite {
    pub fn task(self) -> Task {
        match self {
            Suite::Denoise => Task::Denoise,
            Suite::Inpaint => Task::Inpaint,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Denoise => "denoise",
            Suite::Inpaint => "inpaint",
        }
    }

    /// Canonical image names with accepted file stems.
    pub fn images(self) -> &'static [(&'static str, &'static [&'static str])] {
        match self {
            Suite::Denoise => &[
                ("peppers", &["peppers"]),
                ("house", &["house"]),
                ("cameraman", &["cameraman", "c.man", "cman"]),
                ("barbara", &["barbara"]),
                ("lena", &["lena"]),
                ("man", &["man"]),
            ],
            Suite::Inpaint => &[
                ("barbara", &["barbara"]),
                ("lena", &["lena"]),
                ("house", &["house"]),
                ("boats", &["boats", "boat"]),
            ],
        }
    }

    /// `(sigma, available fraction)` settings of the suite.
    pub fn settings(self) -> Vec<(f64, f64)> {
        match self {
            Suite::Denoise => [10.0, 20.0, 30.0, 50.0].iter().map(|&s| (s, 1.0)).collect(),
            Suite::Inpaint => [0.8, 0.5, 0.3].iter().map(|&p| (0.0, p)).collect(),
        }
    }
}

pub const PRIORS: [PriorKind; 2] = [PriorKind::Gaussian, PriorKind::Gsm];

/// Published PSNR (dB) for the Gaussian and GSM variants of the method.
pub fn published_psnr(suite: Suite, image: &str, sigma: f64, available: f64, prior: PriorKind) -> Option<f64> {
    let pick = |pair: (f64, f64)| match prior {
        PriorKind::Gaussian => pair.0,
        PriorKind::Gsm => pair.1,
    };
    match suite {
        Suite::Denoise => {
            let col = match sigma as u32 {
                10 => 0,
                20 => 1,
                30 => 2,
                50 => 3,
                _ => return None,
            };
            let row: [(f64, f64); 4] = match image {
                "peppers" => [(34.66, 34.68), (31.35, 31.41), (29.34, 29.40), (26.71, 26.82)],
                "house" => [(36.72, 36.85), (33.97, 34.05), (32.31, 32.42), (29.99, 30.22)],
                "cameraman" => [(34.09, 34.21), (30.41, 30.49), (28.32, 28.52), (26.29, 26.51)],
                "barbara" => [(35.21, 35.36), (32.10, 32.17), (30.04, 30.15), (27.37, 27.48)],
                "lena" => [(35.91, 36.02), (33.05, 33.11), (31.32, 31.34), (28.87, 28.94)],
                "man" => [(34.06, 34.04), (33.81, 33.75), (28.75, 28.77), (26.62, 26.66)],
                _ => return None,
            };
            Some(pick(row[col]))
        }
        Suite::Inpaint => {
            let col = match (available * 100.0).round() as u32 {
                80 => 0,
                50 => 1,
                30 => 2,
                _ => return None,
            };
            let row: [(f64, f64); 3] = match image {
                "barbara" => [(43.28, 43.37), (37.79, 38.01), (34.48, 34.59)],
                "lena" => [(43.42, 43.51), (38.16, 38.29), (34.90, 35.08)],
                "house" => [(45.91, 46.40), (40.10, 40.22), (35.76, 36.78)],
                "boats" => [(40.76, 40.82), (34.78, 34.90), (30.90, 31.01)],
                _ => return None,
            };
            Some(pick(row[col]))
        }
    }
}

/// Suite images found on disk, as `(name, path)` pairs.
pub type Found = Vec<(String, PathBuf)>;

/// Finds suite images in `dir` by case-insensitive stem (`.png` or `.pgm`).
/// Returns the found `(name, path)` pairs in suite order and the missing names.
pub fn find_images(dir: &Path, suite: Suite) -> Result<(Found, Vec<String>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    files.sort();
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for (name, stems) in suite.images() {
        let hit = files.iter().find(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| stems.iter().any(|st| s.eq_ignore_ascii_case(st)))
        });
        match hit {
            Some(p) => found.push((name.to_string(), p.clone())),
            None => missing.push(name.to_string()),
        }
    }
    Ok((found, missing))
}

/// Reads a `sha256sum`-style list (`<hex>  <file name>`), keyed by file name.
pub fn parse_hash_list(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let (hash, name) = line.split_once(char::is_whitespace)?;
            let name = name.trim().trim_start_matches('*');
            Some((name.to_string(), hash.to_ascii_lowercase()))
        })
        .collect()
}

/// Degradation seed of one cell, independent of run order.
pub fn cell_seed(base: u64, image: &str, sigma: f64, available: f64) -> u64 {
    let digest = Sha256::digest(format!("{base}/{image}/{sigma}/{available}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub image: String,
    pub sigma: f64,
    pub available: f64,
    pub prior: PriorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub psnr: f64,
    pub published: Option<f64>,
    pub seconds: f64,
}

/// Degrades `clean` for the cell and restores it with `base` settings.
pub fn run_cell(suite: Suite, clean: &Image, cell: &Cell, base: &SolverConfig, seed: u64) -> Result<f64> {
    let spec = DegradationSpec {
        noise_sigma: cell.sigma,
        keep_probability: cell.available,
        seed: cell_seed(seed, &cell.image, cell.sigma, cell.available),
    };
    let (y, mask) = spec.apply(clean)?;
    let cfg = SolverConfig {
        prior: cell.prior,
        sigma: cell.sigma,
        ..base.clone()
    };
    let mask = (suite == Suite::Inpaint).then_some(&mask);
    let (out, _) = run(&y, mask, &cfg, None)?;
    Ok(psnr(clean, &out, 255.0)?)
}

pub struct BenchOptions {
    pub suite: Suite,
    pub base: SolverConfig,
    pub seed: u64,
    pub jobs: usize,
}

/// Runs every (image, setting, prior) cell. Output order is fixed
/// regardless of `jobs`.
pub fn run_suite(
    images: &[(String, Image)],
    opts: &BenchOptions,
    progress: impl Fn(&CellResult) + Sync,
) -> Result<Vec<CellResult>> {
    let mut cells = Vec::new();
    for (k, (name, _)) in images.iter().enumerate() {
        for (sigma, available) in opts.suite.settings() {
            for prior in PRIORS {
                cells.push((
                    k,
                    Cell {
                        image: name.clone(),
                        sigma,
                        available,
                        prior,
                    },
                ));
            }
        }
    }
    let one = |(k, cell): &(usize, Cell)| -> Result<CellResult> {
        let start = Instant::now();
        let value = run_cell(opts.suite, &images[*k].1, cell, &opts.base, opts.seed)?;
        let result = CellResult {
            published: published_psnr(opts.suite, &cell.image, cell.sigma, cell.available, cell.prior),
            cell: cell.clone(),
            psnr: value,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&result);
        Ok(result)
    };
    if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {} jobs: {e}", opts.jobs)))?;
        pool.install(|| cells.par_iter().map(one).collect())
    } else {
        cells.iter().map(one).collect()
    }
}

pub const RESULTS_HEADER: [&str; 6] = ["image", "sigma", "available", "prior", "psnr", "published_psnr"];
pub const TIMING_HEADER: [&str; 5] = ["image", "sigma", "available", "prior", "seconds"];

/// Mean PSNR over images for each (setting, prior), in suite order. The
/// published column averages the same images' published values.
pub fn averages(suite: Suite, results: &[CellResult]) -> Vec<(f64, f64, PriorKind, f64, Option<f64>)> {
    let mut out = Vec::new();
    for (sigma, available) in suite.settings() {
        for prior in PRIORS {
            let rows: Vec<&CellResult> = results
                .iter()
                .filter(|r| r.cell.sigma == sigma && r.cell.available == available && r.cell.prior == prior)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
            let published = rows
                .iter()
                .map(|r| r.published)
                .sum::<Option<f64>>()
                .map(|s| s / n);
            out.push((sigma, available, prior, mean, published));
        }
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_default()
}

pub fn write_results(path: &Path, suite: Suite, results: &[CellResult]) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.cell.image.clone(),
            r.cell.sigma.to_string(),
            r.cell.available.to_string(),
            config::prior_name(r.cell.prior).to_string(),
            format!("{:.4}", r.psnr),
            fmt_opt(r.published),
        ])
        .map_err(csv_err)?;
    }
    for (sigma, available, prior, mean, published) in averages(suite, results) {
        w.write_record([
            "Avg.".to_string(),
            sigma.to_string(),
            available.to_string(),
            config::prior_name(prior).to_string(),
            format!("{mean:.4}"),
            fmt_opt(published),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_timings(path: &Path, results: &[CellResult]) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TIMING_HEADER).map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.cell.image.clone(),
            r.cell.sigma.to_string(),
            r.cell.available.to_string(),
            config::prior_name(r.cell.prior).to_string(),
            format!("{:.3}", r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn load_images(found: &[(String, PathBuf)]) -> Result<Vec<(String, Image)>> {
    found
        .iter()
        .map(|(name, path)| Ok((name.clone(), load_image(path)?)))
        .collect()
}
