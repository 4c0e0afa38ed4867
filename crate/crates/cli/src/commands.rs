//! Argument definitions and command bodies. Each command returns the text
//! it prints on stdout.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crf_core::degrade::{DegradationSpec, Mask};
use crf_core::imgcore::{load_image, psnr, save_image};
use crf_core::solver::{run, write_diagnostics, Task};

use crate::bench::{self, BenchOptions, Suite};
use crate::config;
use crate::error::{CliError, Result};
use crate::manifest::{self, Manifest};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "CRF_RESTORE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "crf-restore", version, about = "Patch-prior CRF image restoration")]
pub struct Cli {
    /// Worker threads (default: $CRF_RESTORE_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add Gaussian noise and drop pixels at random.
    Degrade(DegradeArgs),
    /// Remove additive Gaussian noise.
    Denoise(DenoiseArgs),
    /// Fill in missing pixels given an observation mask.
    Inpaint(InpaintArgs),
    /// Print the PSNR (peak 255) of a test image against a reference.
    Metrics(MetricsArgs),
    /// Run the denoising or inpainting table over a directory of test images.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Probability that a pixel is kept.
    #[arg(long, default_value_t = 1.0)]
    pub keep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the observation mask (255 = observed).
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    /// Also write the manifest to this file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Gaussian,
    Gsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RootArg {
    Square,
    SqrtOfRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnclusteredArg {
    Skip,
    NearestReference,
}

/// Solver settings shared by `denoise` and `inpaint`. Each flag overrides
/// the task preset and the config file.
#[derive(Debug, Default, Args)]
pub struct SolverFlags {
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise standard deviation of the observation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub gamma2: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Patches per cluster, reference included.
    #[arg(long)]
    pub k_total: Option<usize>,
    /// Side of the square search window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Spacing of the reference patch grid.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Gamma shape of the GSM scale prior.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub scale_root: Option<RootArg>,
    /// Lower bound on the GSM scale.
    #[arg(long)]
    pub min_scale: Option<f64>,
    /// Handling of patches outside every cluster.
    #[arg(long, value_enum)]
    pub unclustered: Option<UnclusteredArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SolverFlags {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("sigma", self.sigma.map(|v| v.to_string()));
        push(
            "prior",
            self.prior.map(|p| match p {
                PriorArg::Gaussian => "gaussian".into(),
                PriorArg::Gsm => "gsm".into(),
            }),
        );
        push("iterations", self.iterations.map(|v| v.to_string()));
        push("lambda0", self.lambda0.map(|v| v.to_string()));
        push("rho0", self.rho0.map(|v| v.to_string()));
        push("gamma1", self.gamma1.map(|v| v.to_string()));
        push("gamma2", self.gamma2.map(|v| v.to_string()));
        push("patch_size", self.patch_size.map(|v| v.to_string()));
        push("k_total", self.k_total.map(|v| v.to_string()));
        push("window", self.window.map(|v| v.to_string()));
        push("reference_stride", self.stride.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push(
            "scale_from_root",
            self.scale_root.map(|r| match r {
                RootArg::Square => "square".into(),
                RootArg::SqrtOfRoot => "sqrt_of_root".into(),
            }),
        );
        push("min_scale", self.min_scale.map(|v| v.to_string()));
        push(
            "unclustered",
            self.unclustered.map(|u| match u {
                UnclusteredArg::Skip => "skip".into(),
                UnclusteredArg::NearestReference => "nearest_reference".into(),
            }),
        );
        push("seed", self.seed.map(|v| v.to_string()));
        out
    }
}

#[derive(Debug, Args)]
pub struct OutputFlags {
    /// Clean image; adds a PSNR column to the diagnostics and the manifest.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Per-iteration CSV (iteration,lambda,rho,objective,psnr).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Also write the manifest to this file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub out: OutputFlags,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    pub input: PathBuf,
    /// Observation mask, nonzero = observed.
    pub mask: PathBuf,
    pub output: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub out: OutputFlags,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub reference: PathBuf,
    pub test: PathBuf,
    /// Write a manifest to this file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Denoise,
    Inpaint,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory holding the test images as PNG or PGM.
    pub image_dir: PathBuf,
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    /// Results CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-cell runtimes (default: results path with a `.timing.csv` suffix).
    #[arg(long)]
    pub timings: Option<PathBuf>,
    /// Cells to run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Base seed for the degradations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `sha256sum`-style list of expected image digests.
    #[arg(long)]
    pub hashes: Option<PathBuf>,
    /// Settings file applied on top of the suite preset (prior and sigma are set per cell).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the manifest to this file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<String> {
    match &cli.command {
        Command::Degrade(a) => degrade(a, argv),
        Command::Denoise(a) => restore(Task::Denoise, &a.input, None, &a.output, &a.solver, &a.out, argv),
        Command::Inpaint(a) => restore(
            Task::Inpaint,
            &a.input,
            Some(&a.mask),
            &a.output,
            &a.solver,
            &a.out,
            argv,
        ),
        Command::Metrics(a) => metrics(a, argv),
        Command::Bench(a) => bench_cmd(a, argv),
    }
}

fn finish(m: &Manifest, path: Option<&Path>) -> Result<String> {
    if let Some(p) = path {
        m.write(p)?;
    }
    Ok(m.to_json() + "\n")
}

pub fn degrade(a: &DegradeArgs, argv: &[String]) -> Result<String> {
    let start = Instant::now();
    let spec = DegradationSpec {
        noise_sigma: a.sigma,
        keep_probability: a.keep,
        seed: a.seed,
    };
    spec.validate()?;
    let clean = load_image(&a.input)?;
    let (y, mask) = spec.apply(&clean)?;
    save_image(&y, &a.output)?;
    let mut outputs = vec![manifest::file_entry(&a.output)?];
    if let Some(p) = &a.mask_out {
        mask.save(p)?;
        outputs.push(manifest::file_entry(p)?);
    }
    let mut m = Manifest::new("degrade", argv);
    m.set("inputs", json!([manifest::file_entry(&a.input)?]))
        .set("degradation", manifest::degradation_json(&spec))
        .set("outputs", Value::Array(outputs))
        .set("observed_fraction", json!(mask.observed_fraction()))
        .set("wall_time_seconds", json!(start.elapsed().as_secs_f64()));
    finish(&m, a.manifest.as_deref())
}

fn restore(
    task: Task,
    input: &Path,
    mask_path: Option<&Path>,
    output: &Path,
    flags: &SolverFlags,
    out: &OutputFlags,
    argv: &[String],
) -> Result<String> {
    let start = Instant::now();
    let file_pairs = match &flags.config {
        Some(p) => config::load_file(p)?,
        None => Vec::new(),
    };
    if task == Task::Denoise && flags.sigma.is_none() && !file_pairs.iter().any(|(k, _)| k == "sigma") {
        return Err(CliError::Usage(
            "denoise needs the noise level: pass --sigma or set sigma in the config file".into(),
        ));
    }
    let cfg = config::resolve(task, flags.config.as_deref(), &flags.pairs())?;

    let y = load_image(input)?;
    let mask = mask_path.map(Mask::load).transpose()?;
    let reference = out.reference.as_ref().map(load_image).transpose()?;
    let (restored, records) = run(&y, mask.as_ref(), &cfg, reference.as_ref())?;
    save_image(&restored, output)?;

    let mut inputs = vec![manifest::file_entry(input)?];
    if let Some(p) = mask_path {
        inputs.push(manifest::file_entry(p)?);
    }
    let mut outputs = vec![manifest::file_entry(output)?];
    if let Some(p) = &out.diagnostics {
        let file = File::create(p).map_err(CliError::io(p))?;
        write_diagnostics(&records, BufWriter::new(file)).map_err(CliError::io(p))?;
        outputs.push(manifest::file_entry(p)?);
    }

    let mut m = Manifest::new(if task == Task::Denoise { "denoise" } else { "inpaint" }, argv);
    m.set("inputs", Value::Array(inputs))
        .set("preset", json!(config::preset_name(task)))
        .set("config", manifest::config_json(&cfg))
        .set("outputs", Value::Array(outputs));
    if let (Some(p), Some(r)) = (&out.reference, &reference) {
        // PSNR of the file as written, after 8-bit quantization
        let written = load_image(output)?;
        m.set("reference", manifest::file_entry(p)?)
            .set("psnr", manifest::psnr_json(psnr(r, &written, 255.0)?));
    }
    m.set("wall_time_seconds", json!(start.elapsed().as_secs_f64()));
    finish(&m, out.manifest.as_deref())
}

pub fn format_psnr(p: f64) -> String {
    if p.is_finite() {
        format!("{p:.4}")
    } else {
        "inf".to_string()
    }
}

pub fn metrics(a: &MetricsArgs, argv: &[String]) -> Result<String> {
    let reference = load_image(&a.reference)?;
    let test = load_image(&a.test)?;
    let p = psnr(&reference, &test, 255.0)?;
    if let Some(path) = &a.manifest {
        let mut m = Manifest::new("metrics", argv);
        m.set(
            "inputs",
            json!([manifest::file_entry(&a.reference)?, manifest::file_entry(&a.test)?]),
        )
        .set("psnr", manifest::psnr_json(p));
        m.write(path)?;
    }
    Ok(format_psnr(p) + "\n")
}

fn default_timings_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    out.with_file_name(format!("{stem}.timing.csv"))
}

pub fn bench_cmd(a: &BenchArgs, argv: &[String]) -> Result<String> {
    let start = Instant::now();
    let suite = match a.suite {
        SuiteArg::Denoise => Suite::Denoise,
        SuiteArg::Inpaint => Suite::Inpaint,
    };
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let base = config::resolve(suite.task(), a.config.as_deref(), &[])?;
    let (found, missing) = bench::find_images(&a.image_dir, suite)?;
    for name in &missing {
        eprintln!("warning: {name} not found in {}, skipped", a.image_dir.display());
    }

    let expected = match &a.hashes {
        Some(p) => Some(bench::parse_hash_list(&fs::read_to_string(p).map_err(CliError::io(p))?)),
        None => {
            eprintln!("warning: no --hashes list given, image digests are recorded but not checked");
            None
        }
    };
    let mut inputs = Vec::new();
    for (name, path) in &found {
        let digest = manifest::file_sha256(path)?;
        let file_name = path.file_name().and_then(|f| f.to_str()).unwrap_or_default();
        let status = match expected.as_ref().map(|e| e.get(file_name)) {
            None => "unchecked",
            Some(None) => {
                eprintln!("warning: {file_name} is not in the hash list");
                "unlisted"
            }
            Some(Some(h)) if *h == digest => "ok",
            Some(Some(_)) => {
                eprintln!("warning: {file_name} does not match the expected SHA-256, results may differ from the tables");
                "mismatch"
            }
        };
        inputs.push(json!({
            "image": name,
            "path": path.display().to_string(),
            "sha256": digest,
            "hash_check": status,
        }));
    }

    let images = bench::load_images(&found)?;
    let opts = BenchOptions {
        suite,
        base: base.clone(),
        seed: a.seed,
        jobs: a.jobs,
    };
    let results = bench::run_suite(&images, &opts, |r| {
        let published = r.published.map(|p| format!(" (published {p:.2})")).unwrap_or_default();
        eprintln!(
            "{} sigma={} available={} {}: {:.2} dB{published} in {:.1}s",
            r.cell.image,
            r.cell.sigma,
            r.cell.available,
            config::prior_name(r.cell.prior),
            r.psnr,
            r.seconds
        );
    })?;
    bench::write_results(&a.out, suite, &results)?;
    let timings = a.timings.clone().unwrap_or_else(|| default_timings_path(&a.out));
    bench::write_timings(&timings, &results)?;

    let mut m = Manifest::new("bench", argv);
    m.set("suite", json!(suite.name()))
        .set("inputs", Value::Array(inputs))
        .set("missing", json!(missing))
        .set("degradation_seed", json!(a.seed))
        .set("preset", json!(config::preset_name(suite.task())))
        .set("config", manifest::config_json(&base))
        .set(
            "outputs",
            json!([manifest::file_entry(&a.out)?, manifest::file_entry(&timings)?]),
        )
        .set("wall_time_seconds", json!(start.elapsed().as_secs_f64()));
    finish(&m, a.manifest.as_deref())
}

