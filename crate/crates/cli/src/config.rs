//! Solver settings from presets, flat `key = value` files and flags.
//!
//! Later sources override earlier ones: preset, then config file, then
//! command-line flags. The same keys are written back into manifests, so a
//! manifest's `config` block is itself a valid config file.

use std::fs;
use std::path::Path;

use crf_core::priors::ScaleFromRoot;
use crf_core::solver::{PriorKind, SolverConfig, Task, UnclusteredPatches};

use crate::error::{CliError, Result};

pub const KEYS: &[&str] = &[
    "prior",
    "sigma",
    "iterations",
    "lambda0",
    "rho0",
    "gamma1",
    "gamma2",
    "patch_size",
    "k_total",
    "window",
    "reference_stride",
    "alpha",
    "scale_from_root",
    "min_scale",
    "unclustered",
    "seed",
];

/// Preset for a task, named `paper-denoise` / `paper-inpaint`.
pub fn preset(task: Task) -> SolverConfig {
    match task {
        Task::Denoise => SolverConfig::paper_denoise(0.0, PriorKind::Gsm),
        Task::Inpaint => SolverConfig::paper_inpaint(0.0, PriorKind::Gsm),
    }
}

pub fn preset_name(task: Task) -> &'static str {
    match task {
        Task::Denoise => "paper-denoise",
        Task::Inpaint => "paper-inpaint",
    }
}

pub fn prior_name(p: PriorKind) -> &'static str {
    match p {
        PriorKind::Gaussian => "gaussian",
        PriorKind::Gsm => "gsm",
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

/// Applies one setting. Unknown keys and malformed values are usage errors.
pub fn apply(cfg: &mut SolverConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    match key.trim() {
        "prior" => {
            cfg.prior = match value {
                "gaussian" => PriorKind::Gaussian,
                "gsm" => PriorKind::Gsm,
                _ => return Err(CliError::Usage(format!("unknown prior {value:?} (gaussian or gsm)"))),
            }
        }
        "sigma" => cfg.sigma = parse("sigma", value)?,
        "iterations" => cfg.iterations = parse("iterations", value)?,
        "lambda0" => cfg.lambda0 = parse("lambda0", value)?,
        "rho0" => cfg.rho0 = parse("rho0", value)?,
        "gamma1" => cfg.gamma1 = parse("gamma1", value)?,
        "gamma2" => cfg.gamma2 = parse("gamma2", value)?,
        "patch_size" => cfg.patch_size = parse("patch_size", value)?,
        "k_total" => cfg.k_total = parse("k_total", value)?,
        "window" => cfg.window = parse("window", value)?,
        "reference_stride" => cfg.reference_stride = parse("reference_stride", value)?,
        "alpha" => cfg.gsm.alpha = parse("alpha", value)?,
        "scale_from_root" => {
            cfg.gsm.scale_from_root = match value {
                "square" => ScaleFromRoot::Square,
                "sqrt_of_root" => ScaleFromRoot::SqrtOfRoot,
                _ => return Err(CliError::Usage(format!("unknown scale_from_root {value:?} (square or sqrt_of_root)"))),
            }
        }
        "min_scale" => cfg.gsm.min_scale = parse("min_scale", value)?,
        "unclustered" => {
            cfg.unclustered = match value {
                "skip" => UnclusteredPatches::Skip,
                "nearest_reference" => UnclusteredPatches::NearestReference,
                _ => {
                    return Err(CliError::Usage(format!(
                        "unknown unclustered policy {value:?} (skip or nearest_reference)"
                    )))
                }
            }
        }
        "seed" => cfg.seed = parse("seed", value)?,
        other => return Err(CliError::Usage(format!("unknown setting {other:?}"))),
    }
    Ok(())
}

/// Parses a flat config file: one `key = value` per line, `#` starts a comment.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_file(&text).map_err(|e| match e {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Preset, then file settings, then flag settings.
pub fn resolve(
    task: Task,
    file: Option<&Path>,
    flags: &[(String, String)],
) -> Result<SolverConfig> {
    let mut cfg = preset(task);
    if let Some(path) = file {
        for (k, v) in load_file(path)? {
            apply(&mut cfg, &k, &v)?;
        }
    }
    for (k, v) in flags {
        apply(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every key with its value in `cfg`, in [`KEYS`] order.
pub fn to_pairs(cfg: &SolverConfig) -> Vec<(&'static str, String)> {
    let root = match cfg.gsm.scale_from_root {
        ScaleFromRoot::Square => "square",
        ScaleFromRoot::SqrtOfRoot => "sqrt_of_root",
    };
    let unclustered = match cfg.unclustered {
        UnclusteredPatches::Skip => "skip",
        UnclusteredPatches::NearestReference => "nearest_reference",
    };
    vec![
        ("prior", prior_name(cfg.prior).to_string()),
        ("sigma", cfg.sigma.to_string()),
        ("iterations", cfg.iterations.to_string()),
        ("lambda0", cfg.lambda0.to_string()),
        ("rho0", cfg.rho0.to_string()),
        ("gamma1", cfg.gamma1.to_string()),
        ("gamma2", cfg.gamma2.to_string()),
        ("patch_size", cfg.patch_size.to_string()),
        ("k_total", cfg.k_total.to_string()),
        ("window", cfg.window.to_string()),
        ("reference_stride", cfg.reference_stride.to_string()),
        ("alpha", cfg.gsm.alpha.to_string()),
        ("scale_from_root", root.to_string()),
        ("min_scale", cfg.gsm.min_scale.to_string()),
        ("unclustered", unclustered.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_pairs() {
        let mut cfg = preset(Task::Inpaint);
        apply(&mut cfg, "prior", "gaussian").unwrap();
        apply(&mut cfg, "lambda0", "3e-5").unwrap();
        apply(&mut cfg, "scale_from_root", "sqrt_of_root").unwrap();
        apply(&mut cfg, "min_scale", "1e-9").unwrap();
        apply(&mut cfg, "unclustered", "nearest_reference").unwrap();
        let pairs = to_pairs(&cfg);
        assert_eq!(pairs.iter().map(|p| p.0).collect::<Vec<_>>(), KEYS);
        let mut back = preset(Task::Inpaint);
        for (k, v) in &pairs {
            apply(&mut back, k, v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_syntax() {
        let parsed = parse_file("# comment\n\nsigma = 20\n prior=gaussian # trailing\n").unwrap();
        assert_eq!(
            parsed,
            vec![("sigma".into(), "20".into()), ("prior".into(), "gaussian".into())]
        );
        assert!(parse_file("sigma 20").is_err());
    }

    #[test]
    fn precedence_preset_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "sigma = 20\niterations = 3\ngamma1 = 1.5\n").unwrap();
        let flags = vec![("iterations".to_string(), "5".to_string())];
        let cfg = resolve(Task::Denoise, Some(&path), &flags).unwrap();
        assert_eq!(cfg.sigma, 20.0);
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.gamma1, 1.5);
        assert_eq!(cfg.lambda0, 1e-4);
    }

    #[test]
    fn bad_settings_are_usage_errors() {
        let mut cfg = preset(Task::Denoise);
        for (k, v) in [("nope", "1"), ("sigma", "abc"), ("prior", "laplace"), ("k_total", "-3")] {
            assert!(matches!(apply(&mut cfg, k, v), Err(CliError::Usage(_))));
        }
        let flags = vec![("gamma1".to_string(), "0.9".to_string())];
        assert!(resolve(Task::Denoise, None, &flags).is_err());
    }
}
