//! Experiment runner: configs, latent files, CSV/SVG output and manifests.

pub mod config;
pub mod experiments;
pub mod latent_file;
pub mod svg;
pub mod table;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, InvertMethod, Kind, ModelSpec, Params};
pub use latent_file::{load_latent, load_latent_for, save_latent};
pub use table::Table;

use crate::error::{Error, Result};
use crate::numerics::RNG_ALGORITHM;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub rng: String,
    pub schedule_fingerprint: String,
    pub files: Vec<String>,
    pub summary: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("bad manifest {}: {e}", path.display())))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

/// Pulls the timestep out of a `"... t=12"` style context.
fn timestep_in(context: &str) -> usize {
    context
        .rsplit("t=")
        .next()
        .filter(|_| context.contains("t="))
        .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next())
        .and_then(|d| d.parse().ok())
        .unwrap_or(0)
}

fn numerical_context(kind: Kind, err: Error) -> Error {
    match err {
        Error::NonFinite { context } => Error::Numerical {
            experiment: kind.name().to_string(),
            t: timestep_in(&context),
            detail: format!("non-finite value in {context}"),
        },
        Error::NotSpd(detail) | Error::DivisionByZero(detail) => {
            Error::Numerical { experiment: kind.name().to_string(), t: timestep_in(&detail), detail }
        }
        other => other,
    }
}

/// Runs an experiment and writes its tables, charts, latents, `config.toml`
/// and `manifest.json` into `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let report = experiments::execute(cfg).map_err(|e| numerical_context(cfg.kind, e))?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut files = vec![];
    for (name, table) in &report.tables {
        table.write(&dir.join(name))?;
        files.push(name.clone());
    }
    for (name, svg) in &report.charts {
        std::fs::write(dir.join(name), svg)?;
        files.push(name.clone());
    }
    for (name, code) in &report.latents {
        save_latent(code, &dir.join(name))?;
        files.push(name.clone());
    }
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    files.push(CONFIG_FILE.to_string());
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.kind.name().to_string(),
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        schedule_fingerprint: format!("{:016x}", cfg.schedule.build()?.fingerprint()),
        files,
        summary: report.summary,
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(RunOutput { out_dir: dir.clone(), manifest })
}

/// Re-runs the experiment recorded in a manifest, optionally into another directory.
pub fn rerun(manifest_path: &Path, out_dir: Option<&Path>) -> Result<RunOutput> {
    let mut cfg = Manifest::load(manifest_path)?.config;
    if let Some(dir) = out_dir {
        cfg.out_dir = dir.to_path_buf();
    }
    run(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_parsing() {
        assert_eq!(timestep_in("reverse step t=17"), 17);
        assert_eq!(timestep_in("colour edit t=3 (x)"), 3);
        assert_eq!(timestep_in("inversion input"), 0);
    }

    #[test]
    fn non_finite_becomes_numerical() {
        let e = numerical_context(Kind::Shift, Error::NonFinite { context: "reverse step t=4".into() });
        assert!(matches!(&e, Error::Numerical { t: 4, experiment, .. } if experiment == "shift"));
        assert_eq!(e.exit_code(), 3);
    }
}
