use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efddpm::harness::{self, ExperimentConfig, InvertMethod, Kind};
use efddpm::{Error, Result};

/// Diffusion inversion and latent-editing experiments on analytic data models.
#[derive(Parser)]
#[command(name = "efddpm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by `--config`.
    Run(Overrides),
    /// Draw samples with the ancestral sampler.
    Sample(Overrides),
    /// Invert one data sample and save its latent code.
    Invert(Overrides),
    /// Invert and regenerate, reporting the reconstruction error.
    Reconstruct(Overrides),
    /// Angle histograms of consecutive noise vectors on the 2-D toy model.
    Toy2dStats(Overrides),
    /// Per-step std and consecutive correlation of noise maps.
    NoiseStats(Overrides),
    /// Shift latents and measure valid-pixel MSE.
    Shift(Overrides),
    /// Flip latents and compare against the flipped original.
    Flip(Overrides),
    /// Masked colour edit over a strength grid.
    ColorEdit(Overrides),
    /// Regenerate under another condition; reports diversity.
    CondSwap(Overrides),
    /// T_skip × guidance sweep for condition swaps.
    Sweep(Overrides),
    /// Print the default config for an experiment kind.
    Preset { kind: String },
    /// Re-run an experiment from its manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Overrides {
    /// TOML experiment config; the kind's preset is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Inference steps (respacing of the training schedule).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// edit-friendly, cyclediffusion or ddim.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    latent: Option<PathBuf>,
    #[arg(long)]
    cond: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long)]
    t_skip: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    t_skips: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    shifts: Option<Vec<usize>>,
    #[arg(long)]
    axis: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    strengths: Option<Vec<f64>>,
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    t2: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
}

impl Overrides {
    fn resolve(self, kind: Option<Kind>) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, kind) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(kind)) => ExperimentConfig::preset(kind),
            (None, None) => return Err(Error::InvalidConfig("`run` needs --config".into())),
        };
        if let Some(kind) = kind {
            cfg.kind = kind;
        }
        let p = &mut cfg.params;
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {$(
                if let Some(v) = self.$src { $dst = v; }
            )*};
        }
        set!(seed => cfg.seed, out => cfg.out_dir, count => cfg.count, eta => cfg.schedule.eta,
             axis => p.axis, shifts => p.shifts, strengths => p.strengths, t1 => p.t1, t2 => p.t2,
             bins => p.bins, t_skip => p.t_skip);
        if let Some(k) = self.steps {
            cfg.schedule.steps = Some(k);
        }
        if let Some(m) = &self.method {
            p.method = m.parse::<InvertMethod>()?;
        }
        if self.latent.is_some() {
            p.latent = self.latent;
        }
        if self.cond.is_some() {
            p.cond = self.cond;
        }
        if self.target.is_some() {
            p.target = self.target;
        }
        if self.guidance.is_some() {
            p.guidance = self.guidance;
        }
        if self.t_skips.is_some() {
            p.t_skips = self.t_skips;
        }
        Ok(cfg)
    }
}

fn execute(cmd: Cmd) -> Result<()> {
    let (overrides, kind) = match cmd {
        Cmd::Preset { kind } => {
            print!("{}", ExperimentConfig::preset(kind.parse()?).to_toml()?);
            return Ok(());
        }
        Cmd::Rerun { manifest, out } => return report(harness::rerun(&manifest, out.as_deref())?),
        Cmd::Run(o) => (o, None),
        Cmd::Sample(o) => (o, Some(Kind::Sample)),
        Cmd::Invert(o) => (o, Some(Kind::Invert)),
        Cmd::Reconstruct(o) => (o, Some(Kind::Reconstruct)),
        Cmd::Toy2dStats(o) => (o, Some(Kind::Toy2dStats)),
        Cmd::NoiseStats(o) => (o, Some(Kind::NoiseStats)),
        Cmd::Shift(o) => (o, Some(Kind::Shift)),
        Cmd::Flip(o) => (o, Some(Kind::Flip)),
        Cmd::ColorEdit(o) => (o, Some(Kind::ColorEdit)),
        Cmd::CondSwap(o) => (o, Some(Kind::CondSwap)),
        Cmd::Sweep(o) => (o, Some(Kind::Sweep)),
    };
    report(harness::run(&overrides.resolve(kind)?)?)
}

fn report(out: harness::RunOutput) -> Result<()> {
    for line in &out.manifest.summary {
        println!("{line}");
    }
    println!("wrote {} files to {}", out.manifest.files.len() + 1, out.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
