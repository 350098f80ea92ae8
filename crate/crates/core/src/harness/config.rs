//! Experiment configuration, read from and written to TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Component, DenoiserModel, FieldKernel};
use crate::edits::DEFAULT_SOURCE_OFFSET;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::schedule::ScheduleConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Sample,
    Invert,
    Reconstruct,
    Toy2dStats,
    NoiseStats,
    Shift,
    Flip,
    ColorEdit,
    CondSwap,
    Sweep,
}

impl Kind {
    pub const ALL: [Kind; 10] = [
        Kind::Sample,
        Kind::Invert,
        Kind::Reconstruct,
        Kind::Toy2dStats,
        Kind::NoiseStats,
        Kind::Shift,
        Kind::Flip,
        Kind::ColorEdit,
        Kind::CondSwap,
        Kind::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Sample => "sample",
            Kind::Invert => "invert",
            Kind::Reconstruct => "reconstruct",
            Kind::Toy2dStats => "toy2d-stats",
            Kind::NoiseStats => "noise-stats",
            Kind::Shift => "shift",
            Kind::Flip => "flip",
            Kind::ColorEdit => "color-edit",
            Kind::CondSwap => "cond-swap",
            Kind::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment kind `{s}`")))
    }
}

/// Inversion used by `invert`, `reconstruct` and the edit experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvertMethod {
    #[default]
    EditFriendly,
    Cyclediffusion,
    Ddim,
}

impl InvertMethod {
    pub fn name(self) -> &'static str {
        match self {
            InvertMethod::EditFriendly => "edit-friendly",
            InvertMethod::Cyclediffusion => "cyclediffusion",
            InvertMethod::Ddim => "ddim",
        }
    }
}

impl FromStr for InvertMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [InvertMethod::EditFriendly, InvertMethod::Cyclediffusion, InvertMethod::Ddim]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown inversion method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    /// Isotropic variance; give either this or `covariance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    IsotropicGaussian {
        mean: Vec<f64>,
        variance: f64,
    },
    FullGaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    Gmm {
        weights: Vec<f64>,
        components: Vec<ComponentSpec>,
    },
    StationaryField {
        rows: usize,
        cols: usize,
        #[serde(default)]
        mean: f64,
        kernel: FieldKernel,
    },
    Conditional {
        members: BTreeMap<String, ModelSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unconditional: Option<Box<ModelSpec>>,
    },
}

fn vector(v: &[f64]) -> Result<Tensor> {
    Tensor::vector(v).map_err(|e| Error::InvalidConfig(format!("model mean: {e}")))
}

fn component(c: &ComponentSpec) -> Result<Component> {
    let mean = vector(&c.mean)?;
    match (&c.variance, &c.covariance) {
        (Some(v), None) => Ok(Component::Isotropic(crate::denoiser::IsotropicGaussian::new(mean, *v)?)),
        (None, Some(cov)) => Ok(Component::Full(crate::denoiser::FullGaussian::new(mean, Tensor::from_rows(cov)?)?)),
        _ => Err(Error::InvalidConfig("a component needs exactly one of `variance` or `covariance`".into())),
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<DenoiserModel> {
        match self {
            ModelSpec::IsotropicGaussian { mean, variance } => DenoiserModel::isotropic(vector(mean)?, *variance),
            ModelSpec::FullGaussian { mean, covariance } => {
                DenoiserModel::full(vector(mean)?, Tensor::from_rows(covariance)?)
            }
            ModelSpec::Gmm { weights, components } => {
                DenoiserModel::gmm(weights.clone(), components.iter().map(component).collect::<Result<_>>()?)
            }
            ModelSpec::StationaryField { rows, cols, mean, kernel } => {
                DenoiserModel::field(*rows, *cols, *mean, kernel.clone())
            }
            ModelSpec::Conditional { members, unconditional } => {
                let built = members
                    .iter()
                    .map(|(k, m)| Ok((k.clone(), m.build()?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                let uncond = unconditional.as_ref().map(|m| m.build()).transpose()?;
                DenoiserModel::conditional(built, uncond)
            }
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            ModelSpec::Conditional { members, .. } => members.keys().cloned().collect(),
            _ => vec![],
        }
    }
}

/// Axis-aligned rectangle `[r0, r1) × [c0, c1)` used as an edit mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
}

impl MaskSpec {
    pub fn to_tensor(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() != 2 {
            return Err(Error::InvalidConfig(format!("a rectangular mask needs a 2-D model, got {shape:?}")));
        }
        let [r0, r1] = self.rows;
        let [c0, c1] = self.cols;
        if r0 >= r1 || c0 >= c1 || r1 > shape[0] || c1 > shape[1] {
            return Err(Error::InvalidConfig(format!("mask {self:?} does not fit {shape:?}")));
        }
        let mut data = vec![0.0; shape[0] * shape[1]];
        for r in r0..r1 {
            for c in c0..c1 {
                data[r * shape[1] + c] = 1.0;
            }
        }
        Tensor::new(shape, data)
    }
}

fn d_shifts() -> Vec<usize> {
    vec![1, 2, 4, 8]
}
fn d_axis() -> usize {
    1
}
fn d_source_offset() -> usize {
    DEFAULT_SOURCE_OFFSET
}
fn d_strengths() -> Vec<f64> {
    vec![0.0, 0.01, 0.05, 0.1]
}
fn d_t1() -> usize {
    20
}
fn d_t2() -> usize {
    70
}
fn d_color_offset() -> f64 {
    0.5
}
fn d_bins() -> usize {
    18
}
fn d_guidance_grid() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

/// Parameters specific to some experiment kinds; unused ones are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default)]
    pub method: InvertMethod,
    /// Latent file to regenerate from (`reconstruct`); a fresh inversion otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<PathBuf>,
    /// Condition used when sampling and extracting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond: Option<String>,
    /// Condition to regenerate under (`cond-swap`, `sweep`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Classifier-free guidance weight for the target condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
    #[serde(default)]
    pub t_skip: usize,
    /// `T_skip` values for `sweep`; defaults to `{0, T/4, T/2, 3T/4, T}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_skips: Option<Vec<usize>>,
    #[serde(default = "d_guidance_grid")]
    pub guidance_grid: Vec<f64>,
    #[serde(default = "d_shifts")]
    pub shifts: Vec<usize>,
    #[serde(default = "d_axis")]
    pub axis: usize,
    #[serde(default = "d_source_offset")]
    pub source_offset: usize,
    #[serde(default = "d_strengths")]
    pub strengths: Vec<f64>,
    #[serde(default = "d_t1")]
    pub t1: usize,
    #[serde(default = "d_t2")]
    pub t2: usize,
    /// Colour target is `x_0 + color_offset`.
    #[serde(default = "d_color_offset")]
    pub color_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
    #[serde(default = "d_bins")]
    pub bins: usize,
}

impl Default for Params {
    fn default() -> Self {
        toml::from_str("").expect("all parameters have defaults")
    }
}

fn d_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    /// Samples, inversions or replications, depending on the kind.
    pub count: usize,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub params: Params,
}

/// The 32×32 smooth random field used by the image-like experiments.
pub fn field_model(rho: f64) -> ModelSpec {
    ModelSpec::StationaryField {
        rows: 32,
        cols: 32,
        mean: 0.0,
        kernel: FieldKernel { variance: 1.0, length_rows: 3.0, length_cols: 3.0, rho, nugget: 1e-3 },
    }
}

/// `N((10, 10), I)`.
pub fn toy2d_model() -> ModelSpec {
    ModelSpec::IsotropicGaussian { mean: vec![10.0, 10.0], variance: 1.0 }
}

/// Two labelled Gaussian modes with different shapes, and their equal-weight
/// mixture as the unconditional model. With equal covariances a condition
/// swap would reduce to a translation that ignores the noise maps.
pub fn two_mode_model() -> ModelSpec {
    let a = ComponentSpec { mean: vec![-3.0, 1.0], variance: Some(0.5), covariance: None };
    let b = ComponentSpec {
        mean: vec![3.0, -1.0],
        variance: None,
        covariance: Some(vec![vec![1.5, 0.6], vec![0.6, 0.8]]),
    };
    ModelSpec::Conditional {
        members: BTreeMap::from([
            ("a".to_string(), ModelSpec::IsotropicGaussian { mean: a.mean.clone(), variance: 0.5 }),
            ("b".to_string(), ModelSpec::FullGaussian { mean: b.mean.clone(), covariance: b.covariance.clone().unwrap() }),
        ]),
        unconditional: Some(Box::new(ModelSpec::Gmm { weights: vec![0.5, 0.5], components: vec![a, b] })),
    }
}

impl ExperimentConfig {
    /// Default configuration for each kind.
    pub fn preset(kind: Kind) -> Self {
        let mut params = Params::default();
        let (model, steps, count) = match kind {
            Kind::Sample => (toy2d_model(), 40, 100),
            Kind::Invert | Kind::Reconstruct => (field_model(0.0), 100, 1),
            Kind::Toy2dStats => (toy2d_model(), 40, 500),
            Kind::NoiseStats => (field_model(0.0), 100, 100),
            Kind::Shift => (field_model(0.0), 100, 25),
            Kind::Flip => (field_model(0.6), 100, 10),
            Kind::ColorEdit => {
                params.mask = Some(MaskSpec { rows: [8, 24], cols: [8, 24] });
                (field_model(0.0), 100, 4)
            }
            Kind::CondSwap => {
                params.cond = Some("a".into());
                params.target = Some("b".into());
                (two_mode_model(), 100, 8)
            }
            Kind::Sweep => {
                params.cond = Some("a".into());
                params.target = Some("b".into());
                (two_mode_model(), 100, 50)
            }
        };
        Self {
            kind,
            seed: 0,
            count,
            out_dir: PathBuf::from("out").join(kind.name()),
            schedule: ScheduleConfig::standard(steps, 1.0),
            model,
            params,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps.unwrap_or(self.schedule.train_steps)
    }

    pub fn t_skips(&self) -> Vec<usize> {
        let t = self.steps();
        self.params.t_skips.clone().unwrap_or_else(|| vec![0, t / 4, t / 2, 3 * t / 4, t])
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let schedule = self.schedule.build()?;
        let model = self.model.build()?;
        let shape = model.data_shape();
        let steps = schedule.steps();
        let p = &self.params;
        let min_count = match self.kind {
            Kind::Toy2dStats | Kind::NoiseStats | Kind::CondSwap | Kind::Sweep => 2,
            _ => 1,
        };
        if self.count < min_count {
            return bad(format!("{} needs count >= {min_count}", self.kind));
        }
        let labels = self.model.labels();
        for (what, label) in [("cond", &p.cond), ("target", &p.target)] {
            if let Some(l) = label {
                if !labels.contains(l) {
                    return bad(format!("{what} `{l}` is not a model label (have {labels:?})"));
                }
            }
        }
        if let Some(w) = p.guidance {
            if !w.is_finite() {
                return bad(format!("guidance {w} is not finite"));
            }
        }
        let needs_eta = matches!(self.kind, Kind::Toy2dStats | Kind::NoiseStats | Kind::Shift | Kind::Flip | Kind::ColorEdit | Kind::CondSwap | Kind::Sweep)
            || (matches!(self.kind, Kind::Invert | Kind::Reconstruct) && p.method != InvertMethod::Ddim);
        if needs_eta && schedule.eta() == 0.0 {
            return bad(format!("{} needs eta > 0", self.kind));
        }
        match self.kind {
            Kind::Toy2dStats if p.bins < 2 => return bad("bins must be at least 2".into()),
            Kind::Shift | Kind::Flip => {
                if p.axis >= shape.len() {
                    return bad(format!("axis {} out of range for {shape:?}", p.axis));
                }
                if self.kind == Kind::Shift {
                    if p.shifts.is_empty() {
                        return bad("shifts must not be empty".into());
                    }
                    if let Some(&d) = p.shifts.iter().find(|&&d| d >= shape[p.axis]) {
                        return bad(format!("shift {d} must be below extent {}", shape[p.axis]));
                    }
                }
            }
            Kind::ColorEdit => {
                if p.t1 < 1 || p.t1 > p.t2 || p.t2 > steps {
                    return bad(format!("need 1 <= t1 <= t2 <= {steps}, got t1={} t2={}", p.t1, p.t2));
                }
                if p.strengths.is_empty() || p.strengths.iter().any(|s| !s.is_finite()) {
                    return bad("strengths must be a nonempty list of finite values".into());
                }
                if let Some(m) = &p.mask {
                    m.to_tensor(&shape)?;
                }
            }
            Kind::CondSwap | Kind::Sweep => {
                if p.target.is_none() {
                    return bad(format!("{} needs a target condition", self.kind));
                }
                if self.kind == Kind::CondSwap && p.t_skip > steps {
                    return bad(format!("t_skip {} exceeds T = {steps}", p.t_skip));
                }
                if self.kind == Kind::Sweep {
                    if let Some(&s) = self.t_skips().iter().find(|&&s| s > steps) {
                        return bad(format!("t_skip {s} exceeds T = {steps}"));
                    }
                    if p.guidance_grid.is_empty() || p.guidance_grid.iter().any(|w| !w.is_finite()) {
                        return bad("guidance_grid must be a nonempty list of finite values".into());
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in Kind::ALL {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{kind}");
            assert_eq!(kind.name().parse::<Kind>().unwrap(), kind);
        }
    }

    #[test]
    fn minimal_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            kind = "toy2d-stats"
            seed = 3
            count = 10
            [schedule]
            eta = 1.0
            steps = 40
            [model]
            type = "isotropic_gaussian"
            mean = [10.0, 10.0]
            variance = 1.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.params.bins, 18);
        assert_eq!(cfg.schedule.train_steps, 1000);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(ExperimentConfig::from_toml("kind = \"nope\""), Err(Error::InvalidConfig(_))));
        let mut cfg = ExperimentConfig::preset(Kind::CondSwap);
        cfg.params.target = Some("zzz".into());
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = ExperimentConfig::preset(Kind::Shift);
        cfg.params.shifts = vec![32];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = ExperimentConfig::preset(Kind::ColorEdit);
        cfg.params.t2 = 101;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset(Kind::NoiseStats);
        cfg.schedule.eta = 0.0;
        assert!(cfg.validate().is_err());
    }
}
