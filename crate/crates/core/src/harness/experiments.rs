//! The canned experiments. Each returns typed results plus the tables and
//! charts written to disk.

use rayon::prelude::*;

use super::config::{ExperimentConfig, InvertMethod, Kind};
use super::svg::{bar_chart, line_chart, Series};
use super::table::{num, Table};
use crate::denoiser::{Condition, DenoiserModel};
use crate::edits::{
    color_edit_generate, cond_swap_generate, flip_latent, flip_tensor, shift_latent, shift_tensor, ColorEdit,
    CondSwap, Flip, Shift,
};
use crate::error::{Error, Result};
use crate::inversion::{cyclediffusion_invert, ddim_invert, edit_friendly_invert, LatentCode};
use crate::numerics::{RngStream, Tensor};
use crate::sampler::{ddpm_sample, generate_from_latent, SampleOptions};
use crate::schedule::Schedule;
use crate::stats::{
    angle_histogram, consecutive_corr, diversity, mean_sem, per_step_std, shift_mse, AngleHistogram, ChiSquareTest,
    StatsSeries,
};

/// Files and console lines produced by one experiment.
#[derive(Debug, Default)]
pub struct Report {
    pub tables: Vec<(String, Table)>,
    pub charts: Vec<(String, String)>,
    pub latents: Vec<(String, LatentCode)>,
    pub summary: Vec<String>,
}

/// Model, schedule and conditioning resolved from a config.
pub struct Setup {
    pub model: DenoiserModel,
    pub schedule: Schedule,
    pub cond: Condition,
    pub root: RngStream,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model: cfg.model.build()?,
            schedule: cfg.schedule.build()?,
            cond: Condition { label: cfg.params.cond.clone(), strength: None },
            root: RngStream::new(cfg.seed),
        })
    }

    fn rep(&self, i: usize) -> RngStream {
        self.root.child(&format!("rep{i}"))
    }

    fn native(&self, rng: &mut RngStream) -> Result<(Tensor, LatentCode)> {
        let tr = ddpm_sample(&self.model, &self.schedule, rng, &self.cond, &SampleOptions::default())?;
        Ok((tr.x0().clone(), tr.to_latent()?))
    }

    fn data(&self, rng: &mut RngStream) -> Result<Tensor> {
        self.model.sample(rng, self.cond.as_label())
    }

    fn invert(&self, method: InvertMethod, x0: &Tensor, rng: &mut RngStream) -> Result<LatentCode> {
        match method {
            InvertMethod::EditFriendly => edit_friendly_invert(x0, &self.model, &self.schedule, rng, &self.cond),
            InvertMethod::Cyclediffusion => cyclediffusion_invert(x0, &self.model, &self.schedule, rng, &self.cond),
            InvertMethod::Ddim => ddim_invert(x0, &self.model, &self.schedule, &self.cond),
        }
    }

    /// The schedule a code from `method` regenerates with.
    fn regen_schedule(&self, method: InvertMethod) -> Result<Schedule> {
        match method {
            InvertMethod::Ddim => self.schedule.with_eta(0.0),
            _ => Ok(self.schedule.clone()),
        }
    }
}

fn par_reps<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count).into_par_iter().map(f).collect()
}

fn flat_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

// ---------------------------------------------------------------- sample

pub struct SampleResult {
    pub samples: Vec<Tensor>,
}

pub fn sample(cfg: &ExperimentConfig) -> Result<SampleResult> {
    let s = Setup::new(cfg)?;
    let samples = par_reps(cfg.count, |i| Ok(s.native(&mut s.rep(i))?.0))?;
    Ok(SampleResult { samples })
}

impl SampleResult {
    pub fn report(&self) -> Report {
        let n = self.samples[0].numel();
        let mut t = Table::new(std::iter::once("index".to_string()).chain(flat_header("x", n)));
        for (i, x) in self.samples.iter().enumerate() {
            t.push(std::iter::once(i.to_string()).chain(x.data().iter().map(|&v| num(v))));
        }
        let k = self.samples.len() as f64;
        let mean: f64 = self.samples.iter().map(|x| x.mean() / k).sum();
        Report {
            tables: vec![("samples.csv".into(), t)],
            summary: vec![format!("{} samples, grand mean {mean:.6}", self.samples.len())],
            ..Report::default()
        }
    }
}

// ---------------------------------------------------------------- invert / reconstruct

pub struct InvertResult {
    pub method: InvertMethod,
    pub x0: Tensor,
    pub code: LatentCode,
    pub reconstruction: Tensor,
}

impl InvertResult {
    pub fn max_abs_error(&self) -> f64 {
        self.reconstruction.max_abs_diff(&self.x0).unwrap_or(f64::NAN)
    }
}

pub fn invert(cfg: &ExperimentConfig) -> Result<InvertResult> {
    let s = Setup::new(cfg)?;
    let rng = s.rep(0);
    let x0 = s.data(&mut rng.child("data"))?;
    let method = cfg.params.method;
    let code = s.invert(method, &x0, &mut rng.child("invert"))?;
    let reconstruction = generate_from_latent(&s.model, &s.regen_schedule(method)?, &code, &s.cond, 0)?;
    Ok(InvertResult { method, x0, code, reconstruction })
}

impl InvertResult {
    pub fn report(&self) -> Report {
        let mut t = Table::new(["t", "z_mean", "z_std", "z_max_abs"]);
        for step in (1..=self.code.steps()).rev() {
            let z = self.code.z(step);
            let mean = z.mean();
            let sd = (z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.numel() as f64).sqrt();
            t.push([step.to_string(), num(mean), num(sd), num(z.max_abs())]);
        }
        Report {
            tables: vec![("invert.csv".into(), t)],
            latents: vec![("latent.efnz".into(), self.code.clone())],
            summary: vec![format!(
                "{} inversion, T = {}: max abs reconstruction error {:e}",
                self.method.name(),
                self.code.steps(),
                self.max_abs_error()
            )],
            ..Report::default()
        }
    }
}

pub struct ReconstructResult {
    pub method: InvertMethod,
    /// `(max abs, rms)` error per replicate.
    pub errors: Vec<(f64, f64)>,
}

impl ReconstructResult {
    pub fn max_abs_error(&self) -> f64 {
        self.errors.iter().map(|e| e.0).fold(0.0, f64::max)
    }
}

pub fn reconstruct(cfg: &ExperimentConfig) -> Result<ReconstructResult> {
    let s = Setup::new(cfg)?;
    let method = cfg.params.method;
    let regen = s.regen_schedule(method)?;
    if let Some(path) = &cfg.params.latent {
        let code = super::latent_file::load_latent_for(path, &regen)?;
        let Some(chain) = code.aux_chain() else {
            return Err(Error::InvalidConfig(
                "the latent file carries no chain, so there is no x_0 to compare against".into(),
            ));
        };
        let cond = Condition { label: code.cond().map(String::from), strength: None };
        let out = generate_from_latent(&s.model, &regen, &code, &cond, 0)?;
        let err = (out.max_abs_diff(&chain[0])?, out.rms_diff(&chain[0])?);
        return Ok(ReconstructResult { method, errors: vec![err] });
    }
    let errors = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let x0 = s.data(&mut rng.child("data"))?;
        let code = s.invert(method, &x0, &mut rng.child("invert"))?;
        let out = generate_from_latent(&s.model, &regen, &code, &s.cond, 0)?;
        Ok((out.max_abs_diff(&x0)?, out.rms_diff(&x0)?))
    })?;
    Ok(ReconstructResult { method, errors })
}

impl ReconstructResult {
    pub fn report(&self) -> Report {
        let mut t = Table::new(["replicate", "max_abs_error", "rms_error"]);
        for (i, (m, r)) in self.errors.iter().enumerate() {
            t.push([i.to_string(), num(*m), num(*r)]);
        }
        Report {
            tables: vec![("reconstruct.csv".into(), t)],
            summary: vec![format!(
                "{} reconstruction: max abs error {:e}",
                self.method.name(),
                self.max_abs_error()
            )],
            ..Report::default()
        }
    }
}

// ---------------------------------------------------------------- toy 2-D angle statistics

pub struct AngleStats {
    pub native: AngleHistogram,
    pub edit_friendly: AngleHistogram,
}

impl AngleStats {
    pub fn native_test(&self) -> ChiSquareTest {
        self.native.uniformity()
    }
}

pub fn toy2d_stats(cfg: &ExperimentConfig) -> Result<AngleStats> {
    let s = Setup::new(cfg)?;
    let codes = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let native = s.native(&mut rng.child("native"))?.1.without_aux();
        let x0 = s.data(&mut rng.child("data"))?;
        let ef = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?.without_aux();
        Ok((native, ef))
    })?;
    let (native, ef): (Vec<_>, Vec<_>) = codes.into_iter().unzip();
    Ok(AngleStats {
        native: angle_histogram(&native, cfg.params.bins)?,
        edit_friendly: angle_histogram(&ef, cfg.params.bins)?,
    })
}

impl AngleStats {
    pub fn report(&self) -> Report {
        let mut t = Table::new(["bin_lo", "bin_hi", "native", "edit_friendly"]);
        let edges = &self.native.edges;
        for i in 0..self.native.bins() {
            t.push([
                num(edges[i]),
                num(edges[i + 1]),
                self.native.counts[i].to_string(),
                self.edit_friendly.counts[i].to_string(),
            ]);
        }
        let mut summary_t =
            Table::new(["method", "mean_angle", "modal_lo", "modal_hi", "chi2", "dof", "p_value", "total", "skipped"]);
        let mut lines = vec![];
        for (name, h) in [("native", &self.native), ("edit-friendly", &self.edit_friendly)] {
            let test = h.uniformity();
            let m = h.modal_bin();
            summary_t.push([
                name.to_string(),
                num(h.mean_angle),
                num(h.edges[m]),
                num(h.edges[m + 1]),
                num(test.statistic),
                test.dof.to_string(),
                num(test.p_value),
                h.total.to_string(),
                h.skipped.to_string(),
            ]);
            lines.push(format!(
                "{name}: mean angle {:.2} deg, modal bin [{}, {}], uniformity p = {:.4}",
                h.mean_angle,
                h.edges[m],
                h.edges[m + 1],
                test.p_value
            ));
        }
        let n: Vec<f64> = self.native.counts.iter().map(|&c| c as f64).collect();
        let e: Vec<f64> = self.edit_friendly.counts.iter().map(|&c| c as f64).collect();
        let chart = bar_chart(
            "Angles between consecutive noise vectors",
            "angle (degrees)",
            "count",
            edges,
            &[("native", &n), ("edit-friendly", &e)],
        );
        Report {
            tables: vec![("angles.csv".into(), t), ("angle_summary.csv".into(), summary_t)],
            charts: vec![("angles.svg".into(), chart)],
            summary: lines,
            ..Report::default()
        }
    }
}

// ---------------------------------------------------------------- per-step noise statistics

pub struct NoiseStats {
    pub std: [StatsSeries; 3],
    pub corr: [StatsSeries; 3],
}

pub const NOISE_METHODS: [&str; 3] = ["native", "edit_friendly", "cyclediffusion"];

pub fn noise_stats(cfg: &ExperimentConfig) -> Result<NoiseStats> {
    let s = Setup::new(cfg)?;
    let codes = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let native = s.native(&mut rng.child("native"))?.1.without_aux();
        let x0 = s.data(&mut rng.child("data"))?;
        let ef = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?.without_aux();
        let cd = s.invert(InvertMethod::Cyclediffusion, &x0, &mut rng.child("cycle"))?.without_aux();
        Ok([native, ef, cd])
    })?;
    let mut by_method: [Vec<LatentCode>; 3] = Default::default();
    for triple in codes {
        for (slot, code) in by_method.iter_mut().zip(triple) {
            slot.push(code);
        }
    }
    let std = [per_step_std(&by_method[0])?, per_step_std(&by_method[1])?, per_step_std(&by_method[2])?];
    let corr = [consecutive_corr(&by_method[0])?, consecutive_corr(&by_method[1])?, consecutive_corr(&by_method[2])?];
    Ok(NoiseStats { std, corr })
}

fn series_table(series: &[StatsSeries; 3]) -> Table {
    let mut header = vec!["t".to_string()];
    for suffix in ["", "_se", "_coordinatewise"] {
        header.extend(NOISE_METHODS.iter().map(|m| format!("{m}{suffix}")));
    }
    let mut t = Table::new(header);
    for i in 0..series[0].len() {
        let mut row = vec![series[0].t[i].to_string()];
        row.extend(series.iter().map(|s| num(s.value[i])));
        row.extend(series.iter().map(|s| num(s.stderr[i])));
        row.extend(series.iter().map(|s| num(s.coordinatewise[i])));
        t.push(row);
    }
    t
}

fn series_chart(title: &str, ylabel: &str, series: &[StatsSeries; 3]) -> String {
    let xs: Vec<Vec<f64>> = series.iter().map(|s| s.t.iter().map(|&t| t as f64).collect()).collect();
    let lines: Vec<Series> = series
        .iter()
        .zip(&xs)
        .zip(NOISE_METHODS)
        .map(|((s, x), name)| Series { name, x, y: &s.value })
        .collect();
    line_chart(title, "t", ylabel, &lines)
}

impl NoiseStats {
    pub fn report(&self) -> Report {
        let mut summary = vec![];
        for (i, m) in NOISE_METHODS.iter().enumerate() {
            let (sd, co) = (&self.std[i].value, &self.corr[i].value);
            let fold = |v: &[f64], f: fn(f64, f64) -> f64, init| v.iter().copied().fold(init, f);
            summary.push(format!(
                "{m}: std in [{:.4}, {:.4}], correlation in [{:.4}, {:.4}]",
                fold(sd, f64::min, f64::INFINITY),
                fold(sd, f64::max, f64::NEG_INFINITY),
                fold(co, f64::min, f64::INFINITY),
                fold(co, f64::max, f64::NEG_INFINITY)
            ));
        }
        Report {
            tables: vec![("std.csv".into(), series_table(&self.std)), ("corr.csv".into(), series_table(&self.corr))],
            charts: vec![
                ("std.svg".into(), series_chart("Per-step noise standard deviation", "std of z_t", &self.std)),
                ("corr.svg".into(), series_chart("Correlation of consecutive noise maps", "corr(z_t, z_t-1)", &self.corr)),
            ],
            summary,
            ..Report::default()
        }
    }
}

// ---------------------------------------------------------------- shift

pub struct ShiftResult {
    pub shifts: Vec<usize>,
    /// `[replicate][shift]` valid-pixel MSE.
    pub edit_friendly: Vec<Vec<f64>>,
    pub native: Vec<Vec<f64>>,
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

impl ShiftResult {
    pub fn edit_friendly_mean(&self) -> Vec<(f64, f64)> {
        (0..self.shifts.len()).map(|j| mean_sem(&column(&self.edit_friendly, j))).collect()
    }

    pub fn native_mean(&self) -> Vec<(f64, f64)> {
        (0..self.shifts.len()).map(|j| mean_sem(&column(&self.native, j))).collect()
    }
}

pub fn shift(cfg: &ExperimentConfig) -> Result<ShiftResult> {
    let s = Setup::new(cfg)?;
    let p = &cfg.params;
    let rows = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let (x0, native) = s.native(&mut rng.child("native"))?;
        let ef = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?;
        let mut e_row = vec![];
        let mut n_row = vec![];
        for &d in &p.shifts {
            let edit = Shift { d, axis: p.axis, source_offset: p.source_offset };
            let want = shift_tensor(&x0, &edit)?;
            for (code, row) in [(&ef, &mut e_row), (&native, &mut n_row)] {
                let out = generate_from_latent(&s.model, &s.schedule, &shift_latent(code, &edit)?, &s.cond, 0)?;
                row.push(shift_mse(&out, &want, d, p.axis)?);
            }
        }
        Ok((e_row, n_row))
    })?;
    let (edit_friendly, native) = rows.into_iter().unzip();
    Ok(ShiftResult { shifts: p.shifts.clone(), edit_friendly, native })
}

impl ShiftResult {
    pub fn report(&self) -> Report {
        let (e, n) = (self.edit_friendly_mean(), self.native_mean());
        let mut t = Table::new(["d", "edit_friendly_mse", "edit_friendly_sem", "native_mse", "native_sem"]);
        let mut raw = Table::new(["d", "replicate", "edit_friendly_mse", "native_mse"]);
        for (j, d) in self.shifts.iter().enumerate() {
            t.push([d.to_string(), num(e[j].0), num(e[j].1), num(n[j].0), num(n[j].1)]);
            for (i, (er, nr)) in self.edit_friendly.iter().zip(&self.native).enumerate() {
                raw.push([d.to_string(), i.to_string(), num(er[j]), num(nr[j])]);
            }
        }
        let x: Vec<f64> = self.shifts.iter().map(|&d| d as f64).collect();
        let ey: Vec<f64> = e.iter().map(|v| v.0).collect();
        let ny: Vec<f64> = n.iter().map(|v| v.0).collect();
        let chart = line_chart(
            "Valid-pixel MSE after shifting the latent",
            "shift d",
            "MSE",
            &[Series { name: "edit-friendly", x: &x, y: &ey }, Series { name: "native", x: &x, y: &ny }],
        );
        let summary = self
            .shifts
            .iter()
            .enumerate()
            .map(|(j, d)| format!("d = {d}: edit-friendly {:.5} ± {:.5}, native {:.5} ± {:.5}", e[j].0, e[j].1, n[j].0, n[j].1))
            .collect();
        Report {
            tables: vec![("shift.csv".into(), t), ("shift_replicates.csv".into(), raw)],
            charts: vec![("shift.svg".into(), chart)],
            summary,
            ..Report::default()
        }
    }
}

// ---------------------------------------------------------------- flip

pub struct FlipResult {
    /// `(edit-friendly RMS, native RMS)` per replicate.
    pub rms: Vec<(f64, f64)>,
}

pub fn flip(cfg: &ExperimentConfig) -> Result<FlipResult> {
    let s = Setup::new(cfg)?;
    let edit = Flip { axis: cfg.params.axis };
    let rms = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let (x0, native) = s.native(&mut rng.child("native"))?;
        let ef = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?;
        let want = flip_tensor(&x0, edit.axis)?;
        let e = generate_from_latent(&s.model, &s.schedule, &flip_latent(&ef, &edit)?, &s.cond, 0)?;
        let n = generate_from_latent(&s.model, &s.schedule, &flip_latent(&native, &edit)?, &s.cond, 0)?;
        Ok((e.rms_diff(&want)?, n.rms_diff(&want)?))
    })?;
    Ok(FlipResult { rms })
}

impl FlipResult {
    pub fn report(&self) -> Report {
        let mut t = Table::new(["replicate", "edit_friendly_rms", "native_rms"]);
        for (i, (e, n)) in self.rms.iter().enumerate() {
            t.push([i.to_string(), num(*e), num(*n)]);
        }
        let wins = self.rms.iter().filter(|(e, n)| e < n).count();
        Report {
            tables: vec![("flip.csv".into(), t)],
            summary: vec![format!("edit-friendly closer to the flipped original on {wins}/{} replicates", self.rms.len())],
            ..Report::default()
        }
    }
}

// ---------------------------------------------------------------- colour edit

pub struct ColorRow {
    pub strength: f64,
    /// Per replicate: RMS change from the unedited output.
    pub rms_change: Vec<f64>,
    /// Per replicate: mean of `M - output` inside the mask.
    pub target_gap: Vec<f64>,
    /// Per replicate: RMS change inside and outside the mask.
    pub inside: Vec<f64>,
    pub outside: Vec<f64>,
    /// Per replicate: whether the output equals the unedited output bit for bit.
    pub identical: Vec<bool>,
}

pub struct ColorResult {
    pub rows: Vec<ColorRow>,
}

fn masked_rms(a: &Tensor, b: &Tensor, mask: &Tensor, inside: bool) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for ((x, y), m) in a.data().iter().zip(b.data()).zip(mask.data()) {
        if (*m == 1.0) == inside {
            ss += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (ss / n as f64).sqrt()
    }
}

pub fn color_edit(cfg: &ExperimentConfig) -> Result<ColorResult> {
    let s = Setup::new(cfg)?;
    let p = &cfg.params;
    let shape = s.model.data_shape();
    let mask = match &p.mask {
        Some(m) => m.to_tensor(&shape)?,
        None => Tensor::full(&shape, 1.0)?,
    };
    let per_rep = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let x0 = s.data(&mut rng.child("data"))?;
        let code = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?;
        let plain = generate_from_latent(&s.model, &s.schedule, &code, &s.cond, 0)?;
        let target = x0.add_scalar(p.color_offset);
        p.strengths
            .iter()
            .map(|&strength| {
                let edit = ColorEdit { mask: mask.clone(), target: target.clone(), strength, t1: p.t1, t2: p.t2 };
                let out = color_edit_generate(&code, &s.model, &s.schedule, &edit, &s.cond)?;
                let mut gap = 0.0;
                let mut n = 0usize;
                for ((m, y), o) in mask.data().iter().zip(target.data()).zip(out.data()) {
                    if *m == 1.0 {
                        gap += y - o;
                        n += 1;
                    }
                }
                Ok((
                    out.rms_diff(&plain)?,
                    gap / n.max(1) as f64,
                    masked_rms(&out, &plain, &mask, true),
                    masked_rms(&out, &plain, &mask, false),
                    out == plain,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = p
        .strengths
        .iter()
        .enumerate()
        .map(|(j, &strength)| ColorRow {
            strength,
            rms_change: per_rep.iter().map(|r| r[j].0).collect(),
            target_gap: per_rep.iter().map(|r| r[j].1).collect(),
            inside: per_rep.iter().map(|r| r[j].2).collect(),
            outside: per_rep.iter().map(|r| r[j].3).collect(),
            identical: per_rep.iter().map(|r| r[j].4).collect(),
        })
        .collect();
    Ok(ColorResult { rows })
}

impl ColorResult {
    pub fn report(&self) -> Report {
        let mut t = Table::new([
            "strength",
            "rms_change",
            "rms_change_sem",
            "target_gap",
            "inside_rms_change",
            "outside_rms_change",
            "bitwise_unchanged",
        ]);
        let mut summary = vec![];
        for r in &self.rows {
            let (m, se) = mean_sem(&r.rms_change);
            let gap = mean_sem(&r.target_gap).0;
            let inside = mean_sem(&r.inside).0;
            let outside = mean_sem(&r.outside).0;
            let same = r.identical.iter().all(|&b| b);
            t.push([num(r.strength), num(m), num(se), num(gap), num(inside), num(outside), same.to_string()]);
            summary.push(format!("s = {}: RMS change {m:.5}, gap to target {gap:.5}", r.strength));
        }
        Report { tables: vec![("color.csv".into(), t)], summary, ..Report::default() }
    }
}

// ---------------------------------------------------------------- condition swap and sweep

pub struct CondSwapResult {
    pub edit_friendly: Vec<Tensor>,
    pub ddim: Vec<Tensor>,
    pub x0: Tensor,
}

impl CondSwapResult {
    pub fn diversity(&self) -> Result<(f64, f64)> {
        Ok((diversity(&self.edit_friendly)?, diversity(&self.ddim)?))
    }
}

fn swap_edit(cfg: &ExperimentConfig, t_skip: usize, guidance: Option<f64>) -> CondSwap {
    CondSwap { target: cfg.params.target.clone().unwrap_or_default(), strength: guidance, t_skip }
}

pub fn cond_swap(cfg: &ExperimentConfig) -> Result<CondSwapResult> {
    let s = Setup::new(cfg)?;
    let x0 = s.data(&mut s.root.child("data"))?;
    let edit = swap_edit(cfg, cfg.params.t_skip, cfg.params.guidance);
    let det = s.schedule.with_eta(0.0)?;
    let both = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let ef = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?;
        let dd = s.invert(InvertMethod::Ddim, &x0, &mut rng.child("invert"))?;
        Ok((cond_swap_generate(&ef, &s.model, &edit, &s.schedule)?, cond_swap_generate(&dd, &s.model, &edit, &det)?))
    })?;
    let (edit_friendly, ddim) = both.into_iter().unzip();
    Ok(CondSwapResult { edit_friendly, ddim, x0 })
}

impl CondSwapResult {
    pub fn report(&self) -> Result<Report> {
        let (e, d) = self.diversity()?;
        let fid = |outs: &[Tensor]| -> Result<f64> {
            Ok(outs.iter().map(|o| o.rms_diff(&self.x0)).collect::<Result<Vec<_>>>()?.iter().sum::<f64>()
                / outs.len() as f64)
        };
        let mut t = Table::new(["method", "diversity", "mean_rms_to_input"]);
        t.push(["edit-friendly".to_string(), num(e), num(fid(&self.edit_friendly)?)]);
        t.push(["ddim".to_string(), num(d), num(fid(&self.ddim)?)]);
        let mut outs = Table::new(
            ["method".to_string(), "replicate".to_string()].into_iter().chain(flat_header("x", self.x0.numel())),
        );
        for (name, set) in [("edit-friendly", &self.edit_friendly), ("ddim", &self.ddim)] {
            for (i, o) in set.iter().enumerate() {
                outs.push([name.to_string(), i.to_string()].into_iter().chain(o.data().iter().map(|&v| num(v))));
            }
        }
        Ok(Report {
            tables: vec![("cond_swap.csv".into(), t), ("cond_swap_outputs.csv".into(), outs)],
            summary: vec![format!("diversity: edit-friendly {e:.6}, ddim {d:e}")],
            ..Report::default()
        })
    }
}

pub struct SweepRow {
    pub t_skip: usize,
    pub guidance: f64,
    pub rms_to_input: f64,
    pub rms_to_target: f64,
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let s = Setup::new(cfg)?;
    let target_mean = s.model.data_mean(cfg.params.target.as_deref())?;
    let t_skips = cfg.t_skips();
    let grid = &cfg.params.guidance_grid;
    let per_rep = par_reps(cfg.count, |i| {
        let rng = s.rep(i);
        let x0 = s.data(&mut rng.child("data"))?;
        let code = s.invert(InvertMethod::EditFriendly, &x0, &mut rng.child("invert"))?;
        let mut out = vec![];
        for &t_skip in &t_skips {
            for &w in grid {
                let y = cond_swap_generate(&code, &s.model, &swap_edit(cfg, t_skip, Some(w)), &s.schedule)?;
                out.push((y.rms_diff(&x0)?, y.rms_diff(&target_mean)?));
            }
        }
        Ok(out)
    })?;
    let n = per_rep.len() as f64;
    let mut rows = vec![];
    let mut k = 0;
    for &t_skip in &t_skips {
        for &guidance in grid {
            rows.push(SweepRow {
                t_skip,
                guidance,
                rms_to_input: per_rep.iter().map(|r| r[k].0).sum::<f64>() / n,
                rms_to_target: per_rep.iter().map(|r| r[k].1).sum::<f64>() / n,
            });
            k += 1;
        }
    }
    Ok(SweepResult { rows })
}

impl SweepResult {
    pub fn report(&self) -> Report {
        let mut t = Table::new(["t_skip", "guidance", "rms_to_input", "rms_to_target_mode"]);
        for r in &self.rows {
            t.push([r.t_skip.to_string(), num(r.guidance), num(r.rms_to_input), num(r.rms_to_target)]);
        }
        let mut guidances: Vec<f64> = self.rows.iter().map(|r| r.guidance).collect();
        guidances.dedup();
        guidances.sort_by(f64::total_cmp);
        guidances.dedup();
        let labels: Vec<String> = guidances.iter().map(|w| format!("w = {w}")).collect();
        let cols: Vec<(Vec<f64>, Vec<f64>)> = guidances
            .iter()
            .map(|w| {
                let rs = self.rows.iter().filter(|r| r.guidance == *w);
                (rs.clone().map(|r| r.t_skip as f64).collect(), rs.map(|r| r.rms_to_input).collect())
            })
            .collect();
        let series: Vec<Series> =
            cols.iter().zip(&labels).map(|((x, y), name)| Series { name, x, y }).collect();
        let chart = line_chart("Fidelity to the input across T_skip", "T_skip", "RMS to input", &series);
        Report {
            tables: vec![("sweep.csv".into(), t)],
            charts: vec![("sweep.svg".into(), chart)],
            summary: vec![format!("{} sweep points", self.rows.len())],
            ..Report::default()
        }
    }
}

/// Runs the experiment named by `cfg.kind`.
pub fn execute(cfg: &ExperimentConfig) -> Result<Report> {
    Ok(match cfg.kind {
        Kind::Sample => sample(cfg)?.report(),
        Kind::Invert => invert(cfg)?.report(),
        Kind::Reconstruct => reconstruct(cfg)?.report(),
        Kind::Toy2dStats => toy2d_stats(cfg)?.report(),
        Kind::NoiseStats => noise_stats(cfg)?.report(),
        Kind::Shift => shift(cfg)?.report(),
        Kind::Flip => flip(cfg)?.report(),
        Kind::ColorEdit => color_edit(cfg)?.report(),
        Kind::CondSwap => cond_swap(cfg)?.report()?,
        Kind::Sweep => sweep(cfg)?.report(),
    })
}
