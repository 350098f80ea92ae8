//! Statistics over collections of latent codes and generated outputs.
//!
//! The `t = 1` slot of a latent carries the final-step residual (σ_1 = 0), not
//! a noise map, so noise statistics run over `t = 2..=T` and consecutive-pair
//! statistics over `t = 3..=T`.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::inversion::LatentCode;
use crate::numerics::Tensor;

/// First timestep whose slot holds a noise map.
pub const FIRST_NOISE_STEP: usize = 2;

/// A per-timestep statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsSeries {
    pub t: Vec<usize>,
    /// Pooled over coordinates and codes.
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Computed per coordinate across codes, then averaged over coordinates.
    pub coordinatewise: Vec<f64>,
    pub count: usize,
}

impl StatsSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn value_at(&self, t: usize) -> Option<f64> {
        self.t.iter().position(|&s| s == t).map(|i| self.value[i])
    }
}

fn check_codes(codes: &[LatentCode]) -> Result<()> {
    if codes.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 codes, got {}", codes.len())));
    }
    let first = &codes[0];
    for c in &codes[1..] {
        if c.fingerprint() != first.fingerprint() || c.steps() != first.steps() || c.shape() != first.shape() {
            return Err(Error::IncompatibleLatent(
                "codes differ in schedule fingerprint or shape".into(),
            ));
        }
    }
    Ok(())
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n.max(2) - 1) as f64).sqrt(), n)
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, usize) {
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for (a, b) in pairs.clone() {
        n += 1;
        sa += a;
        sb += b;
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    let denom = (va * vb).sqrt();
    (if denom > 0.0 { cov / denom } else { 0.0 }, n)
}

/// Standard deviation of `z_t` for each `t`.
pub fn per_step_std(codes: &[LatentCode]) -> Result<StatsSeries> {
    check_codes(codes)?;
    let steps = codes[0].steps();
    let dims = codes[0].x_t().numel();
    let mut out = StatsSeries { t: vec![], value: vec![], stderr: vec![], coordinatewise: vec![], count: codes.len() };
    for t in FIRST_NOISE_STEP..=steps {
        let pooled = codes.iter().flat_map(|c| c.z(t).data().iter().copied());
        let (_, sd, n) = mean_std(pooled);
        let per_coord: f64 = (0..dims)
            .map(|i| mean_std(codes.iter().map(move |c| c.z(t).data()[i])).1)
            .sum::<f64>()
            / dims as f64;
        out.t.push(t);
        out.value.push(sd);
        out.stderr.push(sd / (2.0 * (n as f64 - 1.0)).sqrt());
        out.coordinatewise.push(per_coord);
    }
    Ok(out)
}

/// Pearson correlation between `z_t` and `z_{t-1}` for each `t`.
pub fn consecutive_corr(codes: &[LatentCode]) -> Result<StatsSeries> {
    check_codes(codes)?;
    let steps = codes[0].steps();
    let dims = codes[0].x_t().numel();
    let mut out = StatsSeries { t: vec![], value: vec![], stderr: vec![], coordinatewise: vec![], count: codes.len() };
    for t in (FIRST_NOISE_STEP + 1)..=steps {
        let pairs = codes
            .iter()
            .flat_map(move |c| c.z(t).data().iter().copied().zip(c.z(t - 1).data().iter().copied()));
        let (r, n) = pearson(pairs);
        let per_coord: f64 = (0..dims)
            .map(|i| pearson(codes.iter().map(move |c| (c.z(t).data()[i], c.z(t - 1).data()[i]))).0)
            .sum::<f64>()
            / dims as f64;
        out.t.push(t);
        out.value.push(r);
        out.stderr.push(((1.0 - r * r) / (n as f64 - 2.0).max(1.0)).sqrt());
        out.coordinatewise.push(per_coord);
    }
    Ok(out)
}

/// Histogram of angles (degrees) between consecutive noise vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleHistogram {
    /// `bins + 1` edges partitioning `[0, 180]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Pairs skipped because one vector had zero norm.
    pub skipped: u64,
    pub mean_angle: f64,
}

impl AngleHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Index of the most populated bin (the lowest index on ties).
    pub fn modal_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    pub fn bin_contains(&self, bin: usize, angle: f64) -> bool {
        let last = bin + 1 == self.bins();
        angle >= self.edges[bin] && (angle < self.edges[bin + 1] || (last && angle <= self.edges[bin + 1]))
    }

    /// Chi-square goodness of fit against the uniform distribution on `[0, 180]`.
    pub fn uniformity(&self) -> ChiSquareTest {
        chi_square_uniform(&self.counts)
    }
}

fn angle_deg(a: &[f64], b: &[f64]) -> Option<f64> {
    // scale both vectors to unit max-norm first so huge maps cannot overflow
    let scale = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (sa, sb) = (scale(a), scale(b));
    if sa == 0.0 || sb == 0.0 {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x / sa, y / sb);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos().to_degrees())
}

pub fn angle_histogram(codes: &[LatentCode], bins: usize) -> Result<AngleHistogram> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 bins, got {bins}")));
    }
    check_codes(codes)?;
    let width = 180.0 / bins as f64;
    let mut counts = vec![0u64; bins];
    let (mut skipped, mut sum) = (0u64, 0.0);
    for c in codes {
        for t in (FIRST_NOISE_STEP + 1)..=c.steps() {
            match angle_deg(c.z(t).data(), c.z(t - 1).data()) {
                Some(a) => {
                    counts[((a / width) as usize).min(bins - 1)] += 1;
                    sum += a;
                }
                None => skipped += 1,
            }
        }
    }
    let total: u64 = counts.iter().sum();
    Ok(AngleHistogram {
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        counts,
        total,
        skipped,
        mean_angle: if total > 0 { sum / total as f64 } else { f64::NAN },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Pearson chi-square test of `counts` against equal cell probabilities.
pub fn chi_square_uniform(counts: &[u64]) -> ChiSquareTest {
    let k = counts.len();
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / k as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dof = k - 1;
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
    ChiSquareTest { statistic, dof, p_value }
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidInput(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Mean squared difference over positions with index `>= d` along `axis`,
/// i.e. the region a shift by `d` does not fill.
pub fn shift_mse(a: &Tensor, b: &Tensor, d: usize, axis: usize) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (outer, n, inner) = axis_layout(a.shape(), axis)?;
    if d >= n {
        return Err(Error::InvalidInput(format!("shift {d} must be below extent {n}")));
    }
    let (mut ss, mut count) = (0.0, 0usize);
    for o in 0..outer {
        for i in d..n {
            let base = (o * n + i) * inner;
            for k in base..base + inner {
                let diff = a.data()[k] - b.data()[k];
                ss += diff * diff;
                count += 1;
            }
        }
    }
    Ok(ss / count as f64)
}

/// Mean pairwise RMS distance over all unordered pairs.
pub fn diversity(outputs: &[Tensor]) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 outputs, got {}", outputs.len())));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..outputs.len() {
        for j in (i + 1)..outputs.len() {
            total += outputs[i].rms_diff(&outputs[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
