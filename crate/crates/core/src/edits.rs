//! Latent-space edits: shift, flip, masked colour guidance and condition swap.
//!
//! Shifts move content toward increasing index along the axis; the vacated
//! low-index boundary is refilled from a block of the same map.

use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, DenoiserModel};
use crate::error::{Error, Result};
use crate::inversion::LatentCode;
use crate::numerics::Tensor;
use crate::sampler::{add_noise, mu_from_eps, predicted_x0, start_state};
use crate::schedule::Schedule;

pub const DEFAULT_SOURCE_OFFSET: usize = 50;

fn default_source_offset() -> usize {
    DEFAULT_SOURCE_OFFSET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub d: usize,
    pub axis: usize,
    #[serde(default = "default_source_offset")]
    pub source_offset: usize,
}

impl Shift {
    pub fn new(d: usize, axis: usize) -> Self {
        Self { d, axis, source_offset: DEFAULT_SOURCE_OFFSET }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub axis: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorEdit {
    /// Binary mask `B`.
    pub mask: Tensor,
    /// Target `M`.
    pub target: Tensor,
    pub strength: f64,
    pub t1: usize,
    pub t2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondSwap {
    pub target: String,
    /// Guidance weight; `None` uses the conditional member directly.
    #[serde(default)]
    pub strength: Option<f64>,
    #[serde(default)]
    pub t_skip: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EditSpec {
    Shift(Shift),
    Flip(Flip),
    ColorEdit(ColorEdit),
    CondSwap(CondSwap),
}

/// `(outer, extent, inner)` strides for walking `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidEdit(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product()))
}

/// Shifts one map by `shift.d` along `shift.axis` and refills the boundary.
pub fn shift_tensor(x: &Tensor, shift: &Shift) -> Result<Tensor> {
    let (outer, n, inner) = axis_layout(x.shape(), shift.axis)?;
    let d = shift.d;
    if d >= n {
        return Err(Error::InvalidEdit(format!("shift {d} must be below extent {n}")));
    }
    if d == 0 {
        return Ok(x.clone());
    }
    let off = shift.source_offset.min(n - d);
    let src = x.data();
    let mut rolled = vec![0.0; src.len()];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let from = base + ((i + n - d) % n) * inner;
            let to = base + i * inner;
            rolled[to..to + inner].copy_from_slice(&src[from..from + inner]);
        }
    }
    let mut out = rolled.clone();
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..d {
            let from = base + (off + i) * inner;
            let to = base + i * inner;
            out[to..to + inner].copy_from_slice(&rolled[from..from + inner]);
        }
    }
    Tensor::new(x.shape(), out)
}

/// Reverses one map along `axis`.
pub fn flip_tensor(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_layout(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let from = base + (n - 1 - i) * inner;
            let to = base + i * inner;
            out[to..to + inner].copy_from_slice(&src[from..from + inner]);
        }
    }
    Tensor::new(x.shape(), out)
}

/// Shifts `x_T`, every noise map and the auxiliary chain.
pub fn shift_latent(latent: &LatentCode, shift: &Shift) -> Result<LatentCode> {
    latent.try_map(|x| shift_tensor(x, shift))
}

pub fn flip_latent(latent: &LatentCode, flip: &Flip) -> Result<LatentCode> {
    latent.try_map(|x| flip_tensor(x, flip.axis))
}

impl ColorEdit {
    pub fn validate(&self, steps: usize, shape: &[usize]) -> Result<()> {
        if self.mask.shape() != shape || self.target.shape() != shape {
            return Err(Error::InvalidEdit(format!(
                "mask {:?} and target {:?} must match the data shape {shape:?}",
                self.mask.shape(),
                self.target.shape()
            )));
        }
        if self.mask.data().iter().any(|&b| b != 0.0 && b != 1.0) {
            return Err(Error::InvalidEdit("mask entries must be 0 or 1".into()));
        }
        if !self.strength.is_finite() {
            return Err(Error::InvalidEdit(format!("strength {} is not finite", self.strength)));
        }
        if self.t1 < 1 || self.t1 > self.t2 || self.t2 > steps {
            return Err(Error::InvalidEdit(format!(
                "need 1 <= T1 <= T2 <= {steps}, got T1={} T2={}",
                self.t1, self.t2
            )));
        }
        Ok(())
    }
}

/// Regenerates from the latent, nudging `z_t` toward the target inside the mask:
/// `z_t + s·B⊙(M - P(f_t(x_t)))` for `t` in `[T1, T2]`, using the state of this
/// pass.
pub fn color_edit_generate(
    latent: &LatentCode,
    model: &DenoiserModel,
    schedule: &Schedule,
    edit: &ColorEdit,
    cond: &Condition,
) -> Result<Tensor> {
    edit.validate(schedule.steps(), latent.shape())?;
    let mut x = start_state(latent, schedule, 0)?;
    for t in (1..=schedule.steps()).rev() {
        let eps = model.predict(&x, t, schedule, cond)?;
        let mu = mu_from_eps(&x, &eps, t, schedule)?;
        let z = latent.z(t);
        x = if edit.strength != 0.0 && (edit.t1..=edit.t2).contains(&t) {
            let pred = predicted_x0(&x, &eps, t, schedule)?;
            let push = edit.target.sub(&pred)?.mul(&edit.mask)?;
            add_noise(&mu, &z.lincomb(1.0, &push, edit.strength)?, t, schedule)?
        } else {
            add_noise(&mu, z, t, schedule)?
        };
        x.ensure_finite(&format!("colour edit t={t}"))?;
    }
    Ok(x)
}

/// Regenerates under a different condition, starting at `T - T_skip`.
pub fn cond_swap_generate(
    latent: &LatentCode,
    model: &DenoiserModel,
    edit: &CondSwap,
    schedule: &Schedule,
) -> Result<Tensor> {
    if !matches!(model, DenoiserModel::Conditional(_)) {
        return Err(Error::InvalidEdit("condition swap needs a conditional model".into()));
    }
    let cond = Condition { label: Some(edit.target.clone()), strength: edit.strength };
    crate::sampler::generate_from_latent(model, schedule, latent, &cond, edit.t_skip)
}

/// Applies a latent-to-latent edit.
pub fn apply_latent_edit(latent: &LatentCode, edit: &EditSpec) -> Result<LatentCode> {
    match edit {
        EditSpec::Shift(s) => shift_latent(latent, s),
        EditSpec::Flip(f) => flip_latent(latent, f),
        _ => Err(Error::InvalidEdit("edit does not map latents to latents".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize) -> Tensor {
        Tensor::new(&[rows, cols], (0..rows * cols).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn shift_moves_content_toward_higher_index() {
        let x = grid(2, 6);
        let y = shift_tensor(&x, &Shift { d: 2, axis: 1, source_offset: 3 }).unwrap();
        // rolled row 0 = [4,5,0,1,2,3]; boundary copied from rolled[3..5] = [1,2]
        assert_eq!(&y.data()[..6], &[1.0, 2.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&y.data()[6..], &[7.0, 8.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn shift_rows_and_offset_clamp() {
        let x = grid(5, 2);
        let y = shift_tensor(&x, &Shift::new(1, 0)).unwrap();
        // offset clamps to 4; rolled rows = [4,0,1,2,3] so row 0 copies row 3 (x row 3)
        assert_eq!(y.data(), &[6.0, 7.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn shift_errors_and_identity() {
        let x = grid(3, 4);
        assert_eq!(shift_tensor(&x, &Shift::new(0, 1)).unwrap(), x);
        assert!(matches!(shift_tensor(&x, &Shift::new(4, 1)), Err(Error::InvalidEdit(_))));
        assert!(matches!(shift_tensor(&x, &Shift::new(1, 2)), Err(Error::InvalidEdit(_))));
    }

    #[test]
    fn flip_is_an_involution() {
        let x = grid(3, 5);
        let y = flip_tensor(&x, 1).unwrap();
        assert_eq!(&y.data()[..5], &[4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(flip_tensor(&y, 1).unwrap(), x);
        let c = Tensor::full(&[3, 5], 2.5).unwrap();
        assert_eq!(flip_tensor(&c, 0).unwrap(), c);
        assert!(flip_tensor(&x, 2).is_err());
    }

    #[test]
    fn color_edit_validation() {
        let ones = Tensor::full(&[2], 1.0).unwrap();
        let mut e = ColorEdit { mask: ones.clone(), target: ones.clone(), strength: 0.1, t1: 2, t2: 5 };
        assert!(e.validate(5, &[2]).is_ok());
        assert!(e.validate(4, &[2]).is_err());
        assert!(e.validate(5, &[3]).is_err());
        e.mask = Tensor::full(&[2], 0.5).unwrap();
        assert!(e.validate(5, &[2]).is_err());
        e.mask = ones;
        e.t1 = 0;
        assert!(e.validate(5, &[2]).is_err());
        e.t1 = 2;
        e.strength = f64::NAN;
        assert!(e.validate(5, &[2]).is_err());
    }
}
