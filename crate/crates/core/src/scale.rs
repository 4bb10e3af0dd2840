//! The scale ladder: mean pooling of data and masks along spatial modes,
//! linear upsampling, and moving networks between adjacent scales.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RgtnError};
use crate::graph::TNGraph;
use crate::tensor::{mode_apply, DenseTensor, Matrix};

/// Modes at least this long are pooled by default.
pub const DEFAULT_SPATIAL_MIN: usize = 16;

/// Fraction of observed entries a pooled cell needs to count as observed.
pub const DEFAULT_MASK_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLevel {
    pub s: u32,
    pub spatial_modes: BTreeSet<usize>,
}

impl ScaleLevel {
    pub fn new(s: u32, spatial_modes: impl IntoIterator<Item = usize>) -> Self {
        Self { s, spatial_modes: spatial_modes.into_iter().collect() }
    }

    /// Level `s` with every mode of size >= 16 treated as spatial.
    pub fn with_default_modes(s: u32, shape: &[usize]) -> Self {
        Self::new(s, default_spatial_modes(shape))
    }

    pub fn factor(&self) -> usize {
        1usize << self.s
    }

    /// Shape after pooling `shape` at this level.
    pub fn pooled_shape(&self, shape: &[usize]) -> Vec<usize> {
        shape
            .iter()
            .enumerate()
            .map(|(k, &n)| if self.spatial_modes.contains(&k) { n.div_ceil(self.factor()) } else { n })
            .collect()
    }

    fn check(&self, order: usize) -> Result<()> {
        match self.spatial_modes.iter().find(|&&k| k >= order) {
            Some(&k) => Err(RgtnError::ModeOutOfRange { mode: k, order }),
            None => Ok(()),
        }
    }

    fn coarser(&self) -> ScaleLevel {
        ScaleLevel { s: self.s + 1, spatial_modes: self.spatial_modes.clone() }
    }
}

pub fn default_spatial_modes(shape: &[usize]) -> Vec<usize> {
    (0..shape.len()).filter(|&k| shape[k] >= DEFAULT_SPATIAL_MIN).collect()
}

/// `n x ceil(n/w)` averaging matrix; the last window may be short.
fn pooling_matrix(n: usize, w: usize) -> Matrix {
    let c = n.div_ceil(w);
    let mut m = Matrix::zeros(n, c);
    for j in 0..c {
        let lo = j * w;
        let hi = (lo + w).min(n);
        let inv = 1.0 / (hi - lo) as f64;
        for i in lo..hi {
            m.data[i * c + j] = inv;
        }
    }
    m
}

/// `c x n` linear interpolation matrix. Fine index `i` sits at coarse
/// coordinate `(i + 0.5)/w - 0.5`, clamped to the coarse range.
fn interpolation_matrix(c: usize, n: usize, w: usize) -> Matrix {
    let mut m = Matrix::zeros(c, n);
    for i in 0..n {
        let x = ((i as f64 + 0.5) / w as f64 - 0.5).clamp(0.0, (c - 1) as f64);
        let j0 = x.floor() as usize;
        let frac = x - j0 as f64;
        if j0 + 1 < c && frac > 0.0 {
            m.data[j0 * n + i] += 1.0 - frac;
            m.data[(j0 + 1) * n + i] += frac;
        } else {
            m.data[j0 * n + i] += 1.0;
        }
    }
    m
}

/// Mean pooling with window `2^s` along every spatial mode.
pub fn coarse_grain(t: &DenseTensor, level: &ScaleLevel) -> Result<DenseTensor> {
    level.check(t.order())?;
    let mut out = t.clone();
    if level.s == 0 {
        return Ok(out);
    }
    for &k in &level.spatial_modes {
        out = mode_apply(&out, k, &pooling_matrix(t.shape()[k], level.factor()));
    }
    Ok(out)
}

fn check_binary(mask: &DenseTensor) -> Result<()> {
    if mask.data().iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(RgtnError::InvalidArgument("mask entries must be 0 or 1".into()));
    }
    Ok(())
}

/// Pooled mask: a cell is observed iff at least half of its window is.
pub fn coarse_grain_mask(mask: &DenseTensor, level: &ScaleLevel) -> Result<DenseTensor> {
    coarse_grain_mask_with(mask, level, DEFAULT_MASK_FRACTION)
}

/// Pooled mask with a configurable observed-fraction threshold. A
/// threshold of 0 marks every window with at least one observation.
pub fn coarse_grain_mask_with(mask: &DenseTensor, level: &ScaleLevel, min_fraction: f64) -> Result<DenseTensor> {
    check_binary(mask)?;
    let frac = coarse_grain(mask, level)?;
    Ok(frac.map(|f| {
        // pooled fractions carry rounding noise; compare with a little slack
        let observed = if min_fraction <= 0.0 { f > 1e-12 } else { f >= min_fraction - 1e-12 };
        if observed {
            1.0
        } else {
            0.0
        }
    }))
}

/// Pools data using only observed entries: each cell is the mean of the
/// observed values in its window (0 where none are observed). Returns the
/// pooled data and the pooled mask.
pub fn coarse_grain_observed(
    t: &DenseTensor,
    mask: &DenseTensor,
    level: &ScaleLevel,
    min_fraction: f64,
) -> Result<(DenseTensor, DenseTensor)> {
    if t.shape() != mask.shape() {
        return Err(RgtnError::DimensionMismatch("data and mask shapes differ".into()));
    }
    check_binary(mask)?;
    let sums = coarse_grain(&t.zip_map(mask, |x, m| x * m)?, level)?;
    let counts = coarse_grain(mask, level)?;
    let data = sums.zip_map(&counts, |s, c| if c > 1e-12 { s / c } else { 0.0 })?;
    let pooled_mask = coarse_grain_mask_with(mask, level, min_fraction)?;
    Ok((data, pooled_mask))
}

/// Linear interpolation of every spatial mode from its pooled size back
/// to `target_shape`.
pub fn upsample(t: &DenseTensor, level: &ScaleLevel, target_shape: &[usize]) -> Result<DenseTensor> {
    level.check(target_shape.len())?;
    if t.order() != target_shape.len() || t.shape() != level.pooled_shape(target_shape).as_slice() {
        return Err(RgtnError::DimensionMismatch(format!(
            "cannot upsample {:?} to {target_shape:?} at scale {}",
            t.shape(),
            level.s
        )));
    }
    let mut out = t.clone();
    if level.s == 0 {
        return Ok(out);
    }
    for &k in &level.spatial_modes {
        let m = interpolation_matrix(t.shape()[k], target_shape[k], level.factor());
        out = mode_apply(&out, k, &m);
    }
    Ok(out)
}

/// Moves a network from scale `from` to the next finer scale `to` by
/// interpolating each spatial physical leg to its finer size.
/// `fine_shape` is the external shape at scale `to`. Bonds, gates and
/// diagonals are untouched.
pub fn refine_network(g: &TNGraph, from: &ScaleLevel, to: &ScaleLevel, fine_shape: &[usize]) -> Result<TNGraph> {
    if from.s == 0 || to.s + 1 != from.s || from.spatial_modes != to.spatial_modes {
        return Err(RgtnError::InvalidArgument(format!("scales {} -> {} are not adjacent", from.s, to.s)));
    }
    let step = ScaleLevel { s: 1, spatial_modes: from.spatial_modes.clone() };
    if step.pooled_shape(fine_shape) != g.external_shape() {
        return Err(RgtnError::DimensionMismatch(format!(
            "network shape {:?} is not the pooled form of {fine_shape:?}",
            g.external_shape()
        )));
    }
    let mut out = g.clone();
    for &k in &from.spatial_modes {
        let m = interpolation_matrix(g.external_shape()[k], fine_shape[k], 2);
        out.transform_leg(k, &m)?;
    }
    Ok(out)
}

/// Pools the physical legs of a network given at the finest scale down to
/// `level`, so its reconstruction is the pooled reconstruction.
pub fn coarsen_network(g: &TNGraph, level: &ScaleLevel) -> Result<TNGraph> {
    level.check(g.external_shape().len())?;
    let mut out = g.clone();
    if level.s == 0 {
        return Ok(out);
    }
    for &k in &level.spatial_modes {
        let m = pooling_matrix(g.external_shape()[k], level.factor());
        out.transform_leg(k, &m)?;
    }
    Ok(out)
}

/// Pooled shapes for every level from 0 to `max_s`, finest first.
pub fn ladder(shape: &[usize], spatial_modes: &BTreeSet<usize>, max_s: u32) -> Vec<Vec<usize>> {
    let mut level = ScaleLevel { s: 0, spatial_modes: spatial_modes.clone() };
    let mut out = Vec::new();
    for _ in 0..=max_s {
        out.push(level.pooled_shape(shape));
        level = level.coarser();
    }
    out
}
