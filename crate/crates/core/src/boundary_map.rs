//! Dense boundary-probability maps: assembly from per-candidate predictions and
//! max-pooling back to the original image geometry.

use std::ops::Deref;

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::grid::Raster;
use crate::tensor_io::Tensor;

/// Per-pixel boundary probability, every value finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap(Raster);

impl BoundaryMap {
    pub fn new(raster: Raster) -> Result<Self> {
        if let Some(v) = raster
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidArgument(format!(
                "boundary value {v} outside [0, 1]"
            )));
        }
        Ok(Self(raster))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Raster::filled(height, width, 0.0))
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(Raster::from_tensor(t)?)
    }

    /// Clamps into `[0, 1]` (NaN becomes 0).
    pub fn from_raster_clamped(raster: Raster) -> Self {
        Self(raster.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }
}

impl Deref for BoundaryMap {
    type Target = Raster;

    fn deref(&self) -> &Raster {
        &self.0
    }
}

/// Writes each prediction at its candidate's rounded pixel; collisions keep the maximum.
pub fn assemble(preds: &[f32], cs: &CandidateSet, dims: (usize, usize)) -> Result<BoundaryMap> {
    if preds.len() != cs.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} candidates",
            preds.len(),
            cs.len()
        )));
    }
    let (h, w) = dims;
    let mut out = Raster::filled(h, w, 0.0);
    for (p, &pred) in cs.points().iter().zip(preds) {
        if !(pred.is_finite() && (0.0..=1.0).contains(&pred)) {
            return Err(Error::InvalidArgument(format!("prediction {pred} outside [0, 1]")));
        }
        let (r, c) = p.pixel();
        if r >= h || c >= w || p.x < 0.0 || p.y < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "candidate ({}, {}) outside {h}x{w}",
                p.x, p.y
            )));
        }
        if pred > out.get(r, c) {
            out.set(r, c, pred);
        }
    }
    Ok(BoundaryMap(out))
}

/// Max-pools over the source pixels overlapping each target pixel's pre-image.
pub fn downscale(map: &BoundaryMap, target: (usize, usize)) -> Result<BoundaryMap> {
    let (sh, sw) = map.dims();
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument("target dims must be positive".into()));
    }
    if th > sh || tw > sw {
        return Err(Error::InvalidArgument(format!(
            "cannot downscale {sh}x{sw} to larger {th}x{tw}"
        )));
    }
    let span = |i: usize, src: usize, dst: usize| (i * src / dst, ((i + 1) * src).div_ceil(dst));
    let out = Raster::from_fn(th, tw, |r, c| {
        let (r0, r1) = span(r, sh, th);
        let (c0, c1) = span(c, sw, tw);
        let mut m = 0.0f32;
        for sr in r0..r1 {
            for sc in c0..c1 {
                m = m.max(map.get(sr, sc));
            }
        }
        m
    });
    Ok(BoundaryMap(out))
}
