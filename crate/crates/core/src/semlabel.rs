//! Object-class labels for boundary pixels, read off a square window of an
//! external class-probability stack or segmentation map.

use rayon::prelude::*;

use crate::boundary_map::BoundaryMap;
use crate::error::{Error, Result};
use crate::grid::{LabelRaster, Raster};
use crate::tensor_io::Tensor;

pub const DEFAULT_GRID: usize = 9;
pub const DEFAULT_BTHRESH: f32 = 0.4;

/// `C + 1` per-pixel class probabilities, channel 0 being background.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilityStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ClassProbabilityStack {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (channels, height, width) = t.dims3()?;
        if channels < 2 {
            return Err(Error::Shape(format!(
                "probability stack needs background plus at least one class, got {channels} channels"
            )));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data: t.into_data(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, k: usize, r: usize, c: usize) -> f32 {
        self.data[(k * self.height + r) * self.width + c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.clone())
            .expect("stack dims are consistent")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBoundaryMap {
    pub labels: LabelRaster,
    pub confidence: Raster,
}

impl SemanticBoundaryMap {
    /// Pixels with nonzero confidence.
    pub fn support(&self) -> Vec<bool> {
        self.confidence.as_slice().iter().map(|&v| v > 0.0).collect()
    }
}

fn check(bmap: &BoundaryMap, dims: (usize, usize), grid: usize, bthresh: f32) -> Result<()> {
    if grid.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("grid must be odd, got {grid}")));
    }
    if !(0.0..1.0).contains(&bthresh) {
        return Err(Error::InvalidArgument(format!("bthresh {bthresh} outside [0, 1)")));
    }
    if bmap.dims() != dims {
        return Err(Error::Shape(format!(
            "boundary map is {:?}, class input is {:?}",
            bmap.dims(),
            dims
        )));
    }
    Ok(())
}

/// Window rows/columns around `i`, clamped to `[0, n)`.
fn window(i: usize, half: usize, n: usize) -> std::ops::Range<usize> {
    i.saturating_sub(half)..(i + half + 1).min(n)
}

fn label_pixels(
    bmap: &BoundaryMap,
    bthresh: f32,
    pick: impl Fn(usize, usize) -> u32 + Sync,
) -> SemanticBoundaryMap {
    let (h, w) = bmap.dims();
    let rows: Vec<(Vec<u32>, Vec<f32>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut labels = vec![0u32; w];
            let mut conf = vec![0.0f32; w];
            for c in 0..w {
                let b = bmap.get(r, c);
                if b > bthresh {
                    labels[c] = pick(r, c);
                    conf[c] = b;
                }
            }
            (labels, conf)
        })
        .collect();
    let (labels, conf): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    SemanticBoundaryMap {
        labels: LabelRaster::new(h, w, labels.concat()).expect("row lengths match"),
        confidence: Raster::new(h, w, conf.concat()).expect("row lengths match"),
    }
}

/// Per-class window maxima over every channel including background; the
/// argmax (lowest index on ties) labels the pixel, background meaning 0.
pub fn label_with_probs(
    bmap: &BoundaryMap,
    probs: &ClassProbabilityStack,
    grid: usize,
    bthresh: f32,
) -> Result<SemanticBoundaryMap> {
    check(bmap, probs.dims(), grid, bthresh)?;
    let half = grid / 2;
    let (h, w) = probs.dims();
    Ok(label_pixels(bmap, bthresh, |r, c| {
        let mut best = (0usize, f32::NEG_INFINITY);
        for k in 0..probs.channels() {
            let mut m = f32::NEG_INFINITY;
            for rr in window(r, half, h) {
                for cc in window(c, half, w) {
                    m = m.max(probs.get(k, rr, cc));
                }
            }
            if m > best.1 {
                best = (k, m);
            }
        }
        best.0 as u32
    }))
}

/// Most frequent non-background label in the window, 0 if there is none.
pub fn label_with_segmentation(
    bmap: &BoundaryMap,
    seg: &LabelRaster,
    grid: usize,
    bthresh: f32,
) -> Result<SemanticBoundaryMap> {
    check(bmap, seg.dims(), grid, bthresh)?;
    let half = grid / 2;
    let (h, w) = seg.dims();
    Ok(label_pixels(bmap, bthresh, |r, c| {
        let mut seen: Vec<(u32, usize)> = Vec::new();
        for rr in window(r, half, h) {
            for cc in window(c, half, w) {
                let l = seg.get(rr, cc);
                if l == 0 {
                    continue;
                }
                match seen.iter_mut().find(|(k, _)| *k == l) {
                    Some((_, n)) => *n += 1,
                    None => seen.push((l, 1)),
                }
            }
        }
        seen.into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(k, _)| k)
    }))
}
