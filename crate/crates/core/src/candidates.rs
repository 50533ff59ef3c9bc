//! Candidate contour points: a gradient-magnitude proxy detector, topology
//! preserving thinning, and thresholded selection. An external edge map can
//! be fed to [`nms_thin`] / [`select_candidates`] in place of the proxy.

use std::io::{Read, Write};
use std::path::Path;

use crate::boundary_map::BoundaryMap;
use crate::error::{Error, Result};
use crate::grid::{Mask, Raster};

pub const DEFAULT_THRESHOLD: f32 = 0.05;
pub const DEFAULT_MAX_COUNT: usize = 20_000;

/// A sub-pixel point in image coordinates; pixel `(r, c)` has its center at `(x, y) = (c, r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePoint {
    pub x: f32,
    pub y: f32,
    pub proxy_score: f32,
}

impl CandidatePoint {
    /// Nearest pixel as `(row, col)`.
    pub fn pixel(&self) -> (usize, usize) {
        (self.y.round() as usize, self.x.round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    points: Vec<CandidatePoint>,
    image_dims: (usize, usize),
}

impl CandidateSet {
    /// Every point must round to a pixel inside `image_dims` and carry a score in `[0, 1]`.
    pub fn new(points: Vec<CandidatePoint>, image_dims: (usize, usize)) -> Result<Self> {
        let (h, w) = image_dims;
        for p in &points {
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x.round() < w as f32 && p.y.round() < h as f32;
            if !inside {
                return Err(Error::InvalidArgument(format!(
                    "candidate ({}, {}) outside {h}x{w} image",
                    p.x, p.y
                )));
            }
            if !(0.0..=1.0).contains(&p.proxy_score) {
                return Err(Error::InvalidArgument(format!(
                    "candidate score {} outside [0, 1]",
                    p.proxy_score
                )));
            }
        }
        Ok(Self { points, image_dims })
    }

    pub fn points(&self) -> &[CandidatePoint] {
        &self.points
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.image_dims
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Imported candidate files may map two points to one pixel; generated sets never do.
    pub fn has_duplicate_pixels(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.points.len());
        self.points.iter().any(|p| !seen.insert(p.pixel()))
    }

    /// Maps the points into another frame of the same scene under pixel-center alignment.
    pub fn rescaled(&self, dims: (usize, usize)) -> Result<Self> {
        let (h, w) = self.image_dims;
        let (nh, nw) = dims;
        let sy = nh as f32 / h as f32;
        let sx = nw as f32 / w as f32;
        let points = self
            .points
            .iter()
            .map(|p| CandidatePoint {
                x: ((p.x + 0.5) * sx - 0.5).clamp(0.0, nw as f32 - 1.0),
                y: ((p.y + 0.5) * sy - 0.5).clamp(0.0, nh as f32 - 1.0),
                proxy_score: p.proxy_score,
            })
            .collect();
        Self::new(points, dims)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(["x", "y", "score"]).map_err(csv_err)?;
        for p in &self.points {
            w.write_record([
                format!("{:.6}", p.x),
                format!("{:.6}", p.y),
                format!("{:.6}", p.proxy_score),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Write { offset: 0, source: e })
    }

    pub fn read_csv<R: Read>(source: R, image_dims: (usize, usize)) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(source);
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let field = |k: usize| -> Result<f32> {
                rec.get(k)
                    .ok_or_else(|| Error::Csv(format!("row {}: missing column {k}", i + 1)))?
                    .trim()
                    .parse()
                    .map_err(|_| Error::Csv(format!("row {}: bad number", i + 1)))
            };
            let score = if rec.len() > 2 { field(2)? } else { 1.0 };
            points.push(CandidatePoint {
                x: field(0)?,
                y: field(1)?,
                proxy_score: score,
            });
        }
        Self::new(points, image_dims)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| e.with_path(path))
    }

    pub fn load_csv(path: &Path, image_dims: (usize, usize)) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), image_dims).map_err(|e| e.with_path(path))
    }
}

/// Central-difference gradient magnitude, normalized by its maximum.
///
/// Borders replicate the nearest row/column.
pub fn gradient_proxy(image: &Raster) -> Result<BoundaryMap> {
    let (h, w) = image.dims();
    if h < 3 || w < 3 {
        return Err(Error::InvalidArgument(format!(
            "gradient proxy needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    let mut mag = Raster::from_fn(h, w, |r, c| {
        let gx = (image.get(r, (c + 1).min(w - 1)) - image.get(r, c.saturating_sub(1))) * 0.5;
        let gy = (image.get((r + 1).min(h - 1), c) - image.get(r.saturating_sub(1), c)) * 0.5;
        (gx * gx + gy * gy).sqrt()
    });
    let max = mag.max_value();
    if max > 0.0 {
        for v in mag.as_mut_slice() {
            *v = (*v / max).min(1.0);
        }
    }
    BoundaryMap::new(mag)
}

const RING: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

fn ring_values(fg: &Mask, r: usize, c: usize) -> [bool; 8] {
    let (h, w) = fg.dims();
    let mut out = [false; 8];
    for (k, &(dr, dc)) in RING.iter().enumerate() {
        let rr = r as isize + dr;
        let cc = c as isize + dc;
        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
            out[k] = fg.get(rr as usize, cc as usize);
        }
    }
    out
}

/// Components among ring positions selected by `member`, joined by `adjacent`.
fn ring_components(
    member: [bool; 8],
    adjacent: impl Fn(usize, usize) -> bool,
    touches_center: impl Fn(usize) -> bool,
) -> usize {
    let mut label = [usize::MAX; 8];
    let mut count = 0;
    for start in 0..8 {
        if !member[start] || label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = start;
        let mut touches = false;
        while let Some(i) = stack.pop() {
            touches |= touches_center(i);
            for j in 0..8 {
                if member[j] && label[j] == usize::MAX && adjacent(i, j) {
                    label[j] = start;
                    stack.push(j);
                }
            }
        }
        if touches {
            count += 1;
        }
    }
    count
}

/// Removing a simple pixel preserves the topology of both foreground (8-connected)
/// and background (4-connected).
pub(crate) fn is_simple(fg: &Mask, r: usize, c: usize) -> bool {
    let ring = ring_values(fg, r, c);
    let adj8 = |i: usize, j: usize| {
        let (a, b) = (RING[i], RING[j]);
        i != j && (a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1
    };
    let adj4 = |i: usize, j: usize| {
        let (a, b) = (RING[i], RING[j]);
        (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1
    };
    let t8 = ring_components(ring, adj8, |_| true);
    if t8 != 1 {
        return false;
    }
    let background = ring.map(|b| !b);
    let t4bar = ring_components(background, adj4, |i| i % 2 == 0);
    t4bar == 1
}

fn neighbor_count(fg: &Mask, r: usize, c: usize) -> usize {
    ring_values(fg, r, c).iter().filter(|&&b| b).count()
}

/// Thins the positive support to 1-px ridges.
///
/// Each pass runs four subiterations, one per border direction (north, south,
/// west, east). A subiteration considers only pixels whose neighbor in that
/// direction was background when it started, and deletes those that are simple
/// and not endpoints, weaker pixels first (ties in row-major order). Passes
/// repeat until nothing changes. Survivors keep their values.
pub fn nms_thin(map: &BoundaryMap) -> BoundaryMap {
    const BORDERS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    let (h, w) = map.dims();
    let mut fg = map.map(|v| v > 0.0);
    let mut order: Vec<usize> = (0..h * w).filter(|&i| fg.as_slice()[i]).collect();
    order.sort_by(|&a, &b| {
        map.as_slice()[a]
            .total_cmp(&map.as_slice()[b])
            .then(a.cmp(&b))
    });
    let background = |fg: &Mask, r: usize, c: usize, (dr, dc): (i64, i64)| {
        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
        rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 || !fg.get(rr as usize, cc as usize)
    };
    loop {
        let mut changed = false;
        for dir in BORDERS {
            let border: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&i| fg.as_slice()[i] && background(&fg, i / w, i % w, dir))
                .collect();
            for i in border {
                let (r, c) = (i / w, i % w);
                if neighbor_count(&fg, r, c) > 1 && is_simple(&fg, r, c) {
                    fg.set(r, c, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        order.retain(|&i| fg.as_slice()[i]);
    }
    let mut out = map.raster().clone();
    for (v, &keep) in out.as_mut_slice().iter_mut().zip(fg.as_slice()) {
        if !keep {
            *v = 0.0;
        }
    }
    BoundaryMap::new(out).expect("values come from a valid map")
}

/// All pixels strictly above `threshold`, strongest first (ties row-major), at most `max_count`.
pub fn select_candidates(map: &BoundaryMap, threshold: f32, max_count: usize) -> CandidateSet {
    let w = map.width();
    let mut idx: Vec<usize> = map
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i)
        .collect();
    idx.sort_by(|&a, &b| map.as_slice()[b].total_cmp(&map.as_slice()[a]));
    idx.truncate(max_count);
    let points = idx
        .into_iter()
        .map(|i| CandidatePoint {
            x: (i % w) as f32,
            y: (i / w) as f32,
            proxy_score: map.as_slice()[i],
        })
        .collect();
    CandidateSet::new(points, map.dims()).expect("pixel centers lie inside the map")
}

/// Suppresses values at or below `threshold`, thins what remains, then selects.
///
/// Thinning only the supra-threshold support keeps low-level texture from
/// joining edge ridges into one connected sheet before they are thinned.
pub fn thin_and_select(map: &BoundaryMap, threshold: f32, max_count: usize) -> (BoundaryMap, CandidateSet) {
    let kept = BoundaryMap::from_raster_clamped(map.raster().map(|v| if v > threshold { v } else { 0.0 }));
    let thin = nms_thin(&kept);
    let cs = select_candidates(&thin, threshold, max_count);
    (thin, cs)
}
