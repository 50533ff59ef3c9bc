//! Benchmark metrics: agreement labels, "any" and consensus ground truth,
//! tolerance matching, precision/recall curves with ODS/OIS/AP, per-class
//! semantic scores, segmentation IOU, and object-proposal recall.

use rayon::prelude::*;

use crate::boundary_map::BoundaryMap;
use crate::candidates::{nms_thin, CandidateSet};
use crate::error::{Error, Result};
use crate::grid::{LabelRaster, Mask, Raster};
use crate::tensor_io::Tensor;

pub const DEFAULT_THRESHOLD_COUNT: usize = 33;
pub const DEFAULT_AGREEMENT_TOL: f32 = 1.0;
pub const DEFAULT_PROPOSAL_IOUS: [f64; 3] = [0.65, 0.7, 0.75];
pub const DEFAULT_PROPOSAL_BUDGET: usize = 5000;

/// `k / count` for `k = 1..=count`.
pub fn threshold_grid(count: usize) -> Vec<f32> {
    (1..=count).map(|k| k as f32 / count as f32).collect()
}

pub fn default_thresholds() -> Vec<f32> {
    threshold_grid(DEFAULT_THRESHOLD_COUNT)
}

/// Matching radius `round(0.0075 · diagonal)`.
pub fn default_match_tolerance(dims: (usize, usize)) -> f32 {
    let (h, w) = dims;
    (0.0075 * ((h * h + w * w) as f64).sqrt()).round() as f32
}

/// Binary boundary maps from `K ≥ 1` human annotators.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    annotators: Vec<Mask>,
}

impl AnnotationSet {
    pub fn new(annotators: Vec<Mask>) -> Result<Self> {
        let first = annotators
            .first()
            .ok_or_else(|| Error::InvalidArgument("annotation set needs at least one annotator".into()))?;
        if annotators.iter().any(|a| !a.same_dims(first)) {
            return Err(Error::Shape("annotator maps differ in size".into()));
        }
        Ok(Self { annotators })
    }

    /// From a `[K, H, W]` tensor of 0/1 values.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (k, h, w) = t.dims3()?;
        if let Some(v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!("annotation value {v} is not 0 or 1")));
        }
        let plane = h * w;
        let annotators = (0..k)
            .map(|i| Mask::new(h, w, t.data()[i * plane..(i + 1) * plane].iter().map(|&v| v == 1.0).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(annotators)
    }

    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.dims();
        let data = self
            .annotators
            .iter()
            .flat_map(|a| a.as_slice().iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect();
        Tensor::new(vec![self.count(), h, w], data).expect("annotation dims are consistent")
    }

    pub fn annotators(&self) -> &[Mask] {
        &self.annotators
    }

    pub fn count(&self) -> usize {
        self.annotators.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.annotators[0].dims()
    }
}

fn disk_offsets(tol: f32) -> Vec<(i64, i64)> {
    let r = tol.max(0.0).floor() as i64;
    let t2 = f64::from(tol) * f64::from(tol);
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if ((dr * dr + dc * dc) as f64) <= t2 {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Pixels within Euclidean distance `tol` of a set pixel.
pub fn dilate(m: &Mask, tol: f32) -> Mask {
    let (h, w) = m.dims();
    let offsets = disk_offsets(tol);
    let mut out = Mask::filled(h, w, false);
    for (r, c) in m.pixels() {
        for &(dr, dc) in &offsets {
            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
            if rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 {
                out.set(rr as usize, cc as usize, true);
            }
        }
    }
    out
}

/// Fraction of annotators marking a boundary within `tol_px` of each candidate pixel.
pub fn agreement_labels(ann: &AnnotationSet, cs: &CandidateSet, tol_px: f32) -> Result<Vec<f32>> {
    if cs.image_dims() != ann.dims() {
        return Err(Error::Shape(format!(
            "candidates are in a {:?} frame, annotations are {:?}",
            cs.image_dims(),
            ann.dims()
        )));
    }
    let near: Vec<Mask> = ann.annotators().par_iter().map(|a| dilate(a, tol_px)).collect();
    let k = ann.count() as f32;
    Ok(cs
        .points()
        .iter()
        .map(|p| {
            let (r, c) = p.pixel();
            near.iter().filter(|m| m.get(r, c)).count() as f32 / k
        })
        .collect())
}

/// Pixelwise union of the annotators.
pub fn any_gt(ann: &AnnotationSet) -> Mask {
    let (h, w) = ann.dims();
    Mask::from_fn(h, w, |r, c| ann.annotators().iter().any(|a| a.get(r, c)))
}

/// Pixels marked by some annotator and within `tol_px` of a mark by every annotator.
pub fn consensus_gt(ann: &AnnotationSet, tol_px: f32) -> Mask {
    let near: Vec<Mask> = ann.annotators().iter().map(|a| dilate(a, tol_px)).collect();
    let any = any_gt(ann);
    let (h, w) = any.dims();
    Mask::from_fn(h, w, |r, c| any.get(r, c) && near.iter().all(|m| m.get(r, c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtMode {
    #[default]
    Any,
    Consensus,
}

impl std::str::FromStr for GtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(Self::Any),
            "consensus" => Ok(Self::Consensus),
            other => Err(Error::InvalidArgument(format!("unknown ground-truth mode {other:?}"))),
        }
    }
}

pub fn ground_truth(ann: &AnnotationSet, mode: GtMode, tol_px: f32) -> Mask {
    match mode {
        GtMode::Any => any_gt(ann),
        GtMode::Consensus => consensus_gt(ann, tol_px),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Matched `(pred, gt)` pixel pairs.
    pub pairs: Vec<((usize, usize), (usize, usize))>,
    pub matched_pred: Mask,
    pub matched_gt: Mask,
}

impl Matching {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }
}

/// One-to-one matching of prediction to ground-truth pixels within `tol_px`.
///
/// Pairs are taken greedily in ascending distance (ties row-major on the
/// prediction pixel, then the ground-truth pixel). Augmenting paths then
/// extend the greedy result to a maximum-cardinality matching, so a
/// near-optimal greedy choice never costs a match.
pub fn match_boundaries(pred: &Mask, gt: &Mask, tol_px: f32) -> Result<Matching> {
    if !pred.same_dims(gt) {
        return Err(Error::Shape(format!(
            "prediction is {:?}, ground truth is {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let (h, w) = pred.dims();
    let p_pix = pred.pixels();
    let g_pix = gt.pixels();
    let mut g_index = vec![u32::MAX; h * w];
    for (k, &(r, c)) in g_pix.iter().enumerate() {
        g_index[r * w + c] = k as u32;
    }
    let mut offsets = disk_offsets(tol_px);
    offsets.sort_by_key(|&(dr, dc)| dr * dr + dc * dc);

    // Adjacency per prediction pixel, nearest first (ties in gt row-major order).
    let adj: Vec<Vec<(i64, u32)>> = p_pix
        .iter()
        .map(|&(r, c)| {
            let mut v: Vec<(i64, u32)> = offsets
                .iter()
                .filter_map(|&(dr, dc)| {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        return None;
                    }
                    let g = g_index[rr as usize * w + cc as usize];
                    (g != u32::MAX).then_some((dr * dr + dc * dc, g))
                })
                .collect();
            v.sort_unstable();
            v
        })
        .collect();

    let mut edges: Vec<(i64, u32, u32)> = adj
        .iter()
        .enumerate()
        .flat_map(|(p, v)| v.iter().map(move |&(d2, g)| (d2, p as u32, g)))
        .collect();
    edges.sort_unstable();
    let mut mate_p = vec![u32::MAX; p_pix.len()];
    let mut mate_g = vec![u32::MAX; g_pix.len()];
    for &(_, p, g) in &edges {
        if mate_p[p as usize] == u32::MAX && mate_g[g as usize] == u32::MAX {
            mate_p[p as usize] = g;
            mate_g[g as usize] = p;
        }
    }

    augment(&adj, &mut mate_p, &mut mate_g);

    let mut matched_pred = Mask::filled(h, w, false);
    let mut matched_gt = Mask::filled(h, w, false);
    let mut pairs = Vec::new();
    for (p, &g) in mate_p.iter().enumerate() {
        if g != u32::MAX {
            let (pp, gp) = (p_pix[p], g_pix[g as usize]);
            matched_pred.set(pp.0, pp.1, true);
            matched_gt.set(gp.0, gp.1, true);
            pairs.push((pp, gp));
        }
    }
    Ok(Matching {
        pairs,
        matched_pred,
        matched_gt,
    })
}

/// Kuhn's augmenting-path search from every free prediction vertex.
fn augment(adj: &[Vec<(i64, u32)>], mate_p: &mut [u32], mate_g: &mut [u32]) {
    let mut seen = vec![0u32; mate_g.len()];
    let mut stamp = 0u32;
    // Explicit DFS stack of (prediction vertex, next adjacency index).
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..adj.len() {
        if mate_p[root] != u32::MAX || adj[root].is_empty() {
            continue;
        }
        stamp += 1;
        stack.clear();
        stack.push((root, 0));
        let mut found = None;
        while let Some(&mut (p, ref mut next)) = stack.last_mut() {
            if *next >= adj[p].len() {
                stack.pop();
                continue;
            }
            let g = adj[p][*next].1 as usize;
            *next += 1;
            if seen[g] == stamp {
                continue;
            }
            seen[g] = stamp;
            match mate_g[g] {
                u32::MAX => {
                    found = Some(g);
                    break;
                }
                q => stack.push((q as usize, 0)),
            }
        }
        if let Some(mut g) = found {
            // Flip the alternating path recorded on the stack.
            while let Some((p, next)) = stack.pop() {
                let prev = mate_p[p];
                mate_p[p] = g as u32;
                mate_g[g] = p as u32;
                debug_assert_eq!(adj[p][next - 1].1 as usize, g);
                if prev == u32::MAX {
                    break;
                }
                g = prev as usize;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrEntry {
    pub threshold: f32,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F from counts; every 0/0 ratio is 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

impl PrEntry {
    pub fn from_counts(threshold: f32, tp: usize, fp: usize, fn_: usize) -> Self {
        let (precision, recall, f1) = prf(tp, fp, fn_);
        Self {
            threshold,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub entries: Vec<PrEntry>,
}

impl PrCurve {
    pub fn thresholds(&self) -> Vec<f32> {
        self.entries.iter().map(|e| e.threshold).collect()
    }

    /// Entry with the highest F (earliest on ties).
    pub fn best(&self) -> &PrEntry {
        self.entries
            .iter()
            .reduce(|best, e| if e.f1 > best.f1 { e } else { best })
            .expect("curves are never empty")
    }
}

fn check_thresholds(thresholds: &[f32]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("threshold list is empty".into()));
    }
    if thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidArgument("thresholds must lie in (0, 1]".into()));
    }
    if thresholds.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidArgument("thresholds must be strictly ascending".into()));
    }
    Ok(())
}

/// Pixels with value `≥ t`, thinned to one-pixel width (weaker pixels are peeled first).
pub fn binarize_thin(map: &BoundaryMap, t: f32) -> Mask {
    let kept = Raster::from_fn(map.height(), map.width(), |r, c| {
        let v = map.get(r, c);
        if v >= t {
            v
        } else {
            0.0
        }
    });
    let thin = nms_thin(&BoundaryMap::new(kept).expect("values come from a valid map"));
    thin.map(|v| v > 0.0)
}

/// Precision/recall per threshold against a fixed ground-truth mask.
pub fn pr_curve_against(map: &BoundaryMap, gt: &Mask, thresholds: &[f32], tol_px: f32) -> Result<PrCurve> {
    check_thresholds(thresholds)?;
    if !map.same_dims(gt) {
        return Err(Error::Shape(format!(
            "map is {:?}, ground truth is {:?}",
            map.dims(),
            gt.dims()
        )));
    }
    let gt_count = gt.count();
    let entries = thresholds
        .par_iter()
        .map(|&t| {
            let pred = binarize_thin(map, t);
            let m = match_boundaries(&pred, gt, tol_px)?;
            let tp = m.count();
            Ok(PrEntry::from_counts(t, tp, pred.count() - tp, gt_count - tp))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrCurve { entries })
}

pub fn pr_curve(map: &BoundaryMap, ann: &AnnotationSet, mode: GtMode, thresholds: &[f32], tol_px: f32) -> Result<PrCurve> {
    pr_curve_against(map, &ground_truth(ann, mode, tol_px), thresholds, tol_px)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchMetrics {
    pub ods_f: f64,
    pub ods_threshold: f32,
    pub ois_f: f64,
    pub ap: f64,
}

/// Area under precision(recall) by trapezoid over recall-sorted points. The
/// curve is held flat at its first precision down to recall 0 and contributes
/// nothing past its largest recall.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let Some(&(r0, p0)) = pts.first() else {
        return 0.0;
    };
    let mut area = r0 * p0;
    for w in pts.windows(2) {
        let ((ra, pa), (rb, pb)) = (w[0], w[1]);
        area += (rb - ra) * (pa + pb) / 2.0;
    }
    area.clamp(0.0, 1.0)
}

/// `2·TP / (TP + FP + G)` over the chosen entry of every curve, which equals the
/// pooled F since each image's `TP + FN` is its fixed ground-truth count `G`.
fn pooled_f(curves: &[PrCurve], choice: &[usize]) -> f64 {
    let (tp, fp, fn_) = curves.iter().zip(choice).fold((0, 0, 0), |acc, (c, &i)| {
        let e = &c.entries[i];
        (acc.0 + e.true_positives, acc.1 + e.false_positives, acc.2 + e.false_negatives)
    });
    prf(tp, fp, fn_).2
}

/// Per-image thresholds maximizing the pooled F, by Dinkelbach iteration
/// started from the common-threshold optimum `start`. Each round lets every
/// image independently maximize `2·TP - λ·(TP + FP)` (earliest threshold on
/// ties) and raises `λ` to the resulting F until it stops improving.
pub fn ois_choice(curves: &[PrCurve], start: f64) -> Vec<usize> {
    let pick = |lambda: f64| -> Vec<usize> {
        curves
            .iter()
            .map(|c| {
                let score = |e: &PrEntry| {
                    2.0 * e.true_positives as f64 - lambda * (e.true_positives + e.false_positives) as f64
                };
                let mut best = 0;
                for (i, e) in c.entries.iter().enumerate() {
                    if score(e) > score(&c.entries[best]) {
                        best = i;
                    }
                }
                best
            })
            .collect()
    };
    let mut lambda = start;
    let mut choice = pick(lambda);
    loop {
        let f = pooled_f(curves, &choice);
        if f <= lambda {
            break;
        }
        lambda = f;
        let next = pick(lambda);
        if next == choice {
            break;
        }
        choice = next;
    }
    choice
}

/// Dataset summary: ODS from summed counts per threshold, OIS from the best
/// pooled F when each image picks its own threshold, AP from the summed-count curve.
pub fn aggregate(curves: &[PrCurve]) -> Result<BenchMetrics> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to aggregate".into()))?;
    let grid = first.thresholds();
    if grid.is_empty() {
        return Err(Error::InvalidArgument("curve has no thresholds".into()));
    }
    if curves.iter().any(|c| c.thresholds() != grid) {
        return Err(Error::InvalidArgument("curves use different threshold grids".into()));
    }
    let summed: Vec<PrEntry> = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (tp, fp, fn_) = curves.iter().fold((0, 0, 0), |acc, c| {
                let e = &c.entries[i];
                (acc.0 + e.true_positives, acc.1 + e.false_positives, acc.2 + e.false_negatives)
            });
            PrEntry::from_counts(t, tp, fp, fn_)
        })
        .collect();
    let dataset = PrCurve { entries: summed };
    let best = *dataset.best();
    let ois_f = pooled_f(curves, &ois_choice(curves, best.f1));
    let points: Vec<(f64, f64)> = dataset.entries.iter().map(|e| (e.recall, e.precision)).collect();
    Ok(BenchMetrics {
        ods_f: best.f1,
        ods_threshold: best.threshold,
        ois_f,
        ap: average_precision(&points),
    })
}

/// Per-class maps and annotations for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticImage {
    pub class_maps: Vec<BoundaryMap>,
    pub class_gt: Vec<AnnotationSet>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub mf: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticReport {
    /// `None` for classes with no ground truth and no prediction anywhere.
    pub per_class: Vec<Option<ClassScore>>,
    pub mean_mf: f64,
    pub mean_ap: f64,
}

pub fn semantic_pr(images: &[SemanticImage], mode: GtMode, thresholds: &[f32], tol_px: f32) -> Result<SemanticReport> {
    let classes = images
        .first()
        .map(|i| i.class_maps.len())
        .ok_or_else(|| Error::InvalidArgument("no images".into()))?;
    if classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    if images.iter().any(|i| i.class_maps.len() != classes || i.class_gt.len() != classes) {
        return Err(Error::Shape("images disagree on the class count".into()));
    }
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let curves = images
            .iter()
            .map(|img| pr_curve(&img.class_maps[c], &img.class_gt[c], mode, thresholds, tol_px))
            .collect::<Result<Vec<_>>>()?;
        let empty = curves.iter().flat_map(|cv| &cv.entries).all(|e| {
            e.true_positives + e.false_positives + e.false_negatives == 0
        });
        if empty {
            per_class.push(None);
            continue;
        }
        let m = aggregate(&curves)?;
        per_class.push(Some(ClassScore { mf: m.ods_f, ap: m.ap }));
    }
    let scored: Vec<&ClassScore> = per_class.iter().flatten().collect();
    let mean = |f: fn(&ClassScore) -> f64| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|s| f(s)).sum::<f64>() / scored.len() as f64
        }
    };
    Ok(SemanticReport {
        mean_mf: mean(|s| s.mf),
        mean_ap: mean(|s| s.ap),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouMode {
    /// Intersections and unions summed over every pixel of the set.
    #[default]
    PerPixel,
    /// Per-image IOU averaged over the images where the class occurs.
    PerImage,
}

impl std::str::FromStr for IouMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_pixel" | "per-pixel" | "pp" => Ok(Self::PerPixel),
            "per_image" | "per-image" | "pi" => Ok(Self::PerImage),
            other => Err(Error::InvalidArgument(format!("unknown IOU mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// Indexed by class (0 = background); `None` where the class never occurs.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// IOU for classes `0..classes` over `(pred, gt)` label raster pairs.
pub fn segmentation_iou(pairs: &[(LabelRaster, LabelRaster)], classes: usize, mode: IouMode) -> Result<IouReport> {
    if classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let mut counts = Vec::with_capacity(pairs.len());
    for (pred, gt) in pairs {
        if !pred.same_dims(gt) {
            return Err(Error::Shape(format!(
                "prediction is {:?}, ground truth is {:?}",
                pred.dims(),
                gt.dims()
            )));
        }
        let mut inter = vec![0usize; classes];
        let mut union = vec![0usize; classes];
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            let (p, g) = (p as usize, g as usize);
            if p >= classes || g >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} outside 0..{classes}",
                    p.max(g)
                )));
            }
            if p == g {
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[g] += 1;
            }
        }
        counts.push((inter, union));
    }
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| match mode {
            IouMode::PerPixel => {
                let (i, u) = counts.iter().fold((0, 0), |a, (i, u)| (a.0 + i[c], a.1 + u[c]));
                (u > 0).then(|| i as f64 / u as f64)
            }
            IouMode::PerImage => {
                let ious: Vec<f64> = counts
                    .iter()
                    .filter(|(_, u)| u[c] > 0)
                    .map(|(i, u)| i[c] as f64 / u[c] as f64)
                    .collect();
                (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
            }
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(IouReport { per_class, mean })
}

/// Axis-aligned box `(x0, y0, x1, y1)` with `x1 > x0`, `y1 > y0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let finite = [x0, y0, x1, y1].iter().all(|v| v.is_finite());
        if !finite || x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidArgument(format!(
                "malformed box ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let iw = (self.x1.min(o.x1) - self.x0.max(o.x0)).max(0.0);
        let ih = (self.y1.min(o.y1) - self.y0.max(o.y0)).max(0.0);
        let inter = iw * ih;
        inter / (self.area() + o.area() - inter)
    }
}

/// Ranked proposals and ground-truth boxes of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalImage {
    pub proposals: Vec<BBox>,
    pub gt: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalMetrics {
    pub iou_threshold: f64,
    /// Mean recall over `n = 1..=budget`.
    pub auc: f64,
    /// Fewest proposals reaching 75% recall; `None` if never reached.
    pub n_at_75: Option<usize>,
    pub max_recall: f64,
    /// `recall[n - 1]` for `n = 1..=budget`.
    pub recall: Vec<f64>,
}

/// For each `n`, how many gt boxes are matched after the first `n` proposals.
/// Each proposal in rank order claims the unmatched gt box it overlaps most
/// (lowest index on ties), if that overlap reaches `thr`.
fn matched_prefix_counts(img: &ProposalImage, thr: f64, budget: usize) -> Vec<usize> {
    let mut taken = vec![false; img.gt.len()];
    let mut matched = 0;
    let mut out = Vec::with_capacity(budget);
    for n in 0..budget {
        if let Some(p) = img.proposals.get(n) {
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in img.gt.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = p.iou(gb);
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                matched += 1;
            }
        }
        out.push(matched);
    }
    out
}

pub fn proposal_metrics(images: &[ProposalImage], iou_thresholds: &[f64], budget: usize) -> Result<Vec<ProposalMetrics>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("proposal budget must be positive".into()));
    }
    for img in images {
        for b in img.proposals.iter().chain(&img.gt) {
            BBox::new(b.x0, b.y0, b.x1, b.y1)?;
        }
    }
    let total_gt: usize = images.iter().map(|i| i.gt.len()).sum();
    iou_thresholds
        .iter()
        .map(|&thr| {
            if !(thr > 0.0 && thr <= 1.0) {
                return Err(Error::InvalidArgument(format!("IoU threshold {thr} outside (0, 1]")));
            }
            let per_image: Vec<Vec<usize>> = images
                .par_iter()
                .map(|img| matched_prefix_counts(img, thr, budget))
                .collect();
            let recall: Vec<f64> = (0..budget)
                .map(|n| {
                    let m: usize = per_image.iter().map(|c| c[n]).sum();
                    if total_gt == 0 {
                        0.0
                    } else {
                        m as f64 / total_gt as f64
                    }
                })
                .collect();
            Ok(ProposalMetrics {
                iou_threshold: thr,
                auc: recall.iter().sum::<f64>() / budget as f64,
                n_at_75: recall.iter().position(|&r| r >= 0.75).map(|i| i + 1),
                max_recall: recall[budget - 1],
                recall,
            })
        })
        .collect()
}
