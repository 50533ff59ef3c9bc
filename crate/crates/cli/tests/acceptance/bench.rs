//! Boundary benchmark, segmentation IOU and proposal recall against
//! hand-computed fixtures and independent oracles.

use hfl_core::boundary_map::BoundaryMap;
use hfl_core::eval::{self, AnnotationSet, BBox, GtMode, IouMode, PrCurve, ProposalImage};
use hfl_core::grid::{LabelRaster, Mask, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Check;

/// Maximum bipartite matching size via the O(n³) Hungarian method on the
/// square cost matrix with 0 for pairs within `tol` and 1 otherwise.
fn hungarian_matching(pred: &[(usize, usize)], gt: &[(usize, usize)], tol: f32) -> usize {
    let n = pred.len().max(gt.len());
    if n == 0 {
        return 0;
    }
    let within = |i: usize, j: usize| -> bool {
        if i >= pred.len() || j >= gt.len() {
            return false;
        }
        let dr = pred[i].0 as f64 - gt[j].0 as f64;
        let dc = pred[i].1 as f64 - gt[j].1 as f64;
        (dr * dr + dc * dc).sqrt() <= f64::from(tol)
    };
    let cost = |i: usize, j: usize| -> i64 { if within(i, j) { 0 } else { 1 } };
    // Potentials u (rows), v (columns); way[j] is the column preceding j on the augmenting path.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut assigned = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).filter(|&j| within(assigned[j] - 1, j - 1)).count()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(density))
}

/// Separated one-pixel straight segments: horizontal ones on the left, vertical
/// ones on the right, a diagonal along the bottom.
fn segment_gt(rng: &mut ChaCha8Rng) -> Mask {
    let mut m = Mask::filled(32, 32, false);
    for row in [3, 8, 13] {
        let a = rng.random_range(1..6);
        let b = rng.random_range(10..16);
        for c in a..=b {
            m.set(row, c, true);
        }
    }
    for col in [20, 25, 30] {
        let a = rng.random_range(1..5);
        let b = rng.random_range(9..16);
        for r in a..=b {
            m.set(r, col, true);
        }
    }
    let len = rng.random_range(5..10);
    for i in 0..len {
        m.set(20 + i, 4 + i, true);
    }
    m
}

fn to_map(m: &Mask) -> BoundaryMap {
    BoundaryMap::new(m.to_raster()).unwrap()
}

pub fn harness(c: &mut Check) {
    let grid = eval::default_thresholds();

    // Perfect prediction of a single annotator.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut curves = Vec::new();
    for _ in 0..4 {
        let gt = segment_gt(&mut rng);
        let ann = AnnotationSet::new(vec![gt.clone()]).unwrap();
        let tol = eval::default_match_tolerance(gt.dims());
        curves.push(eval::pr_curve(&to_map(&gt), &ann, GtMode::Any, &grid, tol).unwrap());
    }
    let m = eval::aggregate(&curves).unwrap();
    c.note(format!("perfect: ODS {:.3} OIS {:.3} AP {:.3}", m.ods_f, m.ois_f, m.ap));
    c.ensure(m.ods_f == 1.0 && m.ois_f == 1.0, "perfect prediction is not F = 1");
    c.ensure(m.ap >= 0.99, "perfect prediction AP below 0.99");

    // Empty prediction.
    let gt = segment_gt(&mut rng);
    let ann = AnnotationSet::new(vec![gt]).unwrap();
    let curve = eval::pr_curve(&BoundaryMap::zeros(32, 32), &ann, GtMode::Any, &grid, 1.0).unwrap();
    c.ensure(curve.entries.iter().all(|e| e.recall == 0.0), "empty prediction has recall");

    // 5x5: one prediction next to one of two ground-truth pixels.
    let mut pred = Raster::filled(5, 5, 0.0);
    pred.set(1, 1, 1.0);
    let mut gt = Mask::filled(5, 5, false);
    gt.set(1, 2, true);
    gt.set(3, 3, true);
    let curve = eval::pr_curve_against(&BoundaryMap::new(pred).unwrap(), &gt, &[0.5], 1.0).unwrap();
    let e = &curve.entries[0];
    let f = 2.0 * e.precision * e.recall / (e.precision + e.recall);
    c.ensure(
        e.precision == 1.0 && e.recall == 0.5 && (f - 2.0 / 3.0).abs() < 1e-12,
        format!("5x5 fixture gave P={} R={}", e.precision, e.recall),
    );

    // OIS never falls below ODS.
    let mut ois_violations = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let images = rng.random_range(1..5);
        let curves: Vec<PrCurve> = (0..images)
            .map(|_| {
                let (h, w) = (rng.random_range(6..16), rng.random_range(6..16));
                let map = Raster::from_fn(h, w, |_, _| if rng.random_bool(0.4) { rng.random() } else { 0.0 });
                let ann = AnnotationSet::new(vec![random_mask(&mut rng, h, w, 0.2), random_mask(&mut rng, h, w, 0.2)]).unwrap();
                eval::pr_curve(&BoundaryMap::new(map).unwrap(), &ann, GtMode::Any, &eval::threshold_grid(9), 1.0).unwrap()
            })
            .collect();
        let m = eval::aggregate(&curves).unwrap();
        if m.ois_f < m.ods_f - 1e-12 {
            ois_violations += 1;
        }
    }
    c.ensure(ois_violations == 0, format!("OIS < ODS on {ois_violations} fixtures"));

    // Matching is maximum cardinality.
    let mut mismatches = 0;
    let mut invalid = 0;
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(2..=12), rng.random_range(2..=12));
        let (dp, dg) = (rng.random_range(0.05..0.6), rng.random_range(0.05..0.6));
        let pred = random_mask(&mut rng, h, w, dp);
        let gt = random_mask(&mut rng, h, w, dg);
        let tol = [1.0, 1.5, 2.0, 3.0][rng.random_range(0..4)];
        let m = eval::match_boundaries(&pred, &gt, tol).unwrap();
        if m.count() != hungarian_matching(&pred.pixels(), &gt.pixels(), tol) {
            mismatches += 1;
        }
        let mut seen_p = std::collections::HashSet::new();
        let mut seen_g = std::collections::HashSet::new();
        let ok = m.pairs.iter().all(|&(p, g)| {
            let d = ((p.0 as f64 - g.0 as f64).powi(2) + (p.1 as f64 - g.1 as f64).powi(2)).sqrt();
            pred.get(p.0, p.1) && gt.get(g.0, g.1) && d <= f64::from(tol) && seen_p.insert(p) && seen_g.insert(g)
        });
        if !ok || m.matched_pred.count() != m.count() || m.matched_gt.count() != m.count() {
            invalid += 1;
        }
    }
    c.note("matching agrees with Hungarian on 300 fixtures");
    c.ensure(mismatches == 0, format!("matching size differs from Hungarian on {mismatches} fixtures"));
    c.ensure(invalid == 0, format!("{invalid} matchings are not one-to-one within tolerance"));
}

fn labels(h: usize, w: usize, f: impl FnMut(usize, usize) -> u32) -> LabelRaster {
    LabelRaster::from_fn(h, w, f)
}

fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

/// Proposals in rank order each claim the best still-unmatched gt box at or
/// above `thr`; recall after every prefix.
fn greedy_recall_oracle(images: &[ProposalImage], thr: f64, budget: usize) -> Vec<f64> {
    let total: usize = images.iter().map(|i| i.gt.len()).sum();
    let mut out = vec![0.0; budget];
    for img in images {
        let mut free: Vec<usize> = (0..img.gt.len()).collect();
        let mut matched = 0usize;
        for (n, slot) in out.iter_mut().enumerate() {
            if let Some(p) = img.proposals.get(n) {
                let overlap = |g: usize| {
                    let b = &img.gt[g];
                    let iw = (p.x1.min(b.x1) - p.x0.max(b.x0)).max(0.0);
                    let ih = (p.y1.min(b.y1) - p.y0.max(b.y0)).max(0.0);
                    let i = iw * ih;
                    i / ((p.x1 - p.x0) * (p.y1 - p.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - i)
                };
                let best = free
                    .iter()
                    .copied()
                    .filter(|&g| overlap(g) >= thr)
                    .fold(None, |acc: Option<usize>, g| match acc {
                        Some(a) if overlap(a) >= overlap(g) => Some(a),
                        _ => Some(g),
                    });
                if let Some(g) = best {
                    free.retain(|&x| x != g);
                    matched += 1;
                }
            }
            *slot += matched as f64;
        }
    }
    out.iter().map(|&m| if total == 0 { 0.0 } else { m / total as f64 }).collect()
}

pub fn iou_and_proposals(c: &mut Check) {
    // Image A: class 1 is the top five rows, predicted as the top four.
    // Image B: class 1 is five pixels of row 0, predicted as four of them plus one stray pixel.
    let a_gt = labels(10, 10, |r, _| u32::from(r < 5));
    let a_pred = labels(10, 10, |r, _| u32::from(r < 4));
    let b_gt = labels(10, 10, |r, c| u32::from(r == 0 && c < 5));
    let b_pred = labels(10, 10, |r, c| u32::from((r == 0 && c < 4) || (r == 1 && c == 0)));
    let pairs = vec![(a_pred, a_gt), (b_pred, b_gt)];
    let pp = eval::segmentation_iou(&pairs, 2, IouMode::PerPixel).unwrap();
    let pi = eval::segmentation_iou(&pairs, 2, IouMode::PerImage).unwrap();
    let want_pp = [144.0 / 156.0, 44.0 / 56.0];
    let want_pi = [(50.0 / 60.0 + 94.0 / 96.0) / 2.0, (40.0 / 50.0 + 4.0 / 6.0) / 2.0];
    let close = |got: &[Option<f64>], want: &[f64]| got.iter().zip(want).all(|(g, w)| g.is_some_and(|g| (g - w).abs() < 1e-12));
    c.ensure(close(&pp.per_class, &want_pp), format!("per-pixel IOU {:?}", pp.per_class));
    c.ensure(close(&pi.per_class, &want_pi), format!("per-image IOU {:?}", pi.per_class));
    c.ensure(pp.per_class[1] != pi.per_class[1], "per-pixel and per-image IOU coincide on unequal class sizes");
    c.ensure((pp.mean - (want_pp[0] + want_pp[1]) / 2.0).abs() < 1e-12, "per-pixel mean IOU");
    c.ensure((pi.mean - (want_pi[0] + want_pi[1]) / 2.0).abs() < 1e-12, "per-image mean IOU");

    let img = ProposalImage {
        gt: vec![bbox(0.0, 0.0, 10.0, 10.0), bbox(20.0, 0.0, 30.0, 10.0), bbox(0.0, 20.0, 10.0, 30.0)],
        proposals: vec![
            bbox(0.0, 0.0, 10.0, 9.0),
            bbox(1.0, 0.0, 10.0, 10.0),
            bbox(20.0, 0.0, 30.0, 8.0),
            bbox(0.0, 20.0, 10.0, 26.0),
            bbox(0.0, 21.0, 10.0, 30.0),
        ],
    };
    let m = &eval::proposal_metrics(std::slice::from_ref(&img), &[0.7], 5).unwrap()[0];
    let want = [1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0];
    let recall_ok = m.recall.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12);
    c.ensure(recall_ok, format!("fixture recall {:?}", m.recall));
    c.ensure(m.n_at_75 == Some(5), format!("N@75% {:?}", m.n_at_75));
    c.ensure((m.auc - want.iter().sum::<f64>() / 5.0).abs() < 1e-12, "fixture AUC");
    c.ensure((m.max_recall - 1.0).abs() < 1e-12, "fixture max recall");

    let exact = ProposalImage { proposals: img.gt.clone(), gt: img.gt.clone() };
    let m = &eval::proposal_metrics(&[exact], &[0.7], 10).unwrap()[0];
    c.ensure(m.max_recall == 1.0 && m.n_at_75 == Some(3), "gt boxes as proposals");
    let far = ProposalImage { proposals: vec![bbox(100.0, 100.0, 110.0, 110.0); 4], gt: img.gt.clone() };
    let m = &eval::proposal_metrics(&[far], &[0.7], 10).unwrap()[0];
    c.ensure(m.max_recall == 0.0 && m.n_at_75.is_none(), "disjoint proposals have recall");

    let mut oracle_mismatch = 0;
    let mut non_monotone = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rand_box = |rng: &mut ChaCha8Rng| {
            let (x, y) = (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
            bbox(x, y, x + rng.random_range(2.0..15.0), y + rng.random_range(2.0..15.0))
        };
        let images: Vec<ProposalImage> = (0..rng.random_range(1..4))
            .map(|_| ProposalImage {
                gt: (0..rng.random_range(0..6)).map(|_| rand_box(&mut rng)).collect(),
                proposals: (0..rng.random_range(0..60)).map(|_| rand_box(&mut rng)).collect(),
            })
            .collect();
        let thresholds = [0.3, 0.5, 0.7];
        let budget = 80;
        let ms = eval::proposal_metrics(&images, &thresholds, budget).unwrap();
        for (m, &thr) in ms.iter().zip(&thresholds) {
            let want = greedy_recall_oracle(&images, thr, budget);
            if m.recall.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
                oracle_mismatch += 1;
            }
            if m.recall.windows(2).any(|p| p[1] < p[0]) {
                non_monotone += 1;
            }
        }
    }
    c.ensure(oracle_mismatch == 0, format!("{oracle_mismatch} recall curves differ from the greedy oracle"));
    c.ensure(non_monotone == 0, format!("{non_monotone} recall curves are not monotone"));
}
