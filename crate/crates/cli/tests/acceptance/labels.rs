//! Semantic labeling of boundary pixels on hand fixtures, plus the support rule.

use hfl_core::boundary_map::BoundaryMap;
use hfl_core::grid::{LabelRaster, Raster};
use hfl_core::semlabel::{self, ClassProbabilityStack};
use hfl_core::tensor_io::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Check;

const SIDE: usize = 9;
const CENTER: usize = 4;

/// A map whose only boundary pixel is the center.
fn center_map() -> BoundaryMap {
    let mut r = Raster::filled(SIDE, SIDE, 0.0);
    r.set(CENTER, CENTER, 0.9);
    BoundaryMap::new(r).unwrap()
}

fn probs(channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> ClassProbabilityStack {
    let mut data = Vec::new();
    for k in 0..channels {
        for r in 0..SIDE {
            for c in 0..SIDE {
                data.push(f(k, r, c));
            }
        }
    }
    ClassProbabilityStack::from_tensor(Tensor::new(vec![channels, SIDE, SIDE], data).unwrap()).unwrap()
}

fn center_label_probs(p: &ClassProbabilityStack) -> u32 {
    semlabel::label_with_probs(&center_map(), p, 5, 0.5).unwrap().labels.get(CENTER, CENTER)
}

fn center_label_seg(seg: &LabelRaster) -> u32 {
    semlabel::label_with_segmentation(&center_map(), seg, 5, 0.5).unwrap().labels.get(CENTER, CENTER)
}

pub fn labeling(c: &mut Check) {
    let in_window = |r: usize, col: usize| r.abs_diff(CENTER) <= 2 && col.abs_diff(CENTER) <= 2;

    // Class 3 peaks inside the window; a stronger class 1 peak lies outside it.
    let p = probs(5, |k, r, col| match k {
        0 => 0.3,
        3 if (r, col) == (CENTER + 1, CENTER - 2) => 0.8,
        1 if (r, col) == (0, 0) => 0.95,
        _ => 0.1,
    });
    c.ensure(center_label_probs(&p) == 3, "single class in the window is not chosen");

    let p = probs(4, |k, _, _| if k == 0 { 0.9 } else { 0.05 });
    c.ensure(center_label_probs(&p) == 0, "background-only window is not labeled 0");

    let p = probs(5, |k, r, col| match k {
        2 if (r, col) == (CENTER, CENTER) => 0.7,
        4 if (r, col) == (CENTER - 1, CENTER + 2) => 0.7,
        _ => 0.1,
    });
    c.ensure(center_label_probs(&p) == 2, "probability tie does not pick the lowest index");

    let seg = LabelRaster::filled(SIDE, SIDE, 7);
    c.ensure(center_label_seg(&seg) == 7, "uniform segment label is not used");
    let seg = LabelRaster::filled(SIDE, SIDE, 0);
    c.ensure(center_label_seg(&seg) == 0, "background segmentation is not labeled 0");

    // Window: five each of classes 8 and 3, three of class 5, the rest background.
    let mut cells: Vec<(usize, usize)> = (0..SIDE)
        .flat_map(|r| (0..SIDE).map(move |col| (r, col)))
        .filter(|&(r, col)| in_window(r, col))
        .collect();
    cells.sort_by_key(|&(r, col)| (col * 7 + r * 3) % 25);
    let mut seg = LabelRaster::filled(SIDE, SIDE, 9);
    for (i, &(r, col)) in cells.iter().enumerate() {
        let v = match i {
            0..5 => 8,
            5..10 => 3,
            10..13 => 5,
            _ => 0,
        };
        seg.set(r, col, v);
    }
    c.ensure(center_label_seg(&seg) == 3, "segment tie does not pick the lowest label");

    // Support is exactly the pixels above the boundary threshold.
    let mut bad = 0;
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
        let bthresh: f32 = rng.random_range(0.0..0.9);
        let raster = Raster::from_fn(h, w, |_, _| if rng.random_bool(0.5) { rng.random() } else { 0.0 });
        // Exact-threshold ties must stay out.
        let mut raster = raster;
        raster.set(0, 0, bthresh);
        let bmap = BoundaryMap::new(raster).unwrap();
        let grid = [1, 3, 5][rng.random_range(0..3)];
        let chans = rng.random_range(2..5);
        let mut data = Vec::new();
        for _ in 0..chans * h * w {
            data.push(rng.random::<f32>());
        }
        let p = ClassProbabilityStack::from_tensor(Tensor::new(vec![chans, h, w], data).unwrap()).unwrap();
        let seg = LabelRaster::from_fn(h, w, |_, _| rng.random_range(0..4));
        let want: Vec<bool> = bmap.as_slice().iter().map(|&v| v > bthresh).collect();
        let a = semlabel::label_with_probs(&bmap, &p, grid, bthresh).unwrap();
        let b = semlabel::label_with_segmentation(&bmap, &seg, grid, bthresh).unwrap();
        for out in [&a, &b] {
            let off_support_clean = out
                .labels
                .as_slice()
                .iter()
                .zip(&want)
                .all(|(&l, &s)| s || l == 0);
            let conf_ok = out
                .confidence
                .as_slice()
                .iter()
                .zip(bmap.as_slice())
                .zip(&want)
                .all(|((&cf, &v), &s)| if s { cf == v } else { cf == 0.0 });
            if out.support() != want || !off_support_clean || !conf_ok {
                bad += 1;
            }
        }
    }
    c.ensure(bad == 0, format!("support differs from the thresholded map in {bad} outputs"));
}
