use std::path::Path;

use hfl_core::boundary_map::BoundaryMap;
use hfl_core::eval::{self, AnnotationSet, PrCurve, ProposalImage, SemanticImage};
use hfl_core::tensor_io::Tensor;
use rayon::prelude::*;

use crate::args::{EvalArgs, EvalIouArgs, EvalProposalsArgs, EvalSemArgs};
use crate::error::{AtPath, CliError, CliResult};
use crate::io;
use crate::manifest::{manifest_path_for, Manifest};

fn thresholds(count: usize) -> CliResult<Vec<f32>> {
    if count == 0 {
        return Err(CliError::Usage("--thresholds must be positive".into()));
    }
    Ok(eval::threshold_grid(count))
}

fn dims_mismatch(pred: &Path, pd: (usize, usize), gt: &Path, gd: (usize, usize)) -> CliError {
    CliError::input(
        pred,
        format!("prediction is {}x{} but {} is {}x{}", pd.0, pd.1, gt.display(), gd.0, gd.1),
    )
}

fn load_annotations(path: &Path) -> CliResult<AnnotationSet> {
    AnnotationSet::from_tensor(&io::load_tensor(path)?).at(path)
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn eval(a: &EvalArgs, jobs: usize) -> CliResult<()> {
    let ts = thresholds(a.thresholds)?;
    let pairs = io::paired_files(&a.pred_dir, &["pgm", "hflt"], &a.gt_dir, &["hflt"])?;
    let mode = a.mode.into();
    let curves: Vec<PrCurve> = pairs
        .par_iter()
        .map(|(_, p, g)| {
            let map = io::load_boundary(p)?;
            let ann = load_annotations(g)?;
            if map.dims() != ann.dims() {
                return Err(dims_mismatch(p, map.dims(), g, ann.dims()));
            }
            let tol = a.tol.unwrap_or_else(|| eval::default_match_tolerance(map.dims()));
            eval::pr_curve(&map, &ann, mode, &ts, tol).at(p)
        })
        .collect::<CliResult<_>>()?;
    let metrics = eval::aggregate(&curves)?;

    let header = ["images", "ods_f", "ods_threshold", "ois_f", "ap"].map(String::from).to_vec();
    let row = vec![
        curves.len().to_string(),
        f(metrics.ods_f),
        f(f64::from(metrics.ods_threshold)),
        f(metrics.ois_f),
        f(metrics.ap),
    ];
    io::write_csv(&a.out, &[header, row])?;
    if let Some(out) = &a.curves_out {
        let mut rows = vec![["image", "threshold", "tp", "fp", "fn", "precision", "recall", "f1"]
            .map(String::from)
            .to_vec()];
        for ((stem, _, _), c) in pairs.iter().zip(&curves) {
            for e in &c.entries {
                rows.push(vec![
                    stem.clone(),
                    f(f64::from(e.threshold)),
                    e.true_positives.to_string(),
                    e.false_positives.to_string(),
                    e.false_negatives.to_string(),
                    f(e.precision),
                    f(e.recall),
                    f(e.f1),
                ]);
            }
        }
        io::write_csv(out, &rows)?;
    }

    let mut m = Manifest::new("eval", jobs);
    m.option("mode", format!("{mode:?}").to_lowercase());
    m.option("tol", a.tol.map_or("auto".to_string(), |t| t.to_string()));
    m.option("thresholds", a.thresholds);
    for (stem, p, g) in &pairs {
        m.input(&format!("pred.{stem}"), p)?;
        m.input(&format!("gt.{stem}"), g)?;
    }
    m.output("metrics", &a.out);
    if let Some(out) = &a.curves_out {
        m.output("curves", out);
    }
    m.result("ods_f", f(metrics.ods_f));
    m.result("ods_threshold", metrics.ods_threshold);
    m.result("ois_f", f(metrics.ois_f));
    m.result("ap", f(metrics.ap));
    m.write(&manifest_path_for(&a.out))
}

/// Splits a `[C, ...rest]` tensor into `C` tensors of shape `rest`.
fn split_leading(t: &Tensor) -> Vec<Tensor> {
    let rest: Vec<usize> = t.dims()[1..].to_vec();
    let span: usize = rest.iter().product();
    t.data()
        .chunks(span.max(1))
        .map(|c| Tensor::new(rest.clone(), c.to_vec()).expect("chunk matches dims"))
        .collect()
}

fn semantic_image(p: &Path, g: &Path) -> CliResult<SemanticImage> {
    let pred = io::load_tensor(p)?;
    let gt = io::load_tensor(g)?;
    if pred.ndim() != 3 {
        return Err(CliError::input(p, format!("expected [C,H,W], got {:?}", pred.dims())));
    }
    if gt.ndim() != 4 {
        return Err(CliError::input(g, format!("expected [C,K,H,W], got {:?}", gt.dims())));
    }
    let (pd, gd) = (pred.dims(), gt.dims());
    if pd[0] != gd[0] || pd[1..] != gd[2..] {
        return Err(CliError::input(
            p,
            format!("prediction dims {pd:?} do not fit {} dims {gd:?}", g.display()),
        ));
    }
    let class_maps = split_leading(&pred)
        .iter()
        .map(|t| BoundaryMap::from_tensor(t).at(p))
        .collect::<CliResult<_>>()?;
    let class_gt = split_leading(&gt)
        .iter()
        .map(|t| AnnotationSet::from_tensor(t).at(g))
        .collect::<CliResult<_>>()?;
    Ok(SemanticImage { class_maps, class_gt })
}

pub fn eval_sem(a: &EvalSemArgs, jobs: usize) -> CliResult<()> {
    let ts = thresholds(a.thresholds)?;
    let pairs = io::paired_files(&a.pred_dir, &["hflt"], &a.gt_dir, &["hflt"])?;
    let images = pairs
        .iter()
        .map(|(_, p, g)| semantic_image(p, g))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(w) = images.windows(2).position(|w| w[0].class_maps.len() != w[1].class_maps.len()) {
        return Err(CliError::input(&pairs[w + 1].1, "class count differs from earlier images"));
    }
    let tol = match a.tol {
        Some(t) => t,
        None => eval::default_match_tolerance(images[0].class_maps[0].dims()),
    };
    let mode = a.mode.into();
    let report = eval::semantic_pr(&images, mode, &ts, tol)?;

    let mut rows = vec![["class", "mf", "ap"].map(String::from).to_vec()];
    for (c, s) in report.per_class.iter().enumerate() {
        if let Some(s) = s {
            rows.push(vec![c.to_string(), f(s.mf), f(s.ap)]);
        }
    }
    rows.push(vec!["mean".into(), f(report.mean_mf), f(report.mean_ap)]);
    io::write_csv(&a.out, &rows)?;

    let mut m = Manifest::new("eval-sem", jobs);
    m.option("mode", format!("{mode:?}").to_lowercase());
    m.option("tol", tol);
    m.option("thresholds", a.thresholds);
    for (stem, p, g) in &pairs {
        m.input(&format!("pred.{stem}"), p)?;
        m.input(&format!("gt.{stem}"), g)?;
    }
    m.output("metrics", &a.out);
    m.result("mean_mf", f(report.mean_mf));
    m.result("mean_ap", f(report.mean_ap));
    m.write(&manifest_path_for(&a.out))
}

pub fn eval_iou(a: &EvalIouArgs, jobs: usize) -> CliResult<()> {
    let files = io::paired_files(&a.pred_dir, &["hflt", "pgm"], &a.gt_dir, &["hflt", "pgm"])?;
    let mut pairs = Vec::with_capacity(files.len());
    for (_, p, g) in &files {
        let (pred, gt) = (io::load_labels(p)?, io::load_labels(g)?);
        if pred.dims() != gt.dims() {
            return Err(dims_mismatch(p, pred.dims(), g, gt.dims()));
        }
        pairs.push((pred, gt));
    }
    let mode = a.mode.into();
    let report = eval::segmentation_iou(&pairs, a.classes, mode)?;

    let mut rows = vec![["class", "iou"].map(String::from).to_vec()];
    for (c, v) in report.per_class.iter().enumerate() {
        if let Some(v) = v {
            rows.push(vec![c.to_string(), f(*v)]);
        }
    }
    rows.push(vec!["mean".into(), f(report.mean)]);
    io::write_csv(&a.out, &rows)?;

    let mut m = Manifest::new("eval-iou", jobs);
    m.option("classes", a.classes);
    m.option("mode", format!("{mode:?}").to_lowercase());
    for (stem, p, g) in &files {
        m.input(&format!("pred.{stem}"), p)?;
        m.input(&format!("gt.{stem}"), g)?;
    }
    m.output("metrics", &a.out);
    m.result("mean_iou", f(report.mean));
    m.write(&manifest_path_for(&a.out))
}

pub fn eval_proposals(a: &EvalProposalsArgs, jobs: usize) -> CliResult<()> {
    let files = io::paired_files(&a.pred_dir, &["csv"], &a.gt_dir, &["csv"])?;
    let images = files
        .iter()
        .map(|(_, p, g)| {
            Ok(ProposalImage {
                proposals: io::read_boxes(p)?,
                gt: io::read_boxes(g)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let metrics = eval::proposal_metrics(&images, &a.ious, a.budget)?;

    let mut rows = vec![["iou", "auc", "n_at_75", "max_recall"].map(String::from).to_vec()];
    for pm in &metrics {
        rows.push(vec![
            f(pm.iou_threshold),
            f(pm.auc),
            pm.n_at_75.map_or_else(String::new, |n| n.to_string()),
            f(pm.max_recall),
        ]);
    }
    io::write_csv(&a.out, &rows)?;
    if let Some(out) = &a.curves_out {
        let mut header = vec!["n".to_string()];
        header.extend(metrics.iter().map(|pm| format!("recall@{}", pm.iou_threshold)));
        let mut rows = vec![header];
        for n in 0..a.budget {
            let mut r = vec![(n + 1).to_string()];
            r.extend(metrics.iter().map(|pm| f(pm.recall[n])));
            rows.push(r);
        }
        io::write_csv(out, &rows)?;
    }

    let mut m = Manifest::new("eval-proposals", jobs);
    m.option("ious", a.ious.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    m.option("budget", a.budget);
    for (stem, p, g) in &files {
        m.input(&format!("pred.{stem}"), p)?;
        m.input(&format!("gt.{stem}"), g)?;
    }
    m.output("metrics", &a.out);
    if let Some(out) = &a.curves_out {
        m.output("curves", out);
    }
    for pm in &metrics {
        m.result(&format!("auc@{}", pm.iou_threshold), f(pm.auc));
    }
    m.write(&manifest_path_for(&a.out))
}
