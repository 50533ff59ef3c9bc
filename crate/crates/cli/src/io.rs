//! File helpers shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hfl_core::boundary_map::BoundaryMap;
use hfl_core::eval::BBox;
use hfl_core::grid::{LabelRaster, Raster};
use hfl_core::tensor_io::{self, Tensor};

use crate::error::{AtPath, CliError, CliResult};

pub fn load_raster(path: &Path) -> CliResult<Raster> {
    let t = tensor_io::load_raster(path).at(path)?;
    Raster::from_tensor(&t).at(path)
}

pub fn load_boundary(path: &Path) -> CliResult<BoundaryMap> {
    let t = tensor_io::load_raster(path).at(path)?;
    BoundaryMap::from_tensor(&t).at(path)
}

/// Label rasters come as integer-valued HFLT, or PGM read back as raw levels.
pub fn load_labels(path: &Path) -> CliResult<LabelRaster> {
    let mut t = tensor_io::load_raster(path).at(path)?;
    if is_pgm(path) {
        for v in t.data_mut() {
            *v = (*v * 255.0).round();
        }
    }
    LabelRaster::from_tensor(&t).at(path)
}

pub fn load_tensor(path: &Path) -> CliResult<Tensor> {
    tensor_io::load_tensor(path).at(path)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> CliResult<()> {
    tensor_io::save_tensor(t, path).at(path)
}

pub fn save_raster(t: &Tensor, path: &Path) -> CliResult<()> {
    tensor_io::save_raster(t, path).at(path)
}

pub fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// `<dir>/<stem><suffix>` beside `path`, e.g. `a.hflt` → `a.confidence.hflt`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Files in `dir` with one of `exts`, keyed by stem. Two files sharing a stem
/// are rejected.
pub fn files_by_stem(dir: &Path, exts: &[&str]) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !exts.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(CliError::input(
                &path,
                format!("duplicate stem, also {}", prev.display()),
            ));
        }
    }
    Ok(out)
}

/// Prediction/ground-truth pairs matched by stem; every prediction needs a
/// ground truth and vice versa.
pub fn paired_files(
    pred_dir: &Path,
    pred_exts: &[&str],
    gt_dir: &Path,
    gt_exts: &[&str],
) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let preds = files_by_stem(pred_dir, pred_exts)?;
    let mut gts = files_by_stem(gt_dir, gt_exts)?;
    let mut out = Vec::with_capacity(preds.len());
    for (stem, p) in preds {
        let g = gts
            .remove(&stem)
            .ok_or_else(|| CliError::input(&p, format!("no ground truth for {stem:?} in {}", gt_dir.display())))?;
        out.push((stem, p, g));
    }
    if let Some((stem, g)) = gts.into_iter().next() {
        return Err(CliError::input(
            &g,
            format!("no prediction for {stem:?} in {}", pred_dir.display()),
        ));
    }
    if out.is_empty() {
        return Err(CliError::input(pred_dir, "no prediction files"));
    }
    Ok(out)
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| CliError::input(path, e.to_string()))
}

fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, row: usize, col: usize) -> CliResult<T> {
    rec.get(col)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CliError::input(path, format!("row {}: bad or missing column {}", row + 1, col + 1)))
}

/// One label per row under a `label` header.
pub fn read_labels(path: &Path) -> CliResult<Vec<f32>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        out.push(parse_field(path, &rec, i, 0)?);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[f32]) -> CliResult<()> {
    let mut rows = vec![vec!["label".to_string()]];
    rows.extend(labels.iter().map(|l| vec![l.to_string()]));
    write_csv(path, &rows)
}

/// Boxes `x0,y0,x1,y1` under a header row.
pub fn read_boxes(path: &Path) -> CliResult<Vec<BBox>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        let v: [f64; 4] = [
            parse_field(path, &rec, i, 0)?,
            parse_field(path, &rec, i, 1)?,
            parse_field(path, &rec, i, 2)?,
            parse_field(path, &rec, i, 3)?,
        ];
        out.push(BBox::new(v[0], v[1], v[2], v[3]).at(path)?);
    }
    Ok(out)
}

pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::input(path, e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::input(path, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
