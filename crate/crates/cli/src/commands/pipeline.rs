use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use hfl_core::boundary_map::{self, BoundaryMap};
use hfl_core::candidates::{self, CandidateSet};
use hfl_core::features::{self, DescriptorMatrix, ManifestStack};
use hfl_core::grid::Raster;
use hfl_core::regressor::RegressorHead;
use hfl_core::tensor_io;
use hfl_core::{eval, Error};

use crate::args::{CandidatesArgs, ConvertArgs, DescribeArgs, DetectArgs};
use crate::error::{AtPath, CliError, CliResult};
use crate::io;
use crate::manifest::{manifest_path_for, Manifest};

pub fn convert(a: &ConvertArgs, jobs: usize) -> CliResult<()> {
    let t = tensor_io::load_raster(&a.input).at(&a.input)?;
    if io::is_pgm(&a.output) {
        let f = File::create(&a.output).map_err(|e| CliError::io(&a.output, e))?;
        tensor_io::write_raster_pgm(&t, a.maxval, BufWriter::new(f)).at(&a.output)?;
    } else {
        io::save_tensor(&t, &a.output)?;
    }
    let mut m = Manifest::new("convert", jobs);
    m.option("maxval", a.maxval);
    m.input("input", &a.input)?;
    m.output("output", &a.output);
    m.result("dims", format!("{}x{}", t.dims()[0], t.dims()[1]));
    m.write(&manifest_path_for(&a.output))
}

/// An external edge map, or the image's gradient proxy.
fn candidate_map(image: &Raster, edges: Option<&Path>) -> CliResult<BoundaryMap> {
    let map = match edges {
        Some(p) => {
            let e = io::load_raster(p)?;
            if e.dims() != image.dims() {
                return Err(CliError::input(
                    p,
                    format!("edge map is {:?} but the image is {:?}", e.dims(), image.dims()),
                ));
            }
            BoundaryMap::from_raster_clamped(e)
        }
        None => candidates::gradient_proxy(image).map_err(CliError::from)?,
    };
    Ok(map)
}

pub fn candidates(a: &CandidatesArgs, jobs: usize) -> CliResult<()> {
    let image = io::load_raster(&a.image)?;
    let map = candidate_map(&image, a.candidates.as_deref())?;
    let (map, cs) = candidates::thin_and_select(&map, a.threshold, a.max);
    cs.save_csv(&a.out).at(&a.out)?;
    if let Some(p) = &a.map_out {
        io::save_raster(&map.raster().to_tensor(), p)?;
    }
    let mut m = Manifest::new("candidates", jobs);
    m.option("threshold", a.threshold);
    m.option("max", a.max);
    m.option("source", if a.candidates.is_some() { "edge_map" } else { "gradient_proxy" });
    m.input("image", &a.image)?;
    if let Some(p) = &a.candidates {
        m.input("edge_map", p)?;
    }
    m.output("candidates", &a.out);
    if let Some(p) = &a.map_out {
        m.output("map", p);
    }
    m.result("count", cs.len());
    m.write(&manifest_path_for(&a.out))
}

fn open_stack(path: &Path, channels: Option<usize>) -> CliResult<ManifestStack> {
    ManifestStack::open(path, channels).at(path)
}

pub fn describe(a: &DescribeArgs, jobs: usize) -> CliResult<()> {
    let mut stack = open_stack(&a.stack, a.channels)?;
    let stack_dims = stack.manifest().input_dims;
    let frame = a.candidate_dims.unwrap_or(stack_dims);
    let cs = CandidateSet::load_csv(&a.candidates, frame).at(&a.candidates)?;
    let in_stack = cs.rescaled(stack_dims).at(&a.candidates)?;
    let desc = features::batch_descriptors(&mut stack, &in_stack, a.mode.into()).at(&a.stack)?;
    desc.save(&a.out).at(&a.out)?;

    let mut m = Manifest::new("describe", jobs);
    m.option("mode", format!("{:?}", a.mode).to_lowercase());
    m.option("candidate_dims", format!("{}x{}", frame.0, frame.1));
    m.input("stack", &a.stack)?;
    m.input("candidates", &a.candidates)?;
    if let (Some(gt), Some(out)) = (&a.gt, &a.labels_out) {
        let ann = eval::AnnotationSet::from_tensor(&io::load_tensor(gt)?).at(gt)?;
        if ann.dims() != frame {
            return Err(CliError::input(
                gt,
                format!("annotations are {:?} but candidates are in a {:?} frame", ann.dims(), frame),
            ));
        }
        let labels = eval::agreement_labels(&ann, &cs, a.agree_tol).at(gt)?;
        io::write_labels(out, &labels)?;
        m.option("agree_tol", a.agree_tol);
        m.input("gt", gt)?;
        m.output("labels", out);
    }
    m.output("descriptors", &a.out);
    m.result("rows", desc.rows());
    m.result("cols", desc.cols());
    m.write(&manifest_path_for(&a.out))
}

fn detect_candidates(a: &DetectArgs, image: &Raster) -> CliResult<CandidateSet> {
    match &a.candidates {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => {
            CandidateSet::load_csv(p, image.dims()).at(p)
        }
        edges => {
            let map = candidate_map(image, edges.as_deref())?;
            Ok(candidates::thin_and_select(&map, a.threshold, a.max).1)
        }
    }
}

fn predict(head: &RegressorHead, desc: &DescriptorMatrix, head_path: &Path) -> CliResult<Vec<f32>> {
    if head.input_dim() != desc.cols() {
        return Err(CliError::Core(
            Error::Shape(format!(
                "head expects {} channels, descriptors have {}",
                head.input_dim(),
                desc.cols()
            ))
            .with_path(head_path),
        ));
    }
    head.predict(desc).at(head_path)
}

pub fn detect(a: &DetectArgs, jobs: usize) -> CliResult<()> {
    let image = io::load_raster(&a.image)?;
    let dims = image.dims();
    let cs = detect_candidates(a, &image)?;
    let mut stack = open_stack(&a.stack, None)?;
    let stack_dims = stack.manifest().input_dims;
    let in_stack = cs.rescaled(stack_dims).at(&a.stack)?;
    let desc = features::batch_descriptors(&mut stack, &in_stack, a.mode.into()).at(&a.stack)?;
    let head = RegressorHead::load(&a.head).at(&a.head)?;
    let preds = predict(&head, &desc, &a.head)?;

    // Assemble in the stack frame and pool down when it is the larger one.
    let map = if stack_dims.0 >= dims.0 && stack_dims.1 >= dims.1 {
        let big = boundary_map::assemble(&preds, &in_stack, stack_dims)?;
        if stack_dims == dims {
            big
        } else {
            boundary_map::downscale(&big, dims)?
        }
    } else {
        boundary_map::assemble(&preds, &cs, dims)?
    };
    io::save_raster(&map.raster().to_tensor(), &a.out)?;

    let mut m = Manifest::new("detect", jobs);
    m.option("threshold", a.threshold);
    m.option("max", a.max);
    m.option("mode", format!("{:?}", a.mode).to_lowercase());
    m.input("image", &a.image)?;
    m.input("stack", &a.stack)?;
    for f in ["head.meta", "w1.hflt", "b1.hflt", "w2.hflt", "b2.hflt"] {
        m.input(&format!("head.{}", f.split('.').next().unwrap_or(f)), &a.head.join(f))?;
    }
    if let Some(p) = &a.candidates {
        m.input("candidates", p)?;
    }
    m.output("boundary", &a.out);
    m.result("candidates", cs.len());
    m.result("stack_dims", format!("{}x{}", stack_dims.0, stack_dims.1));
    m.result("max_value", map.raster().max_value());
    m.write(&manifest_path_for(&a.out))
}
