//! Per-candidate descriptors interpolated from a stack of convolutional feature maps.
//!
//! Every layer is a `[channels, height, width]` tensor covering the whole input
//! image at its own resolution. A candidate at input pixel coordinates `(x, y)`
//! is mapped into each layer under pixel-center alignment,
//!
//! ```text
//! row = (y + 0.5)·h/H − 0.5,   col = (x + 0.5)·w/W − 0.5
//! ```
//!
//! clamped to the layer, and the four corners of the enclosing cell are
//! combined. The descriptor is the concatenation of the per-layer channel
//! blocks in manifest order.
//!
//! [`batch_descriptors`] visits each layer exactly once, so peak memory is one
//! layer (plus its transposed copy) and the output matrix.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::candidates::{CandidatePoint, CandidateSet};
use crate::error::{Error, Result};
use crate::tensor_io::{self, LayerSpec, StackManifest, Tensor};

/// Channel count of the 16 convolutional layers of the 19-layer VGG configuration.
pub const VGG16_CONV_CHANNELS: usize = 5504;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpMode {
    /// Standard bilinear weights over the enclosing cell.
    #[default]
    Bilinear,
    /// Unweighted mean of the four enclosing corners.
    Uniform4,
}

impl std::str::FromStr for InterpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "uniform4" => Ok(Self::Uniform4),
            other => Err(Error::InvalidArgument(format!(
                "unknown interpolation mode {other:?} (bilinear|uniform4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    /// `[channels, height, width]`.
    pub data: Tensor,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        let d = self.data.dims();
        LayerSpec {
            name: self.name.clone(),
            channels: d[0],
            height: d[1],
            width: d[2],
        }
    }
}

/// Anything that can hand out stack layers one at a time, in network order.
pub trait LayerSource {
    fn input_dims(&self) -> (usize, usize);
    fn layer_specs(&self) -> &[LayerSpec];
    fn load_layer(&mut self, index: usize) -> Result<Cow<'_, Tensor>>;

    fn total_channels(&self) -> usize {
        self.layer_specs().iter().map(|l| l.channels).sum()
    }
}

/// Fully materialized feature stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    input_dims: (usize, usize),
    layers: Vec<Layer>,
    specs: Vec<LayerSpec>,
}

impl FeatureStack {
    pub fn new(
        input_dims: (usize, usize),
        layers: Vec<Layer>,
        expected_channels: Option<usize>,
    ) -> Result<Self> {
        for l in &layers {
            l.data.dims3().map_err(|e| {
                Error::Stack(format!("layer {}: {e}", l.name))
            })?;
        }
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        StackManifest {
            input_dims,
            layers: specs.clone(),
        }
        .validate(expected_channels)?;
        Ok(Self {
            input_dims,
            layers,
            specs,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    pub fn manifest(&self) -> StackManifest {
        StackManifest {
            input_dims: self.input_dims,
            layers: self.specs.clone(),
        }
    }

    /// Writes the manifest and one `<name>.hflt` per layer.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        std::fs::write(manifest_path, self.manifest().render())
            .map_err(|e| Error::io_at(manifest_path, e))?;
        for l in &self.layers {
            tensor_io::save_tensor(&l.data, &tensor_io::layer_path(manifest_path, &l.name))?;
        }
        Ok(())
    }
}

impl LayerSource for FeatureStack {
    fn input_dims(&self) -> (usize, usize) {
        self.input_dims
    }

    fn layer_specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    fn load_layer(&mut self, index: usize) -> Result<Cow<'_, Tensor>> {
        Ok(Cow::Borrowed(&self.layers[index].data))
    }
}

/// Stack on disk: a manifest plus per-layer HFLT files read on demand.
#[derive(Debug, Clone)]
pub struct ManifestStack {
    path: PathBuf,
    manifest: StackManifest,
}

impl ManifestStack {
    pub fn open(path: &Path, expected_channels: Option<usize>) -> Result<Self> {
        let manifest = StackManifest::load(path)?;
        manifest.validate(expected_channels).map_err(|e| e.with_path(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &StackManifest {
        &self.manifest
    }

    /// Reads every layer into memory.
    pub fn materialize(&mut self) -> Result<FeatureStack> {
        let mut layers = Vec::with_capacity(self.manifest.layers.len());
        for i in 0..self.manifest.layers.len() {
            let data = self.load_layer(i)?.into_owned();
            layers.push(Layer {
                name: self.manifest.layers[i].name.clone(),
                data,
            });
        }
        FeatureStack::new(self.manifest.input_dims, layers, None)
    }
}

impl LayerSource for ManifestStack {
    fn input_dims(&self) -> (usize, usize) {
        self.manifest.input_dims
    }

    fn layer_specs(&self) -> &[LayerSpec] {
        &self.manifest.layers
    }

    fn load_layer(&mut self, index: usize) -> Result<Cow<'_, Tensor>> {
        let spec = &self.manifest.layers[index];
        let path = tensor_io::layer_path(&self.path, &spec.name);
        let t = tensor_io::load_tensor(&path)?;
        if t.dims() != [spec.channels, spec.height, spec.width] {
            return Err(Error::Stack(format!(
                "layer {} has dims {:?}, manifest says [{}, {}, {}]",
                spec.name,
                t.dims(),
                spec.channels,
                spec.height,
                spec.width
            ))
            .with_path(&path));
        }
        Ok(Cow::Owned(t))
    }
}

/// Maps an input-image point into continuous layer coordinates `(row, col)`.
pub fn map_point(
    x: f32,
    y: f32,
    layer_dims: (usize, usize),
    input_dims: (usize, usize),
) -> (f64, f64) {
    let (h, w) = layer_dims;
    let (ih, iw) = input_dims;
    let row = (f64::from(y) + 0.5) * h as f64 / ih as f64 - 0.5;
    let col = (f64::from(x) + 0.5) * w as f64 / iw as f64 - 0.5;
    (row.clamp(0.0, (h - 1) as f64), col.clamp(0.0, (w - 1) as f64))
}

/// The enclosing cell of a layer-space point: corner offsets (row-major
/// `[r0c0, r0c1, r1c0, r1c1]`) and fractional position inside it.
#[derive(Debug, Clone, Copy)]
struct Cell {
    idx: [usize; 4],
    fr: f32,
    fc: f32,
    mode: InterpMode,
}

impl Cell {
    fn new(row: f64, col: f64, width: usize, mode: InterpMode) -> Self {
        let r0 = row.floor();
        let c0 = col.floor();
        let (r1, c1) = (row.ceil() as usize, col.ceil() as usize);
        let (fr, fc) = ((row - r0) as f32, (col - c0) as f32);
        let (r0, c0) = (r0 as usize, c0 as usize);
        let idx = [
            r0 * width + c0,
            r0 * width + c1,
            r1 * width + c0,
            r1 * width + c1,
        ];
        Self { idx, fr, fc, mode }
    }

    /// Bilinear as nested lerps.
    #[inline]
    fn blend(&self, v: [f32; 4]) -> f32 {
        match self.mode {
            InterpMode::Bilinear => {
                let top = v[0] + self.fc * (v[1] - v[0]);
                let bottom = v[2] + self.fc * (v[3] - v[2]);
                top + self.fr * (bottom - top)
            }
            InterpMode::Uniform4 => 0.25 * (v[0] + v[1] + v[2] + v[3]),
        }
    }
}

pub type Descriptor = Vec<f32>;

/// Descriptor for a single point, reading the channel-major layers directly.
pub fn interpolate_descriptor(
    stack: &FeatureStack,
    p: &CandidatePoint,
    mode: InterpMode,
) -> Result<Descriptor> {
    let (ih, iw) = stack.input_dims;
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x < iw as f32 && p.y < ih as f32) {
        return Err(Error::InvalidArgument(format!(
            "point ({}, {}) outside {ih}x{iw} input",
            p.x, p.y
        )));
    }
    let mut out = Vec::with_capacity(stack.total_channels());
    for layer in &stack.layers {
        let (ch, h, w) = layer.data.dims3()?;
        let (row, col) = map_point(p.x, p.y, (h, w), stack.input_dims);
        let cell = Cell::new(row, col, w, mode);
        let data = layer.data.data();
        for c in 0..ch {
            let plane = &data[c * h * w..(c + 1) * h * w];
            out.push(cell.blend(cell.idx.map(|i| plane[i])));
        }
    }
    Ok(out)
}

/// Contiguous column block of one layer inside a descriptor row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerColumns {
    pub name: String,
    pub start: usize,
    pub channels: usize,
}

/// Row-major `[candidates, channels]` descriptors with the channel → layer partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    layers: Vec<LayerColumns>,
}

impl DescriptorMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, layers: Vec<LayerColumns>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} descriptor matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        let mut next = 0;
        for l in &layers {
            if l.start != next || l.channels == 0 {
                return Err(Error::Shape(format!(
                    "layer {} columns do not continue the partition at {next}",
                    l.name
                )));
            }
            next += l.channels;
        }
        if next != cols {
            return Err(Error::Shape(format!(
                "layer partition covers {next} of {cols} columns"
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            layers,
        })
    }

    /// A matrix whose columns all belong to one anonymous layer.
    pub fn single_layer(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let layers = vec![LayerColumns {
            name: "all".into(),
            start: 0,
            channels: cols,
        }];
        Self::new(rows, cols, data, layers)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn layers(&self) -> &[LayerColumns] {
        &self.layers
    }

    /// Layer index of every column.
    pub fn channel_layer_map(&self) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.cols);
        for (li, l) in self.layers.iter().enumerate() {
            map.extend(std::iter::repeat_n(li, l.channels));
        }
        map
    }

    /// `<path>` gets the `[rows, cols]` HFLT tensor, `<path>.layers` the `name channels` records.
    pub fn save(&self, path: &Path) -> Result<()> {
        let t = Tensor::new(vec![self.rows, self.cols], self.data.clone())?;
        tensor_io::save_tensor(&t, path)?;
        let mut text = String::new();
        for l in &self.layers {
            text.push_str(&format!("{} {}\n", l.name, l.channels));
        }
        let side = layers_sidecar(path);
        std::fs::write(&side, text).map_err(|e| Error::io_at(&side, e))
    }

    /// Loads a matrix; without a `.layers` sidecar all columns form one layer.
    pub fn load(path: &Path) -> Result<Self> {
        let t = tensor_io::load_tensor(path)?;
        let (rows, cols) = t.dims2().map_err(|e| e.with_path(path))?;
        let side = layers_sidecar(path);
        if !side.exists() {
            return Self::single_layer(rows, cols, t.into_data());
        }
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io_at(&side, e))?;
        let mut layers = Vec::new();
        let mut start = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(name), Some(ch), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Stack(format!("bad layer record {line:?}")).with_path(&side));
            };
            let channels: usize = ch
                .parse()
                .map_err(|_| Error::Stack(format!("bad channel count {ch:?}")).with_path(&side))?;
            layers.push(LayerColumns {
                name: name.to_string(),
                start,
                channels,
            });
            start += channels;
        }
        Self::new(rows, cols, t.into_data(), layers).map_err(|e| e.with_path(path))
    }
}

fn layers_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".layers");
    PathBuf::from(s)
}

/// Descriptors for every candidate, streaming the stack one layer at a time.
///
/// Within a layer, rows are filled by independent workers on the ambient rayon
/// pool; every value depends only on its own row, so results do not depend on
/// the worker count.
pub fn batch_descriptors<S: LayerSource + ?Sized>(
    stack: &mut S,
    cs: &CandidateSet,
    mode: InterpMode,
) -> Result<DescriptorMatrix> {
    let input_dims = stack.input_dims();
    if cs.image_dims() != input_dims {
        return Err(Error::Shape(format!(
            "candidates are in a {:?} frame but the stack input is {:?}",
            cs.image_dims(),
            input_dims
        )));
    }
    let specs: Vec<LayerSpec> = stack.layer_specs().to_vec();
    let cols: usize = specs.iter().map(|l| l.channels).sum();
    let rows = cs.len();
    let mut data = vec![0.0f32; rows * cols];
    let mut layers = Vec::with_capacity(specs.len());
    let mut start = 0;
    for (li, spec) in specs.iter().enumerate() {
        let tensor = stack.load_layer(li)?;
        let (ch, h, w) = tensor.dims3()?;
        if (ch, h, w) != (spec.channels, spec.height, spec.width) {
            return Err(Error::Stack(format!(
                "layer {} has dims {:?}, manifest says [{}, {}, {}]",
                spec.name,
                tensor.dims(),
                spec.channels,
                spec.height,
                spec.width
            )));
        }
        // Position-major copy so each corner read is one contiguous run of channels.
        let hwc = transpose_chw(tensor.data(), ch, h * w);
        drop(tensor);
        if cols > 0 {
            data.par_chunks_mut(cols)
                .zip(cs.points().par_iter())
                .for_each(|(out_row, p)| {
                    let (row, col) = map_point(p.x, p.y, (h, w), input_dims);
                    let cell = Cell::new(row, col, w, mode);
                    let corners = cell.idx.map(|i| &hwc[i * ch..(i + 1) * ch]);
                    let out = &mut out_row[start..start + ch];
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = cell.blend([corners[0][c], corners[1][c], corners[2][c], corners[3][c]]);
                    }
                });
        }
        layers.push(LayerColumns {
            name: spec.name.clone(),
            start,
            channels: ch,
        });
        start += ch;
    }
    DescriptorMatrix::new(rows, cols, data, layers)
}

fn transpose_chw(src: &[f32], channels: usize, positions: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    const BLOCK: usize = 64;
    for p0 in (0..positions).step_by(BLOCK) {
        let p1 = (p0 + BLOCK).min(positions);
        for c in 0..channels {
            let plane = &src[c * positions..];
            for p in p0..p1 {
                out[p * channels + c] = plane[p];
            }
        }
    }
    out
}
