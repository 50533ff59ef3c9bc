//! Binary tensor (`HFLT`) and raster (`P5` PGM) exchange formats, plus the
//! feature-stack manifest.
//!
//! HFLT layout, all integers little-endian `u32`:
//!
//! ```text
//! "HFLT" | version = 1 | ndim | dims[ndim] | dtype = 1 (f32 LE) | data
//! ```
//!
//! The stream is `16 + 4·ndim + 4·product(dims)` bytes long.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HFLT";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u32 = 1;

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor must have at least one dimension".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {expected} scalars but {} were given",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(height, width)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            &[h, w] => Ok((h, w)),
            other => Err(Error::Shape(format!("expected a 2-D tensor, got dims {other:?}"))),
        }
    }

    /// `(channels, height, width)` of a 3-D tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::Shape(format!("expected a 3-D tensor, got dims {other:?}"))),
        }
    }
}

/// Byte-counting wrapper so write failures can report their offset.
struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Write {
            offset: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

pub fn encoded_len(t: &Tensor) -> usize {
    16 + 4 * t.ndim() + 4 * t.len()
}

pub fn write_tensor<W: Write>(t: &Tensor, sink: W) -> Result<()> {
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    w.put(MAGIC)?;
    w.put(&FORMAT_VERSION.to_le_bytes())?;
    w.put(&dim_u32(t.ndim())?.to_le_bytes())?;
    for &d in t.dims() {
        w.put(&dim_u32(d)?.to_le_bytes())?;
    }
    w.put(&DTYPE_F32_LE.to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in t.data().chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.put(&buf)?;
    }
    w.inner.flush().map_err(|source| Error::Write {
        offset: w.written,
        source,
    })
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(what)
        } else {
            Error::Read(e)
        }
    })
}

pub fn read_tensor<R: Read>(mut source: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut source, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u32(&mut source, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let ndim = read_u32(&mut source, "ndim")? as usize;
    if ndim == 0 {
        return Err(Error::Shape("HFLT header declares ndim = 0".into()));
    }
    let mut dims = Vec::with_capacity(ndim.min(16));
    for _ in 0..ndim {
        dims.push(read_u32(&mut source, "dims")? as usize);
    }
    let dtype = read_u32(&mut source, "dtype")?;
    if dtype != DTYPE_F32_LE {
        return Err(Error::UnknownDtype(dtype));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?;
    let mut bytes = Vec::new();
    source
        .take(count as u64 * 4)
        .read_to_end(&mut bytes)
        .map_err(Error::Read)?;
    if bytes.len() != count * 4 {
        return Err(Error::Truncated("payload"));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io_at(path, e))?;
    write_tensor(t, BufWriter::new(f)).map_err(|e| e.with_path(path))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::io_at(path, e))?;
    read_tensor(BufReader::new(f)).map_err(|e| e.with_path(path))
}

fn pgm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b).map_err(Error::Read)? == 0 {
            if tok.is_empty() {
                return Err(Error::Truncated("PGM header"));
            }
            break;
        }
        let c = b[0];
        if c == b'#' && tok.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line).map_err(Error::Read)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    String::from_utf8(tok).map_err(|_| Error::Pgm("non-ASCII header token".into()))
}

fn pgm_number<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let tok = pgm_token(r)?;
    tok.parse()
        .map_err(|_| Error::Pgm(format!("invalid {what} {tok:?}")))
}

/// Reads a binary (`P5`) PGM into a 2-D tensor with values `p / maxval`.
pub fn read_raster_pgm<R: Read>(source: R) -> Result<Tensor> {
    let mut r = BufReader::new(source);
    let magic = pgm_token(&mut r)?;
    if magic != "P5" {
        return Err(Error::Pgm(format!("expected P5 header, found {magic:?}")));
    }
    let width = pgm_number(&mut r, "width")?;
    let height = pgm_number(&mut r, "height")?;
    let maxval = pgm_number(&mut r, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} outside 1..=255")));
    }
    let mut px = vec![0u8; width * height];
    read_exact_or_truncated(&mut r, &mut px, "PGM pixels")?;
    let scale = maxval as f32;
    Tensor::new(
        vec![height, width],
        px.into_iter().map(|p| f32::from(p) / scale).collect(),
    )
}

/// Writes a 2-D tensor with values in `[0, 1]` as `P5`, quantizing `round(v·maxval)`.
pub fn write_raster_pgm<W: Write>(t: &Tensor, maxval: u8, sink: W) -> Result<()> {
    if maxval == 0 {
        return Err(Error::Pgm("maxval must be positive".into()));
    }
    let (h, w) = t.dims2()?;
    let mut out = CountingWriter {
        inner: sink,
        written: 0,
    };
    out.put(format!("P5\n{w} {h}\n{maxval}\n").as_bytes())?;
    let m = f32::from(maxval);
    let px: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            let v = if v.is_nan() { 0.0 } else { v };
            (v * m).round().clamp(0.0, m) as u8
        })
        .collect();
    out.put(&px)?;
    out.inner.flush().map_err(|source| Error::Write {
        offset: out.written,
        source,
    })
}

pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::io_at(path, e))?;
    read_raster_pgm(f).map_err(|e| e.with_path(path))
}

pub fn save_pgm(t: &Tensor, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io_at(path, e))?;
    write_raster_pgm(t, 255, BufWriter::new(f)).map_err(|e| e.with_path(path))
}

/// Loads a raster from `.pgm` or `.hflt`, chosen by extension.
pub fn load_raster(path: &Path) -> Result<Tensor> {
    match extension(path).as_deref() {
        Some("pgm") => load_pgm(path),
        _ => load_tensor(path),
    }
}

pub fn save_raster(t: &Tensor, path: &Path) -> Result<()> {
    match extension(path).as_deref() {
        Some("pgm") => save_pgm(t, path),
        _ => save_tensor(t, path),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// One record of a feature-stack manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Parsed stack manifest: input geometry plus per-layer records in network order.
///
/// Text form, one record per line (`#` starts a comment):
///
/// ```text
/// input 224 224
/// conv1_1 64 224 224
/// conv1_2 64 224 224
/// ```
///
/// Each layer's data lives in `<name>.hflt` next to the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackManifest {
    pub input_dims: (usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl StackManifest {
    pub fn total_channels(&self) -> usize {
        self.layers.iter().map(|l| l.channels).sum()
    }

    pub fn validate(&self, expected_channels: Option<usize>) -> Result<()> {
        let (ih, iw) = self.input_dims;
        if ih == 0 || iw == 0 {
            return Err(Error::Stack("input dims must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Stack("manifest lists no layers".into()));
        }
        for l in &self.layers {
            if l.channels == 0 || l.height == 0 || l.width == 0 {
                return Err(Error::Stack(format!("layer {} has a zero dimension", l.name)));
            }
            if l.height > ih || l.width > iw {
                return Err(Error::Stack(format!(
                    "layer {} is {}x{}, larger than input {}x{}",
                    l.name, l.height, l.width, ih, iw
                )));
            }
        }
        if let Some(expected) = expected_channels {
            let total = self.total_channels();
            if total != expected {
                return Err(Error::Stack(format!(
                    "stack has {total} channels, expected {expected}"
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input_dims = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| {
                    Error::Stack(format!("manifest line {}: bad number {s:?}", lineno + 1))
                })
            };
            match fields.as_slice() {
                ["input", h, w] => {
                    if input_dims.is_some() {
                        return Err(Error::Stack("duplicate input record".into()));
                    }
                    input_dims = Some((num(h)?, num(w)?));
                }
                [name, c, h, w] => layers.push(LayerSpec {
                    name: (*name).to_string(),
                    channels: num(c)?,
                    height: num(h)?,
                    width: num(w)?,
                }),
                _ => {
                    return Err(Error::Stack(format!(
                        "manifest line {}: expected `name channels height width`",
                        lineno + 1
                    )))
                }
            }
        }
        let input_dims =
            input_dims.ok_or_else(|| Error::Stack("manifest has no `input H W` record".into()))?;
        Ok(Self { input_dims, layers })
    }

    pub fn render(&self) -> String {
        let mut s = format!("input {} {}\n", self.input_dims.0, self.input_dims.1);
        for l in &self.layers {
            s.push_str(&format!("{} {} {} {}\n", l.name, l.channels, l.height, l.width));
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::parse(&text).map_err(|e| e.with_path(path))
    }
}

/// Path of a layer's HFLT file relative to its manifest.
pub fn layer_path(manifest_path: &Path, layer: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(format!("{layer}.hflt"))
}
