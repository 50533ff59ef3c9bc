//! Row-major 2-D grids shared by every raster-valued stage.

use crate::error::{Error, Result};
use crate::tensor_io::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type Raster = Grid<f32>;
pub type Mask = Grid<bool>;
pub type LabelRaster = Grid<u32>;

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::Shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.width + c] = v;
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.width + c
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl Raster {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = t.dims2()?;
        Self::new(h, w, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], self.data.clone())
            .expect("grid dims are consistent")
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0f32, f32::max)
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixels set, as `(row, col)` in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / w, i % w))
            .collect()
    }

    pub fn to_raster(&self) -> Raster {
        self.map(|b| if b { 1.0 } else { 0.0 })
    }
}

impl LabelRaster {
    /// Reads integer-valued `f32` labels; non-integral or negative values are rejected.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = t.dims2()?;
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                    Ok(v as u32)
                } else {
                    Err(Error::InvalidArgument(format!("label value {v} is not a class index")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("grid dims are consistent")
    }
}
