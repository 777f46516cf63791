//! Dense channel-last feature maps.
//!
//! Every activation is stored as `batch × height × width × depth × channels`
//! in row-major order. Planar (2D) maps carry `depth == 1` and are flagged as
//! non-volumetric so that shape reports print them the way a 2D network
//! would (`n×h×w×c`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub c: usize,
    pub volumetric: bool,
}

impl Shape {
    pub const fn planar(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape {
            n,
            h,
            w,
            d: 1,
            c,
            volumetric: false,
        }
    }

    pub const fn volumetric(n: usize, h: usize, w: usize, d: usize, c: usize) -> Self {
        Shape {
            n,
            h,
            w,
            d,
            c,
            volumetric: true,
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.d * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions per batch item.
    pub fn spatial(&self) -> usize {
        self.h * self.w * self.d
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    /// Dimensions as a 2D network reports them (`n,h,w,c`) or as a 3D one
    /// (`n,h,w,d,c`).
    pub fn dims(&self) -> Vec<usize> {
        if self.volumetric {
            vec![self.n, self.h, self.w, self.d, self.c]
        } else {
            vec![self.n, self.h, self.w, self.c]
        }
    }

    /// Same as [`Shape::dims`] without the batch axis.
    pub fn feature_dims(&self) -> Vec<usize> {
        self.dims()[1..].to_vec()
    }

    /// Shape-only equality that ignores the planar/volumetric flag.
    pub fn same_extent(&self, other: &Shape) -> bool {
        self.n == other.n
            && self.h == other.h
            && self.w == other.w
            && self.d == other.d
            && self.c == other.c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims = self.dims();
        let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("×"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch item `i` as its own tensor.
    pub fn item(&self, i: usize) -> Tensor {
        let per = self.shape.len() / self.shape.n.max(1);
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
