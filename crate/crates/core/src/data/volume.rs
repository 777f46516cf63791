use crate::error::{Error, Result};

/// Scalar grid in file axis order `(axis0, axis1, depth)`, stored row-major
/// with depth fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("empty dimensions {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidVolume(format!(
                "{} values for dimensions {dims:?}",
                data.len()
            )));
        }
        Ok(Volume { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Volume {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn depth(&self) -> usize {
        self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Transverse slice `z` as an `axis0 × axis1` grid.
    pub fn slice(&self, z: usize) -> Grid2 {
        let [r, c, _] = self.dims;
        let mut data = Vec::with_capacity(r * c);
        for x in 0..r {
            for y in 0..c {
                data.push(self.get(x, y, z));
            }
        }
        Grid2 { rows: r, cols: c, data }
    }

    pub fn set_slice(&mut self, z: usize, g: &Grid2) -> Result<()> {
        if g.rows != self.dims[0] || g.cols != self.dims[1] || z >= self.dims[2] {
            return Err(Error::ShapeMismatch(format!(
                "slice {}x{} at {z} into volume {:?}",
                g.rows, g.cols, self.dims
            )));
        }
        for x in 0..g.rows {
            for y in 0..g.cols {
                self.set(x, y, z, g.get(x, y));
            }
        }
        Ok(())
    }
}

/// Row-major 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Grid2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(Grid2 { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, v: f32) -> Self {
        Grid2 {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

/// One subject: image, binary lesion mask and voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeCase {
    pub case_id: String,
    pub image: Volume,
    pub label: Volume,
    pub spacing: [f64; 3],
}

impl VolumeCase {
    pub fn new(case_id: impl Into<String>, image: Volume, label: Volume, spacing: [f64; 3]) -> Result<Self> {
        let case_id = case_id.into();
        if image.dims() != label.dims() {
            return Err(Error::ShapeMismatch(format!(
                "case {case_id}: image {:?} vs label {:?}",
                image.dims(),
                label.dims()
            )));
        }
        if let Some(v) = label.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::NonBinary {
                what: format!("label of case {case_id}"),
                value: *v as f64,
            });
        }
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidVolume(format!("case {case_id}: spacing {spacing:?}")));
        }
        Ok(VolumeCase {
            case_id,
            image,
            label,
            spacing,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.image.dims()
    }
}
