use serde::{Deserialize, Serialize};

use super::volume::Grid2;
use crate::error::{Error, Result};

/// Square crop given by its diagonal corners; rows index the first slice
/// axis, columns the second. Ends are exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropWindow {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Default for CropWindow {
    fn default() -> Self {
        CropWindow {
            row0: 10,
            col0: 40,
            row1: 190,
            col1: 220,
        }
    }
}

impl CropWindow {
    pub fn rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn cols(&self) -> usize {
        self.col1 - self.col0
    }

    /// Smallest slice that holds the window with its far corner inclusive.
    pub fn min_slice(&self) -> (usize, usize) {
        (self.row1 + 1, self.col1 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row1 <= self.row0 || self.col1 <= self.col0 {
            return Err(Error::InvalidArgument(format!("empty crop window {self:?}")));
        }
        Ok(())
    }
}

fn default_size() -> usize {
    192
}

/// Crop window and output resolution of the slice preprocessing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    #[serde(default)]
    pub crop: CropWindow,
    #[serde(default = "default_size")]
    pub size: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            crop: CropWindow::default(),
            size: default_size(),
        }
    }
}

impl Preprocess {
    /// Same crop at a reduced output resolution.
    pub fn desk(size: usize) -> Self {
        Preprocess {
            size,
            ..Preprocess::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        if self.size == 0 {
            return Err(Error::InvalidArgument("output size must be positive".into()));
        }
        Ok(())
    }

    pub fn check_slice(&self, rows: usize, cols: usize) -> Result<()> {
        let (min_rows, min_cols) = self.crop.min_slice();
        if rows < min_rows || cols < min_cols {
            return Err(Error::SliceTooSmall {
                rows,
                cols,
                min_rows,
                min_cols,
            });
        }
        Ok(())
    }

    pub fn crop(&self, g: &Grid2) -> Result<Grid2> {
        self.check_slice(g.rows, g.cols)?;
        let c = self.crop;
        let mut data = Vec::with_capacity(c.rows() * c.cols());
        for r in c.row0..c.row1 {
            data.extend_from_slice(&g.data[r * g.cols + c.col0..r * g.cols + c.col1]);
        }
        Grid2::new(c.rows(), c.cols(), data)
    }

    /// Crop window resized to `size × size`.
    pub fn apply(&self, g: &Grid2) -> Result<Grid2> {
        Ok(resize_bilinear(&self.crop(g)?, self.size, self.size))
    }

    /// Crop and resize a binary mask, thresholding the interpolant at 0.5.
    pub fn apply_mask(&self, g: &Grid2) -> Result<Grid2> {
        let mut out = self.apply(g)?;
        out.data.iter_mut().for_each(|v| *v = f32::from(u8::from(*v >= 0.5)));
        Ok(out)
    }

    /// Maps a `size × size` probability map back onto a `rows × cols` slice:
    /// resized to the crop window, zero outside it.
    pub fn restore(&self, g: &Grid2, rows: usize, cols: usize) -> Result<Grid2> {
        self.check_slice(rows, cols)?;
        let c = self.crop;
        let win = resize_bilinear(g, c.rows(), c.cols());
        let mut out = Grid2::filled(rows, cols, 0.0);
        for r in 0..c.rows() {
            let dst = (r + c.row0) * cols + c.col0;
            out.data[dst..dst + c.cols()].copy_from_slice(&win.data[r * c.cols()..(r + 1) * c.cols()]);
        }
        Ok(out)
    }
}

/// Source coordinate of output index `i` under half-pixel alignment, clamped
/// to the valid range; returns the lower neighbour and the blend weight.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f32) {
    let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, (s - lo as f64) as f32)
}

pub fn resize_bilinear(g: &Grid2, rows: usize, cols: usize) -> Grid2 {
    if g.rows == rows && g.cols == cols {
        return g.clone();
    }
    let cx: Vec<(usize, usize, f32)> = (0..cols).map(|c| source_coord(c, g.cols, cols)).collect();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (r0, r1, fr) = source_coord(r, g.rows, rows);
        for &(c0, c1, fc) in &cx {
            let top = g.get(r0, c0) * (1.0 - fc) + g.get(r0, c1) * fc;
            let bottom = g.get(r1, c0) * (1.0 - fc) + g.get(r1, c1) * fc;
            data.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Grid2 { rows, cols, data }
}
