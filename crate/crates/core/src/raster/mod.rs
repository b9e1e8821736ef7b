//! Georeferenced single- and multi-band rasters.
//!
//! Cells are stored band-sequential, row-major, as 32-bit floats. Row 0 is
//! the northern edge: `origin_y` is the top-left corner and map y decreases
//! with the row index.

mod io;
mod resample;
mod terrain;

pub use io::{decode as decode_raster, encode as encode_raster, read_raster, write_raster, RSTR_HEADER_LEN};
pub use resample::{bilinear_resample, pool_resample, PoolMode};
pub use terrain::{slope_aspect, SlopeAspect};

use crate::{Error, Result};

/// Default nodata sentinel for rasters produced by this crate.
pub const NODATA: f32 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, pixel_size: f64, origin_x: f64, origin_y: f64) -> Self {
        GridSpec {
            width,
            height,
            pixel_size,
            origin_x,
            origin_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid must have at least one cell"));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::invalid("pixel size must be positive"));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Map coordinates of the center of cell (`row`, `col`).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Grid covering the same origin with cells `factor` times larger.
    pub fn coarsened(&self, factor: usize) -> GridSpec {
        GridSpec {
            width: self.width / factor,
            height: self.height / factor,
            pixel_size: self.pixel_size * factor as f64,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    grid: GridSpec,
    bands: usize,
    nodata: f32,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(grid: GridSpec, bands: usize, nodata: f32, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if bands == 0 {
            return Err(Error::invalid("raster needs at least one band"));
        }
        if data.len() != grid.len() * bands {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                grid.width,
                grid.height,
                bands
            )));
        }
        let is_nd = |v: f32| v == nodata || (nodata.is_nan() && v.is_nan());
        if let Some(bad) = data.iter().find(|v| !v.is_finite() && !is_nd(**v)) {
            return Err(Error::invalid(format!("non-finite cell value {bad}")));
        }
        Ok(Raster {
            grid,
            bands,
            nodata,
            data,
        })
    }

    pub fn filled(grid: GridSpec, bands: usize, value: f32, nodata: f32) -> Result<Self> {
        Self::new(grid, bands, nodata, vec![value; grid.len() * bands])
    }

    /// Single-band raster from a row-major closure.
    pub fn from_fn(grid: GridSpec, nodata: f32, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for r in 0..grid.height {
            for c in 0..grid.width {
                data.push(f(r, c));
            }
        }
        Self::new(grid, 1, nodata, data)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn width(&self) -> usize {
        self.grid.width
    }
    pub fn height(&self) -> usize {
        self.grid.height
    }
    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn pixel_size(&self) -> f64 {
        self.grid.pixel_size
    }
    pub fn nodata(&self) -> f32 {
        self.nodata
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn is_nodata(&self, v: f32) -> bool {
        v == self.nodata || (self.nodata.is_nan() && v.is_nan())
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.grid.len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.grid.len();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.grid.height + row) * self.grid.width + col]
    }

    /// Cell value of band 0, `None` for nodata.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> Option<f32> {
        let v = self.get(0, row, col);
        (!self.is_nodata(v)).then_some(v)
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, v: f32) {
        let i = (band * self.grid.height + row) * self.grid.width + col;
        self.data[i] = v;
    }

    pub fn is_aligned(&self, other: &Raster) -> bool {
        self.grid == other.grid
    }

    pub fn ensure_aligned(&self, other: &Raster) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::Misaligned)
        }
    }

    pub fn ensure_single_band(&self, what: &str) -> Result<()> {
        if self.bands == 1 {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what} must be single-band, got {} bands", self.bands)))
        }
    }

    /// Band `b` as its own single-band raster.
    pub fn extract_band(&self, b: usize) -> Raster {
        Raster {
            grid: self.grid,
            bands: 1,
            nodata: self.nodata,
            data: self.band(b).to_vec(),
        }
    }

    /// Stacks aligned single-band rasters into one multi-band raster.
    pub fn stack(layers: &[&Raster]) -> Result<Raster> {
        let first = layers.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
        let mut data = Vec::with_capacity(first.grid.len() * layers.len());
        for l in layers {
            first.ensure_aligned(l)?;
            l.ensure_single_band("stack layer")?;
            data.extend(l.data.iter().map(|&v| if l.is_nodata(v) { first.nodata } else { v }));
        }
        Raster::new(first.grid, layers.len(), first.nodata, data)
    }

    /// Applies `f` to every valid cell; nodata stays nodata.
    pub fn map_valid(&self, mut f: impl FnMut(f32) -> f32) -> Raster {
        let nodata = self.nodata;
        let data = self
            .data
            .iter()
            .map(|&v| if self.is_nodata(v) { nodata } else { f(v) })
            .collect();
        Raster { data, ..self.clone() }
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|v| !self.is_nodata(**v)).count()
    }

    /// Mean over valid cells of band 0, `None` when no cell is valid.
    pub fn mean_valid(&self) -> Option<f64> {
        let (mut sum, mut n) = (0.0f64, 0usize);
        for &v in self.band(0) {
            if !self.is_nodata(v) {
                sum += v as f64;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Per-cell `a - b`; nodata where either operand is nodata.
pub fn raster_diff(a: &Raster, b: &Raster) -> Result<Raster> {
    a.ensure_single_band("difference operand")?;
    b.ensure_single_band("difference operand")?;
    a.ensure_aligned(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            if a.is_nodata(x) || b.is_nodata(y) {
                a.nodata
            } else {
                x - y
            }
        })
        .collect();
    Raster::new(a.grid, 1, a.nodata, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 1.0, 0.0, h as f64)
    }

    #[test]
    fn construction_checks_length_and_finiteness() {
        assert!(Raster::new(grid(2, 2), 1, NODATA, vec![0.0; 3]).is_err());
        assert!(Raster::new(grid(2, 2), 1, NODATA, vec![0.0, 1.0, f32::NAN, 2.0]).is_err());
        assert!(Raster::new(grid(2, 2), 1, NODATA, vec![0.0, 1.0, NODATA, 2.0]).is_ok());
        assert!(Raster::new(GridSpec::new(0, 2, 1.0, 0.0, 0.0), 1, NODATA, vec![]).is_err());
        assert!(Raster::new(GridSpec::new(1, 1, 0.0, 0.0, 0.0), 1, NODATA, vec![1.0]).is_err());
    }

    #[test]
    fn diff_of_identical_rasters_is_zero() {
        let a = Raster::new(grid(3, 1), 1, NODATA, vec![4.0, -2.5, 7.0]).unwrap();
        assert!(raster_diff(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diff_arithmetic_and_nodata() {
        let a = Raster::new(grid(2, 1), 1, NODATA, vec![12.0, 3.0]).unwrap();
        let b = Raster::new(grid(2, 1), 1, NODATA, vec![2.0, 8.0]).unwrap();
        assert_eq!(raster_diff(&a, &b).unwrap().data(), &[10.0, -5.0]);

        let a = Raster::new(grid(2, 1), 1, NODATA, vec![NODATA, 1.0]).unwrap();
        let b = Raster::new(grid(2, 1), 1, NODATA, vec![1.0, 1.0]).unwrap();
        assert_eq!(raster_diff(&a, &b).unwrap().data(), &[NODATA, 0.0]);
    }

    #[test]
    fn diff_rejects_misaligned() {
        let a = Raster::filled(grid(2, 2), 1, 0.0, NODATA).unwrap();
        let b = Raster::filled(GridSpec::new(2, 2, 1.0, 5.0, 2.0), 1, 0.0, NODATA).unwrap();
        assert!(matches!(raster_diff(&a, &b), Err(Error::Misaligned)));
    }
}
