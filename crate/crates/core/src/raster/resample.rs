use super::{GridSpec, Raster};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolMode::Mean),
            "max" => Ok(PoolMode::Max),
            _ => Err(Error::invalid(format!("unknown pool mode {s:?}"))),
        }
    }
}

/// Aggregates `factor`×`factor` windows into single cells.
///
/// Statistics run over the valid cells of each window; a window with no
/// valid cell becomes nodata. Trailing rows/columns that do not fill a whole
/// window are dropped.
pub fn pool_resample(src: &Raster, factor: usize, mode: PoolMode) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::invalid("pooling factor must be positive"));
    }
    src.ensure_single_band("pooling input")?;
    let (w, h) = (src.width(), src.height());
    if w < factor || h < factor {
        return Err(Error::invalid(format!("{w}x{h} raster is smaller than one {factor}x{factor} window")));
    }
    if w % factor != 0 || h % factor != 0 {
        log::warn!(
            "{w}x{h} raster not divisible by {factor}; dropping {} trailing columns and {} rows",
            w % factor,
            h % factor
        );
    }
    let grid = src.grid().coarsened(factor);
    let nodata = src.nodata();
    let mut out = Vec::with_capacity(grid.len());
    for or in 0..grid.height {
        for oc in 0..grid.width {
            let mut sum = 0.0f64;
            let mut max = f32::NEG_INFINITY;
            let mut n = 0usize;
            for r in or * factor..(or + 1) * factor {
                let row = &src.band(0)[r * w + oc * factor..r * w + (oc + 1) * factor];
                for &v in row {
                    if src.is_nodata(v) {
                        continue;
                    }
                    sum += v as f64;
                    max = max.max(v);
                    n += 1;
                }
            }
            out.push(match (n, mode) {
                (0, _) => nodata,
                (_, PoolMode::Mean) => (sum / n as f64) as f32,
                (_, PoolMode::Max) => max,
            });
        }
    }
    Raster::new(grid, 1, nodata, out)
}

/// Bilinear interpolation of `src` at the cell centers of `target`.
///
/// Sample positions within half a cell of the source edge clamp to the edge
/// cells; positions outside the source extent, and positions whose
/// interpolation neighborhood touches nodata, become nodata.
pub fn bilinear_resample(src: &Raster, target: &GridSpec) -> Result<Raster> {
    src.ensure_single_band("resampling input")?;
    if target.width == 0 || target.height == 0 {
        return Err(Error::invalid("target grid has no cells"));
    }
    target.validate()?;
    let sg = src.grid();
    let nodata = src.nodata();
    let (sw, sh) = (sg.width as f64, sg.height as f64);
    let mut out = Vec::with_capacity(target.len());
    for r in 0..target.height {
        for c in 0..target.width {
            let (x, y) = target.cell_center(r, c);
            // continuous index space where integer values are cell centers
            let u = snap((x - sg.origin_x) / sg.pixel_size - 0.5);
            let v = snap((sg.origin_y - y) / sg.pixel_size - 0.5);
            if u < -0.5 || v < -0.5 || u > sw - 0.5 || v > sh - 0.5 {
                out.push(nodata);
                continue;
            }
            let u = u.clamp(0.0, sw - 1.0);
            let v = v.clamp(0.0, sh - 1.0);
            let (c0, r0) = (u.floor() as usize, v.floor() as usize);
            let (fx, fy) = (u - c0 as f64, v - r0 as f64);
            let c1 = if fx > 0.0 { c0 + 1 } else { c0 };
            let r1 = if fy > 0.0 { r0 + 1 } else { r0 };
            let corners = [
                src.value(r0, c0),
                src.value(r0, c1),
                src.value(r1, c0),
                src.value(r1, c1),
            ];
            let value = match corners {
                [Some(a), Some(b), Some(cc), Some(d)] => {
                    let top = a as f64 * (1.0 - fx) + b as f64 * fx;
                    let bottom = cc as f64 * (1.0 - fx) + d as f64 * fx;
                    (top * (1.0 - fy) + bottom * fy) as f32
                }
                _ => nodata,
            };
            out.push(value);
        }
    }
    Raster::new(*target, 1, nodata, out)
}

fn snap(t: f64) -> f64 {
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r
    } else {
        t
    }
}
