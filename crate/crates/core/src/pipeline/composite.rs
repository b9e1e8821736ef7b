use std::path::Path;

use crate::raster::{write_raster, Raster, NODATA};
use crate::{Error, Result};

/// Per-year composite of masked scene predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualMap {
    pub year: u16,
    pub mean_height: Raster,
    pub max_height: Raster,
    /// Number of scenes contributing to each cell.
    pub valid_count: Raster,
}

impl AnnualMap {
    /// Writes `mean_YYYY.rstr`, `max_YYYY.rstr` and `count_YYYY.rstr`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let y = self.year;
        write_raster(&self.mean_height, dir.join(format!("mean_{y}.rstr")))?;
        write_raster(&self.max_height, dir.join(format!("max_{y}.rstr")))?;
        write_raster(&self.valid_count, dir.join(format!("count_{y}.rstr")))
    }
}

/// Median of `v`; the mean of the two central values for even counts.
pub fn median(v: &mut [f32]) -> Option<f32> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable_by(f32::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0) as f32
    })
}

/// Per-cell median of the valid values across aligned single-band
/// predictions, and the count of those values.
pub fn median_composite(preds: &[&Raster]) -> Result<(Raster, Raster)> {
    let first = preds.first().ok_or_else(|| Error::invalid("no predictions to composite"))?;
    for p in preds {
        p.ensure_single_band("prediction")?;
        first.ensure_aligned(p)?;
    }
    let n = first.grid().len();
    let mut med = Vec::with_capacity(n);
    let mut count = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(preds.len());
    for i in 0..n {
        buf.clear();
        buf.extend(preds.iter().map(|p| p.data()[i]).zip(preds).filter(|(v, p)| !p.is_nodata(*v)).map(|(v, _)| v));
        count.push(buf.len() as f32);
        med.push(median(&mut buf).unwrap_or(NODATA));
    }
    Ok((
        Raster::new(*first.grid(), 1, NODATA, med)?,
        Raster::new(*first.grid(), 1, NODATA, count)?,
    ))
}

/// Annual map from the masked mean and max predictions of one year.
pub fn annual_composite(means: &[&Raster], maxes: &[&Raster], year: u16) -> Result<AnnualMap> {
    if means.len() != maxes.len() {
        return Err(Error::invalid("mean and max prediction lists differ in length"));
    }
    let (mean_height, valid_count) = median_composite(means)?;
    let (max_height, _) = median_composite(maxes)?;
    mean_height.ensure_aligned(&max_height)?;
    Ok(AnnualMap {
        year,
        mean_height,
        max_height,
        valid_count,
    })
}
