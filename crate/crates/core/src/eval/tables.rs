use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::masked_pairs;
use crate::raster::Raster;
use crate::{fmt_sig6, Result};

/// Residual statistics of one reference-height bin `[lower, upper)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean of `pred - ref`; `None` for an empty bin.
    pub mean_residual: Option<f64>,
    pub mean_abs_residual: Option<f64>,
}

/// Residuals grouped by reference height in bins of `bin_width` from 0 up
/// to the highest reference value. Negative references fall in no bin.
pub fn residual_bins(pred: &Raster, reference: &Raster, mask: &Raster, bin_width: f64) -> Result<Vec<ResidualBin>> {
    if !(bin_width > 0.0) {
        return Err(crate::Error::invalid("bin width must be positive"));
    }
    let pairs = masked_pairs(pred, reference, mask)?;
    let top = pairs.iter().map(|p| p.1).fold(0.0f64, f64::max);
    let nbins = (top / bin_width).floor() as usize + 1;
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); nbins];
    for (p, r) in pairs {
        if r < 0.0 {
            continue;
        }
        let b = ((r / bin_width).floor() as usize).min(nbins - 1);
        acc[b].0 += 1;
        acc[b].1 += p - r;
        acc[b].2 += (p - r).abs();
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, (n, s, a))| ResidualBin {
            lower: i as f64 * bin_width,
            upper: (i + 1) as f64 * bin_width,
            count: n,
            mean_residual: (n > 0).then(|| s / n as f64),
            mean_abs_residual: (n > 0).then(|| a / n as f64),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

pub fn residual_bins_csv(bins: &[ResidualBin]) -> String {
    let mut s = String::from("bin_lower,bin_upper,count,mean_residual,mean_abs_residual\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_sig6(b.lower),
            fmt_sig6(b.upper),
            b.count,
            opt(b.mean_residual),
            opt(b.mean_abs_residual)
        );
    }
    s
}

/// Two-dimensional histogram of `(ref, pred)` pairs with the least-squares
/// line of reference on prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityScatter {
    pub cell: f64,
    /// `(ref cell index, pred cell index) -> count`; cell `i` covers
    /// `[i·cell, (i+1)·cell)`.
    pub counts: BTreeMap<(i64, i64), usize>,
    pub fit_slope: f64,
    pub fit_intercept: f64,
}

pub fn density_scatter(pred: &Raster, reference: &Raster, mask: &Raster, cell: f64) -> Result<DensityScatter> {
    if !(cell > 0.0) {
        return Err(crate::Error::invalid("scatter cell size must be positive"));
    }
    let pairs = masked_pairs(pred, reference, mask)?;
    let mut counts = BTreeMap::new();
    for &(p, r) in &pairs {
        *counts.entry(((r / cell).floor() as i64, (p / cell).floor() as i64)).or_insert(0) += 1;
    }
    let (fit_slope, fit_intercept) = match super::metrics_from_pairs(&pairs) {
        Ok(m) => (m.fit_slope, m.fit_intercept),
        Err(_) => (f64::NAN, f64::NAN),
    };
    Ok(DensityScatter {
        cell,
        counts,
        fit_slope,
        fit_intercept,
    })
}

pub fn density_scatter_csv(d: &DensityScatter) -> String {
    let mut s = format!(
        "# fit ref = slope * pred + intercept; slope={}, intercept={}\nref_lower,pred_lower,count\n",
        fmt_sig6(d.fit_slope),
        fmt_sig6(d.fit_intercept)
    );
    for (&(r, p), &n) in &d.counts {
        let _ = writeln!(s, "{},{},{}", fmt_sig6(r as f64 * d.cell), fmt_sig6(p as f64 * d.cell), n);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GridSpec, NODATA};

    fn row(v: &[f32]) -> Raster {
        Raster::new(GridSpec::new(v.len(), 1, 10.0, 0.0, 10.0), 1, NODATA, v.to_vec()).unwrap()
    }

    #[test]
    fn single_pixel_bin() {
        let b = residual_bins(&row(&[10.0]), &row(&[12.0]), &row(&[1.0]), 5.0).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!((b[2].lower, b[2].upper, b[2].count, b[2].mean_residual), (10.0, 15.0, 1, Some(-2.0)));
        assert_eq!((b[0].count, b[0].mean_residual), (0, None));
        assert!(residual_bins_csv(&b).contains("\n0,5,0,,\n"));
    }

    #[test]
    fn perfect_prediction_bins() {
        let v = [1.0, 7.0, 13.0, 22.0, 22.5];
        let b = residual_bins(&row(&v), &row(&v), &row(&[1.0; 5]), 5.0).unwrap();
        assert!(b.iter().all(|x| x.mean_residual.unwrap_or(0.0) == 0.0));
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 5);
    }

    #[test]
    fn scatter_examples() {
        let d = density_scatter(&row(&[2.0, 2.0]), &row(&[1.0, 1.0]), &row(&[1.0, 1.0]), 1.0).unwrap();
        assert_eq!(d.counts.len(), 1);
        assert_eq!(d.counts[&(1, 2)], 2);

        let refs = [1.0f32, 2.0, 5.0, 9.0];
        let preds: Vec<f32> = refs.iter().map(|r| 2.0 * r).collect();
        let d = density_scatter(&row(&preds), &row(&refs), &row(&[1.0; 4]), 1.0).unwrap();
        assert!((d.fit_slope - 0.5).abs() < 1e-12 && d.fit_intercept.abs() < 1e-12);

        let d = density_scatter(&row(&refs), &row(&refs), &row(&[1.0; 4]), 1.0).unwrap();
        assert!(d.counts.keys().all(|(r, p)| r == p));
        assert!(density_scatter_csv(&d).contains("\nref_lower,pred_lower,count\n1,1,1\n"));
    }
}
