use crate::raster::Raster;
use crate::{Error, Result};

/// Cap above which reference heights are treated as outliers.
pub const OUTLIER_CAP: f32 = 50.0;

/// Error statistics of predictions against reference heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub n: usize,
    pub mbe: f64,
    pub mae: f64,
    pub rmse: f64,
    /// MAE relative to the mean predicted height.
    pub maer: f64,
    /// Squared correlation of the least-squares fit of reference on prediction.
    pub r2: f64,
    pub fit_slope: f64,
    pub fit_intercept: f64,
    /// Mean predicted height.
    pub mean_vh: f64,
}

/// Metrics over `(prediction, reference)` pairs.
pub fn metrics_from_pairs(pairs: &[(f64, f64)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyStratum);
    }
    let n = pairs.len() as f64;
    let (mut sp, mut sr, mut se, mut sa, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, r) in pairs {
        let e = p - r;
        sp += p;
        sr += r;
        se += e;
        sa += e.abs();
        sq += e * e;
    }
    let (mp, mr) = (sp / n, sr / n);
    let (mut vpp, mut vrr, mut vpr) = (0.0, 0.0, 0.0);
    for &(p, r) in pairs {
        let (dp, dr) = (p - mp, r - mr);
        vpp += dp * dp;
        vrr += dr * dr;
        vpr += dp * dr;
    }
    let (fit_slope, fit_intercept) = if vpp > 0.0 {
        let b = vpr / vpp;
        (b, mr - b * mp)
    } else {
        (f64::NAN, f64::NAN)
    };
    let r2 = if vpp > 0.0 && vrr > 0.0 { vpr * vpr / (vpp * vrr) } else { f64::NAN };
    let mae = sa / n;
    Ok(MetricReport {
        n: pairs.len(),
        mbe: se / n,
        mae,
        rmse: (sq / n).sqrt(),
        maer: if mp > 0.0 { mae / mp } else { f64::NAN },
        r2,
        fit_slope,
        fit_intercept,
        mean_vh: mp,
    })
}

/// Pairs of valid prediction and reference cells selected by `mask`
/// (value 1), in row-major order.
pub fn masked_pairs(pred: &Raster, reference: &Raster, mask: &Raster) -> Result<Vec<(f64, f64)>> {
    for r in [pred, reference, mask] {
        r.ensure_single_band("evaluation input")?;
    }
    pred.ensure_aligned(reference)?;
    pred.ensure_aligned(mask)?;
    Ok(pred
        .data()
        .iter()
        .zip(reference.data())
        .zip(mask.data())
        .filter(|((&p, &r), &m)| is_selected(mask, m) && !pred.is_nodata(p) && !reference.is_nodata(r))
        .map(|((&p, &r), _)| (p as f64, r as f64))
        .collect())
}

pub(crate) fn is_selected(mask: &Raster, m: f32) -> bool {
    !mask.is_nodata(m) && m > 0.5
}

/// Metrics over the cells selected by `mask`.
pub fn compute_metrics(pred: &Raster, reference: &Raster, mask: &Raster) -> Result<MetricReport> {
    metrics_from_pairs(&masked_pairs(pred, reference, mask)?)
}

/// 1 where the cell is forest and the reference is valid and at most
/// `cap`, 0 elsewhere.
pub fn build_eval_mask(reference: &Raster, forest: &Raster, cap: f32) -> Result<Raster> {
    reference.ensure_single_band("reference")?;
    forest.ensure_single_band("forest mask")?;
    reference.ensure_aligned(forest)?;
    let data = reference
        .data()
        .iter()
        .zip(forest.data())
        .map(|(&r, &f)| (is_selected(forest, f) && !reference.is_nodata(r) && r <= cap) as u8 as f32)
        .collect();
    Raster::new(*reference.grid(), 1, crate::raster::NODATA, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GridSpec, NODATA};
    use proptest::prelude::*;

    fn row(v: &[f32]) -> Raster {
        Raster::new(GridSpec::new(v.len(), 1, 10.0, 0.0, 10.0), 1, NODATA, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let r = metrics_from_pairs(&[(1.0, 1.0), (5.0, 5.0), (9.0, 9.0)]).unwrap();
        assert_eq!((r.mbe, r.mae, r.rmse), (0.0, 0.0, 0.0));
        assert!((r.r2 - 1.0).abs() < 1e-15);
        assert!((r.fit_slope - 1.0).abs() < 1e-15 && r.fit_intercept.abs() < 1e-12);
    }

    #[test]
    fn offset_by_one() {
        let r = metrics_from_pairs(&[(2.0, 1.0), (4.0, 3.0)]).unwrap();
        assert_eq!((r.mbe, r.mae, r.rmse), (1.0, 1.0, 1.0));
        assert_eq!(r.mean_vh, 3.0);
        assert!((r.maer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn relative_mae_from_table_values() {
        // a stratum with MAE 4.29 m and mean predicted height 18.30 m
        let pairs = [(18.30 + 4.29, 18.30), (18.30 - 4.29, 18.30)];
        let r = metrics_from_pairs(&pairs).unwrap();
        assert!((r.mae - 4.29).abs() < 1e-12 && (r.mean_vh - 18.30).abs() < 1e-12);
        assert!((r.maer - 0.23).abs() <= 0.005, "{}", r.maer);
    }

    #[test]
    fn empty_selection_is_an_error() {
        assert!(matches!(metrics_from_pairs(&[]), Err(Error::EmptyStratum)));
        let z = row(&[0.0, 0.0]);
        assert!(matches!(compute_metrics(&row(&[1.0, 2.0]), &row(&[1.0, 2.0]), &z), Err(Error::EmptyStratum)));
    }

    #[test]
    fn mask_rules() {
        let reference = row(&[51.0, 10.0, 49.9, 50.0, NODATA]);
        let forest = row(&[1.0, 0.0, 1.0, 1.0, 1.0]);
        let m = build_eval_mask(&reference, &forest, OUTLIER_CAP).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn nodata_prediction_is_skipped() {
        let r = compute_metrics(&row(&[NODATA, 3.0]), &row(&[1.0, 1.0]), &row(&[1.0, 1.0])).unwrap();
        assert_eq!((r.n, r.mbe), (1, 2.0));
    }

    proptest! {
        #[test]
        fn error_ordering_and_consistency(v in prop::collection::vec((0.0f64..45.0, 0.0f64..45.0), 1..60)) {
            let r = metrics_from_pairs(&v).unwrap();
            let tol = 1e-9;
            prop_assert!(r.rmse * r.rmse + tol >= r.mae * r.mae);
            prop_assert!(r.mae + tol >= r.mbe.abs());
            if r.mean_vh > 0.0 {
                prop_assert!((r.maer * r.mean_vh - r.mae).abs() <= tol * r.mae.max(1.0));
            }
        }

        #[test]
        fn permutation_invariant(v in prop::collection::vec((0.0f64..45.0, 0.0f64..45.0), 2..40)) {
            let a = metrics_from_pairs(&v).unwrap();
            let mut w = v.clone();
            w.reverse();
            w.rotate_left(v.len() / 3);
            let b = metrics_from_pairs(&w).unwrap();
            for (x, y) in [(a.mbe, b.mbe), (a.mae, b.mae), (a.rmse, b.rmse), (a.mean_vh, b.mean_vh)] {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
