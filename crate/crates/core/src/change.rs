//! Structural change between two years.
//!
//! Change objects are connected regions of the 1 m reference difference
//! below a threshold. Each object is summarized by the mean 10 m map
//! difference over its footprint, and those means are compared across
//! area buckets and against unchanged forest with box-plot statistics.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::raster::{GridSpec, Raster};
use crate::{fmt_sig6, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeOptions {
    /// Cells with a difference strictly below this are changed.
    pub threshold: f32,
    pub min_area: f64,
    pub connectivity: Connectivity,
}

impl Default for ChangeOptions {
    fn default() -> Self {
        ChangeOptions {
            threshold: -10.0,
            min_area: 25.0,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Grid rectangle in cell indices, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub min_col: usize,
    pub min_row: usize,
    pub max_col: usize,
    pub max_row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeObject {
    /// 1-based, in row-major order of each object's first cell.
    pub id: usize,
    pub pixel_count: usize,
    pub area_m2: f64,
    /// Filled by [`attach_s2_means`]; `None` where the 10 m map has no
    /// valid cell under the object.
    pub mean_s2_diff: Option<f64>,
    pub bbox: BBox,
    /// Row-major indices of the member cells, ascending.
    pub cells: Vec<usize>,
}

/// Connected regions of `diff < threshold` with at least `min_area` m².
pub fn change_objects(diff: &Raster, opts: &ChangeOptions) -> Result<Vec<ChangeObject>> {
    diff.ensure_single_band("difference raster")?;
    if diff.pixel_size() != 1.0 {
        return Err(Error::invalid(format!(
            "change objects need a 1 m difference raster, got {} m",
            diff.pixel_size()
        )));
    }
    let (w, h) = (diff.width(), diff.height());
    let hit: Vec<bool> = diff.data().iter().map(|&v| !diff.is_nodata(v) && v < opts.threshold).collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let cell_area = diff.pixel_size() * diff.pixel_size();
    for start in 0..w * h {
        if !hit[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut cells = Vec::new();
        while let Some(i) = queue.pop_front() {
            cells.push(i);
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    if (dr == 0 && dc == 0) || (opts.connectivity == Connectivity::Four && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if hit[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        let area = cells.len() as f64 * cell_area;
        if area < opts.min_area {
            continue;
        }
        cells.sort_unstable();
        let bbox = cells.iter().fold(
            BBox {
                min_col: usize::MAX,
                min_row: usize::MAX,
                max_col: 0,
                max_row: 0,
            },
            |b, &i| BBox {
                min_col: b.min_col.min(i % w),
                min_row: b.min_row.min(i / w),
                max_col: b.max_col.max(i % w),
                max_row: b.max_row.max(i / w),
            },
        );
        out.push(ChangeObject {
            id: out.len() + 1,
            pixel_count: cells.len(),
            area_m2: area,
            mean_s2_diff: None,
            bbox,
            cells,
        });
    }
    Ok(out)
}

/// Integer factor by which `coarse` aggregates `fine`; the coarse grid must
/// share the fine origin and be exactly its `factor`× coarsening.
pub fn aggregation_factor(fine: &GridSpec, coarse: &GridSpec) -> Result<usize> {
    let ratio = coarse.pixel_size / fine.pixel_size;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 || fine.coarsened(factor as usize) != *coarse {
        return Err(Error::invalid(
            "the 10 m grid is not an exact aggregation of the 1 m grid".to_string(),
        ));
    }
    Ok(factor as usize)
}

/// Mean of the coarse difference over the object's cells; coarse cells
/// are weighted by the number of object cells they contain and nodata
/// cells are left out.
pub fn object_mean_s2diff(object: &ChangeObject, fine: &GridSpec, s2_diff: &Raster) -> Result<Option<f64>> {
    s2_diff.ensure_single_band("10 m difference")?;
    let f = aggregation_factor(fine, s2_diff.grid())?;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for &i in &object.cells {
        let (r, c) = (i / fine.width / f, i % fine.width / f);
        if r >= s2_diff.height() || c >= s2_diff.width() {
            return Err(Error::invalid(format!("change object {} lies outside the 10 m raster", object.id)));
        }
        if let Some(v) = s2_diff.value(r, c) {
            sum += v as f64;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Sets `mean_s2_diff` on every object.
pub fn attach_s2_means(objects: &mut [ChangeObject], fine: &GridSpec, s2_diff: &Raster) -> Result<()> {
    for o in objects.iter_mut() {
        o.mean_s2_diff = object_mean_s2diff(o, fine, s2_diff)?;
    }
    Ok(())
}

pub const OBJECTS_HEADER: &str = "id,area_m2,pixel_count,mean_s2_diff,bbox_min_x,bbox_min_y,bbox_max_x,bbox_max_y";

/// Objects table; bounding boxes in cell indices (x = column, y = row).
pub fn objects_csv(objects: &[ChangeObject]) -> String {
    let mut s = format!("{OBJECTS_HEADER}\n");
    for o in objects {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            o.id,
            fmt_sig6(o.area_m2),
            o.pixel_count,
            o.mean_s2_diff.map(fmt_sig6).unwrap_or_default(),
            o.bbox.min_col,
            o.bbox.min_row,
            o.bbox.max_col,
            o.bbox.max_row
        );
    }
    s
}

/// Box-plot summary with Tukey hinges and whiskers reaching the most
/// extreme values within 1.5 IQR of the hinges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxplotStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outlier_count: usize,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `None` for an empty sample.
pub fn boxplot_stats(values: &[f64]) -> Option<BoxplotStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    // hinges: medians of the halves, each including the median for odd n
    let half = n.div_ceil(2);
    let q1 = median_sorted(&v[..half]);
    let q3 = median_sorted(&v[n - half..]);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
    Some(BoxplotStats {
        n,
        median: median_sorted(&v),
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outlier_count: n - inside.len(),
    })
}

/// Object area range `[min, max)` in m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaBucket {
    pub min: f64,
    pub max: f64,
}

pub fn default_buckets() -> Vec<AreaBucket> {
    [(25.0, 250.0), (250.0, 1000.0), (1000.0, 5000.0), (5000.0, f64::INFINITY)]
        .into_iter()
        .map(|(min, max)| AreaBucket { min, max })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub label: String,
    pub bucket: Option<AreaBucket>,
    pub n: usize,
    pub stats: Option<BoxplotStats>,
}

/// Box-plot statistics of object means per area bucket, followed by the
/// statistics of `unchanged` (the 10 m differences of unchanged forest).
/// Objects without a mean are left out.
pub fn bucket_stats(objects: &[ChangeObject], buckets: &[AreaBucket], unchanged: &[f64]) -> Vec<BucketRow> {
    let mut rows: Vec<BucketRow> = buckets
        .iter()
        .map(|b| {
            let v: Vec<f64> = objects
                .iter()
                .filter(|o| o.area_m2 >= b.min && o.area_m2 < b.max)
                .filter_map(|o| o.mean_s2_diff)
                .collect();
            BucketRow {
                label: if b.max.is_finite() {
                    format!("{}-{}", fmt_sig6(b.min), fmt_sig6(b.max))
                } else {
                    format!(">={}", fmt_sig6(b.min))
                },
                bucket: Some(*b),
                n: v.len(),
                stats: boxplot_stats(&v),
            }
        })
        .collect();
    rows.push(BucketRow {
        label: "unchanged_forest".into(),
        bucket: None,
        n: unchanged.len(),
        stats: boxplot_stats(unchanged),
    });
    rows
}

/// Valid 10 m differences over forest cells that no change object touches.
pub fn unchanged_forest_values(
    objects: &[ChangeObject],
    fine: &GridSpec,
    s2_diff: &Raster,
    forest: &Raster,
) -> Result<Vec<f64>> {
    s2_diff.ensure_aligned(forest)?;
    let f = aggregation_factor(fine, s2_diff.grid())?;
    let w = s2_diff.width();
    let mut touched = vec![false; s2_diff.grid().len()];
    for o in objects {
        for &i in &o.cells {
            let (r, c) = (i / fine.width / f, i % fine.width / f);
            if r < s2_diff.height() && c < w {
                touched[r * w + c] = true;
            }
        }
    }
    Ok((0..touched.len())
        .filter(|&i| !touched[i])
        .filter(|&i| {
            let m = forest.data()[i];
            !forest.is_nodata(m) && m > 0.5
        })
        .filter_map(|i| {
            let v = s2_diff.data()[i];
            (!s2_diff.is_nodata(v)).then_some(v as f64)
        })
        .collect())
}

pub const BOXSTATS_HEADER: &str = "bucket,area_min,area_max,n,median,q1,q3,whisker_low,whisker_high,outlier_count";

pub fn boxstats_csv(rows: &[BucketRow]) -> String {
    let mut s = format!("{BOXSTATS_HEADER}\n");
    for r in rows {
        let (amin, amax) = match r.bucket {
            Some(b) => (fmt_sig6(b.min), if b.max.is_finite() { fmt_sig6(b.max) } else { String::new() }),
            None => (String::new(), String::new()),
        };
        let _ = write!(s, "{},{},{},{}", r.label, amin, amax, r.n);
        match r.stats {
            Some(b) => {
                let _ = writeln!(
                    s,
                    ",{},{},{},{},{},{}",
                    fmt_sig6(b.median),
                    fmt_sig6(b.q1),
                    fmt_sig6(b.q3),
                    fmt_sig6(b.whisker_low),
                    fmt_sig6(b.whisker_high),
                    b.outlier_count
                );
            }
            None => s.push_str(",,,,,,\n"),
        }
    }
    s
}

/// Pixel-level agreement of a thresholded difference map with a reference
/// change mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Report {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    /// 0 when nothing is predicted; see `precision_defined`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
}

/// Scores `s2_diff < threshold` against `reference` (1 = changed) over the
/// cells where `forest` is set (all cells when `None`). Nodata difference
/// cells count as not predicted.
pub fn change_mask_f1(s2_diff: &Raster, threshold: f32, reference: &Raster, forest: Option<&Raster>) -> Result<F1Report> {
    s2_diff.ensure_single_band("10 m difference")?;
    reference.ensure_single_band("reference mask")?;
    s2_diff.ensure_aligned(reference)?;
    if let Some(f) = forest {
        s2_diff.ensure_aligned(f)?;
    }
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for i in 0..s2_diff.grid().len() {
        if let Some(f) = forest {
            let m = f.data()[i];
            if f.is_nodata(m) || m <= 0.5 {
                continue;
            }
        }
        let d = s2_diff.data()[i];
        let pred = !s2_diff.is_nodata(d) && d < threshold;
        let r = reference.data()[i];
        let truth = !reference.is_nodata(r) && r > 0.5;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp + fneg == 0 {
        return Err(Error::invalid("reference change mask is empty; recall is undefined"));
    }
    let precision_defined = tp + fp > 0;
    let precision = if precision_defined { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = tp as f64 / (tp + fneg) as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(F1Report {
        true_positive: tp,
        false_positive: fp,
        false_negative: fneg,
        precision,
        recall,
        f1,
        precision_defined,
    })
}

pub fn f1_csv(r: &F1Report) -> String {
    format!(
        "true_positive,false_positive,false_negative,precision,recall,f1,precision_defined\n{},{},{},{},{},{},{}\n",
        r.true_positive,
        r.false_positive,
        r.false_negative,
        fmt_sig6(r.precision),
        fmt_sig6(r.recall),
        fmt_sig6(r.f1),
        r.precision_defined
    )
}
