use super::Scene;
use crate::model::Model;
use crate::raster::Raster;
use crate::tensor::{Real, Shape, Tensor};
use crate::train::NormStats;
use crate::{Error, Result};

/// Inference window side.
pub const TILE: usize = 512;
/// Overlap between neighboring windows.
pub const OVERLAP: usize = 16;

/// One window along an axis and the part of it whose predictions are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpan {
    pub start: usize,
    pub len: usize,
    pub keep_start: usize,
    pub keep_end: usize,
}

/// Windows covering `0..n`. Consecutive windows overlap by at least
/// `overlap`; ownership switches halfway through each overlap, so every
/// index is kept by exactly one window.
pub fn tile_spans(n: usize, tile: usize, overlap: usize) -> Vec<TileSpan> {
    assert!(tile > overlap && n > 0);
    if n <= tile {
        return vec![TileSpan { start: 0, len: n, keep_start: 0, keep_end: n }];
    }
    let step = tile - overlap;
    let mut starts = vec![0];
    while starts.last().unwrap() + tile < n {
        starts.push((starts.last().unwrap() + step).min(n - tile));
    }
    let mut spans: Vec<TileSpan> = starts
        .iter()
        .map(|&s| TileSpan { start: s, len: tile, keep_start: s, keep_end: s + tile })
        .collect();
    for i in 1..spans.len() {
        let seam = (spans[i - 1].start + tile + spans[i].start) / 2;
        spans[i - 1].keep_end = seam;
        spans[i].keep_start = seam;
    }
    spans
}

/// Tiled eval-mode prediction of the mean and max height from a stacked,
/// un-normalized input raster. Cells with nodata input come out nodata;
/// negative heights are clamped to 0.
pub fn predict_raster<T: Real>(model: &Model<T>, input: &Raster, norm: &NormStats) -> Result<(Raster, Raster)> {
    predict_raster_tiled(model, input, norm, TILE, OVERLAP)
}

pub fn predict_raster_tiled<T: Real>(
    model: &Model<T>,
    input: &Raster,
    norm: &NormStats,
    tile: usize,
    overlap: usize,
) -> Result<(Raster, Raster)> {
    let c = input.bands();
    if c != model.config().in_channels || c != norm.channels() {
        return Err(Error::invalid(format!(
            "input has {c} channels; model expects {}, normalization {}",
            model.config().in_channels,
            norm.channels()
        )));
    }
    let (w, h) = (input.width(), input.height());
    let nodata = input.nodata();
    let mut out = [vec![nodata; w * h], vec![nodata; w * h]];
    for ry in tile_spans(h, tile, overlap) {
        for rx in tile_spans(w, tile, overlap) {
            let mut vals = Vec::with_capacity(c * ry.len * rx.len);
            for b in 0..c {
                let (m, s) = (norm.mean[b], norm.std[b]);
                for r in ry.start..ry.start + ry.len {
                    for col in rx.start..rx.start + rx.len {
                        let v = input.get(b, r, col);
                        // nodata is fed as the channel mean and masked below
                        let z = if input.is_nodata(v) { 0.0 } else { (v as f64 - m) / s };
                        vals.push(T::from_f64(z));
                    }
                }
            }
            let x = Tensor::from_nchw(Shape::new(1, c, ry.len, rx.len), &vals)?;
            let y = model.predict(&x)?;
            for r in ry.keep_start..ry.keep_end {
                for col in rx.keep_start..rx.keep_end {
                    let valid = (0..c).all(|b| !input.is_nodata(input.get(b, r, col)));
                    if !valid {
                        continue;
                    }
                    let (tr, tc) = (r - ry.start, col - rx.start);
                    for (k, o) in out.iter_mut().enumerate() {
                        o[r * w + col] = y.at(0, k, tr, tc).as_f64().max(0.0) as f32;
                    }
                }
            }
        }
    }
    let [mean, max] = out;
    Ok((
        Raster::new(*input.grid(), 1, nodata, mean)?,
        Raster::new(*input.grid(), 1, nodata, max)?,
    ))
}

/// Mean and max height maps of one scene.
pub fn predict_scene<T: Real>(
    model: &Model<T>,
    scene: &Scene,
    dtm: Option<&Raster>,
    norm: &NormStats,
) -> Result<(Raster, Raster)> {
    predict_raster(model, &scene.input_stack(dtm)?, norm)
}

/// [`predict_scene`] over several scenes, concurrently when the
/// `parallel` feature is enabled. Results keep the input order.
pub fn predict_scenes<T: Real>(
    model: &Model<T>,
    scenes: &[&Scene],
    dtm: Option<&Raster>,
    norm: &NormStats,
) -> Result<Vec<(Raster, Raster)>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scenes.par_iter().map(|s| predict_scene(model, s, dtm, norm)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenes.iter().map(|s| predict_scene(model, s, dtm, norm)).collect()
    }
}
