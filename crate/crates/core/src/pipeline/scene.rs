use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::raster::{read_raster, Raster};
use crate::{Error, Result};

/// Land-cover class codes understood by the masking step.
pub mod landcover {
    pub const VEGETATION: f32 = 4.0;
    pub const NON_VEGETATED: f32 = 5.0;
    pub const WATER: f32 = 6.0;
    pub const SNOW: f32 = 11.0;
}

/// Band order of scene stacks.
pub const BAND_NAMES: [&str; 4] = ["red", "green", "blue", "nir"];

/// Cloud probability (percent) above which a pixel is unusable.
pub const CLOUD_LIMIT: f32 = 10.0;

/// One acquisition over a tile.
#[derive(Debug, Clone)]
pub struct Scene {
    pub tile_id: String,
    pub date: NaiveDate,
    /// Red, green, blue and near-infrared reflectance.
    pub bands: Raster,
    /// Cloud probability in percent.
    pub cloud: Raster,
    pub landcover: Raster,
}

impl Scene {
    pub fn new(tile_id: impl Into<String>, date: NaiveDate, bands: Raster, cloud: Raster, landcover: Raster) -> Result<Self> {
        if bands.bands() != BAND_NAMES.len() {
            return Err(Error::invalid(format!("scene needs 4 bands, got {}", bands.bands())));
        }
        cloud.ensure_single_band("cloud probability")?;
        landcover.ensure_single_band("land cover")?;
        bands.ensure_aligned(&cloud)?;
        bands.ensure_aligned(&landcover)?;
        Ok(Scene {
            tile_id: tile_id.into(),
            date,
            bands,
            cloud,
            landcover,
        })
    }

    /// Mean cloud probability over the valid cells of the tile; fully
    /// nodata tiles count as fully cloudy.
    pub fn mean_cloud(&self) -> f64 {
        self.cloud.mean_valid().unwrap_or(100.0)
    }

    /// Whether the pixel at `i` (row-major) is cloud-free enough and
    /// vegetated-class eligible.
    pub fn is_clear(&self, i: usize) -> bool {
        let c = self.cloud.data()[i];
        let lc = self.landcover.data()[i];
        !self.cloud.is_nodata(c) && c <= CLOUD_LIMIT && lc != landcover::WATER && lc != landcover::SNOW
    }

    /// Stacks the bands with an optional terrain channel.
    pub fn input_stack(&self, dtm: Option<&Raster>) -> Result<Raster> {
        let Some(dtm) = dtm else {
            return Ok(self.bands.clone());
        };
        dtm.ensure_single_band("terrain model")?;
        self.bands.ensure_aligned(dtm)?;
        let nodata = self.bands.nodata();
        let mut data = self.bands.data().to_vec();
        data.extend(dtm.data().iter().map(|&v| if dtm.is_nodata(v) { nodata } else { v }));
        Raster::new(*self.bands.grid(), self.bands.bands() + 1, nodata, data)
    }
}

/// Sets every band of `pred` to nodata where the scene is cloudy
/// (`> 10 %`) or classified as water or snow.
pub fn mask_invalid(pred: &Raster, scene: &Scene) -> Result<Raster> {
    pred.ensure_aligned(&scene.cloud)?;
    let n = pred.grid().len();
    let nodata = pred.nodata();
    let mut data = pred.data().to_vec();
    for i in 0..n {
        if !scene.is_clear(i) {
            for b in 0..pred.bands() {
                data[b * n + i] = nodata;
            }
        }
    }
    Raster::new(*pred.grid(), pred.bands(), nodata, data)
}

/// One row of a scene manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneRecord {
    pub tile_id: String,
    pub date: NaiveDate,
    pub bands_path: PathBuf,
    pub cloud_path: PathBuf,
    pub landcover_path: PathBuf,
}

impl SceneRecord {
    pub fn load(&self) -> Result<Scene> {
        Scene::new(
            self.tile_id.clone(),
            self.date,
            read_raster(&self.bands_path)?,
            read_raster(&self.cloud_path)?,
            read_raster(&self.landcover_path)?,
        )
    }
}

pub const MANIFEST_HEADER: &str = "tile_id,date,bands_path,cloud_path,landcover_path";

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::invalid(format!("date {s:?}: {e}")))
}

/// Parses manifest text; relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: Option<&Path>) -> Result<Vec<SceneRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::malformed("manifest", format!("expected header {MANIFEST_HEADER:?}, got {other:?}")))
        }
    }
    let resolve = |p: &str| {
        let p = PathBuf::from(p.trim());
        match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        }
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::malformed("manifest", format!("row {} has {} fields", i + 1, f.len())));
            }
            Ok(SceneRecord {
                tile_id: f[0].trim().to_string(),
                date: parse_date(f[1])?,
                bands_path: resolve(f[2]),
                cloud_path: resolve(f[3]),
                landcover_path: resolve(f[4]),
            })
        })
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::at(path))?;
    parse_manifest(&text, path.parent())
}

pub fn manifest_csv(records: &[SceneRecord]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.tile_id,
            r.date.format("%Y-%m-%d"),
            r.bands_path.display(),
            r.cloud_path.display(),
            r.landcover_path.display()
        );
    }
    s
}
