//! Deterministic synthetic worlds.
//!
//! A world is a square 1 m canopy height model over a smooth terrain, a
//! second year with planted clearings, the 10 m reference products derived
//! from both, and per-year stacks of four-band scenes whose reflectances are
//! monotone saturating functions of the 10 m mean height, modulated by
//! elevation and obscured by clouds. Everything is a function of the seed.

mod field;

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use field::{quantile, smooth_field};

use crate::kv::{parse_list, KvConfig};
use crate::pipeline::{landcover, manifest_csv, Scene, SceneRecord};
use crate::raster::{pool_resample, raster_diff, write_raster, GridSpec, PoolMode, Raster, NODATA};
use crate::{fmt_sig6, Error, Result};

/// Map origin of generated grids.
pub const ORIGIN: (f64, f64) = (2_600_000.0, 1_250_000.0);
/// Tile id of generated scenes.
pub const TILE_ID: &str = "T0";

/// Clearings of one size class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingSpec {
    pub count: usize,
    pub area_min: f64,
    pub area_max: f64,
    pub drop_min: f32,
    pub drop_max: f32,
    /// Axis-aligned rectangles on the 10 m grid instead of free shapes.
    pub snap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Side length in 1 m cells; a multiple of 10.
    pub extent: usize,
    pub forest_fraction: f64,
    /// Spatial scale of the canopy height field in meters.
    pub height_scale: f64,
    pub max_height: f32,
    /// Standard deviation of the per-cell crown texture in meters.
    pub crown_noise: f32,
    /// Band noise, as a standard deviation in meters of height fed through
    /// each band response.
    pub band_noise: f32,
    /// Mean cloudy fraction of a scene.
    pub cloud_cover: f64,
    pub scenes_per_year: usize,
    pub off_season_scenes: usize,
    pub years: Vec<u16>,
    pub clearings: ClearingSpec,
    pub small_clearings: ClearingSpec,
    pub base_elevation: f32,
    /// Elevation range of the terrain in meters.
    pub relief: f32,
    /// Strength of the elevation effects on canopy height and reflectance,
    /// 0 for none.
    pub terrain_coupling: f32,
    pub lake_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            extent: 1000,
            forest_fraction: 0.7,
            height_scale: 150.0,
            max_height: 45.0,
            crown_noise: 1.5,
            band_noise: 0.5,
            cloud_cover: 0.15,
            scenes_per_year: 6,
            off_season_scenes: 2,
            years: vec![2019, 2020],
            clearings: ClearingSpec {
                count: 8,
                area_min: 300.0,
                area_max: 5000.0,
                drop_min: 12.0,
                drop_max: 20.0,
                snap: false,
            },
            small_clearings: ClearingSpec {
                count: 4,
                area_min: 25.0,
                area_max: 100.0,
                drop_min: 12.0,
                drop_max: 20.0,
                snap: false,
            },
            base_elevation: 400.0,
            relief: 900.0,
            terrain_coupling: 0.3,
            lake_radius: 40.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.extent < 100 || self.extent % 10 != 0 {
            return Err(Error::invalid("extent must be a multiple of 10 and at least 100"));
        }
        if !(0.0..=1.0).contains(&self.forest_fraction) || !(0.0..=1.0).contains(&self.cloud_cover) {
            return Err(Error::invalid("forest_fraction and cloud_cover must lie in [0, 1]"));
        }
        if !(self.max_height > 12.0 && self.max_height <= 45.0) {
            return Err(Error::invalid("max_height must lie in (12, 45]"));
        }
        if !(self.crown_noise >= 0.0 && self.band_noise >= 0.0) {
            return Err(Error::invalid("noise standard deviations must be non-negative"));
        }
        if !(self.height_scale >= 1.0 && self.relief >= 0.0 && self.terrain_coupling >= 0.0 && self.lake_radius >= 0.0) {
            return Err(Error::invalid("height_scale, relief, terrain_coupling and lake_radius out of range"));
        }
        if self.terrain_coupling > 1.0 {
            return Err(Error::invalid("terrain_coupling must not exceed 1"));
        }
        if self.years.is_empty() || self.years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("years must be non-empty and strictly increasing"));
        }
        if self.scenes_per_year == 0 {
            return Err(Error::invalid("scenes_per_year must be positive"));
        }
        for c in [&self.clearings, &self.small_clearings] {
            if !(c.area_min >= 1.0 && c.area_min <= c.area_max) {
                return Err(Error::invalid("clearing area range must satisfy 1 <= min <= max"));
            }
            if !(10.0 <= c.drop_min && c.drop_min <= c.drop_max && c.drop_max <= 40.0) {
                return Err(Error::invalid("clearing drop range must lie within [10, 40] m"));
            }
            if c.snap && c.area_max < 100.0 {
                return Err(Error::invalid("grid-snapped clearings need area_max >= 100"));
            }
        }
        Ok(())
    }

    pub fn with_kv(&self, kv: &KvConfig) -> Result<Self> {
        let clearing = |prefix: &str, d: &ClearingSpec| -> Result<ClearingSpec> {
            Ok(ClearingSpec {
                count: kv.parse_or(&format!("{prefix}_count"), d.count)?,
                area_min: kv.parse_or(&format!("{prefix}_area_min"), d.area_min)?,
                area_max: kv.parse_or(&format!("{prefix}_area_max"), d.area_max)?,
                drop_min: kv.parse_or(&format!("{prefix}_drop_min"), d.drop_min)?,
                drop_max: kv.parse_or(&format!("{prefix}_drop_max"), d.drop_max)?,
                snap: kv.parse_or(&format!("{prefix}_snap"), d.snap)?,
            })
        };
        let c = SynthConfig {
            seed: kv.parse_or("seed", self.seed)?,
            extent: kv.parse_or("extent", self.extent)?,
            forest_fraction: kv.parse_or("forest_fraction", self.forest_fraction)?,
            height_scale: kv.parse_or("height_scale", self.height_scale)?,
            max_height: kv.parse_or("max_height", self.max_height)?,
            crown_noise: kv.parse_or("crown_noise", self.crown_noise)?,
            band_noise: kv.parse_or("band_noise", self.band_noise)?,
            cloud_cover: kv.parse_or("cloud_cover", self.cloud_cover)?,
            scenes_per_year: kv.parse_or("scenes_per_year", self.scenes_per_year)?,
            off_season_scenes: kv.parse_or("off_season_scenes", self.off_season_scenes)?,
            years: match kv.get("years") {
                Some(v) => parse_list(v)?,
                None => self.years.clone(),
            },
            clearings: clearing("clearing", &self.clearings)?,
            small_clearings: clearing("small_clearing", &self.small_clearings)?,
            base_elevation: kv.parse_or("base_elevation", self.base_elevation)?,
            relief: kv.parse_or("relief", self.relief)?,
            terrain_coupling: kv.parse_or("terrain_coupling", self.terrain_coupling)?,
            lake_radius: kv.parse_or("lake_radius", self.lake_radius)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("seed", self.seed);
        kv.set("extent", self.extent);
        kv.set("forest_fraction", self.forest_fraction);
        kv.set("height_scale", self.height_scale);
        kv.set("max_height", self.max_height);
        kv.set("crown_noise", self.crown_noise);
        kv.set("band_noise", self.band_noise);
        kv.set("cloud_cover", self.cloud_cover);
        kv.set("scenes_per_year", self.scenes_per_year);
        kv.set("off_season_scenes", self.off_season_scenes);
        kv.set("years", self.years.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(","));
        for (p, c) in [("clearing", &self.clearings), ("small_clearing", &self.small_clearings)] {
            kv.set(&format!("{p}_count"), c.count);
            kv.set(&format!("{p}_area_min"), c.area_min);
            kv.set(&format!("{p}_area_max"), c.area_max);
            kv.set(&format!("{p}_drop_min"), c.drop_min);
            kv.set(&format!("{p}_drop_max"), c.drop_max);
            kv.set(&format!("{p}_snap"), c.snap);
        }
        kv.set("base_elevation", self.base_elevation);
        kv.set("relief", self.relief);
        kv.set("terrain_coupling", self.terrain_coupling);
        kv.set("lake_radius", self.lake_radius);
        kv
    }
}

/// Reflectance of band `b` (red, green, blue, nir) over vegetation of
/// height `h`. Visible bands darken and the near infrared brightens with
/// height; all four saturate above about 35 m.
pub fn band_response(b: usize, h: f64) -> f64 {
    match b {
        0 => 0.02 + 0.10 * (-h / 10.0).exp(),
        1 => 0.04 + 0.08 * (-h / 10.0).exp(),
        2 => 0.01 + 0.06 * (-h / 12.0).exp(),
        3 => 0.20 + 0.25 * (1.0 - (-h / 9.0).exp()),
        _ => panic!("band index {b} out of range"),
    }
}

/// Height whose near-infrared response is `nir`.
pub fn invert_nir(nir: f64) -> f64 {
    -9.0 * (1.0 - (nir - 0.20) / 0.25).ln()
}

/// Multiplicative illumination and additive haze at normalized elevation
/// `e` in `[0, 1]`.
pub fn illumination(e: f64, coupling: f64) -> (f64, f64) {
    (1.0 - coupling * (e - 0.5), 0.05 * coupling * e)
}

const WATER_REFLECTANCE: [f32; 4] = [0.03, 0.05, 0.06, 0.02];
const SNOW_REFLECTANCE: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClearingShape {
    Rectangle,
    Ellipse,
}

/// A planted clearing: every member cell loses `drop` meters from the
/// second year on.
#[derive(Debug, Clone, PartialEq)]
pub struct Clearing {
    pub id: usize,
    pub shape: ClearingShape,
    /// Row-major 1 m cell indices, ascending.
    pub cells: Vec<usize>,
    pub drop: f32,
    pub min_col: usize,
    pub min_row: usize,
    pub max_col: usize,
    pub max_row: usize,
}

impl Clearing {
    pub fn area_m2(&self) -> f64 {
        self.cells.len() as f64
    }
}

/// A generated world held in memory.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub grid_1m: GridSpec,
    pub grid_10m: GridSpec,
    pub dtm_1m: Raster,
    /// Mean-pooled 10 m terrain model.
    pub dtm: Raster,
    /// True 1 m canopy height per year.
    pub vhm_1m: Vec<Raster>,
    /// Mean- and max-pooled 10 m heights per year.
    pub ref_mean: Vec<Raster>,
    pub ref_max: Vec<Raster>,
    /// 1 where at least half of a 10 m cell is forest.
    pub forest_mask: Raster,
    /// Share of broad-leaved trees in percent.
    pub mix_rate: Raster,
    /// Share of 1 m cells above 3 m in percent.
    pub tree_cover: Raster,
    pub clearings: Vec<Clearing>,
    /// 1 where at least half of a 10 m cell lies in a clearing.
    pub change_reference: Raster,
    /// Scenes of all years, date order.
    pub scenes: Vec<Scene>,
}

impl SynthWorld {
    pub fn year_index(&self, year: u16) -> Option<usize> {
        self.config.years.iter().position(|&y| y == year)
    }

    /// Later minus earlier 1 m height between the first two years.
    pub fn diff_1m(&self) -> Result<Raster> {
        if self.vhm_1m.len() < 2 {
            return Err(Error::invalid("difference needs two years"));
        }
        raster_diff(&self.vhm_1m[1], &self.vhm_1m[0])
    }

    /// Later minus earlier 10 m mean reference height between the first two years.
    pub fn diff_10m(&self) -> Result<Raster> {
        if self.ref_mean.len() < 2 {
            return Err(Error::invalid("difference needs two years"));
        }
        raster_diff(&self.ref_mean[1], &self.ref_mean[0])
    }
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Generates the world described by `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let n = cfg.extent;
    let grid_1m = GridSpec::new(n, n, 1.0, ORIGIN.0, ORIGIN.1);
    let grid_10m = grid_1m.coarsened(10);
    let coupling = cfg.terrain_coupling as f64;

    // terrain
    let e_1m = smooth_field(&mut stream(cfg.seed, 1), n, n, 500.0, 3);
    let dtm_1m_vals: Vec<f32> = e_1m.iter().map(|&e| cfg.base_elevation + cfg.relief * e).collect();
    let dtm_1m = Raster::new(grid_1m, 1, NODATA, dtm_1m_vals)?;

    // lake
    let mut rng = stream(cfg.seed, 2);
    let (lr, lc) = (rng.random_range(0.2..0.8) * n as f64, rng.random_range(0.2..0.8) * n as f64);
    let water: Vec<bool> = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
            (r - lr).hypot(c - lc) < cfg.lake_radius
        })
        .collect();

    // forest
    let ff = smooth_field(&mut stream(cfg.seed, 3), n, n, 200.0, 2);
    let land: Vec<f32> = ff.iter().zip(&water).filter(|(_, w)| !**w).map(|(v, _)| *v).collect();
    let forest_thr = if land.is_empty() { 2.0 } else { quantile(&land, 1.0 - cfg.forest_fraction) };
    let forest: Vec<bool> = (0..n * n).map(|i| !water[i] && ff[i] >= forest_thr && cfg.forest_fraction > 0.0).collect();

    // canopy height
    let hf = smooth_field(&mut stream(cfg.seed, 4), n, n, cfg.height_scale, 3);
    let mut rng = stream(cfg.seed, 5);
    let crown = Normal::new(0.0, cfg.crown_noise as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let h0: Vec<f32> = (0..n * n)
        .map(|i| {
            let texture = crown.sample(&mut rng);
            if water[i] {
                0.0
            } else if forest[i] {
                let base = 8.0 + (cfg.max_height as f64 - 12.0) * hf[i] as f64;
                let treeline = 1.0 - 0.5 * coupling * e_1m[i] as f64;
                (base * treeline + texture).clamp(0.0, cfg.max_height as f64) as f32
            } else {
                (1.5 * hf[i] as f64 + 0.3 * texture).clamp(0.0, 2.0) as f32
            }
        })
        .collect();

    // clearings
    let mut rng = stream(cfg.seed, 6);
    let mut taken = vec![false; n * n];
    let mut clearings = Vec::new();
    for spec in [&cfg.clearings, &cfg.small_clearings] {
        for _ in 0..spec.count {
            let c = place_clearing(&mut rng, spec, n, &forest, &h0, &taken).ok_or_else(|| {
                Error::invalid(format!(
                    "extent {n} too small to place {} clearings of {}-{} m²",
                    spec.count, spec.area_min, spec.area_max
                ))
            })?;
            // two-cell buffer keeps clearings apart under 8-connectivity
            for &i in &c.cells {
                let (r, col) = ((i / n) as isize, (i % n) as isize);
                for dr in -2..=2 {
                    for dc in -2..=2 {
                        let (rr, cc) = (r + dr, col + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                            taken[rr as usize * n + cc as usize] = true;
                        }
                    }
                }
            }
            clearings.push(Clearing { id: clearings.len() + 1, ..c });
        }
    }

    let mut vhm_1m = Vec::new();
    for k in 0..cfg.years.len() {
        let mut h = h0.clone();
        if k >= 1 {
            for c in &clearings {
                for &i in &c.cells {
                    h[i] -= c.drop;
                }
            }
        }
        vhm_1m.push(Raster::new(grid_1m, 1, NODATA, h)?);
    }
    let ref_mean = vhm_1m.iter().map(|r| pool_resample(r, 10, PoolMode::Mean)).collect::<Result<Vec<_>>>()?;
    let ref_max = vhm_1m.iter().map(|r| pool_resample(r, 10, PoolMode::Max)).collect::<Result<Vec<_>>>()?;
    let dtm = pool_resample(&dtm_1m, 10, PoolMode::Mean)?;

    let share = |flag: &dyn Fn(usize) -> bool| -> Result<Raster> {
        let v: Vec<f32> = (0..n * n).map(|i| flag(i) as u8 as f32).collect();
        pool_resample(&Raster::new(grid_1m, 1, NODATA, v)?, 10, PoolMode::Mean)
    };
    let half = |r: Raster| r.map_valid(|v| (v >= 0.5) as u8 as f32);
    let forest_mask = half(share(&|i| forest[i])?);
    let water_10m = half(share(&|i| water[i])?);
    let tree_cover = share(&|i| h0[i] > 3.0)?.map_valid(|v| 100.0 * v);
    let mut in_clearing = vec![false; n * n];
    for c in &clearings {
        for &i in &c.cells {
            in_clearing[i] = true;
        }
    }
    let change_reference = half(share(&|i| in_clearing[i])?);
    let mix = smooth_field(&mut stream(cfg.seed, 7), grid_10m.width, grid_10m.height, 30.0, 2);
    let mix_rate = Raster::new(grid_10m, 1, NODATA, mix.iter().map(|v| 100.0 * v).collect())?;

    let scenes = make_scenes(cfg, grid_10m, &ref_mean, &dtm, &water_10m)?;

    Ok(SynthWorld {
        config: cfg.clone(),
        grid_1m,
        grid_10m,
        dtm_1m,
        dtm,
        vhm_1m,
        ref_mean,
        ref_max,
        forest_mask,
        mix_rate,
        tree_cover,
        clearings,
        change_reference,
        scenes,
    })
}

/// Tries random placements until the footprint is forest, tall enough for
/// the drop and clear of earlier clearings.
fn place_clearing(
    rng: &mut ChaCha8Rng,
    spec: &ClearingSpec,
    n: usize,
    forest: &[bool],
    h: &[f32],
    taken: &[bool],
) -> Option<Clearing> {
    const ATTEMPTS: usize = 4000;
    for _ in 0..ATTEMPTS {
        let drop = rng.random_range(spec.drop_min..=spec.drop_max);
        let area = rng.random_range(spec.area_min..=spec.area_max);
        let aspect: f64 = rng.random_range(0.5..2.0);
        let (shape, cells) = if spec.snap {
            let wc = ((area * aspect).sqrt() / 10.0).round().max(1.0) as usize;
            let hc = ((area / (100.0 * wc as f64)).round().max(1.0) as usize).min(n / 10);
            if wc * hc * 100 < spec.area_min as usize || wc * hc * 100 > spec.area_max as usize || wc * 10 >= n || hc * 10 >= n {
                continue;
            }
            let r0 = 10 * rng.random_range(0..(n / 10 - hc));
            let c0 = 10 * rng.random_range(0..(n / 10 - wc));
            (ClearingShape::Rectangle, rect_cells(n, r0, c0, hc * 10, wc * 10))
        } else if rng.random_bool(0.5) {
            let w = (area * aspect).sqrt().round().max(1.0) as usize;
            let hh = (area / w as f64).round().max(1.0) as usize;
            if w >= n || hh >= n {
                continue;
            }
            let r0 = rng.random_range(0..n - hh);
            let c0 = rng.random_range(0..n - w);
            (ClearingShape::Rectangle, rect_cells(n, r0, c0, hh, w))
        } else {
            let a = (area * aspect / std::f64::consts::PI).sqrt();
            let b = area / (std::f64::consts::PI * a);
            let (cr, cc) = (rng.random_range(b + 1.0..n as f64 - b - 1.0), rng.random_range(a + 1.0..n as f64 - a - 1.0));
            let mut cells = Vec::new();
            for r in (cr - b).floor() as usize..=(cr + b).ceil() as usize {
                for c in (cc - a).floor() as usize..=(cc + a).ceil() as usize {
                    let (dy, dx) = ((r as f64 + 0.5 - cr) / b, (c as f64 + 0.5 - cc) / a);
                    if r < n && c < n && dx * dx + dy * dy <= 1.0 {
                        cells.push(r * n + c);
                    }
                }
            }
            (ClearingShape::Ellipse, cells)
        };
        let area_ok = (cells.len() as f64) >= spec.area_min && (cells.len() as f64) <= spec.area_max;
        if !area_ok || cells.iter().any(|&i| !forest[i] || h[i] < drop || taken[i]) {
            continue;
        }
        let (min_row, max_row) = (cells[0] / n, cells[cells.len() - 1] / n);
        let min_col = cells.iter().map(|i| i % n).min().unwrap();
        let max_col = cells.iter().map(|i| i % n).max().unwrap();
        return Some(Clearing {
            id: 0,
            shape,
            cells,
            drop,
            min_col,
            min_row,
            max_col,
            max_row,
        });
    }
    None
}

fn rect_cells(n: usize, r0: usize, c0: usize, h: usize, w: usize) -> Vec<usize> {
    (r0..r0 + h).flat_map(|r| (c0..c0 + w).map(move |c| r * n + c)).collect()
}

fn scene_dates(cfg: &SynthConfig, year: u16, rng: &mut ChaCha8Rng) -> Vec<NaiveDate> {
    let y = year as i32;
    let may1 = NaiveDate::from_ymd_opt(y, 5, 1).expect("valid date");
    let mut dates: Vec<NaiveDate> = (0..cfg.scenes_per_year)
        .map(|s| {
            let slot = 150 / cfg.scenes_per_year as i64;
            let off = s as i64 * slot + rng.random_range(0..slot.max(1));
            may1 + chrono::Duration::days(off.min(152))
        })
        .collect();
    for k in 0..cfg.off_season_scenes {
        let d = if k % 2 == 0 {
            NaiveDate::from_ymd_opt(y, 3, 10 + (k as u32 / 2) % 18)
        } else {
            NaiveDate::from_ymd_opt(y, 11, 5 + (k as u32 / 2) % 20)
        };
        dates.push(d.expect("valid date"));
    }
    dates.sort();
    dates.dedup();
    dates
}

fn make_scenes(cfg: &SynthConfig, grid: GridSpec, ref_mean: &[Raster], dtm: &Raster, water: &Raster) -> Result<Vec<Scene>> {
    let cells = grid.len();
    let coupling = cfg.terrain_coupling as f64;
    let noise = Normal::new(0.0, cfg.band_noise as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let e_norm: Vec<f64> = dtm
        .data()
        .iter()
        .map(|&z| if cfg.relief > 0.0 { ((z - cfg.base_elevation) / cfg.relief).clamp(0.0, 1.0) as f64 } else { 0.5 })
        .collect();
    let mut scenes = Vec::new();
    for (k, &year) in cfg.years.iter().enumerate() {
        let mut rng = stream(cfg.seed, 100 + k as u64);
        for date in scene_dates(cfg, year, &mut rng) {
            let in_season = (5..=9).contains(&chrono::Datelike::month(&date));
            let cover: f64 = (rng.random_range(0.0..2.0) * cfg.cloud_cover).min(0.9);
            let cf = smooth_field(&mut rng, grid.width, grid.height, 25.0, 2);
            let cloud: Vec<f32> = if cover < 0.005 {
                vec![0.0; cells]
            } else {
                let thr = quantile(&cf, 1.0 - cover);
                cf.iter().map(|&v| (100.0 * ((v - thr) / 0.08 + 0.5).clamp(0.0, 1.0)).round()).collect()
            };
            let mut lc = vec![landcover::VEGETATION; cells];
            let mut bands = vec![0.0f32; 4 * cells];
            for i in 0..cells {
                let h = ref_mean[k].data()[i] as f64;
                let (kill, haze) = illumination(e_norm[i], coupling);
                let snow = !in_season && e_norm[i] > 0.55;
                let lake = water.data()[i] > 0.5;
                if lake {
                    lc[i] = landcover::WATER;
                } else if snow {
                    lc[i] = landcover::SNOW;
                }
                let a = cloud[i] as f64 / 100.0;
                for b in 0..4 {
                    let surface = if lake {
                        WATER_REFLECTANCE[b] as f64
                    } else if snow {
                        SNOW_REFLECTANCE as f64
                    } else {
                        band_response(b, h + noise.sample(&mut rng)) * kill + haze
                    };
                    let v = (1.0 - a) * surface + a * (0.55 + 0.3 * cf[i] as f64);
                    bands[b * cells + i] = v.clamp(0.0, 1.0) as f32;
                }
            }
            scenes.push(Scene::new(
                TILE_ID,
                date,
                Raster::new(grid, 4, NODATA, bands)?,
                Raster::new(grid, 1, NODATA, cloud)?,
                Raster::new(grid, 1, NODATA, lc)?,
            )?);
        }
    }
    scenes.sort_by_key(|s| s.date);
    Ok(scenes)
}

pub const CLEARINGS_HEADER: &str = "id,shape,area_m2,drop,min_col,min_row,max_col,max_row";

pub fn clearings_csv(clearings: &[Clearing]) -> String {
    let mut s = format!("{CLEARINGS_HEADER}\n");
    for c in clearings {
        let shape = match c.shape {
            ClearingShape::Rectangle => "rectangle",
            ClearingShape::Ellipse => "ellipse",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            c.id,
            shape,
            fmt_sig6(c.area_m2()),
            fmt_sig6(c.drop as f64),
            c.min_col,
            c.min_row,
            c.max_col,
            c.max_row
        );
    }
    s
}

/// Writes the world under `dir`: rasters, `scenes/`, `manifest.csv`,
/// `clearings.csv`, the generating `synth.cfg` and a `run.cfg` pointing at
/// everything with paths relative to `dir`.
pub fn write_world(world: &SynthWorld, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("scenes"))?;
    let mut run = KvConfig::new();
    let mut put = |key: &str, file: String, r: &Raster| -> Result<()> {
        write_raster(r, dir.join(&file))?;
        run.set(key, file);
        Ok(())
    };
    put("dtm_1m", "dtm_1m.rstr".into(), &world.dtm_1m)?;
    put("dtm", "dtm.rstr".into(), &world.dtm)?;
    put("forest_mask", "forest_mask.rstr".into(), &world.forest_mask)?;
    put("mix_rate", "mix_rate.rstr".into(), &world.mix_rate)?;
    put("tree_cover", "tree_cover.rstr".into(), &world.tree_cover)?;
    put("change_reference", "change_reference.rstr".into(), &world.change_reference)?;
    for (k, y) in world.config.years.iter().enumerate() {
        put(&format!("vhm_1m_{y}"), format!("vhm_1m_{y}.rstr"), &world.vhm_1m[k])?;
        put(&format!("ref_mean_{y}"), format!("ref_mean_{y}.rstr"), &world.ref_mean[k])?;
        put(&format!("ref_max_{y}"), format!("ref_max_{y}.rstr"), &world.ref_max[k])?;
    }
    if world.vhm_1m.len() >= 2 {
        put("diff1m", "diff_1m.rstr".into(), &world.diff_1m()?)?;
    }
    let mut records = Vec::new();
    for s in &world.scenes {
        let stem = format!("scenes/{}_{}", s.tile_id, s.date.format("%Y%m%d"));
        let rec = SceneRecord {
            tile_id: s.tile_id.clone(),
            date: s.date,
            bands_path: format!("{stem}_bands.rstr").into(),
            cloud_path: format!("{stem}_cloud.rstr").into(),
            landcover_path: format!("{stem}_landcover.rstr").into(),
        };
        write_raster(&s.bands, dir.join(&rec.bands_path))?;
        write_raster(&s.cloud, dir.join(&rec.cloud_path))?;
        write_raster(&s.landcover, dir.join(&rec.landcover_path))?;
        records.push(rec);
    }
    std::fs::write(dir.join("manifest.csv"), manifest_csv(&records))?;
    std::fs::write(dir.join("clearings.csv"), clearings_csv(&world.clearings))?;
    world.config.to_kv().save(dir.join("synth.cfg"))?;
    run.set("manifest", "manifest.csv");
    run.set(
        "years",
        world.config.years.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(","),
    );
    run.set("seed", world.config.seed);
    run.save(dir.join("run.cfg"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::change::{change_objects, ChangeOptions};

    pub(crate) fn small() -> SynthConfig {
        SynthConfig {
            extent: 300,
            scenes_per_year: 3,
            off_season_scenes: 1,
            clearings: ClearingSpec { count: 3, area_min: 300.0, area_max: 1200.0, ..SynthConfig::default().clearings },
            small_clearings: ClearingSpec { count: 2, ..SynthConfig::default().small_clearings },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_world(&generate(&small()).unwrap(), a.path()).unwrap();
        write_world(&generate(&small()).unwrap(), b.path()).unwrap();
        let mut files: Vec<_> = walk(a.path());
        files.sort();
        assert!(files.len() > 20);
        for f in files {
            let rel = f.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(p: &Path) -> Vec<std::path::PathBuf> {
        let mut v = Vec::new();
        for e in std::fs::read_dir(p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                v.extend(walk(&e));
            } else {
                v.push(e);
            }
        }
        v
    }

    #[test]
    fn noise_free_bands_invert_to_height() {
        let cfg = SynthConfig { band_noise: 0.0, terrain_coupling: 0.0, cloud_cover: 0.0, ..small() };
        let w = generate(&cfg).unwrap();
        let s = &w.scenes[0];
        let k = w.year_index(chrono::Datelike::year(&s.date) as u16).unwrap();
        let n = w.grid_10m.len();
        let mut checked = 0;
        for i in 0..n {
            let h = w.ref_mean[k].data()[i] as f64;
            if s.landcover.data()[i] != landcover::VEGETATION || h > 30.0 {
                continue;
            }
            let nir = s.bands.data()[3 * n + i] as f64;
            assert!((invert_nir(nir) - h).abs() < 2e-3 * (1.0 + h), "{h} vs {}", invert_nir(nir));
            checked += 1;
        }
        assert!(checked > n / 2);
    }

    #[test]
    fn bands_within_reflectance_bounds() {
        let w = generate(&SynthConfig { band_noise: 5.0, ..small() }).unwrap();
        for s in &w.scenes {
            assert!(s.bands.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.cloud.data().iter().all(|&v| (0.0..=100.0).contains(&v)));
        }
    }

    #[test]
    fn planted_clearings_are_the_change_objects() {
        let w = generate(&small()).unwrap();
        let objects = change_objects(&w.diff_1m().unwrap(), &ChangeOptions::default()).unwrap();
        let mut planted: Vec<Vec<usize>> = w.clearings.iter().map(|c| c.cells.clone()).collect();
        planted.sort_by_key(|c| c[0]);
        let found: Vec<Vec<usize>> = objects.into_iter().map(|o| o.cells).collect();
        assert_eq!(found, planted);
        assert!(w.clearings.iter().all(|c| (10.0..=40.0).contains(&c.drop)));
    }

    #[test]
    fn single_large_clearing_is_one_object() {
        let cfg = SynthConfig {
            clearings: ClearingSpec { count: 1, area_min: 300.0, area_max: 300.0, drop_min: 15.0, drop_max: 15.0, snap: false },
            small_clearings: ClearingSpec { count: 0, ..small().small_clearings },
            ..small()
        };
        let w = generate(&cfg).unwrap();
        let objects = change_objects(&w.diff_1m().unwrap(), &ChangeOptions::default()).unwrap();
        assert_eq!(objects.len(), 1);
        assert!(objects[0].area_m2 >= 250.0);
    }

    #[test]
    fn impossible_clearings_rejected() {
        let cfg = SynthConfig {
            clearings: ClearingSpec { count: 40, area_min: 5000.0, area_max: 5000.0, ..small().clearings },
            ..small()
        };
        assert!(generate(&cfg).is_err());
        assert!(SynthConfig { extent: 105, ..small() }.validate().is_err());
        let bad_drop = ClearingSpec { drop_min: 5.0, ..small().clearings };
        assert!(SynthConfig { clearings: bad_drop, ..small() }.validate().is_err());
    }

    #[test]
    fn config_round_trip() {
        let c = SynthConfig { seed: 9, years: vec![2018, 2019, 2021], ..small() };
        assert_eq!(SynthConfig::default().with_kv(&c.to_kv()).unwrap(), c);
    }
}
