//! Browser demo: a small synthetic world and three interactive views of it.
//!
//! - pooling of the 1 m canopy height model to coarser grids,
//! - slope and aspect of the terrain model,
//! - change objects between the two years of the world.

mod render;

pub use render::{aspect_rgba, diverging_rgba, height_rgba, objects_rgba, ramp, slope_rgba};

use vhm_core::change::{change_objects, ChangeOptions, Connectivity};
use vhm_core::raster::{pool_resample, slope_aspect, PoolMode, Raster};
use vhm_core::synth::{generate, ClearingSpec, SynthConfig, SynthWorld};
use vhm_core::Result;
use wasm_bindgen::prelude::*;

const HEIGHT_MAX: f32 = 45.0;
const SLOPE_MAX: f32 = 45.0;
const DIFF_LIMIT: f32 = 25.0;

/// An RGBA image with a one-line caption.
#[wasm_bindgen]
pub struct Image {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    summary: String,
}

#[wasm_bindgen]
impl Image {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Row-major RGBA bytes, ready for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

impl Image {
    fn of(r: &Raster, rgba: Vec<u8>, summary: String) -> Self {
        Image {
            width: r.width() as u32,
            height: r.height() as u32,
            rgba,
            summary,
        }
    }
}

#[wasm_bindgen]
pub struct Demo {
    world: SynthWorld,
}

fn js(e: vhm_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Generates a world of `extent`×`extent` meters from `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, extent: u32) -> std::result::Result<Demo, JsError> {
        Demo::build(seed, extent).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn extent(&self) -> u32 {
        self.world.config.extent as u32
    }

    /// Year-one canopy height pooled over `factor`×`factor` windows with
    /// `mode` "mean" or "max".
    pub fn pool(&self, factor: u32, mode: &str) -> std::result::Result<Image, JsError> {
        self.pool_image(factor as usize, mode).map_err(js)
    }

    /// `layer` "slope" or "aspect" of the 1 m terrain model.
    pub fn terrain(&self, layer: &str) -> std::result::Result<Image, JsError> {
        self.terrain_image(layer).map_err(js)
    }

    /// Change objects of the 1 m height difference.
    pub fn change(&self, threshold: f32, min_area: f64, eight: bool) -> std::result::Result<Image, JsError> {
        self.change_image(threshold, min_area, eight).map_err(js)
    }
}

impl Demo {
    pub fn build(seed: u32, extent: u32) -> Result<Demo> {
        let cfg = SynthConfig {
            seed: seed as u64,
            extent: extent as usize,
            scenes_per_year: 1,
            off_season_scenes: 0,
            clearings: ClearingSpec {
                count: 6,
                area_max: 3000.0,
                ..SynthConfig::default().clearings
            },
            small_clearings: ClearingSpec {
                count: 6,
                ..SynthConfig::default().small_clearings
            },
            ..SynthConfig::default()
        };
        Ok(Demo { world: generate(&cfg)? })
    }

    pub fn pool_image(&self, factor: usize, mode: &str) -> Result<Image> {
        let vhm = &self.world.vhm_1m[0];
        let pooled = pool_resample(vhm, factor, mode.parse::<PoolMode>()?)?;
        let summary = format!(
            "{} x {} cells of {} m, mean height {:.1} m",
            pooled.width(),
            pooled.height(),
            pooled.pixel_size(),
            pooled.mean_valid().unwrap_or(f64::NAN)
        );
        Ok(Image::of(&pooled, height_rgba(&pooled, HEIGHT_MAX), summary))
    }

    pub fn terrain_image(&self, layer: &str) -> Result<Image> {
        let sa = slope_aspect(&self.world.dtm_1m)?;
        let (r, rgba) = match layer {
            "slope" => (&sa.slope, slope_rgba(&sa.slope, SLOPE_MAX)),
            "aspect" => (&sa.aspect, aspect_rgba(&sa.aspect)),
            l => return Err(vhm_core::Error::invalid(format!("unknown terrain layer {l:?}"))),
        };
        let summary = format!("mean {layer} {:.1} deg", r.mean_valid().unwrap_or(f64::NAN));
        Ok(Image::of(r, rgba, summary))
    }

    pub fn change_image(&self, threshold: f32, min_area: f64, eight: bool) -> Result<Image> {
        let diff = self.world.diff_1m()?;
        let opts = ChangeOptions {
            threshold,
            min_area,
            connectivity: if eight { Connectivity::Eight } else { Connectivity::Four },
        };
        let objects = change_objects(&diff, &opts)?;
        let area: f64 = objects.iter().map(|o| o.area_m2).sum();
        let summary = format!(
            "{} objects, {:.0} m2 in total; {} clearings planted",
            objects.len(),
            area,
            self.world.clearings.len()
        );
        Ok(Image::of(&diff, objects_rgba(&diff, &objects, DIFF_LIMIT), summary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Demo {
        Demo::build(1, 200).unwrap()
    }

    #[test]
    fn pooled_view_shrinks_by_factor() {
        let img = demo().pool_image(10, "max").unwrap();
        assert_eq!((img.width(), img.height()), (20, 20));
        assert_eq!(img.rgba().len(), 20 * 20 * 4);
        assert!(demo().pool_image(10, "median").is_err());
    }

    #[test]
    fn terrain_layers() {
        let d = demo();
        for layer in ["slope", "aspect"] {
            let img = d.terrain_image(layer).unwrap();
            assert_eq!(img.rgba().len(), 200 * 200 * 4);
            assert!(img.summary().contains(layer));
        }
        assert!(d.terrain_image("curvature").is_err());
    }

    #[test]
    fn change_view_finds_planted_clearings() {
        let d = demo();
        let img = d.change_image(-10.0, 25.0, true).unwrap();
        let n: usize = img.summary().split(' ').next().unwrap().parse().unwrap();
        assert_eq!(n, d.world.clearings.len());
    }
}
