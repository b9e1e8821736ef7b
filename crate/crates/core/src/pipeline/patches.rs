use chrono::Datelike;

use super::Scene;
use crate::raster::Raster;
use crate::train::{PatchSample, PATCH};
use crate::{Error, Result};

/// Location id of a center cell: a hash of the tile id in the upper half,
/// the row-major cell index in the lower half.
pub fn location_id(tile_id: &str, row: usize, col: usize, width: usize) -> u64 {
    // FNV-1a
    let mut h: u32 = 0x811c_9dc5;
    for b in tile_id.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    ((h as u64) << 32) | (row * width + col) as u64
}

fn check_targets(scene: &Scene, target_mean: &Raster, target_max: &Raster) -> Result<()> {
    target_mean.ensure_single_band("mean target")?;
    target_max.ensure_single_band("max target")?;
    scene.bands.ensure_aligned(target_mean)?;
    scene.bands.ensure_aligned(target_max)
}

/// Visits the center cells of every eligible patch: center cloud
/// probability under 10 %, both targets valid, patch inside the raster and
/// free of nodata input.
fn for_each_center(
    scene: &Scene,
    input: &Raster,
    target_mean: &Raster,
    target_max: &Raster,
    mut f: impl FnMut(usize, usize),
) {
    let (w, h) = (input.width(), input.height());
    if w < PATCH || h < PATCH {
        return;
    }
    let r = PATCH / 2;
    // running count of nodata input cells in a patch, via a summed-area table
    let mut bad = vec![0u32; (w + 1) * (h + 1)];
    for row in 0..h {
        for col in 0..w {
            let nd = (0..input.bands()).any(|b| input.is_nodata(input.get(b, row, col))) as u32;
            bad[(row + 1) * (w + 1) + col + 1] =
                nd + bad[row * (w + 1) + col + 1] + bad[(row + 1) * (w + 1) + col] - bad[row * (w + 1) + col];
        }
    }
    let window_bad = |r0: usize, c0: usize| {
        let (r1, c1) = (r0 + PATCH, c0 + PATCH);
        bad[r1 * (w + 1) + c1] + bad[r0 * (w + 1) + c0] - bad[r0 * (w + 1) + c1] - bad[r1 * (w + 1) + c0]
    };
    for row in r..h - r {
        for col in r..w - r {
            let cloud = scene.cloud.get(0, row, col);
            if scene.cloud.is_nodata(cloud) || cloud >= super::CLOUD_LIMIT {
                continue;
            }
            if target_mean.value(row, col).is_none() || target_max.value(row, col).is_none() {
                continue;
            }
            if window_bad(row - r, col - r) > 0 {
                continue;
            }
            f(row, col);
        }
    }
}

/// Number of patches [`extract_patches`] would return.
pub fn count_valid_patches(scene: &Scene, target_mean: &Raster, target_max: &Raster, dtm: Option<&Raster>) -> Result<usize> {
    check_targets(scene, target_mean, target_max)?;
    let input = scene.input_stack(dtm)?;
    let mut n = 0;
    for_each_center(scene, &input, target_mean, target_max, |_, _| n += 1);
    Ok(n)
}

/// One un-normalized 15×15 sample per eligible center pixel, in row-major
/// center order. Channels are the four bands followed by the terrain model
/// when given.
pub fn extract_patches(
    scene: &Scene,
    target_mean: &Raster,
    target_max: &Raster,
    dtm: Option<&Raster>,
) -> Result<Vec<PatchSample>> {
    check_targets(scene, target_mean, target_max)?;
    let input = scene.input_stack(dtm)?;
    let year = u16::try_from(scene.date.year()).map_err(|_| Error::invalid("scene year out of range"))?;
    let channels = input.bands();
    let r = PATCH / 2;
    let mut out = Vec::new();
    for_each_center(scene, &input, target_mean, target_max, |row, col| {
        let mut x = Vec::with_capacity(channels * PATCH * PATCH);
        for b in 0..channels {
            for pr in row - r..=row + r {
                for pc in col - r..=col + r {
                    x.push(input.get(b, pr, pc));
                }
            }
        }
        out.push(PatchSample {
            x,
            channels,
            size: PATCH,
            y: [target_mean.get(0, row, col), target_max.get(0, row, col)],
            location: location_id(&scene.tile_id, row, col, input.width()),
            year,
        });
    });
    Ok(out)
}
