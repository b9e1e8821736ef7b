//! Slope and aspect from a terrain model using Horn's weighted differences.

use super::Raster;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SlopeAspect {
    /// Degrees from horizontal.
    pub slope: Raster,
    /// Downslope direction in degrees clockwise from north, `[0, 360)`.
    /// Nodata on flat cells.
    pub aspect: Raster,
}

/// Horn gradient over the 3×3 neighborhood of every interior cell.
///
/// Border cells and cells with a nodata neighbor are nodata in both outputs.
pub fn slope_aspect(dtm: &Raster) -> Result<SlopeAspect> {
    dtm.ensure_single_band("terrain model")?;
    let (w, h) = (dtm.width(), dtm.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!("terrain model {w}x{h} is smaller than 3x3")));
    }
    let nodata = dtm.nodata();
    let ps = dtm.pixel_size();
    let mut slope = vec![nodata; w * h];
    let mut aspect = vec![nodata; w * h];
    let z = dtm.band(0);

    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut win = [0.0f64; 9];
            let mut ok = true;
            for (k, slot) in win.iter_mut().enumerate() {
                let v = z[(r + k / 3 - 1) * w + c + k % 3 - 1];
                if dtm.is_nodata(v) {
                    ok = false;
                    break;
                }
                *slot = v as f64;
            }
            if !ok {
                continue;
            }
            // a b c
            // d e f    row 0 is north
            // g h i
            let [a, b, cc, d, _, f, g, hh, i] = win;
            let dz_east = ((cc + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * ps);
            let dz_north = ((a + 2.0 * b + cc) - (g + 2.0 * hh + i)) / (8.0 * ps);
            let grad = dz_east.hypot(dz_north);
            slope[r * w + c] = grad.atan().to_degrees() as f32;
            if grad > 0.0 {
                let az = (-dz_east).atan2(-dz_north).to_degrees();
                let az = if az < 0.0 { az + 360.0 } else { az };
                aspect[r * w + c] = if az >= 360.0 { 0.0 } else { az as f32 };
            }
        }
    }
    Ok(SlopeAspect {
        slope: Raster::new(*dtm.grid(), 1, nodata, slope)?,
        aspect: Raster::new(*dtm.grid(), 1, nodata, aspect)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GridSpec, NODATA};

    fn plane(w: usize, h: usize, ps: f64, f: impl Fn(f64, f64) -> f64) -> Raster {
        let g = GridSpec::new(w, h, ps, 0.0, h as f64 * ps);
        Raster::from_fn(g, NODATA, |r, c| {
            let (x, y) = g.cell_center(r, c);
            f(x, y) as f32
        })
        .unwrap()
    }

    fn interior(r: &Raster) -> Vec<f32> {
        let mut v = Vec::new();
        for row in 1..r.height() - 1 {
            for col in 1..r.width() - 1 {
                v.push(r.get(0, row, col));
            }
        }
        v
    }

    #[test]
    fn flat_terrain() {
        let sa = slope_aspect(&plane(5, 5, 10.0, |_, _| 431.0)).unwrap();
        assert!(interior(&sa.slope).iter().all(|&s| s == 0.0));
        assert!(sa.aspect.data().iter().all(|&a| a == NODATA));
        assert_eq!(sa.slope.get(0, 0, 0), NODATA);
        assert_eq!(sa.slope.get(0, 4, 2), NODATA);
    }

    #[test]
    fn east_rising_plane_faces_west() {
        let t = 30f64.to_radians().tan();
        let sa = slope_aspect(&plane(6, 5, 2.0, |x, _| x * t)).unwrap();
        for s in interior(&sa.slope) {
            assert!((s - 30.0).abs() < 1e-4, "{s}");
        }
        for a in interior(&sa.aspect) {
            assert!((a - 270.0).abs() < 1e-4, "{a}");
        }
    }

    #[test]
    fn north_descending_plane_faces_north() {
        let t = 10f64.to_radians().tan();
        let sa = slope_aspect(&plane(5, 6, 1.0, |_, y| -y * t)).unwrap();
        for s in interior(&sa.slope) {
            assert!((s - 10.0).abs() < 1e-4, "{s}");
        }
        for a in interior(&sa.aspect) {
            assert!(a.abs() < 1e-4 || (a - 360.0).abs() < 1e-4, "{a}");
        }
    }

    #[test]
    fn south_east_facing_plane() {
        // descends toward the south-east: rises to the north-west
        let sa = slope_aspect(&plane(5, 5, 1.0, |x, y| -x + y)).unwrap();
        for a in interior(&sa.aspect) {
            assert!((a - 135.0).abs() < 1e-3, "{a}");
        }
    }

    #[test]
    fn too_small_and_nodata_neighbors() {
        assert!(slope_aspect(&plane(2, 5, 1.0, |x, _| x)).is_err());
        let mut r = plane(5, 5, 1.0, |x, _| x);
        r.set(0, 2, 2, NODATA);
        let sa = slope_aspect(&r).unwrap();
        assert!(interior(&sa.slope).iter().all(|&s| s == NODATA));
    }

    #[test]
    fn offset_and_scale_invariance() {
        let base = plane(7, 7, 5.0, |x, y| (x * 0.37).sin() * 20.0 + y * 0.4 + 500.0);
        let shifted = base.map_valid(|v| v + 250.0);
        let scaled = base.map_valid(|v| v * 1.5);
        let s0 = slope_aspect(&base).unwrap();
        let s1 = slope_aspect(&shifted).unwrap();
        let s2 = slope_aspect(&scaled).unwrap();
        for (a, b) in interior(&s0.slope).iter().zip(interior(&s1.slope)) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
        for (a, b) in interior(&s0.aspect).iter().zip(interior(&s2.aspect)) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
        let steeper = interior(&s2.slope);
        assert!(interior(&s0.slope).iter().zip(&steeper).any(|(a, b)| (a - b).abs() > 0.5));
    }
}
