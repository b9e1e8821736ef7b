//! Raster to RGBA conversion for canvas display.

use vhm_core::change::ChangeObject;
use vhm_core::raster::Raster;

const NODATA_RGBA: [u8; 4] = [0, 0, 0, 0];

type Stop = (f32, [u8; 3]);

const HEIGHT_STOPS: [Stop; 4] = [
    (0.0, [236, 226, 198]),
    (0.15, [173, 205, 120]),
    (0.5, [60, 140, 60]),
    (1.0, [10, 60, 30]),
];

const SLOPE_STOPS: [Stop; 2] = [(0.0, [250, 250, 250]), (1.0, [40, 40, 40])];

const DIVERGING_STOPS: [Stop; 3] = [(0.0, [178, 24, 43]), (0.5, [247, 247, 247]), (1.0, [33, 102, 172])];

/// Linear interpolation between color stops; `t` is clamped to `[0, 1]`.
pub fn ramp(stops: &[Stop], t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let k = stops.iter().position(|s| s.0 >= t).unwrap_or(stops.len() - 1);
    if k == 0 {
        return stops[0].1;
    }
    let ((t0, c0), (t1, c1)) = (stops[k - 1], stops[k]);
    let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
    let mut out = [0u8; 3];
    for i in 0..3 {
        out[i] = (c0[i] as f32 + f * (c1[i] as f32 - c0[i] as f32)).round() as u8;
    }
    out
}

fn map_rgba(r: &Raster, mut color: impl FnMut(f32) -> [u8; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(r.grid().len() * 4);
    for &v in r.band(0) {
        if r.is_nodata(v) {
            out.extend_from_slice(&NODATA_RGBA);
        } else {
            let [a, b, c] = color(v);
            out.extend_from_slice(&[a, b, c, 255]);
        }
    }
    out
}

/// Canopy height from bare ground to `max` meters.
pub fn height_rgba(r: &Raster, max: f32) -> Vec<u8> {
    map_rgba(r, |v| ramp(&HEIGHT_STOPS, v / max))
}

/// Slope in degrees, light (flat) to dark (`max` and steeper).
pub fn slope_rgba(r: &Raster, max: f32) -> Vec<u8> {
    map_rgba(r, |v| ramp(&SLOPE_STOPS, v / max))
}

/// Aspect in degrees as a hue wheel, north red.
pub fn aspect_rgba(r: &Raster) -> Vec<u8> {
    map_rgba(r, |v| hue(v.rem_euclid(360.0)))
}

/// Differences in `[-limit, limit]`, losses red and gains blue.
pub fn diverging_rgba(r: &Raster, limit: f32) -> Vec<u8> {
    map_rgba(r, |v| ramp(&DIVERGING_STOPS, 0.5 + 0.5 * v / limit))
}

/// Faded difference map with every change object painted in its own color.
pub fn objects_rgba(diff: &Raster, objects: &[ChangeObject], limit: f32) -> Vec<u8> {
    let mut out = diverging_rgba(diff, limit);
    for px in out.chunks_exact_mut(4) {
        px[3] = px[3].min(110);
    }
    for o in objects {
        let [r, g, b] = hue((o.id as f32 * 137.508) % 360.0);
        for &i in &o.cells {
            out[4 * i..4 * i + 4].copy_from_slice(&[r, g, b, 255]);
        }
    }
    out
}

fn hue(deg: f32) -> [u8; 3] {
    let h = deg / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let s = |c: f32| (40.0 + 200.0 * c).round() as u8;
    [s(r), s(g), s(b)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use vhm_core::raster::{GridSpec, NODATA};

    fn raster(v: Vec<f32>) -> Raster {
        Raster::new(GridSpec::new(v.len(), 1, 1.0, 0.0, 1.0), 1, NODATA, v).unwrap()
    }

    #[test]
    fn ramp_hits_stops_and_clamps() {
        assert_eq!(ramp(&HEIGHT_STOPS, 0.0), HEIGHT_STOPS[0].1);
        assert_eq!(ramp(&HEIGHT_STOPS, 1.0), HEIGHT_STOPS[3].1);
        assert_eq!(ramp(&HEIGHT_STOPS, 7.0), HEIGHT_STOPS[3].1);
        assert_eq!(ramp(&HEIGHT_STOPS, -1.0), HEIGHT_STOPS[0].1);
        assert_eq!(ramp(&SLOPE_STOPS, 0.5), [145, 145, 145]);
    }

    #[test]
    fn nodata_is_transparent() {
        let out = height_rgba(&raster(vec![NODATA, 20.0]), 45.0);
        assert_eq!(out.len(), 8);
        assert_eq!(&out[..4], &NODATA_RGBA);
        assert_eq!(out[7], 255);
    }

    #[test]
    fn diverging_midpoint_is_neutral() {
        let out = diverging_rgba(&raster(vec![0.0, -20.0, 20.0]), 20.0);
        assert_eq!(&out[..3], &DIVERGING_STOPS[1].1);
        assert_eq!(&out[4..7], &DIVERGING_STOPS[0].1);
        assert_eq!(&out[8..11], &DIVERGING_STOPS[2].1);
    }

    #[test]
    fn objects_are_opaque_over_faded_base() {
        let diff = raster(vec![-15.0, -15.0, 0.0]);
        let objects = vhm_core::change::change_objects(
            &diff,
            &vhm_core::change::ChangeOptions { min_area: 2.0, ..Default::default() },
        )
        .unwrap();
        let out = objects_rgba(&diff, &objects, 20.0);
        assert_eq!((out[3], out[7], out[11]), (255, 255, 110));
        assert_eq!(&out[..4], &out[4..8]);
    }

    #[test]
    fn hue_wheel_primaries() {
        assert_eq!(hue(0.0), [240, 40, 40]);
        assert_eq!(hue(120.0), [40, 240, 40]);
        assert_eq!(hue(240.0), [40, 40, 240]);
    }
}
