use chrono::{Datelike, NaiveDate};

use super::Scene;

/// Scenes kept per tile and year for inference.
pub const MAX_SCENES: usize = 10;
/// Scenes kept per tile and year for training.
pub const TRAIN_SCENES: usize = 2;

/// Leaf-on season, May 1 to September 30 inclusive.
pub fn in_season(date: NaiveDate, year: i32) -> bool {
    date.year() == year && (5..=9).contains(&date.month())
}

/// Indices of the in-season scenes of `year` with the lowest mean cloud
/// probability, at most [`MAX_SCENES`], clearest first.
pub fn select_scenes(scenes: &[Scene], year: i32) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scenes.len()).filter(|&i| in_season(scenes[i].date, year)).collect();
    if idx.is_empty() {
        log::warn!("no scenes in the {year} leaf-on season");
        return idx;
    }
    let cloud: Vec<f64> = scenes.iter().map(Scene::mean_cloud).collect();
    idx.sort_by(|&a, &b| {
        cloud[a]
            .total_cmp(&cloud[b])
            .then(scenes[a].date.cmp(&scenes[b].date))
            .then(a.cmp(&b))
    });
    idx.truncate(MAX_SCENES);
    idx
}

/// Keeps the [`TRAIN_SCENES`] candidates with the most valid patches; on
/// equal counts the earlier date wins.
pub fn select_training_scenes(scenes: &[Scene], candidates: &[usize], valid_patches: &[usize]) -> Vec<usize> {
    assert_eq!(candidates.len(), valid_patches.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        valid_patches[b]
            .cmp(&valid_patches[a])
            .then(scenes[candidates[a]].date.cmp(&scenes[candidates[b]].date))
            .then(candidates[a].cmp(&candidates[b]))
    });
    order.into_iter().take(TRAIN_SCENES).map(|k| candidates[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GridSpec, Raster, NODATA};

    fn scene(date: (i32, u32, u32), cloud: f32) -> Scene {
        let g = GridSpec::new(2, 2, 10.0, 0.0, 20.0);
        Scene::new(
            "t",
            NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(),
            Raster::filled(g, 4, 0.1, NODATA).unwrap(),
            Raster::filled(g, 1, cloud, NODATA).unwrap(),
            Raster::filled(g, 1, 4.0, NODATA).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn season_filter() {
        let s = [scene((2020, 1, 5), 0.0), scene((2020, 3, 5), 0.0), scene((2020, 6, 5), 0.0), scene((2020, 7, 5), 0.0)];
        assert_eq!(select_scenes(&s, 2020), vec![2, 3]);
        assert!(in_season(NaiveDate::from_ymd_opt(2020, 5, 1).unwrap(), 2020));
        assert!(in_season(NaiveDate::from_ymd_opt(2020, 9, 30).unwrap(), 2020));
        assert!(!in_season(NaiveDate::from_ymd_opt(2020, 10, 1).unwrap(), 2020));
        assert!(!in_season(NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(), 2020));
        assert!(select_scenes(&s[..2], 2020).is_empty());
    }

    #[test]
    fn keeps_ten_clearest() {
        let s: Vec<Scene> = (0..12).map(|i| scene((2020, 5 + i / 3, 1 + i), 50.0 - i as f32)).collect();
        let sel = select_scenes(&s, 2020);
        assert_eq!(sel, vec![11, 10, 9, 8, 7, 6, 5, 4, 3, 2]);
    }

    #[test]
    fn training_tie_prefers_earlier_date() {
        let s = [scene((2020, 8, 1), 0.0), scene((2020, 6, 1), 0.0), scene((2020, 7, 1), 0.0)];
        assert_eq!(select_training_scenes(&s, &[0, 1, 2], &[5, 5, 9]), vec![2, 1]);
        assert_eq!(select_training_scenes(&s, &[0, 1, 2], &[5, 5, 5]), vec![1, 2]);
    }
}
