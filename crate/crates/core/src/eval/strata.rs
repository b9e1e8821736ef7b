use std::fmt::Write as _;

use super::metrics::{is_selected, metrics_from_pairs, MetricReport};
use crate::raster::Raster;
use crate::{fmt_sig6, Error, Result};

/// Minimum slope, in degrees, for a pixel to enter the aspect strata.
pub const ASPECT_MIN_SLOPE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    Elevation,
    Slope,
    Aspect,
    MixRate,
    TreeCoverDensity,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Elevation,
        Family::Slope,
        Family::Aspect,
        Family::MixRate,
        Family::TreeCoverDensity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Elevation => "elevation",
            Family::Slope => "slope",
            Family::Aspect => "aspect",
            Family::MixRate => "mix_rate",
            Family::TreeCoverDensity => "tree_cover_density",
        }
    }
}

/// A closed-open bin `[lower, upper)` of one stratum family.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumDef {
    pub family: Family,
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl StratumDef {
    pub fn new(family: Family, name: &str, lower: f64, upper: f64) -> Self {
        StratumDef {
            family,
            name: name.to_string(),
            lower,
            upper,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v < self.upper
    }
}

/// The default strata. The lowest elevation bin and the highest bin of
/// every family are open-ended, so each family partitions its pixels.
pub fn default_strata() -> Vec<StratumDef> {
    use Family::*;
    let inf = f64::INFINITY;
    let mut v = vec![
        StratumDef::new(Elevation, "240-599 masl", -inf, 600.0),
        StratumDef::new(Elevation, "600-899 masl", 600.0, 900.0),
        StratumDef::new(Elevation, "900-1199 masl", 900.0, 1200.0),
        StratumDef::new(Elevation, "1200-2500 masl", 1200.0, inf),
    ];
    for (i, lo) in [0.0, 10.0, 20.0, 30.0, 40.0].iter().enumerate() {
        let name = format!("{}-{}.9°", lo, lo + 9.0);
        v.push(StratumDef::new(Slope, &name, *lo, [10.0, 20.0, 30.0, 40.0, 50.0][i]));
    }
    v.push(StratumDef::new(Slope, "≥50°", 50.0, inf));
    let edges = [0.0, 45.0, 90.0, 135.0, 180.0, 215.0, 270.0, 315.0];
    for (i, &lo) in edges.iter().enumerate() {
        let (hi, name) = match edges.get(i + 1) {
            Some(&hi) => (hi, format!("{}-{}.9°", lo, hi - 1.0)),
            None => (inf, format!("{lo}-360°")),
        };
        v.push(StratumDef::new(Aspect, &name, lo, hi));
    }
    v.extend([
        StratumDef::new(MixRate, "0-24.9%", 0.0, 25.0),
        StratumDef::new(MixRate, "25-74.9%", 25.0, 75.0),
        StratumDef::new(MixRate, "75-100%", 75.0, inf),
        StratumDef::new(TreeCoverDensity, "0-79.9%", 0.0, 80.0),
        StratumDef::new(TreeCoverDensity, "80-100%", 80.0, inf),
    ]);
    v
}

/// Rejects empty bins and overlapping bins within a family.
pub fn validate_strata(defs: &[StratumDef]) -> Result<()> {
    for (i, a) in defs.iter().enumerate() {
        if !(a.lower < a.upper) {
            return Err(Error::invalid(format!("stratum {:?} has lower >= upper", a.name)));
        }
        for b in &defs[i + 1..] {
            if a.family == b.family && a.lower < b.upper && b.lower < a.upper {
                return Err(Error::invalid(format!("strata {:?} and {:?} overlap", a.name, b.name)));
            }
        }
    }
    Ok(())
}

/// Stratum source rasters, aligned with the evaluated maps. Aspect strata
/// need both `aspect` and `slope`.
#[derive(Debug, Clone, Default)]
pub struct StrataRasters {
    pub elevation: Option<Raster>,
    pub slope: Option<Raster>,
    pub aspect: Option<Raster>,
    pub mix_rate: Option<Raster>,
    pub tree_cover: Option<Raster>,
}

impl StrataRasters {
    fn source(&self, f: Family) -> Option<&Raster> {
        match f {
            Family::Elevation => self.elevation.as_ref(),
            Family::Slope => self.slope.as_ref(),
            Family::Aspect => self.aspect.as_ref().filter(|_| self.slope.is_some()),
            Family::MixRate => self.mix_rate.as_ref(),
            Family::TreeCoverDensity => self.tree_cover.as_ref(),
        }
    }

    /// Stratum value of cell `i` for `f`; `None` where the source is nodata
    /// or the family guard fails.
    fn value(&self, f: Family, i: usize) -> Option<f64> {
        let r = self.source(f)?;
        let v = r.data()[i];
        if r.is_nodata(v) {
            return None;
        }
        if f == Family::Aspect {
            let s = self.slope.as_ref()?;
            let sv = s.data()[i];
            if s.is_nodata(sv) || (sv as f64) < ASPECT_MIN_SLOPE {
                return None;
            }
        }
        Some(v as f64)
    }
}

/// One row of a stratified table; `report` is `None` for an empty stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumReport {
    pub family: String,
    pub stratum: String,
    pub n: usize,
    pub report: Option<MetricReport>,
}

/// Metrics for the whole selection (family `all`), then for every family
/// with a source raster: a family total over the pixels it evaluates
/// (stratum `all`) followed by one row per stratum.
pub fn stratified_metrics(
    pred: &Raster,
    reference: &Raster,
    mask: &Raster,
    rasters: &StrataRasters,
    defs: &[StratumDef],
) -> Result<Vec<StratumReport>> {
    validate_strata(defs)?;
    for r in [pred, reference, mask] {
        r.ensure_single_band("evaluation input")?;
    }
    pred.ensure_aligned(reference)?;
    pred.ensure_aligned(mask)?;
    for f in Family::ALL {
        if let Some(r) = rasters.source(f) {
            r.ensure_single_band(f.as_str())?;
            pred.ensure_aligned(r)?;
        }
    }
    if let Some(s) = &rasters.slope {
        pred.ensure_aligned(s)?;
    }
    let cells: Vec<usize> = (0..pred.grid().len())
        .filter(|&i| {
            is_selected(mask, mask.data()[i]) && !pred.is_nodata(pred.data()[i]) && !reference.is_nodata(reference.data()[i])
        })
        .collect();
    let pair = |i: usize| (pred.data()[i] as f64, reference.data()[i] as f64);
    let row = |family: &str, stratum: &str, pairs: Vec<(f64, f64)>| StratumReport {
        family: family.to_string(),
        stratum: stratum.to_string(),
        n: pairs.len(),
        report: metrics_from_pairs(&pairs).ok(),
    };

    let mut out = vec![row("all", "all", cells.iter().map(|&i| pair(i)).collect())];
    for f in Family::ALL {
        let fdefs: Vec<&StratumDef> = defs.iter().filter(|d| d.family == f).collect();
        if fdefs.is_empty() || rasters.source(f).is_none() {
            continue;
        }
        let mut total = Vec::new();
        let mut per: Vec<Vec<(f64, f64)>> = vec![Vec::new(); fdefs.len()];
        for &i in &cells {
            let Some(v) = rasters.value(f, i) else { continue };
            if let Some(k) = fdefs.iter().position(|d| d.contains(v)) {
                per[k].push(pair(i));
                total.push(pair(i));
            }
        }
        out.push(row(f.as_str(), "all", total));
        for (d, pairs) in fdefs.iter().zip(per) {
            out.push(row(f.as_str(), &d.name, pairs));
        }
    }
    Ok(out)
}

pub const STRATA_HEADER: &str = "family,stratum,n,r2,mean_vh,mbe,mae,rmse,maer";

pub fn strata_csv(rows: &[StratumReport]) -> String {
    let mut s = format!("{STRATA_HEADER}\n");
    for r in rows {
        match &r.report {
            Some(m) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    r.family,
                    r.stratum,
                    r.n,
                    fmt_sig6(m.r2),
                    fmt_sig6(m.mean_vh),
                    fmt_sig6(m.mbe),
                    fmt_sig6(m.mae),
                    fmt_sig6(m.rmse),
                    fmt_sig6(m.maer)
                );
            }
            None => {
                let _ = writeln!(s, "{},{},{},,,,,,", r.family, r.stratum, r.n);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GridSpec, NODATA};

    fn row_raster(v: &[f32]) -> Raster {
        Raster::new(GridSpec::new(v.len(), 1, 10.0, 0.0, 10.0), 1, NODATA, v.to_vec()).unwrap()
    }

    #[test]
    fn defaults_are_valid_and_named() {
        let d = default_strata();
        validate_strata(&d).unwrap();
        let names: Vec<&str> = d.iter().filter(|s| s.family == Family::Elevation).map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["240-599 masl", "600-899 masl", "900-1199 masl", "1200-2500 masl"]);
        let aspect: Vec<&str> = d.iter().filter(|s| s.family == Family::Aspect).map(|s| s.name.as_str()).collect();
        assert_eq!(aspect[4], "180-214.9°");
        assert_eq!(aspect[5], "215-269.9°");
        assert_eq!(aspect[7], "315-360°");
        assert_eq!(d.iter().filter(|s| s.family == Family::Slope).count(), 6);
    }

    #[test]
    fn overlap_rejected() {
        let d = [
            StratumDef::new(Family::Slope, "a", 0.0, 10.0),
            StratumDef::new(Family::Slope, "b", 9.0, 20.0),
        ];
        assert!(validate_strata(&d).is_err());
        assert!(validate_strata(&[StratumDef::new(Family::Slope, "c", 5.0, 5.0)]).is_err());
    }

    #[test]
    fn elevation_bins_and_aspect_guard() {
        let elev = row_raster(&[250.0, 700.0, 1000.0, 2400.0]);
        let pred = row_raster(&[10.0, 11.0, 12.0, 13.0]);
        let reference = row_raster(&[9.0, 11.0, 12.0, 14.0]);
        let mask = row_raster(&[1.0; 4]);
        let rasters = StrataRasters {
            elevation: Some(elev),
            slope: Some(row_raster(&[20.0, 35.0, 20.0, 40.0])),
            aspect: Some(row_raster(&[10.0, 100.0, 200.0, 300.0])),
            ..Default::default()
        };
        let rows = stratified_metrics(&pred, &reference, &mask, &rasters, &default_strata()).unwrap();
        let n = |f: &str, s: &str| rows.iter().find(|r| r.family == f && r.stratum == s).unwrap().n;
        assert_eq!(n("all", "all"), 4);
        for s in ["240-599 masl", "600-899 masl", "900-1199 masl", "1200-2500 masl"] {
            assert_eq!(n("elevation", s), 1);
        }
        assert_eq!(n("aspect", "all"), 2);
        assert_eq!(n("aspect", "0-44.9°"), 0);
        assert_eq!(n("aspect", "90-134.9°"), 1);
        assert_eq!(n("aspect", "270-314.9°"), 1);
        assert!(rows.iter().all(|r| r.family != "mix_rate"));
        let csv = strata_csv(&rows);
        assert!(csv.starts_with("family,stratum,n,r2,mean_vh,mbe,mae,rmse,maer\nall,all,4,"));
        assert!(csv.contains("aspect,0-44.9°,0,,,,,,\n"));
    }
}
