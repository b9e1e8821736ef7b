use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use vhm_core::change::{
    attach_s2_means, boxstats_csv, bucket_stats, change_mask_f1, change_objects, default_buckets, f1_csv, objects_csv,
    unchanged_forest_values, ChangeOptions, Connectivity,
};
use vhm_core::eval::{
    build_eval_mask, compute_metrics, default_strata, density_scatter, density_scatter_csv, metrics_csv, residual_bins,
    residual_bins_csv, strata_csv, stratified_metrics, StrataRasters, OUTLIER_CAP,
};
use vhm_core::kv::{parse_list, KvConfig};
use vhm_core::model::{grad_check, Model, ModelConfig};
use vhm_core::pipeline::{
    annual_composite, count_valid_patches, extract_patches, mask_invalid, predict_scenes, read_manifest, select_scenes,
    select_training_scenes, Scene, SceneRecord,
};
use vhm_core::raster::{
    bilinear_resample, pool_resample, raster_diff, read_raster, slope_aspect, write_raster, PoolMode, Raster,
};
use vhm_core::synth::{generate, write_world, SynthConfig};
use vhm_core::tensor::GradCheckOptions;
use vhm_core::train::{fit, write_log_csv, NormStats, PatchSample, TrainConfig};
use vhm_core::{fmt_sig6, Error};

use crate::{
    ChangeArgs, CliError, Command, CompositeArgs, EvalArgs, GradcheckArgs, PredictArgs, ResampleArgs, StrataArgs,
    SynthArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub const PREDICTIONS_HEADER: &str = "date,mean_path,max_path";

const GRADCHECK_LIMIT: f64 = 1e-4;

pub fn run(cli: crate::Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Resample(a) => resample(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Composite(a) => composite(a),
        Command::Eval(a) => eval(a),
        Command::Strata(a) => strata(a),
        Command::Change(a) => change(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<KvConfig> {
    Ok(match path {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    })
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Flag value if given, else the config path under `key`.
fn flag_or_key(flag: Option<&PathBuf>, kv: &KvConfig, key: &str) -> Option<PathBuf> {
    flag.cloned().or_else(|| kv.path(key))
}

fn synth(a: SynthArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let mut cfg = SynthConfig::default().with_kv(&kv)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let world = generate(&cfg)?;
    out_dir(&a.out)?;
    write_world(&world, &a.out)?;
    println!(
        "synthetic world: {}x{} m, {} scenes, {} clearings -> {}",
        cfg.extent,
        cfg.extent,
        world.scenes.len(),
        world.clearings.len(),
        a.out.display()
    );
    Ok(())
}

fn resample(a: ResampleArgs) -> Result<()> {
    let kv = KvConfig::load(&a.config)?;
    let input = read_raster(kv.require_path("input")?)?;
    let mode = kv.require("mode")?;
    out_dir(&a.out)?;
    let output = |default: &str| a.out.join(kv.get("output").unwrap_or(default));
    match mode {
        "mean" | "max" => {
            let factor: usize = kv
                .parse_value("factor")?
                .ok_or_else(|| Error::invalid("pooling needs a factor"))?;
            let pm: PoolMode = mode.parse()?;
            write_raster(&pool_resample(&input, factor, pm)?, output("resampled.rstr"))?;
        }
        "bilinear" => {
            let like = read_raster(kv.require_path("like")?)?;
            write_raster(&bilinear_resample(&input, like.grid())?, output("resampled.rstr"))?;
        }
        "terrain" => {
            let sa = slope_aspect(&input)?;
            write_raster(&sa.slope, a.out.join("slope.rstr"))?;
            write_raster(&sa.aspect, a.out.join("aspect.rstr"))?;
        }
        m => return Err(Error::invalid(format!("unknown resample mode {m:?}")).into()),
    }
    Ok(())
}

/// Patches of the two training scenes of every configured year.
///
/// Keys: `years`, `manifest`, `ref_mean_YYYY`, `ref_max_YYYY` and, with the
/// terrain channel, `dtm`.
pub fn training_samples(kv: &KvConfig, with_dtm: bool) -> vhm_core::Result<Vec<PatchSample>> {
    let years: Vec<u16> = parse_list(kv.require("years")?)?;
    let scenes = load_scenes(kv)?;
    let dtm = with_dtm.then(|| read_raster(kv.require_path("dtm")?)).transpose()?;
    let mut out = Vec::new();
    for y in years {
        let mean = read_raster(kv.require_path(&format!("ref_mean_{y}"))?)?;
        let max = read_raster(kv.require_path(&format!("ref_max_{y}"))?)?;
        let candidates = select_scenes(&scenes, y as i32);
        let counts = candidates
            .iter()
            .map(|&i| count_valid_patches(&scenes[i], &mean, &max, dtm.as_ref()))
            .collect::<vhm_core::Result<Vec<_>>>()?;
        for i in select_training_scenes(&scenes, &candidates, &counts) {
            let s = &scenes[i];
            let p = extract_patches(s, &mean, &max, dtm.as_ref())?;
            log::info!("{} {}: {} patches", s.tile_id, s.date, p.len());
            out.extend(p);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no training patches in the configured years"));
    }
    Ok(out)
}

fn load_scenes(kv: &KvConfig) -> vhm_core::Result<Vec<Scene>> {
    read_manifest(kv.require_path("manifest")?)?
        .iter()
        .map(SceneRecord::load)
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let kv = KvConfig::load(&a.config)?;
    let with_dtm = match a.with_dtm {
        Some(v) => v,
        None => kv.parse_or("with_dtm", true)?,
    };
    let channels = if with_dtm { 5 } else { 4 };
    let mut mcfg = ModelConfig::desk(channels).with_kv(&kv)?;
    if let Some(m) = a.width_mult {
        mcfg.width_multiplier = m;
        mcfg.widths()?;
    }
    if mcfg.in_channels != channels {
        return Err(CliError::Validation(format!(
            "in_channels {} contradicts with_dtm = {with_dtm}",
            mcfg.in_channels
        )));
    }
    let mut tcfg = TrainConfig::desk().with_kv(&kv)?;
    if let Some(s) = a.seed {
        tcfg.seed = s;
    }
    if let Some(n) = a.iterations {
        tcfg.iterations = n;
    }
    tcfg.validate()?;

    let samples = training_samples(&kv, with_dtm)?;
    let mut model = Model::<f32>::build(&mcfg, tcfg.seed)?;
    let report = fit(&mut model, &samples, &tcfg)?;

    out_dir(&a.out)?;
    model.save(a.out.join("model.vhmw"), a.out.join("model.cfg"))?;
    let mut norm = KvConfig::new();
    report.norm.to_kv(&mut norm);
    norm.set("with_dtm", with_dtm);
    tcfg.to_kv(&mut norm);
    norm.save(a.out.join("norm.cfg"))?;
    write_log_csv(a.out.join("train_log.csv"), &report.log)?;
    let summary = format!(
        "train_samples,val_samples,best_iteration,best_val_mae,baseline_val_mae\n{},{},{},{},{}\n",
        report.split.train.len(),
        report.split.val.len(),
        report.best_iteration,
        fmt_sig6(report.best_val_mae),
        fmt_sig6(report.baseline_val_mae)
    );
    fs::write(a.out.join("train_summary.csv"), summary)?;
    println!(
        "trained {} iterations on {} patches: best val MAE {} m at iteration {} (constant baseline {} m)",
        tcfg.iterations,
        report.split.train.len(),
        fmt_sig6(report.best_val_mae),
        report.best_iteration,
        fmt_sig6(report.baseline_val_mae)
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let kv = KvConfig::load(&a.config)?;
    let model_dir = kv.path("model_dir").unwrap_or_else(|| a.out.clone());
    let model = Model::<f32>::load(model_dir.join("model.vhmw"), model_dir.join("model.cfg"))?;
    let nkv = KvConfig::load(model_dir.join("norm.cfg"))?;
    let norm = NormStats::from_kv(&nkv)?;
    let with_dtm: bool = nkv.parse_or("with_dtm", model.config().in_channels == 5)?;
    let dtm = with_dtm.then(|| read_raster(kv.require_path("dtm")?)).transpose()?;

    let scenes = load_scenes(&kv)?;
    let picked = select_scenes(&scenes, a.year as i32);
    if picked.is_empty() {
        return Err(CliError::Validation(format!("no leaf-on scenes in {}", a.year)));
    }
    let tile = &scenes[picked[0]].tile_id;
    if picked.iter().any(|&i| &scenes[i].tile_id != tile) {
        return Err(CliError::Validation("predict expects scenes of a single tile".into()));
    }
    let refs: Vec<&Scene> = picked.iter().map(|&i| &scenes[i]).collect();
    let preds = predict_scenes(&model, &refs, dtm.as_ref(), &norm)?;

    let sub = format!("pred_{}", a.year);
    fs::create_dir_all(a.out.join(&sub))?;
    let mut list = format!("{PREDICTIONS_HEADER}\n");
    for (s, (mean, max)) in refs.iter().zip(&preds) {
        let stem = format!("{sub}/{}_{}", s.tile_id, s.date.format("%Y%m%d"));
        let (mp, xp) = (format!("{stem}_mean.rstr"), format!("{stem}_max.rstr"));
        write_raster(&mask_invalid(mean, s)?, a.out.join(&mp))?;
        write_raster(&mask_invalid(max, s)?, a.out.join(&xp))?;
        let _ = writeln!(list, "{},{mp},{xp}", s.date.format("%Y-%m-%d"));
    }
    fs::write(a.out.join(format!("predictions_{}.csv", a.year)), list)?;
    println!("predicted {} scenes of {}", refs.len(), a.year);
    Ok(())
}

/// Mean and max prediction paths of a `predictions_YYYY.csv` list,
/// resolved against the list's directory.
pub fn read_prediction_list(path: &Path) -> vhm_core::Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(PREDICTIONS_HEADER) {
        return Err(Error::invalid(format!("{} lacks the header {PREDICTIONS_HEADER}", path.display())));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(Error::invalid(format!("bad prediction list row {l:?}")));
            }
            Ok((base.join(f[1]), base.join(f[2])))
        })
        .collect()
}

fn composite(a: CompositeArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let list = a
        .pred
        .clone()
        .or_else(|| kv.path("pred"))
        .unwrap_or_else(|| a.out.join(format!("predictions_{}.csv", a.year)));
    let entries = read_prediction_list(&list)?;
    let mut means = Vec::new();
    let mut maxes = Vec::new();
    for (m, x) in &entries {
        means.push(read_raster(m)?);
        maxes.push(read_raster(x)?);
    }
    let map = annual_composite(&means.iter().collect::<Vec<_>>(), &maxes.iter().collect::<Vec<_>>(), a.year)?;
    out_dir(&a.out)?;
    map.write(&a.out)?;
    println!("composited {} scenes into mean_{y}.rstr and max_{y}.rstr", entries.len(), y = a.year);
    Ok(())
}

fn eval_mask(kv: &KvConfig, reference: &Raster, forest: &Raster) -> Result<Raster> {
    let cap: f32 = kv.parse_or("outlier_cap", OUTLIER_CAP)?;
    Ok(build_eval_mask(reference, forest, cap)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let pred = read_raster(&a.pred)?;
    let reference = read_raster(&a.reference)?;
    let mask = eval_mask(&kv, &reference, &read_raster(&a.mask)?)?;
    let bin_width: f64 = kv.parse_or("residual_bin_width", 5.0)?;
    let cell: f64 = kv.parse_or("scatter_cell", 1.0)?;
    let m = compute_metrics(&pred, &reference, &mask)?;
    out_dir(&a.out)?;
    fs::write(a.out.join("metrics.csv"), metrics_csv(&m))?;
    fs::write(
        a.out.join("residual_bins.csv"),
        residual_bins_csv(&residual_bins(&pred, &reference, &mask, bin_width)?),
    )?;
    fs::write(
        a.out.join("scatter.csv"),
        density_scatter_csv(&density_scatter(&pred, &reference, &mask, cell)?),
    )?;
    println!(
        "n {} MBE {} MAE {} RMSE {} r2 {}",
        m.n,
        fmt_sig6(m.mbe),
        fmt_sig6(m.mae),
        fmt_sig6(m.rmse),
        fmt_sig6(m.r2)
    );
    Ok(())
}

fn strata(a: StrataArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let pred = read_raster(&a.pred)?;
    let reference = read_raster(&a.reference)?;
    let mask = eval_mask(&kv, &reference, &read_raster(&a.mask)?)?;
    let optional = |key: &str| kv.path(key).map(read_raster).transpose();
    let mut rasters = StrataRasters {
        mix_rate: optional("mix_rate")?,
        tree_cover: optional("tree_cover")?,
        ..Default::default()
    };
    if let Some(p) = flag_or_key(a.dtm.as_ref(), &kv, "dtm") {
        let dtm = read_raster(p)?;
        let sa = slope_aspect(&dtm)?;
        rasters.elevation = Some(dtm);
        rasters.slope = Some(sa.slope);
        rasters.aspect = Some(sa.aspect);
    }
    let rows = stratified_metrics(&pred, &reference, &mask, &rasters, &default_strata())?;
    out_dir(&a.out)?;
    fs::write(a.out.join("strata.csv"), strata_csv(&rows))?;
    println!("{} strata rows", rows.len());
    Ok(())
}

fn change_options(kv: &KvConfig) -> Result<ChangeOptions> {
    let d = ChangeOptions::default();
    let connectivity = match kv.parse_or("connectivity", 8u8)? {
        8 => Connectivity::Eight,
        4 => Connectivity::Four,
        c => return Err(CliError::Validation(format!("connectivity must be 4 or 8, got {c}"))),
    };
    Ok(ChangeOptions {
        threshold: kv.parse_or("change_threshold", d.threshold)?,
        min_area: kv.parse_or("min_area", d.min_area)?,
        connectivity,
    })
}

fn change(a: ChangeArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let opts = change_options(&kv)?;
    let diff1m = flag_or_key(a.diff1m.as_ref(), &kv, "diff1m")
        .ok_or_else(|| CliError::Validation("change needs --diff1m or a diff1m config key".into()))?;
    let diff1m = read_raster(diff1m)?;
    let diff10m = match flag_or_key(a.diff10m.as_ref(), &kv, "diff10m") {
        Some(p) => read_raster(p)?,
        None => {
            let (Some(b), Some(f)) = (kv.path("before_10m"), kv.path("after_10m")) else {
                return Err(CliError::Validation(
                    "change needs --diff10m or before_10m and after_10m config keys".into(),
                ));
            };
            raster_diff(&read_raster(f)?, &read_raster(b)?)?
        }
    };
    let forest = flag_or_key(a.mask.as_ref(), &kv, "forest_mask").map(read_raster).transpose()?;

    let mut objects = change_objects(&diff1m, &opts)?;
    attach_s2_means(&mut objects, diff1m.grid(), &diff10m)?;
    let unchanged = match &forest {
        Some(f) => unchanged_forest_values(&objects, diff1m.grid(), &diff10m, f)?,
        None => Vec::new(),
    };
    out_dir(&a.out)?;
    write_raster(&diff10m, a.out.join("diff_10m.rstr"))?;
    fs::write(a.out.join("objects.csv"), objects_csv(&objects))?;
    fs::write(
        a.out.join("boxstats.csv"),
        boxstats_csv(&bucket_stats(&objects, &default_buckets(), &unchanged)),
    )?;
    print!("{} change objects", objects.len());
    if let Some(p) = kv.path("change_reference") {
        let r = change_mask_f1(&diff10m, opts.threshold as f32, &read_raster(p)?, forest.as_ref())?;
        fs::write(a.out.join("f1.csv"), f1_csv(&r))?;
        print!(", pixel F1 {}", fmt_sig6(r.f1));
    }
    println!();
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let kv = load_config(a.config.as_deref())?;
    let mut cfg = ModelConfig::tiny(5).with_kv(&kv)?;
    if let Some(m) = a.width_mult {
        cfg.width_multiplier = m;
        cfg.widths()?;
    }
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(CliError::Validation(format!("eps must be positive, got {}", a.eps)));
    }
    let opts = GradCheckOptions {
        eps: a.eps,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&cfg, a.seed, &opts)?;
    let mut csv = String::from("kind,checked,refined,skipped,max_rel_err\n");
    for k in &report.kinds {
        println!(
            "{:<13} checked {:>4}  refined {:>3}  skipped {:>3}  max rel err {:.3e}",
            k.kind.as_str(),
            k.checked,
            k.refined,
            k.skipped,
            k.max_rel_err
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            k.kind.as_str(),
            k.checked,
            k.refined,
            k.skipped,
            fmt_sig6(k.max_rel_err)
        );
    }
    let max = report.max_rel_err();
    println!("max relative error {max:.3e}");
    if let Some(out) = &a.out {
        out_dir(out)?;
        fs::write(out.join("gradcheck.csv"), csv)?;
    }
    if max < GRADCHECK_LIMIT {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "max relative error {max:.3e} is not below {GRADCHECK_LIMIT:e}"
        )))
    }
}
