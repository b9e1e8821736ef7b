//! Center-pixel supervised training with Adam.
//!
//! Samples are split by location into training and validation sets,
//! inputs are normalized with training-split statistics, and every
//! iteration draws the next `batch_size` samples from a stream of shuffled
//! epochs of `epoch_sample` patches. The parameters with the lowest
//! validation MAE are restored at the end.

mod adam;
mod loss;
mod norm;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{center_mae, loss};
pub use norm::{apply_norm, compute_norm_stats, NormStats};

use crate::kv::KvConfig;
use crate::model::Model;
use crate::tensor::{BnMode, Graph, ParamStore, Real, Recorder, Shape, Tape, Tensor};
use crate::{fmt_sig6, Error, Result};

/// Side length of a training patch.
pub const PATCH: usize = 15;

/// One training example: a channel-major `channels × size × size` input
/// patch and the mean and max height at its center.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub x: Vec<f32>,
    pub channels: usize,
    pub size: usize,
    pub y: [f32; 2],
    /// Center cell; samples sharing it always land in the same split.
    pub location: u64,
    pub year: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weight_decay: f64,
    pub iterations: u64,
    pub epoch_sample: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub val_interval: u64,
    pub log_interval: u64,
    /// Start the output biases at the training-target means.
    pub head_bias_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            adam: AdamConfig::default(),
            weight_decay: 1e-5,
            iterations: 500_000,
            epoch_sample: 64_000,
            val_fraction: 0.2,
            seed: 0,
            val_interval: 1000,
            log_interval: 100,
            head_bias_init: true,
        }
    }
}

impl TrainConfig {
    /// Short-run settings for desk-scale worlds: 5,000 iterations at a
    /// learning rate of 1e-3.
    pub fn desk() -> Self {
        TrainConfig {
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            iterations: 5000,
            val_interval: 500,
            log_interval: 100,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("val_fraction must lie strictly between 0 and 1"));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning_rate and adam_eps must be positive, weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.epoch_sample == 0 || self.val_interval == 0 || self.log_interval == 0 {
            return Err(Error::invalid("batch_size, epoch_sample and intervals must be positive"));
        }
        Ok(())
    }

    pub fn with_kv(&self, kv: &KvConfig) -> Result<Self> {
        let c = TrainConfig {
            batch_size: kv.parse_or("batch_size", self.batch_size)?,
            adam: AdamConfig {
                learning_rate: kv.parse_or("learning_rate", self.adam.learning_rate)?,
                beta1: kv.parse_or("adam_beta1", self.adam.beta1)?,
                beta2: kv.parse_or("adam_beta2", self.adam.beta2)?,
                eps: kv.parse_or("adam_eps", self.adam.eps)?,
            },
            weight_decay: kv.parse_or("weight_decay", self.weight_decay)?,
            iterations: kv.parse_or("iterations", self.iterations)?,
            epoch_sample: kv.parse_or("epoch_sample", self.epoch_sample)?,
            val_fraction: kv.parse_or("val_fraction", self.val_fraction)?,
            seed: kv.parse_or("seed", self.seed)?,
            val_interval: kv.parse_or("val_interval", self.val_interval)?,
            log_interval: kv.parse_or("log_interval", self.log_interval)?,
            head_bias_init: kv.parse_or("head_bias_init", self.head_bias_init)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self, kv: &mut KvConfig) {
        kv.set("batch_size", self.batch_size);
        kv.set("learning_rate", self.adam.learning_rate);
        kv.set("adam_beta1", self.adam.beta1);
        kv.set("adam_beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("weight_decay", self.weight_decay);
        kv.set("iterations", self.iterations);
        kv.set("epoch_sample", self.epoch_sample);
        kv.set("val_fraction", self.val_fraction);
        kv.set("seed", self.seed);
        kv.set("val_interval", self.val_interval);
        kv.set("log_interval", self.log_interval);
        kv.set("head_bias_init", self.head_bias_init);
    }
}

/// Sample indices of the two splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Assigns `round(val_fraction · locations)` randomly chosen locations to
/// validation and the rest to training.
pub fn split_by_location(samples: &[PatchSample], val_fraction: f64, seed: u64) -> Result<Split> {
    let mut locs: Vec<u64> = samples.iter().map(|s| s.location).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    locs.shuffle(&mut rng);
    let n_val = (val_fraction * locs.len() as f64).round() as usize;
    if n_val == 0 || n_val == locs.len() {
        return Err(Error::invalid(format!(
            "{} locations cannot be split {:.0}:{:.0}",
            locs.len(),
            100.0 * (1.0 - val_fraction),
            100.0 * val_fraction
        )));
    }
    let val_locs: BTreeSet<u64> = locs[..n_val].iter().copied().collect();
    let (val, train) = (0..samples.len()).partition(|&i| val_locs.contains(&samples[i].location));
    Ok(Split { train, val })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub split: SplitKind,
    pub loss: f64,
    pub mae: f64,
    pub mbe: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("iteration,split,loss,mae,mbe\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration,
            r.split.as_str(),
            fmt_sig6(r.loss),
            fmt_sig6(r.mae),
            fmt_sig6(r.mbe)
        );
    }
    s
}

pub fn write_log_csv(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    std::fs::write(path, log_csv(rows))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub log: Vec<LogRow>,
    pub norm: NormStats,
    pub split: Split,
    pub best_iteration: u64,
    pub best_val_mae: f64,
    /// Validation MAE of predicting the training-target means everywhere.
    pub baseline_val_mae: f64,
}

/// Normalized inputs and targets of one split, stored contiguously.
struct Batchable {
    x: Vec<f32>,
    y: Vec<[f32; 2]>,
    channels: usize,
    size: usize,
}

impl Batchable {
    fn new(samples: &[PatchSample], idx: &[usize], norm: &NormStats) -> Self {
        let first = &samples[idx[0]];
        let mut x = Vec::with_capacity(idx.len() * first.x.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            let start = x.len();
            x.extend_from_slice(&samples[i].x);
            norm.apply(&mut x[start..]);
            y.push(samples[i].y);
        }
        Batchable {
            x,
            y,
            channels: first.channels,
            size: first.size,
        }
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn batch<T: Real>(&self, rows: &[usize]) -> (Tensor<T>, Vec<[f32; 2]>) {
        let per = self.channels * self.size * self.size;
        let mut vals = Vec::with_capacity(rows.len() * per);
        for &r in rows {
            vals.extend(self.x[r * per..(r + 1) * per].iter().map(|&v| T::from_f64(v as f64)));
        }
        let shape = Shape::new(rows.len(), self.channels, self.size, self.size);
        let t = Tensor::from_nchw(shape, &vals).expect("consistent patch shape");
        (t, rows.iter().map(|&r| self.y[r]).collect())
    }
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode center predictions as `[mean, max]` pairs.
fn predict_rows<T: Real>(model: &Model<T>, data: &Batchable) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(data.len());
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch::<T>(chunk);
        let p = model.predict_center(&x)?;
        out.extend(p.raw().chunks_exact(2).map(|c| [c[0].as_f64(), c[1].as_f64()]));
    }
    Ok(out)
}

fn mae_mbe(pred: &[[f64; 2]], target: &[[f32; 2]]) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        for c in 0..2 {
            let d = p[c] - t[c] as f64;
            a += d.abs();
            b += d;
        }
    }
    let n = (2 * pred.len()) as f64;
    (a / n, b / n)
}

/// MAE and MBE (over both outputs) of `model` on `samples`.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[PatchSample], norm: &NormStats) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let data = Batchable::new(samples, &idx, norm);
    Ok(mae_mbe(&predict_rows(model, &data)?, &data.y))
}

fn add_l2_grad<T: Real>(params: &mut ParamStore<T>, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for p in params.iter_mut().filter(|p| p.kind.is_trainable()) {
        for (g, &v) in p.grad.iter_mut().zip(&p.value) {
            *g = T::from_f64(g.as_f64() + 2.0 * lambda * v.as_f64());
        }
    }
}

/// Endless stream of shuffled training rows, one epoch of
/// `epoch_sample` rows at a time.
struct EpochStream {
    n: usize,
    epoch_sample: usize,
    buf: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochStream {
    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.buf.len() {
                self.refill();
            }
            let take = (size - out.len()).min(self.buf.len() - self.pos);
            out.extend_from_slice(&self.buf[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }

    fn refill(&mut self) {
        self.buf.clear();
        while self.buf.len() < self.epoch_sample {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut self.rng);
            self.buf.extend(perm);
        }
        self.buf.truncate(self.epoch_sample);
        self.pos = 0;
    }
}

/// Trains `model` in place and returns the log. On return the model holds
/// the parameters of the best validation check.
pub fn fit(model: &mut Model<f32>, samples: &[PatchSample], cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let split = split_by_location(samples, cfg.val_fraction, cfg.seed)?;
    let train_refs: Vec<&PatchSample> = split.train.iter().map(|&i| &samples[i]).collect();
    let norm = compute_norm_stats(&train_refs)?;
    if norm.channels() != model.config().in_channels {
        return Err(Error::invalid(format!(
            "patches have {} channels, model expects {}",
            norm.channels(),
            model.config().in_channels
        )));
    }
    let train = Batchable::new(samples, &split.train, &norm);
    let val = Batchable::new(samples, &split.val, &norm);

    let mut target_mean = [0.0f64; 2];
    for y in &train.y {
        target_mean[0] += y[0] as f64;
        target_mean[1] += y[1] as f64;
    }
    target_mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let baseline: Vec<[f64; 2]> = vec![target_mean; val.len()];
    let baseline_val_mae = mae_mbe(&baseline, &val.y).0;

    if cfg.head_bias_init {
        let id = model.net().head_bias().expect("head has a bias");
        let b = model.params_mut().value_mut(id);
        b[0] = target_mean[0] as f32;
        b[1] = target_mean[1] as f32;
    }

    let momentum = model.config().bn.momentum;
    let lambda = cfg.weight_decay;
    let mut log = Vec::new();
    let validate = |model: &Model<f32>, it: u64, log: &mut Vec<LogRow>| -> Result<f64> {
        let (mae, mbe) = mae_mbe(&predict_rows(model, &val)?, &val.y);
        log.push(LogRow {
            iteration: it,
            split: SplitKind::Val,
            loss: mae + lambda * model.params().l2_sq(),
            mae,
            mbe,
        });
        Ok(mae)
    };

    let mut best_val_mae = validate(model, 0, &mut log)?;
    let mut best_iteration = 0;
    let mut best_params = model.params().clone();

    let mut stream = EpochStream {
        n: train.len(),
        epoch_sample: cfg.epoch_sample,
        buf: Vec::new(),
        pos: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
    };
    let mut adam = AdamState::new();
    let mut tape = Tape::new();
    let (mut acc_loss, mut acc_mae, mut acc_mbe, mut acc_n) = (0.0, 0.0, 0.0, 0u64);

    for it in 1..=cfg.iterations {
        let rows = stream.next_batch(cfg.batch_size);
        let (x, y) = train.batch::<f32>(&rows);
        let (net, params) = model.split_mut();
        params.zero_grad();
        tape.clear();
        let out = {
            let mut g = Recorder::new(&mut tape, params, BnMode::Train { momentum });
            let xi = g.input(x);
            net.forward_center(&mut g, xi)?
        };
        let (mae, mbe, seed) = center_mae(tape.value(out), &y);
        tape.backward(out, seed, params)?;
        add_l2_grad(params, lambda);
        let step_loss = mae + lambda * params.l2_sq();
        adam_step(params, &mut adam, &cfg.adam);
        if !step_loss.is_finite() {
            return Err(Error::invalid(format!("training diverged at iteration {it}")));
        }

        acc_loss += step_loss;
        acc_mae += mae;
        acc_mbe += mbe;
        acc_n += 1;
        if it % cfg.log_interval == 0 || it == cfg.iterations {
            let n = acc_n as f64;
            log.push(LogRow {
                iteration: it,
                split: SplitKind::Train,
                loss: acc_loss / n,
                mae: acc_mae / n,
                mbe: acc_mbe / n,
            });
            (acc_loss, acc_mae, acc_mbe, acc_n) = (0.0, 0.0, 0.0, 0);
        }
        if it % cfg.val_interval == 0 || it == cfg.iterations {
            let v = validate(model, it, &mut log)?;
            log::info!("iteration {it}: validation MAE {v:.4}");
            if v < best_val_mae {
                best_val_mae = v;
                best_iteration = it;
                best_params = model.params().clone();
            }
        }
    }
    *model.params_mut() = best_params;

    Ok(FitReport {
        log,
        norm,
        split,
        best_iteration,
        best_val_mae,
        baseline_val_mae,
    })
}
