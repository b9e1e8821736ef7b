//! Fully convolutional ResNeXt height regressor.
//!
//! ```text
//! input ─┬─ entry (1×1 conv, BN, ReLU) ─ stage1 … stage4 ─┐
//!        └─ pixel extractor (1×1 conv, ReLU, 1×1 conv) ───┴─ concat ─ head (1×1, ReLU, 1×1) ─ [mean, max]
//! ```
//!
//! Every stride is 1 and every 3×3 convolution is zero-padded, so the output
//! has the spatial size of the input. A block is
//! `relu(bn(conv1×1(relu(bn(gconv3×3(relu(bn(conv1×1(x)))))))) + shortcut(x))`
//! with a 1×1 conv + BN projection as shortcut when the channel count changes.
//!
//! The width multiplier scales every channel count and the group count
//! alike; `width_per_group` stays fixed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kv::{parse_list, KvConfig};
use crate::tensor::{
    read_checkpoint, write_checkpoint, BatchNorm, BatchNormOptions, BnMode, Conv2d, ConvGeom, ConvShape, Eval,
    GradCheckOptions, GradCheckReport, Graph, ParamKind, Probe, ParamStore, Real, Recorder, Shape, Tape, Tensor,
};
use crate::{Error, Result};

/// Positive rational number, written `a/b` or as an integer or decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid("width multiplier must be positive"));
        }
        let g = gcd(num, den);
        Ok(Ratio { num: num / g, den: den / g })
    }

    /// `c · num / den`, which must be a positive integer.
    pub fn scale(&self, c: usize, what: &str) -> Result<usize> {
        let p = c * self.num;
        if p % self.den != 0 || p == 0 {
            return Err(Error::invalid(format!("{what} = {c} is not divisible by width multiplier {self}")));
        }
        Ok(p / self.den)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("invalid rational {s:?}"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            return Ratio::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10usize.pow(frac.len() as u32);
            let int: usize = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
            let frac: usize = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
            return Ratio::new(int * den + frac, den);
        }
        Ratio::new(s.parse().map_err(|_| bad())?, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub groups: usize,
    pub width_per_group: usize,
    pub n_blocks: Vec<usize>,
    pub stage_out_channels: Vec<usize>,
    pub entry_channels: usize,
    pub pixel_hidden: usize,
    pub pixel_out: usize,
    pub head_hidden: usize,
    pub out_channels: usize,
    pub width_multiplier: Ratio,
    pub bn: BatchNormOptions,
}

impl ModelConfig {
    /// Full-size configuration; `in_channels` is 5 with the terrain model
    /// channel and 4 without.
    pub fn full(in_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            groups: 32,
            width_per_group: 4,
            n_blocks: vec![2, 3, 5, 3],
            stage_out_channels: vec![256, 512, 1024, 2048],
            entry_channels: 64,
            pixel_hidden: 128,
            pixel_out: 256,
            head_hidden: 512,
            out_channels: 2,
            width_multiplier: Ratio::ONE,
            bn: BatchNormOptions::default(),
        }
    }

    /// Desk-scale default: width multiplier 1/8.
    pub fn desk(in_channels: usize) -> Self {
        ModelConfig {
            width_multiplier: Ratio { num: 1, den: 8 },
            ..Self::full(in_channels)
        }
    }

    /// Desk scale with one block per stage.
    pub fn tiny(in_channels: usize) -> Self {
        ModelConfig {
            n_blocks: vec![1, 1, 1, 1],
            ..Self::desk(in_channels)
        }
    }

    /// Number of stacked 3×3 convolutions, which is the receptive-field radius.
    pub fn receptive_radius(&self) -> usize {
        self.n_blocks.iter().sum()
    }

    pub fn widths(&self) -> Result<Widths> {
        let m = self.width_multiplier;
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels must be positive"));
        }
        if self.out_channels != 2 {
            return Err(Error::invalid("out_channels must be 2 (mean and max height)"));
        }
        if self.n_blocks.is_empty() || self.n_blocks.len() != self.stage_out_channels.len() {
            return Err(Error::invalid("n_blocks and stage_out_channels must name the same stages"));
        }
        if self.n_blocks.contains(&0) {
            return Err(Error::invalid("every stage needs at least one block"));
        }
        if self.width_per_group == 0 {
            return Err(Error::invalid("width_per_group must be positive"));
        }
        for w in self.stage_out_channels.windows(2) {
            if w[1] != 2 * w[0] {
                return Err(Error::invalid("stage_out_channels must double from stage to stage"));
            }
        }
        let groups = m.scale(self.groups, "groups")?;
        let stage_out = self
            .stage_out_channels
            .iter()
            .map(|&c| m.scale(c, "stage_out_channels"))
            .collect::<Result<Vec<_>>>()?;
        for &c in &stage_out {
            if c % groups != 0 {
                return Err(Error::invalid(format!("stage width {c} not divisible by {groups} groups")));
            }
        }
        let bottleneck = (0..stage_out.len())
            .map(|s| groups * self.width_per_group << s)
            .collect();
        Ok(Widths {
            groups,
            entry: m.scale(self.entry_channels, "entry_channels")?,
            stage_out,
            bottleneck,
            pixel_hidden: m.scale(self.pixel_hidden, "pixel_hidden")?,
            pixel_out: m.scale(self.pixel_out, "pixel_out")?,
            head_hidden: m.scale(self.head_hidden, "head_hidden")?,
        })
    }

    pub fn to_kv(&self) -> KvConfig {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut kv = KvConfig::new();
        kv.set("in_channels", self.in_channels);
        kv.set("groups", self.groups);
        kv.set("width_per_group", self.width_per_group);
        kv.set("n_blocks", join(&self.n_blocks));
        kv.set("stage_out_channels", join(&self.stage_out_channels));
        kv.set("entry_channels", self.entry_channels);
        kv.set("pixel_hidden", self.pixel_hidden);
        kv.set("pixel_out", self.pixel_out);
        kv.set("head_hidden", self.head_hidden);
        kv.set("out_channels", self.out_channels);
        kv.set("width_multiplier", self.width_multiplier);
        kv.set("bn_momentum", self.bn.momentum);
        kv.set("bn_eps", self.bn.eps);
        kv
    }

    /// Reads overrides from `kv` on top of `self`.
    pub fn with_kv(&self, kv: &KvConfig) -> Result<Self> {
        let list = |key: &str, d: &Vec<usize>| -> Result<Vec<usize>> {
            kv.get(key).map(parse_list).transpose().map(|v| v.unwrap_or_else(|| d.clone()))
        };
        let c = ModelConfig {
            in_channels: kv.parse_or("in_channels", self.in_channels)?,
            groups: kv.parse_or("groups", self.groups)?,
            width_per_group: kv.parse_or("width_per_group", self.width_per_group)?,
            n_blocks: list("n_blocks", &self.n_blocks)?,
            stage_out_channels: list("stage_out_channels", &self.stage_out_channels)?,
            entry_channels: kv.parse_or("entry_channels", self.entry_channels)?,
            pixel_hidden: kv.parse_or("pixel_hidden", self.pixel_hidden)?,
            pixel_out: kv.parse_or("pixel_out", self.pixel_out)?,
            head_hidden: kv.parse_or("head_hidden", self.head_hidden)?,
            out_channels: kv.parse_or("out_channels", self.out_channels)?,
            width_multiplier: kv.parse_or("width_multiplier", self.width_multiplier)?,
            bn: BatchNormOptions {
                momentum: kv.parse_or("bn_momentum", self.bn.momentum)?,
                eps: kv.parse_or("bn_eps", self.bn.eps)?,
            },
        };
        c.widths()?;
        Ok(c)
    }
}

/// Channel counts after applying the width multiplier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths {
    pub groups: usize,
    pub entry: usize,
    pub stage_out: Vec<usize>,
    pub bottleneck: Vec<usize>,
    pub pixel_hidden: usize,
    pub pixel_out: usize,
    pub head_hidden: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    proj: Option<(Conv2d, BatchNorm)>,
}

/// A spatial window in input-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Win {
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
}

/// Layer graph of the regressor; parameters live in a separate store.
#[derive(Debug, Clone)]
pub struct Network {
    in_channels: usize,
    radius: usize,
    entry: (Conv2d, BatchNorm),
    stages: Vec<Vec<Block>>,
    pixel: (Conv2d, Conv2d),
    head: (Conv2d, Conv2d),
}

fn conv_bn<T: Real, G: Graph<T>>(
    g: &mut G,
    conv: &Conv2d,
    bn: &BatchNorm,
    x: &G::Var,
    geom: ConvGeom,
    relu: bool,
) -> Result<G::Var> {
    let y = g.conv(conv, x, geom)?;
    let y = g.batchnorm(bn, &y)?;
    if relu {
        g.relu(&y)
    } else {
        Ok(y)
    }
}

fn conv_relu_conv<T: Real, G: Graph<T>>(g: &mut G, a: &Conv2d, b: &Conv2d, x: &G::Var) -> Result<G::Var> {
    let s = g.shape(x);
    let geom = ConvGeom::same(s.h, s.w);
    let y = g.conv(a, x, geom)?;
    let y = g.relu(&y)?;
    g.conv(b, &y, geom)
}

impl Network {
    fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        let w = config.widths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = config.bn.eps;
        let pw = |i, o| ConvShape { in_ch: i, out_ch: o, kernel: 1, groups: 1 };

        let entry = (
            Conv2d::register(store, "entry.conv", pw(config.in_channels, w.entry), false, &mut rng)?,
            BatchNorm::register(store, "entry.bn", w.entry, eps)?,
        );
        let mut stages = Vec::new();
        let mut in_ch = w.entry;
        for (s, &nb) in config.n_blocks.iter().enumerate() {
            let (out, mid) = (w.stage_out[s], w.bottleneck[s]);
            let mut blocks = Vec::new();
            for b in 0..nb {
                let p = format!("stage{}.block{}", s + 1, b);
                let grouped = ConvShape { in_ch: mid, out_ch: mid, kernel: 3, groups: w.groups };
                blocks.push(Block {
                    conv1: Conv2d::register(store, &format!("{p}.conv1"), pw(in_ch, mid), false, &mut rng)?,
                    bn1: BatchNorm::register(store, &format!("{p}.bn1"), mid, eps)?,
                    conv2: Conv2d::register(store, &format!("{p}.conv2"), grouped, false, &mut rng)?,
                    bn2: BatchNorm::register(store, &format!("{p}.bn2"), mid, eps)?,
                    conv3: Conv2d::register(store, &format!("{p}.conv3"), pw(mid, out), false, &mut rng)?,
                    bn3: BatchNorm::register(store, &format!("{p}.bn3"), out, eps)?,
                    proj: if in_ch != out {
                        Some((
                            Conv2d::register(store, &format!("{p}.proj.conv"), pw(in_ch, out), false, &mut rng)?,
                            BatchNorm::register(store, &format!("{p}.proj.bn"), out, eps)?,
                        ))
                    } else {
                        None
                    },
                });
                in_ch = out;
            }
            stages.push(blocks);
        }
        let pixel = (
            Conv2d::register(store, "pixel.conv1", pw(config.in_channels, w.pixel_hidden), true, &mut rng)?,
            Conv2d::register(store, "pixel.conv2", pw(w.pixel_hidden, w.pixel_out), true, &mut rng)?,
        );
        let head = (
            Conv2d::register(store, "head.conv1", pw(in_ch + w.pixel_out, w.head_hidden), true, &mut rng)?,
            Conv2d::register(store, "head.conv2", pw(w.head_hidden, config.out_channels), true, &mut rng)?,
        );
        Ok(Network {
            in_channels: config.in_channels,
            radius: config.receptive_radius(),
            entry,
            stages,
            pixel,
            head,
        })
    }

    pub fn head_bias(&self) -> Option<crate::tensor::ParamId> {
        self.head.1.bias
    }

    /// Dense prediction: `[n, in, h, w] -> [n, 2, h, w]`.
    pub fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: G::Var) -> Result<G::Var> {
        let s = g.shape(&x);
        let full = Win { y0: 0, x0: 0, h: s.h, w: s.w };
        self.run(g, x, |_| full)
    }

    /// Prediction at the center pixel `(h/2, w/2)` only: `[n, 2, 1, 1]`.
    ///
    /// Each 3×3 convolution is evaluated only on the window the center
    /// still depends on, so with eval-mode batch norm the result equals the
    /// center of [`Network::forward`] at a fraction of the cost.
    pub fn forward_center<T: Real, G: Graph<T>>(&self, g: &mut G, x: G::Var) -> Result<G::Var> {
        let s = g.shape(&x);
        let (cy, cx) = (s.h / 2, s.w / 2);
        let span = |c: usize, r: usize, n: usize| {
            let lo = c.saturating_sub(r);
            (lo, (c + r + 1).min(n) - lo)
        };
        self.run(g, x, |r| {
            let (y0, h) = span(cy, r, s.h);
            let (x0, w) = span(cx, r, s.w);
            Win { y0, x0, h, w }
        })
    }

    /// `window(r)` is the output window of a 3×3 convolution followed by
    /// `r` further 3×3 convolutions.
    fn run<T: Real, G: Graph<T>>(&self, g: &mut G, x: G::Var, window: impl Fn(usize) -> Win) -> Result<G::Var> {
        let s = g.shape(&x);
        if s.c != self.in_channels {
            return Err(Error::invalid(format!(
                "model expects {} input channels, got {}",
                self.in_channels, s.c
            )));
        }
        if s.h == 0 || s.w == 0 {
            return Err(Error::invalid("input has no pixels"));
        }
        let mut cur = Win { y0: 0, x0: 0, h: s.h, w: s.w };
        let mut h = conv_bn(g, &self.entry.0, &self.entry.1, &x, ConvGeom::same(s.h, s.w), true)?;
        let mut remaining = self.radius;
        for block in self.stages.iter().flatten() {
            remaining -= 1;
            let out = window(remaining);
            h = self.block(g, block, &h, cur, out)?;
            cur = out;
        }
        let cropped;
        let xp = if (cur.h, cur.w) == (s.h, s.w) {
            &x
        } else {
            cropped = g.crop(&x, cur.y0, cur.x0, cur.h, cur.w)?;
            &cropped
        };
        let p = conv_relu_conv(g, &self.pixel.0, &self.pixel.1, xp)?;
        let f = g.concat(&h, &p)?;
        conv_relu_conv(g, &self.head.0, &self.head.1, &f)
    }

    fn block<T: Real, G: Graph<T>>(&self, g: &mut G, b: &Block, x: &G::Var, cur: Win, out: Win) -> Result<G::Var> {
        let full = ConvGeom::same(cur.h, cur.w);
        let main = {
            let a = conv_bn(g, &b.conv1, &b.bn1, x, full, true)?;
            let geom = ConvGeom {
                oy: out.y0 - cur.y0,
                ox: out.x0 - cur.x0,
                out_h: out.h,
                out_w: out.w,
            };
            let a = conv_bn(g, &b.conv2, &b.bn2, &a, geom, true)?;
            conv_bn(g, &b.conv3, &b.bn3, &a, ConvGeom::same(out.h, out.w), false)?
        };
        let cropped;
        let short = if cur == out {
            x
        } else {
            cropped = g.crop(x, out.y0 - cur.y0, out.x0 - cur.x0, out.h, out.w)?;
            &cropped
        };
        let projected;
        let short = match &b.proj {
            Some((c, bn)) => {
                projected = conv_bn(g, c, bn, short, ConvGeom::same(out.h, out.w), false)?;
                &projected
            }
            None => short,
        };
        let y = g.add(&main, short)?;
        g.relu(&y)
    }
}

/// Configuration, layer graph and parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    net: Network,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Deterministic given `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::build(config, &mut params, seed)?;
        Ok(Model {
            config: config.clone(),
            net,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Borrows the graph and the parameters separately, as a [`Recorder`]
    /// needs mutable access to the latter while the former drives it.
    pub fn split_mut(&mut self) -> (&Network, &mut ParamStore<T>) {
        (&self.net, &mut self.params)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }

    /// Eval-mode dense forward.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(&mut Eval::new(&self.params), x.clone())
    }

    /// Eval-mode center-pixel forward.
    pub fn predict_center(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward_center(&mut Eval::new(&self.params), x.clone())
    }

    /// Writes the parameters (`VHMW`) and the configuration (`key=value`).
    pub fn save(&self, weights: impl AsRef<Path>, config: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(weights, &self.params.to_entries())?;
        self.config.to_kv().save(config)
    }

    pub fn load(weights: impl AsRef<Path>, config: impl AsRef<Path>) -> Result<Self> {
        let kv = KvConfig::load(config)?;
        let cfg = ModelConfig::full(5).with_kv(&kv)?;
        let mut m = Self::build(&cfg, 0)?;
        m.params.load_entries(&read_checkpoint(weights)?)?;
        Ok(m)
    }
}

/// Finite-difference check of the full model in double precision.
///
/// Batch norm runs in eval mode with randomized statistics and affine
/// parameters. The loss is the mean absolute error of the dense output
/// against targets one meter below the initial prediction, so no `|·|`
/// kink is crossed and the loss stays near 1.
pub fn grad_check(config: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    grad_check_on(config, seed, opts, Shape::new(1, config.in_channels, 5, 5))
}

pub fn grad_check_on(config: &ModelConfig, seed: u64, opts: &GradCheckOptions, shape: Shape) -> Result<GradCheckReport> {
    use rand::Rng;
    let mut model = Model::<f64>::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for p in model.params.iter_mut() {
        match p.kind {
            ParamKind::BnScale => p.value.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5)),
            ParamKind::BnShift | ParamKind::RunningMean => {
                p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2))
            }
            ParamKind::RunningVar => p.value.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0)),
            _ => {}
        }
    }
    let vals: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::from_nchw(shape, &vals)?;

    let (net, params) = model.split_mut();
    params.zero_grad();
    let mut tape = Tape::new();
    let y = {
        let mut g = Recorder::new(&mut tape, params, BnMode::Eval);
        let xi = g.input(x.clone());
        net.forward(&mut g, xi)?
    };
    let target = tape.value(y).map(|v| v - 1.0);
    let n = target.len() as f64;
    tape.backward(y, Tensor::full(target.shape(), 1.0 / n), params)?;

    crate::tensor::check_gradients(params, opts, |p| {
        let mut g = Eval::tracking(p);
        let out = net.forward(&mut g, x.clone())?;
        let loss = out.raw().iter().zip(target.raw()).map(|(v, t)| (v - t).abs()).sum::<f64>() / n;
        Ok(Probe {
            loss,
            signature: g.signature(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(seed: u64, s: Shape) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_nchw(s, &v).unwrap()
    }

    fn narrow(in_channels: usize) -> ModelConfig {
        ModelConfig {
            groups: 2,
            width_per_group: 1,
            stage_out_channels: vec![4, 8, 16, 32],
            entry_channels: 4,
            pixel_hidden: 4,
            pixel_out: 4,
            head_hidden: 8,
            width_multiplier: Ratio::ONE,
            ..ModelConfig::full(in_channels)
        }
    }

    /// Closed-form trainable-parameter count.
    fn closed_form(c: &ModelConfig) -> usize {
        let w = c.widths().unwrap();
        let mut n = c.in_channels * w.entry + 2 * w.entry;
        let mut in_ch = w.entry;
        for (s, &nb) in c.n_blocks.iter().enumerate() {
            let (out, mid) = (w.stage_out[s], w.bottleneck[s]);
            for _ in 0..nb {
                n += in_ch * mid + 2 * mid;
                n += mid * (mid / w.groups) * 9 + 2 * mid;
                n += mid * out + 2 * out;
                if in_ch != out {
                    n += in_ch * out + 2 * out;
                }
                in_ch = out;
            }
        }
        n += c.in_channels * w.pixel_hidden + w.pixel_hidden + w.pixel_hidden * w.pixel_out + w.pixel_out;
        n += (in_ch + w.pixel_out) * w.head_hidden + w.head_hidden + w.head_hidden * 2 + 2;
        n
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("1/8".parse::<Ratio>().unwrap(), Ratio { num: 1, den: 8 });
        assert_eq!("0.125".parse::<Ratio>().unwrap(), Ratio { num: 1, den: 8 });
        assert_eq!("2".parse::<Ratio>().unwrap(), Ratio { num: 2, den: 1 });
        assert_eq!("2/4".parse::<Ratio>().unwrap().to_string(), "1/2");
        assert!("0".parse::<Ratio>().is_err());
        assert!("x/2".parse::<Ratio>().is_err());
    }

    #[test]
    fn full_widths() {
        let w = ModelConfig::full(5).widths().unwrap();
        assert_eq!(w.stage_out, vec![256, 512, 1024, 2048]);
        assert_eq!(w.bottleneck, vec![128, 256, 512, 1024]);
        assert_eq!(*w.stage_out.last().unwrap() + w.pixel_out, 2304);
    }

    #[test]
    fn desk_widths() {
        let w = ModelConfig::desk(5).widths().unwrap();
        assert_eq!(w.stage_out, vec![32, 64, 128, 256]);
        assert_eq!(w.groups, 4);
        assert_eq!(w.bottleneck, vec![16, 32, 64, 128]);
        assert_eq!((w.entry, w.pixel_hidden, w.pixel_out, w.head_hidden), (8, 16, 32, 64));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::full(5);
        c.width_multiplier = Ratio { num: 1, den: 3 };
        assert!(c.widths().is_err());
        let mut c = ModelConfig::full(5);
        c.stage_out_channels[2] = 1000;
        assert!(c.widths().is_err());
        let mut c = ModelConfig::full(5);
        c.out_channels = 3;
        assert!(c.widths().is_err());
    }

    #[test]
    fn full_parameter_count() {
        let c = ModelConfig::full(5);
        let m = Model::<f32>::build(&c, 0).unwrap();
        assert_eq!(m.params().trainable_count(), closed_form(&c));
        assert_eq!(m.params().trainable_count(), 22_705_602);
    }

    #[test]
    fn desk_parameter_count() {
        for c in [ModelConfig::desk(4), ModelConfig::tiny(5), narrow(5)] {
            let m = Model::<f32>::build(&c, 0).unwrap();
            assert_eq!(m.params().trainable_count(), closed_form(&c));
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = ModelConfig::tiny(5);
        let a = Model::<f32>::build(&c, 42).unwrap();
        let b = Model::<f32>::build(&c, 42).unwrap();
        let d = Model::<f32>::build(&c, 43).unwrap();
        let flat = |m: &Model<f32>| m.params().iter().flat_map(|p| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&d));
    }

    #[test]
    fn shape_contract() {
        let m = Model::<f32>::build(&ModelConfig::tiny(5), 1).unwrap();
        for (h, w) in [(15, 15), (1, 1), (7, 20)] {
            let y = m.predict(&random_input(0, Shape::new(2, 5, h, w))).unwrap();
            assert_eq!(y.shape(), Shape::new(2, 2, h, w));
        }
        assert!(m.predict(&random_input(0, Shape::new(1, 4, 5, 5))).is_err());
    }

    #[test]
    fn full_config_output_shape() {
        let m = Model::<f32>::build(&ModelConfig::full(5), 0).unwrap();
        let y = m.predict(&random_input(0, Shape::new(1, 5, 15, 15))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 15, 15));
    }

    #[test]
    fn zero_biases_map_zero_to_zero() {
        let mut m = Model::<f32>::build(&ModelConfig::tiny(5), 3).unwrap();
        for p in m.params_mut().iter_mut() {
            if matches!(p.kind, ParamKind::Bias | ParamKind::BnShift) {
                p.value.fill(0.0);
            }
        }
        let y = m.predict(&Tensor::zeros(Shape::new(1, 5, 6, 6))).unwrap();
        assert!(y.raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_forward_matches_dense_center() {
        let m = Model::<f64>::build(&ModelConfig::tiny(5), 9).unwrap();
        let x = random_input(4, Shape::new(3, 5, 15, 15)).cast::<f64>();
        let dense = m.predict(&x).unwrap();
        let center = m.predict_center(&x).unwrap();
        assert_eq!(center.shape(), Shape::new(3, 2, 1, 1));
        for n in 0..3 {
            for c in 0..2 {
                assert!((dense.at(n, c, 7, 7) - center.at(n, c, 0, 0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn receptive_field_locality() {
        // full depth: 13 stacked 3×3 convolutions
        let m = Model::<f64>::build(&narrow(5), 2).unwrap();
        assert_eq!(m.config().receptive_radius(), 13);
        let s = Shape::new(1, 5, 31, 31);
        let a = random_input(1, s).cast::<f64>();
        let mut b = random_input(2, s).cast::<f64>();
        for c in 0..5 {
            for y in 2..29 {
                for x in 2..29 {
                    b.set(0, c, y, x, a.at(0, c, y, x));
                }
            }
        }
        let (ya, yb) = (m.predict(&a).unwrap(), m.predict(&b).unwrap());
        assert_eq!(ya.at(0, 0, 15, 15), yb.at(0, 0, 15, 15));
        assert_eq!(ya.at(0, 1, 15, 15), yb.at(0, 1, 15, 15));
    }

    #[test]
    fn translation_equivariance_inside() {
        let m = Model::<f64>::build(&ModelConfig::tiny(5), 5).unwrap();
        let big = random_input(7, Shape::new(1, 5, 14, 14)).cast::<f64>();
        let mut shifted = Tensor::zeros(big.shape());
        for c in 0..5 {
            for y in 0..14 {
                for x in 0..13 {
                    shifted.set(0, c, y, x + 1, big.at(0, c, y, x));
                }
            }
        }
        let (a, b) = (m.predict(&big).unwrap(), m.predict(&shifted).unwrap());
        // radius 4: pixels whose window lies inside both inputs
        for y in 4..10 {
            for x in 4..9 {
                for c in 0..2 {
                    assert!((a.at(0, c, y, x) - b.at(0, c, y, x + 1)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let m = Model::<f32>::build(&ModelConfig::tiny(4), 5).unwrap();
        let x = random_input(3, Shape::new(2, 4, 9, 9));
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ModelConfig::tiny(4);
        c.bn.momentum = 0.05;
        let m = Model::<f32>::build(&c, 8).unwrap();
        m.save(dir.path().join("m.vhmw"), dir.path().join("m.cfg")).unwrap();
        let back = Model::<f32>::load(dir.path().join("m.vhmw"), dir.path().join("m.cfg")).unwrap();
        assert_eq!(back.config(), &c);
        let x = random_input(3, Shape::new(1, 4, 5, 5));
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    }

    #[test]
    fn tiny_model_gradients() {
        let r = grad_check(&ModelConfig::tiny(5), 7, &GradCheckOptions::default()).unwrap();
        let m = Model::<f64>::build(&ModelConfig::tiny(5), 7).unwrap();
        let m_count = |k: ParamKind| m.params().iter().filter(|p| p.kind == k).map(|p| p.value.len()).sum::<usize>();
        for k in &r.kinds {
            let available = m_count(k.kind);
            assert_eq!(k.checked, available.min(200), "{k:?}");
        }
        assert!(r.max_rel_err() < 1e-4, "{r:?}");
    }
}
