//! Central finite-difference verification of analytic gradients.
//!
//! Relative error of one coordinate is `|a - n| / max(|a|, |n|, floor)`,
//! where `a` is analytic, `n` numeric and `floor` keeps vanishing gradients
//! from turning round-off into large ratios.
//!
//! A central difference is only an oracle where the loss is smooth on
//! `[θ - ε, θ + ε]`. Loss closures may report a [`Probe::signature`] naming
//! the piece of a piecewise-smooth function they evaluated (for example the
//! ReLU sign pattern); when a probe lands on a different piece than the
//! unperturbed point, the step is divided by ten, up to three times, and the
//! coordinate is skipped if no smooth step is found. Either event is counted
//! in the report.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamKind, ParamStore, Tensor};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter kind; all of them if fewer exist.
    pub per_kind: usize,
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            per_kind: 200,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// Loss value plus an optional fingerprint of the smooth piece it lies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub signature: Option<u64>,
}

impl From<f64> for Probe {
    fn from(loss: f64) -> Self {
        Probe { loss, signature: None }
    }
}

const MAX_REFINE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KindReport {
    pub kind: ParamKind,
    pub checked: usize,
    /// Coordinates that needed a smaller step to avoid a kink.
    pub refined: usize,
    /// Coordinates with a kink closer than `eps / 1000`.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub kinds: Vec<KindReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.kinds.iter().map(|k| k.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.kinds.iter().map(|k| k.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.kinds.iter().map(|k| k.skipped).sum()
    }

    pub fn refined(&self) -> usize {
        self.kinds.iter().map(|k| k.refined).sum()
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients already stored in `params` against central
/// differences of `loss`, for a random subsample of every trainable kind.
pub fn check_gradients<P: Into<Probe>>(
    params: &mut ParamStore<f64>,
    opts: &GradCheckOptions,
    mut loss: impl FnMut(&ParamStore<f64>) -> Result<P>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let base = loss(params)?.into().signature;
    let ids: Vec<_> = params.ids().collect();
    let mut kinds = Vec::new();
    for kind in ParamKind::TRAINABLE {
        let coords: Vec<(usize, usize)> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == kind)
            .flat_map(|(pi, p)| (0..p.value.len()).map(move |e| (pi, e)))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let order = index::sample(&mut rng, coords.len(), coords.len()).into_vec();
        let mut report = KindReport {
            kind,
            checked: 0,
            refined: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst: None,
        };
        for i in order {
            if report.checked == opts.per_kind {
                break;
            }
            let (pi, e) = coords[i];
            let id = ids[pi];
            let orig = params.value(id)[e];
            let mut eps = opts.eps;
            let mut numeric = None;
            for attempt in 0..=MAX_REFINE {
                params.value_mut(id)[e] = orig + eps;
                let plus = loss(params)?.into();
                params.value_mut(id)[e] = orig - eps;
                let minus = loss(params)?.into();
                params.value_mut(id)[e] = orig;
                if plus.signature == base && minus.signature == base {
                    numeric = Some((plus.loss - minus.loss) / (2.0 * eps));
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    break;
                }
                eps /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            report.checked += 1;
            let err = rel_err(params.grad(id)[e], numeric, opts.floor);
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.param(id).name.clone(), e));
            }
        }
        kinds.push(report);
    }
    Ok(GradCheckReport { kinds })
}

/// Checks every coordinate of an input gradient; returns the maximum
/// relative error.
pub fn check_input_gradient(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    floor: f64,
    mut loss: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<f64> {
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.raw()[i];
        probe.raw_mut()[i] = orig + eps;
        let plus = loss(&probe)?;
        probe.raw_mut()[i] = orig - eps;
        let minus = loss(&probe)?;
        probe.raw_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.raw()[i], (plus - minus) / (2.0 * eps), floor));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::ConvShape;
    use crate::tensor::{BatchNorm, BnMode, Conv2d, ConvGeom, Eval, Graph, NodeId, Recorder, Shape, Tape};
    use rand::Rng;

    const TOL: f64 = 1e-4;

    fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape, lo: f64, hi: f64) -> Tensor<f64> {
        let v: Vec<f64> = (0..s.len()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_nchw(s, &v).unwrap()
    }

    /// Checks a single-input graph against the scalar loss `sum(proj ⊙ y)`.
    fn check_layer<G>(params: &mut ParamStore<f64>, x: Tensor<f64>, bn: BnMode, build: G) -> (f64, f64)
    where
        G: Fn(&mut dyn GraphDyn, Slot) -> Slot,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out_shape = {
            let mut e = DynEval { inner: Eval::new(params), vals: vec![] };
            let s = e.input_dyn(x.clone());
            let y = build(&mut e, s);
            e.vals[y.0].shape()
        };
        let proj = rand_tensor(&mut rng, out_shape, -1.0, 1.0);
        let dot = |y: &Tensor<f64>| y.raw().iter().zip(proj.raw()).map(|(a, b)| a * b).sum::<f64>();

        params.zero_grad();
        let mut tape = Tape::new();
        let (xin, yout) = {
            let mut r = DynRec { inner: Recorder::new(&mut tape, params, bn), ids: vec![] };
            let s = r.input_dyn(x.clone());
            let y = build(&mut r, s);
            (r.ids[s.0], r.ids[y.0])
        };
        let grads = tape.backward(yout, proj.clone(), params).unwrap();
        let gx = grads.get(xin).unwrap().clone();

        let eval_loss = |p: &ParamStore<f64>, x: &Tensor<f64>| -> Result<f64> {
            let mut scratch = p.clone();
            let mut tape = Tape::new();
            let mut r = DynRec { inner: Recorder::new(&mut tape, &mut scratch, bn), ids: vec![] };
            let s = r.input_dyn(x.clone());
            let y = build(&mut r, s);
            let id = r.ids[y.0];
            Ok(dot(tape.value(id)))
        };
        let opts = GradCheckOptions::default();
        let snapshot = params.clone();
        let rp = check_gradients(params, &opts, |p| eval_loss(p, &x)).unwrap();
        let rx = check_input_gradient(&x, &gx, opts.eps, opts.floor, |xx| eval_loss(&snapshot, xx)).unwrap();
        (rp.max_rel_err(), rx)
    }

    // Object-safe shim so one closure can drive both executors.
    #[derive(Clone, Copy)]
    struct Slot(usize);

    trait GraphDyn {
        fn input_dyn(&mut self, x: Tensor<f64>) -> Slot;
        fn conv(&mut self, l: &Conv2d, x: Slot, g: ConvGeom) -> Slot;
        fn bn(&mut self, l: &BatchNorm, x: Slot) -> Slot;
        fn relu(&mut self, x: Slot) -> Slot;
        fn add(&mut self, a: Slot, b: Slot) -> Slot;
        fn concat(&mut self, a: Slot, b: Slot) -> Slot;
        fn crop(&mut self, x: Slot, y0: usize, x0: usize, h: usize, w: usize) -> Slot;
    }

    struct DynEval<'a> {
        inner: Eval<'a, f64>,
        vals: Vec<Tensor<f64>>,
    }

    struct DynRec<'a> {
        inner: Recorder<'a, f64>,
        ids: Vec<NodeId>,
    }

    macro_rules! shim {
        ($t:ty, $store:ident) => {
            impl GraphDyn for $t {
                fn input_dyn(&mut self, x: Tensor<f64>) -> Slot {
                    let v = self.inner.input(x);
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
                fn conv(&mut self, l: &Conv2d, x: Slot, g: ConvGeom) -> Slot {
                    let v = self.inner.conv(l, &self.$store[x.0], g).unwrap();
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
                fn bn(&mut self, l: &BatchNorm, x: Slot) -> Slot {
                    let v = self.inner.batchnorm(l, &self.$store[x.0]).unwrap();
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
                fn relu(&mut self, x: Slot) -> Slot {
                    let v = self.inner.relu(&self.$store[x.0]).unwrap();
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
                fn add(&mut self, a: Slot, b: Slot) -> Slot {
                    let v = self.inner.add(&self.$store[a.0], &self.$store[b.0]).unwrap();
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
                fn concat(&mut self, a: Slot, b: Slot) -> Slot {
                    let v = self.inner.concat(&self.$store[a.0], &self.$store[b.0]).unwrap();
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
                fn crop(&mut self, x: Slot, y0: usize, x0: usize, h: usize, w: usize) -> Slot {
                    let v = self.inner.crop(&self.$store[x.0], y0, x0, h, w).unwrap();
                    self.$store.push(v);
                    Slot(self.$store.len() - 1)
                }
            }
        };
    }
    shim!(DynEval<'_>, vals);
    shim!(DynRec<'_>, ids);

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn pointwise_conv() {
        let mut r = rng();
        let mut p = ParamStore::new();
        let c = Conv2d::register(&mut p, "c", ConvShape { in_ch: 3, out_ch: 4, kernel: 1, groups: 1 }, true, &mut r)
            .unwrap();
        let x = rand_tensor(&mut r, Shape::new(2, 3, 4, 5), -1.0, 1.0);
        let (ep, ex) = check_layer(&mut p, x, BnMode::Eval, |g, s| g.conv(&c, s, ConvGeom::same(4, 5)));
        assert!(ep < TOL && ex < TOL, "{ep} {ex}");
    }

    #[test]
    fn grouped_conv_padded_and_offset() {
        let mut r = rng();
        let mut p = ParamStore::new();
        let c = Conv2d::register(&mut p, "c", ConvShape { in_ch: 4, out_ch: 6, kernel: 3, groups: 2 }, true, &mut r)
            .unwrap();
        let x = rand_tensor(&mut r, Shape::new(2, 4, 5, 6), -1.0, 1.0);
        let (ep, ex) = check_layer(&mut p, x.clone(), BnMode::Eval, |g, s| g.conv(&c, s, ConvGeom::same(5, 6)));
        assert!(ep < TOL && ex < TOL, "{ep} {ex}");
        let geom = ConvGeom { oy: 1, ox: 2, out_h: 3, out_w: 4 };
        let (ep, ex) = check_layer(&mut p, x, BnMode::Eval, |g, s| g.conv(&c, s, geom));
        assert!(ep < TOL && ex < TOL, "{ep} {ex}");
    }

    #[test]
    fn batchnorm_both_modes() {
        let mut r = rng();
        let mut p = ParamStore::new();
        let bn = BatchNorm::register(&mut p, "bn", 3, 1e-5).unwrap();
        for v in p.value_mut(bn.scale) {
            *v = r.random_range(0.5..1.5);
        }
        for v in p.value_mut(bn.shift) {
            *v = r.random_range(-0.5..0.5);
        }
        for v in p.value_mut(bn.running_mean) {
            *v = r.random_range(-0.5..0.5);
        }
        for v in p.value_mut(bn.running_var) {
            *v = r.random_range(0.5..2.0);
        }
        let x = rand_tensor(&mut r, Shape::new(2, 3, 3, 3), -2.0, 2.0);
        let (ep, ex) = check_layer(&mut p, x.clone(), BnMode::Eval, |g, s| g.bn(&bn, s));
        assert!(ep < TOL && ex < TOL, "{ep} {ex}");
        // momentum 0 keeps the running statistics fixed across the probes
        let (ep, ex) = check_layer(&mut p, x, BnMode::Train { momentum: 0.0 }, |g, s| g.bn(&bn, s));
        assert!(ep < TOL && ex < TOL, "{ep} {ex}");
    }

    #[test]
    fn relu_add_concat_crop() {
        let mut r = rng();
        let mut p = ParamStore::new();
        // keep inputs away from the kink so the difference quotient is exact
        let v: Vec<f64> = (0..2 * 2 * 4 * 4)
            .map(|_| {
                let m = r.random_range(0.1..1.0);
                if r.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let x = Tensor::from_nchw(Shape::new(2, 2, 4, 4), &v).unwrap();
        let (_, ex) = check_layer(&mut p, x.clone(), BnMode::Eval, |g, s| {
            let a = g.relu(s);
            let b = g.add(a, s);
            let c = g.concat(b, s);
            g.crop(c, 1, 0, 2, 3)
        });
        assert!(ex < TOL, "{ex}");
    }

    #[test]
    fn empty_store_is_vacuous() {
        let mut p = ParamStore::<f64>::new();
        let r = check_gradients(&mut p, &GradCheckOptions::default(), |_| Ok(1.0)).unwrap();
        assert_eq!(r.max_rel_err(), 0.0);
        assert_eq!(r.checked(), 0);
    }

    #[test]
    fn linear_abs_loss() {
        // y = w·x, loss |y - t| with y far from t
        let mut p = ParamStore::<f64>::new();
        let id = p.register("w", ParamKind::Weight, &[3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = [1.0, 2.0, 3.0];
        let t = 100.0;
        let y: f64 = p.value(id).iter().zip(&x).map(|(a, b)| a * b).sum();
        let s = (y - t).signum();
        p.param_mut(id).grad = x.iter().map(|v| s * v).collect();
        let r = check_gradients(&mut p, &GradCheckOptions::default(), |q| {
            Ok((q.value(id).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - t).abs())
        })
        .unwrap();
        assert!(r.max_rel_err() < 1e-9, "{}", r.max_rel_err());
    }
}
