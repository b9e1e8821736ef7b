//! Forward and backward kernels. Pure functions over tensors and flat
//! parameter slices; the tape in `graph` decides when each one runs.
//!
//! Convolution weights use the `[out, in / groups, k, k]` layout.

use super::gemm::{gemm, MatMut, MatRef};
use super::{Real, Shape, Tensor};
use crate::{Error, Result};

/// Upper bound on the im2col buffer, in elements.
const COL_BUDGET: usize = 1 << 20;

/// Where the output window of a convolution sits inside its input.
///
/// Output pixel `(i, j)` is centered on input pixel `(i + oy, j + ox)`.
/// Taps that fall outside the input read zeros, so `ConvGeom::same` is the
/// usual zero-padded convolution and an offset of 1 with a 2-pixel smaller
/// output is an unpadded ("valid") one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub oy: usize,
    pub ox: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn same(h: usize, w: usize) -> Self {
        ConvGeom { oy: 0, ox: 0, out_h: h, out_w: w }
    }
}

/// Static description of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl ConvShape {
    pub fn validate(&self) -> Result<()> {
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::invalid(format!("unsupported kernel size {}", self.kernel)));
        }
        if self.groups == 0 || self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(Error::invalid(format!(
                "channels {}->{} not divisible by {} groups",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch / self.groups, self.kernel, self.kernel]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_dims().iter().product()
    }

    fn check(&self, x: Shape, geom: ConvGeom, weight: &[impl Sized], bias: Option<usize>) -> Result<()> {
        self.validate()?;
        if x.c != self.in_ch {
            return Err(Error::invalid(format!(
                "convolution expects {} input channels, got {}",
                self.in_ch, x.c
            )));
        }
        if weight.len() != self.weight_len() {
            return Err(Error::invalid("convolution weight has wrong length"));
        }
        if let Some(b) = bias {
            if b != self.out_ch {
                return Err(Error::invalid("convolution bias has wrong length"));
            }
        }
        if self.kernel == 1 {
            if geom != ConvGeom::same(x.h, x.w) {
                return Err(Error::invalid("1x1 convolution takes no padding or offset"));
            }
        } else if geom.oy + geom.out_h > x.h || geom.ox + geom.out_w > x.w || geom.out_h == 0 || geom.out_w == 0
        {
            return Err(Error::invalid("convolution output window exceeds its input"));
        }
        Ok(())
    }
}

/// Reorders `[oc][icg][tap]` weights to `[oc][tap][icg]`, the im2col column order.
fn pack_taps<T: Real>(w: &[T], s: &ConvShape) -> Vec<T> {
    let icg = s.in_ch / s.groups;
    let mut out = vec![T::zero(); w.len()];
    for oc in 0..s.out_ch {
        for ic in 0..icg {
            for tap in 0..9 {
                out[oc * icg * 9 + tap * icg + ic] = w[oc * icg * 9 + ic * 9 + tap];
            }
        }
    }
    out
}

fn unpack_taps<T: Real>(p: &[T], s: &ConvShape) -> Vec<T> {
    let icg = s.in_ch / s.groups;
    let mut out = vec![T::zero(); p.len()];
    for oc in 0..s.out_ch {
        for ic in 0..icg {
            for tap in 0..9 {
                out[oc * icg * 9 + ic * 9 + tap] = p[oc * icg * 9 + tap * icg + ic];
            }
        }
    }
    out
}

/// Fills `col` with the 3×3 neighborhoods of output rows `start..start+rows`.
///
/// Row layout: `[group][tap][in channel within group]`.
fn im2col<T: Real>(x: &Tensor<T>, s: &ConvShape, geom: ConvGeom, start: usize, rows: usize, col: &mut [T]) {
    let xs = x.shape();
    let cin = xs.c;
    let icg = cin / s.groups;
    let kg = 9 * icg;
    let k = 9 * cin;
    let plane = geom.out_h * geom.out_w;
    for r in 0..rows {
        let idx = start + r;
        let n = idx / plane;
        let i = (idx % plane) / geom.out_w;
        let j = idx % geom.out_w;
        let cy = (i + geom.oy) as isize;
        let cx = (j + geom.ox) as isize;
        let dst = &mut col[r * k..(r + 1) * k];
        for tap in 0..9 {
            let y = cy + (tap / 3) as isize - 1;
            let xx = cx + (tap % 3) as isize - 1;
            let inside = y >= 0 && xx >= 0 && (y as usize) < xs.h && (xx as usize) < xs.w;
            for g in 0..s.groups {
                let d = &mut dst[g * kg + tap * icg..g * kg + (tap + 1) * icg];
                if inside {
                    let base = ((n * xs.h + y as usize) * xs.w + xx as usize) * cin + g * icg;
                    d.copy_from_slice(&x.raw()[base..base + icg]);
                } else {
                    d.fill(T::zero());
                }
            }
        }
    }
}

/// Scatter-adds im2col gradients back onto the input gradient.
fn col2im<T: Real>(dcol: &[T], s: &ConvShape, geom: ConvGeom, start: usize, rows: usize, dx: &mut Tensor<T>) {
    let xs = dx.shape();
    let cin = xs.c;
    let icg = cin / s.groups;
    let kg = 9 * icg;
    let k = 9 * cin;
    let plane = geom.out_h * geom.out_w;
    let raw = dx.raw_mut();
    for r in 0..rows {
        let idx = start + r;
        let n = idx / plane;
        let i = (idx % plane) / geom.out_w;
        let j = idx % geom.out_w;
        let cy = (i + geom.oy) as isize;
        let cx = (j + geom.ox) as isize;
        let src = &dcol[r * k..(r + 1) * k];
        for tap in 0..9 {
            let y = cy + (tap / 3) as isize - 1;
            let xx = cx + (tap % 3) as isize - 1;
            if y < 0 || xx < 0 || y as usize >= xs.h || xx as usize >= xs.w {
                continue;
            }
            for g in 0..s.groups {
                let base = ((n * xs.h + y as usize) * xs.w + xx as usize) * cin + g * icg;
                let sv = &src[g * kg + tap * icg..g * kg + (tap + 1) * icg];
                for (d, &v) in raw[base..base + icg].iter_mut().zip(sv) {
                    *d = *d + v;
                }
            }
        }
    }
}

fn chunk_rows(k: usize) -> usize {
    (COL_BUDGET / k.max(1)).max(1)
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: Option<&[T]>,
    s: &ConvShape,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    s.check(xs, geom, weight, bias.map(<[T]>::len))?;
    let (cin, cout, g) = (s.in_ch, s.out_ch, s.groups);
    let (icg, ocg) = (cin / g, cout / g);
    let out_shape = Shape::new(xs.n, cout, geom.out_h, geom.out_w);
    let mut out = Tensor::zeros(out_shape);
    let rows_total = out_shape.pixels();

    if s.kernel == 1 {
        for gi in 0..g {
            gemm(
                rows_total,
                icg,
                ocg,
                T::one(),
                MatRef { data: x.raw(), offset: gi * icg, rs: cin, cs: 1 },
                MatRef { data: weight, offset: gi * ocg * icg, rs: 1, cs: icg },
                T::zero(),
                MatMut { data: out.raw_mut(), offset: gi * ocg, rs: cout, cs: 1 },
            );
        }
    } else {
        let packed = pack_taps(weight, s);
        let (k, kg) = (9 * cin, 9 * icg);
        let chunk = chunk_rows(k);
        let mut col = vec![T::zero(); chunk.min(rows_total) * k];
        let mut start = 0;
        while start < rows_total {
            let rows = chunk.min(rows_total - start);
            im2col(x, s, geom, start, rows, &mut col);
            for gi in 0..g {
                gemm(
                    rows,
                    kg,
                    ocg,
                    T::one(),
                    MatRef { data: &col, offset: gi * kg, rs: k, cs: 1 },
                    MatRef { data: &packed, offset: gi * ocg * kg, rs: 1, cs: kg },
                    T::zero(),
                    MatMut { data: out.raw_mut(), offset: start * cout + gi * ocg, rs: cout, cs: 1 },
                );
            }
            start += rows;
        }
    }

    if let Some(b) = bias {
        for px in out.raw_mut().chunks_exact_mut(cout) {
            for (v, &bb) in px.iter_mut().zip(b) {
                *v = *v + bb;
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    s: &ConvShape,
    geom: ConvGeom,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let xs = x.shape();
    s.check(xs, geom, weight, None)?;
    let (cin, cout, g) = (s.in_ch, s.out_ch, s.groups);
    let (icg, ocg) = (cin / g, cout / g);
    let ds = dy.shape();
    if ds != Shape::new(xs.n, cout, geom.out_h, geom.out_w) {
        return Err(Error::invalid("output gradient does not match convolution output"));
    }
    let rows_total = ds.pixels();

    let mut dbias = vec![T::zero(); cout];
    for px in dy.raw().chunks_exact(cout) {
        for (b, &v) in dbias.iter_mut().zip(px) {
            *b = *b + v;
        }
    }

    let mut dx = Tensor::zeros(xs);
    let mut dw = vec![T::zero(); weight.len()];

    if s.kernel == 1 {
        for gi in 0..g {
            gemm(
                ocg,
                rows_total,
                icg,
                T::one(),
                MatRef { data: dy.raw(), offset: gi * ocg, rs: 1, cs: cout },
                MatRef { data: x.raw(), offset: gi * icg, rs: cin, cs: 1 },
                T::zero(),
                MatMut { data: &mut dw, offset: gi * ocg * icg, rs: icg, cs: 1 },
            );
            gemm(
                rows_total,
                ocg,
                icg,
                T::one(),
                MatRef { data: dy.raw(), offset: gi * ocg, rs: cout, cs: 1 },
                MatRef { data: weight, offset: gi * ocg * icg, rs: icg, cs: 1 },
                T::zero(),
                MatMut { data: dx.raw_mut(), offset: gi * icg, rs: cin, cs: 1 },
            );
        }
    } else {
        let packed = pack_taps(weight, s);
        let mut dpacked = vec![T::zero(); weight.len()];
        let (k, kg) = (9 * cin, 9 * icg);
        let chunk = chunk_rows(k);
        let cap = chunk.min(rows_total) * k;
        let mut col = vec![T::zero(); cap];
        let mut dcol = vec![T::zero(); cap];
        let mut start = 0;
        while start < rows_total {
            let rows = chunk.min(rows_total - start);
            im2col(x, s, geom, start, rows, &mut col);
            for gi in 0..g {
                gemm(
                    ocg,
                    rows,
                    kg,
                    T::one(),
                    MatRef { data: dy.raw(), offset: start * cout + gi * ocg, rs: 1, cs: cout },
                    MatRef { data: &col, offset: gi * kg, rs: k, cs: 1 },
                    T::one(),
                    MatMut { data: &mut dpacked, offset: gi * ocg * kg, rs: kg, cs: 1 },
                );
                gemm(
                    rows,
                    ocg,
                    kg,
                    T::one(),
                    MatRef { data: dy.raw(), offset: start * cout + gi * ocg, rs: cout, cs: 1 },
                    MatRef { data: &packed, offset: gi * ocg * kg, rs: kg, cs: 1 },
                    T::zero(),
                    MatMut { data: &mut dcol, offset: gi * kg, rs: k, cs: 1 },
                );
            }
            col2im(&dcol[..rows * k], s, geom, start, rows, &mut dx);
            start += rows;
        }
        dw = unpack_taps(&dpacked, s);
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: dbias })
}

/// Saved state of a batch-norm forward pass needed by its backward pass.
#[derive(Debug, Clone)]
pub struct BnSaved<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as accumulated into running statistics.
    pub var_unbiased: Vec<f64>,
}

fn check_bn<T>(x: Shape, scale: &[T], shift: &[T]) -> Result<()> {
    if scale.len() != x.c || shift.len() != x.c {
        return Err(Error::invalid(format!(
            "batch norm over {} channels given {} scales",
            x.c,
            scale.len()
        )));
    }
    Ok(())
}

fn bn_apply<T: Real>(x: &Tensor<T>, mean: &[f64], inv_std: &[T], scale: &[T], shift: &[T]) -> (Tensor<T>, BnSaved<T>) {
    let c = x.shape().c;
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
    for ((xp, hp), yp) in x
        .raw()
        .chunks_exact(c)
        .zip(x_hat.raw_mut().chunks_exact_mut(c))
        .zip(y.raw_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let h = (xp[ch] - mean_t[ch]) * inv_std[ch];
            hp[ch] = h;
            yp[ch] = scale[ch] * h + shift[ch];
        }
    }
    (
        y,
        BnSaved {
            x_hat,
            inv_std: inv_std.to_vec(),
        },
    )
}

/// Normalizes with the statistics of the batch itself (over `n, y, x`).
pub fn batchnorm_train_forward<T: Real>(
    x: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BnSaved<T>, BnBatchStats)> {
    let s = x.shape();
    check_bn(s, scale, shift)?;
    let m = s.pixels();
    if m == 0 {
        return Err(Error::invalid("batch norm over an empty batch"));
    }
    let mut mean = vec![0.0f64; s.c];
    for px in x.raw().chunks_exact(s.c) {
        for (acc, &v) in mean.iter_mut().zip(px) {
            *acc += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut var = vec![0.0f64; s.c];
    for px in x.raw().chunks_exact(s.c) {
        for ((acc, &v), mu) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.as_f64() - mu;
            *acc += d * d;
        }
    }
    let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
    let inv_std: Vec<T> = biased.iter().map(|v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
    let (y, saved) = bn_apply(x, &mean, &inv_std, scale, shift);
    let var_unbiased = if m > 1 {
        var.iter().map(|v| v / (m - 1) as f64).collect()
    } else {
        biased
    };
    Ok((y, saved, BnBatchStats { mean, var_unbiased }))
}

/// Normalizes with running statistics: a fixed per-channel affine map.
pub fn batchnorm_eval_forward<T: Real>(
    x: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let s = x.shape();
    check_bn(s, scale, shift)?;
    check_bn(s, running_mean, running_var)?;
    let mean: Vec<f64> = running_mean.iter().map(|v| v.as_f64()).collect();
    let inv_std: Vec<T> = running_var
        .iter()
        .map(|v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();
    Ok(bn_apply(x, &mean, &inv_std, scale, shift))
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

fn bn_param_grads<T: Real>(saved: &BnSaved<T>, dy: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let c = dy.shape().c;
    let mut dscale = vec![0.0f64; c];
    let mut dshift = vec![0.0f64; c];
    for (gp, hp) in dy.raw().chunks_exact(c).zip(saved.x_hat.raw().chunks_exact(c)) {
        for ch in 0..c {
            dshift[ch] += gp[ch].as_f64();
            dscale[ch] += (gp[ch] * hp[ch]).as_f64();
        }
    }
    (dscale, dshift)
}

pub fn batchnorm_train_backward<T: Real>(saved: &BnSaved<T>, scale: &[T], dy: &Tensor<T>) -> BnGrads<T> {
    let s = dy.shape();
    let c = s.c;
    let m = s.pixels() as f64;
    let (dscale, dshift) = bn_param_grads(saved, dy);
    let mut dx = Tensor::zeros(s);
    for ((dp, gp), hp) in dx
        .raw_mut()
        .chunks_exact_mut(c)
        .zip(dy.raw().chunks_exact(c))
        .zip(saved.x_hat.raw().chunks_exact(c))
    {
        for ch in 0..c {
            let k = scale[ch].as_f64() * saved.inv_std[ch].as_f64() / m;
            let v = k * (m * gp[ch].as_f64() - dshift[ch] - hp[ch].as_f64() * dscale[ch]);
            dp[ch] = T::from_f64(v);
        }
    }
    BnGrads {
        input: dx,
        scale: dscale.into_iter().map(T::from_f64).collect(),
        shift: dshift.into_iter().map(T::from_f64).collect(),
    }
}

pub fn batchnorm_eval_backward<T: Real>(saved: &BnSaved<T>, scale: &[T], dy: &Tensor<T>) -> BnGrads<T> {
    let c = dy.shape().c;
    let (dscale, dshift) = bn_param_grads(saved, dy);
    let k: Vec<T> = scale.iter().zip(&saved.inv_std).map(|(&a, &b)| a * b).collect();
    let mut dx = Tensor::zeros(dy.shape());
    for (dp, gp) in dx.raw_mut().chunks_exact_mut(c).zip(dy.raw().chunks_exact(c)) {
        for ch in 0..c {
            dp[ch] = gp[ch] * k[ch];
        }
    }
    BnGrads {
        input: dx,
        scale: dscale.into_iter().map(T::from_f64).collect(),
        shift: dshift.into_iter().map(T::from_f64).collect(),
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at the kink. `y` is the forward output.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .raw()
        .iter()
        .zip(dy.raw())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_raw(dy.shape(), data)
}

pub fn add_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!("cannot add {} and {}", a.shape(), b.shape())));
    }
    let data = a.raw().iter().zip(b.raw()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_raw(a.shape(), data))
}

/// Concatenates along channels, `a` first.
pub fn concat_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::invalid(format!("cannot concatenate {sa} and {sb}")));
    }
    let c = sa.c + sb.c;
    let mut data = Vec::with_capacity(sa.pixels() * c);
    for (pa, pb) in a.raw().chunks_exact(sa.c).zip(b.raw().chunks_exact(sb.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Ok(Tensor::from_raw(Shape::new(sa.n, c, sa.h, sa.w), data))
}

pub fn concat_backward<T: Real>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let s = dy.shape();
    let cb = s.c - ca;
    let mut da = Vec::with_capacity(s.pixels() * ca);
    let mut db = Vec::with_capacity(s.pixels() * cb);
    for px in dy.raw().chunks_exact(s.c) {
        da.extend_from_slice(&px[..ca]);
        db.extend_from_slice(&px[ca..]);
    }
    (
        Tensor::from_raw(Shape::new(s.n, ca, s.h, s.w), da),
        Tensor::from_raw(Shape::new(s.n, cb, s.h, s.w), db),
    )
}

pub fn crop_forward<T: Real>(x: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if y0 + h > s.h || x0 + w > s.w {
        return Err(Error::invalid(format!("crop {h}x{w}+{y0}+{x0} outside {s}")));
    }
    let mut data = Vec::with_capacity(s.n * h * w * s.c);
    for n in 0..s.n {
        for y in y0..y0 + h {
            let start = ((n * s.h + y) * s.w + x0) * s.c;
            data.extend_from_slice(&x.raw()[start..start + w * s.c]);
        }
    }
    Ok(Tensor::from_raw(Shape::new(s.n, s.c, h, w), data))
}

pub fn crop_backward<T: Real>(dy: &Tensor<T>, input: Shape, y0: usize, x0: usize) -> Tensor<T> {
    let s = dy.shape();
    let mut dx = Tensor::zeros(input);
    for n in 0..s.n {
        for y in 0..s.h {
            let src = ((n * s.h + y) * s.w) * s.c;
            let dst = ((n * input.h + y + y0) * input.w + x0) * s.c;
            dx.raw_mut()[dst..dst + s.w * s.c].copy_from_slice(&dy.raw()[src..src + s.w * s.c]);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_nchw(shape, v).unwrap()
    }

    #[test]
    fn identity_pointwise_convolution() {
        let s = ConvShape { in_ch: 3, out_ch: 3, kernel: 1, groups: 1 };
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = t(Shape::new(2, 3, 2, 2), &(0..24).map(|v| v as f64 * 0.5 - 3.0).collect::<Vec<_>>());
        let y = conv2d_forward(&x, &w, Some(&[0.0; 3]), &s, ConvGeom::same(2, 2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_ones_kernel_counts_neighbors() {
        let s = ConvShape { in_ch: 2, out_ch: 2, kernel: 3, groups: 2 };
        let x = Tensor::full(Shape::new(1, 2, 5, 5), 1.0f64);
        let y = conv2d_forward(&x, &[1.0; 18], Some(&[0.0; 2]), &s, ConvGeom::same(5, 5)).unwrap();
        for c in 0..2 {
            assert_eq!(y.at(0, c, 2, 2), 9.0);
            assert_eq!(y.at(0, c, 0, 2), 6.0);
            assert_eq!(y.at(0, c, 2, 4), 6.0);
            assert_eq!(y.at(0, c, 0, 0), 4.0);
            assert_eq!(y.at(0, c, 4, 4), 4.0);
        }
    }

    #[test]
    fn zero_input_yields_bias() {
        let s = ConvShape { in_ch: 4, out_ch: 2, kernel: 3, groups: 2 };
        let w: Vec<f64> = (0..s.weight_len()).map(|i| (i as f64).sin()).collect();
        let x = Tensor::zeros(Shape::new(1, 4, 3, 4));
        let y = conv2d_forward(&x, &w, Some(&[1.5, -2.0]), &s, ConvGeom::same(3, 4)).unwrap();
        for yy in 0..3 {
            for xx in 0..4 {
                assert_eq!(y.at(0, 0, yy, xx), 1.5);
                assert_eq!(y.at(0, 1, yy, xx), -2.0);
            }
        }
    }

    #[test]
    fn group_mismatch_is_rejected() {
        let s = ConvShape { in_ch: 6, out_ch: 4, kernel: 3, groups: 4 };
        assert!(s.validate().is_err());
        let s = ConvShape { in_ch: 4, out_ch: 4, kernel: 3, groups: 2 };
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 3, 3));
        assert!(conv2d_forward(&x, &vec![0.0; s.weight_len()], None, &s, ConvGeom::same(3, 3)).is_err());
    }

    #[test]
    fn pointwise_weight_gradient_is_channel_sum() {
        // loss = sum(conv1x1(x; w)) so dL/dw[o][i] = sum over pixels of x[i]
        let s = ConvShape { in_ch: 3, out_ch: 2, kernel: 1, groups: 1 };
        let x = t(Shape::new(2, 3, 2, 3), &(0..36).map(|v| (v as f64 * 0.37).cos()).collect::<Vec<_>>());
        let w = vec![0.3; 6];
        let y = conv2d_forward(&x, &w, None, &s, ConvGeom::same(2, 3)).unwrap();
        let g = conv2d_backward(&x, &w, &s, ConvGeom::same(2, 3), &Tensor::full(y.shape(), 1.0)).unwrap();
        let nchw = x.to_nchw();
        for i in 0..3 {
            let mut sum = 0.0;
            for n in 0..2 {
                sum += nchw[(n * 3 + i) * 6..(n * 3 + i + 1) * 6].iter().sum::<f64>();
            }
            for o in 0..2 {
                assert!((g.weight[o * 3 + i] - sum).abs() < 1e-12);
            }
        }
        assert_eq!(g.bias, vec![12.0, 12.0]);
    }

    #[test]
    fn batchnorm_two_sample_batch() {
        let x = t(Shape::new(2, 1, 1, 1), &[1.0, 3.0]);
        let (y, _, stats) = batchnorm_train_forward(&x, &[1.0], &[0.0], 1e-12).unwrap();
        assert!((y.at(0, 0, 0, 0) + 1.0).abs() < 1e-9);
        assert!((y.at(1, 0, 0, 0) - 1.0).abs() < 1e-9);
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var_unbiased, vec![2.0]);
    }

    #[test]
    fn batchnorm_eval_identity() {
        let x = t(Shape::new(1, 2, 1, 2), &[0.5, -1.0, 3.0, 2.0]);
        let (y, _) = batchnorm_eval_forward(&x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], 1e-5).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-4);
    }

    #[test]
    fn relu_add_concat_crop() {
        let x = t(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).to_nchw(), vec![0.0, 0.0, 2.0]);

        let a = t(Shape::new(1, 1, 1, 2), &[1.0, 2.0]);
        let b = t(Shape::new(1, 1, 1, 2), &[3.0, -5.0]);
        assert_eq!(add_forward(&a, &b).unwrap().to_nchw(), vec![4.0, -3.0]);
        assert_eq!(add_forward(&a, &Tensor::zeros(a.shape())).unwrap(), a);
        assert!(add_forward(&a, &x).is_err());

        let c = concat_forward(&a, &b).unwrap();
        assert_eq!(c.to_nchw(), vec![1.0, 2.0, 3.0, -5.0]);
        let (da, db) = concat_backward(&c, 1);
        assert_eq!((da, db), (a, b));

        let big = t(Shape::new(1, 1, 3, 3), &(0..9).map(|v| v as f64).collect::<Vec<_>>());
        let cr = crop_forward(&big, 1, 1, 2, 1).unwrap();
        assert_eq!(cr.to_nchw(), vec![4.0, 7.0]);
        let back = crop_backward(&cr, big.shape(), 1, 1);
        assert_eq!(back.to_nchw(), vec![0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 7.0, 0.0]);
    }
}
