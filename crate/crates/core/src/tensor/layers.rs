//! Layer descriptors: parameter handles plus static shape.

use rand::Rng;

use super::ops::ConvShape;
use super::{ParamId, ParamKind, ParamStore, Real};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub shape: ConvShape,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// Registers `{prefix}.weight` (and `{prefix}.bias`) with fan-in
    /// uniform initialization, bound `1/sqrt(fan_in)`.
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shape: ConvShape,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        shape.validate()?;
        let dims = shape.weight_dims();
        let fan_in = dims[1] * dims[2] * dims[3];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..shape.weight_len())
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        let weight = store.register(format!("{prefix}.weight"), ParamKind::Weight, &dims, w)?;
        let bias = if with_bias {
            let b = (0..shape.out_ch)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                .collect();
            Some(store.register(format!("{prefix}.bias"), ParamKind::Bias, &[shape.out_ch], b)?)
        } else {
            None
        };
        Ok(Conv2d { shape, weight, bias })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormOptions {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        BatchNormOptions {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    /// Registers scale 1, shift 0, running mean 0 and running variance 1.
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize, eps: f64) -> Result<Self> {
        let c = [channels];
        Ok(BatchNorm {
            channels,
            scale: store.register(format!("{prefix}.scale"), ParamKind::BnScale, &c, vec![T::one(); channels])?,
            shift: store.register(format!("{prefix}.shift"), ParamKind::BnShift, &c, vec![T::zero(); channels])?,
            running_mean: store.register(
                format!("{prefix}.running_mean"),
                ParamKind::RunningMean,
                &c,
                vec![T::zero(); channels],
            )?,
            running_var: store.register(
                format!("{prefix}.running_var"),
                ParamKind::RunningVar,
                &c,
                vec![T::one(); channels],
            )?,
            eps,
        })
    }
}
