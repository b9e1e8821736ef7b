use crate::{Error, Result};

use super::PatchSample;

/// Per-channel mean and standard deviation of the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes one channel-major patch in place.
    pub fn apply(&self, x: &mut [f32]) {
        let plane = x.len() / self.channels();
        for (c, chunk) in x.chunks_exact_mut(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }

    pub fn to_kv(&self, kv: &mut crate::kv::KvConfig) {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        kv.set("norm_mean", join(&self.mean));
        kv.set("norm_std", join(&self.std));
    }

    pub fn from_kv(kv: &crate::kv::KvConfig) -> Result<Self> {
        let mean = crate::kv::parse_list(kv.require("norm_mean")?)?;
        let std: Vec<f64> = crate::kv::parse_list(kv.require("norm_std")?)?;
        if mean.len() != std.len() || std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::invalid("norm_mean and norm_std must be equally long, std positive"));
        }
        Ok(NormStats { mean, std })
    }
}

/// Mean and population standard deviation over every pixel of every patch.
pub fn compute_norm_stats(samples: &[&PatchSample]) -> Result<NormStats> {
    let first = samples.first().ok_or_else(|| Error::invalid("no training patches"))?;
    let c = first.channels;
    let plane = first.x.len() / c;
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let count = (samples.len() * plane) as f64;
    for s in samples {
        if s.channels != c || s.x.len() != c * plane {
            return Err(Error::invalid("patches differ in shape"));
        }
        for (ch, chunk) in s.x.chunks_exact(plane).enumerate() {
            for &v in chunk {
                sum[ch] += v as f64;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    for s in samples {
        for (ch, chunk) in s.x.chunks_exact(plane).enumerate() {
            for &v in chunk {
                let d = v as f64 - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count).sqrt()).collect();
    for (ch, &s) in std.iter().enumerate() {
        // relative test: a constant channel leaves only rounding residue
        if !(s > 1e-9 * mean[ch].abs().max(1e-30)) {
            return Err(Error::invalid(format!("input channel {ch} has zero variance")));
        }
    }
    Ok(NormStats { mean, std })
}

/// Returns a normalized copy of `x`.
pub fn apply_norm(x: &[f32], stats: &NormStats) -> Vec<f32> {
    let mut out = x.to_vec();
    stats.apply(&mut out);
    out
}
