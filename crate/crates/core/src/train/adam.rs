use crate::tensor::{ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per trainable parameter plus the step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of every trainable parameter from the
/// gradients currently stored in `params`.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState, cfg: &AdamConfig) {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.v = state.m.clone();
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if !p.kind.is_trainable() {
            continue;
        }
        for i in 0..p.value.len() {
            let g = p.grad[i].as_f64();
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let step = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p.value[i] = T::from_f64(p.value[i].as_f64() - step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamId, ParamKind};
    use proptest::prelude::*;

    fn scalar(theta: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.register("w", ParamKind::Weight, &[1], vec![theta]).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.param_mut(ParamId(0)).grad[0] = g;
    }

    #[test]
    fn zero_gradient_first_step() {
        let mut s = scalar(0.7);
        adam_step(&mut s, &mut AdamState::new(), &AdamConfig::default());
        assert_eq!(s.value(ParamId(0))[0], 0.7);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar(0.0);
        set_grad(&mut s, 1.0);
        adam_step(&mut s, &mut AdamState::new(), &AdamConfig::default());
        let expected = -1e-5 / (1.0 + 1e-8);
        assert!((s.value(ParamId(0))[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn running_stats_are_frozen() {
        let mut s = ParamStore::<f64>::new();
        s.register("rm", ParamKind::RunningMean, &[1], vec![2.0]).unwrap();
        s.param_mut(ParamId(0)).grad[0] = 5.0;
        adam_step(&mut s, &mut AdamState::new(), &AdamConfig::default());
        assert_eq!(s.value(ParamId(0))[0], 2.0);
    }

    /// Textbook scalar Adam.
    fn reference(grads: &[f64], theta0: f64, cfg: &AdamConfig) -> f64 {
        let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            th -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
        th
    }

    proptest! {
        #[test]
        fn matches_scalar_reference(grads in prop::collection::vec(-10.0f64..10.0, 100), theta0 in -1.0f64..1.0) {
            let cfg = AdamConfig { learning_rate: 1e-3, ..Default::default() };
            let mut s = scalar(theta0);
            let mut st = AdamState::new();
            for &g in &grads {
                set_grad(&mut s, g);
                adam_step(&mut s, &mut st, &cfg);
            }
            let r = reference(&grads, theta0, &cfg);
            prop_assert!((s.value(ParamId(0))[0] - r).abs() <= 1e-12 * r.abs().max(1.0));
        }

        #[test]
        fn alternating_signs_stay_bounded(mag in 0.01f64..100.0) {
            let cfg = AdamConfig::default();
            let mut s = scalar(0.0);
            let mut st = AdamState::new();
            let mut prev = 0.0;
            for k in 0..200 {
                set_grad(&mut s, if k % 2 == 0 { mag } else { -mag });
                adam_step(&mut s, &mut st, &cfg);
                let cur = s.value(ParamId(0))[0];
                prop_assert!((cur - prev).abs() <= cfg.learning_rate / (1.0 - cfg.beta1) + 1e-15);
                prev = cur;
            }
        }
    }
}
