use crate::tensor::{Real, Shape, Tensor};

/// Mean over samples and both outputs of `|pred - target|`, plus `λ‖θ‖²`.
pub fn loss(pred: &[[f64; 2]], target: &[[f64; 2]], theta_sq: f64, lambda: f64) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return lambda * theta_sq;
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| [(p[0] - t[0]).abs(), (p[1] - t[1]).abs()])
        .sum();
    sum / (2 * pred.len()) as f64 + lambda * theta_sq
}

/// Data term of [`loss`] for a `[n, 2, 1, 1]` prediction, with its gradient.
/// The derivative of `|·|` at 0 is taken as 0.
pub fn center_mae<T: Real>(pred: &Tensor<T>, target: &[[f32; 2]]) -> (f64, f64, Tensor<T>) {
    let s = pred.shape();
    assert_eq!((s.c, s.h, s.w), (2, 1, 1));
    assert_eq!(s.n, target.len());
    let denom = (2 * s.n) as f64;
    let mut abs = 0.0;
    let mut bias = 0.0;
    let mut grad = Vec::with_capacity(2 * s.n);
    for (p, t) in pred.raw().chunks_exact(2).zip(target) {
        for c in 0..2 {
            let d = p[c].as_f64() - t[c] as f64;
            abs += d.abs();
            bias += d;
            let g = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.push(T::from_f64(g / denom));
        }
    }
    // with 1×1 spatial extent, channels-last storage is logical order
    (abs / denom, bias / denom, Tensor::from_raw(Shape::new(s.n, 2, 1, 1), grad))
}
