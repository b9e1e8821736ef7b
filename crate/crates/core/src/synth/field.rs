use rand::Rng;

/// Smooth random field in `[0, 1]`: value noise on a lattice of spacing
/// `scale` cells with smoothstep interpolation, summed over `octaves`
/// (each half the spacing and half the amplitude of the previous one) and
/// rescaled to the unit interval.
pub fn smooth_field<R: Rng>(rng: &mut R, width: usize, height: usize, scale: f64, octaves: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; width * height];
    let mut amp = 1.0;
    let mut s = scale.max(1.0);
    for _ in 0..octaves.max(1) {
        let lw = (width as f64 / s).ceil() as usize + 2;
        let lh = (height as f64 / s).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
        for r in 0..height {
            let v = r as f64 / s;
            let (r0, fy) = (v.floor() as usize, smoothstep(v.fract()));
            for c in 0..width {
                let u = c as f64 / s;
                let (c0, fx) = (u.floor() as usize, smoothstep(u.fract()));
                let at = |rr: usize, cc: usize| lattice[rr * lw + cc];
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c0 + 1) * fx;
                let bot = at(r0 + 1, c0) * (1.0 - fx) + at(r0 + 1, c0 + 1) * fx;
                acc[r * width + c] += amp * (top * (1.0 - fy) + bot * fy);
            }
        }
        amp *= 0.5;
        s = (s / 2.0).max(1.0);
    }
    let (lo, hi) = acc.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    acc.into_iter().map(|v| ((v - lo) / span) as f32).collect()
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value below which a fraction `q` of `v` lies.
pub fn quantile(v: &[f32], q: f64) -> f32 {
    let mut s = v.to_vec();
    s.sort_unstable_by(f32::total_cmp);
    let i = ((q.clamp(0.0, 1.0) * s.len() as f64) as usize).min(s.len() - 1);
    s[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn unit_range_and_deterministic() {
        let mk = || smooth_field(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3), 64, 40, 16.0, 2);
        let a = mk();
        assert_eq!(a, mk());
        let (lo, hi) = a.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert_eq!((lo, hi), (0.0, 1.0));
        // neighbors differ by much less than the range
        assert!(a.chunks(64).all(|row| row.windows(2).all(|w| (w[0] - w[1]).abs() < 0.25)));
    }

    #[test]
    fn quantile_rank() {
        let v: Vec<f32> = (0..100).map(|i| i as f32).collect();
        assert_eq!(quantile(&v, 0.25), 25.0);
        assert_eq!(quantile(&v, 1.0), 99.0);
    }
}
