//! Small statistics toolkit: least squares, Kolmogorov–Smirnov distances,
//! bootstrap intervals.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub max_residual: f64,
}

/// Ordinary least squares `y ≈ intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let max_residual = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit { slope, intercept, r_squared, max_residual }
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Two-sided Kolmogorov–Smirnov distance between the empirical law of
/// `xs` and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d = 0.0_f64;
    let mut i = 0;
    while i < v.len() {
        // ties collapse into a single jump
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

pub fn ks_normal(xs: &[f64]) -> f64 {
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    ks_distance(xs, |x| z.cdf(x))
}

/// `sup_t |P(X > t) - e^{-t}|` over the grid `{0, step, ..., t_max}`.
pub fn ks_exponential_grid(xs: &[f64], step: f64, t_max: f64) -> f64 {
    let curve = survival_curve(xs, step, t_max);
    curve.iter().map(|(t, g)| (g - (-t).exp()).abs()).fold(0.0, f64::max)
}

/// Empirical survival function `P(X > t)` on a grid.
pub fn survival_curve(xs: &[f64], step: f64, t_max: f64) -> Vec<(f64, f64)> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let steps = (t_max / step).round() as usize;
    (0..=steps)
        .map(|k| {
            let t = k as f64 * step;
            let le = v.partition_point(|x| *x <= t);
            (t, (v.len() - le) as f64 / n)
        })
        .collect()
}

/// Percentile bootstrap interval for a statistic.
pub fn bootstrap_ci<R: Rng, F: Fn(&[f64]) -> f64>(
    xs: &[f64],
    stat: F,
    reps: usize,
    level: f64,
    rng: &mut R,
) -> (f64, f64) {
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.gen_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    let tail = 0.5 * (1.0 - level);
    (quantile(&vals, tail), quantile(&vals, 1.0 - tail))
}

/// True when every element is strictly smaller than its predecessor.
pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 3.0).abs() < 1e-13);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ks_against_brute_force() {
        let xs = [0.1, 0.4, 0.4, 0.9];
        // uniform CDF on [0, 1]: brute force over a fine grid
        let brute = (0..=100_000)
            .map(|k| {
                let t = k as f64 / 100_000.0;
                let emp = xs.iter().filter(|x| **x <= t).count() as f64 / 4.0;
                (emp - t).abs()
            })
            .fold(0.0, f64::max);
        let ks = ks_distance(&xs, |t| t.clamp(0.0, 1.0));
        assert!((ks - brute).abs() < 1e-4, "{ks} vs {brute}");
    }

    #[test]
    fn normal_sample_is_close() {
        let z = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..2000).map(|k| z.inverse_cdf((k as f64 + 0.5) / 2000.0)).collect();
        assert!(ks_normal(&xs) <= 0.5 / 2000.0 + 1e-9);
    }

    #[test]
    fn survival_and_bootstrap() {
        let xs = [0.5, 1.0, 2.0, 3.0];
        let s = survival_curve(&xs, 0.5, 3.0);
        assert_eq!(s[0], (0.0, 1.0));
        assert_eq!(s[1], (0.5, 0.75));
        assert_eq!(s[6], (3.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..200).map(|k| k as f64).collect();
        let (lo, hi) = bootstrap_ci(&data, |v| mean_se(v).0, 500, 0.95, &mut rng);
        assert!(lo < 99.5 && hi > 99.5 && hi - lo < 40.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
