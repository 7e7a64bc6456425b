//! Real trigonometric polynomials on the circle `[0, 1)`.
//!
//! `a0 + sum_k (cos[k-1] * cos(2 pi k x) + sin[k-1] * sin(2 pi k x))`
//!
//! Used both as deformations of linear circle maps and as potentials /
//! observables. Range queries on subintervals are exact up to the
//! resolution of the critical-point search.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Fourier {
    pub a0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl Fourier {
    pub fn constant(a0: f64) -> Self {
        Fourier { a0, cos: Vec::new(), sin: Vec::new() }
    }

    /// `amplitude * cos(2 pi k x)`.
    pub fn cosine(k: usize, amplitude: f64) -> Self {
        assert!(k >= 1);
        let mut cos = vec![0.0; k];
        cos[k - 1] = amplitude;
        Fourier { a0: 0.0, cos, sin: Vec::new() }
    }

    /// `amplitude * sin(2 pi k x)`.
    pub fn sine(k: usize, amplitude: f64) -> Self {
        assert!(k >= 1);
        let mut sin = vec![0.0; k];
        sin[k - 1] = amplitude;
        Fourier { a0: 0.0, cos: Vec::new(), sin }
    }

    pub fn with_offset(mut self, a0: f64) -> Self {
        self.a0 = a0;
        self
    }

    pub fn degree(&self) -> usize {
        let last_nz = |v: &[f64]| v.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
        last_nz(&self.cos).max(last_nz(&self.sin))
    }

    fn coef(&self, k: usize) -> (f64, f64) {
        (
            self.cos.get(k - 1).copied().unwrap_or(0.0),
            self.sin.get(k - 1).copied().unwrap_or(0.0),
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut s = self.a0;
        for k in 1..=self.degree() {
            let (a, b) = self.coef(k);
            let t = TAU * k as f64 * x;
            if a != 0.0 {
                s += a * t.cos();
            }
            if b != 0.0 {
                s += b * t.sin();
            }
        }
        s
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..=self.degree() {
            let (a, b) = self.coef(k);
            let w = TAU * k as f64;
            let t = w * x;
            s += w * (b * t.cos() - a * t.sin());
        }
        s
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..=self.degree() {
            let (a, b) = self.coef(k);
            let w = TAU * k as f64;
            let t = w * x;
            s -= w * w * (a * t.cos() + b * t.sin());
        }
        s
    }

    /// The derivative as a trigonometric polynomial.
    pub fn derivative(&self) -> Fourier {
        let deg = self.degree();
        let mut cos = vec![0.0; deg];
        let mut sin = vec![0.0; deg];
        for k in 1..=deg {
            let (a, b) = self.coef(k);
            let w = TAU * k as f64;
            cos[k - 1] = w * b;
            sin[k - 1] = -w * a;
        }
        Fourier { a0: 0.0, cos, sin }
    }

    /// Pointwise product, by convolution of the complex coefficients
    /// `c_k = (a_k - i b_k) / 2`, `c_0 = a0`.
    pub fn mul(&self, other: &Fourier) -> Fourier {
        let complex = |f: &Fourier| -> Vec<(f64, f64)> {
            let d = f.degree() as i64;
            (-d..=d)
                .map(|k| {
                    if k == 0 {
                        (f.a0, 0.0)
                    } else {
                        let (a, b) = f.coef(k.unsigned_abs() as usize);
                        if k > 0 {
                            (0.5 * a, -0.5 * b)
                        } else {
                            (0.5 * a, 0.5 * b)
                        }
                    }
                })
                .collect()
        };
        let (p, q) = (complex(self), complex(other));
        let (dp, dq) = (self.degree() as i64, other.degree() as i64);
        let deg = (dp + dq) as usize;
        let mut re = vec![0.0; 2 * deg + 1];
        let mut im = vec![0.0; 2 * deg + 1];
        for (i, (pr, pi)) in p.iter().enumerate() {
            for (j, (qr, qi)) in q.iter().enumerate() {
                let k = (i as i64 - dp) + (j as i64 - dq) + deg as i64;
                re[k as usize] += pr * qr - pi * qi;
                im[k as usize] += pr * qi + pi * qr;
            }
        }
        let mut out = Fourier { a0: re[deg], cos: vec![0.0; deg], sin: vec![0.0; deg] };
        for k in 1..=deg {
            out.cos[k - 1] = 2.0 * re[deg + k];
            out.sin[k - 1] = -2.0 * im[deg + k];
        }
        out
    }

    /// Upper bound for `sup |g'|`.
    pub fn lipschitz(&self) -> f64 {
        (1..=self.degree())
            .map(|k| {
                let (a, b) = self.coef(k);
                TAU * k as f64 * a.hypot(b)
            })
            .sum()
    }

    /// Upper bound for `sup |g''|`.
    pub fn second_lipschitz(&self) -> f64 {
        (1..=self.degree())
            .map(|k| {
                let (a, b) = self.coef(k);
                let w = TAU * k as f64;
                w * w * a.hypot(b)
            })
            .sum()
    }

    /// `(min, max)` of the polynomial on `[a, b]`.
    ///
    /// Extremes are attained at endpoints or at zeros of `g'`; zeros are
    /// bracketed on a grid fine enough that every cell holds at most one
    /// sign change of `g'` generically, then bisected.
    pub fn range_on(&self, a: f64, b: f64) -> (f64, f64) {
        let (mut lo, mut hi) = {
            let (ga, gb) = (self.eval(a), self.eval(b));
            (ga.min(gb), ga.max(gb))
        };
        let deg = self.degree();
        if deg == 0 || b <= a {
            return (lo, hi);
        }
        let cells = ((b - a) * 16.0 * deg as f64).ceil().max(4.0) as usize;
        let h = (b - a) / cells as f64;
        let mut x0 = a;
        let mut d0 = self.deriv(x0);
        for i in 1..=cells {
            let x1 = if i == cells { b } else { a + h * i as f64 };
            let d1 = self.deriv(x1);
            if d0 == 0.0 || d0.signum() != d1.signum() {
                let r = if d0 == 0.0 { x0 } else { self.bisect_deriv(x0, x1, d0) };
                let v = self.eval(r);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            x0 = x1;
            d0 = d1;
        }
        (lo, hi)
    }

    /// Global `(min, max)` over the circle.
    pub fn range(&self) -> (f64, f64) {
        let deg = self.degree();
        if deg == 0 {
            return (self.a0, self.a0);
        }
        let nonzero: Vec<usize> = (1..=deg)
            .filter(|&k| {
                let (a, b) = self.coef(k);
                a != 0.0 || b != 0.0
            })
            .collect();
        if nonzero.len() == 1 {
            let (a, b) = self.coef(nonzero[0]);
            let r = a.hypot(b);
            return (self.a0 - r, self.a0 + r);
        }
        self.range_on(0.0, 1.0)
    }

    fn bisect_deriv(&self, mut lo: f64, mut hi: f64, dlo: f64) -> f64 {
        let s = dlo.signum();
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.deriv(mid).signum() == s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
