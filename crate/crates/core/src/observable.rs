//! Bounded observables on the circle.

use crate::fourier::Fourier;
use crate::potential::Potential;
use std::fmt;
use std::sync::Arc;

const CONTAIN_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum Observable {
    Constant(f64),
    Fourier(Fourier),
    /// Indicator of a union of half-open intervals `[a, b)` in `[0, 1]`.
    Indicator(Vec<(f64, f64)>),
    Potential(Potential),
    /// Arbitrary function with a Lipschitz constant and global bounds.
    Custom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lipschitz: f64,
        bounds: (f64, f64),
    },
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Constant(c) => write!(f, "Constant({c})"),
            Observable::Fourier(g) => write!(f, "Fourier({g:?})"),
            Observable::Indicator(iv) => write!(f, "Indicator({iv:?})"),
            Observable::Potential(p) => write!(f, "Potential({:?})", p.kind()),
            Observable::Custom { lipschitz, bounds, .. } => {
                write!(f, "Custom {{ lipschitz: {lipschitz}, bounds: {bounds:?} }}")
            }
        }
    }
}

impl Observable {
    pub fn constant(c: f64) -> Self {
        Observable::Constant(c)
    }

    /// Indicator of a union of intervals; overlapping or touching pieces are
    /// merged.
    pub fn indicator(mut intervals: Vec<(f64, f64)>) -> Self {
        intervals.retain(|(a, b)| b > a);
        intervals.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in intervals {
            match merged.last_mut() {
                Some(last) if a <= last.1 + CONTAIN_TOL => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Observable::Indicator(merged)
    }

    pub fn from_fn<F>(f: F, lipschitz: f64, bounds: (f64, f64)) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Observable::Custom { f: Arc::new(f), lipschitz, bounds }
    }

    /// Pointwise product; exact for pairs of trigonometric polynomials.
    pub fn product(g: &Observable, h: &Observable) -> Observable {
        match (g, h) {
            (Observable::Fourier(a), Observable::Fourier(b)) => Observable::Fourier(a.mul(b)),
            (Observable::Constant(c), o) | (o, Observable::Constant(c)) => {
                let c = *c;
                let (lo, hi) = o.bounds();
                let lip = c.abs() * o_lip(o);
                let o = o.clone();
                Observable::from_fn(
                    move |x| c * o.eval(x),
                    lip,
                    ((c * lo).min(c * hi), (c * lo).max(c * hi)),
                )
            }
            _ => {
                let (g, h) = (g.clone(), h.clone());
                let lip = o_lip(&g) * h.sup_abs() + g.sup_abs() * o_lip(&h);
                let s = g.sup_abs() * h.sup_abs();
                Observable::from_fn(move |x| g.eval(x) * h.eval(x), lip, (-s, s))
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Observable::Constant(c) => *c,
            Observable::Fourier(g) => g.eval(x),
            Observable::Indicator(iv) => {
                if iv.iter().any(|(a, b)| x >= *a && x < *b) {
                    1.0
                } else {
                    0.0
                }
            }
            Observable::Potential(p) => p.eval(x),
            Observable::Custom { f, .. } => f(x),
        }
    }

    /// Global `(inf, sup)`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Observable::Constant(c) => (*c, *c),
            Observable::Fourier(g) => g.range(),
            Observable::Indicator(iv) => {
                let covered: f64 = iv.iter().map(|(a, b)| b.min(1.0) - a.max(0.0)).sum();
                let lo = if covered >= 1.0 - CONTAIN_TOL { 1.0 } else { 0.0 };
                let hi = if iv.is_empty() { 0.0 } else { 1.0 };
                (lo, hi)
            }
            Observable::Potential(p) => (p.inf(), p.sup()),
            Observable::Custom { bounds, .. } => *bounds,
        }
    }

    pub fn sup_abs(&self) -> f64 {
        let (lo, hi) = self.bounds();
        lo.abs().max(hi.abs())
    }

    /// True when the observable is constant on every level-`n` cylinder for
    /// some finite `n` (indicators of cylinder unions, constants).
    pub fn is_piecewise_constant(&self) -> bool {
        matches!(self, Observable::Constant(_) | Observable::Indicator(_))
    }

    /// `(min, max)` over `[a, b]`.
    pub fn range_on(&self, a: f64, b: f64, quad: usize) -> (f64, f64) {
        match self {
            Observable::Constant(c) => (*c, *c),
            Observable::Fourier(g) => g.range_on(a, b),
            Observable::Potential(p) => p.range_on(a, b),
            Observable::Indicator(iv) => {
                let meets = iv.iter().any(|(s, t)| b.min(*t) - a.max(*s) > CONTAIN_TOL);
                let inside = iv.iter().any(|(s, t)| *s <= a + CONTAIN_TOL && b <= *t + CONTAIN_TOL);
                match (meets, inside) {
                    (_, true) => (1.0, 1.0),
                    (true, false) => (0.0, 1.0),
                    (false, false) => (0.0, 0.0),
                }
            }
            Observable::Custom { f, lipschitz, bounds } => {
                let quad = quad.max(2);
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for k in 0..quad {
                    let v = f(a + (b - a) * k as f64 / (quad - 1) as f64);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                let corr = 0.5 * lipschitz * (b - a) / (quad - 1) as f64;
                ((lo - corr).max(bounds.0), (hi + corr).min(bounds.1))
            }
        }
    }
}

fn o_lip(o: &Observable) -> f64 {
    match o {
        Observable::Constant(_) => 0.0,
        Observable::Fourier(g) => g.lipschitz(),
        Observable::Potential(p) => {
            if p.alpha() == 1.0 {
                p.holder_const()
            } else {
                f64::INFINITY
            }
        }
        Observable::Indicator(_) => f64::INFINITY,
        Observable::Custom { lipschitz, .. } => *lipschitz,
    }
}

impl From<Fourier> for Observable {
    fn from(g: Fourier) -> Self {
        Observable::Fourier(g)
    }
}

impl From<Potential> for Observable {
    fn from(p: Potential) -> Self {
        Observable::Potential(p)
    }
}
