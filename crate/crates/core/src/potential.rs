//! Hölder potentials, Birkhoff sums and the oscillation calculus on cylinders.

use crate::cylinders::Cylinder;
use crate::dynamics::MapModel;
use crate::error::{Error, Result};
use crate::fourier::Fourier;
use crate::observable::Observable;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Constant(f64),
    Fourier(Fourier),
    /// `height * max(0, 1 - d(x, center) / width)^alpha`.
    Bump { center: f64, width: f64, height: f64 },
}

/// An `alpha`-Hölder potential with certified sup, inf and Hölder constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    kind: PotentialKind,
    #[serde(default)]
    offset: f64,
    alpha: f64,
    holder_const: f64,
    sup_phi: f64,
    inf_phi: f64,
}

impl Potential {
    pub fn constant(c: f64) -> Self {
        Potential { kind: PotentialKind::Constant(c), offset: 0.0, alpha: 1.0, holder_const: 0.0, sup_phi: c, inf_phi: c }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn fourier(f: Fourier, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let (inf_phi, sup_phi) = f.range();
        let lip = f.lipschitz();
        let osc = sup_phi - inf_phi;
        // min(L d, osc) <= L^a osc^(1-a) d^a
        let holder_const = if alpha == 1.0 { lip } else { lip.powf(alpha) * osc.powf(1.0 - alpha) };
        Ok(Potential { kind: PotentialKind::Fourier(f), offset: 0.0, alpha, holder_const, sup_phi, inf_phi })
    }

    /// `amplitude * cos(2 pi x)`, Lipschitz.
    pub fn cosine(amplitude: f64) -> Self {
        Self::fourier(Fourier::cosine(1, amplitude), 1.0).expect("alpha = 1 is valid")
    }

    pub fn bump(center: f64, width: f64, height: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(width > 0.0 && width <= 0.5) {
            return Err(Error::MalformedPotential("bump width must lie in (0, 1/2]".into()));
        }
        let (inf_phi, sup_phi) = if height >= 0.0 { (0.0, height) } else { (height, 0.0) };
        Ok(Potential {
            kind: PotentialKind::Bump { center: center.rem_euclid(1.0), width, height },
            offset: 0.0,
            alpha,
            holder_const: height.abs() / width.powf(alpha),
            sup_phi,
            inf_phi,
        })
    }

    pub fn from_kind(kind: PotentialKind, alpha: f64) -> Result<Self> {
        match kind {
            PotentialKind::Constant(c) => Ok(Self::constant(c)),
            PotentialKind::Fourier(f) => Self::fourier(f, alpha),
            PotentialKind::Bump { center, width, height } => Self::bump(center, width, height, alpha),
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    pub fn sup(&self) -> f64 {
        self.sup_phi
    }

    pub fn inf(&self) -> f64 {
        self.inf_phi
    }

    pub fn oscillation(&self) -> f64 {
        self.sup_phi - self.inf_phi
    }

    pub fn sup_abs(&self) -> f64 {
        self.sup_phi.abs().max(self.inf_phi.abs())
    }

    pub fn is_constant(&self) -> bool {
        self.oscillation() == 0.0
    }

    /// `phi + c`. Leaves the Hölder constant unchanged.
    pub fn shifted(&self, c: f64) -> Self {
        Potential {
            offset: self.offset + c,
            sup_phi: self.sup_phi + c,
            inf_phi: self.inf_phi + c,
            ..self.clone()
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.offset + self.eval_kind(x)
    }

    fn eval_kind(&self, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Constant(c) => *c,
            PotentialKind::Fourier(f) => f.eval(x),
            PotentialKind::Bump { center, width, height } => {
                let d = circle_dist(x, *center);
                height * (1.0 - d / width).max(0.0).powf(self.alpha)
            }
        }
    }

    /// `(min, max)` of the potential on `[a, b]`.
    pub fn range_on(&self, a: f64, b: f64) -> (f64, f64) {
        let (lo, hi) = self.range_on_kind(a, b);
        (lo + self.offset, hi + self.offset)
    }

    fn range_on_kind(&self, a: f64, b: f64) -> (f64, f64) {
        match &self.kind {
            PotentialKind::Constant(c) => (*c, *c),
            PotentialKind::Fourier(f) => f.range_on(a, b),
            PotentialKind::Bump { center, .. } => {
                // unimodal on the circle: extremes at endpoints, the center
                // or the antipode
                let mut pts = vec![a, b];
                for p in [*center, (center + 0.5).rem_euclid(1.0)] {
                    if p > a && p < b {
                        pts.push(p);
                    }
                }
                let vals: Vec<f64> = pts.iter().map(|x| self.eval_kind(*x)).collect();
                (
                    vals.iter().copied().fold(f64::INFINITY, f64::min),
                    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::MalformedPotential(format!("Hölder exponent {alpha} not in (0, 1]")))
    }
}

pub fn circle_dist(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// `S_n phi(x) = sum_{j<n} phi(f^j x)`.
pub fn birkhoff_sum(model: &MapModel, phi: &Potential, x: f64, n: usize) -> f64 {
    let mut y = x;
    let mut s = 0.0;
    for _ in 0..n {
        s += phi.eval(y);
        y = model.eval_map(y);
    }
    s
}

/// Sampled supremum of `S_n phi` over a cylinder, with a certified
/// correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupBirkhoff {
    pub raw: f64,
    pub corrected: f64,
}

/// Upper bound for `sup_{x in Q_n} S_n phi(x)`.
///
/// `S_n phi` is evaluated at `samples` evenly spaced points `s_k` of the
/// closure (endpoints included). Since `f^j` is monotone on `Q_n`, a point
/// between `s_k` and `s_{k+1}` stays within the transported gap
/// `g_{j,k} = |f^j s_{k+1} - f^j s_k|` of `f^j s_k`, so
/// `S_n phi(s_k) + C_phi * sum_j g_{j,k}^alpha` bounds the cell.
pub fn sup_birkhoff_on_cylinder(
    model: &MapModel,
    phi: &Potential,
    cyl: &Cylinder,
    samples: usize,
) -> SupBirkhoff {
    let n = cyl.level();
    if phi.is_constant() {
        let v = n as f64 * phi.sup();
        return SupBirkhoff { raw: v, corrected: v };
    }
    let m = samples.max(2);
    let mut pts: Vec<f64> =
        (0..m).map(|k| cyl.a + (cyl.b - cyl.a) * k as f64 / (m - 1) as f64).collect();
    pts[m - 1] = cyl.b;
    let mut sums = vec![0.0; m];
    let mut spread = vec![0.0; m - 1];
    for _ in 0..n {
        for k in 0..m {
            sums[k] += phi.eval(pts[k]);
        }
        for k in 0..m - 1 {
            let mut gap = pts[k + 1] - pts[k];
            if gap < 0.0 {
                gap += 1.0;
            }
            spread[k] += phi.holder_const() * gap.powf(phi.alpha());
        }
        for p in pts.iter_mut() {
            *p = model.eval_map(*p);
        }
    }
    let raw = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let corrected = (0..m - 1)
        .map(|k| (sums[k] + spread[k]).min(sums[k] + n as f64 * phi.oscillation()))
        .fold(raw, f64::max);
    SupBirkhoff { raw, corrected }
}

/// `osc(g, Q)`: the oscillation of `g` over the cylinder interval.
///
/// Trigonometric observables are evaluated exactly through their critical
/// points, indicators symbolically by containment, anything else by `quad`
/// samples plus a Lipschitz correction capped by the global range.
pub fn essential_oscillation(g: &Observable, cyl: &Cylinder, quad: usize) -> f64 {
    let (lo, hi) = g.range_on(cyl.a, cyl.b, quad.max(2));
    (hi - lo).max(0.0)
}
