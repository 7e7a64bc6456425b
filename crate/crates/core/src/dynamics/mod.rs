//! Markov circle maps.
//!
//! A model is an orientation preserving covering map of the circle
//! `[0, 1)` of degree `d >= 2`, given through its lift `F: [0, 1] -> R`
//! (continuous, increasing, `F(1) = F(0) + d`), together with a finite
//! Markov partition into intervals `[e_i, e_{i+1})` and a designation of
//! which elements count as non-expanding.
//!
//! Boundary points are assigned to the left-closed element.

mod hypotheses;

pub use hypotheses::{validate_hypotheses, Check, HypothesisReport, ValidatorParams};

use crate::error::{Error, Result};
use crate::fourier::Fourier;
use serde::{Deserialize, Serialize};

/// Absolute tolerance used when snapping images of endpoints onto
/// partition endpoints.
const SNAP_TOL: f64 = 1e-10;

/// Lift of a circle map to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Lift {
    /// Linear interpolation of `(breaks[k], values[k])`.
    PiecewiseLinear { breaks: Vec<f64>, values: Vec<f64> },
    /// `F(x) = degree * x + eps * g(x)`.
    Deformation { degree: u32, eps: f64, g: Fourier },
}

impl Lift {
    pub fn degree(&self) -> u32 {
        match self {
            Lift::PiecewiseLinear { values, .. } => {
                (values[values.len() - 1] - values[0]).round() as u32
            }
            Lift::Deformation { degree, .. } => *degree,
        }
    }

    fn segment(breaks: &[f64], x: f64) -> usize {
        let k = breaks.partition_point(|b| *b <= x);
        k.saturating_sub(1).min(breaks.len() - 2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Lift::PiecewiseLinear { breaks, values } => {
                let k = Self::segment(breaks, x);
                let slope = (values[k + 1] - values[k]) / (breaks[k + 1] - breaks[k]);
                values[k] + slope * (x - breaks[k])
            }
            Lift::Deformation { degree, eps, g } => *degree as f64 * x + eps * g.eval(x),
        }
    }

    /// Derivative; right derivative at breakpoints of piecewise-linear lifts.
    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Lift::PiecewiseLinear { breaks, values } => {
                let k = Self::segment(breaks, x);
                (values[k + 1] - values[k]) / (breaks[k + 1] - breaks[k])
            }
            Lift::Deformation { degree, eps, g } => *degree as f64 + eps * g.deriv(x),
        }
    }

    /// `(inf F', sup F')` over `[a, b]`.
    pub fn deriv_range(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            Lift::PiecewiseLinear { breaks, values } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for k in 0..breaks.len() - 1 {
                    let overlaps = breaks[k] < b && breaks[k + 1] > a
                        || (a == b && breaks[k] <= a && a < breaks[k + 1]);
                    if overlaps {
                        let s = (values[k + 1] - values[k]) / (breaks[k + 1] - breaks[k]);
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                }
                if lo.is_infinite() {
                    let s = self.deriv(a);
                    (s, s)
                } else {
                    (lo, hi)
                }
            }
            Lift::Deformation { degree, eps, g } => {
                let (glo, ghi) = g.derivative().range_on(a, b);
                let d = *degree as f64;
                if *eps >= 0.0 {
                    (d + eps * glo, d + eps * ghi)
                } else {
                    (d + eps * ghi, d + eps * glo)
                }
            }
        }
    }

    /// Solves `F(x) = y` on `[lo, hi]`, assuming `F(lo) <= y <= F(hi)` up to
    /// rounding. The result is clamped to the bracket.
    pub fn solve(&self, y: f64, lo: f64, hi: f64) -> Option<f64> {
        match self {
            Lift::PiecewiseLinear { breaks, values } => {
                let k0 = Self::segment(breaks, lo);
                let mut k = k0;
                while k + 2 < breaks.len() && values[k + 1] < y {
                    k += 1;
                }
                let slope = (values[k + 1] - values[k]) / (breaks[k + 1] - breaks[k]);
                let x = breaks[k] + (y - values[k]) / slope;
                Some(x.clamp(lo, hi))
            }
            Lift::Deformation { .. } => self.solve_smooth(y, lo, hi),
        }
    }

    fn solve_smooth(&self, y: f64, lo: f64, hi: f64) -> Option<f64> {
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (self.eval(a) - y, self.eval(b) - y);
        if fa >= 0.0 {
            return Some(lo);
        }
        if fb <= 0.0 {
            return Some(hi);
        }
        let mut x = a + (b - a) * (-fa) / (fb - fa);
        for _ in 0..200 {
            let fx = self.eval(x) - y;
            if fx == 0.0 {
                return Some(x);
            }
            if fx < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let d = self.deriv(x);
            let mut next = x - fx / d;
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() <= 1e-16 || b - a <= 1e-15 {
                return Some(next.clamp(lo, hi));
            }
            x = next;
        }
        if b - a < 1e-13 {
            Some(x)
        } else {
            None
        }
    }
}

/// How the Markov partition of a model is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSpec {
    /// The `d` fundamental domains `F^{-1}(F(0) + k)`.
    Fundamental,
    /// Explicit endpoints (must include `0`).
    Endpoints(Vec<f64>),
    /// `0` together with the periodic orbit of the given period found by
    /// Newton iteration from `seed`.
    PeriodicOrbit { period: usize, seed: f64 },
}

/// One element of the partition together with its Markov image.
#[derive(Debug, Clone, PartialEq)]
struct Element {
    a: f64,
    b: f64,
    /// `F(a)`, snapped so that `image_start mod 1` is a partition endpoint.
    image_start: f64,
    image_len: f64,
    /// Successor elements in arc order, with the lifted offset of their left
    /// endpoint from `image_start`.
    successors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapModel {
    lift: Lift,
    degree: u32,
    elements: Vec<Element>,
    non_expanding: Vec<bool>,
}

impl MapModel {
    pub fn new(lift: Lift, partition: &PartitionSpec, non_expanding: &[usize]) -> Result<Self> {
        validate_lift(&lift)?;
        let degree = lift.degree();
        let mut endpoints = match partition {
            PartitionSpec::Fundamental => fundamental_endpoints(&lift)?,
            PartitionSpec::Endpoints(e) => e.clone(),
            PartitionSpec::PeriodicOrbit { period, seed } => {
                let mut e = periodic_orbit(&lift, *period, *seed)?;
                e.push(0.0);
                e
            }
        };
        endpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        endpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        if endpoints.first() != Some(&0.0) {
            return Err(Error::MalformedModel("partition endpoints must include 0".into()));
        }
        if endpoints.iter().any(|e| !(0.0..1.0).contains(e)) {
            return Err(Error::MalformedModel("partition endpoints must lie in [0, 1)".into()));
        }
        let m = endpoints.len();
        if m > u8::MAX as usize {
            return Err(Error::MalformedModel("at most 255 partition elements".into()));
        }
        let mut bounds = endpoints.clone();
        bounds.push(1.0);

        let mut elements = Vec::with_capacity(m);
        for i in 0..m {
            let (a, b) = (bounds[i], bounds[i + 1]);
            let fa = lift.eval(a);
            let fb = if i + 1 == m { lift.eval(0.0) + degree as f64 } else { lift.eval(b) };
            let len = fb - fa;
            if !(len > 0.0 && len <= 1.0 + 1e-12) {
                return Err(Error::MalformedModel(format!(
                    "element {i} = [{a}, {b}) has image length {len}; \
                     every element must map injectively (length <= 1)"
                )));
            }
            let s = fa.rem_euclid(1.0);
            let k = nearest_endpoint(&bounds, s).ok_or_else(|| {
                Error::MalformedModel(format!(
                    "Markov property fails: f({a}) = {s} is not a partition endpoint"
                ))
            })?;
            let snapped = fa - circular_diff(s, bounds[k]);
            let mut successors = Vec::new();
            let mut offset = 0.0;
            let mut idx = k % m;
            while offset < len - SNAP_TOL {
                successors.push((idx, offset));
                offset += bounds[idx + 1] - bounds[idx];
                idx = (idx + 1) % m;
            }
            if (offset - len).abs() > SNAP_TOL {
                return Err(Error::MalformedModel(format!(
                    "Markov property fails: image of element {i} ends inside an element"
                )));
            }
            elements.push(Element {
                a,
                b,
                image_start: snapped,
                image_len: len.min(1.0),
                successors,
            });
        }

        let mut flags = vec![false; m];
        for &i in non_expanding {
            if i >= m {
                return Err(Error::MalformedModel(format!(
                    "non-expanding block {i} out of range (partition has {m} elements)"
                )));
            }
            flags[i] = true;
        }
        let model = MapModel { lift, degree, elements, non_expanding: flags };
        if model.covering_time().is_none() {
            return Err(Error::MalformedModel(
                "no iterate of the partition covers the circle (not transitive)".into(),
            ));
        }
        Ok(model)
    }

    /// `x -> 2x mod 1` with partition `{[0, 1/2), [1/2, 1)}`.
    pub fn doubling() -> Self {
        Self::linear(2)
    }

    /// `x -> d x mod 1` with its `d` full branches.
    pub fn linear(d: u32) -> Self {
        let breaks: Vec<f64> = (0..=d).map(|k| k as f64 / d as f64).collect();
        let values: Vec<f64> = (0..=d).map(|k| k as f64).collect();
        Self::new(Lift::PiecewiseLinear { breaks, values }, &PartitionSpec::Fundamental, &[])
            .expect("linear map is a valid model")
    }

    /// `x -> d x + eps * g(x) mod 1`.
    pub fn deformation(
        d: u32,
        eps: f64,
        g: Fourier,
        partition: &PartitionSpec,
        non_expanding: &[usize],
    ) -> Result<Self> {
        Self::new(Lift::Deformation { degree: d, eps, g }, partition, non_expanding)
    }

    /// `x -> 2x + eps sin(2 pi x) mod 1` with its two fundamental branches.
    pub fn sine_deformation(eps: f64) -> Result<Self> {
        Self::deformation(2, eps, Fourier::sine(1, 1.0), &PartitionSpec::Fundamental, &[])
    }

    pub fn lift(&self) -> &Lift {
        &self.lift
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self.lift, Lift::PiecewiseLinear { .. })
    }

    /// Number of partition elements `q + p`.
    pub fn alphabet_size(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, i: usize) -> (f64, f64) {
        (self.elements[i].a, self.elements[i].b)
    }

    pub fn endpoints(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.a).collect()
    }

    pub fn is_non_expanding(&self, i: usize) -> bool {
        self.non_expanding[i]
    }

    pub fn non_expanding_count(&self) -> usize {
        self.non_expanding.iter().filter(|b| **b).count()
    }

    /// Successor elements of `i` (the `j` with `Q_j` inside `f(Q_i)`) in arc
    /// order, with lifted offsets.
    pub fn successors(&self, i: usize) -> &[(usize, f64)] {
        &self.elements[i].successors
    }

    pub fn admissible(&self, i: usize, j: usize) -> bool {
        self.elements[i].successors.iter().any(|(s, _)| *s == j)
    }

    /// Image arc of element `i`: lifted start and length.
    pub fn image_arc(&self, i: usize) -> (f64, f64) {
        (self.elements[i].image_start, self.elements[i].image_len)
    }

    /// Smallest `N` with `f^N(Q_i)` the whole circle for every `i`.
    pub fn covering_time(&self) -> Option<usize> {
        let m = self.alphabet_size();
        let mut reach: Vec<Vec<bool>> = (0..m)
            .map(|i| {
                let mut r = vec![false; m];
                for (s, _) in &self.elements[i].successors {
                    r[*s] = true;
                }
                r
            })
            .collect();
        for n in 1..=(m * m + 1) {
            if reach.iter().all(|r| r.iter().all(|b| *b)) {
                return Some(n);
            }
            reach = reach
                .iter()
                .map(|r| {
                    let mut next = vec![false; m];
                    for (k, on) in r.iter().enumerate() {
                        if *on {
                            for (s, _) in &self.elements[k].successors {
                                next[*s] = true;
                            }
                        }
                    }
                    next
                })
                .collect();
        }
        None
    }

    /// Index of the element containing `x` (left-closed convention).
    pub fn element_of(&self, x: f64) -> usize {
        let k = self.elements.partition_point(|e| e.a <= x);
        k.saturating_sub(1)
    }

    pub fn is_endpoint(&self, x: f64) -> bool {
        self.elements[self.element_of(x)].a == x
    }

    /// `f(x)` reduced to `[0, 1)`.
    pub fn eval_map(&self, x: f64) -> f64 {
        wrap(self.lift.eval(x))
    }

    /// `1 / |f'(x)|`, the norm of the inverse derivative.
    pub fn inverse_deriv_norm(&self, x: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("{x} is not in [0, 1)")));
        }
        if self.is_endpoint(x) {
            return Err(Error::Boundary { x });
        }
        Ok(1.0 / self.lift.deriv(x).abs())
    }

    /// The unique `x` in the closure of `Q_branch` with `f(x) = y`.
    pub fn inverse_branch(&self, branch: usize, y: f64) -> Result<f64> {
        let e = self
            .elements
            .get(branch)
            .ok_or_else(|| Error::InvalidArgument(format!("no branch {branch}")))?;
        let start = wrap(e.image_start);
        let mut off = (y - start).rem_euclid(1.0);
        if off >= 1.0 {
            off = 0.0;
        }
        if off > e.image_len + 1e-12 {
            return Err(Error::NotInImage { branch, y });
        }
        self.lift
            .solve(e.image_start + off, e.a, e.b)
            .ok_or(Error::RootFinding { word: vec![branch as u8] })
    }

    /// Preimage under branch `branch` of the interval `[a, b]` lying inside
    /// successor element `succ` (given by its position in the successor list).
    pub(crate) fn pull_back(&self, branch: usize, succ_pos: usize, a: f64) -> Option<f64> {
        let e = &self.elements[branch];
        let (j, off) = e.successors[succ_pos];
        let y = e.image_start + off + (a - self.elements[j].a);
        self.lift.solve(y, e.a, e.b)
    }

    /// `(inf |f'|, sup |f'|)` over `[a, b]`.
    pub fn deriv_bounds(&self, a: f64, b: f64) -> (f64, f64) {
        self.lift.deriv_range(a, b)
    }

    /// Every `c`-hyperbolic time `n <= n_max` of `x`.
    ///
    /// `n` is hyperbolic when `sum_{j=n-k}^{n-1} log |f'(f^j x)|^{-1} < -c k`
    /// for all `1 <= k <= n`. With `P_n = sum_{j<n} (c - log |f'(f^j x)|)`
    /// this is `P_n < min_{m<n} P_m`.
    pub fn hyperbolic_times(&self, x: f64, c: f64, n_max: usize) -> Result<Vec<usize>> {
        if c <= 0.0 || n_max == 0 {
            return Err(Error::InvalidArgument("need c > 0 and n_max >= 1".into()));
        }
        let logs = self.log_inverse_derivs(x, n_max)?;
        Ok(hyperbolic_times_from_logs(&logs, c))
    }

    /// Smallest `c`-hyperbolic time of `x` not exceeding `cap`.
    pub fn first_hyperbolic_time(&self, x: f64, c: f64, cap: usize) -> Result<Option<usize>> {
        if c <= 0.0 || cap == 0 {
            return Err(Error::InvalidArgument("need c > 0 and cap >= 1".into()));
        }
        let mut y = x;
        let mut prefix = 0.0;
        let mut min_prev = 0.0_f64;
        for n in 1..=cap {
            if self.is_endpoint(y) {
                return Err(Error::OrbitHitsBoundary { x, step: n - 1 });
            }
            prefix += c - self.lift.deriv(y).abs().ln();
            if prefix < min_prev {
                return Ok(Some(n));
            }
            min_prev = min_prev.min(prefix);
            y = self.eval_map(y);
        }
        Ok(None)
    }

    /// `log ||Df(f^j x)^{-1}||` for `j < n`.
    pub fn log_inverse_derivs(&self, x: f64, n: usize) -> Result<Vec<f64>> {
        let mut y = x;
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            if self.is_endpoint(y) {
                return Err(Error::OrbitHitsBoundary { x, step: j });
            }
            out.push(-self.lift.deriv(y).abs().ln());
            y = self.eval_map(y);
        }
        Ok(out)
    }

    /// The first `n` points `x, f(x), ..., f^{n-1}(x)`.
    pub fn orbit(&self, x: f64, n: usize) -> Vec<f64> {
        let mut y = x;
        (0..n)
            .map(|_| {
                let cur = y;
                y = self.eval_map(y);
                cur
            })
            .collect()
    }

    /// Symbolic itinerary of length `n`.
    pub fn itinerary(&self, x: f64, n: usize) -> Vec<u8> {
        self.orbit(x, n).into_iter().map(|y| self.element_of(y) as u8).collect()
    }
}

/// `n` is hyperbolic iff the prefix sum `P_n` of `log|Df^{-1}| + c` drops
/// strictly below every earlier prefix sum (including `P_0 = 0`).
pub(crate) fn hyperbolic_times_from_logs(logs: &[f64], c: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prefix = 0.0;
    let mut min_prev = 0.0_f64;
    for (j, l) in logs.iter().enumerate() {
        prefix += l + c;
        if prefix < min_prev {
            out.push(j + 1);
        }
        min_prev = min_prev.min(prefix);
    }
    out
}

pub(crate) fn wrap(y: f64) -> f64 {
    let r = y.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed difference `s - e` reduced to `(-1/2, 1/2]`.
fn circular_diff(s: f64, e: f64) -> f64 {
    let d = (s - e).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

fn nearest_endpoint(bounds: &[f64], s: f64) -> Option<usize> {
    let m = bounds.len() - 1;
    (0..m)
        .map(|k| (k, circular_diff(s, bounds[k]).abs()))
        .filter(|(_, d)| *d < SNAP_TOL)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(k, _)| k)
}

fn validate_lift(lift: &Lift) -> Result<()> {
    match lift {
        Lift::PiecewiseLinear { breaks, values } => {
            if breaks.len() < 2 || breaks.len() != values.len() {
                return Err(Error::MalformedModel("breaks and values must pair up".into()));
            }
            if breaks[0] != 0.0 || breaks[breaks.len() - 1] != 1.0 {
                return Err(Error::MalformedModel("breaks must run from 0 to 1".into()));
            }
            if breaks.windows(2).any(|w| w[1] <= w[0]) || values.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::MalformedModel("breaks and values must increase".into()));
            }
            let span = values[values.len() - 1] - values[0];
            if (span - span.round()).abs() > 1e-12 || span.round() < 2.0 {
                return Err(Error::MalformedModel(format!(
                    "lift must increase by an integer degree >= 2, got {span}"
                )));
            }
        }
        Lift::Deformation { degree, .. } => {
            if *degree < 2 {
                return Err(Error::MalformedModel("degree must be at least 2".into()));
            }
            let (lo, _) = lift.deriv_range(0.0, 1.0);
            if lo <= 0.0 {
                return Err(Error::MalformedModel(format!(
                    "deformation is not a local diffeomorphism (min f' = {lo})"
                )));
            }
        }
    }
    Ok(())
}

fn fundamental_endpoints(lift: &Lift) -> Result<Vec<f64>> {
    let f0 = lift.eval(0.0);
    (0..lift.degree())
        .map(|k| {
            if k == 0 {
                Ok(0.0)
            } else {
                lift.solve(f0 + k as f64, 0.0, 1.0)
                    .ok_or(Error::MalformedModel("fundamental domain root finding failed".into()))
            }
        })
        .collect()
}

/// Orbit of a period-`period` point near `seed`, via Newton on the circle.
fn periodic_orbit(lift: &Lift, period: usize, seed: f64) -> Result<Vec<f64>> {
    if period == 0 {
        return Err(Error::MalformedModel("period must be positive".into()));
    }
    let step = |x: f64| wrap(lift.eval(x));
    let mut x = wrap(seed);
    for _ in 0..100 {
        let mut y = x;
        let mut d = 1.0;
        for _ in 0..period {
            d *= lift.deriv(y);
            y = step(y);
        }
        let g = circular_diff(y, x);
        if g.abs() < 1e-15 {
            break;
        }
        x = wrap(x - g / (d - 1.0));
    }
    let mut orbit = vec![x];
    let mut y = x;
    for _ in 1..period {
        y = step(y);
        orbit.push(y);
    }
    if circular_diff(step(y), x).abs() > 1e-12 {
        return Err(Error::MalformedModel(format!(
            "no period-{period} orbit found near {seed}"
        )));
    }
    Ok(orbit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn deformed() -> MapModel {
        MapModel::sine_deformation(0.2).unwrap()
    }

    #[test]
    fn eval_map_examples() {
        let d = MapModel::doubling();
        assert!((d.eval_map(0.3) - 0.6).abs() < 1e-15);
        assert_eq!(d.eval_map(0.75), 0.5);
        assert!((deformed().eval_map(0.25) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn inverse_derivative_examples() {
        let d = MapModel::doubling();
        assert_eq!(d.inverse_deriv_norm(0.123).unwrap(), 0.5);
        let m = deformed();
        let pi = std::f64::consts::PI;
        assert!((m.inverse_deriv_norm(0.3).unwrap() - 1.0 / (2.0 + 0.4 * pi * (0.6 * pi).cos())).abs() < 1e-14);
        // 0.5 and 0 are partition endpoints of the fundamental partition
        assert!(matches!(m.inverse_deriv_norm(0.5), Err(Error::Boundary { .. })));
        assert!(matches!(m.inverse_deriv_norm(0.0), Err(Error::Boundary { .. })));
        let near = m.inverse_deriv_norm(0.5 + 1e-12).unwrap();
        assert!((near - 1.0 / (2.0 - 0.4 * pi)).abs() < 1e-9);
        assert!((near - 1.3452).abs() < 1e-3);
        let near0 = m.inverse_deriv_norm(1e-12).unwrap();
        assert!((near0 - 1.0 / (2.0 + 0.4 * pi)).abs() < 1e-9);
        assert!((near0 - 0.307).abs() < 1e-3);
    }

    #[test]
    fn inverse_branch_examples() {
        let d = MapModel::doubling();
        assert!((d.inverse_branch(0, 0.6).unwrap() - 0.3).abs() < 1e-15);
        assert!((d.inverse_branch(1, 0.6).unwrap() - 0.8).abs() < 1e-15);
        let m = deformed();
        assert!((m.inverse_branch(0, 0.7).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn not_in_image_is_reported() {
        // period-2 partition: the first element maps onto a proper arc
        let m = MapModel::deformation(
            2,
            0.2,
            Fourier::sine(1, 1.0),
            &PartitionSpec::PeriodicOrbit { period: 2, seed: 0.3 },
            &[1],
        )
        .unwrap();
        assert_eq!(m.alphabet_size(), 3);
        let (_, len) = m.image_arc(0);
        assert!(len < 1.0);
        let (start, _) = m.image_arc(0);
        let outside = wrap(start + len + 0.5 * (1.0 - len));
        assert!(matches!(m.inverse_branch(0, outside), Err(Error::NotInImage { .. })));
    }

    #[test]
    fn markov_structure_of_period_two_partition() {
        let m = MapModel::deformation(
            2,
            0.2,
            Fourier::sine(1, 1.0),
            &PartitionSpec::PeriodicOrbit { period: 2, seed: 0.3 },
            &[1],
        )
        .unwrap();
        let e = m.endpoints();
        // contracting region |x - 1/2| < 0.103 lies inside the middle element
        assert!(e[1] < 0.39 && m.element(1).1 > 0.61, "{e:?}");
        let succ = |i| m.successors(i).iter().map(|p| p.0).collect::<Vec<_>>();
        assert_eq!(succ(0), vec![0, 1]);
        assert_eq!(succ(1), vec![2, 0]);
        assert_eq!(succ(2), vec![1, 2]);
        assert_eq!(m.covering_time(), Some(2));
    }

    #[test]
    fn rejects_non_markov_endpoints() {
        let lift = Lift::PiecewiseLinear { breaks: vec![0.0, 0.5, 1.0], values: vec![0.0, 1.0, 2.0] };
        let r = MapModel::new(lift, &PartitionSpec::Endpoints(vec![0.0, 0.3]), &[]);
        assert!(matches!(r, Err(Error::MalformedModel(_))));
    }

    #[test]
    fn rejects_folding_deformation() {
        assert!(MapModel::sine_deformation(0.5).is_err());
    }

    #[test]
    fn hyperbolic_time_examples() {
        let d = MapModel::doubling();
        assert_eq!(d.hyperbolic_times(0.3, 0.5, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        assert!(d.hyperbolic_times(0.3, 0.7, 5).unwrap().is_empty());
        assert_eq!(d.first_hyperbolic_time(0.37, 0.5, 10).unwrap(), Some(1));
        assert_eq!(d.first_hyperbolic_time(0.37, 0.8, 50).unwrap(), None);
        let m = deformed();
        let first = m.first_hyperbolic_time(0.48, 0.3, 100).unwrap();
        assert!(first.unwrap() >= 2);
    }

    /// Brute-force double loop over `(n, k)`.
    fn brute_hyperbolic(m: &MapModel, x: f64, c: f64, n_max: usize) -> Vec<usize> {
        let orbit = m.orbit(x, n_max);
        let inv: Vec<f64> = orbit.iter().map(|y| 1.0 / m.lift().deriv(*y)).collect();
        (1..=n_max)
            .filter(|&n| {
                (1..=n).all(|k| {
                    let prod: f64 = (n - k..n).map(|j| inv[j]).product();
                    prod < (-c * k as f64).exp()
                })
            })
            .collect()
    }

    #[test]
    fn hyperbolic_times_match_brute_force() {
        let m = deformed();
        let fast = m.hyperbolic_times(0.1, 0.3, 20).unwrap();
        assert_eq!(fast, brute_hyperbolic(&m, 0.1, 0.3, 20));
        assert!(!fast.is_empty());
        for x in [0.05, 0.41, 0.52, 0.77, 0.93] {
            assert_eq!(m.hyperbolic_times(x, 0.2, 30).unwrap(), brute_hyperbolic(&m, x, 0.2, 30));
        }
    }

    #[test]
    fn boundary_orbit_is_an_error() {
        let d = MapModel::doubling();
        assert!(matches!(d.hyperbolic_times(0.25, 0.5, 5), Err(Error::OrbitHitsBoundary { step: 1, .. })));
    }

    #[test]
    fn uniformly_expanding_every_time_hyperbolic() {
        let m = MapModel::linear(3);
        for x in [0.1234, 0.5678, 0.91] {
            assert_eq!(m.hyperbolic_times(x, 1.0, 12).unwrap(), (1..=12).collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn inverse_branch_inverts(y in 0.0f64..1.0, b in 0usize..2) {
            let m = MapModel::sine_deformation(0.2).unwrap();
            let x = m.inverse_branch(b, y).unwrap();
            let back = m.eval_map(x);
            prop_assert!(circular_diff(back, y).abs() < 1e-12);
            let (lo, hi) = m.element(b);
            prop_assert!(x >= lo && x <= hi);
        }

        #[test]
        fn hyperbolic_times_monotone_in_c(x in 0.001f64..0.999, c in 0.05f64..0.6, dc in 0.0f64..0.3) {
            let m = MapModel::sine_deformation(0.2).unwrap();
            let strict = m.hyperbolic_times(x, c, 25).unwrap();
            let loose = m.hyperbolic_times(x, (c - dc).max(0.01), 25).unwrap();
            prop_assert!(strict.iter().all(|n| loose.contains(n)));
        }

        #[test]
        fn markov_images_are_unions(i in 0usize..3) {
            let m = MapModel::deformation(2, 0.2, Fourier::sine(1, 1.0),
                &PartitionSpec::PeriodicOrbit { period: 2, seed: 0.3 }, &[1]).unwrap();
            let (a, b) = m.element(i);
            let (start, len) = m.image_arc(i);
            prop_assert!((m.lift().eval(a) - start).abs() < 1e-12);
            prop_assert!((m.lift().eval(b) - (start + len)).abs() < 1e-12);
        }
    }
}
