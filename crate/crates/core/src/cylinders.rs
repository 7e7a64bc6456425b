//! Dynamically refined partitions: the level-`n` cylinders are the
//! admissible words of length `n`, each with its interval on the circle.
//!
//! Every level is stored sorted by position, so consecutive cylinders share
//! endpoints and the intervals tile `[0, 1)` exactly. The interval of
//! `(w_0, w_1, ..., w_{n-1})` is the pull-back under branch `w_0` of the
//! interval of its tail `(w_1, ..., w_{n-1})`.

use crate::dynamics::MapModel;
use crate::error::{Error, Result};
use serde::Serialize;

/// Default cap on the number of cylinders held at a single level.
pub const MAX_CYLINDERS: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub word: Vec<u8>,
    pub a: f64,
    pub b: f64,
}

impl Cylinder {
    pub fn level(&self) -> usize {
        self.word.len()
    }

    pub fn diameter(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Left-closed containment.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x < self.b
    }
}

#[derive(Debug, Clone)]
struct Level {
    cylinders: Vec<Cylinder>,
    /// Index of the tail word one level up (empty at level 1).
    tail: Vec<u32>,
    /// Index of the prefix word one level up (empty at level 1).
    parent: Vec<u32>,
    /// CSR offsets into the next level; filled once that level exists.
    child_start: Vec<u32>,
    /// `first_start[s]..first_start[s + 1]` are the cylinders starting with
    /// symbol `s`.
    first_start: Vec<u32>,
}

/// All levels `1..=max_level` of the refinement.
#[derive(Debug, Clone)]
pub struct CylinderTree {
    model: MapModel,
    levels: Vec<Level>,
    limit: usize,
}

impl CylinderTree {
    pub fn build(model: &MapModel, n_max: usize) -> Result<Self> {
        Self::build_with_limit(model, n_max, MAX_CYLINDERS)
    }

    pub fn build_with_limit(model: &MapModel, n_max: usize, limit: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidArgument("need at least one level".into()));
        }
        let m = model.alphabet_size();
        let cylinders: Vec<Cylinder> = (0..m)
            .map(|i| {
                let (a, b) = model.element(i);
                Cylinder { word: vec![i as u8], a, b }
            })
            .collect();
        let first_start = (0..=m as u32).collect();
        let level1 = Level { cylinders, tail: Vec::new(), parent: Vec::new(), child_start: Vec::new(), first_start };
        let mut tree = CylinderTree { model: model.clone(), levels: vec![level1], limit };
        tree.refine(n_max)?;
        Ok(tree)
    }

    pub fn model(&self) -> &MapModel {
        &self.model
    }

    pub fn max_level(&self) -> usize {
        self.levels.len()
    }

    /// Builds every level up to `n` and returns the level-`n` cylinders.
    pub fn refine(&mut self, n: usize) -> Result<&[Cylinder]> {
        if n == 0 {
            return Err(Error::InvalidArgument("levels start at 1".into()));
        }
        while self.levels.len() < n {
            self.push_level()?;
        }
        Ok(&self.levels[n - 1].cylinders)
    }

    /// Number of level-`n+1` words, computed before allocating them.
    fn next_count(&self) -> usize {
        let prev = self.levels.last().unwrap();
        let m = self.model.alphabet_size();
        (0..m)
            .map(|b| {
                self.model
                    .successors(b)
                    .iter()
                    .map(|(j, _)| (prev.first_start[j + 1] - prev.first_start[*j]) as usize)
                    .sum::<usize>()
            })
            .sum()
    }

    fn push_level(&mut self) -> Result<()> {
        let count = self.next_count();
        let n = self.levels.len() + 1;
        if count > self.limit {
            return Err(Error::TooManyCylinders { level: n, count, limit: self.limit });
        }
        let model = &self.model;
        let m = model.alphabet_size();
        let prev = self.levels.last().unwrap();
        let mut cylinders = Vec::with_capacity(count);
        let mut tail = Vec::with_capacity(count);
        let mut first_start = Vec::with_capacity(m + 1);
        for b in 0..m {
            first_start.push(cylinders.len() as u32);
            let (ea, _) = model.element(b);
            for (pos, (j, _)) in model.successors(b).iter().enumerate() {
                let range = prev.first_start[*j] as usize..prev.first_start[j + 1] as usize;
                for t in range.clone() {
                    let tc = &prev.cylinders[t];
                    let mut word = Vec::with_capacity(n);
                    word.push(b as u8);
                    word.extend_from_slice(&tc.word);
                    let a = if pos == 0 && t == range.start {
                        ea
                    } else {
                        model.pull_back(b, pos, tc.a).ok_or(Error::RootFinding { word: word.clone() })?
                    };
                    cylinders.push(Cylinder { word, a, b: 0.0 });
                    tail.push(t as u32);
                }
            }
        }
        first_start.push(cylinders.len() as u32);
        for k in 0..cylinders.len() {
            cylinders[k].b = if k + 1 < cylinders.len() { cylinders[k + 1].a } else { 1.0 };
        }
        for c in &cylinders {
            if !(c.b > c.a) {
                return Err(Error::RootFinding { word: c.word.clone() });
            }
        }

        // prefix links: children of a cylinder are contiguous
        let mut parent = Vec::with_capacity(count);
        let mut child_start = vec![0u32; prev.cylinders.len() + 1];
        let mut p = 0usize;
        for (k, c) in cylinders.iter().enumerate() {
            while prev.cylinders[p].word[..] != c.word[..n - 1] {
                p += 1;
                child_start[p] = k as u32;
            }
            parent.push(p as u32);
        }
        for q in p + 1..=prev.cylinders.len() {
            child_start[q] = count as u32;
        }
        self.levels.last_mut().unwrap().child_start = child_start;
        self.levels.push(Level { cylinders, tail, parent, child_start: Vec::new(), first_start });
        Ok(())
    }

    fn level(&self, n: usize) -> Result<&Level> {
        if n == 0 {
            return Err(Error::InvalidArgument("levels start at 1".into()));
        }
        self.levels.get(n - 1).ok_or(Error::LevelNotBuilt { requested: n, built: self.levels.len() })
    }

    pub fn cylinders(&self, n: usize) -> Result<&[Cylinder]> {
        Ok(&self.level(n)?.cylinders)
    }

    pub fn cylinder(&self, n: usize, idx: usize) -> Result<&Cylinder> {
        self.level(n)?
            .cylinders
            .get(idx)
            .ok_or_else(|| Error::InvalidArgument(format!("no cylinder {idx} at level {n}")))
    }

    /// Number of level-`n` cylinders (0 if the level is not built).
    pub fn count(&self, n: usize) -> usize {
        self.level(n).map_or(0, |l| l.cylinders.len())
    }

    /// Index at level `n - 1` of the shifted word; `None` at level 1.
    pub fn tail_index(&self, n: usize, idx: usize) -> Option<usize> {
        self.level(n).ok()?.tail.get(idx).map(|t| *t as usize)
    }

    pub fn parent_index(&self, n: usize, idx: usize) -> Option<usize> {
        self.level(n).ok()?.parent.get(idx).map(|t| *t as usize)
    }

    /// Indices at level `n + 1` of the one-symbol extensions of cylinder
    /// `idx` at level `n`.
    pub fn children(&self, n: usize, idx: usize) -> Result<std::ops::Range<usize>> {
        let l = self.level(n)?;
        if l.child_start.is_empty() {
            return Err(Error::LevelNotBuilt { requested: n + 1, built: self.levels.len() });
        }
        Ok(l.child_start[idx] as usize..l.child_start[idx + 1] as usize)
    }

    /// Index of the level-`n` cylinder containing `x`.
    pub fn index_of(&self, x: f64, n: usize) -> Result<usize> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("{x} is not in [0, 1)")));
        }
        let cyl = &self.level(n)?.cylinders;
        Ok(cyl.partition_point(|c| c.a <= x) - 1)
    }

    /// `Q_n(x)`, the level-`n` cylinder containing `x`.
    pub fn cylinder_of(&self, x: f64, n: usize) -> Result<&Cylinder> {
        let idx = self.index_of(x, n)?;
        self.cylinder(n, idx)
    }

    /// Index of an admissible word, or `None`.
    pub fn index_of_word(&self, word: &[u8]) -> Option<usize> {
        let n = word.len();
        if n == 0 || n > self.levels.len() {
            return None;
        }
        let mut idx = word[0] as usize;
        if idx >= self.model.alphabet_size() {
            return None;
        }
        for k in 1..n {
            let range = self.children(k, idx).ok()?;
            let cyl = &self.levels[k].cylinders;
            idx = range.into_iter().find(|&c| cyl[c].word[k] == word[k])?;
        }
        Some(idx)
    }

    /// The cylinders spending more than `gamma n` of their first `n` steps
    /// in the non-expanding blocks.
    pub fn classify_b(&self, n: usize, gamma: f64, weights: Option<&[f64]>) -> Result<FrequencySet> {
        let cyl = self.cylinders(n)?;
        let members: Vec<usize> = (0..cyl.len())
            .filter(|&k| {
                let visits = cyl[k].word.iter().filter(|s| self.model.is_non_expanding(**s as usize)).count();
                visits as f64 > gamma * n as f64
            })
            .collect();
        let measure = match weights {
            Some(w) => {
                if w.len() != cyl.len() {
                    return Err(Error::DimensionMismatch { expected: cyl.len(), got: w.len() });
                }
                Some(members.iter().map(|k| w[*k]).sum())
            }
            None => None,
        };
        Ok(FrequencySet { level: n, gamma, count: members.len(), members, measure })
    }

    /// Cylinders on which `n` is a `c`-hyperbolic time for every point.
    ///
    /// With derivative bounds on each image `f^j(Q)` (the cylinder of the
    /// shifted word) the decision is certified; when the bounds straddle
    /// the threshold, `samples` points per cylinder decide and the verdict
    /// is flagged approximate.
    pub fn hyperbolic_cylinders(&self, n: usize, c: f64, samples: usize) -> Result<HyperbolicSet> {
        let level = self.cylinders(n)?;
        let mut members = Vec::new();
        let mut approximate = Vec::new();
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        for idx in 0..level.len() {
            let mut k = idx;
            for j in 0..n {
                let cyl = &self.levels[n - j - 1].cylinders[k];
                let (lo, hi) = self.model.deriv_bounds(cyl.a, cyl.b);
                upper[j] = -lo.abs().ln();
                lower[j] = -hi.abs().ln();
                if j + 1 < n {
                    k = self.levels[n - j - 1].tail[k] as usize;
                }
            }
            if suffix_condition(&upper, c) {
                members.push(idx);
                approximate.push(false);
            } else if !suffix_condition(&lower, c) {
                continue;
            } else {
                let cyl = &level[idx];
                let s = samples.max(2);
                let ok = (0..s).all(|i| {
                    let x = cyl.a + (cyl.b - cyl.a) * i as f64 / (s - 1) as f64;
                    let x = if i == s - 1 { cyl.b.min(1.0 - f64::EPSILON) } else { x };
                    let logs: Vec<f64> = self.model.orbit(x, n).iter().map(|y| -self.model.lift().deriv(*y).abs().ln()).collect();
                    suffix_condition(&logs, c)
                });
                if ok {
                    members.push(idx);
                    approximate.push(true);
                }
            }
        }
        Ok(HyperbolicSet { level: n, c, members, approximate })
    }

    /// Cylinders `Q` with `f^j(Q) ∩ Q = ∅` for every lag `1 <= j <= zeta n`,
    /// decided symbolically.
    pub fn short_return_free(&self, n: usize, zeta: f64) -> Result<Vec<usize>> {
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(Error::InvalidArgument(format!("zeta = {zeta} not in (0, 1)")));
        }
        let cyl = self.cylinders(n)?;
        let max_lag = (zeta * n as f64).floor() as usize;
        Ok((0..cyl.len())
            .filter(|&k| (1..=max_lag).all(|j| !self_overlaps(&self.model, &cyl[k].word, j)))
            .collect())
    }

    /// Per-level diameter table, split by membership in the frequency set.
    pub fn diameter_stats(&self, levels: std::ops::RangeInclusive<usize>, gamma: f64, c: f64, tau: f64) -> Result<Vec<DiameterRow>> {
        let base = self.cylinders(1)?.iter().map(Cylinder::diameter).fold(0.0, f64::max);
        levels
            .map(|n| {
                let cyl = self.cylinders(n)?;
                let b = self.classify_b(n, gamma, None)?;
                let mut in_b = vec![false; cyl.len()];
                for k in &b.members {
                    in_b[*k] = true;
                }
                let (mut max_all, mut sum_all) = (0.0_f64, 0.0);
                let (mut max_good, mut sum_good, mut n_good) = (0.0_f64, 0.0, 0usize);
                let mut max_b = 0.0_f64;
                for (k, q) in cyl.iter().enumerate() {
                    let d = q.diameter();
                    max_all = max_all.max(d);
                    sum_all += d;
                    if in_b[k] {
                        max_b = max_b.max(d);
                    } else {
                        max_good = max_good.max(d);
                        sum_good += d;
                        n_good += 1;
                    }
                }
                let bound = (-c * tau * n as f64).exp() * base;
                Ok(DiameterRow {
                    level: n,
                    count: cyl.len(),
                    count_b: b.count,
                    max_diameter: max_all,
                    mean_diameter: sum_all / cyl.len() as f64,
                    max_diameter_outside_b: max_good,
                    mean_diameter_outside_b: if n_good > 0 { sum_good / n_good as f64 } else { 0.0 },
                    max_diameter_in_b: max_b,
                    bound,
                    bound_holds: max_good <= bound * (1.0 + 1e-12),
                })
            })
            .collect()
    }
}

/// `sum_{j=n-k}^{n-1} logs[j] < -c k` for every `1 <= k <= n`.
fn suffix_condition(logs: &[f64], c: f64) -> bool {
    let mut s = 0.0;
    for (k, l) in logs.iter().rev().enumerate() {
        s += l;
        if s >= -c * (k + 1) as f64 {
            return false;
        }
    }
    true
}

/// Whether some point of `Q_w` returns to `Q_w` after exactly `j` steps:
/// the shifted word must agree with `w` on the overlap and the junction
/// transition must be admissible. Requires `j < w.len()`.
fn self_overlaps(model: &MapModel, w: &[u8], j: usize) -> bool {
    let n = w.len();
    (0..n - j).all(|i| w[i + j] == w[i]) && model.admissible(w[n - 1] as usize, w[n - j] as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencySet {
    pub level: usize,
    pub gamma: f64,
    pub members: Vec<usize>,
    pub count: usize,
    pub measure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicSet {
    pub level: usize,
    pub c: f64,
    pub members: Vec<usize>,
    /// Per member: accepted on sampled evidence only.
    pub approximate: Vec<bool>,
}

impl HyperbolicSet {
    pub fn is_certified(&self) -> bool {
        !self.approximate.iter().any(|a| *a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiameterRow {
    pub level: usize,
    pub count: usize,
    pub count_b: usize,
    pub max_diameter: f64,
    pub mean_diameter: f64,
    pub max_diameter_outside_b: f64,
    pub mean_diameter_outside_b: f64,
    pub max_diameter_in_b: f64,
    pub bound: f64,
    pub bound_holds: bool,
}
