//! Stationary Markov chain on level-`N` cylinders that realizes the
//! discretized equilibrium measure `mu = h nu` along orbits.
//!
//! Floating-point iteration of an expanding map loses one bit per step (the
//! doubling map sends every double to 0 within 53 steps), so orbits are
//! generated symbolically: the state at time `k` is the level-`N` cylinder
//! containing `f^k x`, the next state extends its tail by one symbol, and
//! real points are recovered by pulling back through inverse branches.

use crate::cylinders::CylinderTree;
use crate::dynamics::MapModel;
use crate::error::{Error, Result};
use crate::transfer::{SpectralData, TransferMatrix};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RNG for sample `stream` of a run with root seed `seed`; independent of
/// scheduling, so results do not depend on the thread count.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Extra backward steps used when turning a state path into points.
const REALIZE_PADDING: usize = 64;

#[derive(Debug, Clone)]
pub struct MarkovSampler {
    model: MapModel,
    level: usize,
    first_symbol: Vec<u8>,
    bounds: Vec<(f64, f64)>,
    weights: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    cumulative: Vec<f64>,
    stationary: WeightedIndex<f64>,
}

impl MarkovSampler {
    /// Transition `j -> i` with probability `M[i][j] nu_i / (lambda nu_j)`;
    /// its stationary law is `h nu`.
    pub fn new(tree: &CylinderTree, m: &TransferMatrix, s: &SpectralData) -> Result<Self> {
        let level = m.level();
        let cyl = tree.cylinders(level)?;
        if s.h.len() != cyl.len() {
            return Err(Error::DimensionMismatch { expected: cyl.len(), got: s.h.len() });
        }
        let mut offsets = vec![0usize];
        let mut targets = Vec::with_capacity(m.nnz());
        let mut cumulative = Vec::with_capacity(m.nnz());
        for j in 0..cyl.len() {
            let entries: Vec<(usize, f64)> = m.column(j).map(|(i, v)| (i, v * s.nu[i])).collect();
            let total: f64 = entries.iter().map(|e| e.1).sum();
            let mut acc = 0.0;
            for (i, w) in &entries {
                acc += if total > 0.0 { w / total } else { 1.0 / entries.len() as f64 };
                targets.push(*i as u32);
                cumulative.push(acc);
            }
            if let Some(last) = cumulative.last_mut() {
                *last = 1.0;
            }
            offsets.push(targets.len());
        }
        let weights: Vec<f64> = s.h.iter().zip(&s.nu).map(|(a, b)| a * b).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let stationary = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(MarkovSampler {
            model: tree.model().clone(),
            level,
            first_symbol: cyl.iter().map(|c| c.word[0]).collect(),
            bounds: cyl.iter().map(|c| (c.a, c.b)).collect(),
            weights,
            offsets,
            targets,
            cumulative,
            stationary,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn state_count(&self) -> usize {
        self.bounds.len()
    }

    /// Stationary weights `mu(Q)` of the states.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bounds(&self, state: usize) -> (f64, f64) {
        self.bounds[state]
    }

    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> usize {
        self.stationary.sample(rng)
    }

    pub fn step<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let range = self.offsets[state]..self.offsets[state + 1];
        let cum = &self.cumulative[range.clone()];
        let k = cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1);
        self.targets[range.start + k] as usize
    }

    /// Stationary path of `len` states.
    pub fn path<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = self.sample_state(rng);
        out.push(s);
        for _ in 1..len {
            s = self.step(s, rng);
            out.push(s);
        }
        out
    }

    /// Points `x_k` with `f(x_k) = x_{k+1}` and `x_k` in state `k`, found by
    /// pulling back from the midpoint of the last state.
    pub fn realize(&self, states: &[usize]) -> Result<Vec<f64>> {
        let Some(&last) = states.last() else { return Ok(Vec::new()) };
        let mut xs = vec![0.0; states.len()];
        let (a, b) = self.bounds[last];
        let mut x = 0.5 * (a + b);
        xs[states.len() - 1] = x;
        for k in (0..states.len() - 1).rev() {
            x = self.model.inverse_branch(self.first_symbol[states[k]] as usize, x)?;
            xs[k] = x;
        }
        Ok(xs)
    }

    /// A `mu`-distributed orbit segment of length `len`.
    pub fn orbit<R: Rng>(&self, len: usize, rng: &mut R) -> Result<Vec<f64>> {
        let states = self.path(len + REALIZE_PADDING, rng);
        let mut xs = self.realize(&states)?;
        xs.truncate(len);
        Ok(xs)
    }

    /// Index range of the states lying inside a cylinder of level
    /// `n <= level` (descendants of a cylinder are contiguous).
    pub fn states_within(&self, tree: &CylinderTree, n: usize, idx: usize) -> Result<std::ops::Range<usize>> {
        if n > self.level {
            return Err(Error::LevelNotBuilt { requested: n, built: self.level });
        }
        let mut range = idx..idx + 1;
        for k in n..self.level {
            let lo = tree.children(k, range.start)?.start;
            let hi = tree.children(k, range.end - 1)?.end;
            range = lo..hi;
        }
        Ok(range)
    }

    /// Index of the level-`n` ancestor of every state.
    pub fn ancestors(&self, tree: &CylinderTree, n: usize) -> Result<Vec<u32>> {
        if n == 0 || n > self.level {
            return Err(Error::LevelNotBuilt { requested: n, built: self.level });
        }
        let mut map: Vec<u32> = (0..self.state_count() as u32).collect();
        for k in (n + 1..=self.level).rev() {
            for v in map.iter_mut() {
                *v = tree.parent_index(k, *v as usize).expect("level >= 2 has parents") as u32;
            }
        }
        Ok(map)
    }
}
