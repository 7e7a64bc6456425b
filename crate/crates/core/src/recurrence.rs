//! Monte Carlo recurrence statistics: hitting and return times, Kac's
//! formula, the exponential hitting law, the bound
//! `mu(tau_E <= t / mu(E)) <= t + mu(E)`, Ornstein–Weiss entropy, the
//! asymptotic variance and CLT, log-normal return-time fluctuations and the
//! gap between hitting and return statistics.
//!
//! Experiments run on a [`MarkovSampler`]: every sample draws its own RNG
//! stream from the root seed, so results do not depend on the thread count.

use crate::cylinders::{Cylinder, CylinderTree};
use crate::dynamics::MapModel;
use crate::error::{Error, Result};
use crate::sampler::{stream_rng, MarkovSampler};
use crate::stats::{bootstrap_ci, ks_exponential_grid, ks_normal, linear_fit, mean_se, survival_curve, LinearFit};
use crate::transfer::{signed_correlations, SpectralData, TransferMatrix};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Grid spacing of survival curves.
pub const SURVIVAL_STEP: f64 = 0.05;

/// `inf {k >= 1 : f^k x in target}` along the floating-point orbit, or
/// `None` past `cap`. Boundary points follow the left-closed convention.
pub fn hitting_time(model: &MapModel, x: f64, target: &Cylinder, cap: usize) -> Result<Option<usize>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be >= 1".into()));
    }
    let mut y = x;
    for k in 1..=cap {
        y = model.eval_map(y);
        if target.contains(y) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// `R_n(x)`: the hitting time of `Q_n(x)` starting from `x`.
pub fn return_time_rn(tree: &CylinderTree, x: f64, n: usize, cap: usize) -> Result<Option<usize>> {
    let target = tree.cylinder_of(x, n)?.clone();
    hitting_time(tree.model(), x, &target, cap)
}

/// Set of sampler states, with its stationary measure.
#[derive(Debug, Clone)]
pub struct TargetSet {
    mask: Vec<bool>,
    pub measure: f64,
}

impl TargetSet {
    /// Union of cylinders given as `(level, index)`.
    pub fn from_cylinders(smp: &MarkovSampler, tree: &CylinderTree, cylinders: &[(usize, usize)]) -> Result<Self> {
        let mut mask = vec![false; smp.state_count()];
        for &(n, idx) in cylinders {
            for s in smp.states_within(tree, n, idx)? {
                mask[s] = true;
            }
        }
        let measure = mask.iter().zip(smp.weights()).filter(|(m, _)| **m).map(|(_, w)| w).sum();
        Ok(TargetSet { mask, measure })
    }

    pub fn contains(&self, state: usize) -> bool {
        self.mask[state]
    }

    fn conditioned_law(&self, smp: &MarkovSampler) -> Result<(Vec<usize>, WeightedIndex<f64>)> {
        let states: Vec<usize> = (0..self.mask.len()).filter(|s| self.mask[*s]).collect();
        let w: Vec<f64> = states.iter().map(|s| smp.weights()[*s]).collect();
        let law = WeightedIndex::new(&w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok((states, law))
    }
}

/// First `k` in `1..=cap` at which the chain started at `state` is in the
/// target.
pub fn symbolic_hitting<R: Rng>(smp: &MarkovSampler, target: &TargetSet, state: usize, cap: usize, rng: &mut R) -> Option<usize> {
    let mut s = state;
    for k in 1..=cap {
        s = smp.step(s, rng);
        if target.contains(s) {
            return Some(k);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingExperiment {
    pub level: usize,
    pub index: usize,
    pub word: String,
    pub measure: f64,
    pub samples: usize,
    pub t_max: f64,
    pub cap: usize,
    /// Starts drawn from `mu` restricted to the target (Kac) rather than
    /// from `mu`.
    pub conditioned: bool,
    /// Recorded hitting times, in sample order; censored samples omitted.
    pub tau_samples: Vec<u64>,
    pub censored_count: usize,
}

impl HittingExperiment {
    pub fn censored_fraction(&self) -> f64 {
        self.censored_count as f64 / self.samples as f64
    }
}

/// `samples` hitting times of the level-`n` cylinder `idx`, capped at
/// `ceil(t_max / mu(Q))`.
#[allow(clippy::too_many_arguments)]
pub fn run_hitting(
    smp: &MarkovSampler,
    tree: &CylinderTree,
    n: usize,
    idx: usize,
    samples: usize,
    t_max: f64,
    conditioned: bool,
    seed: u64,
) -> Result<HittingExperiment> {
    let target = TargetSet::from_cylinders(smp, tree, &[(n, idx)])?;
    if target.measure <= 0.0 {
        return Err(Error::InvalidArgument(format!("cylinder {idx} at level {n} has zero measure")));
    }
    let cap = (t_max / target.measure).ceil() as usize;
    let start_law = if conditioned { Some(target.conditioned_law(smp)?) } else { None };
    let taus: Vec<Option<usize>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let start = match &start_law {
                Some((states, law)) => states[law.sample(&mut rng)],
                None => smp.sample_state(&mut rng),
            };
            symbolic_hitting(smp, &target, start, cap, &mut rng)
        })
        .collect();
    let censored_count = taus.iter().filter(|t| t.is_none()).count();
    let word = tree.cylinder(n, idx)?.word.iter().map(|s| char::from(b'0' + s)).collect();
    Ok(HittingExperiment {
        level: n,
        index: idx,
        word,
        measure: target.measure,
        samples,
        t_max,
        cap,
        conditioned,
        tau_samples: taus.into_iter().flatten().map(|t| t as u64).collect(),
        censored_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KacResult {
    /// `E[tau_Q | Q] mu(Q)`.
    pub product: f64,
    pub standard_error: f64,
    pub pass: bool,
    pub censored_fraction: f64,
}

/// `|E[tau_Q | x in Q] mu(Q) - 1| < 3 se`. Censored samples are credited
/// with the cap plus the mean residual of the exponential tail fitted to
/// the censored fraction.
pub fn kac_check(exp: &HittingExperiment) -> Result<KacResult> {
    if !exp.conditioned {
        return Err(Error::InvalidArgument("Kac's formula needs starts conditioned on the target".into()));
    }
    let frac = exp.censored_fraction();
    if frac >= 0.01 {
        return Err(Error::ExcessiveCensoring { censored: exp.censored_count, samples: exp.samples });
    }
    let mut vals: Vec<f64> = exp.tau_samples.iter().map(|t| *t as f64 * exp.measure).collect();
    if exp.censored_count > 0 {
        let rate = -frac.ln() / exp.cap as f64;
        let filled = (exp.cap as f64 + 1.0 / rate) * exp.measure;
        vals.extend(std::iter::repeat_n(filled, exp.censored_count));
    }
    let (product, standard_error) = mean_se(&vals);
    Ok(KacResult { product, standard_error, pass: (product - 1.0).abs() < 3.0 * standard_error, censored_fraction: frac })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingLaw {
    /// `(t, G(t), e^{-t})` with `G(t) = P(tau mu(Q) > t)`.
    pub curve: Vec<(f64, f64, f64)>,
    pub ks: f64,
    pub ks_ci: (f64, f64),
}

/// Survival curve of `tau_Q mu(Q)` on `{0, 0.05, ..., t_max}` and its sup
/// distance to `e^{-t}`, with a 95% bootstrap interval (200 resamples).
pub fn hitting_law(exp: &HittingExperiment, seed: u64) -> HittingLaw {
    let mut scaled: Vec<f64> = exp.tau_samples.iter().map(|t| *t as f64 * exp.measure).collect();
    scaled.extend(std::iter::repeat_n(f64::INFINITY, exp.censored_count));
    let curve = survival_curve(&scaled, SURVIVAL_STEP, exp.t_max).into_iter().map(|(t, g)| (t, g, (-t).exp())).collect::<Vec<_>>();
    let ks = ks_exponential_grid(&scaled, SURVIVAL_STEP, exp.t_max);
    let mut rng = stream_rng(seed, u64::MAX);
    let t_max = exp.t_max;
    let ks_ci = bootstrap_ci(&scaled, |v| ks_exponential_grid(v, SURVIVAL_STEP, t_max), 200, 0.95, &mut rng);
    HittingLaw { curve, ks, ks_ci }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacRow {
    pub t: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacResult {
    pub measure: f64,
    pub rows: Vec<PacRow>,
    pub worst_margin: f64,
    /// Some grid point exceeds the bound by more than `3 se`.
    pub violated: bool,
}

/// Checks `mu(tau_E <= t / mu(E)) <= t + mu(E)` on a grid of `t`, one set
/// of `samples` hitting times (capped at the largest window) shared by all
/// grid points.
pub fn pac_bound_check(smp: &MarkovSampler, target: &TargetSet, t_grid: &[f64], samples: usize, seed: u64) -> Result<PacResult> {
    if target.measure <= 0.0 {
        return Err(Error::InvalidArgument("target has zero measure".into()));
    }
    let t_hi = t_grid.iter().copied().fold(0.0, f64::max);
    let cap = ((t_hi / target.measure).floor() as usize).max(1);
    let taus: Vec<Option<usize>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let s = smp.sample_state(&mut rng);
            symbolic_hitting(smp, target, s, cap, &mut rng)
        })
        .collect();
    let mut sorted: Vec<usize> = taus.into_iter().flatten().collect();
    sorted.sort_unstable();
    let rows: Vec<PacRow> = t_grid
        .iter()
        .map(|&t| {
            let window = (t / target.measure).floor() as usize;
            let p = sorted.partition_point(|k| *k <= window) as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            let bound = t + target.measure;
            PacRow { t, empirical: p, standard_error: se, bound, margin: bound - p }
        })
        .collect();
    let worst_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let violated = rows.iter().any(|r| r.empirical > r.bound + 3.0 * r.standard_error);
    Ok(PacResult { measure: target.measure, rows, worst_margin, violated })
}

/// `R_n` along the chain: the first return of the level-`n` ancestor.
pub fn symbolic_return<R: Rng>(smp: &MarkovSampler, ancestors: &[u32], state: usize, cap: usize, rng: &mut R) -> Option<usize> {
    let home = ancestors[state];
    let mut s = state;
    for k in 1..=cap {
        s = smp.step(s, rng);
        if ancestors[s] == home {
            return Some(k);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnExperiment {
    pub level: usize,
    pub samples: usize,
    pub cap: usize,
    /// `R_n` per sample, `None` when censored.
    pub rn_samples: Vec<Option<u64>>,
    pub censored_count: usize,
}

pub fn run_returns(smp: &MarkovSampler, tree: &CylinderTree, n: usize, samples: usize, cap: usize, seed: u64) -> Result<ReturnExperiment> {
    let anc = smp.ancestors(tree, n)?;
    let rn: Vec<Option<u64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let s = smp.sample_state(&mut rng);
            symbolic_return(smp, &anc, s, cap, &mut rng).map(|k| k as u64)
        })
        .collect();
    let censored_count = rn.iter().filter(|r| r.is_none()).count();
    Ok(ReturnExperiment { level: n, samples, cap, rn_samples: rn, censored_count })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyRow {
    pub n: usize,
    /// Mean of `log R_n / n`; censored samples count at the cap.
    pub mean: f64,
    pub standard_error: f64,
    pub censored: usize,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrnsteinWeiss {
    pub rows: Vec<EntropyRow>,
    /// Fit of `|mean - reference|` against `n` in log scale (bias decay).
    pub bias_fit: Option<LinearFit>,
}

/// `(1/n) log R_n` per level with caps `cap_factor e^{n h_ref}`.
pub fn ornstein_weiss(
    smp: &MarkovSampler,
    tree: &CylinderTree,
    n_range: std::ops::RangeInclusive<usize>,
    samples: usize,
    h_ref: f64,
    cap_factor: f64,
    seed: u64,
) -> Result<OrnsteinWeiss> {
    let rows = n_range
        .map(|n| {
            let cap = (cap_factor * (n as f64 * h_ref).exp()).ceil() as usize;
            let e = run_returns(smp, tree, n, samples, cap, seed.wrapping_add(n as u64))?;
            let vals: Vec<f64> = e.rn_samples.iter().map(|r| (r.unwrap_or(cap as u64) as f64).ln() / n as f64).collect();
            let (mean, standard_error) = mean_se(&vals);
            Ok(EntropyRow { n, mean, standard_error, censored: e.censored_count, reference: h_ref })
        })
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.mean != r.reference).map(|r| (r.n as f64, (r.mean - r.reference).abs().ln())).collect();
    let bias_fit = (pts.len() >= 2).then(|| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_fit(&xs, &ys)
    });
    Ok(OrnsteinWeiss { rows, bias_fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    /// `C_0 + 2 sum_{j=1}^{J} C_j` with `C_j = Cov(Phi, Phi o f^j)`.
    pub green_kubo: f64,
    /// `C_0`, the variance of `Phi`.
    pub variance: f64,
    /// Lag `J` at which the sum stopped.
    pub truncation: usize,
    pub terms: Vec<f64>,
    pub batch_means: Option<f64>,
    /// Batch means and Green–Kubo differ by more than 20%.
    pub disagreement: bool,
}

/// Green–Kubo sum for a cylinder-constant observable; terms stop when
/// `|C_j|` falls below `1e-13 C_0` or at `lag_max`.
pub fn asymptotic_variance(m: &TransferMatrix, s: &SpectralData, values: &[f64], lag_max: usize) -> Result<VarianceEstimate> {
    if lag_max == 0 {
        return Err(Error::InvalidArgument("lag_max must be >= 1".into()));
    }
    let terms = signed_correlations(m, s, values, values, lag_max)?;
    let variance = terms[0];
    let floor = 1e-13 * variance.abs().max(f64::MIN_POSITIVE);
    let mut sum = variance;
    let mut truncation = lag_max;
    for (j, c) in terms.iter().enumerate().skip(1) {
        if c.abs() < floor {
            truncation = j - 1;
            break;
        }
        sum += 2.0 * c;
    }
    Ok(VarianceEstimate {
        green_kubo: sum,
        variance,
        truncation,
        terms: terms[..=truncation].to_vec(),
        batch_means: None,
        disagreement: false,
    })
}

/// Batch-means estimate `m Var(batch mean)` from one orbit of
/// `batches * batch_len` points.
pub fn batch_means_variance<F: Fn(f64) -> f64>(smp: &MarkovSampler, g: F, batches: usize, batch_len: usize, seed: u64) -> Result<f64> {
    let xs = smp.orbit(batches * batch_len, &mut stream_rng(seed, 0))?;
    let means: Vec<f64> = xs.chunks(batch_len).map(|c| c.iter().map(|x| g(*x)).sum::<f64>() / batch_len as f64).collect();
    let (mean, _) = mean_se(&means);
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(var * batch_len as f64)
}

impl VarianceEstimate {
    pub fn with_batch_means(mut self, bm: f64) -> Self {
        self.batch_means = Some(bm);
        self.disagreement = (bm - self.green_kubo).abs() > 0.2 * self.green_kubo.abs();
        self
    }
}

/// `sigma^2` below this fraction of `Var(Phi)` is treated as zero
/// (coboundary).
pub const SIGMA_ZERO_RATIO: f64 = 1e-6;

fn check_sigma(v: &VarianceEstimate) -> Result<f64> {
    if v.green_kubo <= SIGMA_ZERO_RATIO * v.variance.abs() || v.green_kubo <= 0.0 {
        return Err(Error::SigmaZero { sigma2: v.green_kubo });
    }
    Ok(v.green_kubo.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalFit {
    pub n: usize,
    pub ks: f64,
    pub ks_ci: (f64, f64),
    pub values: Vec<f64>,
    pub censored: usize,
}

/// KS distance of `(S_n Phi - n mean) / (sigma sqrt n)` to `N(0, 1)`,
/// orbits drawn from the sampler.
pub fn clt_check<F: Fn(f64) -> f64 + Sync>(
    smp: &MarkovSampler,
    g: F,
    mean: f64,
    variance: &VarianceEstimate,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<NormalFit> {
    let sigma = check_sigma(variance)?;
    let scale = sigma * (n as f64).sqrt();
    let values = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let xs = smp.orbit(n, &mut stream_rng(seed, i))?;
            Ok((xs.iter().map(|x| g(*x) - mean).sum::<f64>()) / scale)
        })
        .collect::<Result<Vec<f64>>>()?;
    let ks = ks_normal(&values);
    let ks_ci = bootstrap_ci(&values, ks_normal, 200, 0.95, &mut stream_rng(seed, u64::MAX));
    Ok(NormalFit { n, ks, ks_ci, values, censored: 0 })
}

/// Reference entropy and standard deviation for return-time fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluctuationReference {
    /// `P - int phi dmu`.
    pub entropy: f64,
    pub sigma: f64,
}

impl FluctuationReference {
    pub fn new(pressure: f64, mean_phi: f64, potential_variance: &VarianceEstimate) -> Result<Self> {
        Ok(FluctuationReference { entropy: pressure - mean_phi, sigma: check_sigma(potential_variance)? })
    }
}

/// KS distance of `(log R_n - n h) / (sigma sqrt n)` to `N(0, 1)`, with
/// caps `50 e^{n h + 4 sigma sqrt n}`.
pub fn fluctuation_stat(
    smp: &MarkovSampler,
    tree: &CylinderTree,
    n: usize,
    samples: usize,
    reference: &FluctuationReference,
    seed: u64,
) -> Result<NormalFit> {
    let sn = reference.sigma * (n as f64).sqrt();
    let cap = (50.0 * (n as f64 * reference.entropy + 4.0 * sn).exp()).ceil() as usize;
    let e = run_returns(smp, tree, n, samples, cap, seed)?;
    let values: Vec<f64> = e
        .rn_samples
        .iter()
        .map(|r| ((r.unwrap_or(cap as u64) as f64).ln() - n as f64 * reference.entropy) / sn)
        .collect();
    let ks = ks_normal(&values);
    let ks_ci = bootstrap_ci(&values, ks_normal, 200, 0.95, &mut stream_rng(seed, u64::MAX));
    Ok(NormalFit { n, ks, ks_ci, values, censored: e.censored_count })
}

/// Horizon sequence for the hitting/return comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HorizonRule {
    /// `t_n = e^{n h}`.
    Entropy(f64),
    /// `t_n = t` for every `n`.
    Constant(f64),
}

impl HorizonRule {
    pub fn horizon(&self, n: usize) -> f64 {
        match self {
            HorizonRule::Entropy(h) => (n as f64 * h).exp(),
            HorizonRule::Constant(t) => *t,
        }
    }

    /// Whether `t_n / n` grows without bound.
    pub fn meets_hypothesis(&self) -> bool {
        matches!(self, HorizonRule::Entropy(h) if *h > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    pub horizon: f64,
    /// `mu(R_n > t_n)`.
    pub return_tail: f64,
    /// `sum_Q mu(Q) mu(tau_Q > t_n)`.
    pub hitting_tail: f64,
    pub gap: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSequence {
    pub rows: Vec<GapRow>,
    pub hypothesis_violated: bool,
}

/// Both tails by Monte Carlo: the return tail from `mu`-random starts, the
/// hitting tail by drawing `Q` and an independent start from `mu`.
pub fn hitting_vs_return_gap(
    smp: &MarkovSampler,
    tree: &CylinderTree,
    ns: &[usize],
    rule: HorizonRule,
    samples: usize,
    seed: u64,
) -> Result<GapSequence> {
    let rows = ns
        .iter()
        .map(|&n| {
            let t = rule.horizon(n);
            let cap = t.floor() as usize;
            let anc = smp.ancestors(tree, n)?;
            let (ret, hit): (Vec<bool>, Vec<bool>) = (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream_rng(seed.wrapping_add(n as u64), i);
                    let s = smp.sample_state(&mut rng);
                    let r = cap == 0 || symbolic_return(smp, &anc, s, cap, &mut rng).is_none();
                    let home = anc[smp.sample_state(&mut rng)];
                    let mut y = smp.sample_state(&mut rng);
                    let mut hit_within = false;
                    for _ in 0..cap {
                        y = smp.step(y, &mut rng);
                        if anc[y] == home {
                            hit_within = true;
                            break;
                        }
                    }
                    (r, !hit_within)
                })
                .unzip();
            let p_ret = ret.iter().filter(|b| **b).count() as f64 / samples as f64;
            let p_hit = hit.iter().filter(|b| **b).count() as f64 / samples as f64;
            let se = ((p_ret * (1.0 - p_ret) + p_hit * (1.0 - p_hit)) / samples as f64).sqrt();
            Ok(GapRow { n, horizon: t, return_tail: p_ret, hitting_tail: p_hit, gap: (p_ret - p_hit).abs(), standard_error: se })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapSequence { rows, hypothesis_violated: !rule.meets_hypothesis() })
}

/// Hitting-law KS for `count` short-return-free level-`n` cylinders chosen
/// by the seed. Returns `(index, ks)` pairs.
#[allow(clippy::too_many_arguments)]
pub fn hitting_ks_sweep(
    smp: &MarkovSampler,
    tree: &CylinderTree,
    n: usize,
    zeta: f64,
    count: usize,
    samples: usize,
    t_max: f64,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let pool = tree.short_return_free(n, zeta)?;
    let chosen = choose(&pool, count, seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    chosen
        .into_iter()
        .map(|idx| {
            let e = run_hitting(smp, tree, n, idx, samples, t_max, false, seed.wrapping_add(idx as u64))?;
            let scaled: Vec<f64> = e
                .tau_samples
                .iter()
                .map(|t| *t as f64 * e.measure)
                .chain(std::iter::repeat_n(f64::INFINITY, e.censored_count))
                .collect();
            Ok((idx, ks_exponential_grid(&scaled, SURVIVAL_STEP, t_max)))
        })
        .collect()
}

/// `count` distinct elements of `pool` (all of them if fewer), in pool
/// order, chosen by a seeded shuffle.
pub fn choose(pool: &[usize], count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut picked: Vec<usize> = pool.to_vec();
    picked.shuffle(&mut stream_rng(seed, 0));
    picked.truncate(count);
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::equilibrium_measure;
    use crate::observable::Observable;
    use crate::potential::Potential;
    use crate::transfer::{discretize, leading_spectrum, IterationOptions, WeightConvention};
    use std::f64::consts::TAU;

    struct Setup {
        tree: CylinderTree,
        m: TransferMatrix,
        s: SpectralData,
        smp: MarkovSampler,
    }

    fn setup(model: &MapModel, phi: &Potential, n: usize) -> Setup {
        let tree = CylinderTree::build(model, n).unwrap();
        let m = TransferMatrix::assemble(&tree, phi, n, WeightConvention::Midpoint).unwrap();
        let s = leading_spectrum(&m, &IterationOptions::default()).unwrap();
        let smp = MarkovSampler::new(&tree, &m, &s).unwrap();
        Setup { tree, m, s, smp }
    }

    #[test]
    fn hitting_and_return_examples() {
        let d = MapModel::doubling();
        let tree = CylinderTree::build(&d, 10).unwrap();
        let half = tree.cylinder(1, 0).unwrap().clone();
        assert_eq!(hitting_time(&d, 0.3, &half, 10).unwrap(), Some(2));
        // x in Q, f(x) = 0.5 not in Q, f^2(x) = 0 in Q: k starts at 1
        assert_eq!(hitting_time(&d, 0.25, &half, 10).unwrap(), Some(2));
        assert_eq!(hitting_time(&d, 0.3, &half, 1).unwrap(), None);
        assert_eq!(return_time_rn(&tree, 0.3, 1, 10).unwrap(), Some(2));
        for n in 1..=10 {
            assert_eq!(return_time_rn(&tree, 0.0, n, 10).unwrap(), Some(1));
        }
        let x = 0.3;
        let q = tree.cylinder_of(x, 4).unwrap().clone();
        assert_eq!(return_time_rn(&tree, x, 4, 100).unwrap(), hitting_time(&d, x, &q, 100).unwrap());
    }

    #[test]
    fn kac_on_half_circle_and_level_six() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 8);
        let e = run_hitting(&st.smp, &st.tree, 1, 0, 100_000, 10.0, true, 1).unwrap();
        let k = kac_check(&e).unwrap();
        assert!(k.pass, "{k:?}");
        let free = st.tree.short_return_free(6, 0.5).unwrap();
        let e = run_hitting(&st.smp, &st.tree, 6, free[free.len() / 2], 100_000, 10.0, true, 2).unwrap();
        assert!(kac_check(&e).unwrap().pass);
        let u = run_hitting(&st.smp, &st.tree, 1, 0, 1000, 10.0, false, 1).unwrap();
        assert!(kac_check(&u).is_err());
    }

    #[test]
    fn kac_on_deformed_map() {
        let st = setup(&MapModel::sine_deformation(0.2).unwrap(), &Potential::cosine(0.1), 10);
        let free = st.tree.short_return_free(8, 0.2).unwrap();
        let e = run_hitting(&st.smp, &st.tree, 8, free[7], 100_000, 10.0, true, 3).unwrap();
        let k = kac_check(&e).unwrap();
        assert!(k.pass, "{k:?}");
    }

    #[test]
    fn half_circle_hitting_law_is_geometric() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 6);
        let e = run_hitting(&st.smp, &st.tree, 1, 0, 100_000, 5.0, false, 4).unwrap();
        let law = hitting_law(&e, 4);
        for (t, g, _) in &law.curve {
            let k2 = (2.0 * t + 1e-9).floor();
            if (2.0 * t - k2).abs() < 1e-9 {
                assert!((g - 0.25f64.powf(*t)).abs() < 0.01, "t {t}: {g}");
            }
        }
        let exact = (0..=100).map(|k| k as f64 * 0.05).map(|t| (0.5f64.powf((2.0 * t + 1e-9).floor()) - (-t).exp()).abs()).fold(0.0, f64::max);
        assert!((law.ks - exact).abs() < 0.01, "{} vs {exact}", law.ks);
        assert!(law.curve.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(law.curve[0].1, 1.0);
    }

    #[test]
    fn hitting_ks_shrinks_with_level() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 12);
        let med = |n| {
            let v: Vec<f64> = hitting_ks_sweep(&st.smp, &st.tree, n, 0.2, 3, 50_000, 10.0, 9).unwrap().into_iter().map(|p| p.1).collect();
            crate::stats::median(&v)
        };
        let (a, b) = (med(4), med(8));
        assert!(b < a, "{a} {b}");
    }

    #[test]
    fn pac_examples() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 6);
        let half = TargetSet::from_cylinders(&st.smp, &st.tree, &[(1, 0)]).unwrap();
        let r = pac_bound_check(&st.smp, &half, &[0.0, 1.0], 100_000, 5).unwrap();
        assert_eq!(r.rows[0].empirical, 0.0);
        assert!((r.rows[0].margin - 0.5).abs() < 1e-12);
        assert!((r.rows[1].empirical - 0.75).abs() < 0.01);
        assert!((r.rows[1].margin - 0.75).abs() < 0.01);
        assert!(!r.violated);
        let st = setup(&MapModel::sine_deformation(0.2).unwrap(), &Potential::zero(), 8);
        let e = TargetSet::from_cylinders(&st.smp, &st.tree, &[(6, 17)]).unwrap();
        let grid: Vec<f64> = (1..=50).map(|k| k as f64 * 0.1).collect();
        assert!(!pac_bound_check(&st.smp, &e, &grid, 20_000, 6).unwrap().violated);
    }

    #[test]
    fn green_kubo_examples() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 12);
        let cos = discretize(&st.tree, 12, &Observable::Fourier(crate::fourier::Fourier::cosine(1, 1.0))).unwrap();
        let v = asymptotic_variance(&st.m, &st.s, &cos, 30).unwrap();
        assert!((v.green_kubo - 0.5).abs() < 1e-5, "{v:?}");
        let ind: Vec<f64> = discretize(&st.tree, 12, &Observable::indicator(vec![(0.0, 0.5)])).unwrap().into_iter().map(|x| x - 0.5).collect();
        let v = asymptotic_variance(&st.m, &st.s, &ind, 30).unwrap();
        assert!((v.green_kubo - 0.25).abs() < 1e-10);
        let c = vec![3.0; st.m.dim()];
        let v = asymptotic_variance(&st.m, &st.s, &c, 30).unwrap();
        assert!(v.green_kubo.abs() < 1e-12);
        assert!(matches!(check_sigma(&v), Err(Error::SigmaZero { .. })));
        let bm = batch_means_variance(&st.smp, |x| (TAU * x).cos(), 200, 2000, 1).unwrap();
        assert!((bm - 0.5).abs() < 0.15, "{bm}");
    }

    #[test]
    fn coboundary_is_rejected() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 12);
        let g = Observable::from_fn(|x| (TAU * 2.0 * x).cos() - (TAU * x).cos(), 3.0 * TAU, (-2.0, 2.0));
        let vals = discretize(&st.tree, 12, &g).unwrap();
        let v = asymptotic_variance(&st.m, &st.s, &vals, 40).unwrap();
        assert!(v.variance > 0.5);
        let err = clt_check(&st.smp, |x| (TAU * 2.0 * x).cos() - (TAU * x).cos(), 0.0, &v, 100, 10, 1);
        assert!(matches!(err, Err(Error::SigmaZero { .. })), "{v:?}");
    }

    #[test]
    fn clt_for_cosine() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 12);
        let cos = discretize(&st.tree, 12, &Observable::Fourier(crate::fourier::Fourier::cosine(1, 1.0))).unwrap();
        let v = asymptotic_variance(&st.m, &st.s, &cos, 30).unwrap();
        let r = clt_check(&st.smp, |x| (TAU * x).cos(), 0.0, &v, 500, 4000, 3).unwrap();
        assert!(r.ks < 0.03, "{}", r.ks);
    }

    #[test]
    fn ornstein_weiss_doubling() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 10);
        let ow = ornstein_weiss(&st.smp, &st.tree, 6..=10, 4000, 2f64.ln(), 100.0, 1).unwrap();
        assert!(ow.rows.iter().all(|r| r.censored == 0));
        // log R_n - n h is roughly log Exp(1), whose mean is -0.5772
        for r in &ow.rows {
            let expected = 2f64.ln() - 0.5772 / r.n as f64;
            assert!((r.mean - expected).abs() < 4.0 * r.standard_error + 0.02, "{r:?}");
        }
    }

    #[test]
    fn fluctuations_reject_constant_potential_and_are_shift_invariant() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 8);
        let v = asymptotic_variance(&st.m, &st.s, &vec![0.0; st.m.dim()], 10).unwrap();
        assert!(matches!(FluctuationReference::new(st.s.pressure, 0.0, &v), Err(Error::SigmaZero { .. })));
        let phi = Potential::cosine(0.3);
        let run = |p: &Potential| {
            let st = setup(&MapModel::doubling(), p, 10);
            let mu = equilibrium_measure(&st.tree, &st.s).unwrap();
            let vals = discretize(&st.tree, 10, &Observable::Potential(p.clone())).unwrap();
            let v = asymptotic_variance(&st.m, &st.s, &vals, 40).unwrap();
            let mean = mu.integrate(&Observable::Potential(p.clone()));
            let r = FluctuationReference::new(st.s.pressure, mean, &v).unwrap();
            let e = run_returns(&st.smp, &st.tree, 8, 2000, 1 << 20, 5).unwrap();
            (r, e)
        };
        let (r0, e0) = run(&phi);
        let (r1, e1) = run(&phi.shifted(0.7));
        assert!((r0.entropy - r1.entropy).abs() < 1e-10);
        assert!((r0.sigma - r1.sigma).abs() < 1e-8);
        assert_eq!(e0.rn_samples, e1.rn_samples);
    }

    #[test]
    fn gap_examples() {
        let st = setup(&MapModel::doubling(), &Potential::zero(), 10);
        let g = hitting_vs_return_gap(&st.smp, &st.tree, &[4, 6, 8], HorizonRule::Entropy(2f64.ln()), 20_000, 1).unwrap();
        assert!(!g.hypothesis_violated);
        assert!(g.rows[2].gap < 0.05, "{g:?}");
        let c = hitting_vs_return_gap(&st.smp, &st.tree, &[4], HorizonRule::Constant(1.0), 100, 1).unwrap();
        assert!(c.hypothesis_violated);
    }

    #[test]
    fn choose_is_deterministic_subset() {
        let pool: Vec<usize> = (0..50).collect();
        let a = choose(&pool, 10, 3);
        assert_eq!(a, choose(&pool, 10, 3));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(choose(&pool[..4], 10, 3).len(), 4);
    }
}
