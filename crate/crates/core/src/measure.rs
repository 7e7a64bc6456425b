//! Cylinder measures built from the leading eigendata: the conformal
//! measure `nu` and the equilibrium state `mu = h nu`, plus conformality,
//! Gibbs and weak-Gibbs diagnostics.

use crate::cylinders::CylinderTree;
use crate::dynamics::{hyperbolic_times_from_logs, MapModel};
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::potential::{birkhoff_sum, Potential};
use crate::stats::{linear_fit, LinearFit};
use crate::transfer::SpectralData;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Conformal,
    Equilibrium,
}

#[derive(Debug, Clone)]
pub struct CylinderMeasure {
    pub level: usize,
    pub weights: Vec<f64>,
    pub kind: MeasureKind,
    pub pressure: f64,
    intervals: Vec<(f64, f64)>,
    index: WeightedIndex<f64>,
}

impl CylinderMeasure {
    fn new(tree: &CylinderTree, level: usize, weights: Vec<f64>, kind: MeasureKind, pressure: f64) -> Result<Self> {
        let cyl = tree.cylinders(level)?;
        if weights.len() != cyl.len() {
            return Err(Error::DimensionMismatch { expected: cyl.len(), got: weights.len() });
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(CylinderMeasure { level, weights, kind, pressure, intervals: cyl.iter().map(|c| (c.a, c.b)).collect(), index })
    }

    /// Weights of the coarser level `n <= level`, summed over descendants.
    pub fn marginal(&self, tree: &CylinderTree, n: usize) -> Result<Vec<f64>> {
        if n == 0 || n > self.level {
            return Err(Error::LevelNotBuilt { requested: n, built: self.level });
        }
        let mut w = self.weights.clone();
        for k in (n + 1..=self.level).rev() {
            let mut up = vec![0.0; tree.count(k - 1)];
            for (idx, v) in w.iter().enumerate() {
                up[tree.parent_index(k, idx).expect("level >= 2 has parents")] += v;
            }
            w = up;
        }
        Ok(w)
    }

    /// Draws a cylinder by weight, then a uniform point inside it.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.intervals[self.index.sample(rng)];
        let x = a + (b - a) * rng.gen::<f64>();
        if x >= 1.0 {
            a
        } else {
            x
        }
    }

    /// Midpoint quadrature `sum g(mid Q) w(Q)`.
    pub fn integrate(&self, g: &Observable) -> f64 {
        self.intervals.iter().zip(&self.weights).map(|((a, b), w)| w * g.eval(0.5 * (a + b))).sum()
    }

    pub fn integrate_fn<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.intervals.iter().zip(&self.weights).map(|((a, b), w)| w * g(0.5 * (a + b))).sum()
    }
}

pub fn conformal_measure(tree: &CylinderTree, s: &SpectralData) -> Result<CylinderMeasure> {
    CylinderMeasure::new(tree, s.level, s.nu.clone(), MeasureKind::Conformal, s.pressure)
}

pub fn equilibrium_measure(tree: &CylinderTree, s: &SpectralData) -> Result<CylinderMeasure> {
    let w = s.h.iter().zip(&s.nu).map(|(a, b)| a * b).collect();
    CylinderMeasure::new(tree, s.level, w, MeasureKind::Equilibrium, s.pressure)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub level: usize,
    pub max_relative_error: f64,
    /// `max_Q osc(e^phi, Q)` over the level's cylinders.
    pub oscillation_bound: f64,
}

/// Compares `nu(f A)` with `lambda e^{-phi(mid A)} nu(A)` on every cylinder
/// of the measure's level; `f A` is the cylinder of the shifted word.
pub fn jacobian_check(nu: &CylinderMeasure, tree: &CylinderTree, phi: &Potential) -> Result<JacobianCheck> {
    let n = nu.level;
    if n < 2 {
        return Err(Error::InvalidArgument("jacobian check needs level >= 2".into()));
    }
    let lambda = nu.pressure.exp();
    let image = nu.marginal(tree, n - 1)?;
    let cyl = tree.cylinders(n)?;
    let mut err = 0.0_f64;
    let mut osc = 0.0_f64;
    for (k, q) in cyl.iter().enumerate() {
        let t = tree.tail_index(n, k).expect("level >= 2 has tails");
        let predicted = lambda * (-phi.eval(q.midpoint())).exp() * nu.weights[k];
        if image[t] > 0.0 {
            err = err.max((image[t] - predicted).abs() / image[t]);
        }
        let (lo, hi) = phi.range_on(q.a, q.b);
        osc = osc.max(hi.exp() - lo.exp());
    }
    Ok(JacobianCheck { level: n, max_relative_error: err, oscillation_bound: osc })
}

/// `nu(Q_n) / exp(-P n + S_n phi(y))`.
pub fn gibbs_ratio(nu_q: f64, pressure: f64, model: &MapModel, phi: &Potential, n: usize, y: f64) -> f64 {
    nu_q / (-pressure * n as f64 + birkhoff_sum(model, phi, y, n)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsRow {
    pub level: usize,
    pub hyperbolic_count: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max / min` at this level.
    pub spread: f64,
    /// Largest spread over all levels up to this one.
    pub empirical_k: f64,
}

/// Gibbs ratios over the `c`-hyperbolic cylinders of each level, evaluated
/// at three interior points per cylinder.
pub fn gibbs_sweep(
    tree: &CylinderTree,
    phi: &Potential,
    nu: &CylinderMeasure,
    levels: std::ops::RangeInclusive<usize>,
    c: f64,
    samples: usize,
) -> Result<Vec<GibbsRow>> {
    let model = tree.model();
    let mut k_running = 0.0_f64;
    let mut rows = Vec::new();
    for n in levels {
        let weights = nu.marginal(tree, n)?;
        let hyp = tree.hyperbolic_cylinders(n, c, samples)?;
        let cyl = tree.cylinders(n)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &idx in &hyp.members {
            let q = &cyl[idx];
            for t in [0.01, 0.5, 0.99] {
                let r = gibbs_ratio(weights[idx], nu.pressure, model, phi, n, q.a + t * (q.b - q.a));
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let spread = if hyp.members.is_empty() { f64::NAN } else { hi / lo };
        if spread.is_finite() {
            k_running = k_running.max(spread);
        }
        rows.push(GibbsRow {
            level: n,
            hyperbolic_count: hyp.members.len(),
            min_ratio: lo,
            max_ratio: hi,
            spread,
            empirical_k: k_running,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakGibbsTrace {
    pub hyperbolic_times: Vec<usize>,
    /// `K_n` for `n = 1..=n_max`.
    pub k: Vec<f64>,
    /// `log K_n / n` for `n = 1..=n_max`.
    pub log_rate: Vec<f64>,
    /// Some gap ran past the orbit horizon and was cut there.
    pub truncated: bool,
}

/// `K_n = K exp[(P + sup|phi|)(n_{i+1} - n_i)]` for `n_i <= n < n_{i+1}`,
/// with `n_0 = 0`, from the log inverse derivatives along an orbit. The
/// orbit should extend past `n_max` so the gap containing `n_max` closes.
pub fn weak_gibbs_from_logs(logs: &[f64], pressure: f64, phi_sup_abs: f64, n_max: usize, c: f64, k_const: f64) -> WeakGibbsTrace {
    let times = hyperbolic_times_from_logs(logs, c);
    let horizon = logs.len();
    let rate = pressure + phi_sup_abs;
    let mut k = Vec::with_capacity(n_max);
    let mut truncated = false;
    let mut prev = 0usize;
    let mut next_pos = 0usize;
    for n in 1..=n_max {
        while next_pos < times.len() && times[next_pos] <= n {
            prev = times[next_pos];
            next_pos += 1;
        }
        let next = match times.get(next_pos) {
            Some(t) => *t,
            None => {
                truncated = true;
                horizon.max(n + 1)
            }
        };
        k.push(k_const * (rate * (next - prev) as f64).exp());
    }
    let log_rate = k.iter().enumerate().map(|(i, v)| v.ln() / (i + 1) as f64).collect();
    WeakGibbsTrace { hyperbolic_times: times.into_iter().filter(|t| *t <= n_max).collect(), k, log_rate, truncated }
}

/// `K_n(x)` along the floating-point orbit of `x` (horizon `4 n_max`).
pub fn weak_gibbs_kn(model: &MapModel, phi: &Potential, pressure: f64, x: f64, n_max: usize, c: f64, k_const: f64) -> Result<WeakGibbsTrace> {
    let logs = model.log_inverse_derivs(x, 4 * n_max)?;
    Ok(weak_gibbs_from_logs(&logs, pressure, phi.sup_abs(), n_max, c, k_const))
}

/// Fraction of traces with `K_n >= n^a`, for each `n`.
pub fn kn_exceedance(traces: &[WeakGibbsTrace], a: f64, ns: &[usize]) -> Vec<(usize, f64)> {
    ns.iter()
        .map(|&n| {
            let hits = traces.iter().filter(|t| t.k[n - 1] >= (n as f64).powf(a)).count();
            (n, hits as f64 / traces.len() as f64)
        })
        .collect()
}

/// `n_{k+1} / n_k` at the `k`-th hyperbolic time, if both exist.
pub fn hyperbolic_time_ratio(logs: &[f64], c: f64, k: usize) -> Option<f64> {
    let t = hyperbolic_times_from_logs(logs, c);
    (k >= 1 && t.len() > k).then(|| t[k] as f64 / t[k - 1] as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub level: usize,
    pub max_weight: f64,
    pub frequency_set_measure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// `gamma_1` in `max nu(Q_n) ≈ C e^{-gamma_1 n}`.
    pub rate: f64,
    pub fit: LinearFit,
    pub rows: Vec<DecayRow>,
}

/// Exponential fit of the largest cylinder weight against the level; when
/// `gamma` is given, also the measure of the frequency set `B(n, gamma)`.
pub fn decay_fit(tree: &CylinderTree, m: &CylinderMeasure, levels: std::ops::RangeInclusive<usize>, gamma: Option<f64>) -> Result<DecayFit> {
    let rows = levels
        .map(|n| {
            let w = m.marginal(tree, n)?;
            let frequency_set_measure = match gamma {
                Some(g) => tree.classify_b(n, g, Some(&w))?.measure,
                None => None,
            };
            Ok(DecayRow { level: n, max_weight: w.iter().copied().fold(0.0, f64::max), frequency_set_measure })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_weight.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(DecayFit { rate: -fit.slope, fit, rows })
}

/// `max h / min h`.
pub fn density_ratio(s: &SpectralData) -> f64 {
    let hi = s.h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = s.h.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PartitionSpec;
    use crate::fourier::Fourier;
    use crate::sampler::{stream_rng, MarkovSampler};
    use crate::transfer::{leading_spectrum, IterationOptions, TransferMatrix, WeightConvention};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn setup(model: &MapModel, phi: &Potential, n: usize) -> (CylinderTree, TransferMatrix, SpectralData) {
        let tree = CylinderTree::build(model, n).unwrap();
        let m = TransferMatrix::assemble(&tree, phi, n, WeightConvention::Midpoint).unwrap();
        let s = leading_spectrum(&m, &IterationOptions::default()).unwrap();
        (tree, m, s)
    }

    fn cos1() -> Observable {
        Observable::Fourier(Fourier::cosine(1, 1.0))
    }

    #[test]
    fn doubling_measures_are_uniform() {
        for c in [0.0, 0.4] {
            let (tree, _, s) = setup(&MapModel::doubling(), &Potential::constant(c), 4);
            let nu = conformal_measure(&tree, &s).unwrap();
            let mu = equilibrium_measure(&tree, &s).unwrap();
            assert!(nu.weights.iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-12));
            assert!(mu.weights.iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-12));
            assert_eq!(nu.kind, MeasureKind::Conformal);
        }
    }

    #[test]
    fn deformed_conformal_measure_decays() {
        let model = MapModel::sine_deformation(0.2).unwrap();
        let (tree, _, s) = setup(&model, &Potential::zero(), 12);
        let nu = conformal_measure(&tree, &s).unwrap();
        assert!((nu.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let fit = decay_fit(&tree, &nu, 4..=12, Some(0.5)).unwrap();
        assert!(fit.rate > 0.0 && fit.fit.r_squared > 0.99);
        let w10 = nu.marginal(&tree, 10).unwrap();
        let bound = (fit.fit.intercept + fit.fit.slope * 10.0).exp() * (1.0 + 1e-9);
        assert!(w10.iter().all(|w| *w <= bound));
    }

    #[test]
    fn marginals_are_refinement_consistent() {
        let model = MapModel::sine_deformation(0.2).unwrap();
        let phi = Potential::cosine(0.2);
        let (tree, _, s12) = setup(&model, &phi, 12);
        let (_, _, s8) = setup(&model, &phi, 8);
        let mu12 = equilibrium_measure(&tree, &s12).unwrap();
        let mu8 = equilibrium_measure(&tree, &s8).unwrap();
        let coarse = mu12.marginal(&tree, 8).unwrap();
        let worst = coarse.iter().zip(&mu8.weights).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn equilibrium_quadrature_is_stable() {
        let d = MapModel::doubling();
        let phi = Potential::cosine(0.1);
        let (t10, _, s10) = setup(&d, &phi, 10);
        let (t12, _, s12) = setup(&d, &phi, 12);
        let mu10 = equilibrium_measure(&t10, &s10).unwrap();
        let mu12 = equilibrium_measure(&t12, &s12).unwrap();
        assert!(mu10.weights.iter().any(|w| (w - 1.0 / 1024.0).abs() > 1e-6));
        let i10 = mu10.integrate(&cos1());
        let i12 = mu12.integrate(&cos1());
        assert!((i10 - i12).abs() < 1e-4, "{i10} vs {i12}");
    }

    #[test]
    fn integrate_examples() {
        let (tree, _, s) = setup(&MapModel::doubling(), &Potential::zero(), 12);
        let mu = equilibrium_measure(&tree, &s).unwrap();
        assert!((mu.integrate(&Observable::constant(1.0)) - 1.0).abs() < 1e-12);
        assert!(mu.integrate(&cos1()).abs() < 1e-6);
        let cos2 = mu.integrate_fn(|x| (std::f64::consts::TAU * x).cos().powi(2));
        assert!((cos2 - 0.5).abs() < 1e-5);
    }

    #[test]
    fn jacobian_examples() {
        let d = MapModel::doubling();
        for c in [0.0, 0.3] {
            let (tree, _, s) = setup(&d, &Potential::constant(c), 6);
            let nu = conformal_measure(&tree, &s).unwrap();
            assert!(jacobian_check(&nu, &tree, &Potential::constant(c)).unwrap().max_relative_error < 1e-12);
        }
        let phi = Potential::cosine(0.1);
        let mut prev = f64::INFINITY;
        for n in 8..=12 {
            let (tree, _, s) = setup(&d, &phi, n);
            let nu = conformal_measure(&tree, &s).unwrap();
            let j = jacobian_check(&nu, &tree, &phi).unwrap();
            assert!(j.max_relative_error <= j.oscillation_bound, "{j:?}");
            assert!(j.max_relative_error < prev);
            prev = j.max_relative_error;
        }
    }

    #[test]
    fn gibbs_ratio_is_one_for_constant_potentials() {
        let d = MapModel::doubling();
        for c in [0.0, 0.25] {
            let phi = Potential::constant(c);
            let (tree, _, s) = setup(&d, &phi, 6);
            let nu = conformal_measure(&tree, &s).unwrap();
            for (k, q) in tree.cylinders(6).unwrap().iter().enumerate() {
                let r = gibbs_ratio(nu.weights[k], s.pressure, &d, &phi, 6, q.midpoint());
                assert!((r - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gibbs_constant_stabilizes_on_deformed_map() {
        let model = MapModel::deformation(2, 0.2, Fourier::sine(1, 1.0), &PartitionSpec::PeriodicOrbit { period: 2, seed: 0.3 }, &[1]).unwrap();
        let (tree, _, s) = setup(&model, &Potential::zero(), 14);
        let nu = conformal_measure(&tree, &s).unwrap();
        let rows = gibbs_sweep(&tree, &Potential::zero(), &nu, 4..=12, 0.2, 16).unwrap();
        assert!(rows.iter().all(|r| r.hyperbolic_count > 0));
        let k8 = rows[4].empirical_k;
        let k12 = rows[8].empirical_k;
        assert!(k12 / k8 < 1.5, "{k8} {k12}");
    }

    #[test]
    fn weak_gibbs_on_doubling_is_constant() {
        let d = MapModel::doubling();
        let t = weak_gibbs_kn(&d, &Potential::zero(), 2f64.ln(), 0.1234, 10, 0.5, 1.0).unwrap();
        assert_eq!(t.hyperbolic_times, (1..=10).collect::<Vec<_>>());
        assert!(t.k.iter().all(|k| (k - 2.0).abs() < 1e-12));
        assert!(!t.truncated);
    }

    #[test]
    fn weak_gibbs_spikes_at_gaps() {
        // two contracting steps then expansion: first hyperbolic time is late
        let logs = [0.3, 0.3, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let t = weak_gibbs_from_logs(&logs, 0.5, 0.0, 6, 0.1, 1.0);
        // suffix sums at n = 3 are -1, -0.7, -0.4, all below -0.1 k
        assert_eq!(t.hyperbolic_times, vec![3, 4, 5, 6]);
        assert!((t.k[0] - 1.5f64.exp()).abs() < 1e-12);
        assert!((t.k[1] - 1.5f64.exp()).abs() < 1e-12);
        assert!((t.k[2] - 0.5f64.exp()).abs() < 1e-12);
        assert!((t.k[5] - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn kn_exceedance_falls_for_sampled_orbits() {
        let model = MapModel::deformation(2, 0.2, Fourier::sine(1, 1.0), &PartitionSpec::PeriodicOrbit { period: 2, seed: 0.3 }, &[1]).unwrap();
        let (tree, m, s) = setup(&model, &Potential::zero(), 10);
        let smp = MarkovSampler::new(&tree, &m, &s).unwrap();
        let traces: Vec<WeakGibbsTrace> = (0..1000)
            .map(|i| {
                let xs = smp.orbit(120, &mut stream_rng(11, i)).unwrap();
                let logs: Vec<f64> = xs.iter().map(|x| -model.lift().deriv(*x).abs().ln()).collect();
                weak_gibbs_from_logs(&logs, s.pressure, 0.0, 40, 0.2, 1.0)
            })
            .collect();
        let ex = kn_exceedance(&traces, 4.0, &[5, 10, 20, 40]);
        assert!(ex[2].1 < 0.05, "{ex:?}");
        assert!(ex.windows(2).all(|w| w[1].1 <= w[0].1), "{ex:?}");
        let ratios: Vec<f64> = (0..500)
            .filter_map(|i| {
                let xs = smp.orbit(200, &mut stream_rng(12, i)).unwrap();
                let logs: Vec<f64> = xs.iter().map(|x| -model.lift().deriv(*x).abs().ln()).collect();
                hyperbolic_time_ratio(&logs, 0.2, 20)
            })
            .collect();
        assert!(crate::stats::median(&ratios) < 1.2);
    }

    #[test]
    fn sample_point_examples() {
        let (tree, _, s) = setup(&MapModel::doubling(), &Potential::zero(), 12);
        let mu = equilibrium_measure(&tree, &s).unwrap();
        let mut rng = stream_rng(5, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| mu.sample_point(&mut rng)).collect();
        let (mean, se) = crate::stats::mean_se(&xs);
        assert!((mean - 0.5).abs() < 3.0 * se);
        let p = xs.iter().filter(|x| **x < 0.25).count() as f64 / xs.len() as f64;
        assert!((p - 0.25).abs() < 3.0 * (0.25f64 * 0.75 / xs.len() as f64).sqrt());
    }

    #[test]
    fn sample_point_chi_square() {
        let (tree, _, s) = setup(&MapModel::doubling(), &Potential::cosine(0.1), 12);
        let mu = equilibrium_measure(&tree, &s).unwrap();
        let mut rng = stream_rng(6, 0);
        let draws = 1_000_000usize;
        let mut counts = vec![0usize; 4096];
        for _ in 0..draws {
            counts[tree.index_of(mu.sample_point(&mut rng), 12).unwrap()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&mu.weights)
            .map(|(c, w)| {
                let e = w * draws as f64;
                (*c as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new(4095.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn density_is_bounded() {
        let model = MapModel::sine_deformation(0.2).unwrap();
        let phi = Potential::cosine(0.2);
        let r: Vec<f64> = [8, 10, 12].iter().map(|n| density_ratio(&setup(&model, &phi, *n).2)).collect();
        assert!(r.iter().all(|x| x.is_finite() && *x >= 1.0));
        assert!((r[2] - r[1]).abs() < 0.05 * r[1]);
    }
}
