//! Cylinder-level discretization of the transfer operator
//! `(L g)(x) = sum_{f(y) = x} e^{phi(y)} g(y)` acting on functions that are
//! constant on level-`n` cylinders, its leading eigendata, the spectral gap,
//! the `theta`-variation seminorm and correlation sequences.

use crate::cylinders::CylinderTree;
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::potential::{sup_birkhoff_on_cylinder, Potential};
use crate::stats::{linear_fit, LinearFit};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Where the potential is evaluated on each preimage cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightConvention {
    /// At the preimage of the target cylinder's midpoint.
    #[default]
    Midpoint,
    /// Supremum over the preimage cylinder.
    Sup,
    /// Infimum over the preimage cylinder.
    Inf,
}

/// Sparse matrix `M[i][j] = e^{phi(y_ij)}` for `Q_j` mapping over `Q_i`.
///
/// At level `n >= 2` cylinder `j = (b, u...)` maps onto the level-`(n-1)`
/// cylinder of its tail, so the nonzeros of column `j` are the children of
/// that tail.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    level: usize,
    dim: usize,
    convention: WeightConvention,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    tvals: Vec<f64>,
}

impl TransferMatrix {
    pub fn assemble(tree: &CylinderTree, phi: &Potential, n: usize, convention: WeightConvention) -> Result<Self> {
        let model = tree.model();
        let cyl = tree.cylinders(n)?;
        let dim = cyl.len();
        // column-major construction: for each source j, its targets i
        let columns: Vec<Result<Vec<(u32, f64)>>> = (0..dim)
            .into_par_iter()
            .map(|j| {
                let b = cyl[j].word[0] as usize;
                let targets: Vec<usize> = if n == 1 {
                    model.successors(j).iter().map(|(s, _)| *s).collect()
                } else {
                    let u = tree.tail_index(n, j).expect("level >= 2 has tails");
                    tree.children(n - 1, u)?.collect()
                };
                targets
                    .into_iter()
                    .map(|i| {
                        let target = &cyl[i];
                        let phi_val = match convention {
                            WeightConvention::Midpoint => phi.eval(model.inverse_branch(b, target.midpoint())?),
                            WeightConvention::Sup | WeightConvention::Inf => {
                                let lo = model.inverse_branch(b, target.a)?;
                                let mut hi = model.inverse_branch(b, target.b.min(1.0 - f64::EPSILON))?;
                                if target.b >= 1.0 && hi < lo {
                                    hi = model.element(b).1;
                                }
                                let (mn, mx) = phi.range_on(lo.min(hi), lo.max(hi));
                                if convention == WeightConvention::Sup { mx } else { mn }
                            }
                        };
                        Ok((i as u32, phi_val.exp()))
                    })
                    .collect()
            })
            .collect();
        let mut col_ptr = vec![0usize; dim + 1];
        let mut rows = Vec::new();
        let mut tvals = Vec::new();
        for (j, c) in columns.into_iter().enumerate() {
            for (i, w) in c? {
                rows.push(i);
                tvals.push(w);
            }
            col_ptr[j + 1] = rows.len();
        }
        let (row_ptr, cols, vals) = transpose(dim, &col_ptr, &rows, &tvals);
        Ok(TransferMatrix { level: n, dim, convention, row_ptr, cols, vals, col_ptr, rows, tvals })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn convention(&self) -> WeightConvention {
        self.convention
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzeros of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k] as usize, self.vals[k]))
    }

    /// Nonzeros of column `j` as `(row, value)`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.rows[k] as usize, self.tvals[k]))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `M g`.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        Ok(spmv(self.dim, &self.row_ptr, &self.cols, &self.vals, g))
    }

    /// `g^T M`.
    pub fn apply_transpose(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        Ok(spmv(self.dim, &self.col_ptr, &self.rows, &self.tvals, g))
    }

    fn check_dim(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: g.len() });
        }
        Ok(())
    }

    /// `||M^k 1||_inf^{1/k}`.
    pub fn power_norm_radius(&self, k: usize) -> f64 {
        let mut v = vec![1.0; self.dim];
        let mut log_scale = 0.0;
        for _ in 0..k {
            v = self.apply(&v).expect("matching dimension");
            let s = v.iter().copied().fold(0.0, f64::max);
            log_scale += s.ln();
            v.iter_mut().for_each(|x| *x /= s);
        }
        (log_scale / k as f64).exp()
    }
}

fn spmv(dim: usize, ptr: &[usize], idx: &[u32], vals: &[f64], g: &[f64]) -> Vec<f64> {
    (0..dim)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| (ptr[i]..ptr[i + 1]).map(|k| vals[k] * g[idx[k] as usize]).sum())
        .collect()
}

fn transpose(dim: usize, ptr: &[usize], idx: &[u32], vals: &[f64]) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
    let mut counts = vec![0usize; dim + 1];
    for i in idx {
        counts[*i as usize + 1] += 1;
    }
    for k in 0..dim {
        counts[k + 1] += counts[k];
    }
    let mut next = counts.clone();
    let mut out_idx = vec![0u32; idx.len()];
    let mut out_vals = vec![0.0; idx.len()];
    for j in 0..dim {
        for k in ptr[j]..ptr[j + 1] {
            let r = idx[k] as usize;
            out_idx[next[r]] = j as u32;
            out_vals[next[r]] = vals[k];
            next[r] += 1;
        }
    }
    (counts, out_idx, out_vals)
}

/// Leading eigendata: `M h = lambda h`, `nu^T M = lambda nu^T`, with
/// `sum nu = 1` and `sum h nu = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralData {
    pub level: usize,
    pub lambda: f64,
    pub pressure: f64,
    pub h: Vec<f64>,
    pub nu: Vec<f64>,
    pub iterations: usize,
    pub residual_h: f64,
    pub residual_nu: f64,
    pub warnings: Vec<String>,
}

impl SpectralData {
    /// `int g dnu` for a cylinder vector.
    pub fn integrate_nu(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.nu).map(|(a, b)| a * b).sum()
    }

    /// `int g dmu` with `mu = h nu`.
    pub fn integrate_mu(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.nu).zip(&self.h).map(|((a, b), c)| a * b * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tol: f64,
    pub residual_tol: f64,
    pub max_iter: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions { tol: 1e-12, residual_tol: 1e-10, max_iter: 100_000 }
    }
}

/// Power iteration for the positive eigenvector of `M` (or of `M^T`).
fn power_iteration(m: &TransferMatrix, transpose: bool, opts: &IterationOptions) -> Result<(f64, Vec<f64>, usize, f64)> {
    let step = |v: &[f64]| if transpose { m.apply_transpose(v) } else { m.apply(v) };
    let mut v = vec![1.0 / m.dim as f64; m.dim];
    let mut lambda_prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let w = step(&v)?;
        let lambda = w.iter().sum::<f64>() / v.iter().sum::<f64>();
        let vmax = v.iter().copied().fold(0.0, f64::max);
        residual = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).abs()).fold(0.0, f64::max) / (lambda * vmax);
        let s: f64 = w.iter().sum();
        let next: Vec<f64> = w.iter().map(|x| x / s).collect();
        if (lambda - lambda_prev).abs() <= opts.tol * lambda && residual < opts.residual_tol {
            return Ok((lambda, next, it, residual));
        }
        lambda_prev = lambda;
        v = next;
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual })
}

pub fn leading_spectrum(m: &TransferMatrix, opts: &IterationOptions) -> Result<SpectralData> {
    let (lambda, mut h, it_h, residual_h) = power_iteration(m, false, opts)?;
    let (_, mut nu, it_nu, residual_nu) = power_iteration(m, true, opts)?;
    let s: f64 = nu.iter().sum();
    nu.iter_mut().for_each(|x| *x /= s);
    let hn: f64 = h.iter().zip(&nu).map(|(a, b)| a * b).sum();
    h.iter_mut().for_each(|x| *x /= hn);
    let mut warnings = Vec::new();
    if h.iter().any(|x| *x < 1e-300) || nu.iter().any(|x| *x < 1e-300) {
        warnings.push("eigenvector has vanishing entries; matrix may be reducible".into());
    }
    Ok(SpectralData {
        level: m.level,
        lambda,
        pressure: lambda.ln(),
        h,
        nu,
        iterations: it_h.max(it_nu),
        residual_h,
        residual_nu,
        warnings,
    })
}

pub fn pressure(s: &SpectralData) -> f64 {
    s.lambda.ln()
}

/// `nu^T M - lambda nu^T`, relative sup norm.
pub fn conformality_residual(m: &TransferMatrix, s: &SpectralData) -> f64 {
    let w = m.apply_transpose(&s.nu).expect("matching dimension");
    let scale = s.nu.iter().copied().fold(0.0, f64::max) * s.lambda;
    w.iter().zip(&s.nu).map(|(a, b)| (a - s.lambda * b).abs()).fold(0.0, f64::max) / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMethod {
    DeflatedPower,
    Dense,
}

/// Estimate of `|lambda_2| / lambda`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    pub xi: f64,
    pub method: GapMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Spread of the last windowed ratios (oscillation diagnostic).
    pub spread: f64,
}

/// Window of the geometric-mean ratio; even so that a complex pair's
/// rotation averages out.
const GAP_WINDOW: usize = 8;

/// Deflated power iteration `v <- (I - h nu^T) M v / lambda`, falling back
/// to a dense computation when it does not settle and `dim <= 4096`.
pub fn spectral_gap(m: &TransferMatrix, s: &SpectralData, tol: f64, max_iter: usize) -> Result<GapEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..m.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    deflate(&mut v, s);
    let mut log_norms = vec![0.0];
    let n0 = sup_norm(&v);
    if n0 == 0.0 {
        return Ok(GapEstimate { xi: 0.0, method: GapMethod::DeflatedPower, iterations: 0, converged: true, spread: 0.0 });
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut estimates: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let mut w = m.apply(&v)?;
        w.iter_mut().for_each(|x| *x /= s.lambda);
        deflate(&mut w, s);
        let nw = sup_norm(&w);
        let total = log_norms.last().unwrap() + nw.ln();
        // the remainder died out: nilpotent up to rounding
        if nw == 0.0 || total < -30.0 * std::f64::consts::LN_10 {
            let xi = if nw == 0.0 { 0.0 } else { (total / it as f64).exp() };
            return Ok(GapEstimate { xi, method: GapMethod::DeflatedPower, iterations: it, converged: true, spread: 0.0 });
        }
        log_norms.push(total);
        v = w.into_iter().map(|x| x / nw).collect();
        if it >= GAP_WINDOW {
            let est = ((log_norms[it] - log_norms[it - GAP_WINDOW]) / GAP_WINDOW as f64).exp();
            estimates.push(est);
            let k = estimates.len();
            if k > 2 * GAP_WINDOW {
                let recent = &estimates[k - GAP_WINDOW..];
                let hi = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = recent.iter().copied().fold(f64::INFINITY, f64::min);
                if hi - lo < tol {
                    return Ok(GapEstimate { xi: est, method: GapMethod::DeflatedPower, iterations: it, converged: true, spread: hi - lo });
                }
            }
        }
    }
    if m.dim <= 4096 {
        let xi = dense_second_modulus(m, s);
        return Ok(GapEstimate { xi, method: GapMethod::Dense, iterations: max_iter, converged: true, spread: 0.0 });
    }
    let k = estimates.len();
    let recent = &estimates[k.saturating_sub(GAP_WINDOW)..];
    let spread = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max) - recent.iter().copied().fold(f64::INFINITY, f64::min);
    Err(Error::NonConvergence { iterations: max_iter, residual: spread })
}

fn deflate(v: &mut [f64], s: &SpectralData) {
    let c: f64 = v.iter().zip(&s.nu).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&s.h).for_each(|(x, h)| *x -= c * h);
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Dense estimate of `|lambda_2| / lambda`: the smaller of the Schur
/// eigenvalue estimate and the bound `min_k ||R^k||^{1/k}` for the deflated
/// operator `R = M / lambda - h nu^T`, which is exact for nilpotent
/// remainders where the eigenvalue solver only resolves the Jordan block
/// to `eps^{1/size}`.
pub fn dense_second_modulus(m: &TransferMatrix, s: &SpectralData) -> f64 {
    let dense = m.to_dense();
    let eig = dense.clone().complex_eigenvalues();
    let mut mods: Vec<f64> = eig.iter().map(|c| c.re.hypot(c.im)).collect();
    mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let schur = mods.get(1).copied().unwrap_or(0.0) / s.lambda;
    if m.dim > 512 {
        return schur;
    }
    let n = m.dim;
    let h = DMatrix::from_column_slice(n, 1, &s.h);
    let nu = DMatrix::from_row_slice(1, n, &s.nu);
    let r = dense / s.lambda - h * nu;
    let mut p = r.clone();
    let mut bound = f64::INFINITY;
    for k in 1..=32 {
        let norm = p.row_iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        bound = bound.min(norm.powf(1.0 / k as f64));
        if norm == 0.0 {
            break;
        }
        p = &p * &r;
    }
    schur.min(bound)
}

/// Values of an observable at the cylinder midpoints of level `n`.
pub fn discretize(tree: &CylinderTree, n: usize, g: &Observable) -> Result<Vec<f64>> {
    Ok(tree.cylinders(n)?.iter().map(|c| g.eval(c.midpoint())).collect())
}

/// Precomputed weights `theta^n e^{S_n phi(Q_n)}` for the truncated
/// `theta`-variation `sum_n theta^n sum_{Q_n} e^{S_n phi(Q_n)} osc(g, Q_n)`.
#[derive(Debug, Clone)]
pub struct ThetaNorm {
    pub theta: f64,
    pub n_trunc: usize,
    /// `theta deg e^{sup phi - c tau alpha}`, the ratio of the geometric tail.
    pub tail_ratio: f64,
    /// `theta deg e^{sup phi}`.
    pub growth: f64,
    weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaVariation {
    pub truncated: f64,
    pub tail_bound: f64,
    pub per_level: Vec<f64>,
    pub warning: Option<String>,
}

impl ThetaNorm {
    /// `c_tau_alpha` is the product `c tau alpha` from the validator.
    pub fn new(tree: &CylinderTree, phi: &Potential, theta: f64, n_trunc: usize, c_tau_alpha: f64) -> Result<Self> {
        let model = tree.model();
        let weights = (1..=n_trunc)
            .map(|n| {
                let cyl = tree.cylinders(n)?;
                let th = theta.powi(n as i32);
                Ok(cyl
                    .par_iter()
                    .map(|c| th * sup_birkhoff_on_cylinder(model, phi, c, 8).corrected.exp())
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let d = model.degree() as f64;
        Ok(ThetaNorm {
            theta,
            n_trunc,
            tail_ratio: theta * d * (phi.sup() - c_tau_alpha).exp(),
            growth: theta * d * phi.sup().exp(),
            weights,
        })
    }

    fn tail(&self, sup_abs: f64) -> f64 {
        if self.tail_ratio < 1.0 {
            2.0 * sup_abs * self.tail_ratio.powi(self.n_trunc as i32 + 1) / (1.0 - self.tail_ratio)
        } else {
            f64::INFINITY
        }
    }

    fn divergence_warning(&self) -> Option<String> {
        (self.growth >= 1.0).then(|| {
            format!("theta deg e^(sup phi) = {:.4} >= 1: the series may diverge for non-cylinder-constant g", self.growth)
        })
    }

    pub fn variation(&self, tree: &CylinderTree, g: &Observable) -> Result<ThetaVariation> {
        let per_level = (1..=self.n_trunc)
            .map(|n| {
                let cyl = tree.cylinders(n)?;
                Ok(cyl
                    .iter()
                    .zip(&self.weights[n - 1])
                    .map(|(c, w)| if *w == 0.0 { 0.0 } else { w * crate::potential::essential_oscillation(g, c, 32) })
                    .sum())
            })
            .collect::<Result<Vec<f64>>>()?;
        let settled = g.is_piecewise_constant() && per_level.last().is_some_and(|v| *v == 0.0);
        Ok(ThetaVariation {
            truncated: per_level.iter().sum(),
            tail_bound: if settled { 0.0 } else { self.tail(g.sup_abs()) },
            warning: if settled { None } else { self.divergence_warning() },
            per_level,
        })
    }

    /// Variation of a function constant on the cylinders of `level`.
    pub fn variation_vec(&self, tree: &CylinderTree, level: usize, values: &[f64]) -> Result<ThetaVariation> {
        if values.len() != tree.count(level) {
            return Err(Error::DimensionMismatch { expected: tree.count(level), got: values.len() });
        }
        let top = self.n_trunc.min(level);
        let mut mins = values.to_vec();
        let mut maxs = values.to_vec();
        let mut per_level = vec![0.0; self.n_trunc];
        for n in (1..=level).rev() {
            if n <= top {
                per_level[n - 1] = self.weights[n - 1].iter().enumerate().map(|(k, w)| w * (maxs[k] - mins[k])).sum();
            }
            if n > 1 {
                let count = tree.count(n - 1);
                let mut pmin = vec![f64::INFINITY; count];
                let mut pmax = vec![f64::NEG_INFINITY; count];
                for k in 0..mins.len() {
                    let p = tree.parent_index(n, k).unwrap();
                    pmin[p] = pmin[p].min(mins[k]);
                    pmax[p] = pmax[p].max(maxs[k]);
                }
                mins = pmin;
                maxs = pmax;
            }
        }
        let sup_abs = values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let settled = self.n_trunc >= level;
        Ok(ThetaVariation {
            truncated: per_level.iter().sum(),
            tail_bound: if settled { 0.0 } else { self.tail(sup_abs) },
            warning: if settled { None } else { self.divergence_warning() },
            per_level,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LasotaYorkeRow {
    pub observable: String,
    pub n: usize,
    pub var_g: f64,
    pub var_iterate: f64,
    pub l1_norm: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LasotaYorkeFit {
    pub d1: f64,
    pub xi1: f64,
    pub d2: f64,
    pub fit: Option<LinearFit>,
    pub pass: bool,
    pub rows: Vec<LasotaYorkeRow>,
}

/// Fits `var(lambda^-n M^n g) <= D1 xi1^n var(g) + D2 ||g||_{L1(nu)}`.
///
/// `D2` is the smallest constant absorbing the limit `var(h) |int g dnu|`
/// (and the whole sequence for observables without variation); the
/// residual excess `e_n` above `D2 ||g||` divided by `var(g)` is regressed
/// on `n` in log scale, giving `xi1`, and `D1` is the envelope constant.
pub fn lasota_yorke_check(
    m: &TransferMatrix,
    s: &SpectralData,
    tree: &CylinderTree,
    norm: &ThetaNorm,
    samples: &[(String, Vec<f64>)],
    k_range: std::ops::RangeInclusive<usize>,
) -> Result<LasotaYorkeFit> {
    let level = m.level;
    let var_h = norm.variation_vec(tree, level, &s.h)?.truncated;
    struct Seq {
        name: String,
        var_g: f64,
        l1: f64,
        vars: Vec<(usize, f64)>,
    }
    let mut seqs = Vec::new();
    for (name, g) in samples {
        let var_g = norm.variation_vec(tree, level, g)?.truncated;
        let l1: f64 = g.iter().zip(&s.nu).map(|(a, b)| a.abs() * b).sum();
        let mut v = g.clone();
        let mut vars = Vec::new();
        for n in 1..=*k_range.end() {
            v = m.apply(&v)?;
            v.iter_mut().for_each(|x| *x /= s.lambda);
            if k_range.contains(&n) {
                vars.push((n, norm.variation_vec(tree, level, &v)?.truncated));
            }
        }
        seqs.push(Seq { name: name.clone(), var_g, l1, vars });
    }
    let mut d2 = 0.0_f64;
    for (seq, (_, g)) in seqs.iter().zip(samples) {
        if seq.l1 == 0.0 {
            continue;
        }
        d2 = d2.max(var_h * s.integrate_nu(g).abs() / seq.l1);
        if seq.var_g == 0.0 {
            for (_, v) in &seq.vars {
                d2 = d2.max(v / seq.l1);
            }
        }
    }
    let mut rows = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for seq in &seqs {
        for (n, v) in &seq.vars {
            let residual = if seq.var_g > 0.0 { (v - d2 * seq.l1).max(0.0) / seq.var_g } else { 0.0 };
            if residual > 0.0 {
                xs.push(*n as f64);
                ys.push(residual.ln());
            }
            rows.push(LasotaYorkeRow {
                observable: seq.name.clone(),
                n: *n,
                var_g: seq.var_g,
                var_iterate: *v,
                l1_norm: seq.l1,
                residual,
            });
        }
    }
    let (xi1, fit) = if xs.len() >= 2 {
        let f = linear_fit(&xs, &ys);
        (f.slope.exp(), Some(f))
    } else if xs.len() == 1 {
        (ys[0].exp().powf(1.0 / xs[0]), None)
    } else {
        (0.0, None)
    };
    let d1 = if xi1 > 0.0 {
        rows.iter().filter(|r| r.residual > 0.0).map(|r| r.residual / xi1.powi(r.n as i32)).fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(LasotaYorkeFit { d1, xi1, d2, fit, pass: xi1 < 1.0, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub n: usize,
    pub signed: f64,
    pub abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlations {
    pub rows: Vec<CorrelationRow>,
    /// `(C, xi)` of `|C_n| ≈ C xi^n` on the nonzero terms.
    pub fit: Option<(f64, f64)>,
    pub exact_independence: bool,
}

/// Signed `int (lambda^-n M^n (Phi h) - h int Phi h dnu) Psi dnu` for
/// `n = 0..=n_max`.
pub fn signed_correlations(m: &TransferMatrix, s: &SpectralData, phi: &[f64], psi: &[f64], n_max: usize) -> Result<Vec<f64>> {
    if phi.len() != m.dim || psi.len() != m.dim {
        return Err(Error::DimensionMismatch { expected: m.dim, got: phi.len().min(psi.len()) });
    }
    let mut v: Vec<f64> = phi.iter().zip(&s.h).map(|(a, b)| a * b).collect();
    let mean_phi = s.integrate_nu(&v);
    let mean_psi = s.integrate_mu(psi);
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            v = m.apply(&v)?;
            v.iter_mut().for_each(|x| *x /= s.lambda);
        }
        let c: f64 = s.integrate_nu(&v.iter().zip(psi).map(|(a, b)| a * b).collect::<Vec<_>>()) - mean_phi * mean_psi;
        out.push(c);
    }
    Ok(out)
}

pub fn operator_correlation(
    m: &TransferMatrix,
    s: &SpectralData,
    phi: &[f64],
    psi: &[f64],
    n_range: std::ops::RangeInclusive<usize>,
) -> Result<Correlations> {
    let signed = signed_correlations(m, s, phi, psi, *n_range.end())?;
    let scale = {
        let ph: Vec<f64> = phi.iter().zip(&s.h).map(|(a, b)| (a * b).abs()).collect();
        s.integrate_nu(&ph) * psi.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
    };
    let floor = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let rows: Vec<CorrelationRow> = n_range.map(|n| CorrelationRow { n, signed: signed[n], abs: signed[n].abs() }).collect();
    let nz: Vec<&CorrelationRow> = rows.iter().filter(|r| r.abs > floor).collect();
    let fit = (nz.len() >= 2).then(|| {
        let f = linear_fit(&nz.iter().map(|r| r.n as f64).collect::<Vec<_>>(), &nz.iter().map(|r| r.abs.ln()).collect::<Vec<_>>());
        (f.intercept.exp(), f.slope.exp())
    });
    Ok(Correlations { exact_independence: nz.is_empty(), rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{MapModel, PartitionSpec};
    use crate::fourier::Fourier;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn spectrum(model: &MapModel, phi: &Potential, n: usize) -> (CylinderTree, TransferMatrix, SpectralData) {
        let tree = CylinderTree::build(model, n).unwrap();
        let m = TransferMatrix::assemble(&tree, phi, n, WeightConvention::Midpoint).unwrap();
        let s = leading_spectrum(&m, &IterationOptions::default()).unwrap();
        (tree, m, s)
    }

    #[test]
    fn assemble_examples() {
        let d = MapModel::doubling();
        let tree = CylinderTree::build(&d, 3).unwrap();
        let m1 = TransferMatrix::assemble(&tree, &Potential::zero(), 1, WeightConvention::Midpoint).unwrap();
        assert_eq!(m1.to_dense(), DMatrix::from_element(2, 2, 1.0));
        let m3 = TransferMatrix::assemble(&tree, &Potential::zero(), 3, WeightConvention::Midpoint).unwrap();
        let dense = m3.to_dense();
        // de Bruijn oracle: Q_j = (b, u1, u2) maps onto (u1, u2), which
        // contains the level-3 cylinders (u1, u2, *)
        for i in 0..8 {
            for j in 0..8 {
                let expected = if (j & 0b011) == (i >> 1) { 1.0 } else { 0.0 };
                assert_eq!(dense[(i, j)], expected, "({i}, {j})");
            }
            assert_eq!(dense.row(i).sum(), 2.0);
        }
        let mc = TransferMatrix::assemble(&tree, &Potential::constant(0.3), 3, WeightConvention::Midpoint).unwrap();
        assert!(mc.vals.iter().all(|v| *v == 0.3f64.exp()));
        assert_eq!(mc.nnz(), 16);
    }

    #[test]
    fn apply_examples() {
        let d = MapModel::doubling();
        let tree = CylinderTree::build(&d, 4).unwrap();
        let m1 = TransferMatrix::assemble(&tree, &Potential::zero(), 1, WeightConvention::Midpoint).unwrap();
        assert_eq!(m1.apply(&[1.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(m1.apply(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert!(matches!(m1.apply(&[1.0]), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
        let phi = Potential::cosine(0.1);
        let m4 = TransferMatrix::assemble(&tree, &phi, 4, WeightConvention::Midpoint).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = m4.to_dense() * nalgebra::DVector::from_vec(g.clone());
        let sparse = m4.apply(&g).unwrap();
        for i in 0..16 {
            assert!((dense[i] - sparse[i]).abs() < 1e-14);
        }
        let dt = m4.to_dense().transpose() * nalgebra::DVector::from_vec(g.clone());
        let st = m4.apply_transpose(&g).unwrap();
        for i in 0..16 {
            assert!((dt[i] - st[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn midpoint_weight_is_at_preimage() {
        let d = MapModel::doubling();
        let tree = CylinderTree::build(&d, 2).unwrap();
        let phi = Potential::cosine(1.0);
        let m = TransferMatrix::assemble(&tree, &phi, 2, WeightConvention::Midpoint).unwrap();
        // j = (1, 0) = [0.5, 0.75) maps onto [0, 0.5) containing i = (0, 1)
        // whose midpoint 0.375 pulls back to 0.6875 under branch 1
        let v = m.row(1).find(|(j, _)| *j == 2).unwrap().1;
        assert!((v - (std::f64::consts::TAU * 0.6875).cos().exp()).abs() < 1e-15);
        let sup = TransferMatrix::assemble(&tree, &phi, 2, WeightConvention::Sup).unwrap();
        let inf = TransferMatrix::assemble(&tree, &phi, 2, WeightConvention::Inf).unwrap();
        for k in 0..m.nnz() {
            assert!(inf.vals[k] <= m.vals[k] && m.vals[k] <= sup.vals[k]);
        }
    }

    #[test]
    fn doubling_spectrum_is_exact() {
        let d = MapModel::doubling();
        for n in 4..=12 {
            let (_, m, s) = spectrum(&d, &Potential::zero(), n);
            assert!((s.lambda - 2.0).abs() < 1e-10);
            let u = 1.0 / m.dim() as f64;
            assert!(s.h.iter().all(|h| (h - 1.0).abs() < 1e-10));
            assert!(s.nu.iter().all(|v| (v - u).abs() < 1e-10 * u));
            assert!((pressure(&s) - 2f64.ln()).abs() < 1e-10);
        }
        let (_, _, s) = spectrum(&d, &Potential::constant(0.3), 6);
        assert!((s.lambda - 2.0 * 0.3f64.exp()).abs() < 1e-10);
        assert!((pressure(&s) - 2f64.ln() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn cosine_potential_pressure_bracket_and_resolution() {
        let d = MapModel::doubling();
        let phi = Potential::cosine(0.1);
        let (_, m10, s10) = spectrum(&d, &phi, 10);
        let (_, _, s12) = spectrum(&d, &phi, 12);
        assert!(s10.lambda > 2.0 * (-0.1f64).exp() && s10.lambda < 2.0 * 0.1f64.exp());
        assert!((s10.lambda - s12.lambda).abs() < 1e-3);
        assert!(conformality_residual(&m10, &s10) < 1e-10);
        let r = m10.power_norm_radius(40);
        assert!((r - s10.lambda).abs() / s10.lambda < 0.05);
    }

    #[test]
    fn de_bruijn_remainder_is_nilpotent() {
        let (_, m, s) = spectrum(&MapModel::doubling(), &Potential::zero(), 3);
        assert!(dense_second_modulus(&m, &s) < 1e-10);
        let g = spectral_gap(&m, &s, 1e-6, 1000).unwrap();
        assert!(g.xi < 1e-10);
        let (_, mc, sc) = spectrum(&MapModel::doubling(), &Potential::constant(0.7), 3);
        assert!(dense_second_modulus(&mc, &sc) < 1e-10);
    }

    #[test]
    fn deformed_gap_is_stable_across_levels() {
        let m = MapModel::sine_deformation(0.2).unwrap();
        let phi = Potential::cosine(0.1);
        let (_, m10, s10) = spectrum(&m, &phi, 10);
        let (_, m12, s12) = spectrum(&m, &phi, 12);
        let g10 = spectral_gap(&m10, &s10, 1e-6, 5000).unwrap();
        let g12 = spectral_gap(&m12, &s12, 1e-6, 5000).unwrap();
        assert!(g10.xi < 1.0 && g12.xi < 1.0);
        assert!((g10.xi - g12.xi).abs() < 0.05, "{} vs {}", g10.xi, g12.xi);
        let dense = dense_second_modulus(&m10, &s10);
        assert!((dense - g10.xi).abs() < 0.02, "dense {dense} vs {}", g10.xi);
    }

    #[test]
    fn theta_variation_examples() {
        let d = MapModel::doubling();
        let tree = CylinderTree::build(&d, 10).unwrap();
        let norm = ThetaNorm::new(&tree, &Potential::zero(), 0.4, 10, 0.5).unwrap();
        let c = norm.variation(&tree, &Observable::constant(2.0)).unwrap();
        assert_eq!(c.truncated, 0.0);
        let ind = norm.variation(&tree, &Observable::indicator(vec![(0.0, 0.25)])).unwrap();
        assert!((ind.truncated - 0.4).abs() < 1e-15);
        assert_eq!(ind.tail_bound, 0.0);
        let cos = Observable::Fourier(Fourier::cosine(1, 1.0));
        let v = norm.variation(&tree, &cos).unwrap();
        // brute force: per-level oscillation of cos over dyadic intervals
        let mut brute = 0.0;
        for n in 1..=10 {
            let k = 1usize << n;
            for j in 0..k {
                let (a, b) = (j as f64 / k as f64, (j + 1) as f64 / k as f64);
                let pts: Vec<f64> = (0..=2000).map(|i| (std::f64::consts::TAU * (a + (b - a) * i as f64 / 2000.0)).cos()).collect();
                let mut lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
                let mut hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // extremes of cos are at dyadic points 0 and 1/2 exactly
                for e in [0.0, 0.5] {
                    if e >= a && e <= b {
                        let v = (std::f64::consts::TAU * e).cos();
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                brute += 0.4f64.powi(n) * (hi - lo);
            }
        }
        assert!((v.truncated - brute).abs() < 1e-10, "{} vs {brute}", v.truncated);
        assert!(v.tail_bound.is_finite() && v.tail_bound > 0.0);
    }

    #[test]
    fn theta_variation_vector_matches_observable_for_cylinder_functions() {
        let d = MapModel::doubling();
        let tree = CylinderTree::build(&d, 6).unwrap();
        let norm = ThetaNorm::new(&tree, &Potential::cosine(0.1), 0.3, 6, 0.05).unwrap();
        let ind = Observable::indicator(vec![(0.125, 0.375), (0.75, 0.875)]);
        let vec = discretize(&tree, 6, &ind).unwrap();
        let a = norm.variation(&tree, &ind).unwrap().truncated;
        let b = norm.variation_vec(&tree, 6, &vec).unwrap().truncated;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn correlation_examples() {
        let d = MapModel::doubling();
        let (tree, m, s) = spectrum(&d, &Potential::zero(), 8);
        let half = discretize(&tree, 8, &Observable::indicator(vec![(0.0, 0.5)])).unwrap();
        let c = operator_correlation(&m, &s, &half, &half, 1..=6).unwrap();
        assert!(c.exact_independence);
        assert!(c.rows.iter().all(|r| r.abs == 0.0));
        let ones = vec![1.0; m.dim()];
        let psi = discretize(&tree, 8, &Observable::Fourier(Fourier::cosine(1, 1.0))).unwrap();
        let c = operator_correlation(&m, &s, &ones, &psi, 1..=6).unwrap();
        assert!(c.rows.iter().all(|r| r.abs < 1e-14));
        let signed = signed_correlations(&m, &s, &half, &half, 0).unwrap();
        assert!((signed[0] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn deformed_correlation_rate_within_gap() {
        let model = MapModel::sine_deformation(0.2).unwrap();
        // a zero potential gives the combinatorial (Bernoulli) measure, for
        // which cylinder indicators decorrelate exactly
        let (tree, m, s) = spectrum(&model, &Potential::cosine(0.3), 10);
        let gap = spectral_gap(&m, &s, 1e-6, 5000).unwrap();
        let q = tree.cylinder(2, 1).unwrap().clone();
        let ind = discretize(&tree, 10, &Observable::indicator(vec![(q.a, q.b)])).unwrap();
        let c = operator_correlation(&m, &s, &ind, &ind, 1..=12).unwrap();
        let (_, xi) = c.fit.unwrap();
        assert!(xi <= gap.xi + 0.05, "fit {xi} gap {}", gap.xi);
    }

    #[test]
    fn lasota_yorke_doubling() {
        let d = MapModel::doubling();
        let (tree, m, s) = spectrum(&d, &Potential::zero(), 12);
        let v = crate::dynamics::validate_hypotheses(&d, &Potential::zero(), 1.0, &Default::default()).unwrap();
        let norm = ThetaNorm::new(&tree, &Potential::zero(), v.theta, 12, v.c * v.tau).unwrap();
        let cos = discretize(&tree, 12, &Observable::Fourier(Fourier::cosine(1, 1.0))).unwrap();
        let ones = vec![1.0; m.dim()];
        let fit = lasota_yorke_check(&m, &s, &tree, &norm, &[("one".into(), ones), ("cos".into(), cos)], 1..=6).unwrap();
        assert!(fit.pass, "{fit:?}");
        let ratios: Vec<f64> = fit.rows.iter().filter(|r| r.observable == "cos").map(|r| r.var_iterate / r.var_g).collect();
        assert!(crate::stats::strictly_decreasing(&ratios), "{ratios:?}");
    }

    #[test]
    fn period_two_partition_spectrum() {
        let model = MapModel::deformation(2, 0.2, Fourier::sine(1, 1.0), &PartitionSpec::PeriodicOrbit { period: 2, seed: 0.3 }, &[1]).unwrap();
        let (_, m, s) = spectrum(&model, &Potential::zero(), 8);
        assert!((s.lambda - 2.0).abs() < 1e-10);
        assert!(conformality_residual(&m, &s) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn scaling_covariance(shift in -1.0f64..1.0, amp in 0.0f64..0.3) {
            let d = MapModel::sine_deformation(0.2).unwrap();
            let phi = Potential::cosine(amp);
            let (_, m, s) = spectrum(&d, &phi, 6);
            let (_, ms, ss) = spectrum(&d, &phi.shifted(shift), 6);
            prop_assert!((ss.lambda / s.lambda - shift.exp()).abs() < 1e-12 * shift.exp());
            for k in 0..s.h.len() {
                prop_assert!((s.h[k] - ss.h[k]).abs() < 1e-10 * s.h[k]);
                prop_assert!((s.nu[k] - ss.nu[k]).abs() < 1e-10 * s.nu[k]);
            }
            let a = dense_second_modulus(&m, &s);
            let b = dense_second_modulus(&ms, &ss);
            prop_assert!((a - b).abs() < 1e-8);
        }

        #[test]
        fn lambda_bracket(amp in 0.0f64..0.5, n in 1usize..8) {
            let d = MapModel::sine_deformation(0.2).unwrap();
            let phi = Potential::cosine(amp);
            let (_, m, s) = spectrum(&d, &phi, n);
            prop_assert!(s.lambda >= 2.0 * phi.inf().exp() * (1.0 - 1e-12));
            prop_assert!(s.lambda <= 2.0 * phi.sup().exp() * (1.0 + 1e-12));
            prop_assert!(conformality_residual(&m, &s) < 1e-9);
            prop_assert!(s.h.iter().all(|h| *h > 0.0));
            prop_assert!((s.nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
