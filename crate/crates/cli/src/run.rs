//! Subcommand execution. Each run writes its CSV artifacts, the resolved
//! configuration and a JSON manifest with the checks it performed.

use crate::config::{CltObservable, ExperimentConfig};
use crate::error::CliError;
use serde::{Deserialize, Serialize};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thermoform::measure::{conformal_measure, decay_fit, density_ratio, equilibrium_measure, gibbs_sweep, jacobian_check, kn_exceedance, weak_gibbs_from_logs};
use thermoform::recurrence::{
    asymptotic_variance, batch_means_variance, choose, clt_check, fluctuation_stat, hitting_ks_sweep, hitting_law, hitting_vs_return_gap, kac_check,
    ornstein_weiss, pac_bound_check, run_hitting, FluctuationReference, HorizonRule, TargetSet,
};
use thermoform::sampler::{stream_rng, MarkovSampler};
use thermoform::stats::{median, strictly_decreasing};
use thermoform::transfer::{
    conformality_residual, discretize, lasota_yorke_check, leading_spectrum, operator_correlation, spectral_gap, IterationOptions, SpectralData,
    ThetaNorm, TransferMatrix, WeightConvention,
};
use thermoform::{validate_hypotheses, CylinderTree, Fourier, HypothesisReport, MapModel, Observable, Potential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Validate,
    Cylinders,
    Spectrum,
    Correlations,
    LasotaYorke,
    Gibbs,
    Hitting,
    Returns,
    Clt,
    Fluctuations,
    Report,
}

impl Subcommand {
    pub const EXPERIMENTS: [Subcommand; 10] = [
        Subcommand::Validate,
        Subcommand::Cylinders,
        Subcommand::Spectrum,
        Subcommand::Correlations,
        Subcommand::LasotaYorke,
        Subcommand::Gibbs,
        Subcommand::Hitting,
        Subcommand::Returns,
        Subcommand::Clt,
        Subcommand::Fluctuations,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Cylinders => "cylinders",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Correlations => "correlations",
            Subcommand::LasotaYorke => "lasota-yorke",
            Subcommand::Gibbs => "gibbs",
            Subcommand::Hitting => "hitting",
            Subcommand::Returns => "returns",
            Subcommand::Clt => "clt",
            Subcommand::Fluctuations => "fluctuations",
            Subcommand::Report => "report",
        }
    }

    /// The result an experiment's checks bear on, used to group the report.
    pub fn topic(&self) -> &'static str {
        match self {
            Subcommand::Validate => "standing hypotheses",
            Subcommand::Cylinders => "cylinder geometry and measure decay",
            Subcommand::Spectrum => "spectral gap and conformal measure",
            Subcommand::Correlations => "exponential decay of correlations",
            Subcommand::LasotaYorke => "Lasota-Yorke inequality",
            Subcommand::Gibbs => "Gibbs property at hyperbolic times",
            Subcommand::Hitting => "exponential hitting-time law",
            Subcommand::Returns => "return times and entropy",
            Subcommand::Clt => "central limit theorem",
            Subcommand::Fluctuations => "log-normal return-time fluctuations",
            Subcommand::Report => "summary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: String,
}

fn check(name: &str, pass: bool, value: impl Display) -> Check {
    Check { name: name.into(), pass, value: value.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: Subcommand,
    pub topic: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub config: String,
    pub artifacts: Vec<String>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Shared state of one run.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    model: MapModel,
    phi: Potential,
    out: PathBuf,
    artifacts: Vec<String>,
    checks: Vec<Check>,
    warnings: Vec<String>,
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

impl<'a> Run<'a> {
    fn write_csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn tree(&self, n: usize) -> Result<CylinderTree, CliError> {
        Ok(CylinderTree::build(&self.model, n)?)
    }

    fn spectrum(&self, tree: &CylinderTree, n: usize, phi: &Potential) -> Result<(TransferMatrix, SpectralData), CliError> {
        let m = TransferMatrix::assemble(tree, phi, n, WeightConvention::Midpoint)?;
        let opts = IterationOptions { tol: self.cfg.resolution.tol, max_iter: self.cfg.resolution.max_iter, ..Default::default() };
        let s = leading_spectrum(&m, &opts)?;
        Ok((m, s))
    }

    fn hypotheses(&self) -> Result<HypothesisReport, CliError> {
        Ok(validate_hypotheses(&self.model, &self.phi, self.phi.alpha(), &self.cfg.constants.validator_params())?)
    }

    fn sampler(&self, n: usize) -> Result<(CylinderTree, TransferMatrix, SpectralData, MarkovSampler), CliError> {
        let tree = self.tree(n)?;
        let (m, s) = self.spectrum(&tree, n, &self.phi)?;
        let smp = MarkovSampler::new(&tree, &m, &s)?;
        Ok((tree, m, s, smp))
    }
}

/// Runs one subcommand and writes its artifacts into `cfg.out`.
pub fn run_subcommand(cmd: Subcommand, cfg: &ExperimentConfig, strict: bool) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    if cmd == Subcommand::Report {
        let (manifest, _) = emit_report(&cfg.out)?;
        return Ok(manifest);
    }
    let start = Instant::now();
    let mut run = Run {
        cfg,
        model: cfg.model.build()?,
        phi: cfg.potential.build()?,
        out: cfg.out.clone(),
        artifacts: Vec::new(),
        checks: Vec::new(),
        warnings: Vec::new(),
    };
    match cmd {
        Subcommand::Validate => validate(&mut run)?,
        Subcommand::Cylinders => cylinders(&mut run)?,
        Subcommand::Spectrum => spectrum(&mut run)?,
        Subcommand::Correlations => correlations(&mut run)?,
        Subcommand::LasotaYorke => lasota_yorke(&mut run)?,
        Subcommand::Gibbs => gibbs(&mut run)?,
        Subcommand::Hitting => hitting(&mut run)?,
        Subcommand::Returns => returns(&mut run)?,
        Subcommand::Clt => clt(&mut run)?,
        Subcommand::Fluctuations => fluctuations(&mut run)?,
        Subcommand::Report => unreachable!(),
    }
    let config_name = format!("{}.resolved.toml", cmd.name());
    std::fs::write(cfg.out.join(&config_name), cfg.to_toml())?;
    run.artifacts.push(config_name);
    let manifest = Manifest {
        subcommand: cmd,
        topic: cmd.topic().into(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        threads: rayon::current_num_threads(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        config: cfg.to_toml(),
        artifacts: run.artifacts,
        checks: run.checks,
        warnings: run.warnings,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(cfg.out.join(format!("{}.manifest.json", cmd.name())), text)?;
    if strict && !manifest.passed() {
        let failed: Vec<&str> = manifest.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(CliError::Acceptance(failed.join(", ")));
    }
    Ok(manifest)
}

fn validate(run: &mut Run) -> Result<(), CliError> {
    let report = run.hypotheses()?;
    std::fs::write(run.out.join("hypotheses.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    run.artifacts.push("hypotheses.json".into());
    let margin = |c: &thermoform::dynamics::Check| c.margin.map(fmt).unwrap_or_default();
    let rows = vec![
        vec!["H1".into(), report.holds_h1.to_string(), String::new()],
        vec!["H2".into(), report.h2.holds.to_string(), margin(&report.h2)],
        vec!["H3a".into(), report.h3a.holds.to_string(), margin(&report.h3a)],
        vec!["H3b".into(), report.h3b.holds.to_string(), margin(&report.h3b)],
        vec!["star".into(), report.star_feasible.to_string(), String::new()],
    ];
    run.write_csv("hypotheses.csv", &["condition", "holds", "margin"], rows)?;
    run.warnings.extend(report.warnings.iter().cloned());
    run.checks.push(check("hypotheses hold", report.all_hold(), report.all_hold()));
    Ok(())
}

fn cylinders(run: &mut Run) -> Result<(), CliError> {
    let [lo, hi] = run.cfg.resolution.levels;
    let rep = run.hypotheses()?;
    let tree = run.tree(hi)?;
    let diam = tree.diameter_stats(lo..=hi, rep.gamma, rep.c, rep.tau)?;
    let mut rows = Vec::new();
    for d in &diam {
        let free = tree.short_return_free(d.level, run.cfg.constants.zeta)?.len();
        let hyp = tree.hyperbolic_cylinders(d.level, rep.c, 8)?.members.len();
        rows.push(vec![
            d.level.to_string(),
            d.count.to_string(),
            d.count_b.to_string(),
            hyp.to_string(),
            free.to_string(),
            fmt(d.max_diameter),
            fmt(d.max_diameter_outside_b),
            fmt(d.bound),
            d.bound_holds.to_string(),
        ]);
    }
    run.write_csv(
        "cylinders.csv",
        &["level", "count", "count_b", "hyperbolic", "short_return_free", "max_diameter", "max_diameter_outside_b", "bound", "bound_holds"],
        rows,
    )?;
    let (_, s) = run.spectrum(&tree, hi, &run.phi)?;
    let nu = conformal_measure(&tree, &s)?;
    let fit = decay_fit(&tree, &nu, lo..=hi, Some(rep.gamma))?;
    let rows = fit
        .rows
        .iter()
        .map(|r| vec![r.level.to_string(), fmt(r.max_weight), r.frequency_set_measure.map(fmt).unwrap_or_default()])
        .collect();
    run.write_csv("nu_decay.csv", &["level", "max_nu", "nu_b"], rows)?;
    run.checks.push(check(
        "max nu(Q_n) decays exponentially (rate > 0, R^2 > 0.99)",
        fit.rate > 0.0 && fit.fit.r_squared > 0.99,
        format!("rate {:.6}, R^2 {:.6}", fit.rate, fit.fit.r_squared),
    ));
    Ok(())
}

fn spectrum(run: &mut Run) -> Result<(), CliError> {
    let [lo, hi] = run.cfg.resolution.levels;
    let level = run.cfg.resolution.level;
    let top = hi.max(level);
    let tree = run.tree(top)?;
    let mut levels: Vec<usize> = (lo..=hi).collect();
    if !levels.contains(&level) {
        levels.push(level);
        levels.sort_unstable();
    }
    let mut rows = Vec::new();
    let mut jac_rows = Vec::new();
    let mut jac_errors = Vec::new();
    let mut jac_ok = true;
    let mut residual_ok = true;
    let mut working = None;
    for &n in &levels {
        let (m, s) = run.spectrum(&tree, n, &run.phi)?;
        let gap = spectral_gap(&m, &s, 1e-6, 5000)?;
        let res = conformality_residual(&m, &s);
        residual_ok &= res < 1e-9;
        rows.push(vec![
            n.to_string(),
            m.dim().to_string(),
            format!("{:.12}", s.lambda),
            format!("{:.12}", s.pressure),
            format!("{:.8}", gap.xi),
            format!("{:?}", gap.method),
            s.iterations.to_string(),
            format!("{:.3e}", res),
            format!("{:.8}", density_ratio(&s)),
        ]);
        if n >= 2 {
            let nu = conformal_measure(&tree, &s)?;
            let j = jacobian_check(&nu, &tree, &run.phi)?;
            jac_ok &= j.max_relative_error <= j.oscillation_bound || j.max_relative_error < 1e-12;
            jac_errors.push(j.max_relative_error);
            jac_rows.push(vec![n.to_string(), format!("{:.6e}", j.max_relative_error), format!("{:.6e}", j.oscillation_bound)]);
        }
        if n == level {
            working = Some((s, gap.xi));
        }
    }
    run.write_csv(
        "spectrum.csv",
        &["level", "dim", "lambda", "pressure", "xi", "gap_method", "iterations", "conformality_residual", "h_ratio"],
        rows,
    )?;
    run.write_csv("jacobian.csv", &["level", "max_relative_error", "oscillation_bound"], jac_rows)?;
    let (s, xi) = working.expect("working level is in the sweep");
    let rows = tree
        .cylinders(level)?
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let word: String = c.word.iter().map(|d| char::from(b'0' + d)).collect();
            vec![word, fmt(s.nu[k]), fmt(s.nu[k] * s.h[k]), fmt(s.h[k])]
        })
        .collect();
    run.write_csv("measure.csv", &["word", "nu", "mu", "h"], rows)?;
    run.checks.push(check("conformality residual below 1e-9 at every level", residual_ok, residual_ok));
    run.checks.push(check("spectral gap at the working level (xi < 1)", xi < 1.0, format!("{xi:.6}")));
    let settled = jac_errors.iter().all(|e| *e < 1e-12);
    let decreasing = settled || strictly_decreasing(&jac_errors);
    run.checks.push(check(
        "Jacobian error within osc(e^phi) and decreasing in level",
        jac_ok && decreasing,
        format!("{:?}", jac_errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()),
    ));
    Ok(())
}

fn observables(tree: &CylinderTree, phi: &Potential) -> Result<Vec<(String, Observable)>, CliError> {
    let q = tree.cylinder(2, 1)?;
    let mut obs = vec![
        ("cos".to_string(), Observable::Fourier(Fourier::cosine(1, 1.0))),
        ("indicator".to_string(), Observable::indicator(vec![(q.a, q.b)])),
    ];
    if !phi.is_constant() {
        obs.push(("potential".to_string(), Observable::Potential(phi.clone())));
    }
    Ok(obs)
}

fn correlations(run: &mut Run) -> Result<(), CliError> {
    let level = run.cfg.resolution.level;
    let tree = run.tree(level)?;
    let (m, s) = run.spectrum(&tree, level, &run.phi)?;
    let gap = spectral_gap(&m, &s, 1e-6, 5000)?;
    let lags = run.cfg.sampling.lag_max.min(40);
    let mut rows = Vec::new();
    let mut fit_rows = Vec::new();
    let mut within = true;
    for (name, g) in observables(&tree, &run.phi)? {
        let v = discretize(&tree, level, &g)?;
        let c = operator_correlation(&m, &s, &v, &v, 1..=lags)?;
        for r in &c.rows {
            rows.push(vec![name.clone(), r.n.to_string(), format!("{:.12e}", r.signed), format!("{:.12e}", r.abs)]);
        }
        let (cc, xi) = c.fit.unwrap_or((0.0, 0.0));
        within &= c.exact_independence || xi <= gap.xi + 0.05;
        fit_rows.push(vec![name, fmt(cc), fmt(xi), fmt(gap.xi), c.exact_independence.to_string()]);
    }
    run.write_csv("correlations.csv", &["observable", "n", "signed", "abs"], rows)?;
    run.write_csv("correlation_fit.csv", &["observable", "constant", "rate", "gap_rate", "exact_independence"], fit_rows)?;
    run.checks.push(check("correlation rates bounded by the spectral gap", within, format!("gap {:.6}", gap.xi)));
    Ok(())
}

fn lasota_yorke(run: &mut Run) -> Result<(), CliError> {
    let level = run.cfg.resolution.level;
    let rep = run.hypotheses()?;
    let tree = run.tree(level)?;
    let (m, s) = run.spectrum(&tree, level, &run.phi)?;
    let norm = ThetaNorm::new(&tree, &run.phi, rep.theta, level, rep.c * rep.tau * run.phi.alpha())?;
    let mut samples = vec![
        ("one".to_string(), vec![1.0; m.dim()]),
        ("cos".to_string(), discretize(&tree, level, &Observable::Fourier(Fourier::cosine(1, 1.0)))?),
    ];
    for (k, q) in tree.cylinders(3.min(level))?.iter().enumerate() {
        samples.push((format!("indicator{k}"), discretize(&tree, level, &Observable::indicator(vec![(q.a, q.b)]))?));
    }
    let fit = lasota_yorke_check(&m, &s, &tree, &norm, &samples, 1..=run.cfg.sampling.ly_iterates)?;
    let rows = fit
        .rows
        .iter()
        .map(|r| vec![r.observable.clone(), r.n.to_string(), fmt(r.var_g), fmt(r.var_iterate), fmt(r.l1_norm), fmt(r.residual)])
        .collect();
    run.write_csv("lasota_yorke.csv", &["observable", "n", "var_g", "var_iterate", "l1_norm", "residual"], rows)?;
    run.write_csv(
        "lasota_yorke_fit.csv",
        &["theta", "d1", "xi1", "d2", "pass"],
        vec![vec![fmt(rep.theta), fmt(fit.d1), fmt(fit.xi1), fmt(fit.d2), fit.pass.to_string()]],
    )?;
    run.checks.push(check("fitted contraction xi1 < 1", fit.pass, format!("{:.6}", fit.xi1)));
    Ok(())
}

fn gibbs(run: &mut Run) -> Result<(), CliError> {
    let [lo, hi] = run.cfg.resolution.levels;
    let rep = run.hypotheses()?;
    let top = hi + 2;
    let tree = run.tree(top)?;
    let (_, s) = run.spectrum(&tree, top, &run.phi)?;
    let nu = conformal_measure(&tree, &s)?;
    let rows = gibbs_sweep(&tree, &run.phi, &nu, lo..=hi, rep.c, 16)?;
    let csv_rows = rows
        .iter()
        .map(|r| vec![r.level.to_string(), r.hyperbolic_count.to_string(), fmt(r.min_ratio), fmt(r.max_ratio), fmt(r.spread), fmt(r.empirical_k)])
        .collect();
    run.write_csv("gibbs.csv", &["level", "hyperbolic", "min_ratio", "max_ratio", "spread", "empirical_k"], csv_rows)?;
    let k_last = rows.last().map(|r| r.empirical_k).unwrap_or(f64::NAN);
    let k_mid = rows.iter().find(|r| r.level + 4 == hi).map(|r| r.empirical_k).unwrap_or(f64::NAN);
    run.checks.push(check("empirical Gibbs constant stable (K(last)/K(last-4) < 1.5)", k_last / k_mid < 1.5, format!("{:.6}", k_last / k_mid)));

    let n_ref = run.cfg.resolution.n_ref;
    let (_, _, sr, smp) = run.sampler(n_ref)?;
    let k_const = if k_last.is_finite() { k_last } else { 1.0 };
    let sup_abs = run.phi.sup_abs();
    let traces: Vec<_> = (0..run.cfg.sampling.gibbs_points as u64)
        .map(|i| {
            let xs = smp.orbit(160, &mut stream_rng(run.cfg.seed, i))?;
            let logs: Vec<f64> = xs.iter().map(|x| -run.model.lift().deriv(*x).abs().ln()).collect();
            Ok(weak_gibbs_from_logs(&logs, sr.pressure, sup_abs, 40, rep.c, k_const))
        })
        .collect::<Result<_, CliError>>()?;
    let ex = kn_exceedance(&traces, run.cfg.constants.a, &[5, 10, 20, 40]);
    run.write_csv("weak_gibbs.csv", &["n", "fraction_kn_above_n_pow_a"], ex.iter().map(|(n, f)| vec![n.to_string(), fmt(*f)]).collect())?;
    let at20 = ex[2].1;
    let nonincreasing = ex.windows(2).all(|w| w[1].1 <= w[0].1);
    run.checks.push(check("fraction with K_n >= n^a below 0.05 at n = 20 and nonincreasing", at20 < 0.05 && nonincreasing, fmt(at20)));
    Ok(())
}

fn hitting(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let (tree, _, _, smp) = run.sampler(cfg.resolution.n_ref)?;
    let samples = cfg.sampling.samples;
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for &n in &cfg.sampling.hitting_levels {
        let ks = hitting_ks_sweep(&smp, &tree, n, cfg.constants.zeta, cfg.sampling.cylinders_per_level, samples, cfg.sampling.t_max, cfg.seed)?;
        for (idx, v) in &ks {
            rows.push(vec![n.to_string(), idx.to_string(), fmt(*v)]);
        }
        let vals: Vec<f64> = ks.iter().map(|p| p.1).collect();
        medians.push((n, median(&vals)));
    }
    run.write_csv("hitting_ks.csv", &["level", "index", "ks"], rows)?;
    run.write_csv("hitting_summary.csv", &["level", "median_ks"], medians.iter().map(|(n, m)| vec![n.to_string(), fmt(*m)]).collect())?;
    let meds: Vec<f64> = medians.iter().map(|m| m.1).collect();
    run.checks.push(check("median hitting-law KS decreasing in level", strictly_decreasing(&meds), format!("{meds:?}")));

    // Kac at the middle level
    let kac_level = cfg.sampling.hitting_levels[cfg.sampling.hitting_levels.len() / 2];
    let pool = tree.short_return_free(kac_level, cfg.constants.zeta)?;
    let mut kac_rows = Vec::new();
    let mut kac_ok = true;
    for idx in choose(&pool, cfg.sampling.cylinders_per_level, cfg.seed ^ 0x6b61_6300) {
        let e = run_hitting(&smp, &tree, kac_level, idx, samples, cfg.sampling.t_max, true, cfg.seed.wrapping_add(idx as u64))?;
        let k = kac_check(&e)?;
        kac_ok &= k.pass;
        kac_rows.push(vec![kac_level.to_string(), idx.to_string(), e.word, fmt(e.measure), fmt(k.product), fmt(k.standard_error), k.pass.to_string()]);
    }
    run.write_csv("kac.csv", &["level", "index", "word", "mu", "product", "se", "pass"], kac_rows)?;
    run.checks.push(check("Kac: |E[tau | Q] mu(Q) - 1| < 3 se for every cylinder", kac_ok, kac_ok));

    // survival curve of one cylinder at the finest level
    let top = *cfg.sampling.hitting_levels.last().expect("validated non-empty");
    let free = tree.short_return_free(top, cfg.constants.zeta)?;
    let idx = choose(&free, 1, cfg.seed)[0];
    let e = run_hitting(&smp, &tree, top, idx, samples, cfg.sampling.t_max, false, cfg.seed)?;
    let law = hitting_law(&e, cfg.seed);
    run.write_csv(
        "survival.csv",
        &["t", "survival", "exp_minus_t"],
        law.curve.iter().map(|(t, g, x)| vec![format!("{t:.2}"), fmt(*g), fmt(*x)]).collect(),
    )?;

    // bound mu(tau_E <= t / mu(E)) <= t + mu(E)
    let pac_level = cfg.sampling.hitting_levels[0];
    let all: Vec<usize> = (0..tree.count(pac_level)).collect();
    let grid: Vec<f64> = (1..=50).map(|k| k as f64 * 0.1).collect();
    let mut pac_rows = Vec::new();
    let mut worst = f64::INFINITY;
    let mut violated = false;
    for idx in choose(&all, 20, cfg.seed ^ 0x7061_6300) {
        let target = TargetSet::from_cylinders(&smp, &tree, &[(pac_level, idx)])?;
        let r = pac_bound_check(&smp, &target, &grid, samples, cfg.seed.wrapping_add(idx as u64))?;
        worst = worst.min(r.worst_margin);
        violated |= r.violated;
        for row in r.rows {
            pac_rows.push(vec![idx.to_string(), format!("{:.1}", row.t), fmt(row.empirical), fmt(row.standard_error), fmt(row.bound), fmt(row.margin)]);
        }
    }
    run.write_csv("pac.csv", &["index", "t", "empirical", "se", "bound", "margin"], pac_rows)?;
    run.checks.push(check("hitting-probability bound never exceeded beyond 3 se", !violated, format!("worst margin {worst:.6}")));
    Ok(())
}

fn entropy_reference(run: &Run, tree: &CylinderTree, s: &SpectralData) -> Result<f64, CliError> {
    let mu = equilibrium_measure(tree, s)?;
    Ok(s.pressure - mu.integrate(&Observable::Potential(run.phi.clone())))
}

fn returns(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let levels = &cfg.sampling.return_levels;
    let top = levels.iter().copied().max().unwrap_or(1).max(cfg.resolution.n_ref);
    let (tree, _, s, smp) = run.sampler(top)?;
    let h = entropy_reference(run, &tree, &s)?;
    let lo = *levels.iter().min().unwrap_or(&1);
    let hi = *levels.iter().max().unwrap_or(&1);
    let ow = ornstein_weiss(&smp, &tree, lo..=hi, cfg.sampling.samples, h, 100.0, cfg.seed)?;
    let rows = ow
        .rows
        .iter()
        .filter(|r| levels.contains(&r.n))
        .map(|r| vec![r.n.to_string(), fmt(r.mean), fmt(r.standard_error), r.censored.to_string(), fmt(r.reference)])
        .collect();
    run.write_csv("ornstein_weiss.csv", &["n", "mean_log_rn_over_n", "se", "censored", "entropy_ref"], rows)?;
    let last = ow.rows.last().expect("non-empty range");
    run.checks.push(check(
        "mean (1/n) log R_n within 0.03 of the entropy at the largest level",
        (last.mean - h).abs() < 0.03,
        format!("{:.6} vs {:.6}", last.mean, h),
    ));

    let ns = &cfg.sampling.hitting_levels;
    let gap = hitting_vs_return_gap(&smp, &tree, ns, HorizonRule::Entropy(h), cfg.sampling.samples, cfg.seed)?;
    let rows = gap
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), fmt(r.horizon), fmt(r.return_tail), fmt(r.hitting_tail), fmt(r.gap), fmt(r.standard_error)])
        .collect();
    run.write_csv("return_gap.csv", &["n", "horizon", "return_tail", "hitting_tail", "gap", "se"], rows)?;
    let gaps: Vec<f64> = gap.rows.iter().map(|r| r.gap).collect();
    let last_gap = *gaps.last().unwrap_or(&f64::NAN);
    run.checks.push(check(
        "hitting/return gap decreasing and below 0.05 at the largest level",
        strictly_decreasing(&gaps) && last_gap < 0.05,
        format!("{gaps:?}"),
    ));
    Ok(())
}

fn clt(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let level = cfg.resolution.n_ref;
    let (tree, m, s, smp) = run.sampler(level)?;
    let (obs, g): (Observable, Box<dyn Fn(f64) -> f64 + Sync>) = match cfg.sampling.clt_observable {
        CltObservable::Cosine => (Observable::Fourier(Fourier::cosine(1, 1.0)), Box::new(|x: f64| (std::f64::consts::TAU * x).cos())),
        CltObservable::Potential => {
            let p = run.phi.clone();
            (Observable::Potential(p.clone()), Box::new(move |x| p.eval(x)))
        }
    };
    let mu = equilibrium_measure(&tree, &s)?;
    let mean = mu.integrate(&obs);
    let vals = discretize(&tree, level, &obs)?;
    let bm = batch_means_variance(&smp, &g, 200, 2000, cfg.seed)?;
    let var = asymptotic_variance(&m, &s, &vals, cfg.sampling.lag_max)?.with_batch_means(bm);
    if var.disagreement {
        run.warnings.push(format!("Green-Kubo {} and batch means {} differ by more than 20%", var.green_kubo, bm));
    }
    let mut rows = Vec::new();
    let mut ks = Vec::new();
    for &n in &cfg.sampling.birkhoff_lengths {
        let r = clt_check(&smp, &g, mean, &var, n, cfg.sampling.samples, cfg.seed.wrapping_add(n as u64))?;
        ks.push(r.ks);
        rows.push(vec![n.to_string(), fmt(var.green_kubo), fmt(bm), fmt(r.ks), fmt(r.ks_ci.0), fmt(r.ks_ci.1)]);
    }
    run.write_csv("clt.csv", &["n", "sigma2_green_kubo", "sigma2_batch_means", "ks", "ks_ci_low", "ks_ci_high"], rows)?;
    let last = *ks.last().unwrap_or(&f64::NAN);
    run.checks.push(check("CLT: KS at the largest n <= 0.02", last <= 0.02, fmt(last)));
    Ok(())
}

fn fluctuations(run: &mut Run) -> Result<(), CliError> {
    let cfg = run.cfg;
    let levels = &cfg.sampling.return_levels;
    let top = levels.iter().copied().max().unwrap_or(1).max(cfg.resolution.n_ref);
    let (tree, m, s, smp) = run.sampler(top)?;
    let mu = equilibrium_measure(&tree, &s)?;
    let phi_obs = Observable::Potential(run.phi.clone());
    // the variance of phi converges long before the sampler level
    let var_level = cfg.resolution.level.min(top);
    let (mv, sv) = if var_level == top { (m, s.clone()) } else { run.spectrum(&tree, var_level, &run.phi)? };
    let var = asymptotic_variance(&mv, &sv, &discretize(&tree, var_level, &phi_obs)?, cfg.sampling.lag_max)?;
    let reference = FluctuationReference::new(s.pressure, mu.integrate(&phi_obs), &var)?;
    let mut rows = Vec::new();
    let mut ks = Vec::new();
    let mut last_values = Vec::new();
    for &n in levels {
        let r = fluctuation_stat(&smp, &tree, n, cfg.sampling.samples, &reference, cfg.seed.wrapping_add(n as u64))?;
        ks.push(r.ks);
        rows.push(vec![n.to_string(), fmt(reference.entropy), fmt(reference.sigma), fmt(r.ks), fmt(r.ks_ci.0), fmt(r.ks_ci.1), r.censored.to_string()]);
        last_values = r.values;
    }
    run.write_csv("fluctuations.csv", &["n", "entropy_ref", "sigma_ref", "ks", "ks_ci_low", "ks_ci_high", "censored"], rows)?;
    run.write_csv("fluctuations_hist.csv", &["bin_center", "density", "normal_pdf"], histogram(&last_values, -4.0, 4.0, 40))?;
    let last = *ks.last().unwrap_or(&f64::NAN);
    run.checks.push(check(
        "fluctuation KS decreasing in n and <= 0.1 at the largest n",
        strictly_decreasing(&ks) && last <= 0.1,
        format!("{ks:?}"),
    ));
    Ok(())
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<Vec<String>> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        if *v >= lo && *v < hi {
            counts[((v - lo) / width) as usize] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let x = lo + (k as f64 + 0.5) * width;
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            vec![format!("{x:.2}"), fmt(*c as f64 / (values.len() as f64 * width)), fmt(pdf)]
        })
        .collect()
}

/// Collects every `*.manifest.json` under `dir` into `report.md` and
/// `report.json`. Missing or unreadable manifests become warnings.
pub fn emit_report(dir: &Path) -> Result<(Manifest, String), CliError> {
    let start = Instant::now();
    let mut manifests: Vec<Manifest> = Vec::new();
    let mut warnings = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".manifest.json") && n != "report.manifest.json"))
        .collect();
    names.sort();
    for p in names {
        match std::fs::read_to_string(&p).ok().and_then(|t| serde_json::from_str::<Manifest>(&t).ok()) {
            Some(m) => manifests.push(m),
            None => warnings.push(format!("could not read {}", p.display())),
        }
    }
    for cmd in Subcommand::EXPERIMENTS {
        if !manifests.iter().any(|m| m.subcommand == cmd) {
            warnings.push(format!("no artifacts for `{}` ({})", cmd.name(), cmd.topic()));
        }
    }
    let mut md = String::from("# Experiment report\n\n");
    if manifests.is_empty() {
        md.push_str("No experiment artifacts found.\n\n");
    } else {
        md.push_str("| experiment | result | check | verdict | value |\n|---|---|---|---|---|\n");
        for m in &manifests {
            for c in &m.checks {
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    m.subcommand.name(),
                    m.topic,
                    c.name.replace('|', "/"),
                    if c.pass { "pass" } else { "FAIL" },
                    c.value.replace('|', "/")
                ));
            }
        }
        md.push('\n');
    }
    if !warnings.is_empty() {
        md.push_str("## Warnings\n\n");
        for w in &warnings {
            md.push_str(&format!("- {w}\n"));
        }
        md.push('\n');
    }
    let verdict: Vec<serde_json::Value> = manifests
        .iter()
        .map(|m| serde_json::json!({ "experiment": m.subcommand.name(), "topic": m.topic, "pass": m.passed(), "checks": m.checks }))
        .collect();
    let block = serde_json::to_string_pretty(&serde_json::json!({ "all_pass": manifests.iter().all(|m| m.passed()), "experiments": verdict }))
        .expect("verdict serializes");
    md.push_str("## Verdict\n\n```json\n");
    md.push_str(&block);
    md.push_str("\n```\n");
    std::fs::write(dir.join("report.md"), &md)?;
    std::fs::write(dir.join("report.json"), &block)?;
    let manifest = Manifest {
        subcommand: Subcommand::Report,
        topic: Subcommand::Report.topic().into(),
        seed: 0,
        version: env!("CARGO_PKG_VERSION").into(),
        threads: rayon::current_num_threads(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        config: String::new(),
        artifacts: vec!["report.md".into(), "report.json".into()],
        checks: Vec::new(),
        warnings,
    };
    Ok((manifest, md))
}
