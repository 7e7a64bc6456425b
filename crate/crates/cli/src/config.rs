//! Experiment configuration: a TOML file with sections `[model]`,
//! `[potential]`, `[constants]`, `[resolution]` and `[sampling]`. Every
//! field has a default; the resolved configuration (with defaults filled
//! in) is written next to each run's artifacts.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thermoform::{Fourier, MapModel, PartitionSpec, Potential, PotentialKind, ValidatorParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelSpec,
    pub potential: PotentialSpec,
    pub constants: Constants,
    pub resolution: Resolution,
    pub sampling: Sampling,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            out: PathBuf::from("out"),
            model: ModelSpec::Doubling,
            potential: PotentialSpec::default(),
            constants: Constants::default(),
            resolution: Resolution::default(),
            sampling: Sampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Doubling,
    Linear {
        degree: u32,
    },
    /// `x -> degree x + epsilon g(x)`.
    Deformation {
        #[serde(default = "default_degree")]
        degree: u32,
        epsilon: f64,
        #[serde(default = "default_deformation")]
        g: Fourier,
        #[serde(default = "default_partition")]
        partition: PartitionSpec,
        #[serde(default)]
        non_expanding: Vec<usize>,
    },
    PiecewiseLinear {
        breaks: Vec<f64>,
        values: Vec<f64>,
        #[serde(default = "default_partition")]
        partition: PartitionSpec,
        #[serde(default)]
        non_expanding: Vec<usize>,
    },
}

fn default_degree() -> u32 {
    2
}

fn default_deformation() -> Fourier {
    Fourier::sine(1, 1.0)
}

fn default_partition() -> PartitionSpec {
    PartitionSpec::Fundamental
}

impl ModelSpec {
    pub fn build(&self) -> Result<MapModel, CliError> {
        Ok(match self {
            ModelSpec::Doubling => MapModel::doubling(),
            ModelSpec::Linear { degree } => {
                if *degree < 2 {
                    return Err(CliError::Config("linear model needs degree >= 2".into()));
                }
                MapModel::linear(*degree)
            }
            ModelSpec::Deformation { degree, epsilon, g, partition, non_expanding } => {
                MapModel::deformation(*degree, *epsilon, g.clone(), partition, non_expanding)?
            }
            ModelSpec::PiecewiseLinear { breaks, values, partition, non_expanding } => MapModel::new(
                thermoform::Lift::PiecewiseLinear { breaks: breaks.clone(), values: values.clone() },
                partition,
                non_expanding,
            )?,
        })
    }
}

// `deny_unknown_fields` does not combine with `flatten`, so unknown keys in
// `[potential]` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub shape: PotentialShape,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec { shape: PotentialShape::Zero, alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialShape {
    Zero,
    Constant { value: f64 },
    /// `amplitude cos(2 pi x)`.
    Cosine { amplitude: f64 },
    Fourier {
        #[serde(default)]
        a0: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
    Bump { center: f64, width: f64, height: f64 },
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential, CliError> {
        let kind = match &self.shape {
            PotentialShape::Zero => PotentialKind::Constant(0.0),
            PotentialShape::Constant { value } => PotentialKind::Constant(*value),
            PotentialShape::Cosine { amplitude } => PotentialKind::Fourier(Fourier::cosine(1, *amplitude)),
            PotentialShape::Fourier { a0, cos, sin } => PotentialKind::Fourier(Fourier { a0: *a0, cos: cos.clone(), sin: sin.clone() }),
            PotentialShape::Bump { center, width, height } => PotentialKind::Bump { center: *center, width: *width, height: *height },
        };
        Ok(Potential::from_kind(kind, self.alpha)?)
    }
}

/// Constants the theory leaves free. `None` means "derive from the model".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub zeta: f64,
    pub theta: Option<f64>,
    /// Exponent in the `K_n >= n^a` exceedance test.
    pub a: f64,
    pub m: f64,
    pub eps0: Option<f64>,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { gamma: None, c: None, zeta: 0.2, theta: None, a: 4.0, m: 1.0, eps0: None }
    }
}

impl Constants {
    pub fn validator_params(&self) -> ValidatorParams {
        ValidatorParams { gamma: self.gamma, c: self.c, eps0: self.eps0, theta: self.theta, m: self.m, ..ValidatorParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resolution {
    /// Working level of the transfer matrix.
    pub level: usize,
    /// Level range for sweeps (`[first, last]`).
    pub levels: [usize; 2],
    /// Level of the sampler used by Monte Carlo experiments.
    pub n_ref: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { level: 10, levels: [4, 12], n_ref: 12, tol: 1e-12, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    pub samples: usize,
    /// Hitting times are capped at `ceil(t_max / mu(Q))`.
    pub t_max: f64,
    pub lag_max: usize,
    /// Levels of the hitting-law sweep.
    pub hitting_levels: Vec<usize>,
    /// Cylinders per level in hitting sweeps.
    pub cylinders_per_level: usize,
    /// Birkhoff-sum lengths for the CLT.
    pub birkhoff_lengths: Vec<usize>,
    pub clt_observable: CltObservable,
    /// Levels for return-time experiments.
    pub return_levels: Vec<usize>,
    /// Sample points for the weak-Gibbs sweep.
    pub gibbs_points: usize,
    /// Range of Lasota–Yorke iterates.
    pub ly_iterates: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            samples: 10_000,
            t_max: 10.0,
            lag_max: 60,
            hitting_levels: vec![6, 8, 10],
            cylinders_per_level: 10,
            birkhoff_lengths: vec![500, 1000, 2000],
            clt_observable: CltObservable::Cosine,
            return_levels: vec![8, 11, 14],
            gibbs_points: 1000,
            ly_iterates: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CltObservable {
    /// `cos(2 pi x)`.
    Cosine,
    /// The potential itself.
    Potential,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub level: Option<usize>,
    pub samples: Option<usize>,
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `--n` replaces the per-experiment level/length lists with one value
    /// and raises `n_ref` to `n + 2` if the hitting experiments need it.
    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(l) = o.level {
            self.resolution.level = l;
        }
        if let Some(s) = o.samples {
            self.sampling.samples = s;
        }
        if let Some(n) = o.n {
            self.sampling.return_levels = vec![n];
            self.sampling.hitting_levels = vec![n];
            self.sampling.birkhoff_lengths = vec![n];
            self.resolution.n_ref = self.resolution.n_ref.max(n + 2);
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.resolution;
        if r.level == 0 || r.levels[0] == 0 || r.levels[0] > r.levels[1] {
            return Err(CliError::Config("levels must satisfy 1 <= first <= last".into()));
        }
        if r.n_ref < 3 {
            return Err(CliError::Config("n_ref must be >= 3".into()));
        }
        let s = &self.sampling;
        if s.samples == 0 || s.t_max <= 0.0 || s.lag_max == 0 {
            return Err(CliError::Config("samples, t_max and lag_max must be positive".into()));
        }
        if s.hitting_levels.iter().any(|n| *n == 0 || n + 2 > r.n_ref) {
            return Err(CliError::Config(format!("hitting levels must lie in 1..={} (n_ref - 2)", r.n_ref - 2)));
        }
        if !(self.constants.zeta > 0.0 && self.constants.zeta < 1.0) {
            return Err(CliError::Config("zeta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
