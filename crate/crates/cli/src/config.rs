//! Run configuration: one JSON file, with command-line overrides on top.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vflip_core::nalgebra::DMatrix;
use vflip_core::dynamics::{energy, g_star, State};
use vflip_core::io::{read_matrix, read_state, read_text};
use vflip_core::liouville::sample_liouville;
use vflip_core::model::{harmonic_chain, random_spd, SystemSpec, DEFAULT_COEFF_BOUND, DEFAULT_TOL};
use vflip_core::rng::{stream_rng, LIOUVILLE_STREAM};
use vflip_core::stochastic::Observable;
use vflip_core::{ReportConfig, SteerOptions, WaitingLaw};

use crate::CliError;

const DEFAULT_ENERGY: f64 = 0.5;
const ENERGY_REL_TOL: f64 = 1e-9;

/// Where the coupling matrix comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSource {
    /// JSON `{"n", "v"}` or headerless CSV, chosen by extension.
    File(PathBuf),
    HarmonicChain { n: usize },
    RandomSpd {
        n: usize,
        seed: u64,
        #[serde(default = "default_range")]
        range: (f64, f64),
    },
}

fn default_range() -> (f64, f64) {
    (0.5, 2.0)
}

/// A phase-space point named in the config.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSource {
    GStar,
    File(PathBuf),
    /// Draw from the microcanonical measure with this seed.
    Liouville { seed: u64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerConfig {
    pub eps: f64,
    /// Flip budget for two-point steering; `None` is four times the uniform bound plus slack.
    pub budget: Option<usize>,
    #[serde(flatten)]
    pub options: SteerOptions,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            eps: 0.05,
            budget: None,
            options: SteerOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub admissibility: f64,
    pub coeff_bound: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            admissibility: DEFAULT_TOL,
            coeff_bound: DEFAULT_COEFF_BOUND,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Extra sampling interval between flips; `None` records flips only.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub matrix: MatrixSource,
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default = "default_law")]
    pub law: WaitingLaw,
    #[serde(default)]
    pub t_end: f64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub observables: Option<Vec<String>>,
    #[serde(default)]
    pub initial: Option<StateSource>,
    #[serde(default)]
    pub target: Option<StateSource>,
    #[serde(default)]
    pub steer: SteerConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_law() -> WaitingLaw {
    WaitingLaw::Exponential { rate: 1.0 }
}

fn config_error(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{field}`: {message}"))
}

impl RunConfig {
    /// Parse and resolve relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MatrixSource::File(p) = &mut cfg.matrix {
            fix(p);
        }
        for s in [&mut cfg.initial, &mut cfg.target].into_iter().flatten() {
            if let StateSource::File(p) = s {
                fix(p);
            }
        }
        if let Some(p) = cfg.out.as_mut() {
            fix(p);
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path).map_err(|e| CliError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn check_files(&self) -> Result<(), CliError> {
        let exists = |field: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(config_error(field, format!("file {} does not exist", p.display())))
            }
        };
        if let MatrixSource::File(p) = &self.matrix {
            exists("matrix", p)?;
        }
        if let Some(StateSource::File(p)) = &self.initial {
            exists("initial", p)?;
        }
        if let Some(StateSource::File(p)) = &self.target {
            exists("target", p)?;
        }
        Ok(())
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>, CliError> {
        match &self.matrix {
            MatrixSource::File(p) => read_matrix(p).map_err(|e| config_error("matrix", e)),
            MatrixSource::HarmonicChain { n } => {
                if *n == 0 {
                    return Err(config_error("matrix.harmonic_chain.n", "must be positive"));
                }
                Ok(harmonic_chain(*n))
            }
            MatrixSource::RandomSpd { n, seed, range } => {
                if *n == 0 {
                    return Err(config_error("matrix.random_spd.n", "must be positive"));
                }
                if !(range.0 > 0.0 && range.1 >= range.0 && range.1.is_finite()) {
                    return Err(config_error("matrix.random_spd.range", "expected 0 < lo <= hi < inf"));
                }
                Ok(random_spd(*n, *seed, *range))
            }
        }
    }

    /// The system, with the energy taken from the initial state file when the
    /// config leaves it open.
    pub fn spec(&self) -> Result<SystemSpec, CliError> {
        let v = self.matrix()?;
        let h = match (self.energy, &self.initial) {
            (Some(h), _) => h,
            (None, Some(StateSource::File(p))) => {
                let s = read_state(p).map_err(|e| config_error("initial", e))?;
                if s.n() != v.nrows() {
                    return Err(config_error("initial", "dimension does not match the matrix"));
                }
                let shell = SystemSpec::decompose(v.clone(), DEFAULT_ENERGY)
                    .map_err(|e| config_error("matrix", e))?;
                energy(&shell, &s)
            }
            _ => DEFAULT_ENERGY,
        };
        SystemSpec::decompose(v, h).map_err(|e| {
            let field = if matches!(e, vflip_core::model::ModelError::InvalidEnergy(_)) {
                "energy"
            } else {
                "matrix"
            };
            config_error(field, e)
        })
    }

    pub fn state(&self, spec: &SystemSpec, which: &str, src: &StateSource) -> Result<State, CliError> {
        let s = match src {
            StateSource::GStar => g_star(spec),
            StateSource::Liouville { seed } => {
                sample_liouville(spec, &mut stream_rng(*seed, LIOUVILLE_STREAM))
            }
            StateSource::File(p) => read_state(p).map_err(|e| config_error(which, e))?,
        };
        s.check_dim(spec).map_err(|e| config_error(which, e))?;
        let h = energy(spec, &s);
        if (h - spec.energy()).abs() > ENERGY_REL_TOL * spec.energy() {
            return Err(config_error(
                which,
                format!("state energy {h} differs from the configured energy {}", spec.energy()),
            ));
        }
        Ok(s)
    }

    pub fn initial_state(&self, spec: &SystemSpec) -> Result<State, CliError> {
        let src = self.initial.clone().unwrap_or(StateSource::GStar);
        self.state(spec, "initial", &src)
    }

    pub fn observables(&self, n: usize) -> Result<Vec<Observable>, CliError> {
        let names = self.observables.clone().unwrap_or_else(|| default_observables(n));
        if names.is_empty() {
            return Err(config_error("observables", "must not be empty"));
        }
        names
            .iter()
            .map(|s| Observable::parse(s, n).map_err(|e| config_error("observables", e)))
            .collect()
    }

    pub fn require_seeds(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            Err(config_error("seeds", "must contain at least one seed"))
        } else {
            Ok(())
        }
    }

    pub fn check_run(&self) -> Result<(), CliError> {
        self.law.validate().map_err(|e| config_error("law", e))?;
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(config_error("t_end", "must be non-negative and finite"));
        }
        if let Some(dt) = self.trajectory.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(config_error("trajectory.dt", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// `r1^2 .. rN^2, p1^2, H`.
pub fn default_observables(n: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=n).map(|k| format!("r{k}^2")).collect();
    out.push("p1^2".into());
    out.push("H".into());
    out
}
