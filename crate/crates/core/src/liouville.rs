//! The microcanonical measure on the energy surface and comparisons against
//! the dynamics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{flip, propagate, ModalState, State};
use crate::io::{results_to_csv, ResultRow};
use crate::model::SystemSpec;
use crate::rng::{stream_rng, CHAIN_STREAM, LIOUVILLE_STREAM, REFERENCE_STREAM};
use crate::stochastic::{
    default_substep, embedded_chain_thinned, multi_trajectory, Observable, StochasticError,
    WaitingLaw,
};

#[derive(Debug, Error, PartialEq)]
pub enum LiouvilleError {
    #[error("empty sample")]
    EmptySample,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
}

/// Uniform draw from the energy surface.
///
/// A uniform point `z` on the sphere of radius `sqrt(2h)` in `R^{2N}` is mapped
/// to `p~_k = z_{2k-1}`, `q~_k = z_{2k} / omega_k`.
pub fn sample_liouville<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> State {
    let n = spec.n();
    let radius = (2.0 * spec.energy()).sqrt();
    let z = loop {
        let z: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            break z.into_iter().map(|x| x * radius / norm).collect::<Vec<f64>>();
        }
    };
    let m = ModalState {
        pt: (0..n).map(|k| z[2 * k]).collect(),
        qt: (0..n).map(|k| z[2 * k + 1] / spec.omega()[k]).collect(),
    };
    m.to_state(spec)
}

/// An expectation under the microcanonical measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    /// Zero for closed forms.
    pub stderr: f64,
}

/// Closed form for observables quadratic in the state; Monte Carlo over `n`
/// samples otherwise.
pub fn reference_expectation<R: Rng + ?Sized>(
    spec: &SystemSpec,
    f: &Observable,
    n: usize,
    rng: &mut R,
) -> Result<Reference, LiouvilleError> {
    f.check(spec.n())?;
    if let Some(form) = f.modal_form(spec) {
        // Under the measure, E p~_k p~_l = (h/N) delta_kl and
        // E q~_k q~_l = (h/N) delta_kl / omega_k^2, with no cross terms.
        let dof = spec.n();
        let scale = spec.energy() / dof as f64;
        let trace: f64 = (0..dof)
            .map(|k| form[(k, k)] / spec.omega_sq()[k] + form[(dof + k, dof + k)])
            .sum();
        return Ok(Reference {
            value: scale * trace,
            stderr: 0.0,
        });
    }
    if n == 0 {
        return Err(LiouvilleError::EmptySample);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let x = f.evaluate(spec, &sample_liouville(spec, rng));
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Ok(Reference {
        value: mean,
        stderr: (var / n as f64).sqrt(),
    })
}

/// Largest gap between the empirical distribution functions of `a` and `b`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, LiouvilleError> {
    if a.is_empty() || b.is_empty() {
        return Err(LiouvilleError::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d.min(1.0))
}

/// Names of the flat coordinates `(q_1..q_N, p_1..p_N)`.
pub fn coordinate_names(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("q{i}"))
        .chain((1..=n).map(|i| format!("p{i}")))
        .collect()
}

fn column(samples: &[Vec<f64>], c: usize) -> Vec<f64> {
    samples.iter().map(|s| s[c]).collect()
}

/// Per-coordinate KS distances between two sets of flat states.
pub fn coordinate_ks(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>, LiouvilleError> {
    let dim = a.first().ok_or(LiouvilleError::EmptySample)?.len();
    (0..dim)
        .map(|c| ks_two_sample(&column(a, c), &column(b, c)))
        .collect()
}

fn liouville_samples<R: Rng + ?Sized>(spec: &SystemSpec, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| sample_liouville(spec, rng).to_vec()).collect()
}

/// Largest per-coordinate KS distance between `flip(propagate(x, t_probe))`
/// for `n` samples `x` and `n` fresh samples.
pub fn invariance_check<R: Rng + ?Sized>(
    spec: &SystemSpec,
    n: usize,
    t_probe: f64,
    rng: &mut R,
) -> Result<f64, LiouvilleError> {
    if n == 0 {
        return Err(LiouvilleError::EmptySample);
    }
    let pushed: Vec<Vec<f64>> = (0..n)
        .map(|_| flip(&propagate(spec, &sample_liouville(spec, rng), t_probe)).to_vec())
        .collect();
    let fresh = liouville_samples(spec, n, rng);
    Ok(coordinate_ks(&pushed, &fresh)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Settings for [`ergodicity_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Monte Carlo sample size for references without a closed form.
    pub n_ref: usize,
    /// Pass threshold on the seed-averaged `|M_f - pi(f)|`.
    pub estimate_threshold: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Retained chain samples; zero skips the distribution comparison.
    pub chain_samples: usize,
    pub ks_threshold: f64,
    /// Quadrature step; `None` uses the default.
    pub substep: Option<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            n_ref: 100_000,
            estimate_threshold: 0.02,
            burn_in: 1_000,
            thin: 10,
            chain_samples: 100_000,
            ks_threshold: 0.05,
            substep: None,
        }
    }
}

/// Time averages against microcanonical references, plus a distribution check
/// of the embedded chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub observables: Vec<String>,
    pub seeds: Vec<u64>,
    pub t_end: f64,
    /// `estimates[f][s]` is the time average of observable `f` for seed `s`.
    pub estimates: Vec<Vec<f64>>,
    pub references: Vec<f64>,
    pub reference_stderr: Vec<f64>,
    /// Seed-averaged `|M_f - pi(f)|`.
    pub mean_abs_error: Vec<f64>,
    pub estimate_pass: Vec<bool>,
    pub ks_coordinates: Vec<String>,
    pub ks_stats: Vec<f64>,
    pub ks_pass: bool,
    pub pass: bool,
}

impl ErgodicReport {
    /// One row per seed and observable.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for (f, name) in self.observables.iter().enumerate() {
            for (s, seed) in self.seeds.iter().enumerate() {
                let estimate = self.estimates[f][s];
                let reference = self.references[f];
                out.push(ResultRow {
                    seed: *seed,
                    t: self.t_end,
                    observable: name.clone(),
                    estimate,
                    reference,
                    abs_error: (estimate - reference).abs(),
                });
            }
        }
        out
    }

    /// Rows `seed,T,observable,estimate,reference,abs_error`.
    pub fn to_csv(&self) -> String {
        results_to_csv(&self.rows())
    }

    /// Pass flag for one observable by name.
    pub fn passes(&self, name: &str) -> Option<bool> {
        self.observables
            .iter()
            .position(|o| o == name)
            .map(|i| self.estimate_pass[i])
    }
}

/// Run every seed from `psi0`, compare time averages with references, and
/// compare the thinned embedded chain with microcanonical samples.
///
/// References and comparison samples use streams of the first seed.
pub fn ergodicity_report(
    spec: &SystemSpec,
    psi0: &State,
    t_end: f64,
    law: &WaitingLaw,
    seeds: &[u64],
    f_set: &[Observable],
    config: &ReportConfig,
) -> Result<ErgodicReport, LiouvilleError> {
    let first = *seeds.first().ok_or(LiouvilleError::NoSeeds)?;
    let substep = config.substep.unwrap_or_else(|| default_substep(spec));
    let runs = multi_trajectory(spec, psi0, t_end, law, seeds, f_set, substep)?;

    let mut ref_rng = stream_rng(first, REFERENCE_STREAM);
    let refs = f_set
        .iter()
        .map(|f| reference_expectation(spec, f, config.n_ref, &mut ref_rng))
        .collect::<Result<Vec<_>, _>>()?;

    let estimates: Vec<Vec<f64>> = (0..f_set.len())
        .map(|f| runs.iter().map(|r| r.average.means[f]).collect())
        .collect();
    let mean_abs_error: Vec<f64> = estimates
        .iter()
        .zip(&refs)
        .map(|(e, r)| e.iter().map(|x| (x - r.value).abs()).sum::<f64>() / e.len() as f64)
        .collect();
    let estimate_pass: Vec<bool> = mean_abs_error
        .iter()
        .zip(&refs)
        .map(|(err, r)| *err <= config.estimate_threshold + 3.0 * r.stderr)
        .collect();

    let (ks_coordinates, ks_stats) = if config.chain_samples > 0 {
        let chain = embedded_chain_thinned(
            spec,
            psi0,
            config.burn_in,
            config.thin,
            config.chain_samples,
            law,
            &mut stream_rng(first, CHAIN_STREAM),
        )?;
        let pi = liouville_samples(
            spec,
            config.chain_samples,
            &mut stream_rng(first, LIOUVILLE_STREAM),
        );
        (coordinate_names(spec.n()), coordinate_ks(&chain, &pi)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let ks_pass = ks_stats.iter().all(|d| *d <= config.ks_threshold);
    let pass = ks_pass && estimate_pass.iter().all(|p| *p);
    Ok(ErgodicReport {
        observables: f_set.iter().map(Observable::name).collect(),
        seeds: seeds.to_vec(),
        t_end,
        estimates,
        references: refs.iter().map(|r| r.value).collect(),
        reference_stderr: refs.iter().map(|r| r.stderr).collect(),
        mean_abs_error,
        estimate_pass,
        ks_coordinates,
        ks_stats,
        ks_pass,
        pass,
    })
}
