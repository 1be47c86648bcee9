//! One function per subcommand. Each returns the files it produced.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vflip_core::dynamics::{propagate, State};
use vflip_core::io::{events_to_csv, results_to_csv, trajectory_header, trajectory_row, write_text, RESULTS_HEADER};
use vflip_core::liouville::{ergodicity_report, reference_expectation};
use vflip_core::model::check_admissible;
use vflip_core::rng::{stream_rng, DYNAMICS_STREAM, REFERENCE_STREAM};
use vflip_core::steering::{flip_bound, steer_to_gstar, steer_to_target, SteerError};
use vflip_core::stochastic::{default_substep, multi_trajectory, simulate_pdmp};
use vflip_core::{AdmissibilityReport, ResultRow, SystemSpec};

use crate::config::RunConfig;
use crate::CliError;

/// Extra flips allowed above the uniform bound.
const FLIP_SLACK: usize = 3;

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn write(out: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = out.join(name);
    write_text(&path, text).map_err(|e| CliError::Numerical(e.to_string()))?;
    files.push(path);
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct SpectrumFile<'a> {
    n: usize,
    energy: f64,
    omega_sq: &'a [f64],
    omega: &'a [f64],
    beta: &'a [f64],
    flip_bound: Option<usize>,
    admissibility: AdmissibilityReport,
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let report = check_admissible(&spec, cfg.tolerances.admissibility, cfg.tolerances.coeff_bound);
    let file = SpectrumFile {
        n: spec.n(),
        energy: spec.energy(),
        omega_sq: spec.omega_sq(),
        omega: spec.omega(),
        beta: spec.beta(),
        flip_bound: report.in_v_plus.then(|| flip_bound(&spec)),
        admissibility: report.clone(),
    };
    let mut files = Vec::new();
    write(out, "spectrum.json", &json(&file), &mut files)?;
    let relation = report
        .relation
        .as_ref()
        .map(|r| format!(" relation {r:?}"))
        .unwrap_or_default();
    Ok(Outcome {
        files,
        summary: format!(
            "N = {}, in V+ = {}, independence {:?}{relation}, mixing dimension {}",
            spec.n(),
            report.in_v_plus,
            report.independence,
            report.mixing_dim
        ),
    })
}

/// Rows at each flip plus every multiple of `dt`, in time order.
fn trajectory_csv(spec: &SystemSpec, psi0: &State, t_end: f64, dt: Option<f64>, times: &[f64], states: &[State]) -> String {
    let mut out = trajectory_header(spec.n());
    if t_end == 0.0 {
        return out;
    }
    let mut grid = Vec::new();
    if let Some(dt) = dt {
        let mut k = 0u64;
        loop {
            let t = k as f64 * dt;
            if t > t_end {
                break;
            }
            grid.push(t);
            k += 1;
        }
    } else {
        grid.push(0.0);
    }
    // Merge grid samples with flips; a flip at a grid time shows the flipped state.
    let (mut i, mut j) = (0, 0);
    let mut anchor: (f64, &State) = (0.0, psi0);
    while i < grid.len() || j < times.len() {
        let take_event = j < times.len() && (i == grid.len() || times[j] <= grid[i]);
        if take_event {
            anchor = (times[j], &states[j]);
            out.push_str(&trajectory_row(times[j], &states[j]));
            if i < grid.len() && grid[i] == times[j] {
                i += 1;
            }
            j += 1;
        } else {
            let t = grid[i];
            let row = if t == anchor.0 {
                trajectory_row(t, anchor.1)
            } else {
                trajectory_row(t, &propagate(spec, anchor.1, t - anchor.0))
            };
            out.push_str(&row);
            i += 1;
        }
    }
    out
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    cfg.require_seeds()?;
    cfg.check_run()?;
    let spec = cfg.spec()?;
    let fs = cfg.observables(spec.n())?;
    let psi0 = cfg.initial_state(&spec)?;
    let mut files = Vec::new();

    if cfg.t_end == 0.0 {
        write(out, "time_averages.csv", RESULTS_HEADER, &mut files)?;
        write(out, "trajectory.csv", &trajectory_header(spec.n()), &mut files)?;
        write(out, "events.csv", "t_m,tau_m\n", &mut files)?;
        return Ok(Outcome {
            files,
            summary: "t_end = 0, nothing simulated".into(),
        });
    }

    let substep = cfg.report.substep.unwrap_or_else(|| default_substep(&spec));
    let runs = multi_trajectory(&spec, &psi0, cfg.t_end, &cfg.law, &cfg.seeds, &fs, substep)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut ref_rng = stream_rng(cfg.seeds[0], REFERENCE_STREAM);
    let refs = fs
        .iter()
        .map(|f| reference_expectation(&spec, f, cfg.report.n_ref, &mut ref_rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut rows = Vec::new();
    for run in &runs {
        for ((f, mean), r) in fs.iter().zip(&run.average.means).zip(&refs) {
            rows.push(ResultRow {
                seed: run.seed,
                t: cfg.t_end,
                observable: f.name(),
                estimate: *mean,
                reference: r.value,
                abs_error: (mean - r.value).abs(),
            });
        }
    }
    write(out, "time_averages.csv", &results_to_csv(&rows), &mut files)?;

    let mut rng = stream_rng(cfg.seeds[0], DYNAMICS_STREAM);
    let log = simulate_pdmp(&spec, &psi0, cfg.t_end, &cfg.law, &mut rng, true, |_, _| {})
        .map_err(|e| CliError::Config(e.to_string()))?;
    let states = log.states_at_events.as_deref().unwrap_or(&[]);
    let traj = trajectory_csv(&spec, &psi0, cfg.t_end, cfg.trajectory.dt, &log.times, states);
    write(out, "trajectory.csv", &traj, &mut files)?;
    write(out, "events.csv", &events_to_csv(&log), &mut files)?;

    Ok(Outcome {
        files,
        summary: format!(
            "{} seeds, T = {}, {} flips on seed {}",
            cfg.seeds.len(),
            cfg.t_end,
            log.len(),
            cfg.seeds[0]
        ),
    })
}

fn steer_error(e: SteerError) -> CliError {
    match e {
        SteerError::InvalidParameter(_) | SteerError::DifferentEnergy { .. } | SteerError::InvalidSteps { .. } => {
            CliError::Config(e.to_string())
        }
        other => CliError::Numerical(other.to_string()),
    }
}

pub fn steer(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let report = check_admissible(&spec, cfg.tolerances.admissibility, cfg.tolerances.coeff_bound);
    if !report.in_v_plus {
        return Err(CliError::Config(format!(
            "`matrix`: steering needs every mode coupled to the flipped particle (min |beta| = {:e})",
            report.min_abs_beta
        )));
    }
    let eps = cfg.steer.eps;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(CliError::Config("`steer.eps`: must be positive and finite".into()));
    }
    let from = cfg.initial_state(&spec)?;
    let result = match &cfg.target {
        None => steer_to_gstar(&spec, &from, eps, &cfg.steer.options),
        Some(src) => {
            let to = cfg.state(&spec, "target", src)?;
            let budget = cfg
                .steer
                .budget
                .unwrap_or(4 * (flip_bound(&spec) + FLIP_SLACK));
            steer_to_target(&spec, &from, &to, eps, budget, &cfg.steer.options)
        }
    }
    .map_err(steer_error)?;
    let mut files = Vec::new();
    write(out, "steer_result.json", &json(&result), &mut files)?;
    Ok(Outcome {
        files,
        summary: format!(
            "{} flips, final error {:e} (energy norm {:e})",
            result.flips_used, result.final_error, result.final_error_h
        ),
    })
}

pub fn report(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    cfg.require_seeds()?;
    cfg.check_run()?;
    let spec = cfg.spec()?;
    let fs = cfg.observables(spec.n())?;
    let psi0 = cfg.initial_state(&spec)?;
    let rep = ergodicity_report(&spec, &psi0, cfg.t_end, &cfg.law, &cfg.seeds, &fs, &cfg.report)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut files = Vec::new();
    write(out, "report.json", &json(&rep), &mut files)?;
    write(out, "report.csv", &rep.to_csv(), &mut files)?;
    let mut summary = String::new();
    for ((name, err), ok) in rep.observables.iter().zip(&rep.mean_abs_error).zip(&rep.estimate_pass) {
        summary.push_str(&format!("{name}: mean |M - pi| = {err:.4} {}\n", if *ok { "pass" } else { "fail" }));
    }
    let ks_max = rep.ks_stats.iter().cloned().fold(0.0, f64::max);
    summary.push_str(&format!("max KS = {ks_max:.4} {}\n", if rep.ks_pass { "pass" } else { "fail" }));
    summary.push_str(&format!("overall {}", if rep.pass { "pass" } else { "fail" }));
    Ok(Outcome { files, summary })
}
