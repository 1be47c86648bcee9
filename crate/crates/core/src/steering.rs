//! Flip schedules that move states around the energy surface.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    action_vars, energy, flip, g_star, h_distance, jcompose, jstep, propagate, ModalState, State,
    TorusVector,
};
use crate::model::{mixing_dimension, SystemSpec, DEFAULT_TOL};
use crate::search::{first_below, minimize, Minimum};
use crate::torus::{self, TorusError, BETA_TOL};

/// Default search horizon in units of the slowest period.
pub const HORIZON_PERIODS: f64 = 200.0;
/// Default number of coarse grid points for a flip-time search.
pub const DEFAULT_GRID: usize = 20_000;
/// Fraction of the predicted decrement a flip may miss before steering stalls.
pub const STALL_FRACTION: f64 = 0.5;
/// Relative singular-value cutoff for Jacobian ranks.
pub const RANK_REL_TOL: f64 = 1e-7;
/// Relative finite-difference step for Jacobian columns.
pub const FD_STEP: f64 = 1e-6;
/// Default horizon for recurrence searches, in slowest periods.
pub const RECURRENCE_PERIODS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SteerError {
    #[error("no time within the horizon {horizon} brings the distance below {tol} (best {achieved} at t = {t})")]
    HorizonTooShort {
        horizon: f64,
        tol: f64,
        achieved: f64,
        t: f64,
    },
    #[error("flip {flip} reduced Delta by {realized}, below the floor {floor}")]
    StalledProgress {
        flip: usize,
        realized: f64,
        floor: f64,
    },
    #[error("schedule needs {needed} flips, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("states have different energies ({a} vs {b})")]
    DifferentEnergy { a: f64, b: f64 },
    #[error("number of flips {k} outside 1..={max}")]
    InvalidSteps { k: usize, max: usize },
    #[error("exact steering needs one degree of freedom, got {0}")]
    NotOneDimensional(usize),
    #[error("invalid search parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Torus(#[from] TorusError),
}

/// A flip schedule and where it lands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerResult {
    /// Gaps `tau_1..tau_m`; flip `i` happens `tau_i` after flip `i - 1`.
    pub taus: Vec<f64>,
    /// Free flow after the last flip.
    pub terminal_flow: f64,
    pub final_state: State,
    /// Euclidean distance from the target.
    pub final_error: f64,
    /// Energy-norm distance from the target.
    pub final_error_h: f64,
    pub flips_used: usize,
    /// `Delta` after each flip.
    pub per_step_delta: Vec<f64>,
}

impl SteerResult {
    /// Apply the schedule and the terminal flow to `psi0`.
    pub fn replay(&self, spec: &SystemSpec, psi0: &State) -> State {
        propagate(spec, &jcompose(spec, psi0, &self.taus), self.terminal_flow)
    }
}

/// Search settings for [`steer_to_gstar`] and [`steer_to_target`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerOptions {
    /// Flip-time search horizon; `None` means `HORIZON_PERIODS` slow periods.
    pub horizon: Option<f64>,
    pub grid: usize,
    /// Recurrence search horizon; `None` means `RECURRENCE_PERIODS` slow periods.
    pub recurrence_horizon: Option<f64>,
    pub stall: f64,
    /// Hard cap on flips per steering run; `None` means ten times the uniform bound.
    pub max_flips: Option<usize>,
}

impl Default for SteerOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            grid: DEFAULT_GRID,
            recurrence_horizon: None,
            stall: STALL_FRACTION,
            max_flips: None,
        }
    }
}

impl SteerOptions {
    fn slow_period(spec: &SystemSpec) -> f64 {
        TAU / spec.omega()[0]
    }

    pub fn horizon_for(&self, spec: &SystemSpec) -> f64 {
        self.horizon
            .unwrap_or_else(|| HORIZON_PERIODS * Self::slow_period(spec))
    }

    pub fn recurrence_horizon_for(&self, spec: &SystemSpec) -> f64 {
        self.recurrence_horizon
            .unwrap_or_else(|| RECURRENCE_PERIODS * Self::slow_period(spec))
    }

    fn validate(&self, spec: &SystemSpec) -> Result<(), SteerError> {
        let h = self.horizon_for(spec);
        let rh = self.recurrence_horizon_for(spec);
        if !(h.is_finite() && h > 0.0) {
            return Err(SteerError::InvalidParameter(format!("horizon {h}")));
        }
        if !(rh.is_finite() && rh > 0.0) {
            return Err(SteerError::InvalidParameter(format!("recurrence horizon {rh}")));
        }
        if self.grid < 2 {
            return Err(SteerError::InvalidParameter(format!("grid {}", self.grid)));
        }
        if !(self.stall > 0.0 && self.stall < 1.0) {
            return Err(SteerError::InvalidParameter(format!("stall {}", self.stall)));
        }
        Ok(())
    }
}

/// `ceil(max_k beta_k^{-2})`, the uniform bound on `Delta`.
pub fn flip_bound(spec: &SystemSpec) -> usize {
    let m = spec.min_abs_beta();
    (1.0 / (m * m)).ceil() as usize
}

fn refine_tol(horizon: f64) -> f64 {
    64.0 * f64::EPSILON * horizon.max(1.0)
}

/// `J(tau_k) ... J(tau_1) psi` for arbitrary real gaps.
fn compose_any(spec: &SystemSpec, psi: &State, taus: &[f64]) -> State {
    let mut m = ModalState::from_state(spec, psi);
    for &t in taus {
        m.rotate(spec, t);
        m.flip(spec);
    }
    m.to_state(spec)
}

/// Columns `d J(taus) psi / d tau_i` by central differences, as a `2N x k`
/// matrix with `q` stacked over `p`.
pub fn jacobian_columns(spec: &SystemSpec, psi: &State, taus: &[f64]) -> DMatrix<f64> {
    let n = spec.n();
    let k = taus.len();
    let mut out = DMatrix::zeros(2 * n, k);
    let mut work = taus.to_vec();
    for i in 0..k {
        let d = FD_STEP * taus[i].abs().max(1.0);
        work[i] = taus[i] + d;
        let plus = compose_any(spec, psi, &work).to_vec();
        work[i] = taus[i] - d;
        let minus = compose_any(spec, psi, &work).to_vec();
        work[i] = taus[i];
        for r in 0..2 * n {
            out[(r, i)] = (plus[r] - minus[r]) / (2.0 * d);
        }
    }
    out
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Outcome of [`verify_local_covering`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringResult {
    pub k: usize,
    pub achieved_rank: usize,
    /// Gaps attaining `achieved_rank`.
    pub witness_taus: Vec<f64>,
    pub trials_used: usize,
    /// Set when the flip does not reach every mode.
    pub admissibility_warning: bool,
}

impl CoveringResult {
    pub fn success(&self) -> bool {
        self.achieved_rank == self.k
    }
}

/// Largest Jacobian rank of `J_k` at `psi` over `trials` random gap vectors in
/// `(0, t_max]^k`. Stops at the first full-rank witness.
pub fn verify_local_covering<R: Rng + ?Sized>(
    spec: &SystemSpec,
    psi: &State,
    k: usize,
    trials: usize,
    t_max: f64,
    rng: &mut R,
) -> Result<CoveringResult, SteerError> {
    let max = 2 * spec.n() - 1;
    if k == 0 || k > max {
        return Err(SteerError::InvalidSteps { k, max });
    }
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(SteerError::InvalidParameter(format!("t_max {t_max}")));
    }
    let admissibility_warning = !spec.in_v_plus(DEFAULT_TOL)
        || mixing_dimension(spec, DEFAULT_TOL).krylov_rank < 2 * spec.n();
    let mut best = CoveringResult {
        k,
        achieved_rank: 0,
        witness_taus: Vec::new(),
        trials_used: 0,
        admissibility_warning,
    };
    for trial in 1..=trials {
        let taus: Vec<f64> = (0..k)
            .map(|_| {
                let u: f64 = rng.random();
                (1.0 - u) * t_max
            })
            .collect();
        let rank = numerical_rank(&jacobian_columns(spec, psi, &taus), RANK_REL_TOL);
        best.trials_used = trial;
        if rank > best.achieved_rank || best.witness_taus.is_empty() {
            best.achieved_rank = rank;
            best.witness_taus = taus;
        }
        if rank == k {
            break;
        }
    }
    Ok(best)
}

/// Result of [`find_flip_time`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipTime {
    pub t: f64,
    pub achieved_distance: f64,
}

/// `|p~(t) - target|` along the free flow from `m`.
fn momentum_gap(spec: &SystemSpec, m: &ModalState, target: &[f64], t: f64) -> f64 {
    let mut s = 0.0;
    for (k, (w, goal)) in spec.omega().iter().zip(target).enumerate() {
        let (sn, cs) = (w * t).sin_cos();
        let p = -w * sn * m.qt[k] + cs * m.pt[k];
        s += (p - goal).powi(2);
    }
    s.sqrt()
}

fn best_momentum_time(
    spec: &SystemSpec,
    psi: &State,
    target: &[f64],
    horizon: f64,
    grid: usize,
) -> Minimum {
    let m = ModalState::from_state(spec, psi);
    let f = |t: f64| momentum_gap(spec, &m, target, t);
    minimize(&f, 0.0, horizon, grid, refine_tol(horizon))
}

/// Time in `[0, horizon]` at which the modal momenta of the free flow are
/// closest to `target_p_modal`.
pub fn find_flip_time(
    spec: &SystemSpec,
    psi: &State,
    target_p_modal: &[f64],
    horizon: f64,
    grid: usize,
    tol: f64,
) -> Result<FlipTime, SteerError> {
    if target_p_modal.len() != spec.n() {
        return Err(SteerError::InvalidParameter(format!(
            "target has {} momenta, expected {}",
            target_p_modal.len(),
            spec.n()
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) || grid < 2 {
        return Err(SteerError::InvalidParameter(format!(
            "horizon {horizon}, grid {grid}"
        )));
    }
    let best = best_momentum_time(spec, psi, target_p_modal, horizon, grid);
    if best.value > tol {
        return Err(SteerError::HorizonTooShort {
            horizon,
            tol,
            achieved: best.value,
            t: best.t,
        });
    }
    Ok(FlipTime {
        t: best.t,
        achieved_distance: best.value,
    })
}

/// Which norm a state-distance search uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Norm {
    Euclidean,
    Energy,
}

/// Distance between `e^{tA}` applied to `m` and the fixed modal state `target`.
fn state_gap(spec: &SystemSpec, m: &ModalState, target: &ModalState, norm: Norm, t: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..spec.n() {
        let w = spec.omega()[k];
        let (sn, cs) = (w * t).sin_cos();
        let dq = cs * m.qt[k] + sn / w * m.pt[k] - target.qt[k];
        let dp = -w * sn * m.qt[k] + cs * m.pt[k] - target.pt[k];
        s += match norm {
            Norm::Euclidean => dq * dq + dp * dp,
            Norm::Energy => 0.5 * (w * w * dq * dq + dp * dp),
        };
    }
    s.sqrt()
}

/// Speed of the free flow from `m` in the chosen norm.
fn flow_speed(spec: &SystemSpec, m: &ModalState, norm: Norm) -> f64 {
    let r2 = m.actions_sq(spec);
    let wmax = spec.omega().iter().cloned().fold(0.0, f64::max);
    let total: f64 = r2.iter().sum();
    match norm {
        Norm::Euclidean => wmax.max(1.0) * total.sqrt(),
        Norm::Energy => wmax * (0.5 * total).sqrt(),
    }
}

fn recurrence_step(spec: &SystemSpec, tol: f64, speed: f64) -> f64 {
    let fast = TAU / spec.omega().iter().cloned().fold(0.0, f64::max);
    let step = if speed > 0.0 { 0.5 * tol / speed } else { fast };
    step.min(fast / 8.0)
}

/// Earliest forward time bringing `psi` within `tol` of `target` in `norm`.
fn first_recurrence(
    spec: &SystemSpec,
    psi: &State,
    target: &State,
    norm: Norm,
    tol: f64,
    t_min: f64,
    horizon: f64,
) -> Result<Minimum, SteerError> {
    let m = ModalState::from_state(spec, psi);
    let goal = ModalState::from_state(spec, target);
    let f = |t: f64| state_gap(spec, &m, &goal, norm, t);
    let step = recurrence_step(spec, tol, flow_speed(spec, &m, norm));
    let window = (2000.0 * step).max(TAU / spec.omega()[0]);
    first_below(&f, t_min, horizon, window, step, tol).map_err(|best| {
        SteerError::HorizonTooShort {
            horizon,
            tol,
            achieved: best.value,
            t: best.t,
        }
    })
}

/// Forward time `s` in `[0, horizon]` minimising `|e^{sA} psi - target|_H`.
pub fn recurrence_time(
    spec: &SystemSpec,
    psi: &State,
    target: &State,
    eps: f64,
    horizon: f64,
    grid: usize,
) -> Result<f64, SteerError> {
    if !(horizon.is_finite() && horizon > 0.0) || grid < 2 {
        return Err(SteerError::InvalidParameter(format!(
            "horizon {horizon}, grid {grid}"
        )));
    }
    let m = ModalState::from_state(spec, psi);
    let goal = ModalState::from_state(spec, target);
    let f = |t: f64| state_gap(spec, &m, &goal, Norm::Energy, t);
    let best = minimize(&f, 0.0, horizon, grid, refine_tol(horizon));
    if best.value > eps {
        return Err(SteerError::HorizonTooShort {
            horizon,
            tol: eps,
            achieved: best.value,
            t: best.t,
        });
    }
    Ok(best.t)
}

/// `Delta` of the torus reached by flipping `m` after a free flow of `t`.
fn delta_after_flip(spec: &SystemSpec, m: &ModalState, r2: &[f64], t: f64) -> f64 {
    let beta = spec.beta();
    let n = spec.n();
    let mut p = vec![0.0; n];
    let mut p1 = 0.0;
    for k in 0..n {
        let w = spec.omega()[k];
        let (sn, cs) = (w * t).sin_cos();
        p[k] = -w * sn * m.qt[k] + cs * m.pt[k];
        p1 += beta[k] * p[k];
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..n {
        let b = beta[k];
        let psi2 = r2[k] + 4.0 * p1 * p1 * b * b - 4.0 * p1 * b * p[k];
        let g2 = psi2 / (b * b);
        lo = lo.min(g2);
        hi = hi.max(g2);
    }
    hi - lo
}

fn unit_actions(spec: &SystemSpec, psi: &State) -> TorusVector {
    action_vars(spec, psi).scaled(1.0 / (2.0 * spec.energy()).sqrt())
}

fn require_same_energy(spec: &SystemSpec, psi: &State) -> Result<(), SteerError> {
    let h = spec.energy();
    let e = energy(spec, psi);
    if (e - h).abs() > 1e-9 * h {
        return Err(SteerError::DifferentEnergy { a: e, b: h });
    }
    Ok(())
}

/// Tolerance on `Delta` at which the contraction loop hands over to the final
/// recurrence search.
fn delta_tolerance(spec: &SystemSpec, eps: f64) -> f64 {
    let wmin = spec.omega()[0];
    let scale = (2.0 * spec.energy()).sqrt();
    0.25 * eps * wmin.min(1.0) / scale
}

/// Contraction phase: flips until `Delta <= delta_tol`.
fn contract(
    spec: &SystemSpec,
    psi0: &State,
    delta_tol: f64,
    opts: &SteerOptions,
) -> Result<(State, Vec<f64>, Vec<f64>), SteerError> {
    let horizon = opts.horizon_for(spec);
    let scale = (2.0 * spec.energy()).sqrt();
    let cap = opts.max_flips.unwrap_or(10 * (flip_bound(spec) + 3));
    let mut psi = psi0.clone();
    let mut taus = Vec::new();
    let mut deltas = Vec::new();
    loop {
        let r = unit_actions(spec, &psi);
        let met = torus::metrics(spec, &r)?;
        if met.delta <= delta_tol {
            return Ok((psi, taus, deltas));
        }
        if taus.len() >= cap {
            return Err(SteerError::BudgetExceeded {
                needed: taus.len() + 1,
                budget: cap,
            });
        }
        let r_unit = r.scaled(1.0 / r.norm_sq().sqrt());
        let target: Vec<f64> = torus::optimal_flip_momentum(spec, &r_unit)?
            .into_iter()
            .map(|p| p * scale)
            .collect();
        let predicted = met.c_val * met.delta;
        let floor = opts.stall * predicted;
        let m = ModalState::from_state(spec, &psi);
        let r2: Vec<f64> = r.as_slice().iter().map(|x| x * x).collect();
        let delta_at = |t: f64| delta_after_flip(spec, &m, &r2, t);

        let aimed = best_momentum_time(spec, &psi, &target, horizon, opts.grid);
        let mut chosen = (aimed.t, delta_at(aimed.t));
        if met.delta - chosen.1 < floor {
            let direct = minimize(&delta_at, 0.0, horizon, opts.grid, refine_tol(horizon));
            if direct.value < chosen.1 {
                chosen = (direct.t, direct.value);
            }
        }
        if met.delta - chosen.1 < floor {
            return Err(SteerError::StalledProgress {
                flip: taus.len() + 1,
                realized: met.delta - chosen.1,
                floor,
            });
        }
        psi = jstep(spec, &psi, chosen.0);
        taus.push(chosen.0);
        deltas.push(torus::delta(spec, &unit_actions(spec, &psi))?);
    }
}

fn finish(
    spec: &SystemSpec,
    psi0: &State,
    target: &State,
    taus: Vec<f64>,
    terminal_flow: f64,
    per_step_delta: Vec<f64>,
) -> SteerResult {
    let final_state = if taus.is_empty() && terminal_flow == 0.0 {
        psi0.clone()
    } else {
        propagate(spec, &jcompose(spec, psi0, &taus), terminal_flow)
    };
    SteerResult {
        flips_used: taus.len(),
        final_error: final_state.sub(target).norm2(),
        final_error_h: h_distance(spec, &final_state, target),
        final_state,
        taus,
        terminal_flow,
        per_step_delta,
    }
}

/// Steer `psi` to within `eps` (Euclidean) of `g_star`.
///
/// Flips aim at the explicit contracting momentum until the torus matches that
/// of `g_star`, then a free-flow recurrence aligns the phases.
pub fn steer_to_gstar(
    spec: &SystemSpec,
    psi: &State,
    eps: f64,
    opts: &SteerOptions,
) -> Result<SteerResult, SteerError> {
    opts.validate(spec)?;
    if spec.min_abs_beta() <= BETA_TOL {
        return Err(TorusError::NotInVPlus {
            min_abs_beta: spec.min_abs_beta(),
        }
        .into());
    }
    psi.check_dim(spec)
        .map_err(|e| SteerError::InvalidParameter(e.to_string()))?;
    require_same_energy(spec, psi)?;
    let g = g_star(spec);
    if psi.sub(&g).norm2() <= eps {
        return Ok(finish(spec, psi, &g, Vec::new(), 0.0, Vec::new()));
    }
    let (landed, taus, deltas) = contract(spec, psi, delta_tolerance(spec, eps), opts)?;
    let hit = first_recurrence(
        spec,
        &landed,
        &g,
        Norm::Euclidean,
        eps,
        0.0,
        opts.recurrence_horizon_for(spec),
    )?;
    Ok(finish(spec, psi, &g, taus, hit.t, deltas))
}

/// `sum_k |e^{i omega_k t} - 1|^2`, the squared operator distance of `e^{tA}`
/// from the identity in the energy norm.
fn return_defect(spec: &SystemSpec, t: f64) -> f64 {
    spec.omega()
        .iter()
        .map(|w| 2.0 * (1.0 - (w * t).cos()))
        .sum::<f64>()
        .sqrt()
}

/// Earliest `T >= t_min` with `|e^{TA} - I|_H <= theta`.
fn near_period(spec: &SystemSpec, theta: f64, t_min: f64, horizon: f64) -> Result<f64, SteerError> {
    let speed = spec.omega().iter().map(|w| w * w).sum::<f64>().sqrt();
    let step = recurrence_step(spec, theta, speed);
    let window = (2000.0 * step).max(TAU / spec.omega()[0]);
    let f = |t: f64| return_defect(spec, t);
    first_below(&f, t_min, horizon, window, step, theta)
        .map(|m| m.t)
        .map_err(|best| SteerError::HorizonTooShort {
            horizon,
            tol: theta,
            achieved: best.value,
            t: best.t,
        })
}

/// Steer `psi_from` to within `eps` (energy norm) of `psi_to` with at most
/// `budget` flips.
///
/// Both states are steered to `g_star`; the second schedule is then run
/// backwards with every backward flow replaced by a forward flow that returns
/// close to where the backward flow would land.
pub fn steer_to_target(
    spec: &SystemSpec,
    psi_from: &State,
    psi_to: &State,
    eps: f64,
    budget: usize,
    opts: &SteerOptions,
) -> Result<SteerResult, SteerError> {
    opts.validate(spec)?;
    for s in [psi_from, psi_to] {
        s.check_dim(spec)
            .map_err(|e| SteerError::InvalidParameter(e.to_string()))?;
        require_same_energy(spec, s)?;
    }
    if h_distance(spec, psi_from, psi_to) <= eps {
        return Ok(finish(spec, psi_from, psi_to, Vec::new(), 0.0, Vec::new()));
    }
    let wmin = spec.omega()[0].min(1.0);
    let to_euclid = wmin / std::f64::consts::SQRT_2;
    let leg_eps = 0.25 * eps * to_euclid;
    let s1 = steer_to_gstar(spec, psi_from, leg_eps, opts)?;
    let s2 = steer_to_gstar(spec, psi_to, leg_eps, opts)?;
    let needed = s1.flips_used + s2.flips_used;
    if needed > budget {
        return Err(SteerError::BudgetExceeded { needed, budget });
    }

    // Backward flows of the second leg, in the order they are undone.
    let mut backward: Vec<f64> = vec![s2.terminal_flow];
    backward.extend(s2.taus.iter().rev());
    let nonzero = backward.iter().filter(|&&u| u > 0.0).count().max(1);
    let longest = backward.iter().cloned().fold(0.0, f64::max);
    let horizon = opts.recurrence_horizon_for(spec) + longest;
    // The guaranteed tolerance splits the budget evenly over the recurrences;
    // looser tolerances are tried first and kept when the landing point is
    // already close enough.
    let theta_safe = 0.5 * eps / (nonzero as f64 * spec.energy().sqrt());
    let mut theta = 0.5 * eps / spec.energy().sqrt();
    loop {
        theta = theta.max(theta_safe);
        let period = if longest > 0.0 {
            near_period(spec, theta, longest, horizon)?
        } else {
            0.0
        };
        let out = assemble(spec, psi_from, psi_to, &s1, &backward, period)?;
        if out.final_error_h <= eps {
            return Ok(out);
        }
        if theta <= theta_safe {
            return Err(SteerError::HorizonTooShort {
                horizon,
                tol: eps,
                achieved: out.final_error_h,
                t: period,
            });
        }
        theta *= 0.5;
    }
}

/// First leg followed by the backward flows of the second leg, each replaced
/// by the forward flow `period - u`.
fn assemble(
    spec: &SystemSpec,
    psi_from: &State,
    psi_to: &State,
    s1: &SteerResult,
    backward: &[f64],
    period: f64,
) -> Result<SteerResult, SteerError> {
    let forward: Vec<f64> = backward
        .iter()
        .map(|&u| if u > 0.0 { period - u } else { 0.0 })
        .collect();
    let mut taus = s1.taus.clone();
    let mut pending = s1.terminal_flow + forward[0];
    for &f in &forward[1..] {
        taus.push(pending);
        pending = f;
    }
    let mut deltas = s1.per_step_delta.clone();
    let mut state = propagate(spec, &s1.final_state, forward[0]);
    for &f in &forward[1..] {
        state = flip(&state);
        deltas.push(torus::delta(spec, &unit_actions(spec, &state))?);
        state = propagate(spec, &state, f);
    }
    Ok(finish(spec, psi_from, psi_to, taus, pending, deltas))
}

/// Closed-form two-point schedule for a single oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactN1 {
    /// Flip instant.
    pub t1: f64,
    /// Total time; the target is reached at `t`.
    pub t: f64,
}

/// `t1` and `t = 2 pi / omega` with `e^{A(t - t1)} I e^{A t1} psi = target`.
pub fn steer_exact_n1(omega: f64, psi: &State, target: &State) -> Result<ExactN1, SteerError> {
    if psi.n() != 1 || target.n() != 1 {
        return Err(SteerError::NotOneDimensional(psi.n().max(target.n())));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(SteerError::InvalidParameter(format!("omega {omega}")));
    }
    let e = |s: &State| 0.5 * (s.p[0] * s.p[0] + omega * omega * s.q[0] * s.q[0]);
    let (ea, eb) = (e(psi), e(target));
    if (ea - eb).abs() > 1e-12 * ea.max(eb).max(f64::MIN_POSITIVE) {
        return Err(SteerError::DifferentEnergy { a: ea, b: eb });
    }
    let period = TAU / omega;
    // z = p + i omega q rotates as e^{i omega t} z; the flip conjugates -z.
    let za = (-psi.p[0], omega * psi.q[0]);
    let zb = (target.p[0], omega * target.q[0]);
    let s = if za.0 == 0.0 && za.1 == 0.0 {
        0.0
    } else {
        let cross = za.0 * zb.1 - za.1 * zb.0;
        let dot = za.0 * zb.0 + za.1 * zb.1;
        let s = cross.atan2(dot).rem_euclid(TAU) / omega;
        if s >= period {
            0.0
        } else {
            s
        }
    };
    Ok(ExactN1 {
        t1: 0.5 * (period - s),
        t: period,
    })
}
