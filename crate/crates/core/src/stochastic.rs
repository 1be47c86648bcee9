//! The flip process: free flow punctuated by flips at random times.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use statrs::distribution::Continuous;

use crate::dynamics::{jstep, ModalState, State};
use crate::model::SystemSpec;
use crate::rng::{stream_rng, DYNAMICS_STREAM};

/// Simpson steps per period of the fastest mode.
pub const SUBSTEPS_PER_PERIOD: f64 = 32.0;

#[derive(Debug, Error, PartialEq)]
pub enum StochasticError {
    #[error("invalid waiting law: {0}")]
    InvalidLaw(String),
    #[error("substep must be positive and finite, got {0}")]
    InvalidSubstep(f64),
    #[error("end time must be non-negative and finite, got {0}")]
    InvalidEndTime(f64),
    #[error("unknown observable `{name}`; valid names: {valid}")]
    UnknownObservable { name: String, valid: String },
    #[error("observable `{name}` refers to index {index}, system has {n} degrees of freedom")]
    IndexOutOfRange { name: String, index: usize, n: usize },
    #[error("quadratic observable `{name}` needs a {expected}x{expected} matrix")]
    BadMatrix { name: String, expected: usize },
}

/// Law of the gaps between flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaitingLaw {
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Deterministic gaps used in order; no further flips once exhausted.
    FixedSchedule { taus: Vec<f64> },
}

impl WaitingLaw {
    pub fn validate(&self) -> Result<(), StochasticError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        match self {
            WaitingLaw::Exponential { rate } if !pos(*rate) => {
                Err(StochasticError::InvalidLaw(format!("rate {rate}")))
            }
            WaitingLaw::Gamma { shape, scale } if !pos(*shape) || !pos(*scale) => Err(
                StochasticError::InvalidLaw(format!("shape {shape}, scale {scale}")),
            ),
            WaitingLaw::FixedSchedule { taus } if taus.iter().any(|t| !pos(*t)) => Err(
                StochasticError::InvalidLaw("fixed gaps must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// First moment; the average gap for a fixed schedule.
    pub fn mean(&self) -> f64 {
        match self {
            WaitingLaw::Exponential { rate } => 1.0 / rate,
            WaitingLaw::Gamma { shape, scale } => shape * scale,
            WaitingLaw::FixedSchedule { taus } => {
                if taus.is_empty() {
                    f64::INFINITY
                } else {
                    taus.iter().sum::<f64>() / taus.len() as f64
                }
            }
        }
    }

    /// Probability density of a gap at `t`; `None` for a fixed schedule.
    pub fn wait_density(&self, t: f64) -> Option<f64> {
        match self {
            WaitingLaw::Exponential { rate } => {
                Some(if t < 0.0 { 0.0 } else { rate * (-rate * t).exp() })
            }
            WaitingLaw::Gamma { shape, scale } => {
                let g = statrs::distribution::Gamma::new(*shape, 1.0 / scale).ok()?;
                Some(if t < 0.0 { 0.0 } else { g.pdf(t) })
            }
            WaitingLaw::FixedSchedule { .. } => None,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, WaitingLaw::FixedSchedule { .. })
    }

    /// Stateful sampler; panics if the law is invalid.
    pub fn stream(&self) -> WaitStream<'_> {
        self.validate().expect("valid waiting law");
        let kind = match self {
            WaitingLaw::Exponential { rate } => Kind::Exp(Exp::new(*rate).expect("validated")),
            WaitingLaw::Gamma { shape, scale } => {
                Kind::Gamma(Gamma::new(*shape, *scale).expect("validated"))
            }
            WaitingLaw::FixedSchedule { taus } => Kind::Fixed(taus),
        };
        WaitStream { kind, next: 0 }
    }
}

enum Kind<'a> {
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Fixed(&'a [f64]),
}

/// Successive gaps drawn from a [`WaitingLaw`].
pub struct WaitStream<'a> {
    kind: Kind<'a>,
    next: usize,
}

impl WaitStream<'_> {
    /// Next gap; `f64::INFINITY` once a fixed schedule runs out.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Exp(d) => positive(|| d.sample(rng)),
            Kind::Gamma(d) => positive(|| d.sample(rng)),
            Kind::Fixed(taus) => {
                let t = taus.get(self.next).copied().unwrap_or(f64::INFINITY);
                self.next += 1;
                t
            }
        }
    }
}

fn positive(mut draw: impl FnMut() -> f64) -> f64 {
    loop {
        let t = draw();
        if t > 0.0 {
            return t;
        }
    }
}

/// Next gap from `stream`.
pub fn sample_wait<R: Rng + ?Sized>(stream: &mut WaitStream<'_>, rng: &mut R) -> f64 {
    stream.sample(rng)
}

/// Flip instants of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub taus: Vec<f64>,
    pub times: Vec<f64>,
    /// State right after each flip, when recorded.
    pub states_at_events: Option<Vec<State>>,
    /// State at the end time.
    pub final_state: State,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// Drive the process from `psi0` up to `t_end`.
///
/// `on_segment(start, duration)` sees every stretch of free flow, including the
/// final partial one; `on_event(t, tau, state)` sees every flip, with the state
/// already flipped.
fn run<R, S, E>(
    spec: &SystemSpec,
    psi0: &State,
    t_end: f64,
    law: &WaitingLaw,
    rng: &mut R,
    mut on_segment: S,
    mut on_event: E,
) -> ModalState
where
    R: Rng + ?Sized,
    S: FnMut(&ModalState, f64),
    E: FnMut(f64, f64, &ModalState),
{
    let mut stream = law.stream();
    let mut m = ModalState::from_state(spec, psi0);
    let mut t = 0.0;
    loop {
        let tau = stream.sample(rng);
        let next = t + tau;
        if next > t_end {
            let rest = t_end - t;
            if rest > 0.0 {
                on_segment(&m, rest);
                m.rotate(spec, rest);
            }
            return m;
        }
        on_segment(&m, tau);
        m.rotate(spec, tau);
        m.flip(spec);
        t = next;
        on_event(t, tau, &m);
    }
}

fn check_end(t_end: f64) -> Result<(), StochasticError> {
    if t_end.is_finite() && t_end >= 0.0 {
        Ok(())
    } else {
        Err(StochasticError::InvalidEndTime(t_end))
    }
}

/// Simulate up to `t_end`, calling `observer(start, duration)` on every free
/// segment.
pub fn simulate_pdmp<R, O>(
    spec: &SystemSpec,
    psi0: &State,
    t_end: f64,
    law: &WaitingLaw,
    rng: &mut R,
    record_states: bool,
    mut observer: O,
) -> Result<EventLog, StochasticError>
where
    R: Rng + ?Sized,
    O: FnMut(&ModalState, f64),
{
    law.validate()?;
    check_end(t_end)?;
    let mut taus = Vec::new();
    let mut times = Vec::new();
    let mut states = record_states.then(Vec::new);
    let last = run(
        spec,
        psi0,
        t_end,
        law,
        rng,
        &mut observer,
        |t, tau, m: &ModalState| {
            taus.push(tau);
            times.push(t);
            if let Some(s) = states.as_mut() {
                s.push(m.to_state(spec));
            }
        },
    );
    Ok(EventLog {
        taus,
        times,
        states_at_events: states,
        final_state: last.to_state(spec),
    })
}

/// `psi_0, psi_1, ..., psi_n` with `psi_k = J(tau_k) psi_{k-1}`.
pub fn embedded_chain<R: Rng + ?Sized>(
    spec: &SystemSpec,
    psi0: &State,
    n_steps: usize,
    law: &WaitingLaw,
    rng: &mut R,
) -> Result<Vec<State>, StochasticError> {
    law.validate()?;
    let mut stream = law.stream();
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(psi0.clone());
    for _ in 0..n_steps {
        let tau = stream.sample(rng);
        if !tau.is_finite() {
            break;
        }
        let next = jstep(spec, out.last().expect("non-empty"), tau);
        out.push(next);
    }
    Ok(out)
}

/// Chain samples `psi_{burn_in + thin}, psi_{burn_in + 2 thin}, ...`, `count` of
/// them, as flat `(q, p)` vectors.
pub fn embedded_chain_thinned<R: Rng + ?Sized>(
    spec: &SystemSpec,
    psi0: &State,
    burn_in: usize,
    thin: usize,
    count: usize,
    law: &WaitingLaw,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, StochasticError> {
    law.validate()?;
    let thin = thin.max(1);
    let mut stream = law.stream();
    let mut m = ModalState::from_state(spec, psi0);
    let mut out = Vec::with_capacity(count);
    let mut step = 0usize;
    while out.len() < count {
        let tau = stream.sample(rng);
        if !tau.is_finite() {
            break;
        }
        m.rotate(spec, tau);
        m.flip(spec);
        step += 1;
        if step > burn_in && (step - burn_in).is_multiple_of(thin) {
            out.push(m.to_state(spec).to_vec());
        }
    }
    Ok(out)
}

/// A scalar function of the state.
#[derive(Clone)]
pub enum Observable {
    /// Total energy `H`.
    Energy,
    /// `r_k^2` for mode `k` (0-based, modes sorted by frequency).
    ActionSq(usize),
    /// `p_i^2` (0-based particle index).
    MomentumSq(usize),
    /// `q_i^2`.
    PositionSq(usize),
    /// `q_i^4`.
    PositionQuartic(usize),
    /// `x^T M x` with `x = (q, p)`.
    Quadratic { name: String, matrix: DMatrix<f64> },
    /// Arbitrary function, integrated by quadrature.
    Custom {
        name: String,
        f: Arc<dyn Fn(&State) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PartialEq for Observable {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Observable::Quadratic { name: a, matrix: x }, Observable::Quadratic { name: b, matrix: y }) => {
                a == b && x == y
            }
            (Observable::Custom { .. }, _) | (_, Observable::Custom { .. }) => false,
            _ => self.name() == other.name(),
        }
    }
}

/// Names accepted by [`Observable::parse`].
pub const OBSERVABLE_NAMES: &str = "H, r<k>^2, p<i>^2, q<i>^2, q<i>^4 (indices from 1)";

impl Observable {
    /// Text form: `H`, `r2^2`, `p1^2`, `q3^2`, `q1^4` with 1-based indices.
    pub fn name(&self) -> String {
        match self {
            Observable::Energy => "H".into(),
            Observable::ActionSq(k) => format!("r{}^2", k + 1),
            Observable::MomentumSq(i) => format!("p{}^2", i + 1),
            Observable::PositionSq(i) => format!("q{}^2", i + 1),
            Observable::PositionQuartic(i) => format!("q{}^4", i + 1),
            Observable::Quadratic { name, .. } | Observable::Custom { name, .. } => name.clone(),
        }
    }

    /// Parse a name and check its index against `n` degrees of freedom.
    pub fn parse(name: &str, n: usize) -> Result<Self, StochasticError> {
        let unknown = || StochasticError::UnknownObservable {
            name: name.to_string(),
            valid: OBSERVABLE_NAMES.to_string(),
        };
        let s = name.trim();
        if s == "H" {
            return Ok(Observable::Energy);
        }
        let (head, power) = s.split_once('^').ok_or_else(unknown)?;
        let mut chars = head.chars();
        let letter = chars.next().ok_or_else(unknown)?;
        let index: usize = chars.as_str().parse().map_err(|_| unknown())?;
        if index == 0 {
            return Err(unknown());
        }
        let obs = match (letter, power) {
            ('r', "2") => Observable::ActionSq(index - 1),
            ('p', "2") => Observable::MomentumSq(index - 1),
            ('q', "2") => Observable::PositionSq(index - 1),
            ('q', "4") => Observable::PositionQuartic(index - 1),
            _ => return Err(unknown()),
        };
        obs.check(n)?;
        Ok(obs)
    }

    /// Validate indices and matrix shape against `n` degrees of freedom.
    pub fn check(&self, n: usize) -> Result<(), StochasticError> {
        let index = match self {
            Observable::ActionSq(i)
            | Observable::MomentumSq(i)
            | Observable::PositionSq(i)
            | Observable::PositionQuartic(i) => Some(*i),
            _ => None,
        };
        if let Some(index) = index {
            if index >= n {
                return Err(StochasticError::IndexOutOfRange {
                    name: self.name(),
                    index: index + 1,
                    n,
                });
            }
        }
        if let Observable::Quadratic { name, matrix } = self {
            if matrix.nrows() != 2 * n || matrix.ncols() != 2 * n {
                return Err(StochasticError::BadMatrix {
                    name: name.clone(),
                    expected: 2 * n,
                });
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, spec: &SystemSpec, psi: &State) -> f64 {
        match self {
            Observable::Energy => crate::dynamics::energy(spec, psi),
            Observable::ActionSq(k) => {
                ModalState::from_state(spec, psi).actions_sq(spec)[*k]
            }
            Observable::MomentumSq(i) => psi.p[*i] * psi.p[*i],
            Observable::PositionSq(i) => psi.q[*i] * psi.q[*i],
            Observable::PositionQuartic(i) => psi.q[*i].powi(4),
            Observable::Quadratic { matrix, .. } => {
                let x = nalgebra::DVector::from_vec(psi.to_vec());
                x.dot(&(matrix * &x))
            }
            Observable::Custom { f, .. } => f(psi),
        }
    }

    fn evaluate_modal(&self, spec: &SystemSpec, m: &ModalState) -> f64 {
        match self {
            Observable::PositionQuartic(i) => {
                let q: f64 = (0..spec.n()).map(|k| spec.modes()[(*i, k)] * m.qt[k]).sum();
                q.powi(4)
            }
            _ => self.evaluate(spec, &m.to_state(spec)),
        }
    }

    /// The form in modal coordinates `(q~, p~)`, for observables quadratic in
    /// the state.
    pub fn modal_form(&self, spec: &SystemSpec) -> Option<DMatrix<f64>> {
        let n = spec.n();
        let s = spec.modes();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        match self {
            Observable::Energy => {
                for k in 0..n {
                    out[(k, k)] = 0.5 * spec.omega_sq()[k];
                    out[(n + k, n + k)] = 0.5;
                }
            }
            Observable::ActionSq(k) => {
                out[(*k, *k)] = spec.omega_sq()[*k];
                out[(n + k, n + k)] = 1.0;
            }
            Observable::MomentumSq(i) | Observable::PositionSq(i) => {
                let off = if matches!(self, Observable::MomentumSq(_)) { n } else { 0 };
                for a in 0..n {
                    for b in 0..n {
                        out[(off + a, off + b)] = s[(*i, a)] * s[(*i, b)];
                    }
                }
            }
            Observable::Quadratic { matrix, .. } => {
                let mut big = DMatrix::zeros(2 * n, 2 * n);
                big.view_mut((0, 0), (n, n)).copy_from(s);
                big.view_mut((n, n), (n, n)).copy_from(s);
                let sym = 0.5 * (matrix + matrix.transpose());
                out = big.transpose() * sym * &big;
            }
            _ => return None,
        }
        Some(out)
    }
}

/// `int_0^T cos(w s) ds`.
fn int_cos(w: f64, t: f64) -> f64 {
    if w == 0.0 {
        t
    } else {
        (w * t).sin() / w
    }
}

/// `int_0^T sin(w s) ds`.
fn int_sin(w: f64, t: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        let h = (0.5 * w * t).sin();
        2.0 * h * h / w
    }
}

/// Trigonometric product integrals over one segment, per mode pair.
struct SegmentKernel {
    n: usize,
    cc: Vec<f64>,
    cs: Vec<f64>,
    ss: Vec<f64>,
}

impl SegmentKernel {
    fn new(n: usize) -> Self {
        Self {
            n,
            cc: vec![0.0; n * n],
            cs: vec![0.0; n * n],
            ss: vec![0.0; n * n],
        }
    }

    fn fill(&mut self, omega: &[f64], t: f64) {
        let n = self.n;
        for a in 0..n {
            for b in a..n {
                let (wa, wb) = (omega[a], omega[b]);
                let (sm, sp) = (int_cos(wa - wb, t), int_cos(wa + wb, t));
                let cc = 0.5 * (sm + sp);
                let ss = 0.5 * (sm - sp);
                self.cc[a * n + b] = cc;
                self.cc[b * n + a] = cc;
                self.ss[a * n + b] = ss;
                self.ss[b * n + a] = ss;
                // cos(wa s) sin(wb s) and cos(wb s) sin(wa s).
                let sp = int_sin(wa + wb, t);
                self.cs[a * n + b] = 0.5 * (sp + int_sin(wb - wa, t));
                self.cs[b * n + a] = 0.5 * (sp + int_sin(wa - wb, t));
            }
        }
    }

    /// `int_0^T x(s)^T M x(s) ds` for the free flow from `m`.
    fn integrate(&self, spec: &SystemSpec, m: &ModalState, form: &DMatrix<f64>) -> f64 {
        let n = self.n;
        let w = spec.omega();
        // Coordinate i (q~ then p~) evolves as c_i cos(w s) + d_i sin(w s).
        let coef = |i: usize| -> (usize, f64, f64) {
            if i < n {
                (i, m.qt[i], m.pt[i] / w[i])
            } else {
                let k = i - n;
                (k, m.pt[k], -w[k] * m.qt[k])
            }
        };
        let mut total = 0.0;
        for i in 0..2 * n {
            let (ki, ci, di) = coef(i);
            for j in 0..2 * n {
                let mij = form[(i, j)];
                if mij == 0.0 {
                    continue;
                }
                let (kj, cj, dj) = coef(j);
                let idx = ki * n + kj;
                let v = ci * cj * self.cc[idx]
                    + ci * dj * self.cs[idx]
                    + di * cj * self.cs[kj * n + ki]
                    + di * dj * self.ss[idx];
                total += mij * v;
            }
        }
        total
    }
}

/// Composite Simpson integral of `f` along the free flow from `m` over
/// `[0, t]` with step at most `substep`.
fn simpson(spec: &SystemSpec, m: &ModalState, f: &Observable, t: f64, substep: f64) -> f64 {
    let intervals = {
        let k = (t / substep).ceil() as usize;
        (k + k % 2).max(2)
    };
    let h = t / intervals as f64;
    let mut sum = 0.0;
    let mut point = m.clone();
    for j in 0..=intervals {
        point.clone_from(m);
        point.rotate(spec, j as f64 * h);
        let weight = if j == 0 || j == intervals {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += weight * f.evaluate_modal(spec, &point);
    }
    sum * h / 3.0
}

/// How one observable is integrated over a segment.
enum Integrator {
    /// Conserved along the free flow: value at the start times the duration.
    Conserved,
    Exact(DMatrix<f64>),
    Quadrature,
}

fn integrator(spec: &SystemSpec, f: &Observable) -> Integrator {
    match f {
        Observable::Energy | Observable::ActionSq(_) => Integrator::Conserved,
        _ => match f.modal_form(spec) {
            Some(form) => Integrator::Exact(form),
            None => Integrator::Quadrature,
        },
    }
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }
}

/// Default quadrature step, a fixed fraction of the fastest period.
pub fn default_substep(spec: &SystemSpec) -> f64 {
    let wmax = spec.omega().iter().cloned().fold(0.0, f64::max);
    std::f64::consts::TAU / wmax / SUBSTEPS_PER_PERIOD
}

/// Time averages along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAverage {
    /// One mean per observable, in input order.
    pub means: Vec<f64>,
    pub n_events: usize,
    pub t_end: f64,
}

/// `(1/T) int_0^T f(psi(t)) dt` for every `f` in `fs` along one trajectory.
pub fn time_averages<R: Rng + ?Sized>(
    spec: &SystemSpec,
    psi0: &State,
    fs: &[Observable],
    t_end: f64,
    law: &WaitingLaw,
    rng: &mut R,
    substep: f64,
) -> Result<TimeAverage, StochasticError> {
    law.validate()?;
    check_end(t_end)?;
    if !(substep.is_finite() && substep > 0.0) {
        return Err(StochasticError::InvalidSubstep(substep));
    }
    for f in fs {
        f.check(spec.n())?;
    }
    if t_end == 0.0 {
        return Ok(TimeAverage {
            means: fs.iter().map(|f| f.evaluate(spec, psi0)).collect(),
            n_events: 0,
            t_end,
        });
    }
    let plans: Vec<Integrator> = fs.iter().map(|f| integrator(spec, f)).collect();
    let needs_kernel = plans.iter().any(|p| matches!(p, Integrator::Exact(_)));
    let mut kernel = SegmentKernel::new(spec.n());
    let mut sums = vec![Neumaier::default(); fs.len()];
    let mut n_events = 0usize;
    run(
        spec,
        psi0,
        t_end,
        law,
        rng,
        |m, dt| {
            if needs_kernel {
                kernel.fill(spec.omega(), dt);
            }
            for ((sum, plan), f) in sums.iter_mut().zip(&plans).zip(fs) {
                sum.add(match plan {
                    Integrator::Conserved => match f {
                        Observable::Energy => m.energy(spec) * dt,
                        Observable::ActionSq(k) => {
                            let w = spec.omega()[*k];
                            (m.pt[*k] * m.pt[*k] + w * w * m.qt[*k] * m.qt[*k]) * dt
                        }
                        _ => unreachable!("only conserved observables"),
                    },
                    Integrator::Exact(form) => kernel.integrate(spec, m, form),
                    Integrator::Quadrature => simpson(spec, m, f, dt, substep),
                });
            }
        },
        |_, _, _| n_events += 1,
    );
    Ok(TimeAverage {
        means: sums.into_iter().map(|s| s.total() / t_end).collect(),
        n_events,
        t_end,
    })
}

/// Single-observable form of [`time_averages`].
pub fn time_average<R: Rng + ?Sized>(
    spec: &SystemSpec,
    psi0: &State,
    f: &Observable,
    t_end: f64,
    law: &WaitingLaw,
    rng: &mut R,
    substep: f64,
) -> Result<(f64, usize), StochasticError> {
    let out = time_averages(spec, psi0, std::slice::from_ref(f), t_end, law, rng, substep)?;
    Ok((out.means[0], out.n_events))
}

/// Per-seed result of [`multi_trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAverages {
    pub seed: u64,
    pub average: TimeAverage,
}

/// Independent runs, one per seed, each drawing flip times from the seed's
/// dynamics stream. Output order follows `seeds`.
pub fn multi_trajectory(
    spec: &SystemSpec,
    psi0: &State,
    t_end: f64,
    law: &WaitingLaw,
    seeds: &[u64],
    fs: &[Observable],
    substep: f64,
) -> Result<Vec<SeedAverages>, StochasticError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = stream_rng(seed, DYNAMICS_STREAM);
            time_averages(spec, psi0, fs, t_end, law, &mut rng, substep)
                .map(|average| SeedAverages { seed, average })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wait_densities() {
        let e = WaitingLaw::Exponential { rate: 2.0 };
        assert_eq!(e.wait_density(0.0), Some(2.0));
        assert_eq!(e.wait_density(-1.0), Some(0.0));
        let g = WaitingLaw::Gamma { shape: 1.0, scale: 0.5 };
        assert!((g.wait_density(0.7).unwrap() - e.wait_density(0.7).unwrap()).abs() < 1e-14);
        let g3 = WaitingLaw::Gamma { shape: 3.0, scale: 0.5 };
        let mass: f64 = (0..200_000).map(|i| g3.wait_density((i as f64 + 0.5) * 1e-4).unwrap() * 1e-4).sum();
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        assert_eq!(WaitingLaw::FixedSchedule { taus: vec![1.0] }.wait_density(1.0), None);
    }
    use crate::dynamics::{energy, jcompose, propagate};
    use crate::model::random_spd;
    use nalgebra::DVector;

    fn spec3() -> SystemSpec {
        SystemSpec::decompose(random_spd(3, 7, (0.5, 2.0)), 0.5).unwrap()
    }

    fn start(spec: &SystemSpec) -> State {
        let mut m = ModalState {
            qt: vec![0.3, -0.1, 0.2],
            pt: vec![0.4, 0.5, -0.3],
        };
        let e = m.energy(spec);
        let s = (spec.energy() / e).sqrt();
        m.qt.iter_mut().chain(m.pt.iter_mut()).for_each(|x| *x *= s);
        m.to_state(spec)
    }

    #[test]
    fn fixed_schedule_matches_composition() {
        let spec = spec3();
        let psi = start(&spec);
        let taus = vec![0.7, 1.3, 0.2, 2.9];
        let law = WaitingLaw::FixedSchedule { taus: taus.clone() };
        let t_end = taus.iter().fold(0.0, |a, b| a + b);
        let mut rng = stream_rng(0, 0);
        let log = simulate_pdmp(&spec, &psi, t_end, &law, &mut rng, true, |_, _| {}).unwrap();
        let direct = jcompose(&spec, &psi, &taus);
        assert_eq!(log.len(), 4);
        assert!(log.final_state.sub(&direct).norm2() < 1e-12);
        let chain = embedded_chain(&spec, &psi, 4, &law, &mut rng).unwrap();
        assert!(chain[4].sub(&direct).norm2() < 1e-12);
        assert_eq!(chain.len(), 5);
        assert_eq!(embedded_chain(&spec, &psi, 0, &law, &mut rng).unwrap(), vec![psi.clone()]);
    }

    #[test]
    fn fixed_schedule_stream_in_order_then_exhausted() {
        let law = WaitingLaw::FixedSchedule { taus: vec![1.0, 2.0] };
        let mut s = law.stream();
        let mut rng = stream_rng(0, 0);
        assert_eq!(sample_wait(&mut s, &mut rng), 1.0);
        assert_eq!(sample_wait(&mut s, &mut rng), 2.0);
        assert!(sample_wait(&mut s, &mut rng).is_infinite());
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(WaitingLaw::Exponential { rate: 0.0 }.validate().is_err());
        assert!(WaitingLaw::Gamma { shape: 1.0, scale: -1.0 }.validate().is_err());
        assert!(WaitingLaw::FixedSchedule { taus: vec![1.0, 0.0] }.validate().is_err());
    }

    #[test]
    fn observers_see_whole_interval() {
        let spec = spec3();
        let psi = start(&spec);
        let law = WaitingLaw::Exponential { rate: 2.0 };
        let mut total = 0.0;
        let mut rng = stream_rng(5, 0);
        let log = simulate_pdmp(&spec, &psi, 50.0, &law, &mut rng, false, |_, dt| total += dt).unwrap();
        assert!((total - 50.0).abs() < 1e-10);
        assert!(log.times.windows(2).all(|w| w[0] < w[1]));
        let mut acc = 0.0;
        for (tau, t) in log.taus.iter().zip(&log.times) {
            acc += tau;
            assert!((acc - t).abs() < 1e-12);
        }
        assert!((energy(&spec, &log.final_state) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_segment_integral_matches_quadrature() {
        let spec = spec3();
        let psi = start(&spec);
        let m = ModalState::from_state(&spec, &psi);
        let mut kernel = SegmentKernel::new(3);
        let mut rng = stream_rng(9, 3);
        let mat = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() - 0.5);
        let quad = Observable::Quadratic { name: "x".into(), matrix: mat.clone() };
        let custom = Observable::Custom {
            name: "y".into(),
            f: Arc::new(move |s: &State| {
                let x = DVector::from_vec(s.to_vec());
                x.dot(&(&mat * &x))
            }),
        };
        for &t in &[1e-9, 0.3, 2.0, 17.5] {
            kernel.fill(spec.omega(), t);
            for f in [&quad, &Observable::MomentumSq(0), &Observable::PositionSq(2), &Observable::Energy] {
                let exact = kernel.integrate(&spec, &m, &f.modal_form(&spec).unwrap());
                let num = simpson(&spec, &m, f, t, 1e-3);
                assert!((exact - num).abs() < 1e-9 * t.max(1.0), "{f:?} {t}: {exact} vs {num}");
            }
            let exact = kernel.integrate(&spec, &m, &quad.modal_form(&spec).unwrap());
            let num = simpson(&spec, &m, &custom, t, 1e-3);
            assert!((exact - num).abs() < 1e-9 * t.max(1.0));
        }
    }

    #[test]
    fn energy_average_is_exact() {
        let spec = spec3();
        let psi = start(&spec);
        let law = WaitingLaw::Exponential { rate: 1.0 };
        let mut rng = stream_rng(1, 0);
        let (mean, n) = time_average(&spec, &psi, &Observable::Energy, 1000.0, &law, &mut rng, 0.1).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
        assert!(n > 800);
    }

    #[test]
    fn zero_end_time_returns_initial_value() {
        let spec = spec3();
        let psi = start(&spec);
        let law = WaitingLaw::Exponential { rate: 1.0 };
        let out = time_averages(&spec, &psi, &[Observable::PositionSq(0)], 0.0, &law, &mut stream_rng(0, 0), 0.1).unwrap();
        assert_eq!(out.means[0], psi.q[0] * psi.q[0]);
    }

    #[test]
    fn decoupled_mode_average_is_frozen() {
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let spec = SystemSpec::decompose(v, 0.5).unwrap();
        let psi = State::new(vec![0.3, 0.2], vec![0.5, -0.6]).unwrap();
        let r2 = ModalState::from_state(&spec, &psi).actions_sq(&spec)[1];
        let law = WaitingLaw::Exponential { rate: 1.0 };
        for t in [0.0, 1.0, 333.3] {
            let (mean, _) = time_average(&spec, &psi, &Observable::ActionSq(1), t, &law, &mut stream_rng(2, 0), 0.1).unwrap();
            assert!((mean - r2).abs() < 1e-12 * r2);
        }
        let moved = propagate(&spec, &psi, 1.0);
        let moved_r2 = ModalState::from_state(&spec, &moved).actions_sq(&spec)[1];
        assert!((moved_r2 - r2).abs() < 1e-12);
    }

    #[test]
    fn observable_names_round_trip() {
        for name in ["H", "r1^2", "p2^2", "q3^2", "q1^4"] {
            assert_eq!(Observable::parse(name, 3).unwrap().name(), name);
        }
        assert!(matches!(Observable::parse("x1^2", 3), Err(StochasticError::UnknownObservable { .. })));
        assert!(matches!(Observable::parse("r0^2", 3), Err(StochasticError::UnknownObservable { .. })));
        assert!(matches!(Observable::parse("p4^2", 3), Err(StochasticError::IndexOutOfRange { .. })));
    }

    #[test]
    fn identical_seeds_agree_bit_exact() {
        let spec = spec3();
        let psi = start(&spec);
        let law = WaitingLaw::Gamma { shape: 2.0, scale: 0.5 };
        let fs = [Observable::ActionSq(0), Observable::PositionQuartic(1)];
        let out = multi_trajectory(&spec, &psi, 200.0, &law, &[4, 4, 5], &fs, 0.05).unwrap();
        assert_eq!(out[0].average, out[1].average);
        assert_ne!(out[0].average, out[2].average);
        assert!(multi_trajectory(&spec, &psi, 1.0, &law, &[], &fs, 0.05).unwrap().is_empty());
    }
}
