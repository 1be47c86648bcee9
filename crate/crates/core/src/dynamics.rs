//! Phase-space states and the exact maps acting on them: the free flow
//! `e^{tA}`, the flip `I` of the first momentum and their compositions.
//!
//! The free flow is evaluated mode by mode: each normal mode is a unit-mass
//! oscillator of frequency `omega_k`, so propagation is a rotation of
//! `(omega_k q~_k, p~_k)` and is exact up to roundoff for any `t`, including
//! negative times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SystemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("coordinate and momentum lengths differ ({q} vs {p})")]
    LengthMismatch { q: usize, p: usize },
    #[error("state has a non-finite component")]
    NonFinite,
    #[error("state has {got} particles, system has {expected}")]
    WrongDimension { expected: usize, got: usize },
    #[error("action radius {0} is negative or not finite")]
    InvalidRadius(f64),
}

/// A point `psi = (q, p)` of phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self, DynamicsError> {
        if q.len() != p.len() {
            return Err(DynamicsError::LengthMismatch {
                q: q.len(),
                p: p.len(),
            });
        }
        if q.iter().chain(&p).any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(Self { q, p })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            p: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Check that the state fits `spec`.
    pub fn check_dim(&self, spec: &SystemSpec) -> Result<(), DynamicsError> {
        if self.q.len() != self.p.len() {
            return Err(DynamicsError::LengthMismatch {
                q: self.q.len(),
                p: self.p.len(),
            });
        }
        if self.n() != spec.n() {
            return Err(DynamicsError::WrongDimension {
                expected: spec.n(),
                got: self.n(),
            });
        }
        if self.q.iter().chain(&self.p).any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        Ok(())
    }

    /// `(q, p)` stacked into one vector of length `2N`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let n = v.len() / 2;
        Self {
            q: v[..n].to_vec(),
            p: v[n..].to_vec(),
        }
    }

    pub fn sub(&self, other: &State) -> State {
        State {
            q: self.q.iter().zip(&other.q).map(|(a, b)| a - b).collect(),
            p: self.p.iter().zip(&other.p).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> State {
        State {
            q: self.q.iter().map(|x| x * s).collect(),
            p: self.p.iter().map(|x| x * s).collect(),
        }
    }

    /// Euclidean norm in `R^{2N}`.
    pub fn norm2(&self) -> f64 {
        self.q.iter().chain(&self.p).map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Action radii `r = (r_1, ..., r_N)`, all non-negative; one invariant torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorusVector(Vec<f64>);

impl TorusVector {
    pub fn new(r: Vec<f64>) -> Result<Self, DynamicsError> {
        if let Some(&bad) = r.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(DynamicsError::InvalidRadius(bad));
        }
        Ok(Self(r))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `sum r_k^2`, which equals `2H` on the torus.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|r| r * r).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|r| r * s.abs()).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Coordinates in the normal-mode basis: `q = sum q~_k v_k`, `p = sum p~_k v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    pub qt: Vec<f64>,
    pub pt: Vec<f64>,
}

impl ModalState {
    pub fn from_state(spec: &SystemSpec, psi: &State) -> Self {
        let m = spec.modes();
        let n = spec.n();
        let mut qt = vec![0.0; n];
        let mut pt = vec![0.0; n];
        for k in 0..n {
            let col = m.column(k);
            qt[k] = col.iter().zip(&psi.q).map(|(v, x)| v * x).sum();
            pt[k] = col.iter().zip(&psi.p).map(|(v, x)| v * x).sum();
        }
        Self { qt, pt }
    }

    pub fn to_state(&self, spec: &SystemSpec) -> State {
        let m = spec.modes();
        let n = spec.n();
        let mut q = vec![0.0; n];
        let mut p = vec![0.0; n];
        for k in 0..n {
            let (a, b) = (self.qt[k], self.pt[k]);
            for (i, v) in m.column(k).iter().enumerate() {
                q[i] += v * a;
                p[i] += v * b;
            }
        }
        State { q, p }
    }

    /// Apply `e^{tA}` in place.
    pub fn rotate(&mut self, spec: &SystemSpec, t: f64) {
        for (k, &w) in spec.omega().iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let (q, p) = (self.qt[k], self.pt[k]);
            self.qt[k] = c * q + s / w * p;
            self.pt[k] = -w * s * q + c * p;
        }
    }

    /// Momentum of the marked particle, `p_1 = sum beta_k p~_k`.
    pub fn p1(&self, spec: &SystemSpec) -> f64 {
        spec.beta().iter().zip(&self.pt).map(|(b, p)| b * p).sum()
    }

    /// Apply the flip in modal form: `p~_k -> p~_k - 2 p_1 beta_k`.
    ///
    /// The update is divided by the computed `|beta|^2` so that it stays an
    /// exact reflection when the mode basis is orthonormal only to roundoff.
    pub fn flip(&mut self, spec: &SystemSpec) {
        let beta = spec.beta();
        let norm: f64 = beta.iter().map(|b| b * b).sum();
        let k = 2.0 * self.p1(spec) / norm;
        for (p, b) in self.pt.iter_mut().zip(beta) {
            *p -= k * b;
        }
    }

    /// `H = 1/2 sum (p~_k^2 + omega_k^2 q~_k^2)`.
    pub fn energy(&self, spec: &SystemSpec) -> f64 {
        0.5 * self.actions_sq(spec).iter().sum::<f64>()
    }

    /// `r_k^2 = p~_k^2 + omega_k^2 q~_k^2`.
    pub fn actions_sq(&self, spec: &SystemSpec) -> Vec<f64> {
        spec.omega()
            .iter()
            .zip(self.qt.iter().zip(&self.pt))
            .map(|(w, (q, p))| p * p + w * w * q * q)
            .collect()
    }
}

/// `e^{tA} psi`. Any real `t` is accepted.
pub fn propagate(spec: &SystemSpec, psi: &State, t: f64) -> State {
    let mut m = ModalState::from_state(spec, psi);
    m.rotate(spec, t);
    m.to_state(spec)
}

/// Negate `p_1`, leave everything else untouched.
pub fn flip(psi: &State) -> State {
    let mut out = psi.clone();
    out.p[0] = -out.p[0];
    out
}

/// `J(tau) psi = I e^{tau A} psi`.
///
/// # Panics
/// If `tau` is negative or not finite.
pub fn jstep(spec: &SystemSpec, psi: &State, tau: f64) -> State {
    assert!(tau >= 0.0 && tau.is_finite(), "flip gap must be a finite non-negative time, got {tau}");
    flip(&propagate(spec, psi, tau))
}

/// `J(tau_m) ... J(tau_1) psi`; the empty schedule is the identity.
pub fn jcompose(spec: &SystemSpec, psi: &State, taus: &[f64]) -> State {
    taus.iter().fold(psi.clone(), |acc, &tau| jstep(spec, &acc, tau))
}

/// Inverse of [`jcompose`]: `e^{-tau_1 A} I e^{-tau_2 A} I ... e^{-tau_m A} I psi`.
pub fn inverse_jcompose(spec: &SystemSpec, psi: &State, taus: &[f64]) -> State {
    taus.iter()
        .rev()
        .fold(psi.clone(), |acc, &tau| propagate(spec, &flip(&acc), -tau))
}

/// `A psi = (p, -V q)`.
pub fn apply_generator(spec: &SystemSpec, psi: &State) -> State {
    let v = spec.v_matrix();
    let n = spec.n();
    let force = (0..n)
        .map(|i| -(0..n).map(|j| v[(i, j)] * psi.q[j]).sum::<f64>())
        .collect();
    State {
        q: psi.p.clone(),
        p: force,
    }
}

/// `H(psi) = |p|^2 / 2 + (q, V q) / 2`.
pub fn energy(spec: &SystemSpec, psi: &State) -> f64 {
    h_inner(spec, psi, psi)
}

/// Bilinear form `1/2 [(p, p') + (q, V q')]` whose quadratic form is `H`.
pub fn h_inner(spec: &SystemSpec, u: &State, w: &State) -> f64 {
    let v = spec.v_matrix();
    let n = spec.n();
    let kinetic: f64 = u.p.iter().zip(&w.p).map(|(a, b)| a * b).sum();
    let mut potential = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| v[(i, j)] * w.q[j]).sum();
        potential += u.q[i] * row;
    }
    0.5 * (kinetic + potential)
}

/// `sqrt(H(u - w))`.
pub fn h_distance(spec: &SystemSpec, u: &State, w: &State) -> f64 {
    energy(spec, &u.sub(w)).max(0.0).sqrt()
}

/// Momenta in the mode basis, `p~_k = (p, v_k)`.
pub fn modal_momenta(spec: &SystemSpec, psi: &State) -> Vec<f64> {
    ModalState::from_state(spec, psi).pt
}

/// Momenta back from the mode basis.
pub fn momenta_from_modal(spec: &SystemSpec, pt: &[f64]) -> Vec<f64> {
    let m = spec.modes();
    (0..spec.n())
        .map(|i| (0..spec.n()).map(|k| m[(i, k)] * pt[k]).sum())
        .collect()
}

/// Action radii `r_k = sqrt(p~_k^2 + omega_k^2 q~_k^2)`.
pub fn action_vars(spec: &SystemSpec, psi: &State) -> TorusVector {
    let r = ModalState::from_state(spec, psi)
        .actions_sq(spec)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    TorusVector(r)
}

/// The marked-momentum state `sqrt(2h) (0, e_1)` on the run's energy surface.
pub fn g_star(spec: &SystemSpec) -> State {
    let mut g = State::zeros(spec.n());
    g.p[0] = (2.0 * spec.energy()).sqrt();
    g
}
