//! System construction: spectral decomposition of the coupling matrix and the
//! checks that decide whether a single flipped momentum can mix every mode.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

/// Default tolerance for "nonzero" overlaps and rational relations.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default coefficient bound for the integer-relation search.
pub const DEFAULT_COEFF_BOUND: u32 = 20;
/// Largest number of integer vectors the relation search will enumerate.
pub const RELATION_SEARCH_CAP: u64 = 50_000_000;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric: |V[{row},{col}] - V[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix is not positive definite: smallest eigenvalue {smallest:e}")]
    NotPositiveDefinite { smallest: f64 },
    #[error("energy must be positive and finite, got {0}")]
    InvalidEnergy(f64),
}

/// The immutable physics of a run: the coupling matrix, its modes and the
/// energy surface the dynamics lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    v_matrix: DMatrix<f64>,
    omega_sq: Vec<f64>,
    omega: Vec<f64>,
    modes: DMatrix<f64>,
    beta: Vec<f64>,
    energy: f64,
}

impl SystemSpec {
    /// Diagonalise `v_matrix` and fix the energy surface `H = energy`.
    ///
    /// Eigenvalues come out ascending and every eigenvector is signed so its
    /// first nonzero component is positive, which pins the signs of `beta`.
    pub fn decompose(v_matrix: DMatrix<f64>, energy: f64) -> Result<Self, ModelError> {
        let (rows, cols) = v_matrix.shape();
        if rows != cols {
            return Err(ModelError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(ModelError::Empty);
        }
        if !(energy.is_finite() && energy > 0.0) {
            return Err(ModelError::InvalidEnergy(energy));
        }
        let n = rows;
        let scale = v_matrix.amax().max(1.0);
        for i in 0..n {
            for j in 0..n {
                if !v_matrix[(i, j)].is_finite() {
                    return Err(ModelError::NonFinite { row: i, col: j });
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (v_matrix[(i, j)] - v_matrix[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(ModelError::NotSymmetric { row: i, col: j, gap });
                }
            }
        }

        let sym = (&v_matrix + v_matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let smallest = eig.eigenvalues[order[0]];
        if smallest <= 0.0 {
            return Err(ModelError::NotPositiveDefinite { smallest });
        }

        let mut modes = DMatrix::zeros(n, n);
        let mut omega_sq = Vec::with_capacity(n);
        for (k, &src) in order.iter().enumerate() {
            let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
            col /= col.norm();
            if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    col.neg_mut();
                }
            }
            modes.set_column(k, &col);
            omega_sq.push(eig.eigenvalues[src]);
        }
        let omega = omega_sq.iter().map(|w| w.sqrt()).collect();
        let beta = (0..n).map(|k| modes[(0, k)]).collect();

        Ok(Self {
            v_matrix,
            omega_sq,
            omega,
            modes,
            beta,
            energy,
        })
    }

    /// Same system on another energy surface.
    pub fn with_energy(&self, energy: f64) -> Result<Self, ModelError> {
        if !(energy.is_finite() && energy > 0.0) {
            return Err(ModelError::InvalidEnergy(energy));
        }
        Ok(Self {
            energy,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn v_matrix(&self) -> &DMatrix<f64> {
        &self.v_matrix
    }

    /// Eigenvalues of `V`, ascending.
    pub fn omega_sq(&self) -> &[f64] {
        &self.omega_sq
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Orthonormal eigenvectors of `V`, one per column.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Overlaps of the marked direction `e_1` with each mode.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn min_abs_beta(&self) -> f64 {
        self.beta.iter().fold(f64::INFINITY, |m, b| m.min(b.abs()))
    }

    /// Smallest gap between consecutive eigenvalues (infinite for `N = 1`).
    pub fn min_spectral_gap(&self) -> f64 {
        self.omega_sq
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// No two eigenvalues closer than `tol` relative to the largest one.
    pub fn spectrum_simple(&self, tol: f64) -> bool {
        let top = self.omega_sq[self.n() - 1];
        self.min_spectral_gap() > tol * top
    }

    /// Simple spectrum and every `|beta_k| > tol`.
    pub fn in_v_plus(&self, tol: f64) -> bool {
        self.spectrum_simple(tol) && self.min_abs_beta() > tol
    }

    /// The `2N x 2N` generator `A = [[0, I], [-V, 0]]`.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
            for j in 0..n {
                a[(n + i, j)] = -self.v_matrix[(i, j)];
            }
        }
        a
    }
}

/// Tridiagonal chain with 2 on the diagonal and -1 beside it.
pub fn harmonic_chain(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Random `Q diag(lambda) Q^T` with `Q` orthogonalised from standard normal
/// draws and `lambda` uniform in `eig_range`. Deterministic in `seed`.
pub fn random_spd(n: usize, seed: u64, eig_range: (f64, f64)) -> DMatrix<f64> {
    let (lo, hi) = eig_range;
    assert!(
        lo > 0.0 && hi >= lo && hi.is_finite(),
        "eigenvalue range must lie in (0, inf)"
    );
    let mut rng = stream_rng(seed, 0);
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let u = Uniform::new_inclusive(lo, hi).expect("valid range");
    let lambda: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
    let v: DMatrix<f64> = &q * DMatrix::from_diagonal(&DVector::from_vec(lambda)) * q.transpose();
    (&v + v.transpose()) * 0.5
}

/// Dimension of the mixing subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingDimension {
    /// Numerical rank of the Krylov family `{A^k g_1}`.
    pub krylov_rank: usize,
    /// `2 * #{k : |beta_k| > tol}`; meaningful only under a simple spectrum.
    pub beta_count: usize,
    pub spectrum_simple: bool,
}

/// Rank of `span{A^k g_1 : k = 0..2N-1}` with `g_1 = (0, e_1)`.
///
/// The span is grown by orthogonalised Arnoldi steps; growth stops when the
/// new direction falls below `tol` relative to its length before projection.
pub fn mixing_dimension(spec: &SystemSpec, tol: f64) -> MixingDimension {
    let n = spec.n();
    let a = spec.generator();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(2 * n);
    let mut g1 = DVector::zeros(2 * n);
    g1[n] = 1.0;
    basis.push(g1);
    while basis.len() < 2 * n {
        let mut w = &a * basis.last().expect("non-empty");
        let before = w.norm();
        if before == 0.0 {
            break;
        }
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let after = w.norm();
        if after <= tol * before {
            break;
        }
        basis.push(w / after);
    }
    let beta_count = 2 * spec.beta().iter().filter(|b| b.abs() > tol).count();
    MixingDimension {
        krylov_rank: basis.len(),
        beta_count,
        spectrum_simple: spec.spectrum_simple(tol),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Independence {
    IndependentUpToBound,
    Dependent,
    Inconclusive,
}

/// Outcome of the admissibility checks on a [`SystemSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub in_v_plus: bool,
    pub min_abs_beta: f64,
    pub spectrum_simple: bool,
    pub independence: Independence,
    /// Integer vector `n` with `sum n_k omega_k^2 ~ 0`, when one was found.
    pub relation: Option<Vec<i64>>,
    pub coeff_bound: u32,
    pub mixing_dim: usize,
}

/// Check membership in the admissible class and search for small integer
/// relations between the squared frequencies.
///
/// Relations are searched shell by shell in `max |n_k|`, so the first one
/// reported has the smallest possible coefficient bound. Sign is fixed by
/// making the first nonzero entry positive.
pub fn check_admissible(spec: &SystemSpec, tol: f64, coeff_bound: u32) -> AdmissibilityReport {
    let spectrum_simple = spec.spectrum_simple(tol);
    let min_abs_beta = spec.min_abs_beta();
    let mixing = mixing_dimension(spec, tol);

    let n = spec.n();
    let width = 2 * u64::from(coeff_bound) + 1;
    let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(width));
    let (independence, relation) = match total {
        Some(t) if t <= RELATION_SEARCH_CAP => match find_relation(spec.omega_sq(), tol, coeff_bound) {
            Some(rel) => (Independence::Dependent, Some(rel)),
            None => (Independence::IndependentUpToBound, None),
        },
        _ => (Independence::Inconclusive, None),
    };

    AdmissibilityReport {
        in_v_plus: spectrum_simple && min_abs_beta > tol,
        min_abs_beta,
        spectrum_simple,
        independence,
        relation,
        coeff_bound,
        mixing_dim: mixing.krylov_rank,
    }
}

fn find_relation(values: &[f64], tol: f64, bound: u32) -> Option<Vec<i64>> {
    let bound = i64::from(bound);
    for shell in 1..=bound {
        let mut v = vec![-shell; values.len()];
        loop {
            let on_shell = v.iter().any(|x| x.abs() == shell);
            let canonical = v.iter().find(|x| **x != 0).is_some_and(|x| *x > 0);
            if on_shell && canonical {
                let (sum, weight) = v.iter().zip(values).fold((0.0, 0.0), |(s, w), (&c, &x)| {
                    let c = c as f64;
                    (s + c * x, w + c.abs() * x)
                });
                if sum.abs() < tol * weight {
                    return Some(v);
                }
            }
            if !advance(&mut v, -shell, shell) {
                break;
            }
        }
    }
    None
}

/// Odometer step over `[lo, hi]^n`, last index fastest.
fn advance(v: &mut [i64], lo: i64, hi: i64) -> bool {
    for x in v.iter_mut().rev() {
        if *x < hi {
            *x += 1;
            return true;
        }
        *x = lo;
    }
    false
}
