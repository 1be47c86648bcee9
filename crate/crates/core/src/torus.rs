//! Dynamics on the space of invariant tori.
//!
//! A flip at a moment when the momenta are `p` moves the state from the torus
//! `r` to the torus `Psi(r, p)` with
//!
//! ```text
//! Psi_k^2 = r_k^2 + 4 p_1^2 beta_k^2 - 4 p_1 beta_k p~_k,   p_1 = sum beta_k p~_k
//! ```
//!
//! and `p` ranges over the cube `|p~_k| <= r_k`. The torus `r* = |beta|` holds the
//! marked-momentum state. [`optimal_flip_momentum`] picks the point of the cube
//! that shrinks the distance to `r*` by the factor `1 - c(r)` exactly.
//!
//! Everything here works on the unit surface `sum r_k^2 = 1`; callers on other
//! energy surfaces rescale radii by `1 / sqrt(2h)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::TorusVector;
use crate::model::SystemSpec;

/// Overlaps at or below this are treated as zero.
pub const BETA_TOL: f64 = 1e-9;
/// `Psi_k^2` values in `[-CLAMP_TOL, 0)` are roundoff and clamp to zero.
pub const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TorusError {
    #[error("some mode does not see the flipped particle (min |beta| = {min_abs_beta:e})")]
    NotInVPlus { min_abs_beta: f64 },
    #[error("momentum lies outside the torus cube: mode {mode} exceeds its radius by {margin:e}")]
    MomentumOutsideCube { mode: usize, margin: f64 },
    #[error("mode {mode}: Psi^2 = {value:e} is negative beyond roundoff")]
    NegativeRadicand { mode: usize, value: f64 },
    #[error("torus is not on the unit surface (sum r^2 = {0})")]
    NotNormalized(f64),
    #[error("expected {expected} radii, got {got}")]
    WrongDimension { expected: usize, got: usize },
}

/// Shape of a torus relative to `r*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusMetrics {
    /// `gamma_k = r_k / |beta_k|`.
    pub gamma: Vec<f64>,
    /// `A = min gamma`.
    pub a_val: f64,
    /// `B = max gamma`.
    pub b_val: f64,
    /// `Delta = B^2 - A^2`.
    pub delta: f64,
    /// `D = B - A`.
    pub d_val: f64,
    /// `c = 1 / max(1, D^2)`.
    pub c_val: f64,
    /// Lowest index attaining `A`.
    pub argmin: usize,
    /// Lowest index attaining `B`.
    pub argmax: usize,
}

/// `rho(r, r') = sum |r_k^2 - r'_k^2|`.
pub fn rho(a: &TorusVector, b: &TorusVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x * x - y * y).abs())
        .sum()
}

/// The torus `(|beta_1|, ..., |beta_N|)` through the marked-momentum state.
pub fn r_star(spec: &SystemSpec) -> TorusVector {
    TorusVector::new(spec.beta().iter().map(|b| b.abs()).collect()).expect("finite")
}

fn require_v_plus(spec: &SystemSpec) -> Result<(), TorusError> {
    let min_abs_beta = spec.min_abs_beta();
    if min_abs_beta > BETA_TOL {
        Ok(())
    } else {
        Err(TorusError::NotInVPlus { min_abs_beta })
    }
}

fn require_dim(spec: &SystemSpec, len: usize) -> Result<(), TorusError> {
    if len == spec.n() {
        Ok(())
    } else {
        Err(TorusError::WrongDimension {
            expected: spec.n(),
            got: len,
        })
    }
}

pub fn metrics(spec: &SystemSpec, r: &TorusVector) -> Result<TorusMetrics, TorusError> {
    require_v_plus(spec)?;
    require_dim(spec, r.len())?;
    let gamma: Vec<f64> = r
        .as_slice()
        .iter()
        .zip(spec.beta())
        .map(|(r, b)| r / b.abs())
        .collect();
    let mut argmin = 0;
    let mut argmax = 0;
    for (k, g) in gamma.iter().enumerate() {
        if *g < gamma[argmin] {
            argmin = k;
        }
        if *g > gamma[argmax] {
            argmax = k;
        }
    }
    let a_val = gamma[argmin];
    let b_val = gamma[argmax];
    let d_val = b_val - a_val;
    Ok(TorusMetrics {
        a_val,
        b_val,
        delta: b_val * b_val - a_val * a_val,
        d_val,
        c_val: 1.0 / (d_val * d_val).max(1.0),
        argmin,
        argmax,
        gamma,
    })
}

/// `Delta(r)`, the spread of `r_k^2 / beta_k^2`.
pub fn delta(spec: &SystemSpec, r: &TorusVector) -> Result<f64, TorusError> {
    metrics(spec, r).map(|m| m.delta)
}

/// `f+(x) = (x + sqrt(x^2 + c (1 - x^2))) / 2`, for `0 < c <= 1`.
pub fn f_plus(x: f64, c: f64) -> f64 {
    0.5 * (x + (x * x + c * (1.0 - x * x)).sqrt())
}

/// `f-(x) = (x - sqrt(x^2 + c (1 - x^2))) / 2`, for `0 < c <= 1`.
pub fn f_minus(x: f64, c: f64) -> f64 {
    0.5 * (x - (x * x + c * (1.0 - x * x)).sqrt())
}

/// Is `|p~_k| <= r_k + slack` for every mode?
pub fn cube_contains(r: &TorusVector, p_modal: &[f64], slack: f64) -> bool {
    r.as_slice()
        .iter()
        .zip(p_modal)
        .all(|(r, p)| p.abs() <= r + slack)
}

/// Torus reached by flipping at modal momenta `p_modal`.
pub fn psi_map(spec: &SystemSpec, r: &TorusVector, p_modal: &[f64]) -> Result<TorusVector, TorusError> {
    require_dim(spec, r.len())?;
    require_dim(spec, p_modal.len())?;
    let radii = r.as_slice();
    let scale = radii.iter().fold(1.0f64, |m, x| m.max(*x));
    let slack = 1e-12 * scale;
    let mut worst: Option<(usize, f64)> = None;
    for (k, (rk, pk)) in radii.iter().zip(p_modal).enumerate() {
        let margin = pk.abs() - rk;
        if margin > slack && worst.is_none_or(|(_, m)| margin > m) {
            worst = Some((k, margin));
        }
    }
    if let Some((mode, margin)) = worst {
        return Err(TorusError::MomentumOutsideCube { mode, margin });
    }
    psi_map_unchecked(spec, r, p_modal)
}

/// [`psi_map`] without the cube-membership check. Used by searches that
/// evaluate real trajectory momenta, which lie in the cube by construction.
pub fn psi_map_unchecked(
    spec: &SystemSpec,
    r: &TorusVector,
    p_modal: &[f64],
) -> Result<TorusVector, TorusError> {
    let beta = spec.beta();
    let p1: f64 = beta.iter().zip(p_modal).map(|(b, p)| b * p).sum();
    let floor = -CLAMP_TOL * r.norm_sq().max(1.0);
    let mut out = Vec::with_capacity(r.len());
    for (k, ((rk, bk), pk)) in r.as_slice().iter().zip(beta).zip(p_modal).enumerate() {
        let sq = rk * rk + 4.0 * p1 * p1 * bk * bk - 4.0 * p1 * bk * pk;
        if sq < floor {
            return Err(TorusError::NegativeRadicand { mode: k, value: sq });
        }
        out.push(sq.max(0.0).sqrt());
    }
    Ok(TorusVector::new(out).expect("non-negative"))
}

/// Modal momenta `p~'` in the cube of `r` whose flip moves every
/// `r_k^2` a fraction `c(r)` of the way to `beta_k^2`:
///
/// ```text
/// p~'_k = y beta_k - c (beta_k^2 - r_k^2) / (4 y beta_k),   y = f+(min gamma)
/// ```
///
/// The marked momentum of `p~'` equals `y`.
pub fn optimal_flip_momentum(spec: &SystemSpec, r: &TorusVector) -> Result<Vec<f64>, TorusError> {
    let m = metrics(spec, r)?;
    let norm = r.norm_sq();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(TorusError::NotNormalized(norm));
    }
    let c = m.c_val;
    let y = f_plus(m.a_val, c);
    Ok(r
        .as_slice()
        .iter()
        .zip(spec.beta())
        .map(|(rk, bk)| y * bk - c * (bk * bk - rk * rk) / (4.0 * y * bk))
        .collect())
}

/// Uniform draw from the cube `|p~_k| <= r_k`.
pub fn sample_cube<R: Rng + ?Sized>(r: &TorusVector, rng: &mut R) -> Vec<f64> {
    r.as_slice()
        .iter()
        .map(|rk| {
            let u: f64 = rng.random();
            (2.0 * u - 1.0) * rk
        })
        .collect()
}

/// Uniform point on the unit sphere in `R^n`, folded into the positive orthant.
pub fn random_unit_torus<R: Rng + ?Sized>(n: usize, rng: &mut R) -> TorusVector {
    loop {
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return TorusVector::new(z.iter().map(|x| (x / norm).abs()).collect()).expect("finite");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::harmonic_chain;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn chain2() -> SystemSpec {
        SystemSpec::decompose(harmonic_chain(2), 0.5).unwrap()
    }

    fn tv(r: &[f64]) -> TorusVector {
        TorusVector::new(r.to_vec()).unwrap()
    }

    #[test]
    fn rho_examples() {
        let a = tv(&[1.0, 0.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b = tv(&[h, h]);
        assert_eq!(rho(&a, &a), 0.0);
        assert_abs_diff_eq!(rho(&a, &b), 1.0, epsilon = 1e-15);
        assert_eq!(rho(&a, &b), rho(&b, &a));
    }

    #[test]
    fn metrics_examples() {
        let s = chain2();
        let m = metrics(&s, &r_star(&s)).unwrap();
        for g in &m.gamma {
            assert_abs_diff_eq!(*g, 1.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m.delta, 0.0, epsilon = 1e-15);
        assert_eq!(m.c_val, 1.0);

        let m = metrics(&s, &tv(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(m.gamma[0], 2f64.sqrt(), epsilon = 1e-14);
        assert_eq!(m.gamma[1], 0.0);
        assert_abs_diff_eq!(m.delta, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.d_val, 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.c_val, 0.5, epsilon = 1e-14);
        assert_eq!((m.argmin, m.argmax), (1, 0));

        let one = SystemSpec::decompose(DMatrix::from_element(1, 1, 3.0), 0.5).unwrap();
        let m = metrics(&one, &tv(&[1.0])).unwrap();
        assert_eq!((m.gamma[0], m.delta, m.c_val), (1.0, 0.0, 1.0));
    }

    #[test]
    fn metrics_requires_all_modes_coupled() {
        let s = SystemSpec::decompose(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), 0.5)
            .unwrap();
        assert!(matches!(metrics(&s, &tv(&[1.0, 0.0])), Err(TorusError::NotInVPlus { .. })));
        assert!(optimal_flip_momentum(&s, &tv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn f_pm_examples() {
        for c in [0.1, 0.5, 1.0] {
            assert_abs_diff_eq!(f_plus(1.0, c), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(f_minus(1.0, c), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(f_plus(0.0, c), 0.5 * c.sqrt(), epsilon = 1e-15);
            for x in [-2.0, 0.3, 4.0] {
                assert_abs_diff_eq!(f_plus(x, c) + f_minus(x, c), x, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn psi_map_examples() {
        let s = chain2();
        let r = tv(&[1.0, 0.0]);
        assert_eq!(psi_map(&s, &r, &[0.0, 0.0]).unwrap(), r);
        let out = psi_map(&s, &r, &[0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(out.as_slice()[0], 0.75f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.as_slice()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn psi_map_rejects_momentum_outside_cube() {
        let s = chain2();
        match psi_map(&s, &tv(&[1.0, 0.0]), &[0.5, 0.25]) {
            Err(TorusError::MomentumOutsideCube { mode, margin }) => {
                assert_eq!(mode, 1);
                assert_abs_diff_eq!(margin, 0.25, epsilon = 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn psi_map_flags_negative_radicand() {
        // Off the torus by construction, so the check is reached only when the
        // cube test is skipped.
        let s = chain2();
        let err = psi_map_unchecked(&s, &tv(&[0.1, 0.1]), &[1.0, -0.5]).unwrap_err();
        assert!(matches!(err, TorusError::NegativeRadicand { .. }));
    }

    #[test]
    fn worked_contraction_instance() {
        let s = chain2();
        let r = tv(&[1.0, 0.0]);
        let p = optimal_flip_momentum(&s, &r).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
        let p1: f64 = p.iter().zip(s.beta()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(p1, 0.5 * 0.5f64.sqrt(), epsilon = 1e-15);
        let next = psi_map(&s, &r, &p).unwrap();
        assert_abs_diff_eq!(rho(&r, &r_star(&s)), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho(&next, &r_star(&s)), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(delta(&s, &next).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fixed_point_and_single_mode() {
        let s = chain2();
        let star = r_star(&s);
        let p = optimal_flip_momentum(&s, &star).unwrap();
        for (a, b) in p.iter().zip(s.beta()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        let out = psi_map(&s, &star, &p).unwrap();
        assert_abs_diff_eq!(rho(&out, &star), 0.0, epsilon = 1e-14);

        let one = SystemSpec::decompose(DMatrix::from_element(1, 1, 2.0), 0.5).unwrap();
        let p = optimal_flip_momentum(&one, &tv(&[1.0])).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_map(&one, &tv(&[1.0]), &p).unwrap().as_slice()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn optimal_momentum_needs_unit_surface() {
        let s = chain2();
        assert!(matches!(
            optimal_flip_momentum(&s, &tv(&[2.0, 0.0])),
            Err(TorusError::NotNormalized(_))
        ));
    }

    #[test]
    fn cube_examples() {
        let r = tv(&[0.4, 0.2]);
        assert!(cube_contains(&r, &[0.0, 0.0], 0.0));
        assert!(cube_contains(&r, &[0.4, -0.2], 0.0));
        assert!(!cube_contains(&r, &[0.5, 0.0], 0.0));
    }

    #[test]
    fn sample_cube_contract() {
        let r = tv(&[0.9, 0.3, 0.0]);
        let mut rng = stream_rng(5, 0);
        for _ in 0..10_000 {
            let p = sample_cube(&r, &mut rng);
            assert!(cube_contains(&r, &p, 0.0));
            assert_eq!(p[2], 0.0);
        }
        let a = sample_cube(&r, &mut stream_rng(1, 0));
        let b = sample_cube(&r, &mut stream_rng(1, 0));
        assert_eq!(a, b);
    }
}
