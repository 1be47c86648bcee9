//! Reference computations that share no code with `vflip-core`.
//!
//! States are flat vectors `x = (q, p)` of length `2N`; the system is given by
//! its coupling matrix `V` alone.

use nalgebra::{DMatrix, DVector};

/// `A = [[0, I], [-V, 0]]`.
pub fn generator(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        for j in 0..n {
            a[(n + i, j)] = -v[(i, j)];
        }
    }
    a
}

/// Negation of the first momentum.
pub fn flip(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len() / 2;
    let mut y = x.clone();
    y[n] = -y[n];
    y
}

/// `e^{tA} x` through the dense matrix exponential.
pub fn expm_flow(v: &DMatrix<f64>, x: &DVector<f64>, t: f64) -> DVector<f64> {
    (generator(v) * t).exp() * x
}

/// Energy `(p, p)/2 + (q, V q)/2`.
pub fn energy(v: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let n = v.nrows();
    let q = x.rows(0, n);
    let p = x.rows(n, n);
    0.5 * (p.dot(&p) + q.dot(&(v * q)))
}

/// Adaptive Dormand-Prince 5(4) integration of `x' = A x` over `[0, t]`.
pub fn rk45_flow(v: &DMatrix<f64>, x0: &DVector<f64>, t: f64, rtol: f64, atol: f64) -> DVector<f64> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let a = generator(v);
    let sign = if t < 0.0 { -1.0 } else { 1.0 };
    let total = t.abs();
    let mut x = x0.clone();
    let mut s = 0.0;
    let mut h = (total / 100.0).clamp(1e-6, 0.05).min(total);
    while s < total {
        if s + h > total {
            h = total - s;
        }
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for row in A.iter() {
            let mut xi = x.clone();
            for (aij, kj) in row.iter().zip(&k) {
                if *aij != 0.0 {
                    xi.axpy(sign * h * aij, kj, 1.0);
                }
            }
            k.push(&a * xi);
        }
        let mut x5 = x.clone();
        let mut x4 = x.clone();
        for i in 0..7 {
            x5.axpy(sign * h * B5[i], &k[i], 1.0);
            x4.axpy(sign * h * B4[i], &k[i], 1.0);
        }
        let err = (0..x.len())
            .map(|i| {
                let sc = atol + rtol * x[i].abs().max(x5[i].abs());
                ((x5[i] - x4[i]) / sc).powi(2)
            })
            .sum::<f64>()
            .sqrt()
            / (x.len() as f64).sqrt();
        if err <= 1.0 {
            s += h;
            x = x5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    x
}

/// `J(tau_1..tau_k) x = I e^{tau_k A} ... I e^{tau_1 A} x` by matrix exponentials.
pub fn compose(v: &DMatrix<f64>, x: &DVector<f64>, taus: &[f64]) -> DVector<f64> {
    taus.iter().fold(x.clone(), |acc, &t| flip(&expm_flow(v, &acc, t)))
}

/// Columns `d J / d tau_i = J(tau_{i+1}..tau_k) I A e^{tau_i A} psi_{i-1}` with
/// `psi_{i-1} = J(tau_1..tau_{i-1}) x`.
pub fn analytic_jacobian(v: &DMatrix<f64>, x: &DVector<f64>, taus: &[f64]) -> DMatrix<f64> {
    let a = generator(v);
    let k = taus.len();
    let mut out = DMatrix::zeros(x.len(), k);
    for i in 0..k {
        let before = compose(v, x, &taus[..i]);
        let moved = flip(&(&a * expm_flow(v, &before, taus[i])));
        let col = compose(v, &moved, &taus[i + 1..]);
        out.set_column(i, &col);
    }
    out
}
