//! One-dimensional minimisation over time for oscillatory objectives.
//!
//! A uniform grid is evaluated in parallel, the best local minima of the grid
//! are polished by golden-section search, and ties go to the earliest time.

use rayon::prelude::*;

/// Number of grid minima polished per window.
pub const REFINE_CANDIDATES: usize = 8;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// A time and the objective value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub t: f64,
    pub value: f64,
}

/// Objective values on `count` evenly spaced points of `[a, b]`.
pub fn grid_values<F>(f: &F, a: f64, b: f64, count: usize) -> Vec<f64>
where
    F: Fn(f64) -> f64 + Sync,
{
    let step = grid_step(a, b, count);
    (0..count)
        .into_par_iter()
        .map(|i| f(a + i as f64 * step))
        .collect()
}

fn grid_step(a: f64, b: f64, count: usize) -> f64 {
    if count > 1 {
        (b - a) / (count - 1) as f64
    } else {
        0.0
    }
}

/// Golden-section search on `[lo, hi]` down to bracket width `tol`.
pub fn golden<F>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> Minimum
where
    F: Fn(f64) -> f64,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let tol = tol.max(f64::EPSILON * hi.abs().max(1.0));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        Minimum { t: x1, value: f1 }
    } else {
        Minimum { t: x2, value: f2 }
    }
}

/// Indices of grid local minima, best first, ties by index.
fn local_minima(values: &[f64], keep: usize) -> Vec<usize> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] <= values[i - 1];
            let right = i + 1 == n || values[i] <= values[i + 1];
            left && right
        })
        .collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    idx.truncate(keep);
    idx
}

/// Grid scan of `[a, b]` followed by golden refinement of the best grid minima.
///
/// Returns every polished candidate sorted by time.
pub fn scan_window<F>(f: &F, a: f64, b: f64, count: usize, tol: f64) -> Vec<Minimum>
where
    F: Fn(f64) -> f64 + Sync,
{
    let count = count.max(2);
    let values = grid_values(f, a, b, count);
    let step = grid_step(a, b, count);
    let mut out: Vec<Minimum> = local_minima(&values, REFINE_CANDIDATES)
        .into_iter()
        .map(|i| {
            let t = a + i as f64 * step;
            let grid_min = Minimum { t, value: values[i] };
            let lo = (t - step).max(a);
            let hi = (t + step).min(b);
            let polished = golden(f, lo, hi, tol);
            if polished.value < grid_min.value {
                polished
            } else {
                grid_min
            }
        })
        .collect();
    out.sort_by(|x, y| x.t.total_cmp(&y.t));
    out
}

/// Smallest objective value over `[a, b]`; earliest time on ties.
pub fn minimize<F>(f: &F, a: f64, b: f64, count: usize, tol: f64) -> Minimum
where
    F: Fn(f64) -> f64 + Sync,
{
    best_of(&scan_window(f, a, b, count, tol)).expect("at least one grid minimum")
}

fn best_of(cands: &[Minimum]) -> Option<Minimum> {
    cands
        .iter()
        .copied()
        .reduce(|best, c| if c.value < best.value { c } else { best })
}

/// Earliest time in `[a, b]` where the objective drops to `target`, scanning
/// windows of `window` time units on a grid of spacing `step`.
///
/// Returns `Ok` with the first hit, or `Err` with the best value seen.
pub fn first_below<F>(
    f: &F,
    a: f64,
    b: f64,
    window: f64,
    step: f64,
    target: f64,
) -> Result<Minimum, Minimum>
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut best = Minimum {
        t: a,
        value: f(a),
    };
    if best.value <= target {
        return Ok(best);
    }
    let mut lo = a;
    while lo < b {
        let hi = (lo + window).min(b);
        let count = ((hi - lo) / step).ceil() as usize + 1;
        let tol = 1e-3 * step;
        let cands = scan_window(f, lo, hi, count, tol);
        if let Some(hit) = cands.iter().find(|c| c.value <= target) {
            return Ok(*hit);
        }
        if let Some(c) = best_of(&cands) {
            if c.value < best.value {
                best = c;
            }
        }
        lo = hi;
    }
    Err(best)
}
