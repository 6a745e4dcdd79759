//! Variation functionals on sampled paths: 1D p-variation over a sample grid,
//! 2D (rectangular) variation of a covariance-like grid function, and the
//! greedy hitting sequence that counts unit-size variation blocks.
//!
//! All suprema are taken over sub-partitions of the sample grid. For the
//! piecewise-linear interpolant this is exact at level 1; in general it is a
//! lower bound for the continuum supremum.

use crate::error::{Error, Result};
use crate::grid::Partition;
use crate::lift::RoughPath;
use crate::tensor::{group_inv, group_mul, homogeneous_norm};
use ndarray::Array2;

#[inline]
fn pow_p(x: f64, p: f64) -> f64 {
    if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::Param(format!("variation exponent must be >= 1, got {p}")));
    }
    Ok(())
}

/// Raw supremum of sum |increment|^p over sub-partitions of 0..n-1, where
/// `dist(m, j)` is the increment size between sample m and sample j.
/// Returns the p-th power (not the norm). O(n^2).
fn p_var_power<D: Fn(usize, usize) -> f64>(n: usize, p: f64, dist: D) -> f64 {
    let mut cum = vec![0.0f64; n];
    for j in 1..n {
        let mut best = f64::NEG_INFINITY;
        for m in 0..j {
            let c = cum[m] + pow_p(dist(m, j), p);
            if c > best {
                best = c;
            }
        }
        cum[j] = best;
    }
    cum[n - 1]
}

/// p-variation norm of a sequence of points in a metric space:
/// (sup over sub-partitions of sum dist^p)^(1/p), exact over the sample grid.
pub fn p_variation_1d<T, D>(samples: &[T], p: f64, dist: D) -> Result<f64>
where
    D: Fn(&T, &T) -> f64,
{
    check_p(p)?;
    if samples.len() < 2 {
        return Err(Error::Param(format!(
            "p-variation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let raw = p_var_power(samples.len(), p, |m, j| dist(&samples[m], &samples[j]));
    Ok(raw.powf(1.0 / p))
}

/// Convenience wrapper for scalar samples.
pub fn p_variation_scalar(samples: &[f64], p: f64) -> Result<f64> {
    p_variation_1d(samples, p, |a, b| (a - b).abs())
}

/// A scalar function sampled on a rectangular grid, e.g. a covariance
/// R(s, t) tabulated at (sgrid x tgrid).
#[derive(Debug, Clone)]
pub struct GridFunction2D {
    pub sgrid: Partition,
    pub tgrid: Partition,
    /// values[(i, j)] = f(sgrid[i], tgrid[j])
    pub values: Array2<f64>,
}

impl GridFunction2D {
    pub fn new(sgrid: Partition, tgrid: Partition, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != sgrid.len() || values.ncols() != tgrid.len() {
            return Err(Error::DimMismatch {
                context: "GridFunction2D::new",
                expected: sgrid.len(),
                got: values.nrows(),
            });
        }
        Ok(Self { sgrid, tgrid, values })
    }

    pub fn from_fn(sgrid: Partition, tgrid: Partition, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((sgrid.len(), tgrid.len()), |(i, j)| {
            f(sgrid.t(i), tgrid.t(j))
        });
        Self { sgrid, tgrid, values }
    }

    /// Rectangular increment f(s1,t1) - f(s0,t1) - f(s1,t0) + f(s0,t0) over
    /// the index rectangle [i0,i1] x [j0,j1].
    #[inline]
    pub fn rect(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> f64 {
        self.values[(i1, j1)] - self.values[(i0, j1)] - self.values[(i1, j0)]
            + self.values[(i0, j0)]
    }
}

/// Result of a 2D variation computation. `approximate` is set when the joint
/// supremum over both axes was searched heuristically rather than exhaustively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation2D {
    pub value: f64,
    pub approximate: bool,
}

fn obj_2d(f: &GridFunction2D, rows: &[usize], cols: &[usize], p: f64) -> f64 {
    let mut total = 0.0;
    for r in rows.windows(2) {
        for c in cols.windows(2) {
            total += pow_p(f.rect(r[0], r[1], c[0], c[1]).abs(), p);
        }
    }
    total
}

/// All sub-partitions of 0..n-1 (each includes both endpoints), as index lists.
fn all_subpartitions(n: usize) -> Vec<Vec<usize>> {
    let interior = n - 2;
    let mut out = Vec::with_capacity(1 << interior);
    for mask in 0u32..(1u32 << interior) {
        let mut part = Vec::with_capacity(n);
        part.push(0);
        for b in 0..interior {
            if mask & (1 << b) != 0 {
                part.push(b + 1);
            }
        }
        part.push(n - 1);
        out.push(part);
    }
    out
}

/// One sweep of the alternating search: with `fixed` (row blocks) held,
/// choose the column sub-partition maximizing the objective by interval DP.
fn best_cols_given_rows(f: &GridFunction2D, rows: &[usize], m: usize, p: f64, transposed: bool) -> (Vec<usize>, f64) {
    // w(a, c): weight of column block [a, c] against the fixed row blocks
    let weight = |a: usize, c: usize| -> f64 {
        let mut w = 0.0;
        for r in rows.windows(2) {
            let rect = if transposed {
                f.rect(a, c, r[0], r[1])
            } else {
                f.rect(r[0], r[1], a, c)
            };
            w += pow_p(rect.abs(), p);
        }
        w
    };
    let mut best = vec![f64::NEG_INFINITY; m];
    let mut back = vec![0usize; m];
    best[0] = 0.0;
    for c in 1..m {
        for a in 0..c {
            let v = best[a] + weight(a, c);
            if v > best[c] {
                best[c] = v;
                back[c] = a;
            }
        }
    }
    let mut cols = vec![m - 1];
    let mut c = m - 1;
    while c != 0 {
        c = back[c];
        cols.push(c);
    }
    cols.reverse();
    (cols, best[m - 1])
}

fn alternating_2d(f: &GridFunction2D, p: f64, start_full: bool) -> f64 {
    let n = f.sgrid.len();
    let m = f.tgrid.len();
    let mut rows: Vec<usize> = if start_full { (0..n).collect() } else { vec![0, n - 1] };
    let mut value = f64::NEG_INFINITY;
    for _ in 0..16 {
        let (cols, _) = best_cols_given_rows(f, &rows, m, p, false);
        let (new_rows, v) = best_cols_given_rows(f, &cols, n, p, true);
        rows = new_rows;
        if v <= value + 1e-15 {
            value = v.max(value);
            break;
        }
        value = v;
    }
    value
}

/// Evenly spaced index subset of size at most `cap`, always keeping endpoints.
fn thin_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..cap)
        .map(|k| (k as f64 * (n - 1) as f64 / (cap - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// 2D p-variation norm over grid-aligned sub-partitions:
/// (sup sum |rect increment|^p)^(1/p).
///
/// Exhaustive (exact) when both axes have at most 11 points; otherwise an
/// alternating per-axis interval DP is iterated to a stationary point and the
/// result is flagged approximate. Axes beyond 512 points are thinned to 512
/// evenly spaced samples first.
pub fn p_variation_2d_grid(f: &GridFunction2D, p: f64) -> Result<Variation2D> {
    check_p(p)?;
    let n = f.sgrid.len();
    let m = f.tgrid.len();

    const EXHAUSTIVE_MAX: usize = 11;
    const DP_MAX: usize = 512;

    if n <= EXHAUSTIVE_MAX && m <= EXHAUSTIVE_MAX {
        let row_parts = all_subpartitions(n);
        let col_parts = all_subpartitions(m);
        let mut best = 0.0f64;
        for rows in &row_parts {
            for cols in &col_parts {
                let v = obj_2d(f, rows, cols, p);
                if v > best {
                    best = v;
                }
            }
        }
        return Ok(Variation2D { value: best.powf(1.0 / p), approximate: false });
    }

    let thinned;
    let g = if n > DP_MAX || m > DP_MAX {
        let ri = thin_indices(n, DP_MAX);
        let ci = thin_indices(m, DP_MAX);
        let values = Array2::from_shape_fn((ri.len(), ci.len()), |(a, b)| {
            f.values[(ri[a], ci[b])]
        });
        let sgrid = Partition::new(ri.iter().map(|&i| f.sgrid.t(i)).collect())?;
        let tgrid = Partition::new(ci.iter().map(|&j| f.tgrid.t(j)).collect())?;
        thinned = GridFunction2D { sgrid, tgrid, values };
        &thinned
    } else {
        f
    };

    let v1 = alternating_2d(g, p, true);
    let v2 = alternating_2d(g, p, false);
    Ok(Variation2D { value: v1.max(v2).max(0.0).powf(1.0 / p), approximate: true })
}

/// Greedy hitting sequence of a rough path: tau_0 = 0 and tau_{i+1} is the
/// first grid time u with ||x||^p_{p-var;[tau_i, u]} >= beta. Hits at the
/// final time are capped and not appended, so every returned time is < T and
/// `count = tau.len() - 1` matches the block count N_beta. Increment size is
/// the homogeneous norm of the group increment.
pub fn greedy_sequence(x: &RoughPath, beta: f64, p: f64) -> Result<(Vec<f64>, usize)> {
    greedy_sequence_by(x.grid().times(), x.points(), beta, p, |a, b| {
        homogeneous_norm(&group_mul(&group_inv(a), b).expect("same dimension"))
    })
}

/// Generic greedy sequence over samples in a metric space; see [`greedy_sequence`].
pub fn greedy_sequence_by<T, D>(
    times: &[f64],
    points: &[T],
    beta: f64,
    p: f64,
    dist: D,
) -> Result<(Vec<f64>, usize)>
where
    D: Fn(&T, &T) -> f64,
{
    check_p(p)?;
    if !(beta > 0.0) {
        return Err(Error::Param(format!("greedy threshold must be > 0, got {beta}")));
    }
    if times.len() != points.len() || times.len() < 2 {
        return Err(Error::Param(format!(
            "greedy sequence needs matching times/points with >= 2 samples, got {}/{}",
            times.len(),
            points.len()
        )));
    }
    let n = times.len();
    let mut taus = vec![times[0]];
    let mut lo = 0usize;
    'outer: loop {
        // extend the p-variation DP sample by sample until the power hits beta
        let mut cum = vec![0.0f64];
        for u in lo + 1..n {
            let k = u - lo;
            let mut best = f64::NEG_INFINITY;
            for m in 0..k {
                let c = cum[m] + pow_p(dist(&points[lo + m], &points[u]), p);
                if c > best {
                    best = c;
                }
            }
            cum.push(best);
            if best >= beta {
                if u == n - 1 {
                    break 'outer; // capped at the horizon
                }
                taus.push(times[u]);
                lo = u;
                continue 'outer;
            }
        }
        break;
    }
    let count = taus.len() - 1;
    Ok((taus, count))
}
