//! Young-Stieltjes integration: left-point 1D sums, 2D sums against the
//! rectangle increments of a covariance model, covariance slice integrals,
//! and the nested 4D sum on the right-hand side of the Skorohod isometry.
//! Left-point evaluation is used throughout; it is what the divergence
//! (non-anticipating) limits converge from.

use crate::error::{Error, Result};
use crate::gaussian::CovModel;
use crate::grid::{PathGrid, Partition};
use crate::rde::MalliavinKernel;

/// Left-point Riemann-Stieltjes sum of f dg over a shared grid of values.
pub fn young_1d(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::DimMismatch {
            context: "young_1d",
            expected: f.len(),
            got: g.len(),
        });
    }
    if f.len() < 2 {
        return Err(Error::Param("young_1d needs at least 2 samples".into()));
    }
    let mut acc = 0.0;
    for i in 0..f.len() - 1 {
        acc += f[i] * (g[i + 1] - g[i]);
    }
    Ok(acc)
}

/// Points at which an integrand is known to vanish. Declared zeros are
/// honored exactly: the evaluator is not called there, so discontinuous
/// factors like 1_{s < t} cannot leak a wrong on-diagonal value into the sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnownZeros {
    None,
    /// f(u, u) = 0; integrands carrying a strict 1_{s < t} factor.
    Diagonal,
    /// f(0, t) = 0.
    SLeftEdge,
}

/// A scalar integrand on [0,T]^2 with an optional known-zero declaration.
pub struct Integrand2D<'a> {
    eval: Box<dyn Fn(f64, f64) -> f64 + Sync + 'a>,
    zeros: KnownZeros,
}

impl<'a> Integrand2D<'a> {
    pub fn new(eval: impl Fn(f64, f64) -> f64 + Sync + 'a) -> Self {
        Self { eval: Box::new(eval), zeros: KnownZeros::None }
    }

    pub fn with_zeros(mut self, zeros: KnownZeros) -> Self {
        self.zeros = zeros;
        self
    }

    #[inline]
    pub fn value(&self, s: f64, t: f64) -> f64 {
        match self.zeros {
            KnownZeros::Diagonal if s == t => 0.0,
            KnownZeros::SLeftEdge if s == 0.0 => 0.0,
            _ => (self.eval)(s, t),
        }
    }
}

/// 2D Young-Stieltjes sum: sum over grid cells of f at the lower-left corner
/// times the covariance rectangle increment of the cell.
pub fn young_2d(
    f: &Integrand2D<'_>,
    r: &CovModel,
    sgrid: &Partition,
    tgrid: &Partition,
) -> Result<f64> {
    for g in [sgrid, tgrid] {
        if g.horizon() > r.horizon {
            return Err(Error::Param(format!(
                "grid horizon {} exceeds model horizon {}",
                g.horizon(),
                r.horizon
            )));
        }
    }
    let su = sgrid.times();
    let tu = tgrid.times();
    let mut acc = 0.0;
    for i in 0..su.len() - 1 {
        for j in 0..tu.len() - 1 {
            let w = f.value(su[i], tu[j]);
            if w != 0.0 {
                let rect = r.r(su[i + 1], tu[j + 1]) - r.r(su[i], tu[j + 1])
                    - r.r(su[i + 1], tu[j])
                    + r.r(su[i], tu[j]);
                acc += w * rect;
            }
        }
    }
    Ok(acc)
}

/// 1D Stieltjes integral of a sampled function against s -> R(t_hi, s) -
/// R(t_lo, s), the covariance slice of the strip [t_lo, t_hi]:
/// sum_k f(s_k) [R(t_hi, s_{k+1}) - R(t_lo, s_{k+1}) - R(t_hi, s_k) + R(t_lo, s_k)].
pub fn young_slice(
    f: &[f64],
    r: &CovModel,
    t_lo: f64,
    t_hi: f64,
    sgrid: &Partition,
) -> Result<f64> {
    if !(t_lo < t_hi) {
        return Err(Error::Param(format!("slice needs t_lo < t_hi, got [{t_lo}, {t_hi}]")));
    }
    if t_hi > r.horizon || sgrid.horizon() > r.horizon {
        return Err(Error::Param("slice outside the model horizon".into()));
    }
    if f.len() != sgrid.len() {
        return Err(Error::DimMismatch {
            context: "young_slice",
            expected: sgrid.len(),
            got: f.len(),
        });
    }
    let su = sgrid.times();
    let mut acc = 0.0;
    for k in 0..su.len() - 1 {
        let inc = r.r(t_hi, su[k + 1]) - r.r(t_lo, su[k + 1]) - r.r(t_hi, su[k])
            + r.r(t_lo, su[k]);
        acc += f[k] * inc;
    }
    Ok(acc)
}

pub const ISOMETRY_GRID_LIMIT: usize = 128;

/// Pathwise value whose expectation is the right-hand side of the
/// Ito-Skorohod isometry:
///
/// ```text
/// sum <Y_s, Y_t> dR(s,t) + sum tr(D_r Y_t . D_q Y_s) dR(s,r) dR(t,q)
/// ```
///
/// evaluated with left-point nested grid sums on the sample's grid. The
/// kernel may be anticipating. Averaging over samples is the caller's job.
pub fn isometry_rhs(y: &PathGrid, dy: &MalliavinKernel, r: &CovModel) -> Result<f64> {
    let grid = &y.grid;
    let n = grid.len();
    if n > ISOMETRY_GRID_LIMIT {
        return Err(Error::TooLarge {
            what: "isometry grid",
            limit: ISOMETRY_GRID_LIMIT,
            got: n,
        });
    }
    if dy.grid().times() != grid.times() {
        return Err(Error::Grid("kernel and path grids differ".into()));
    }
    let d = y.dim();
    if dy.state_dim() != d || dy.driver_dim() != d {
        return Err(Error::DimMismatch {
            context: "isometry_rhs",
            expected: d,
            got: dy.state_dim(),
        });
    }
    if grid.horizon() > r.horizon {
        return Err(Error::Param("grid outside the model horizon".into()));
    }
    let times = grid.times();
    let rect = |a: usize, b: usize| -> f64 {
        r.r(times[a + 1], times[b + 1]) - r.r(times[a], times[b + 1])
            - r.r(times[a + 1], times[b])
            + r.r(times[a], times[b])
    };

    // first term: 2D Young sum of <Y_s, Y_t>
    let mut term1 = 0.0;
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let mut dot = 0.0;
            for c in 0..d {
                dot += y.values[(i, c)] * y.values[(j, c)];
            }
            term1 += dot * rect(i, j);
        }
    }

    // second term: nested 4D sum pairing (s,r) and (t,q)
    let mut rects = vec![0.0; (n - 1) * (n - 1)];
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            rects[a * (n - 1) + b] = rect(a, b);
        }
    }
    let mut term2 = 0.0;
    for i in 0..n - 1 {
        // t index
        for j in 0..n - 1 {
            // q index
            let w_tq = rects[i * (n - 1) + j];
            if w_tq == 0.0 {
                continue;
            }
            for k in 0..n - 1 {
                // s index
                for l in 0..n - 1 {
                    // r index
                    let w_sr = rects[k * (n - 1) + l];
                    if w_sr == 0.0 {
                        continue;
                    }
                    let a = dy.at(i, l); // D_{r_l} Y_{t_i}
                    let b = dy.at(k, j); // D_{q_j} Y_{s_k}
                    let mut tr = 0.0;
                    for p in 0..d {
                        for q in 0..d {
                            tr += a[(p, q)] * b[(q, p)];
                        }
                    }
                    term2 += tr * w_sr * w_tq;
                }
            }
        }
    }
    Ok(term1 + term2)
}
