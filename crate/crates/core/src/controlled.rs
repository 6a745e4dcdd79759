//! Controlled rough paths on a coarse integration grid: a matrix-valued path
//! together with its Gubinelli derivative against a reference rough path, the
//! compensated rough integral, Leibniz products, and composition with smooth
//! maps.
//!
//! Shapes: `value[i]` is (m x n); `gubinelli[i]` is (m x n x d) with the last
//! axis the driver direction, i.e. gub[a, b, k] is the sensitivity of
//! value[a, b] to driver component k. Row integrands against dX use n = d;
//! state-like column paths use n = 1.

use crate::error::{Error, Result};
use crate::grid::Partition;
use crate::lift::RoughPath;
use crate::variation::p_variation_1d;
use ndarray::{Array1, Array2, Array3};

#[derive(Debug, Clone)]
pub struct ControlledPath {
    pub grid: Partition,
    pub value: Vec<Array2<f64>>,
    pub gubinelli: Vec<Array3<f64>>,
    /// driver dimension the Gubinelli derivative contracts against
    d: usize,
}

impl ControlledPath {
    /// Build and validate against the reference rough path. Reference
    /// identity is structural: the grid must be a subset of the rough path's
    /// grid and the derivative's driver axis must match its dimension.
    pub fn new(
        grid: Partition,
        value: Vec<Array2<f64>>,
        gubinelli: Vec<Array3<f64>>,
        x: &RoughPath,
    ) -> Result<Self> {
        grid.indices_in(x.grid()).map_err(|_| {
            Error::Grid("controlled path grid is not a subset of the rough path grid".into())
        })?;
        if value.len() != grid.len() || gubinelli.len() != grid.len() {
            return Err(Error::Grid(format!(
                "controlled path needs one value and one derivative per grid point ({} points, {} values, {} derivatives)",
                grid.len(),
                value.len(),
                gubinelli.len()
            )));
        }
        let (m, n) = (value[0].nrows(), value[0].ncols());
        let d = x.dim();
        for (v, g) in value.iter().zip(&gubinelli) {
            let ok = v.nrows() == m
                && v.ncols() == n
                && g.shape() == [m, n, d];
            if !ok {
                return Err(Error::DimMismatch {
                    context: "ControlledPath::new",
                    expected: m,
                    got: v.nrows(),
                });
            }
        }
        Ok(Self { grid, value, gubinelli, d })
    }

    pub fn rows(&self) -> usize {
        self.value[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.value[0].ncols()
    }

    pub fn driver_dim(&self) -> usize {
        self.d
    }

    /// The reference path itself as a row integrand: value X_t as (1 x d),
    /// derivative the identity pairing.
    pub fn identity_row(x: &RoughPath, grid: &Partition) -> Result<Self> {
        let d = x.dim();
        let idx = grid.indices_in(x.grid())?;
        let mut value = Vec::with_capacity(idx.len());
        let mut gub = Vec::with_capacity(idx.len());
        for &i in &idx {
            let mut v = Array2::zeros((1, d));
            v.row_mut(0).assign(&x.points()[i].level1);
            value.push(v);
            let mut g = Array3::zeros((1, d, d));
            for j in 0..d {
                g[(0, j, j)] = 1.0;
            }
            gub.push(g);
        }
        ControlledPath::new(grid.clone(), value, gub, x)
    }

    /// Two-parameter remainder R_{t_i, t_k} = value_{i,k} - gub_i . x1_{i,k}
    /// of the controlled decomposition, as a matrix.
    pub fn remainder(&self, x: &RoughPath, i: usize, k: usize) -> Result<Array2<f64>> {
        let x1 = x.increment(self.grid.t(i), self.grid.t(k))?.level1;
        let mut r = &self.value[k] - &self.value[i];
        let g = &self.gubinelli[i];
        for a in 0..r.nrows() {
            for b in 0..r.ncols() {
                let mut drift = 0.0;
                for kk in 0..self.d {
                    drift += g[(a, b, kk)] * x1[kk];
                }
                r[(a, b)] -= drift;
            }
        }
        Ok(r)
    }
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compensated rough integral of a row integrand over [s, t] on the
/// controlled path's grid: sum of value_i . x1 + gub_i : X2 per interval.
/// Returns one scalar per integrand row.
pub fn rough_integral(
    phi: &ControlledPath,
    x: &RoughPath,
    s: f64,
    t: f64,
) -> Result<Array1<f64>> {
    if phi.cols() != x.dim() || phi.driver_dim() != x.dim() {
        return Err(Error::DimMismatch {
            context: "rough_integral",
            expected: x.dim(),
            got: phi.cols(),
        });
    }
    let i0 = phi
        .grid
        .index_of(s)
        .ok_or_else(|| Error::Grid(format!("time {s} not on the integrand grid")))?;
    let i1 = phi
        .grid
        .index_of(t)
        .ok_or_else(|| Error::Grid(format!("time {t} not on the integrand grid")))?;
    if i0 > i1 {
        return Err(Error::Grid(format!("rough_integral needs s <= t, got {s} > {t}")));
    }
    let d = x.dim();
    let m = phi.rows();
    let mut acc = Array1::zeros(m);
    for i in i0..i1 {
        let inc = x.increment(phi.grid.t(i), phi.grid.t(i + 1))?;
        let v = &phi.value[i];
        let g = &phi.gubinelli[i];
        for a in 0..m {
            let mut z = 0.0;
            for j in 0..d {
                z += v[(a, j)] * inc.level1[j];
                for k in 0..d {
                    // int (x_k - x_k(s)) dx_j is level2[k][j]
                    z += g[(a, j, k)] * inc.level2[(k, j)];
                }
            }
            acc[a] += z;
        }
    }
    Ok(acc)
}

/// Indefinite rough integral as a controlled path: value the running integral
/// (m x 1 column), derivative the integrand's value.
pub fn integral_path(phi: &ControlledPath, x: &RoughPath) -> Result<ControlledPath> {
    let m = phi.rows();
    let d = x.dim();
    let n = phi.grid.len();
    let mut value = Vec::with_capacity(n);
    let mut gub = Vec::with_capacity(n);
    let mut running = Array1::zeros(m);
    for i in 0..n {
        if i > 0 {
            let inc = rough_integral(phi, x, phi.grid.t(i - 1), phi.grid.t(i))?;
            running = &running + &inc;
        }
        let mut v = Array2::zeros((m, 1));
        v.column_mut(0).assign(&running);
        value.push(v);
        let mut g = Array3::zeros((m, 1, d));
        for a in 0..m {
            for k in 0..d {
                g[(a, 0, k)] = phi.value[i][(a, k)];
            }
        }
        gub.push(g);
    }
    ControlledPath::new(phi.grid.clone(), value, gub, x)
}

/// Pointwise product of two controlled paths: value the matrix product,
/// derivative by the Leibniz rule (phi psi)' = phi' psi + phi psi'.
pub fn leibniz(phi: &ControlledPath, psi: &ControlledPath) -> Result<ControlledPath> {
    if phi.grid.times() != psi.grid.times() || phi.d != psi.d {
        return Err(Error::Grid("leibniz needs matching grids and driver".into()));
    }
    if phi.cols() != psi.rows() {
        return Err(Error::DimMismatch {
            context: "leibniz",
            expected: phi.cols(),
            got: psi.rows(),
        });
    }
    let (m, n, p) = (phi.rows(), phi.cols(), psi.cols());
    let d = phi.d;
    let len = phi.grid.len();
    let mut value = Vec::with_capacity(len);
    let mut gub = Vec::with_capacity(len);
    for i in 0..len {
        value.push(phi.value[i].dot(&psi.value[i]));
        let mut g = Array3::zeros((m, p, d));
        for a in 0..m {
            for c in 0..p {
                for k in 0..d {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += phi.gubinelli[i][(a, b, k)] * psi.value[i][(b, c)]
                            + phi.value[i][(a, b)] * psi.gubinelli[i][(b, c, k)];
                    }
                    g[(a, c, k)] = s;
                }
            }
        }
        gub.push(g);
    }
    Ok(ControlledPath { grid: phi.grid.clone(), value, gubinelli: gub, d })
}

/// A map R^e -> R^m with two derivatives, for composing with controlled
/// column paths.
pub struct SmoothMap<'a> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub eval: Box<dyn Fn(&Array1<f64>) -> Array1<f64> + Sync + 'a>,
    /// Jacobian (m x e)
    pub d1: Box<dyn Fn(&Array1<f64>) -> Array2<f64> + Sync + 'a>,
    /// Hessian stack (m x e x e)
    pub d2: Box<dyn Fn(&Array1<f64>) -> Array3<f64> + Sync + 'a>,
}

/// Compose a smooth map with a controlled column path: value phi(y),
/// derivative the chain rule d phi(y) y'.
pub fn compose_smooth(map: &SmoothMap<'_>, y: &ControlledPath) -> Result<ControlledPath> {
    if y.cols() != 1 || y.rows() != map.in_dim {
        return Err(Error::DimMismatch {
            context: "compose_smooth",
            expected: map.in_dim,
            got: y.rows(),
        });
    }
    let d = y.d;
    let len = y.grid.len();
    let mut value = Vec::with_capacity(len);
    let mut gub = Vec::with_capacity(len);
    for i in 0..len {
        let yi = y.value[i].column(0).to_owned();
        let v = (map.eval)(&yi);
        let jac = (map.d1)(&yi);
        if v.len() != map.out_dim || jac.nrows() != map.out_dim || jac.ncols() != map.in_dim {
            return Err(Error::DimMismatch {
                context: "compose_smooth map shapes",
                expected: map.out_dim,
                got: v.len(),
            });
        }
        let mut vm = Array2::zeros((map.out_dim, 1));
        vm.column_mut(0).assign(&v);
        value.push(vm);
        let mut g = Array3::zeros((map.out_dim, 1, d));
        for a in 0..map.out_dim {
            for k in 0..d {
                let mut s = 0.0;
                for b in 0..map.in_dim {
                    s += jac[(a, b)] * y.gubinelli[i][(b, 0, k)];
                }
                g[(a, 0, k)] = s;
            }
        }
        gub.push(g);
    }
    Ok(ControlledPath { grid: y.grid.clone(), value, gubinelli: gub, d })
}

/// Supremum-plus-variation norm pieces of a controlled path at exponent p:
/// sup |value|, p-variation of the derivative, and sup and p/2-variation of
/// the two-parameter remainder. Returned as their sum; the split is a
/// diagnostic, not a claim about which part a given bound uses.
pub fn controlled_norm(phi: &ControlledPath, x: &RoughPath, p: f64) -> Result<f64> {
    let n = phi.grid.len();
    let sup_v = phi.value.iter().map(frob).fold(0.0, f64::max);
    let gub_flat: Vec<Array2<f64>> = phi
        .gubinelli
        .iter()
        .map(|g| {
            let (m, nn, d) = (g.shape()[0], g.shape()[1], g.shape()[2]);
            let mut f = Array2::zeros((m * nn, d));
            for a in 0..m {
                for b in 0..nn {
                    for k in 0..d {
                        f[(a * nn + b, k)] = g[(a, b, k)];
                    }
                }
            }
            f
        })
        .collect();
    let gub_var = p_variation_1d(&gub_flat, p, |a, b| frob(&(a - b)))?;
    let sup_g = gub_flat.iter().map(frob).fold(0.0, f64::max);
    let mut sup_r = 0.0f64;
    let mut rems: Vec<Vec<f64>> = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in i + 1..n {
            let r = frob(&phi.remainder(x, i, k)?);
            rems[i][k] = r;
            sup_r = sup_r.max(r);
        }
    }
    // sup over partitions of sum |R|^{p/2}, then the 2/p root; the exponent
    // may drop below 1 for p < 2, where the finest partition dominates.
    let q = p / 2.0;
    let mut cum = vec![0.0f64; n];
    for j in 1..n {
        let mut best = f64::NEG_INFINITY;
        for m in 0..j {
            let c = cum[m] + rems[m][j].powf(q);
            if c > best {
                best = c;
            }
        }
        cum[j] = best;
    }
    let rem_var = cum[n - 1].powf(1.0 / q);
    Ok(sup_v + sup_g + gub_var + sup_r + rem_var)
}
