//! Rough differential equations driven by a step-2 rough path: the Davie
//! one-step scheme, the Jacobian flow and its inverse, Malliavin derivative
//! kernels of the solution, and second-order directional derivatives of the
//! solution map.

use crate::error::{Error, Result};
use crate::grid::{Partition, PathGrid};
use crate::lift::RoughPath;
use crate::tensor::GroupElement;
use ndarray::{Array1, Array2};

/// Tabulated Malliavin derivative kernel on a grid: `at(i, j)` is the (e x d)
/// matrix D_{s_j} Y_{t_i}, the derivative of the state at time t_i with
/// respect to a driver perturbation at time s_j. Nothing here assumes
/// adaptedness: anticipating kernels (nonzero for s_j >= t_i) are legal, as
/// the isometry formula is stated for them too.
#[derive(Debug, Clone)]
pub struct MalliavinKernel {
    grid: Partition,
    e: usize,
    d: usize,
    /// row-major by (i, j)
    mats: Vec<Array2<f64>>,
}

impl MalliavinKernel {
    pub fn from_fn(
        grid: Partition,
        e: usize,
        d: usize,
        mut f: impl FnMut(usize, usize) -> Array2<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        let mut mats = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let m = f(i, j);
                if m.nrows() != e || m.ncols() != d {
                    return Err(Error::DimMismatch {
                        context: "MalliavinKernel::from_fn",
                        expected: e,
                        got: m.nrows(),
                    });
                }
                mats.push(m);
            }
        }
        Ok(Self { grid, e, d, mats })
    }

    pub fn zeros(grid: Partition, e: usize, d: usize) -> Self {
        let n = grid.len();
        Self { grid, e, d, mats: vec![Array2::zeros((e, d)); n * n] }
    }

    /// Kernel constant in both time arguments.
    pub fn constant(grid: Partition, m: Array2<f64>) -> Self {
        let n = grid.len();
        let (e, d) = (m.nrows(), m.ncols());
        Self { grid, e, d, mats: vec![m; n * n] }
    }

    /// D_{s_j} Y_{t_i}
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &Array2<f64> {
        &self.mats[i * self.grid.len() + j]
    }

    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn state_dim(&self) -> usize {
        self.e
    }

    pub fn driver_dim(&self) -> usize {
        self.d
    }
}

/// Driving vector field V: R^e -> R^{e x d} with directional derivatives up
/// to third order. The derivative closures take the base point followed by
/// the state directions, e.g. `d2v(y, w1, w2)` is the second derivative of V
/// at y in directions w1, w2, again an (e x d) matrix.
pub struct VectorField<'a> {
    pub e: usize,
    pub d: usize,
    /// declared smoothness order (how many of the derivative closures are
    /// exact rather than identically zero placeholders)
    pub order: usize,
    v: Box<dyn Fn(&Array1<f64>) -> Array2<f64> + Sync + 'a>,
    dv: Box<dyn Fn(&Array1<f64>, &Array1<f64>) -> Array2<f64> + Sync + 'a>,
    d2v: Box<dyn Fn(&Array1<f64>, &Array1<f64>, &Array1<f64>) -> Array2<f64> + Sync + 'a>,
    d3v: Box<
        dyn Fn(&Array1<f64>, &Array1<f64>, &Array1<f64>, &Array1<f64>) -> Array2<f64> + Sync + 'a,
    >,
}

impl<'a> VectorField<'a> {
    #[allow(clippy::type_complexity)]
    pub fn new(
        e: usize,
        d: usize,
        order: usize,
        v: Box<dyn Fn(&Array1<f64>) -> Array2<f64> + Sync + 'a>,
        dv: Box<dyn Fn(&Array1<f64>, &Array1<f64>) -> Array2<f64> + Sync + 'a>,
        d2v: Box<dyn Fn(&Array1<f64>, &Array1<f64>, &Array1<f64>) -> Array2<f64> + Sync + 'a>,
        d3v: Box<
            dyn Fn(&Array1<f64>, &Array1<f64>, &Array1<f64>, &Array1<f64>) -> Array2<f64>
                + Sync
                + 'a,
        >,
    ) -> Self {
        Self { e, d, order, v, dv, d2v, d3v }
    }

    pub fn eval(&self, y: &Array1<f64>) -> Array2<f64> {
        (self.v)(y)
    }

    pub fn d1(&self, y: &Array1<f64>, w: &Array1<f64>) -> Array2<f64> {
        (self.dv)(y, w)
    }

    pub fn d2(&self, y: &Array1<f64>, w1: &Array1<f64>, w2: &Array1<f64>) -> Array2<f64> {
        (self.d2v)(y, w1, w2)
    }

    pub fn d3(
        &self,
        y: &Array1<f64>,
        w1: &Array1<f64>,
        w2: &Array1<f64>,
        w3: &Array1<f64>,
    ) -> Array2<f64> {
        (self.d3v)(y, w1, w2, w3)
    }

    /// The e x e matrix N_j(y) with N_j(y) w = [dV(y)(w)] e_j, one column per
    /// basis direction. `jacs` must hold d1(y, e_a) for a = 0..e.
    fn n_mat(&self, jacs: &[Array2<f64>], j: usize) -> Array2<f64> {
        let mut n = Array2::zeros((self.e, self.e));
        for (a, da) in jacs.iter().enumerate() {
            for r in 0..self.e {
                n[(r, a)] = da[(r, j)];
            }
        }
        n
    }

    fn basis_jacobians(&self, y: &Array1<f64>) -> Vec<Array2<f64>> {
        (0..self.e)
            .map(|a| {
                let mut ea = Array1::zeros(self.e);
                ea[a] = 1.0;
                self.d1(y, &ea)
            })
            .collect()
    }

    /// Max Frobenius mismatch between a finite difference of V and the
    /// declared first derivative, at step h along direction w.
    pub fn probe_d1(&self, y: &Array1<f64>, w: &Array1<f64>, h: f64) -> f64 {
        let bumped = y + &(w * h);
        let fd = (self.eval(&bumped) - self.eval(y)) / h;
        let an = self.d1(y, w);
        (&fd - &an).iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    pub fn zero(e: usize, d: usize) -> Self {
        Self::new(
            e,
            d,
            usize::MAX,
            Box::new(move |_| Array2::zeros((e, d))),
            Box::new(move |_, _| Array2::zeros((e, d))),
            Box::new(move |_, _, _| Array2::zeros((e, d))),
            Box::new(move |_, _, _, _| Array2::zeros((e, d))),
        )
    }

    /// State-independent field V(y) = mat; all derivatives vanish.
    pub fn constant(mat: Array2<f64>) -> Self {
        let (e, d) = (mat.nrows(), mat.ncols());
        Self::new(
            e,
            d,
            usize::MAX,
            Box::new(move |_| mat.clone()),
            Box::new(move |_, _| Array2::zeros((e, d))),
            Box::new(move |_, _, _| Array2::zeros((e, d))),
            Box::new(move |_, _, _, _| Array2::zeros((e, d))),
        )
    }

    /// V(y) with columns A_k y; one e x e matrix per driver component.
    pub fn linear(mats: Vec<Array2<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::Param("linear field needs at least one matrix".into()));
        }
        let e = mats[0].nrows();
        let d = mats.len();
        if mats.iter().any(|a| a.nrows() != e || a.ncols() != e) {
            return Err(Error::Param("linear field matrices must be square and same size".into()));
        }
        let cols = move |y: &Array1<f64>, mats: &[Array2<f64>]| {
            let mut v = Array2::zeros((e, d));
            for (k, a) in mats.iter().enumerate() {
                v.column_mut(k).assign(&a.dot(y));
            }
            v
        };
        let m1 = mats.clone();
        let m2 = mats;
        Ok(Self::new(
            e,
            d,
            usize::MAX,
            Box::new(move |y| cols(y, &m1)),
            Box::new(move |_, w| cols(w, &m2)),
            Box::new(move |_, _, _| Array2::zeros((e, d))),
            Box::new(move |_, _, _, _| Array2::zeros((e, d))),
        ))
    }

    /// Linear field whose matrices are the first d standard so(e)
    /// generators E_ij - E_ji, i < j in lexicographic order.
    pub fn rotation(e: usize, d: usize) -> Result<Self> {
        let max = e * (e - 1) / 2;
        if d > max {
            return Err(Error::Param(format!(
                "rotation field in dimension {e} has only {max} generators, {d} requested"
            )));
        }
        let mut mats = Vec::with_capacity(d);
        'outer: for i in 0..e {
            for j in i + 1..e {
                let mut g = Array2::zeros((e, e));
                g[(i, j)] = 1.0;
                g[(j, i)] = -1.0;
                mats.push(g);
                if mats.len() == d {
                    break 'outer;
                }
            }
        }
        Self::linear(mats)
    }

    /// V(y) with columns tanh(A_k y + b_k) applied entrywise: smooth and
    /// globally bounded with bounded derivatives of all orders.
    pub fn tanh_bounded(mats: Vec<Array2<f64>>, offsets: Vec<Array1<f64>>) -> Result<Self> {
        if mats.is_empty() || mats.len() != offsets.len() {
            return Err(Error::Param("tanh field needs one matrix and one offset per driver component".into()));
        }
        let e = mats[0].nrows();
        let d = mats.len();
        if mats.iter().any(|a| a.nrows() != e || a.ncols() != e)
            || offsets.iter().any(|b| b.len() != e)
        {
            return Err(Error::Param("tanh field shapes must be e x e and e".into()));
        }
        // per column k, with u = A_k y + b_k, t = tanh(u), s = 1 - t^2:
        //   V      = t
        //   dV w   = s (A_k w)
        //   d2V    = -2 t s (A_k w1)(A_k w2)
        //   d3V    = (6 t^2 - 2) s (A_k w1)(A_k w2)(A_k w3)
        // (entrywise products)
        let data = std::sync::Arc::new((mats, offsets));
        let c0 = data.clone();
        let c1 = data.clone();
        let c2 = data.clone();
        let c3 = data;
        let tanh_cols = |y: &Array1<f64>, mats: &[Array2<f64>], offs: &[Array1<f64>]| {
            let mut v = Array2::zeros((y.len(), mats.len()));
            for (k, (a, b)) in mats.iter().zip(offs).enumerate() {
                let u = a.dot(y) + b;
                for r in 0..y.len() {
                    v[(r, k)] = u[r].tanh();
                }
            }
            v
        };
        Ok(Self::new(
            e,
            d,
            usize::MAX,
            Box::new(move |y| tanh_cols(y, &c0.0, &c0.1)),
            Box::new(move |y, w| {
                let mut v = Array2::zeros((e, d));
                for (k, (a, b)) in c1.0.iter().zip(&c1.1).enumerate() {
                    let u = a.dot(y) + b;
                    let aw = a.dot(w);
                    for r in 0..e {
                        let t = u[r].tanh();
                        v[(r, k)] = (1.0 - t * t) * aw[r];
                    }
                }
                v
            }),
            Box::new(move |y, w1, w2| {
                let mut v = Array2::zeros((e, d));
                for (k, (a, b)) in c2.0.iter().zip(&c2.1).enumerate() {
                    let u = a.dot(y) + b;
                    let aw1 = a.dot(w1);
                    let aw2 = a.dot(w2);
                    for r in 0..e {
                        let t = u[r].tanh();
                        let s = 1.0 - t * t;
                        v[(r, k)] = -2.0 * t * s * aw1[r] * aw2[r];
                    }
                }
                v
            }),
            Box::new(move |y, w1, w2, w3| {
                let mut v = Array2::zeros((e, d));
                for (k, (a, b)) in c3.0.iter().zip(&c3.1).enumerate() {
                    let u = a.dot(y) + b;
                    let aw1 = a.dot(w1);
                    let aw2 = a.dot(w2);
                    let aw3 = a.dot(w3);
                    for r in 0..e {
                        let t = u[r].tanh();
                        let s = 1.0 - t * t;
                        v[(r, k)] = (6.0 * t * t - 2.0) * s * aw1[r] * aw2[r] * aw3[r];
                    }
                }
                v
            }),
        ))
    }

    /// Deterministic well-conditioned tanh family used by tests and as the
    /// named `tanh-bounded` default: A_k cycles a main and a quarter-weight
    /// off diagonal, offsets grade by component.
    pub fn tanh_demo(e: usize, d: usize, scale: f64) -> Result<Self> {
        let mut mats = Vec::with_capacity(d);
        let mut offs = Vec::with_capacity(d);
        for k in 0..d {
            let mut a = Array2::zeros((e, e));
            for r in 0..e {
                a[(r, (r + k) % e)] += scale;
                a[(r, (r + k + 1) % e)] += 0.25 * scale;
            }
            mats.push(a);
            offs.push(Array1::from_shape_fn(e, |r| 0.1 * (k + 1) as f64 + 0.2 * r as f64));
        }
        Self::tanh_bounded(mats, offs)
    }
}

/// One Davie step: y + V(y) x1 + sum_{j,k} X2[j][k] [dV(y)(V(y) e_j)] e_k.
fn davie_step(v: &VectorField<'_>, y: &Array1<f64>, g: &GroupElement) -> Array1<f64> {
    let vy = v.eval(y);
    let mut next = y + &vy.dot(&g.level1);
    for j in 0..v.d {
        let wj = vy.column(j).to_owned();
        let mj = v.d1(y, &wj);
        // contract the j-th level-2 row against the columns of dV(y)(V e_j)
        for k in 0..v.d {
            let x2 = g.level2[(j, k)];
            if x2 != 0.0 {
                for r in 0..v.e {
                    next[r] += x2 * mj[(r, k)];
                }
            }
        }
    }
    next
}

/// Solve dY = V(Y) dX by the second-order (Davie) one-step scheme along the
/// rough path's grid.
pub fn solve_rde(v: &VectorField<'_>, x: &RoughPath, y0: &Array1<f64>) -> Result<PathGrid> {
    if y0.len() != v.e {
        return Err(Error::DimMismatch { context: "solve_rde y0", expected: v.e, got: y0.len() });
    }
    if x.dim() != v.d {
        return Err(Error::DimMismatch { context: "solve_rde driver", expected: v.d, got: x.dim() });
    }
    let grid = x.grid().clone();
    let n = grid.len();
    let mut values = Array2::zeros((n, v.e));
    let mut y = y0.clone();
    values.row_mut(0).assign(&y);
    for (i, g) in x.segments().iter().enumerate() {
        y = davie_step(v, &y, g);
        if !y.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite { what: "rde state", at: grid.t(i + 1) });
        }
        values.row_mut(i + 1).assign(&y);
    }
    PathGrid::new(grid, values)
}

/// Solution path with its Jacobian flow J(t) = dY_t/dY_0 and the inverse
/// flow, both propagated by their own second-order steps.
#[derive(Debug, Clone)]
pub struct FlowBundle {
    pub y: PathGrid,
    pub jac: Vec<Array2<f64>>,
    pub jac_inv: Vec<Array2<f64>>,
    /// times the inverse drifted past tolerance and was replaced by a direct
    /// inverse
    pub renormalizations: usize,
}

pub const FLOW_DRIFT_TOL: f64 = 1e-6;

impl FlowBundle {
    pub fn grid(&self) -> &Partition {
        &self.y.grid
    }

    pub fn state_dim(&self) -> usize {
        self.jac[0].nrows()
    }

    /// Restrict the bundle to a subset grid (no recomputation; the flow at
    /// retained times is unchanged).
    pub fn restrict(&self, target: &Partition) -> Result<FlowBundle> {
        let idx = target.indices_in(self.grid())?;
        let mut values = Array2::zeros((idx.len(), self.y.dim()));
        for (r, &i) in idx.iter().enumerate() {
            values.row_mut(r).assign(&self.y.values.row(i));
        }
        Ok(FlowBundle {
            y: PathGrid::new(target.clone(), values)?,
            jac: idx.iter().map(|&i| self.jac[i].clone()).collect(),
            jac_inv: idx.iter().map(|&i| self.jac_inv[i].clone()).collect(),
            renormalizations: self.renormalizations,
        })
    }
}

fn max_abs_diff_from_identity(m: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for ((r, c), v) in m.indexed_iter() {
        let target = if r == c { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// Gauss-Jordan inverse with partial pivoting for the small e x e flow
/// matrices.
fn invert_small(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = Array2::eye(n);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[(r, col)].abs() > a[(piv, col)].abs() {
                piv = r;
            }
        }
        if a[(piv, col)].abs() < 1e-300 {
            return Err(Error::Param("flow matrix is numerically singular".into()));
        }
        if piv != col {
            for c in 0..n {
                a.swap((piv, c), (col, c));
                inv.swap((piv, c), (col, c));
            }
        }
        let scale = a[(col, col)];
        for c in 0..n {
            a[(col, c)] /= scale;
            inv[(col, c)] /= scale;
        }
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in 0..n {
                        a[(r, c)] -= f * a[(col, c)];
                        inv[(r, c)] -= f * inv[(col, c)];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Propagate the Jacobian flow and its inverse along a precomputed solution.
/// The forward step is the exact derivative of the Davie step, so finite
/// differences of `solve_rde` agree with J to O(eps); the inverse runs its
/// own right-multiplicative step and is renormalized to the direct inverse
/// whenever the product drifts past [`FLOW_DRIFT_TOL`].
pub fn solve_jacobian(v: &VectorField<'_>, x: &RoughPath, y: &PathGrid) -> Result<FlowBundle> {
    if y.grid.times() != x.grid().times() {
        return Err(Error::Grid("solution grid does not match the driver grid".into()));
    }
    if y.dim() != v.e || x.dim() != v.d {
        return Err(Error::DimMismatch { context: "solve_jacobian", expected: v.e, got: y.dim() });
    }
    let e = v.e;
    let d = v.d;
    let n = y.grid.len();
    let mut jac = Vec::with_capacity(n);
    let mut jac_inv = Vec::with_capacity(n);
    jac.push(Array2::eye(e));
    jac_inv.push(Array2::eye(e));
    let mut renorm = 0usize;
    for (i, g) in x.segments().iter().enumerate() {
        let yi = y.at(i);
        let vy = v.eval(&yi);
        let jacs = v.basis_jacobians(&yi);
        let nmats: Vec<Array2<f64>> = (0..d).map(|j| v.n_mat(&jacs, j)).collect();
        // first-order part M = sum_j N_j dx_j
        let mut fwd = Array2::eye(e);
        let mut bwd = Array2::eye(e);
        for j in 0..d {
            let dxj = g.level1[j];
            if dxj != 0.0 {
                fwd = fwd + &nmats[j] * dxj;
                bwd = bwd - &nmats[j] * dxj;
            }
        }
        // second-order parts; dn[j] is the matrix w -> d2V(y)(w, V e_j) e_k
        // assembled per k below from basis probes
        let mut hess: Vec<Vec<Array2<f64>>> = Vec::with_capacity(e);
        for a in 0..e {
            let mut ea = Array1::zeros(e);
            ea[a] = 1.0;
            hess.push((0..d).map(|j| v.d2(&yi, &ea, &vy.column(j).to_owned())).collect());
        }
        for j in 0..d {
            for k in 0..d {
                let x2 = g.level2[(j, k)];
                if x2 == 0.0 {
                    continue;
                }
                // grad N_k (V e_j): column a = d2V(y)(e_a, V e_j) e_k
                let mut gn = Array2::zeros((e, e));
                for (a, row) in hess.iter().enumerate() {
                    for r in 0..e {
                        gn[(r, a)] = row[j][(r, k)];
                    }
                }
                let nknj = nmats[k].dot(&nmats[j]);
                let njnk = nmats[j].dot(&nmats[k]);
                fwd = fwd + &(&gn + &nknj) * x2;
                bwd = bwd + &(&njnk - &gn) * x2;
            }
        }
        let jn: Array2<f64> = fwd.dot(&jac[i]);
        let mut kn: Array2<f64> = jac_inv[i].dot(&bwd);
        if !jn.iter().all(|z| z.is_finite()) || !kn.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite { what: "jacobian flow", at: y.grid.t(i + 1) });
        }
        if max_abs_diff_from_identity(&jn.dot(&kn)) > FLOW_DRIFT_TOL {
            kn = invert_small(&jn)?;
            renorm += 1;
        }
        jac.push(jn);
        jac_inv.push(kn);
    }
    Ok(FlowBundle { y: y.clone(), jac, jac_inv, renormalizations: renorm })
}

/// D_{s_j} Y_{t_i} = 1_{s_j < t_i} J(t_i) Jinv(s_j) V(Y_{s_j}) on the
/// bundle's grid. Restrict the bundle first when a coarse table is wanted.
pub fn malliavin_kernel(bundle: &FlowBundle, v: &VectorField<'_>) -> Result<MalliavinKernel> {
    let grid = bundle.grid().clone();
    let n = grid.len();
    let e = v.e;
    let d = v.d;
    // Jinv(s) V(Y_s) reused across rows
    let vslices: Vec<Array2<f64>> =
        (0..n).map(|j| bundle.jac_inv[j].dot(&v.eval(&bundle.y.at(j)))).collect();
    let zero = Array2::zeros((e, d));
    MalliavinKernel::from_fn(grid, e, d, |i, j| {
        if j >= i {
            zero.clone()
        } else {
            bundle.jac[i].dot(&vslices[j])
        }
    })
}

/// First-order directional derivative D_h Y along a sampled direction h on
/// the bundle grid, via the variation-of-constants sum
/// J(t) sum_{s < t} Jinv(s) V(Y_s) dh(s).
pub fn directional_derivative1(
    bundle: &FlowBundle,
    v: &VectorField<'_>,
    h: &PathGrid,
) -> Result<PathGrid> {
    if h.grid.times() != bundle.grid().times() {
        return Err(Error::Grid("direction grid does not match the solution grid".into()));
    }
    if h.dim() != v.d {
        return Err(Error::DimMismatch {
            context: "directional_derivative1",
            expected: v.d,
            got: h.dim(),
        });
    }
    let n = bundle.grid().len();
    let e = v.e;
    let mut values = Array2::zeros((n, e));
    let mut acc = Array1::<f64>::zeros(e);
    for i in 0..n - 1 {
        let yi = bundle.y.at(i);
        let dh = &h.at(i + 1) - &h.at(i);
        acc = acc + bundle.jac_inv[i].dot(&v.eval(&yi).dot(&dh));
        values.row_mut(i + 1).assign(&bundle.jac[i + 1].dot(&acc));
    }
    PathGrid::new(bundle.grid().clone(), values)
}

/// Second-order directional derivative D^2_{h1,h2} Y by variation of
/// constants: a level-2-compensated rough sum for the d2V(D_{h1}Y, D_{h2}Y)
/// dX forcing plus left-point Young sums for the dV(..) dh cross terms, all
/// propagated by J(t) Jinv(s).
pub fn directional_derivative2(
    v: &VectorField<'_>,
    x: &RoughPath,
    bundle: &FlowBundle,
    h1: &PathGrid,
    h2: &PathGrid,
) -> Result<PathGrid> {
    if bundle.grid().times() != x.grid().times() {
        return Err(Error::Grid("bundle grid does not match the driver grid".into()));
    }
    let u = directional_derivative1(bundle, v, h1)?;
    let w = directional_derivative1(bundle, v, h2)?;
    let e = v.e;
    let d = v.d;
    let n = bundle.grid().len();
    let mut values = Array2::zeros((n, e));
    let mut acc = Array1::<f64>::zeros(e);
    for i in 0..n - 1 {
        let yi = bundle.y.at(i);
        let ui = u.at(i);
        let wi = w.at(i);
        let kinv = &bundle.jac_inv[i];
        let g = &x.segments()[i];
        // rough forcing: value G = Jinv d2V(y)(u, w), Gubinelli derivative
        // along driver direction m built from the chain rule
        let d2uw = v.d2(&yi, &ui, &wi);
        let gval = kinv.dot(&d2uw);
        acc = acc + gval.dot(&g.level1);
        let vy = v.eval(&yi);
        let jacs = v.basis_jacobians(&yi);
        for m in 0..d {
            let nm = v.n_mat(&jacs, m);
            let vem = vy.column(m).to_owned();
            let nmu = nm.dot(&ui);
            let nmw = nm.dot(&wi);
            let inner = v.d3(&yi, &ui, &wi, &vem) + v.d2(&yi, &nmu, &wi) + v.d2(&yi, &ui, &nmw);
            let gm = kinv.dot(&inner) - kinv.dot(&nm).dot(&d2uw);
            for j in 0..d {
                let x2 = g.level2[(m, j)];
                if x2 != 0.0 {
                    for r in 0..e {
                        acc[r] += gm[(r, j)] * x2;
                    }
                }
            }
        }
        // Young cross terms dV(Y)(D_{h2}Y) dh1 + dV(Y)(D_{h1}Y) dh2
        let dh1 = &h1.at(i + 1) - &h1.at(i);
        let dh2 = &h2.at(i + 1) - &h2.at(i);
        acc = acc + kinv.dot(&v.d1(&yi, &wi).dot(&dh1));
        acc = acc + kinv.dot(&v.d1(&yi, &ui).dot(&dh2));
        values.row_mut(i + 1).assign(&bundle.jac[i + 1].dot(&acc));
    }
    PathGrid::new(bundle.grid().clone(), values)
}

/// Translate a rough path by eps times a sampled direction on the same grid:
/// level 1 shifts by the increments, level 2 gains the cross Young integrals
/// and the direction's own area. Exact when both the driver and the
/// direction are linear within each segment (the sampling model here);
/// first-order in the segment otherwise.
pub fn translate_lift(x: &RoughPath, h: &PathGrid, eps: f64) -> Result<RoughPath> {
    if h.grid.times() != x.grid().times() {
        return Err(Error::Grid("translation grid does not match the driver grid".into()));
    }
    if h.dim() != x.dim() {
        return Err(Error::DimMismatch {
            context: "translate_lift",
            expected: x.dim(),
            got: h.dim(),
        });
    }
    let d = x.dim();
    let mut segments = Vec::with_capacity(x.segments().len());
    for (i, g) in x.segments().iter().enumerate() {
        let dh = (&h.at(i + 1) - &h.at(i)) * eps;
        let mut level1 = g.level1.clone();
        let mut level2 = g.level2.clone();
        for a in 0..d {
            for b in 0..d {
                level2[(a, b)] +=
                    0.5 * (dh[a] * g.level1[b] + g.level1[a] * dh[b]) + 0.5 * dh[a] * dh[b];
            }
        }
        for a in 0..d {
            level1[a] += dh[a];
        }
        segments.push(GroupElement { level1, level2 });
    }
    RoughPath::from_segments(x.grid().clone(), segments)
}
