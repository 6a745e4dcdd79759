//! Covariance models for centered Gaussian processes with i.i.d. components
//! started at the origin, rectangle increments of the covariance, and exact
//! sampling of the finite-dimensional law on a grid via Cholesky.

use crate::error::{Error, Result};
use crate::grid::{Partition, PathGrid};
use crate::lift::{lift_piecewise_linear, RoughPath};
use crate::variation::{p_variation_scalar, GridFunction2D};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

/// Covariance of one scalar component, R(s, t) = E[X_s X_t].
#[derive(Clone)]
pub enum CovKind {
    BrownianMotion,
    /// Hurst parameter restricted to (1/3, 1]: below 1/3 a step-2 lift no
    /// longer controls the path.
    FractionalBM { h: f64 },
    /// Arbitrary callable covariance. No closed forms; everything goes
    /// through rectangle arithmetic.
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CovKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovKind::BrownianMotion => write!(f, "BrownianMotion"),
            CovKind::FractionalBM { h } => write!(f, "FractionalBM {{ h: {h} }}"),
            CovKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovModel {
    pub kind: CovKind,
    pub horizon: f64,
}

impl CovModel {
    pub fn brownian(horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self { kind: CovKind::BrownianMotion, horizon })
    }

    pub fn fbm(h: f64, horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        if !(h > 1.0 / 3.0 && h <= 1.0) {
            return Err(Error::Param(format!(
                "Hurst parameter must lie in (1/3, 1], got {h}"
            )));
        }
        Ok(Self { kind: CovKind::FractionalBM { h }, horizon })
    }

    pub fn custom<F>(r: F, horizon: f64) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        check_horizon(horizon)?;
        Ok(Self { kind: CovKind::Custom(Arc::new(r)), horizon })
    }

    /// Custom covariance from a tabulated grid, evaluated by bilinear
    /// interpolation between table nodes (exact on the nodes). The table must
    /// be symmetric where square and vanish on the axes (process starts at 0).
    pub fn from_table(table: GridFunction2D) -> Result<Self> {
        for (j, &v) in table.values.row(0).iter().enumerate() {
            if v.abs() > 1e-9 {
                return Err(Error::Param(format!(
                    "covariance table must vanish at s = 0 (entry (0, {j}) = {v})"
                )));
            }
        }
        for (i, &v) in table.values.column(0).iter().enumerate() {
            if v.abs() > 1e-9 {
                return Err(Error::Param(format!(
                    "covariance table must vanish at t = 0 (entry ({i}, 0) = {v})"
                )));
            }
        }
        if table.sgrid.times() == table.tgrid.times() {
            let n = table.sgrid.len();
            for i in 0..n {
                for j in 0..i {
                    let (a, b) = (table.values[(i, j)], table.values[(j, i)]);
                    if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                        return Err(Error::Param(format!(
                            "covariance table is not symmetric at ({i}, {j}): {a} vs {b}"
                        )));
                    }
                }
            }
        }
        let horizon = table.sgrid.horizon().min(table.tgrid.horizon());
        let eval = move |s: f64, t: f64| table_eval(&table, s, t);
        Ok(Self { kind: CovKind::Custom(Arc::new(eval)), horizon })
    }

    /// Pointwise covariance R(s, t).
    pub fn r(&self, s: f64, t: f64) -> f64 {
        match &self.kind {
            CovKind::BrownianMotion => s.min(t),
            CovKind::FractionalBM { h } => {
                let hh = 2.0 * h;
                0.5 * (s.powf(hh) + t.powf(hh) - (t - s).abs().powf(hh))
            }
            CovKind::Custom(f) => f(s, t),
        }
    }

    /// Variance R(t, t) along the diagonal.
    pub fn diag_variance(&self, t: f64) -> f64 {
        match &self.kind {
            CovKind::BrownianMotion => t,
            CovKind::FractionalBM { h } => t.powf(2.0 * h),
            CovKind::Custom(f) => f(t, t),
        }
    }

    /// Rectangle increment R(s2,t2) - R(s1,t2) - R(s2,t1) + R(s1,t1), the
    /// covariance mass of [s1,s2] x [t1,t2].
    pub fn rect_increment(&self, s1: f64, s2: f64, t1: f64, t2: f64) -> Result<f64> {
        for &u in &[s1, s2, t1, t2] {
            if !(0.0..=self.horizon).contains(&u) {
                return Err(Error::Param(format!(
                    "time {u} outside the model horizon [0, {}]",
                    self.horizon
                )));
            }
        }
        Ok(self.r(s2, t2) - self.r(s1, t2) - self.r(s2, t1) + self.r(s1, t1))
    }

    /// One-component increment variance E[(X_t - X_s)^2], the rectangle
    /// increment over [s,t] x [s,t]. Closed forms for the analytic models.
    pub fn sigma_sq(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::Param(format!(
                "sigma_sq needs s <= t, got {s} > {t}"
            )));
        }
        match &self.kind {
            CovKind::BrownianMotion => Ok(t - s),
            CovKind::FractionalBM { h } => Ok((t - s).powf(2.0 * h)),
            CovKind::Custom(_) => Ok(self.rect_increment(s, t, s, t)?.max(0.0)),
        }
    }

    /// Default 2D-variation exponent for the model's covariance: 1 for
    /// Brownian motion, max(1, 1/(2H)) for fractional Brownian motion. Custom
    /// models carry no default and must be given one explicitly.
    pub fn default_rho(&self) -> Option<f64> {
        match &self.kind {
            CovKind::BrownianMotion => Some(1.0),
            CovKind::FractionalBM { h } => Some((1.0 / (2.0 * h)).max(1.0)),
            CovKind::Custom(_) => None,
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Param(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

fn table_eval(table: &GridFunction2D, s: f64, t: f64) -> f64 {
    let (i, ws) = bracket(table.sgrid.times(), s);
    let (j, wt) = bracket(table.tgrid.times(), t);
    let v = &table.values;
    (1.0 - ws) * (1.0 - wt) * v[(i, j)]
        + ws * (1.0 - wt) * v[(i + 1, j)]
        + (1.0 - ws) * wt * v[(i, j + 1)]
        + ws * wt * v[(i + 1, j + 1)]
}

/// Cell index and interpolation weight for `u` within a sorted node vector,
/// clamped to the table's range.
fn bracket(nodes: &[f64], u: f64) -> (usize, f64) {
    let n = nodes.len();
    if u <= nodes[0] {
        return (0, 0.0);
    }
    if u >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let i = match nodes.binary_search_by(|x| x.partial_cmp(&u).unwrap()) {
        Ok(k) => return (k.min(n - 2), if k == n - 1 { 1.0 } else { 0.0 }),
        Err(k) => k - 1,
    };
    (i, (u - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// One draw of the process on a grid: values are an (n x d) array with the
/// first row exactly zero; components are i.i.d.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    pub path: PathGrid,
    pub seed: u64,
    pub index: u64,
}

impl GaussianSample {
    pub fn grid(&self) -> &Partition {
        &self.path.grid
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.path.values
    }

    /// Step-2 lift of the piecewise-linear interpolant.
    pub fn lift(&self) -> Result<RoughPath> {
        lift_piecewise_linear(&self.path)
    }
}

enum Factor {
    /// Brownian increments are independent: no Gram matrix needed.
    BrownianIncrements { sqrt_dt: Vec<f64> },
    /// Packed row-major lower-triangular Cholesky factor of the Gram matrix
    /// on the grid excluding t = 0.
    CholeskyPacked { l: Vec<f64>, n: usize },
}

/// Exact sampler for a covariance model on a fixed grid. Construction factors
/// the Gram matrix once; draws are cheap and deterministic per (seed, index).
pub struct Sampler {
    grid: Partition,
    d: usize,
    factor: Factor,
}

const PSD_JITTER: f64 = 1e-10;

impl Sampler {
    pub fn new(model: &CovModel, grid: &Partition, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Param("component count d must be >= 1".into()));
        }
        if grid.t(0) != 0.0 {
            return Err(Error::Param("sampling grids must start at t = 0".into()));
        }
        if grid.horizon() > model.horizon {
            return Err(Error::Param(format!(
                "grid horizon {} exceeds model horizon {}",
                grid.horizon(),
                model.horizon
            )));
        }
        let factor = match &model.kind {
            CovKind::BrownianMotion => Factor::BrownianIncrements {
                sqrt_dt: grid.times().windows(2).map(|w| (w[1] - w[0]).sqrt()).collect(),
            },
            _ => {
                let n = grid.len() - 1;
                let build = || -> Vec<f64> {
                    let mut g = vec![0.0f64; n * (n + 1) / 2];
                    for i in 0..n {
                        let row = i * (i + 1) / 2;
                        for j in 0..=i {
                            g[row + j] = model.r(grid.t(i + 1), grid.t(j + 1));
                        }
                    }
                    g
                };
                let mut g = build();
                if let Err(_first) = cholesky_packed_in_place(&mut g, n, 0.0) {
                    g = build();
                    if let Err((index, pivot)) = cholesky_packed_in_place(&mut g, n, PSD_JITTER)
                    {
                        return Err(Error::NotPsd { index, pivot });
                    }
                }
                Factor::CholeskyPacked { l: g, n }
            }
        };
        Ok(Self { grid: grid.clone(), d, factor })
    }

    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Draw sample `index` of the stream identified by `seed`. Every draw
    /// owns an independent RNG stream, so batches can be evaluated in any
    /// order or in parallel without changing results.
    pub fn draw(&self, seed: u64, index: u64) -> GaussianSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let n = self.grid.len();
        let mut values = Array2::zeros((n, self.d));
        match &self.factor {
            Factor::BrownianIncrements { sqrt_dt } => {
                for c in 0..self.d {
                    let mut x = 0.0;
                    for (i, s) in sqrt_dt.iter().enumerate() {
                        let z: f64 = rng.sample(StandardNormal);
                        x += s * z;
                        values[(i + 1, c)] = x;
                    }
                }
            }
            Factor::CholeskyPacked { l, n: m } => {
                let mut z = vec![0.0f64; *m];
                for c in 0..self.d {
                    for zi in z.iter_mut() {
                        *zi = rng.sample(StandardNormal);
                    }
                    for i in 0..*m {
                        let row = i * (i + 1) / 2;
                        let xi: f64 = l[row..row + i + 1]
                            .iter()
                            .zip(&z[..i + 1])
                            .map(|(a, b)| a * b)
                            .sum();
                        values[(i + 1, c)] = xi;
                    }
                }
            }
        }
        GaussianSample {
            path: PathGrid::new(self.grid.clone(), values).expect("shape by construction"),
            seed,
            index,
        }
    }
}

/// In-place Cholesky of a packed row-major lower triangle, with `jitter`
/// added to the diagonal. Fails with (index, pivot) on a non-positive pivot.
fn cholesky_packed_in_place(
    a: &mut [f64],
    n: usize,
    jitter: f64,
) -> std::result::Result<(), (usize, f64)> {
    for i in 0..n {
        let row_i = i * (i + 1) / 2;
        let (lo, hi) = a.split_at_mut(row_i);
        for j in 0..i {
            let row_j = j * (j + 1) / 2;
            let dot: f64 = lo[row_j..row_j + j]
                .iter()
                .zip(&hi[..j])
                .map(|(x, y)| x * y)
                .sum();
            hi[j] = (hi[j] - dot) / lo[row_j + j];
        }
        let dot: f64 = hi[..i].iter().map(|x| x * x).sum();
        let s = hi[i] + jitter - dot;
        if s <= 0.0 || !s.is_finite() {
            return Err((i, s));
        }
        hi[i] = s.sqrt();
    }
    Ok(())
}

/// Draw `count` independent samples. Each sample's randomness depends only on
/// (seed, its index), so the batch is deterministic under any parallel
/// schedule.
pub fn sample_paths(
    model: &CovModel,
    grid: &Partition,
    d: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<GaussianSample>> {
    let sampler = Sampler::new(model, grid, d)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| sampler.draw(seed, i))
        .collect())
}

/// Smallest constant C on the grid for the mixed variation bound
/// ||R(t,.) - R(s,.)||_{q-var} <= C |t - s|^{1/rho}: returns the max ratio
/// over grid pairs s < t. `q` and `rho` are separate knobs because the
/// underlying estimates pair a slice q-variation with a 1/rho increment rate.
pub fn mixed_variation_q(model: &CovModel, grid: &Partition, q: f64, rho: f64) -> Result<f64> {
    if !(q >= 1.0) || !(rho >= 1.0) {
        return Err(Error::Param(format!(
            "variation exponents must be >= 1, got q = {q}, rho = {rho}"
        )));
    }
    const LIMIT: usize = 128;
    let n = grid.len();
    if n > LIMIT {
        return Err(Error::TooLarge { what: "mixed variation grid", limit: LIMIT, got: n });
    }
    let times = grid.times();
    let mut worst = 0.0f64;
    let mut slice = vec![0.0f64; n];
    for i in 0..n {
        for j in i + 1..n {
            for (k, v) in slice.iter_mut().enumerate() {
                *v = model.r(times[j], times[k]) - model.r(times[i], times[k]);
            }
            let var = p_variation_scalar(&slice, q)?;
            let ratio = var / (times[j] - times[i]).powf(1.0 / rho);
            if ratio > worst {
                worst = ratio;
            }
        }
    }
    Ok(worst)
}

/// [`mixed_variation_q`] with the slice exponent tied to rho.
pub fn mixed_variation_check(model: &CovModel, grid: &Partition, rho: f64) -> Result<f64> {
    mixed_variation_q(model, grid, rho, rho)
}

/// Stationary-increment covariance reduced to a one-dimensional table on a
/// uniform grid: every rectangle increment is a second difference of
/// g(m) = E[(X_{m delta} - X_0)^2]. Available for the analytic models only.
#[derive(Debug, Clone)]
pub struct StationaryGridCov {
    pub delta: f64,
    g: Vec<f64>,
}

impl StationaryGridCov {
    pub fn new(model: &CovModel, grid: &Partition) -> Option<Self> {
        if !grid.is_uniform() || grid.t(0) != 0.0 {
            return None;
        }
        let delta = grid.span() / grid.intervals() as f64;
        let n = grid.len();
        let g: Vec<f64> = match &model.kind {
            CovKind::BrownianMotion => (0..n).map(|m| m as f64 * delta).collect(),
            CovKind::FractionalBM { h } => {
                (0..n).map(|m| (m as f64 * delta).powf(2.0 * h)).collect()
            }
            CovKind::Custom(_) => return None,
        };
        Some(Self { delta, g })
    }

    /// E[(X_{t_j} - X_{t_i})^2] by index.
    #[inline]
    pub fn sigma_sq(&self, i: usize, j: usize) -> f64 {
        self.g[j.abs_diff(i)]
    }

    /// R(t_i, t_i) by index (the process starts at the origin).
    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.g[i]
    }

    /// R(t_i, t_j) by index.
    #[inline]
    pub fn r(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.g[i] + self.g[j] - self.g[j.abs_diff(i)])
    }

    /// Rectangle increment over [t_{j1}, t_{j2}] x [t_{k1}, t_{k2}], written
    /// as a second difference of g so no near-cancelling R values appear.
    #[inline]
    pub fn rect(&self, j1: usize, j2: usize, k1: usize, k2: usize) -> f64 {
        let gd = |a: usize, b: usize| self.g[a.abs_diff(b)];
        -0.5 * (gd(j2, k2) - gd(j2, k1) - gd(j1, k2) + gd(j1, k1))
    }
}

const PATHS_MAGIC: &[u8; 8] = b"RSKOPATH";
const PATHS_VERSION: u32 = 1;

/// One sample as CSV: header `t,x1..xd`, one row per grid time.
pub fn write_sample_csv<W: Write>(sample: &GaussianSample, out: &mut W) -> Result<()> {
    write!(out, "t")?;
    for c in 1..=sample.dim() {
        write!(out, ",x{c}")?;
    }
    writeln!(out)?;
    for (i, &t) in sample.grid().times().iter().enumerate() {
        write!(out, "{t}")?;
        for c in 0..sample.dim() {
            write!(out, ",{}", sample.values()[(i, c)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Bulk binary dump: 8-byte magic, u32 version, u32 d, u64 n_times, u64
/// count, the grid times, then each sample's values row-major. All numbers
/// little-endian; floats are 64-bit.
pub fn write_paths_binary<W: Write>(samples: &[GaussianSample], out: &mut W) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Param("cannot serialize an empty sample batch".into()))?;
    let grid = first.grid();
    let d = first.dim();
    out.write_all(PATHS_MAGIC)?;
    out.write_all(&PATHS_VERSION.to_le_bytes())?;
    out.write_all(&(d as u32).to_le_bytes())?;
    out.write_all(&(grid.len() as u64).to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    for &t in grid.times() {
        out.write_all(&t.to_le_bytes())?;
    }
    for s in samples {
        if s.grid().times() != grid.times() || s.dim() != d {
            return Err(Error::Param("samples in one batch must share grid and d".into()));
        }
        for v in s.values().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read back a binary dump: the grid and each sample's (n x d) values.
pub fn read_paths_binary<R: Read>(inp: &mut R) -> Result<(Partition, Vec<Array2<f64>>)> {
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic)?;
    if &magic != PATHS_MAGIC {
        return Err(Error::Param(format!(
            "bad magic {:?}: not a path dump",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != PATHS_VERSION {
        return Err(Error::Unsupported(format!("path dump version {version}")));
    }
    inp.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    inp.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    inp.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let read_f64 = |inp: &mut R| -> Result<f64> {
        let mut b = [0u8; 8];
        inp.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        times.push(read_f64(inp)?);
    }
    let grid = Partition::new(times)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Array2::zeros((n, d));
        for i in 0..n {
            for c in 0..d {
                values[(i, c)] = read_f64(inp)?;
            }
        }
        out.push(values);
    }
    Ok((grid, out))
}
