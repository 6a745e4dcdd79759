//! Step-2 lift of a sampled path: each fine-grid segment of the
//! piecewise-linear interpolant contributes exp(delta), and increments between
//! arbitrary grid times are Chen folds of the segment elements. For a linear
//! segment the Levy area vanishes, so one segment's level 2 is
//! delta (x) delta / 2.

use crate::error::{Error, Result};
use crate::grid::{Partition, PathGrid};
use crate::tensor::{group_inv, group_mul, tensor_exp, GroupElement, LieElement};
use ndarray::Array1;
use std::io::{self, Write};

#[derive(Debug, Clone)]
pub struct RoughPath {
    grid: Partition,
    d: usize,
    /// increment over [t_i, t_{i+1}], one per grid interval
    segments: Vec<GroupElement>,
    /// running products from time 0; points[0] is the identity
    points: Vec<GroupElement>,
}

impl RoughPath {
    /// Assemble from per-interval group increments.
    pub fn from_segments(grid: Partition, segments: Vec<GroupElement>) -> Result<Self> {
        if segments.len() != grid.intervals() {
            return Err(Error::Grid(format!(
                "expected {} segment increments for the grid, got {}",
                grid.intervals(),
                segments.len()
            )));
        }
        let d = segments.first().map(|g| g.dim()).unwrap_or(0);
        for g in &segments {
            if g.dim() != d {
                return Err(Error::DimMismatch {
                    context: "RoughPath::from_segments",
                    expected: d,
                    got: g.dim(),
                });
            }
        }
        let mut points = Vec::with_capacity(grid.len());
        points.push(GroupElement::identity(d));
        for seg in &segments {
            let next = group_mul(points.last().unwrap(), seg)?;
            points.push(next);
        }
        Ok(Self { grid, d, segments, points })
    }

    pub fn grid(&self) -> &Partition {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn segments(&self) -> &[GroupElement] {
        &self.segments
    }

    /// Running products x_{0, t_i}, one per grid point.
    pub fn points(&self) -> &[GroupElement] {
        &self.points
    }

    /// Group increment between two grid indices (fold of the segments between).
    pub fn increment_by_index(&self, i: usize, k: usize) -> Result<GroupElement> {
        if i > k || k >= self.grid.len() {
            return Err(Error::Grid(format!(
                "increment indices out of order or range: {i}..{k}"
            )));
        }
        let mut acc = GroupElement::identity(self.d);
        for seg in &self.segments[i..k] {
            acc = group_mul(&acc, seg)?;
        }
        Ok(acc)
    }

    /// Group increment between two grid times. Times must lie exactly on the
    /// grid; this layer never interpolates.
    pub fn increment(&self, s: f64, t: f64) -> Result<GroupElement> {
        if s > t {
            return Err(Error::Grid(format!("increment needs s <= t, got {s} > {t}")));
        }
        let i = self
            .grid
            .index_of(s)
            .ok_or_else(|| Error::Grid(format!("time {s} is not a grid point")))?;
        let k = self
            .grid
            .index_of(t)
            .ok_or_else(|| Error::Grid(format!("time {t} is not a grid point")))?;
        self.increment_by_index(i, k)
    }

    /// Pre-fold the segments onto a sub-grid. The result is Chen-consistent
    /// with the source: its increments equal the source's over common times.
    pub fn coarsen(&self, target: &Partition) -> Result<RoughPath> {
        let idx = target.indices_in(&self.grid).map_err(|_| {
            Error::Grid("coarsen target is not a subset of the source grid".into())
        })?;
        let mut segments = Vec::with_capacity(idx.len() - 1);
        for w in idx.windows(2) {
            segments.push(self.increment_by_index(w[0], w[1])?);
        }
        RoughPath::from_segments(target.clone(), segments)
    }

    /// CSV dump of per-interval increments. Columns: interval index, interval
    /// endpoints, level-1 entries, then level-2 entries flattened row-major.
    pub fn write_increments_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        write!(out, "i,t_lo,t_hi")?;
        for k in 1..=self.d {
            write!(out, ",l1_{k}")?;
        }
        for i in 1..=self.d {
            for j in 1..=self.d {
                write!(out, ",l2_{i}_{j}")?;
            }
        }
        writeln!(out)?;
        for (i, seg) in self.segments.iter().enumerate() {
            write!(out, "{},{},{}", i, self.grid.t(i), self.grid.t(i + 1))?;
            for v in seg.level1.iter() {
                write!(out, ",{v}")?;
            }
            for v in seg.level2.iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Lift a sampled path: the signature of its piecewise-linear interpolant up
/// to level 2. Each segment is tensor_exp of the path increment.
pub fn lift_piecewise_linear(path: &PathGrid) -> Result<RoughPath> {
    let n = path.grid.len();
    if n < 2 {
        return Err(Error::Grid("lift needs at least 2 grid points".into()));
    }
    let mut segments = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let delta: Array1<f64> = &path.values.row(i + 1) - &path.values.row(i);
        segments.push(tensor_exp(&LieElement::from_level1(delta)));
    }
    RoughPath::from_segments(path.grid.clone(), segments)
}

/// Convenience: group increment g_s^{-1} g_t between two already-lifted points.
pub fn point_increment(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    group_mul(&group_inv(a), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::homogeneous_norm;
    use ndarray::{array, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn path_from_rows(times: Vec<f64>, rows: Vec<Array1<f64>>) -> PathGrid {
        let d = rows[0].len();
        let mut values = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            values.row_mut(i).assign(r);
        }
        PathGrid::new(Partition::new(times).unwrap(), values).unwrap()
    }

    fn max_abs_diff(a: &GroupElement, b: &GroupElement) -> f64 {
        let d1 = (&a.level1 - &b.level1).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let d2 = (&a.level2 - &b.level2).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        d1.max(d2)
    }

    fn random_walk(d: usize, n: usize, seed: u64) -> PathGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut rows = vec![Array1::zeros(d)];
        for _ in 0..n {
            let step = Array1::from_iter((0..d).map(|_| rng.random_range(-0.5..0.5)));
            let prev: Array1<f64> = rows.last().unwrap().clone();
            rows.push(prev + step);
        }
        path_from_rows(times, rows)
    }

    #[test]
    fn one_segment_level2() {
        let p = path_from_rows(vec![0.0, 1.0], vec![array![0.0, 0.0], array![1.0, 0.0]]);
        let x = lift_piecewise_linear(&p).unwrap();
        let g = x.increment(0.0, 1.0).unwrap();
        assert_eq!(g.level1, array![1.0, 0.0]);
        assert_eq!(g.level2, array![[0.5, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn two_segment_fold_and_area() {
        let p = path_from_rows(
            vec![0.0, 0.5, 1.0],
            vec![array![0.0, 0.0], array![1.0, 0.0], array![1.0, 1.0]],
        );
        let x = lift_piecewise_linear(&p).unwrap();
        let g = x.increment(0.0, 1.0).unwrap();
        assert_eq!(g.level1, array![1.0, 1.0]);
        assert_eq!(g.level2, array![[0.5, 1.0], [0.0, 0.5]]);
        let area = 0.5 * (&g.level2 - &g.level2.t());
        assert_eq!(area, array![[0.0, 0.5], [-0.5, 0.0]]);
    }

    #[test]
    fn closed_path_has_zero_level1() {
        let p = path_from_rows(
            vec![0.0, 0.25, 0.5, 0.75, 1.0],
            vec![
                array![0.0, 0.0],
                array![1.0, 0.3],
                array![0.4, -0.2],
                array![-0.6, 0.1],
                array![0.0, 0.0],
            ],
        );
        let x = lift_piecewise_linear(&p).unwrap();
        let g = x.increment(0.0, 1.0).unwrap();
        assert!(g.level1.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn increment_same_time_is_identity() {
        let x = lift_piecewise_linear(&random_walk(2, 8, 20)).unwrap();
        let g = x.increment(0.5, 0.5).unwrap();
        assert_eq!(g, GroupElement::identity(2));
    }

    #[test]
    fn increment_rejects_off_grid_times() {
        let x = lift_piecewise_linear(&random_walk(2, 8, 21)).unwrap();
        assert!(x.increment(0.0, 0.3).is_err());
        assert!(x.increment(0.5, 0.25).is_err());
    }

    #[test]
    fn chen_on_random_triples() {
        let x = lift_piecewise_linear(&random_walk(3, 32, 22)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let mut idx = [
                rng.random_range(0..=32usize),
                rng.random_range(0..=32usize),
                rng.random_range(0..=32usize),
            ];
            idx.sort_unstable();
            let [i, u, k] = idx;
            let left = group_mul(
                &x.increment_by_index(i, u).unwrap(),
                &x.increment_by_index(u, k).unwrap(),
            )
            .unwrap();
            let right = x.increment_by_index(i, k).unwrap();
            assert!(max_abs_diff(&left, &right) < 1e-12);
        }
    }

    #[test]
    fn points_match_increments_from_zero() {
        let x = lift_piecewise_linear(&random_walk(2, 16, 24)).unwrap();
        for i in 0..=16 {
            let direct = x.increment_by_index(0, i).unwrap();
            assert!(max_abs_diff(&direct, &x.points()[i]) < 1e-12);
        }
    }

    #[test]
    fn coarsen_identity_grid() {
        let x = lift_piecewise_linear(&random_walk(2, 8, 25)).unwrap();
        let y = x.coarsen(&x.grid().clone()).unwrap();
        for (a, b) in x.segments().iter().zip(y.segments()) {
            assert!(max_abs_diff(a, b) < 1e-15);
        }
    }

    #[test]
    fn coarsen_dyadic_halving() {
        let p = random_walk(2, 16, 26);
        let x = lift_piecewise_linear(&p).unwrap();
        let half = Partition::dyadic(1.0, 3).unwrap();
        let y = x.coarsen(&half).unwrap();
        assert_eq!(y.segments().len(), 8);
        for (k, seg) in y.segments().iter().enumerate() {
            let fold = group_mul(&x.segments()[2 * k], &x.segments()[2 * k + 1]).unwrap();
            assert!(max_abs_diff(seg, &fold) < 1e-12);
        }
        // two-step coarsening lands on the same increments as one step
        let quarter = Partition::dyadic(1.0, 2).unwrap();
        let z1 = y.coarsen(&quarter).unwrap();
        let z2 = x.coarsen(&quarter).unwrap();
        for (a, b) in z1.segments().iter().zip(z2.segments()) {
            assert!(max_abs_diff(a, b) < 1e-12);
        }
    }

    #[test]
    fn coarsen_rejects_non_subset() {
        let x = lift_piecewise_linear(&random_walk(2, 8, 27)).unwrap();
        let bad = Partition::new(vec![0.0, 0.3, 1.0]).unwrap();
        assert!(x.coarsen(&bad).is_err());
    }

    #[test]
    fn symmetric_part_is_half_square() {
        let x = lift_piecewise_linear(&random_walk(3, 128, 28)).unwrap();
        let g = x.increment(0.0, 1.0).unwrap();
        let sym = 0.5 * (&g.level2 + &g.level2.t());
        let d = g.dim();
        for i in 0..d {
            for j in 0..d {
                let want = 0.5 * g.level1[i] * g.level1[j];
                assert!((sym[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_scales_homogeneously() {
        let p = random_walk(2, 32, 29);
        let lam = 3.0;
        let scaled = PathGrid::new(p.grid.clone(), lam * &p.values).unwrap();
        let x = lift_piecewise_linear(&p).unwrap();
        let y = lift_piecewise_linear(&scaled).unwrap();
        let gx = x.increment(0.0, 1.0).unwrap();
        let gy = y.increment(0.0, 1.0).unwrap();
        assert!(max_abs_diff(
            &GroupElement {
                level1: lam * &gx.level1,
                level2: lam * lam * &gx.level2,
            },
            &gy
        ) < 1e-10);
        // pure level-1 element: norm is exactly linear in lambda
        let only1 =
            GroupElement::new(gx.level1.clone(), Array2::zeros((2, 2))).unwrap();
        let only1s =
            GroupElement::new((lam * &gx.level1).clone(), Array2::zeros((2, 2))).unwrap();
        assert!(
            (homogeneous_norm(&only1s) - lam * homogeneous_norm(&only1)).abs() < 1e-12
        );
    }

    #[test]
    fn csv_dump_roundtrips_header_and_rows() {
        let x = lift_piecewise_linear(&random_walk(2, 4, 30)).unwrap();
        let mut buf = Vec::new();
        x.write_increments_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "i,t_lo,t_hi,l1_1,l1_2,l2_1_1,l2_1_2,l2_2_1,l2_2_2"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        let first: Vec<&str> = rows[0].split(',').collect();
        assert_eq!(first[0], "0");
        let l1_1: f64 = first[3].parse().unwrap();
        assert!((l1_1 - x.segments()[0].level1[0]).abs() < 1e-15);
    }
}
