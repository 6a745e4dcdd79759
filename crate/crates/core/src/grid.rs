use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// A time partition: strictly increasing, non-negative, at least two points.
/// Path grids start at 0 (enforced where a process is sampled); integration
/// sub-domains may start anywhere in [0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Grid("partition needs at least 2 points".into()));
        }
        if times[0] < 0.0 {
            return Err(Error::Grid(format!(
                "partition must start at a non-negative time, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Grid(format!(
                    "partition not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if !times.iter().all(|t| t.is_finite()) {
            return Err(Error::Grid("partition contains non-finite time".into()));
        }
        Ok(Self { times })
    }

    /// Uniform grid with `n` intervals on [0, horizon].
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if n == 0 || !(horizon > 0.0) {
            return Err(Error::Grid("uniform grid needs n >= 1 and horizon > 0".into()));
        }
        // i * T / n keeps dyadic sub-grids bit-identical across refinement levels.
        let times = (0..=n).map(|i| i as f64 * horizon / n as f64).collect();
        Self::new(times)
    }

    /// Dyadic grid with 2^n intervals.
    pub fn dyadic(horizon: f64, n: u32) -> Result<Self> {
        Self::uniform(horizon, 1usize << n)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Number of grid points (intervals + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Length of the covered interval (end minus start).
    pub fn span(&self) -> f64 {
        self.horizon() - self.times[0]
    }

    pub fn mesh(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// True when all intervals have the same length up to relative 1e-12.
    pub fn is_uniform(&self) -> bool {
        let h = self.span() / self.intervals() as f64;
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * self.span().max(self.horizon()))
    }

    /// Exact position of time `t` on the grid, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        // Grids are tiny compared to everything else; binary search by value.
        self.times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
            .ok()
    }

    /// For every point of `self`, its index on the finer grid. Errors unless
    /// `self` is a subset of `fine` (exact float equality; uniform constructors
    /// produce bit-identical shared points).
    pub fn indices_in(&self, fine: &Partition) -> Result<Vec<usize>> {
        self.times
            .iter()
            .map(|&t| {
                fine.index_of(t).ok_or_else(|| {
                    Error::Grid(format!("time {t} is not a point of the finer grid"))
                })
            })
            .collect()
    }
}

/// Vector-valued samples on a partition: one row of `values` per grid time.
#[derive(Debug, Clone)]
pub struct PathGrid {
    pub grid: Partition,
    /// Shape (grid.len(), e).
    pub values: Array2<f64>,
}

impl PathGrid {
    pub fn new(grid: Partition, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::Grid(format!(
                "PathGrid rows {} != grid points {}",
                values.nrows(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn at(&self, i: usize) -> Array1<f64> {
        self.values.row(i).to_owned()
    }
}

/// Matrix-valued path (Jacobians and friends); one matrix per grid time.
#[derive(Debug, Clone)]
pub struct MatrixPath {
    pub grid: Partition,
    pub mats: Vec<Array2<f64>>,
}

impl MatrixPath {
    pub fn new(grid: Partition, mats: Vec<Array2<f64>>) -> Result<Self> {
        if mats.len() != grid.len() {
            return Err(Error::Grid(format!(
                "MatrixPath entries {} != grid points {}",
                mats.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, mats })
    }
}
