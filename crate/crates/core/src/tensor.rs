//! Arithmetic in the step-2 truncated tensor algebra over R^d and the
//! associated nilpotent group. Elements carry a level-1 vector and a level-2
//! matrix; the scalar level is fixed (1 for group elements, 0 for Lie
//! elements) and never stored.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// A point of the step-2 nilpotent group: (1, g1, g2).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub level1: Array1<f64>,
    pub level2: Array2<f64>,
}

/// A tangent element (0, a1, a2). `tensor_log` of a group element lands here;
/// the antisymmetric part of its level 2 is twice the Levy area.
#[derive(Debug, Clone, PartialEq)]
pub struct LieElement {
    pub level1: Array1<f64>,
    pub level2: Array2<f64>,
}

fn check_square(l1: &Array1<f64>, l2: &Array2<f64>, context: &'static str) -> Result<()> {
    let d = l1.len();
    if l2.nrows() != d || l2.ncols() != d {
        return Err(Error::DimMismatch {
            context,
            expected: d,
            got: l2.nrows().max(l2.ncols()),
        });
    }
    Ok(())
}

impl GroupElement {
    pub fn new(level1: Array1<f64>, level2: Array2<f64>) -> Result<Self> {
        check_square(&level1, &level2, "GroupElement::new")?;
        Ok(Self { level1, level2 })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            level1: Array1::zeros(d),
            level2: Array2::zeros((d, d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.level1.len()
    }

    pub fn is_finite(&self) -> bool {
        self.level1.iter().all(|x| x.is_finite()) && self.level2.iter().all(|x| x.is_finite())
    }
}

impl LieElement {
    pub fn new(level1: Array1<f64>, level2: Array2<f64>) -> Result<Self> {
        check_square(&level1, &level2, "LieElement::new")?;
        Ok(Self { level1, level2 })
    }

    pub fn from_level1(level1: Array1<f64>) -> Self {
        let d = level1.len();
        Self {
            level1,
            level2: Array2::zeros((d, d)),
        }
    }

    pub fn zero(d: usize) -> Self {
        Self {
            level1: Array1::zeros(d),
            level2: Array2::zeros((d, d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.level1.len()
    }
}

/// Truncated product: level1 adds, level2 picks up the cross term a1 (x) b1.
/// Associative with identity (1, 0, 0).
pub fn group_mul(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            context: "group_mul",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let level1 = &a.level1 + &b.level1;
    let mut level2 = &a.level2 + &b.level2;
    // a1 (x) b1, accumulated without an intermediate allocation
    for i in 0..a.dim() {
        let ai = a.level1[i];
        if ai != 0.0 {
            for j in 0..a.dim() {
                level2[(i, j)] += ai * b.level1[j];
            }
        }
    }
    Ok(GroupElement { level1, level2 })
}

/// Fold a sequence of group elements left to right; identity on an empty iterator.
pub fn group_product<'a, I>(d: usize, elems: I) -> Result<GroupElement>
where
    I: IntoIterator<Item = &'a GroupElement>,
{
    let mut acc = GroupElement::identity(d);
    for e in elems {
        acc = group_mul(&acc, e)?;
    }
    Ok(acc)
}

/// Group inverse via the truncated Neumann series sum_{k<=2} (-1)^k a~^k,
/// which at depth 2 is (1, -a1, -a2 + a1 (x) a1).
pub fn group_inv(a: &GroupElement) -> GroupElement {
    let d = a.dim();
    let level1 = -&a.level1;
    let mut level2 = -&a.level2;
    for i in 0..d {
        for j in 0..d {
            level2[(i, j)] += a.level1[i] * a.level1[j];
        }
    }
    GroupElement { level1, level2 }
}

/// Exponential map: (1, a1, a2 + a1 (x) a1 / 2).
pub fn tensor_exp(a: &LieElement) -> GroupElement {
    let d = a.dim();
    let mut level2 = a.level2.clone();
    for i in 0..d {
        for j in 0..d {
            level2[(i, j)] += 0.5 * a.level1[i] * a.level1[j];
        }
    }
    GroupElement {
        level1: a.level1.clone(),
        level2,
    }
}

/// Logarithm map: (0, g1, g2 - g1 (x) g1 / 2). The antisymmetric part of the
/// result's level 2 is the Levy area of the increment.
pub fn tensor_log(g: &GroupElement) -> LieElement {
    let d = g.dim();
    let mut level2 = g.level2.clone();
    for i in 0..d {
        for j in 0..d {
            level2[(i, j)] -= 0.5 * g.level1[i] * g.level1[j];
        }
    }
    LieElement {
        level1: g.level1.clone(),
        level2,
    }
}

/// Sub-additive homogeneous norm max(|g1|, sqrt(2 |g2|)). Euclidean on level 1;
/// level 2 uses the Frobenius norm, which the surrounding theory leaves open and
/// any cross-implementation comparison must pin the same way.
pub fn homogeneous_norm(g: &GroupElement) -> f64 {
    let n1 = g.level1.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n2 = g.level2.iter().map(|x| x * x).sum::<f64>().sqrt();
    n1.max((2.0 * n2).sqrt())
}
