//! Matrix-valued affine expressions over the scalar unknowns of an [`LmiProblem`].
//!
//! [`LmiProblem`]: super::LmiProblem

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use super::SdpError;

/// `constant + sum_k y_k * coeff_k` with all matrices sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub(crate) fn from_terms(rows: usize, cols: usize, terms: BTreeMap<usize, DMatrix<f64>>) -> Self {
        Self {
            constant: DMatrix::zeros(rows, cols),
            terms,
        }
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    /// Coefficient matrices keyed by unknown index.
    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(&k, m)| (k, m))
    }

    /// Largest unknown index referenced, plus one.
    pub fn unknown_span(&self) -> usize {
        self.terms.keys().next_back().map_or(0, |k| k + 1)
    }

    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (&k, coeff) in &self.terms {
            let yk = y.get(k).copied().unwrap_or(0.0);
            if yk != 0.0 {
                out += coeff * yk;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(&k, m)| (k, m.transpose())).collect(),
        }
    }

    /// `self + self^T`.
    pub fn symmetric_part(&self) -> Self {
        self.clone() + self.transpose()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(&k, m)| (k, m * s)).collect(),
        }
    }

    /// `lhs * self`.
    pub fn left_mul(&self, lhs: &DMatrix<f64>) -> Result<Self, SdpError> {
        if lhs.ncols() != self.nrows() {
            return Err(SdpError::Shape {
                context: "left multiplication",
                expected: (lhs.ncols(), self.ncols()),
                found: self.shape(),
            });
        }
        Ok(Self {
            constant: lhs * &self.constant,
            terms: self.terms.iter().map(|(&k, m)| (k, lhs * m)).collect(),
        })
    }

    /// `self * rhs`.
    pub fn right_mul(&self, rhs: &DMatrix<f64>) -> Result<Self, SdpError> {
        if rhs.nrows() != self.ncols() {
            return Err(SdpError::Shape {
                context: "right multiplication",
                expected: (self.nrows(), rhs.nrows()),
                found: self.shape(),
            });
        }
        Ok(Self {
            constant: &self.constant * rhs,
            terms: self.terms.iter().map(|(&k, m)| (k, m * rhs)).collect(),
        })
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, SdpError> {
        if self.shape() != other.shape() {
            return Err(SdpError::Shape {
                context: "addition",
                expected: self.shape(),
                found: other.shape(),
            });
        }
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&k, m) in &other.terms {
            out.terms
                .entry(k)
                .and_modify(|acc| *acc += m)
                .or_insert_with(|| m.clone());
        }
        Ok(out)
    }

    /// Assembles a block matrix from a rectangular grid of expressions.
    ///
    /// Every block in a grid row must share its row count and every block in a
    /// grid column its column count.
    pub fn block(grid: &[Vec<AffineExpr>]) -> Result<Self, SdpError> {
        let Some(first) = grid.first() else {
            return Ok(Self::zeros(0, 0));
        };
        let ncols_grid = first.len();
        if grid.iter().any(|row| row.len() != ncols_grid) {
            return Err(SdpError::RaggedBlockGrid);
        }
        let row_heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
        let col_widths: Vec<usize> = first.iter().map(AffineExpr::ncols).collect();
        for (i, row) in grid.iter().enumerate() {
            for (j, blk) in row.iter().enumerate() {
                if blk.shape() != (row_heights[i], col_widths[j]) {
                    return Err(SdpError::Shape {
                        context: "block assembly",
                        expected: (row_heights[i], col_widths[j]),
                        found: blk.shape(),
                    });
                }
            }
        }
        let total_rows: usize = row_heights.iter().sum();
        let total_cols: usize = col_widths.iter().sum();
        let mut out = Self::zeros(total_rows, total_cols);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, blk) in row.iter().enumerate() {
                let (h, w) = (row_heights[i], col_widths[j]);
                out.constant.view_mut((r0, c0), (h, w)).copy_from(&blk.constant);
                for (&k, m) in &blk.terms {
                    out.terms
                        .entry(k)
                        .or_insert_with(|| DMatrix::zeros(total_rows, total_cols))
                        .view_mut((r0, c0), (h, w))
                        .copy_from(m);
                }
                c0 += w;
            }
            r0 += row_heights[i];
        }
        Ok(out)
    }

    /// True when the constant and every coefficient are symmetric within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let sym = |m: &DMatrix<f64>| {
            m.is_square() && {
                let scale = m.amax().max(1.0);
                (m - m.transpose()).amax() <= tol * scale
            }
        };
        sym(&self.constant) && self.terms.values().all(sym)
    }

    /// Largest Frobenius norm among the coefficient matrices (constant excluded).
    pub fn coefficient_scale(&self) -> f64 {
        self.terms.values().map(DMatrix::norm).fold(0.0, f64::max)
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;

    /// Panics on shape mismatch; use [`AffineExpr::try_add`] for a checked sum.
    fn add(self, rhs: AffineExpr) -> AffineExpr {
        self.try_add(&rhs).expect("affine expression shapes must match")
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;

    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;

    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;

    fn mul(self, rhs: f64) -> AffineExpr {
        self.scale(rhs)
    }
}
