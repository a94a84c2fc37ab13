//! Matrix-variable front end for [`LmiProblem`].
//!
//! Matrix variables are registered with an [`LmiBuilder`], combined into
//! [`AffineExpr`] values with constant left/right products, Kronecker factors
//! and sums, and finally laid out as symmetric block matrices.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::LmiProblem;
use crate::error::{Error, Result};
use crate::matcore::kron;

/// A matrix-valued affine function `C + Σ_k y_k M_k` of the scalar variables.
#[derive(Clone, Debug)]
pub struct AffineExpr {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    /// `a · self`
    pub fn left_mul(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), self.rows(), "left_mul dimension mismatch");
        self.map(|m| a * m)
    }

    /// `self · b`
    pub fn right_mul(&self, b: &DMatrix<f64>) -> Self {
        assert_eq!(self.cols(), b.nrows(), "right_mul dimension mismatch");
        self.map(|m| m * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `a ⊗ self`
    pub fn kron_left(&self, a: &DMatrix<f64>) -> Self {
        self.map(|m| kron(a, m))
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        assert_eq!(self.shape(), other.shape(), "add dimension mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|e| *e += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// `self + a·I`
    pub fn shift(&self, a: f64) -> Self {
        assert_eq!(self.rows(), self.cols(), "shift needs a square expression");
        let mut out = self.clone();
        for i in 0..out.rows() {
            out.constant[(i, i)] += a;
        }
        out
    }

    /// Trace as a 1×1 expression.
    pub fn trace(&self) -> Self {
        self.map(|m| DMatrix::from_element(1, 1, m.trace()))
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, c) in &self.terms {
            m += c * y[*k];
        }
        m
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|m| m.iter().all(|v| *v == 0.0))
    }
}

/// Handle to a registered matrix variable.
#[derive(Clone, Debug)]
pub struct MatVar {
    offset: usize,
    rows: usize,
    cols: usize,
    symmetric: bool,
}

impl MatVar {
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of scalar unknowns behind the variable.
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entry positions of each scalar unknown, in index order. Symmetric
    /// variables use the upper triangle row by row; rectangular ones are row-major.
    fn positions(&self) -> Vec<(usize, usize)> {
        if self.symmetric {
            (0..self.rows)
                .flat_map(|i| (i..self.rows).map(move |j| (i, j)))
                .collect()
        } else {
            (0..self.rows)
                .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
                .collect()
        }
    }

    /// Basis matrix of the `k`-th scalar unknown.
    pub fn basis(&self, k: usize) -> DMatrix<f64> {
        let (i, j) = self.positions()[k];
        let mut m = DMatrix::zeros(self.rows, self.cols);
        m[(i, j)] = 1.0;
        if self.symmetric {
            m[(j, i)] = 1.0;
        }
        m
    }

    pub fn expr(&self) -> AffineExpr {
        let mut e = AffineExpr::zeros(self.rows, self.cols);
        for k in 0..self.len() {
            e.terms.insert(self.offset + k, self.basis(k));
        }
        e
    }

    pub fn value(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (k, (i, j)) in self.positions().into_iter().enumerate() {
            let v = y[self.offset + k];
            m[(i, j)] = v;
            if self.symmetric {
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Packs a matrix value into the variable's slots of `y`.
    pub fn pack(&self, m: &DMatrix<f64>, y: &mut DVector<f64>) {
        assert_eq!(m.shape(), (self.rows, self.cols), "pack dimension mismatch");
        for (k, (i, j)) in self.positions().into_iter().enumerate() {
            y[self.offset + k] = m[(i, j)];
        }
    }
}

/// A symmetric block matrix given by its lower-triangular blocks.
type BlockGrid = Vec<Vec<Option<AffineExpr>>>;

#[derive(Default)]
pub struct LmiBuilder {
    num_vars: usize,
    objective: BTreeMap<usize, f64>,
    lmis: Vec<AffineExpr>,
}

impl LmiBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn register(&mut self, rows: usize, cols: usize, symmetric: bool) -> Result<MatVar> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("matrix variable must have positive dimensions"));
        }
        if symmetric && rows != cols {
            return Err(Error::shape("symmetric variable must be square"));
        }
        let v = MatVar {
            offset: self.num_vars,
            rows,
            cols,
            symmetric,
        };
        self.num_vars += v.len();
        Ok(v)
    }

    pub fn sym_var(&mut self, n: usize) -> Result<MatVar> {
        self.register(n, n, true)
    }

    pub fn rect_var(&mut self, rows: usize, cols: usize) -> Result<MatVar> {
        self.register(rows, cols, false)
    }

    pub fn scalar_var(&mut self) -> Result<MatVar> {
        self.register(1, 1, true)
    }

    /// Adds a 1×1 linear expression to the minimization objective. Constant parts are ignored.
    pub fn add_objective(&mut self, e: &AffineExpr) -> Result<()> {
        if e.shape() != (1, 1) {
            return Err(Error::shape("objective term must be 1x1"));
        }
        for (k, m) in &e.terms {
            *self.objective.entry(*k).or_insert(0.0) += m[(0, 0)];
        }
        Ok(())
    }

    /// Adds `expr ⪰ 0` for a square symmetric expression.
    pub fn add_lmi(&mut self, expr: AffineExpr) -> Result<()> {
        if expr.rows() != expr.cols() {
            return Err(Error::shape("LMI expression must be square"));
        }
        self.lmis.push(expr);
        Ok(())
    }

    /// Adds a symmetric block LMI from its lower-triangular blocks
    /// (`grid[i][j]` for `j ≤ i`; `None` means zero). Diagonal blocks are required.
    pub fn add_block_lmi(&mut self, grid: BlockGrid) -> Result<()> {
        self.add_lmi(block_matrix(&grid)?)
    }

    pub fn build(&self) -> Result<LmiProblem> {
        let mut c = DVector::zeros(self.num_vars);
        for (k, v) in &self.objective {
            c[*k] = *v;
        }
        let mut p = LmiProblem::new(c);
        for e in &self.lmis {
            let terms = e
                .terms
                .iter()
                .filter(|(_, m)| m.iter().any(|v| *v != 0.0))
                .map(|(k, m)| (*k, m.clone()))
                .collect();
            p.add_sparse_block(e.constant.clone(), terms)?;
        }
        Ok(p)
    }
}

/// Lays out a symmetric block matrix from its lower-triangular blocks.
pub(crate) fn block_matrix(grid: &BlockGrid) -> Result<AffineExpr> {
    let nb = grid.len();
    let mut sizes = Vec::with_capacity(nb);
    for (i, row) in grid.iter().enumerate() {
        if row.len() != i + 1 {
            return Err(Error::shape(format!(
                "block row {i} must list {} blocks (lower triangle), got {}",
                i + 1,
                row.len()
            )));
        }
        let d = row[i]
            .as_ref()
            .ok_or_else(|| Error::shape(format!("diagonal block {i} is missing")))?;
        if d.rows() != d.cols() {
            return Err(Error::shape(format!("diagonal block {i} is not square")));
        }
        sizes.push(d.rows());
    }
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let total: usize = sizes.iter().sum();
    let mut out = AffineExpr::zeros(total, total);
    for (i, row) in grid.iter().enumerate() {
        for (j, blk) in row.iter().enumerate() {
            let Some(e) = blk else { continue };
            if e.shape() != (sizes[i], sizes[j]) {
                return Err(Error::shape(format!(
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    e.rows(),
                    e.cols(),
                    sizes[i],
                    sizes[j]
                )));
            }
            place(&mut out, e, offsets[i], offsets[j]);
            if i != j {
                place(&mut out, &e.transpose(), offsets[j], offsets[i]);
            }
        }
    }
    Ok(out)
}

fn place(out: &mut AffineExpr, e: &AffineExpr, r: usize, c: usize) {
    let (h, w) = e.shape();
    let total = out.rows();
    out.constant.view_mut((r, c), (h, w)).copy_from(&e.constant);
    for (k, m) in &e.terms {
        let dst = out
            .terms
            .entry(*k)
            .or_insert_with(|| DMatrix::zeros(total, total));
        dst.view_mut((r, c), (h, w)).copy_from(m);
    }
}
