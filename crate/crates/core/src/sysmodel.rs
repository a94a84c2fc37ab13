//! Linear systems with state- and input-multiplicative noise,
//!
//! ```text
//! x_{k+1} = A(w_k) x_k + B(w_k) u_k,   A(w) = A₀ + Σᵢ w⁽ⁱ⁾Aᵢ,   B(w) = B₀ + Σᵢ w⁽ⁱ⁾Bᵢ
//! ```
//!
//! together with the disturbance moments and the quadratic moment operators
//! `F(P) = Ā₀ᵀ(Σ̃⊗P)Ā₀`, `G(P) = B̄₀ᵀ(Σ̃⊗P)B̄₀`, `H(P) = B̄₀ᵀ(Σ̃⊗P)Ā₀`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{kron, matrix_from_rows, matrix_to_rows, SymMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct MultNoiseSystem {
    n_x: usize,
    n_u: usize,
    n_w: usize,
    a0: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    b0: DMatrix<f64>,
    b: Vec<DMatrix<f64>>,
}

impl MultNoiseSystem {
    pub fn new(
        a0: DMatrix<f64>,
        a: Vec<DMatrix<f64>>,
        b0: DMatrix<f64>,
        b: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_x = a0.nrows();
        let n_u = b0.ncols();
        let n_w = a.len();
        if n_x == 0 || n_u == 0 || n_w == 0 {
            return Err(Error::shape("n_x, n_u and n_w must all be positive"));
        }
        if a0.ncols() != n_x {
            return Err(Error::shape(format!("A0 must be {n_x}x{n_x}")));
        }
        if b0.nrows() != n_x {
            return Err(Error::shape(format!("B0 must be {n_x}x{n_u}")));
        }
        if b.len() != n_w {
            return Err(Error::shape(format!(
                "expected {n_w} input noise matrices, got {}",
                b.len()
            )));
        }
        for (i, ai) in a.iter().enumerate() {
            if ai.shape() != (n_x, n_x) {
                return Err(Error::shape(format!("A[{i}] must be {n_x}x{n_x}")));
            }
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.shape() != (n_x, n_u) {
                return Err(Error::shape(format!("B[{i}] must be {n_x}x{n_u}")));
            }
        }
        let all = std::iter::once(&a0)
            .chain(a.iter())
            .chain(std::iter::once(&b0))
            .chain(b.iter());
        for m in all {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("system matrices must be finite"));
            }
        }
        Ok(Self {
            n_x,
            n_u,
            n_w,
            a0,
            a,
            b0,
            b,
        })
    }

    /// Double integrator with velocity-damping and input-gain noise, sampled at `ts`.
    pub fn double_integrator(ts: f64) -> Self {
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0 - 0.4 * ts]);
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -ts]);
        let a2 = DMatrix::zeros(2, 2);
        let b0 = DMatrix::from_column_slice(2, 1, &[0.0, ts]);
        let b1 = DMatrix::zeros(2, 1);
        let b2 = DMatrix::from_column_slice(2, 1, &[0.0, ts]);
        Self::new(a0, vec![a1, a2], b0, vec![b1, b2]).expect("valid double integrator")
    }

    /// `x_{k+1} = (a + w)x + b·u`, scalar state, input and noise.
    pub fn scalar(a: f64, b: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::from_element(1, 1, b),
            vec![DMatrix::zeros(1, 1)],
        )
        .expect("valid scalar system")
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }

    pub fn a(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn eval_ab(&self, w: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if w.len() != self.n_w {
            return Err(Error::shape(format!(
                "disturbance has length {}, expected {}",
                w.len(),
                self.n_w
            )));
        }
        let mut a = self.a0.clone();
        let mut b = self.b0.clone();
        for (i, wi) in w.iter().enumerate() {
            a += &self.a[i] * *wi;
            b += &self.b[i] * *wi;
        }
        Ok((a, b))
    }

    /// Vertical stacks `[A₀; A₁; …; A_{n_w}]` and `[B₀; B₁; …; B_{n_w}]`.
    pub fn stacked(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_x;
        let blocks = self.n_w + 1;
        let mut sa = DMatrix::zeros(blocks * n, n);
        let mut sb = DMatrix::zeros(blocks * n, self.n_u);
        sa.view_mut((0, 0), (n, n)).copy_from(&self.a0);
        sb.view_mut((0, 0), (n, self.n_u)).copy_from(&self.b0);
        for i in 0..self.n_w {
            sa.view_mut(((i + 1) * n, 0), (n, n)).copy_from(&self.a[i]);
            sb.view_mut(((i + 1) * n, 0), (n, self.n_u))
                .copy_from(&self.b[i]);
        }
        (sa, sb)
    }

    /// Stacked closed-loop matrices `[A₀+B₀K; A₁+B₁K; …]`.
    pub fn closed_loop_stack(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(k)?;
        let (sa, sb) = self.stacked();
        Ok(sa + sb * k)
    }

    pub(crate) fn check_gain(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.n_u, self.n_x) {
            return Err(Error::shape(format!(
                "gain must be {}x{}, got {}x{}",
                self.n_u,
                self.n_x,
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_moments(&self, m: &DisturbanceMoments) -> Result<()> {
        if m.n_w() != self.n_w {
            return Err(Error::shape(format!(
                "moments have dimension {}, system has n_w = {}",
                m.n_w(),
                self.n_w
            )));
        }
        Ok(())
    }

    /// `(F(P), G(P), H(P))` through the Kronecker form.
    pub fn fgh(&self, m: &DisturbanceMoments, p: &SymMatrix) -> Result<Fgh> {
        self.check_moments(m)?;
        if p.dim() != self.n_x {
            return Err(Error::shape(format!("P must be {0}x{0}", self.n_x)));
        }
        let (sa, sb) = self.stacked();
        Ok(fgh_stacked(&sa, &sb, &m.extended(), p))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: SystemJson = serde_json::from_str(s)?;
        raw.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> SystemJson {
        SystemJson {
            n_x: self.n_x,
            n_u: self.n_u,
            n_w: self.n_w,
            a0: matrix_to_rows(&self.a0),
            a: self.a.iter().map(matrix_to_rows).collect(),
            b0: matrix_to_rows(&self.b0),
            b: self.b.iter().map(matrix_to_rows).collect(),
        }
    }
}

pub(crate) fn fgh_stacked(
    sa: &DMatrix<f64>,
    sb: &DMatrix<f64>,
    ext: &SymMatrix,
    p: &SymMatrix,
) -> Fgh {
    let s = kron(ext.as_matrix(), p.as_matrix());
    let s_a = &s * sa;
    let f = sa.transpose() * &s_a;
    let h = sb.transpose() * &s_a;
    let g = sb.transpose() * &s * sb;
    Fgh {
        f: SymMatrix::from_square(f),
        g: SymMatrix::from_square(g),
        h,
    }
}

#[derive(Clone, Debug)]
pub struct Fgh {
    pub f: SymMatrix,
    pub g: SymMatrix,
    pub h: DMatrix<f64>,
}

/// On-disk system description; nested arrays are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemJson {
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    #[serde(rename = "A0")]
    pub a0: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B0")]
    pub b0: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<SystemJson> for MultNoiseSystem {
    type Error = Error;

    fn try_from(raw: SystemJson) -> Result<Self> {
        let expect = |m: &DMatrix<f64>, r: usize, c: usize, name: &str| -> Result<()> {
            if m.shape() != (r, c) {
                return Err(Error::shape(format!(
                    "{name} is {}x{}, declared {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        if raw.a.len() != raw.n_w || raw.b.len() != raw.n_w {
            return Err(Error::shape(format!(
                "n_w = {} but A has {} and B has {} entries",
                raw.n_w,
                raw.a.len(),
                raw.b.len()
            )));
        }
        let a0 = matrix_from_rows(&raw.a0)?;
        expect(&a0, raw.n_x, raw.n_x, "A0")?;
        let b0 = matrix_from_rows(&raw.b0)?;
        expect(&b0, raw.n_x, raw.n_u, "B0")?;
        let mut a = Vec::with_capacity(raw.n_w);
        let mut b = Vec::with_capacity(raw.n_w);
        for i in 0..raw.n_w {
            let ai = matrix_from_rows(&raw.a[i])?;
            expect(&ai, raw.n_x, raw.n_x, &format!("A[{i}]"))?;
            let bi = matrix_from_rows(&raw.b[i])?;
            expect(&bi, raw.n_x, raw.n_u, &format!("B[{i}]"))?;
            a.push(ai);
            b.push(bi);
        }
        MultNoiseSystem::new(a0, a, b0, b)
    }
}

/// Mean and covariance of the multiplicative disturbance.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceMoments {
    mu: DVector<f64>,
    sigma: SymMatrix,
}

impl DisturbanceMoments {
    pub fn new(mu: DVector<f64>, sigma: SymMatrix) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::shape(format!(
                "mean has length {}, covariance is {}x{}",
                mu.len(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean must be finite"));
        }
        if !sigma.is_psd()? {
            return Err(Error::invalid("covariance must be positive semidefinite"));
        }
        Ok(Self { mu, sigma })
    }

    /// Zero mean, identity covariance.
    pub fn standard(n_w: usize) -> Self {
        Self {
            mu: DVector::zeros(n_w),
            sigma: SymMatrix::identity(n_w),
        }
    }

    pub fn n_w(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    /// Same mean, covariance scaled by `factor`.
    pub fn with_scaled_covariance(&self, factor: f64) -> Self {
        Self {
            mu: self.mu.clone(),
            sigma: self.sigma.scale(factor),
        }
    }

    /// Extended second moment `Σ̃ = [1 μᵀ; μ Σ+μμᵀ]`.
    pub fn extended(&self) -> SymMatrix {
        let n = self.n_w();
        let mut e = DMatrix::zeros(n + 1, n + 1);
        e[(0, 0)] = 1.0;
        for i in 0..n {
            e[(0, i + 1)] = self.mu[i];
            e[(i + 1, 0)] = self.mu[i];
        }
        let second = self.sigma.as_matrix() + &self.mu * self.mu.transpose();
        e.view_mut((1, 1), (n, n)).copy_from(&second);
        SymMatrix::from_square(e)
    }
}

/// Stage cost weights; both must be positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    q: SymMatrix,
    r: SymMatrix,
}

impl CostWeights {
    pub fn new(q: SymMatrix, r: SymMatrix) -> Result<Self> {
        if !q.is_pd(0.0)? {
            return Err(Error::invalid("state weight Q must be positive definite"));
        }
        if !r.is_pd(0.0)? {
            return Err(Error::invalid("input weight R must be positive definite"));
        }
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn check(&self, sys: &MultNoiseSystem) -> Result<()> {
        if self.q.dim() != sys.n_x() || self.r.dim() != sys.n_u() {
            return Err(Error::shape(format!(
                "cost weights are {}x{} / {}x{}, system has n_x = {}, n_u = {}",
                self.q.dim(),
                self.q.dim(),
                self.r.dim(),
                self.r.dim(),
                sys.n_x(),
                sys.n_u()
            )));
        }
        Ok(())
    }

    /// `Q + KᵀRK`
    pub fn closed_loop_weight(&self, k: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::from_square(self.q.as_matrix() + k.transpose() * self.r.as_matrix() * k)
    }
}
