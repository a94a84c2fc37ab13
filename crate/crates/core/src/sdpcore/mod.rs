//! Dense log-det barrier solver for linear objectives under LMI constraints:
//!
//! ```text
//! minimize cᵀy   subject to   F₀⁽ᵇ⁾ + Σᵢ yᵢ Fᵢ⁽ᵇ⁾ ⪰ 0   for every block b
//! ```
//!
//! Phase I finds a strictly feasible point by minimizing an auxiliary shift
//! `s` with `F(y) + sI ⪰ 0`; Phase II follows the central path with damped
//! Newton steps, dividing the barrier parameter by ten per outer iteration.
//! The line search is exact: along a direction `d` the barrier restricted to
//! the line is a sum of `log(1 + αλ)` terms whose `λ` are the eigenvalues of
//! `L⁻¹(Σ dᵢFᵢ)L⁻ᵀ`, so the step to the boundary is known in closed form.

mod assemble;

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{matrix_to_rows, SymMatrix};

pub use assemble::{AffineExpr, LmiBuilder, MatVar};

/// One PSD constraint `F₀ + Σᵢ yᵢFᵢ ⪰ 0`. Only variables that actually appear
/// in the block carry a coefficient matrix.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    f0: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn f0(&self) -> &DMatrix<f64> {
        &self.f0
    }

    pub fn terms(&self) -> &[(usize, DMatrix<f64>)] {
        &self.terms
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (i, fi) in &self.terms {
            if y[*i] != 0.0 {
                m += fi * y[*i];
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct LmiProblem {
    num_vars: usize,
    objective: DVector<f64>,
    blocks: Vec<LmiBlock>,
}

impl LmiProblem {
    pub fn new(objective: DVector<f64>) -> Self {
        Self {
            num_vars: objective.len(),
            objective,
            blocks: Vec::new(),
        }
    }

    /// Adds a block from dense per-variable coefficients (`coeffs.len() == num_vars`).
    pub fn add_block(&mut self, f0: DMatrix<f64>, coeffs: Vec<DMatrix<f64>>) -> Result<()> {
        if coeffs.len() != self.num_vars {
            return Err(Error::shape(format!(
                "block has {} coefficient matrices, problem has {} variables",
                coeffs.len(),
                self.num_vars
            )));
        }
        let d = f0.nrows();
        if let Some((i, m)) = coeffs.iter().enumerate().find(|(_, m)| m.shape() != (d, d)) {
            return Err(Error::shape(format!(
                "coefficient of variable {i} is {}x{}, block is {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
        let terms = coeffs
            .into_iter()
            .enumerate()
            .filter(|(_, m)| m.iter().any(|v| *v != 0.0))
            .collect();
        self.add_sparse_block(f0, terms)
    }

    /// Adds a block from `(variable index, coefficient)` pairs.
    pub fn add_sparse_block(
        &mut self,
        f0: DMatrix<f64>,
        terms: Vec<(usize, DMatrix<f64>)>,
    ) -> Result<()> {
        let d = f0.nrows();
        if d == 0 || f0.ncols() != d {
            return Err(Error::shape("block constant must be square and non-empty"));
        }
        check_symmetric(&f0, "F0")?;
        for (i, fi) in &terms {
            if *i >= self.num_vars {
                return Err(Error::shape(format!("variable index {i} out of range")));
            }
            if fi.shape() != (d, d) {
                return Err(Error::shape(format!(
                    "coefficient of variable {i} is {}x{}, block is {d}x{d}",
                    fi.nrows(),
                    fi.ncols()
                )));
            }
            check_symmetric(fi, &format!("F{i}"))?;
        }
        let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
        let terms = terms.into_iter().map(|(i, m)| (i, sym(m))).collect();
        self.blocks.push(LmiBlock { f0: sym(f0), terms });
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn objective(&self) -> &DVector<f64> {
        &self.objective
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    /// Sum of block dimensions; the central-path duality gap is `total_dim / t`.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(LmiBlock::dim).sum()
    }

    /// Magnitude reference for feasibility tolerances.
    pub fn scale(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.f0.norm())
            .fold(1.0, f64::max)
    }

    pub fn eval_block(&self, b: usize, y: &DVector<f64>) -> DMatrix<f64> {
        self.blocks[b].eval(y)
    }

    /// Smallest eigenvalue over all blocks at `y`.
    pub fn min_eigenvalue(&self, y: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| min_sym_eig(&b.eval(y)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes the pencil matrices and objective as JSON for offline inspection.
    pub fn dump_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let dump = ProblemDump {
            num_vars: self.num_vars,
            objective: self.objective.iter().copied().collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDump {
                    f0: matrix_to_rows(&b.f0),
                    terms: b
                        .terms
                        .iter()
                        .map(|(i, m)| (*i, matrix_to_rows(m)))
                        .collect(),
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&dump)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ProblemDump {
    num_vars: usize,
    objective: Vec<f64>,
    blocks: Vec<BlockDump>,
}

#[derive(Serialize, Deserialize)]
struct BlockDump {
    f0: Vec<Vec<f64>>,
    terms: Vec<(usize, Vec<Vec<f64>>)>,
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::shape(format!("{name} is not symmetric (asymmetry {asym:.2e})")));
    }
    Ok(())
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    SymMatrix::from_square(m.clone())
        .min_eigenvalue()
        .unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug)]
pub struct SdpOptions {
    pub feas_tol: f64,
    /// Relative duality-gap target: stop once `m/t ≤ tol·(1 + |cᵀy|)`.
    pub duality_gap_tol: f64,
    pub max_newton_iters: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            duality_gap_tol: 1e-7,
            max_newton_iters: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub y: DVector<f64>,
    pub status: SdpStatus,
    pub objective_value: f64,
    pub min_block_eigenvalue: f64,
    /// Newton iterations over both phases.
    pub iterations: usize,
    /// Objective value at each completed centering step of Phase II.
    pub central_path: Vec<f64>,
    /// Duality gap bound `m/t` at exit (Phase II only).
    pub gap_bound: f64,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// Newton decrement threshold (λ²/2) that counts as centered.
const CENTER_TOL: f64 = 1e-10;
/// Looser threshold accepted when the line search can no longer make progress.
const CENTER_TOL_LOOSE: f64 = 1e-5;
const MU_FACTOR: f64 = 10.0;
/// Phase I searches within `‖y‖ ≤ PHASE_ONE_RADIUS·scale`.
const PHASE_ONE_RADIUS: f64 = 1e6;

pub fn solve(p: &LmiProblem, opts: &SdpOptions) -> SdpSolution {
    let mut budget = Budget {
        used: 0,
        max: opts.max_newton_iters,
    };
    let n = p.num_vars;
    let scale = p.scale();
    let fail = |y: DVector<f64>, status: SdpStatus, budget: &Budget| SdpSolution {
        objective_value: p.objective.dot(&y),
        min_block_eigenvalue: p.min_eigenvalue(&y),
        y,
        status,
        iterations: budget.used,
        central_path: Vec::new(),
        gap_bound: f64::INFINITY,
    };

    if p.blocks.is_empty() {
        let status = if p.objective.iter().all(|c| *c == 0.0) {
            SdpStatus::Optimal
        } else {
            SdpStatus::Unbounded
        };
        return fail(DVector::zeros(n), status, &budget);
    }

    let y0 = DVector::zeros(n);
    let y = if p.min_eigenvalue(&y0) > 1e-12 * scale && factor_all(p, &y0).is_some() {
        y0
    } else {
        match phase_one(p, opts, &mut budget) {
            Ok(y) => y,
            Err((y, status)) => return fail(y, status, &budget),
        }
    };
    phase_two(p, y, opts, &mut budget)
}

struct Budget {
    used: usize,
    max: usize,
}

impl Budget {
    fn tick(&mut self) -> bool {
        self.used += 1;
        self.used <= self.max
    }
}

fn factor_all(p: &LmiProblem, y: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
    p.blocks
        .iter()
        .map(|b| b.eval(y).cholesky().map(|c| c.l()))
        .collect()
}

/// Gradient, Hessian and the whitened coefficients `Gᵢ = L⁻¹FᵢL⁻ᵀ` of
/// `t·cᵀy − Σ_b log det F_b(y)`.
struct NewtonSystem {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    whitened: Vec<Vec<(usize, DMatrix<f64>)>>,
}

fn newton_system(p: &LmiProblem, y: &DVector<f64>, t: f64) -> Option<NewtonSystem> {
    let n = p.num_vars;
    let mut grad = &p.objective * t;
    let mut hess = DMatrix::zeros(n, n);
    let mut whitened = Vec::with_capacity(p.blocks.len());
    for block in &p.blocks {
        let l = block.eval(y).cholesky()?.l();
        let gs: Vec<(usize, DMatrix<f64>)> = block
            .terms
            .iter()
            .map(|(i, fi)| {
                let x = l.solve_lower_triangular(fi)?;
                let g = l.solve_lower_triangular(&x.transpose())?;
                Some((*i, g))
            })
            .collect::<Option<_>>()?;
        for (a, (i, gi)) in gs.iter().enumerate() {
            grad[*i] -= gi.trace();
            for (j, gj) in gs.iter().skip(a) {
                let v = gi.dot(gj);
                hess[(*i, *j)] += v;
                if i != j {
                    hess[(*j, *i)] += v;
                }
            }
        }
        whitened.push(gs);
    }
    Some(NewtonSystem {
        grad,
        hess,
        whitened,
    })
}

/// Solves `H d = −g` with Jacobi equilibration and Levenberg damping when
/// the Hessian is not numerically positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let h = hess[(i, i)];
            if h > 0.0 {
                h.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] / (d[i] * d[j]));
    let rhs = DVector::from_fn(n, |i, _| -grad[i] / d[i]);
    let mut damping = 0.0;
    for _ in 0..30 {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += damping;
        }
        if let Some(ch) = m.cholesky() {
            let z = ch.solve(&rhs);
            if z.iter().all(|v| v.is_finite()) {
                return Some(DVector::from_fn(n, |i, _| z[i] / d[i]));
            }
        }
        damping = if damping == 0.0 { 1e-14 } else { damping * 100.0 };
    }
    None
}

enum LineSearch {
    Step(f64),
    /// Every block pencil is nondecreasing along the direction while the
    /// objective strictly decreases.
    Ray { max_step: f64 },
}

/// Exact minimization of `φ(α) = α·tcd − Σ log(1 + αλ)` over the feasible step range.
fn line_search(tcd: f64, lams: &[f64]) -> LineSearch {
    let lam_scale = lams.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let amax = lams
        .iter()
        .filter(|l| **l < 0.0)
        .map(|l| -1.0 / l)
        .fold(f64::INFINITY, f64::min);
    let nonneg = lams.iter().all(|l| *l >= -1e-13 * lam_scale);
    if nonneg && tcd < 0.0 {
        return LineSearch::Ray { max_step: amax };
    }
    let dphi = |a: f64| tcd - lams.iter().map(|l| l / (1.0 + a * l)).sum::<f64>();
    if dphi(0.0) >= 0.0 {
        return LineSearch::Step(0.0);
    }
    let mut lo = 0.0;
    let mut hi = if amax.is_finite() {
        amax
    } else {
        let mut h = 1.0;
        while dphi(h) < 0.0 {
            h *= 2.0;
            if h > 1e30 {
                return LineSearch::Ray { max_step: amax };
            }
        }
        h
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dphi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    LineSearch::Step(lo)
}

enum StepOutcome {
    Moved { decrement_sq: f64 },
    Ray(DVector<f64>, f64),
    Stalled { decrement_sq: f64 },
    Broken,
}

fn newton_step(p: &LmiProblem, y: &mut DVector<f64>, t: f64) -> StepOutcome {
    let Some(sys) = newton_system(p, y, t) else {
        return StepOutcome::Broken;
    };
    let Some(d) = newton_direction(&sys.hess, &sys.grad) else {
        return StepOutcome::Broken;
    };
    let decrement_sq = -sys.grad.dot(&d);
    if !decrement_sq.is_finite() {
        return StepOutcome::Broken;
    }
    let mut lams = Vec::with_capacity(p.total_dim());
    for gs in &sys.whitened {
        let Some((_, first)) = gs.first() else {
            continue;
        };
        let mut dm = DMatrix::zeros(first.nrows(), first.ncols());
        for (i, g) in gs {
            if d[*i] != 0.0 {
                dm += g * d[*i];
            }
        }
        let dm = (&dm + dm.transpose()) * 0.5;
        lams.extend(SymmetricEigen::new(dm).eigenvalues.iter().copied());
    }
    let tcd = t * p.objective.dot(&d);
    match line_search(tcd, &lams) {
        LineSearch::Ray { max_step } => StepOutcome::Ray(d, max_step),
        LineSearch::Step(alpha) => {
            let before = y.clone();
            y.axpy(alpha, &d, 1.0);
            if alpha <= 0.0 || *y == before {
                StepOutcome::Stalled { decrement_sq }
            } else {
                StepOutcome::Moved { decrement_sq }
            }
        }
    }
}

enum CenterOutcome {
    Centered,
    /// Stopped early because the caller's condition became true.
    Stopped,
    Ray(DVector<f64>, f64),
    Failed,
}

fn center(
    p: &LmiProblem,
    y: &mut DVector<f64>,
    t: f64,
    budget: &mut Budget,
    stop: &dyn Fn(&DVector<f64>) -> bool,
) -> CenterOutcome {
    let mut stalls = 0;
    loop {
        if !budget.tick() {
            return CenterOutcome::Failed;
        }
        match newton_step(p, y, t) {
            StepOutcome::Moved { decrement_sq } => {
                if stop(y) {
                    return CenterOutcome::Stopped;
                }
                if decrement_sq * 0.5 <= CENTER_TOL {
                    return CenterOutcome::Centered;
                }
                stalls = 0;
            }
            StepOutcome::Stalled { decrement_sq } => {
                if decrement_sq * 0.5 <= CENTER_TOL_LOOSE {
                    return CenterOutcome::Centered;
                }
                stalls += 1;
                if stalls > 3 {
                    return CenterOutcome::Failed;
                }
            }
            StepOutcome::Ray(d, max_step) => return CenterOutcome::Ray(d, max_step),
            StepOutcome::Broken => return CenterOutcome::Failed,
        }
    }
}

/// Barrier weight that best matches the central-path optimality condition at `y`.
fn initial_t(p: &LmiProblem, y: &DVector<f64>) -> f64 {
    let fallback = 1.0;
    let Some(sys) = newton_system(p, y, 0.0) else {
        return fallback;
    };
    let Some(hinv_c) = newton_direction(&sys.hess, &(-&p.objective)) else {
        return fallback;
    };
    let num = -hinv_c.dot(&sys.grad);
    let den = hinv_c.dot(&p.objective);
    let t = num / den;
    if t.is_finite() && t > 0.0 {
        t.clamp(1e-6, 1e6)
    } else {
        fallback
    }
}

fn phase_one(
    p: &LmiProblem,
    opts: &SdpOptions,
    budget: &mut Budget,
) -> std::result::Result<DVector<f64>, (DVector<f64>, SdpStatus)> {
    let n = p.num_vars;
    let mut aux = LmiProblem::new(DVector::from_fn(n + 1, |i, _| if i == n { 1.0 } else { 0.0 }));
    for b in &p.blocks {
        let mut terms = b.terms.clone();
        terms.push((n, DMatrix::identity(b.dim(), b.dim())));
        aux.blocks.push(LmiBlock {
            f0: b.f0.clone(),
            terms,
        });
    }
    let scale = p.scale();
    // keeps the auxiliary barrier bounded below when the feasible set is not
    let radius = PHASE_ONE_RADIUS * scale;
    let ball_terms = (0..n)
        .map(|i| {
            let mut e = DMatrix::zeros(n + 1, n + 1);
            e[(0, i + 1)] = 1.0;
            e[(i + 1, 0)] = 1.0;
            (i, e)
        })
        .collect();
    aux.blocks.push(LmiBlock {
        f0: DMatrix::identity(n + 1, n + 1) * radius,
        terms: ball_terms,
    });
    let m = aux.total_dim() as f64;
    let lmin = p.min_eigenvalue(&DVector::zeros(n));
    let s0 = if lmin.is_finite() {
        (-lmin).max(0.0) * 1.1 + 1.0
    } else {
        scale + 1.0
    };
    let mut z = DVector::zeros(n + 1);
    z[n] = s0;
    let feasible = |z: &DVector<f64>| z[n] < 0.0;
    let project = |z: &DVector<f64>| z.rows(0, n).into_owned();

    let mut t = initial_t(&aux, &z);
    loop {
        match center(&aux, &mut z, t, budget, &feasible) {
            CenterOutcome::Stopped => return Ok(project(&z)),
            CenterOutcome::Centered => {}
            CenterOutcome::Ray(d, max_step) => {
                // any step along the ray stays feasible; go far enough to make s negative
                let ds = d[n];
                let want = 2.0 * (z[n].abs() + 1.0) / ds.abs().max(f64::MIN_POSITIVE);
                let alpha = if max_step.is_finite() {
                    want.min(0.5 * max_step)
                } else {
                    want
                };
                z.axpy(alpha, &d, 1.0);
                if feasible(&z) && factor_all(p, &project(&z)).is_some() {
                    return Ok(project(&z));
                }
                continue;
            }
            CenterOutcome::Failed => {
                let status = if z[n] > opts.feas_tol * scale {
                    SdpStatus::Infeasible
                } else {
                    SdpStatus::NumericalFailure
                };
                return Err((project(&z), status));
            }
        }
        if feasible(&z) {
            return Ok(project(&z));
        }
        let gap = m / t;
        // s* ≥ s − m/t on the central path
        if z[n] - gap > 0.0 || gap <= opts.feas_tol * scale {
            return Err((project(&z), SdpStatus::Infeasible));
        }
        t *= MU_FACTOR;
    }
}

fn phase_two(
    p: &LmiProblem,
    mut y: DVector<f64>,
    opts: &SdpOptions,
    budget: &mut Budget,
) -> SdpSolution {
    let m = p.total_dim() as f64;
    let mut t = initial_t(p, &y);
    let mut path = Vec::new();
    let never = |_: &DVector<f64>| false;
    let status = loop {
        match center(p, &mut y, t, budget, &never) {
            CenterOutcome::Centered | CenterOutcome::Stopped => {}
            CenterOutcome::Ray(..) => break SdpStatus::Unbounded,
            CenterOutcome::Failed => break SdpStatus::NumericalFailure,
        }
        let obj = p.objective.dot(&y);
        path.push(obj);
        if m / t <= opts.duality_gap_tol * (1.0 + obj.abs()) {
            break SdpStatus::Optimal;
        }
        t *= MU_FACTOR;
    };
    SdpSolution {
        objective_value: p.objective.dot(&y),
        min_block_eigenvalue: p.min_eigenvalue(&y),
        y,
        status,
        iterations: budget.used,
        central_path: path,
        gap_bound: m / t,
    }
}
