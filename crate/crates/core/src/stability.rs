//! Mean-square stability of `x_{k+1} = (A(w_k) + B(w_k)K) x_k`.
//!
//! Stability is decided by the spectral radius of the second-moment operator
//! `L(P) = Āᶜᵀ(Σ̃⊗P)Āᶜ`, represented as an `n_x² × n_x²` matrix acting on `vec(P)`.
//! Closed-loop costs come from the linear solve `(I − T)vec(P) = vec(Q + KᵀRK)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ambiguity::MomentAmbiguity;
use crate::error::{Error, Result};
use crate::matcore::{kron, psd_sqrt, spectral_radius, unvec, vec, SymMatrix};
use crate::sysmodel::{CostWeights, DisturbanceMoments, MultNoiseSystem};

/// Default strictness margin: a radius within this of one counts as unstable.
pub const MSS_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ClosedLoop<'a> {
    sys: &'a MultNoiseSystem,
    k: DMatrix<f64>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(sys: &'a MultNoiseSystem, k: DMatrix<f64>) -> Result<Self> {
        sys.check_gain(&k)?;
        Ok(Self { sys, k })
    }

    /// Zero gain.
    pub fn open_loop(sys: &'a MultNoiseSystem) -> Self {
        Self {
            sys,
            k: DMatrix::zeros(sys.n_u(), sys.n_x()),
        }
    }

    pub fn system(&self) -> &MultNoiseSystem {
        self.sys
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Closed-loop matrices `A_i + B_i K` for `i = 0..=n_w`.
    fn blocks(&self) -> Vec<DMatrix<f64>> {
        let n = self.sys.n_x();
        let stack = self
            .sys
            .closed_loop_stack(&self.k)
            .expect("gain validated at construction");
        (0..=self.sys.n_w())
            .map(|i| stack.view((i * n, 0), (n, n)).into_owned())
            .collect()
    }

    /// `Āᶜᵀ(Σ̃⊗P)Āᶜ` evaluated directly.
    pub fn apply_operator(&self, m: &DisturbanceMoments, p: &SymMatrix) -> Result<SymMatrix> {
        self.sys.check_moments(m)?;
        let stack = self.sys.closed_loop_stack(&self.k)?;
        let s = kron(m.extended().as_matrix(), p.as_matrix());
        Ok(SymMatrix::from_square(stack.transpose() * s * stack))
    }
}

/// Matrix `T` of `P ↦ Āᶜᵀ(Σ̃⊗P)Āᶜ` on column-stacked `P`.
pub fn second_moment_operator(cl: &ClosedLoop, m: &DisturbanceMoments) -> Result<DMatrix<f64>> {
    cl.sys.check_moments(m)?;
    let n = cl.sys.n_x();
    let ext = m.extended();
    let blocks = cl.blocks();
    let transposed: Vec<_> = blocks.iter().map(|b| b.transpose()).collect();
    let mut t = DMatrix::zeros(n * n, n * n);
    for (i, ati) in transposed.iter().enumerate() {
        for (j, atj) in transposed.iter().enumerate() {
            let w = ext.as_matrix()[(i, j)];
            if w != 0.0 {
                // vec(Aᵢᵀ P Aⱼ) = (Aⱼᵀ ⊗ Aᵢᵀ) vec(P)
                t += kron(atj, ati) * w;
            }
        }
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MssVerdict {
    pub stable: bool,
    pub spectral_radius: f64,
}

pub fn is_mss(cl: &ClosedLoop, m: &DisturbanceMoments, tol: f64) -> Result<MssVerdict> {
    let t = second_moment_operator(cl, m)?;
    let rho = spectral_radius(&t)?;
    Ok(MssVerdict {
        stable: rho < 1.0 - tol,
        spectral_radius: rho,
    })
}

/// Solves `P = rhs + L(P)` for a mean-square stable closed loop.
fn solve_lyapunov(cl: &ClosedLoop, m: &DisturbanceMoments, rhs: &SymMatrix, tol: f64) -> Result<SymMatrix> {
    let n = cl.sys.n_x();
    let t = second_moment_operator(cl, m)?;
    let rho = spectral_radius(&t)?;
    if rho >= 1.0 - tol {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    let a = DMatrix::identity(n * n, n * n) - t;
    let x = a
        .lu()
        .solve(&vec(rhs.as_matrix()))
        .ok_or_else(|| Error::Numerical("singular Lyapunov system".into()))?;
    Ok(SymMatrix::from_square(unvec(&x, n)?))
}

/// Lyapunov certificate: `P ≻ 0` with `P − L(P) = I`.
pub fn lyapunov_p(cl: &ClosedLoop, m: &DisturbanceMoments, tol: f64) -> Result<SymMatrix> {
    let n = cl.sys.n_x();
    let p = solve_lyapunov(cl, m, &SymMatrix::identity(n), tol)?;
    if !p.is_pd(0.0)? {
        return Err(Error::Numerical("Lyapunov solution is not positive definite".into()));
    }
    let decrease = p.sub(&cl.apply_operator(m, &p)?);
    if decrease.min_eigenvalue()? < tol {
        return Err(Error::Numerical("Lyapunov decrease margin below tolerance".into()));
    }
    Ok(p)
}

/// Value matrix `P_cl` of the closed loop: `P_cl = Q + KᵀRK + L(P_cl)`.
pub fn closed_loop_value(cl: &ClosedLoop, m: &DisturbanceMoments, cost: &CostWeights) -> Result<SymMatrix> {
    cost.check(cl.sys)?;
    solve_lyapunov(cl, m, &cost.closed_loop_weight(&cl.k), MSS_TOL)
}

/// Expected infinite-horizon cost `x₀ᵀP_cl x₀`.
pub fn closed_loop_cost(
    cl: &ClosedLoop,
    m: &DisturbanceMoments,
    cost: &CostWeights,
    x0: &DVector<f64>,
) -> Result<f64> {
    if x0.len() != cl.sys.n_x() {
        return Err(Error::shape(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            cl.sys.n_x()
        )));
    }
    Ok(closed_loop_value(cl, m, cost)?.quad_form(x0))
}

/// Sampled DR stability check: the closed loop must be mean-square stable
/// with covariance `ρ_Σ·Σ̂` at every mean on a grid over the ellipsoid
/// `(μ−μ̂)ᵀΣ̂⁻¹(μ−μ̂) ≤ ρ_μ` (see [`mean_grid_points`]). This is a sufficient
/// sampled test, not an exact maximization over the ellipsoid.
pub fn dr_certify_mss(cl: &ClosedLoop, amb: &MomentAmbiguity, mean_grid: usize) -> Result<bool> {
    let sigma = amb.sigma_hat().scale(amb.rho_sigma());
    for mu in mean_grid_points(amb.mu_hat(), amb.sigma_hat(), amb.rho_mu(), mean_grid)? {
        let m = DisturbanceMoments::new(mu, sigma.clone())?;
        if !is_mss(cl, &m, MSS_TOL)?.stable {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Deterministic grid over `{μ : (μ−μ̂)ᵀΣ̂⁻¹(μ−μ̂) ≤ ρ}`: the center plus
/// `grid` concentric shells (the last one on the boundary), each sampled along
/// `max(grid, 2·n_w)` directions. The directions include `±eᵢ`; in two
/// dimensions they are evenly spaced angles.
pub fn mean_grid_points(
    mu_hat: &DVector<f64>,
    sigma_hat: &SymMatrix,
    rho: f64,
    grid: usize,
) -> Result<Vec<DVector<f64>>> {
    let n = mu_hat.len();
    let mut pts = vec![mu_hat.clone()];
    if rho <= 0.0 || grid == 0 {
        return Ok(pts);
    }
    let root = psd_sqrt(sigma_hat)?;
    let dirs = sphere_directions(n, grid.max(2 * n));
    let radius = rho.sqrt();
    for shell in 1..=grid {
        let r = radius * shell as f64 / grid as f64;
        for d in &dirs {
            pts.push(mu_hat + root.as_matrix() * d * r);
        }
    }
    Ok(pts)
}

fn sphere_directions(n: usize, count: usize) -> Vec<DVector<f64>> {
    if n == 1 {
        return vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
    }
    if n == 2 {
        return (0..count)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / count as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    let mut dirs = Vec::with_capacity(count);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = DVector::zeros(n);
            e[i] = s;
            dirs.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1e5);
    while dirs.len() < count {
        let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm = v.norm();
        if norm > 1e-12 {
            dirs.push(v / norm);
        }
    }
    dirs
}
