//! Nominal and covariance-robust LQR for multiplicative-noise systems.
//!
//! The optimal value matrix solves `P = Q + F(P) − H(P)ᵀ(R + G(P))⁻¹H(P)` and
//! the optimal gain is `K = −(R + G(P))⁻¹H(P)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ambiguity::MomentAmbiguity;
use crate::error::{Error, Result};
use crate::matcore::{matrix_from_rows, matrix_to_rows, SymMatrix};
use crate::sdpcore::{self, AffineExpr, LmiBuilder, SdpOptions, SdpStatus};
use crate::stability::{is_mss, ClosedLoop, MSS_TOL};
use crate::sysmodel::{fgh_stacked, CostWeights, DisturbanceMoments, Fgh, MultNoiseSystem};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Trace beyond which the iteration is declared divergent.
const DIVERGENCE_TRACE: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Exact,
    UpperBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NominalVi,
    NominalSdp,
    DrCovariance,
    DrFull,
    DrRhc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::NominalVi => "nominal_vi",
            Method::NominalSdp => "nominal_sdp",
            Method::DrCovariance => "dr_covariance",
            Method::DrFull => "dr_full",
            Method::DrRhc => "dr_rhc",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    /// Frobenius norm of the Riccati residual, or the SDP gap bound.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct Controller {
    pub k: DMatrix<f64>,
    pub p: SymMatrix,
    pub cost_kind: CostKind,
    pub method: Method,
    pub stats: SolverStats,
}

/// Serialized controller. The DR fields are present only for DR syntheses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControllerJson {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_kind: Option<CostKind>,
    #[serde(rename = "trace_P", default, skip_serializing_if = "Option::is_none")]
    pub trace_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_bound: Option<f64>,
    #[serde(rename = "trace_W", default, skip_serializing_if = "Option::is_none")]
    pub trace_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_sigma: Option<f64>,
}

impl ControllerJson {
    /// Reads just the gain.
    pub fn gain(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows(&self.k)
    }
}

impl Controller {
    pub fn to_json(&self) -> ControllerJson {
        ControllerJson {
            k: matrix_to_rows(&self.k),
            p: Some(matrix_to_rows(self.p.as_matrix())),
            method: Some(self.method),
            cost_kind: Some(self.cost_kind),
            trace_p: Some(self.p.trace()),
            cost_bound: None,
            trace_w: None,
            rho_mu: None,
            rho_sigma: None,
        }
    }
}

struct RiccatiMap {
    sa: DMatrix<f64>,
    sb: DMatrix<f64>,
    ext: SymMatrix,
    q: SymMatrix,
    r: SymMatrix,
}

impl RiccatiMap {
    fn new(sys: &MultNoiseSystem, m: &DisturbanceMoments, cost: &CostWeights) -> Result<Self> {
        sys.check_moments(m)?;
        cost.check(sys)?;
        let (sa, sb) = sys.stacked();
        Ok(Self {
            sa,
            sb,
            ext: m.extended(),
            q: cost.q().clone(),
            r: cost.r().clone(),
        })
    }

    fn fgh(&self, p: &SymMatrix) -> Fgh {
        fgh_stacked(&self.sa, &self.sb, &self.ext, p)
    }

    /// `(K, Q + F + HᵀK)` at `P`.
    fn step(&self, p: &SymMatrix) -> Result<(DMatrix<f64>, SymMatrix)> {
        let Fgh { f, g, h } = self.fgh(p);
        let k = gain_from(&self.r, &g, &h)?;
        let next = self.q.as_matrix() + f.as_matrix() + h.transpose() * &k;
        Ok((k, SymMatrix::from_square(next)))
    }
}

/// `K = −(R + G)⁻¹H` through a Cholesky factorization.
fn gain_from(r: &SymMatrix, g: &SymMatrix, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rg = r.as_matrix() + g.as_matrix();
    let chol = rg
        .cholesky()
        .ok_or_else(|| Error::Numerical("R + G(P) is not positive definite".into()))?;
    Ok(-chol.solve(h))
}

/// Riccati gain at a given value matrix.
pub fn riccati_gain(sys: &MultNoiseSystem, m: &DisturbanceMoments, cost: &CostWeights, p: &SymMatrix) -> Result<DMatrix<f64>> {
    let map = RiccatiMap::new(sys, m, cost)?;
    Ok(map.step(p)?.0)
}

/// Frobenius norm of `Ric(P) − P`.
pub fn riccati_residual(sys: &MultNoiseSystem, m: &DisturbanceMoments, cost: &CostWeights, p: &SymMatrix) -> Result<f64> {
    let map = RiccatiMap::new(sys, m, cost)?;
    let (_, next) = map.step(p)?;
    Ok((next.as_matrix() - p.as_matrix()).norm())
}

/// Value iteration from `P₀ = 0`. Stops once
/// `‖P_{k+1} − P_k‖_F ≤ tol·(1 + ‖P_k‖_F)`; the sequence is checked to be
/// nondecreasing in the Loewner order at every sweep.
pub fn value_iteration(
    sys: &MultNoiseSystem,
    m: &DisturbanceMoments,
    cost: &CostWeights,
    tol: f64,
    max_iter: usize,
) -> Result<Controller> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol = {tol} must be positive")));
    }
    let map = RiccatiMap::new(sys, m, cost)?;
    let mut p = SymMatrix::zeros(sys.n_x());
    let mut increments: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let (_, next) = map.step(&p)?;
        let diff = next.sub(&p);
        let pnorm = p.as_matrix().norm();
        let dnorm = diff.as_matrix().norm();
        if !dnorm.is_finite() {
            return Err(Error::Numerical("value iteration produced non-finite values".into()));
        }
        let slack = 1e-9 * (1.0 + next.as_matrix().norm());
        if diff.min_eigenvalue()? < -slack {
            return Err(Error::Numerical(format!("value iteration lost monotonicity at sweep {it}")));
        }
        if next.trace() > DIVERGENCE_TRACE {
            return Err(Error::NotStabilizable {
                detail: format!("value iteration diverged (trace {:.3e} after {it} sweeps)", next.trace()),
                rho_sigma: None,
            });
        }
        p = next;
        if dnorm <= tol * (1.0 + pnorm) {
            let (k, again) = map.step(&p)?;
            let residual = (again.as_matrix() - p.as_matrix()).norm();
            return Ok(Controller {
                k,
                p,
                cost_kind: CostKind::Exact,
                method: Method::NominalVi,
                stats: SolverStats { iterations: it, residual },
            });
        }
        increments.push(diff.trace());
    }
    let n = increments.len();
    let growing = n >= 2 && increments[n - 1] >= 0.5 * increments[n / 2] && increments[n - 1] > 0.0;
    if growing {
        Err(Error::NotStabilizable {
            detail: format!("value iteration still growing after {max_iter} sweeps (trace {:.3e})", p.trace()),
            rho_sigma: None,
        })
    } else {
        Err(Error::Numerical(format!("value iteration did not converge in {max_iter} sweeps")))
    }
}

/// Value iteration with the default tolerance and iteration cap.
pub fn lqr(sys: &MultNoiseSystem, m: &DisturbanceMoments, cost: &CostWeights) -> Result<Controller> {
    value_iteration(sys, m, cost, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Maximizes `tr P` subject to
/// `[[Q − P + F(P), H(P)ᵀ], [H(P), R + G(P)]] ⪰ 0` and `P ⪰ 0`.
pub fn nominal_sdp(sys: &MultNoiseSystem, m: &DisturbanceMoments, cost: &CostWeights) -> Result<Controller> {
    nominal_sdp_with(sys, m, cost, &SdpOptions::default())
}

pub fn nominal_sdp_with(
    sys: &MultNoiseSystem,
    m: &DisturbanceMoments,
    cost: &CostWeights,
    opts: &SdpOptions,
) -> Result<Controller> {
    sys.check_moments(m)?;
    cost.check(sys)?;
    let (sa, sb) = sys.stacked();
    let ext = m.extended();
    let mut b = LmiBuilder::new();
    let pv = b.sym_var(sys.n_x())?;
    let p = pv.expr();
    let s = p.kron_left(ext.as_matrix());
    let f = s.left_mul(&sa.transpose()).right_mul(&sa);
    let g = s.left_mul(&sb.transpose()).right_mul(&sb);
    let h = s.left_mul(&sb.transpose()).right_mul(&sa);
    let q = AffineExpr::constant(cost.q().as_matrix().clone());
    let r = AffineExpr::constant(cost.r().as_matrix().clone());
    b.add_block_lmi(vec![
        vec![Some(q.sub(&p).add(&f))],
        vec![Some(h), Some(r.add(&g))],
    ])?;
    b.add_lmi(p.clone())?;
    b.add_objective(&p.trace().scale(-1.0))?;
    let problem = b.build()?;
    let sol = sdpcore::solve(&problem, opts);
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible | SdpStatus::Unbounded => {
            return Err(Error::NotStabilizable {
                detail: format!("nominal SDP is {:?}", sol.status).to_lowercase(),
                rho_sigma: None,
            })
        }
        SdpStatus::NumericalFailure => {
            return Err(Error::Numerical("nominal SDP solver failed".into()));
        }
    }
    let pm = SymMatrix::from_square(pv.value(&sol.y));
    let k = riccati_gain(sys, m, cost, &pm)?;
    let verdict = is_mss(&ClosedLoop::new(sys, k.clone())?, m, MSS_TOL)?;
    if !verdict.stable {
        return Err(Error::Unstable {
            spectral_radius: verdict.spectral_radius,
        });
    }
    Ok(Controller {
        k,
        p: pm,
        cost_kind: CostKind::Exact,
        method: Method::NominalSdp,
        stats: SolverStats {
            iterations: sol.iterations,
            residual: sol.gap_bound,
        },
    })
}

/// Optimal controller for the worst covariance `ρ_Σ Σ̂` with a known mean.
pub fn dr_covariance(
    sys: &MultNoiseSystem,
    mu_known: &DVector<f64>,
    amb: &MomentAmbiguity,
    cost: &CostWeights,
) -> Result<Controller> {
    let inflated = amb.sigma_hat().scale(amb.rho_sigma());
    let m = DisturbanceMoments::new(mu_known.clone(), inflated)?;
    match lqr(sys, &m, cost) {
        Ok(mut c) => {
            c.method = Method::DrCovariance;
            Ok(c)
        }
        Err(Error::NotStabilizable { detail, .. }) => Err(Error::NotStabilizable {
            detail,
            rho_sigma: Some(amb.rho_sigma()),
        }),
        Err(e) => Err(e),
    }
}
