//! Controller synthesis against the full moment ambiguity set.
//!
//! The quadratic value `xᵀW⁻¹x` is required to decrease for every mean in the
//! ellipsoid and every covariance up to `ρ_Σ Σ̂`. After the change of
//! variables `V = KW` the condition becomes two LMIs:
//!
//! ```text
//! [ S      r·H₁ᵀ … r·Hₙᵀ ]
//! [ r·H₁   L             ]  ⪰ 0
//! [ ⋮          ⋱         ]
//! [ r·Hₙ             L   ]
//!
//! [ W−√2S   (ĀW+B̄V)ᵀ   (ÂW+B̂V)ᵀ   WQ½   VᵀR½ ]
//! [ ĀW+B̄V   Σ_dr⁻¹⊗W                           ]
//! [ ÂW+B̂V              W−√2L                   ]  ⪰ 0
//! [ Q½W                           I            ]
//! [ R½V                                  I     ]
//! ```
//!
//! with `Hᵢ = Σⱼ [Σ̂½]ⱼᵢ(AⱼW + BⱼV)`, `Ā, B̄` the stacked noise matrices,
//! `Â = A(μ̂)`, `Σ_dr = ρ_Σ Σ̂` and `r = √ρ_μ` the radius of the whitened mean
//! ball. `tr W` is maximized; `K = VW⁻¹` and `P = W⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::ambiguity::MomentAmbiguity;
use crate::error::{Error, Result};
use crate::matcore::{psd_sqrt, SymMatrix};
use crate::riccati::{Controller, ControllerJson, CostKind, Method, SolverStats};
use crate::sdpcore::{self, AffineExpr, LmiBuilder, LmiProblem, MatVar, SdpOptions, SdpSolution, SdpStatus};
use crate::stability::{dr_certify_mss, ClosedLoop};
use crate::sysmodel::{CostWeights, MultNoiseSystem};

/// Grid resolution used to confirm DR stability of a synthesized gain.
pub const CERTIFY_GRID: usize = 8;
/// Lower bound on `L`, relative to the problem scale.
const L_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub controller: Controller,
    pub w: SymMatrix,
    pub v: DMatrix<f64>,
    pub s: SymMatrix,
    pub l: SymMatrix,
    /// `tr(W⁻¹)` for the full synthesis, `γ` for the receding-horizon one.
    pub cost_bound: f64,
    pub trace_w: f64,
    pub rho_mu: f64,
    pub rho_sigma: f64,
    pub sdp_iterations: usize,
}

impl SynthesisResult {
    pub fn to_json(&self) -> ControllerJson {
        let mut j = self.controller.to_json();
        j.cost_bound = Some(self.cost_bound);
        j.trace_w = Some(self.trace_w);
        j.rho_mu = Some(self.rho_mu);
        j.rho_sigma = Some(self.rho_sigma);
        j
    }
}

/// Variable handles of an assembled problem.
#[derive(Clone, Debug)]
pub struct FullVars {
    pub w: MatVar,
    pub v: MatVar,
    pub s: MatVar,
    pub l: MatVar,
    pub gamma: Option<MatVar>,
}

fn builder(
    sys: &MultNoiseSystem,
    amb: &MomentAmbiguity,
    cost: &CostWeights,
) -> Result<(LmiBuilder, FullVars)> {
    cost.check(sys)?;
    if amb.n_w() != sys.n_w() {
        return Err(Error::shape(format!(
            "ambiguity set has dimension {}, system has n_w = {}",
            amb.n_w(),
            sys.n_w()
        )));
    }
    let min_eig = amb.sigma_hat().min_eigenvalue()?;
    if min_eig <= 0.0 {
        return Err(Error::SingularCovariance { min_eig });
    }
    let (nx, nu, nw) = (sys.n_x(), sys.n_u(), sys.n_w());
    let mut b = LmiBuilder::new();
    let wv = b.sym_var(nx)?;
    let vv = b.rect_var(nu, nx)?;
    let sv = b.sym_var(nx)?;
    let lv = b.sym_var(nx)?;
    let (w, v, s, l) = (wv.expr(), vv.expr(), sv.expr(), lv.expr());

    let f: Vec<AffineExpr> = (0..nw)
        .map(|i| w.left_mul(&sys.a()[i]).add(&v.left_mul(&sys.b()[i])))
        .collect();
    let root = psd_sqrt(amb.sigma_hat())?;
    let radius = amb.rho_mu().sqrt();
    let h: Vec<AffineExpr> = (0..nw)
        .map(|i| {
            (0..nw).fold(AffineExpr::zeros(nx, nx), |acc, j| {
                acc.add(&f[j].scale(root.as_matrix()[(j, i)]))
            })
        })
        .collect();

    let mut arrow: Vec<Vec<Option<AffineExpr>>> = vec![vec![Some(s.clone())]];
    for hi in &h {
        let mut row = vec![Some(hi.scale(radius))];
        row.extend(std::iter::repeat(None).take(arrow.len() - 1));
        row.push(Some(l.clone()));
        arrow.push(row);
    }
    b.add_block_lmi(arrow)?;

    let (sa, sb) = sys.stacked();
    let noise_a = sa.rows(nx, nw * nx).into_owned();
    let noise_b = sb.rows(nx, nw * nx).into_owned();
    let stacked = w.left_mul(&noise_a).add(&v.left_mul(&noise_b));
    let (a_hat, b_hat) = sys.eval_ab(amb.mu_hat())?;
    let mean = w.left_mul(&a_hat).add(&v.left_mul(&b_hat));
    let sigma_dr_inv = amb.sigma_hat().scale(amb.rho_sigma()).inverse_pd()?;
    let q_half = psd_sqrt(cost.q())?;
    let r_half = psd_sqrt(cost.r())?;
    let sqrt2 = std::f64::consts::SQRT_2;
    b.add_block_lmi(vec![
        vec![Some(w.sub(&s.scale(sqrt2)))],
        vec![Some(stacked), Some(w.kron_left(sigma_dr_inv.as_matrix()))],
        vec![Some(mean), None, Some(w.sub(&l.scale(sqrt2)))],
        vec![Some(w.left_mul(q_half.as_matrix())), None, None, Some(AffineExpr::identity(nx))],
        vec![Some(v.left_mul(r_half.as_matrix())), None, None, None, Some(AffineExpr::identity(nu))],
    ])?;

    let scale = 1.0f64.max(cost.q().as_matrix().norm()).max(cost.r().as_matrix().norm());
    b.add_lmi(l.shift(-L_FLOOR * scale))?;

    Ok((
        b,
        FullVars {
            w: wv,
            v: vv,
            s: sv,
            l: lv,
            gamma: None,
        },
    ))
}

/// The full-ambiguity LMI problem with objective `−tr W`.
pub fn assemble_full(sys: &MultNoiseSystem, amb: &MomentAmbiguity, cost: &CostWeights) -> Result<LmiProblem> {
    Ok(assemble_full_vars(sys, amb, cost)?.0)
}

pub fn assemble_full_vars(
    sys: &MultNoiseSystem,
    amb: &MomentAmbiguity,
    cost: &CostWeights,
) -> Result<(LmiProblem, FullVars)> {
    let (mut b, vars) = builder(sys, amb, cost)?;
    b.add_objective(&vars.w.expr().trace().scale(-1.0))?;
    Ok((b.build()?, vars))
}

/// Same constraints plus `[[γ, x₀ᵀ], [x₀, W]] ⪰ 0`, minimizing `γ`.
pub fn assemble_rhc(
    sys: &MultNoiseSystem,
    amb: &MomentAmbiguity,
    cost: &CostWeights,
    x0: &DVector<f64>,
) -> Result<(LmiProblem, FullVars)> {
    if x0.len() != sys.n_x() {
        return Err(Error::shape(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            sys.n_x()
        )));
    }
    let (mut b, mut vars) = builder(sys, amb, cost)?;
    let g = b.scalar_var()?;
    let x = AffineExpr::constant(DMatrix::from_column_slice(x0.len(), 1, x0.as_slice()));
    b.add_block_lmi(vec![vec![Some(g.expr())], vec![Some(x), Some(vars.w.expr())]])?;
    b.add_objective(&g.expr())?;
    vars.gamma = Some(g);
    Ok((b.build()?, vars))
}

fn check_status(sol: &SdpSolution, amb: &MomentAmbiguity) -> Result<()> {
    match sol.status {
        SdpStatus::Optimal => Ok(()),
        SdpStatus::Infeasible => Err(Error::Infeasible(format!(
            "no DR stabilizing controller for rho_mu = {:.4e}, rho_sigma = {:.4}",
            amb.rho_mu(),
            amb.rho_sigma()
        ))),
        SdpStatus::Unbounded => Err(Error::Numerical("DR synthesis SDP reported unbounded".into())),
        SdpStatus::NumericalFailure => Err(Error::Numerical("DR synthesis SDP solver failed".into())),
    }
}

fn extract(
    sys: &MultNoiseSystem,
    amb: &MomentAmbiguity,
    sol: &SdpSolution,
    vars: &FullVars,
    method: Method,
) -> Result<SynthesisResult> {
    let w = SymMatrix::from_square(vars.w.value(&sol.y));
    let v = vars.v.value(&sol.y);
    let p = w.inverse_pd().map_err(|_| Error::Numerical("W is not positive definite".into()))?;
    let k = &v * p.as_matrix();
    let cl = ClosedLoop::new(sys, k.clone())?;
    if !dr_certify_mss(&cl, amb, CERTIFY_GRID)? {
        return Err(Error::Infeasible(
            "synthesized gain failed the sampled DR stability check".into(),
        ));
    }
    let cost_bound = match &vars.gamma {
        Some(g) => g.value(&sol.y)[(0, 0)],
        None => p.trace(),
    };
    Ok(SynthesisResult {
        controller: Controller {
            k,
            p,
            cost_kind: CostKind::UpperBound,
            method,
            stats: SolverStats {
                iterations: sol.iterations,
                residual: sol.gap_bound,
            },
        },
        trace_w: w.trace(),
        w,
        v,
        s: SymMatrix::from_square(vars.s.value(&sol.y)),
        l: SymMatrix::from_square(vars.l.value(&sol.y)),
        cost_bound,
        rho_mu: amb.rho_mu(),
        rho_sigma: amb.rho_sigma(),
        sdp_iterations: sol.iterations,
    })
}

pub fn synth_full(sys: &MultNoiseSystem, amb: &MomentAmbiguity, cost: &CostWeights) -> Result<SynthesisResult> {
    synth_full_with(sys, amb, cost, &SdpOptions::default())
}

pub fn synth_full_with(
    sys: &MultNoiseSystem,
    amb: &MomentAmbiguity,
    cost: &CostWeights,
    opts: &SdpOptions,
) -> Result<SynthesisResult> {
    let (problem, vars) = assemble_full_vars(sys, amb, cost)?;
    let sol = sdpcore::solve(&problem, opts);
    check_status(&sol, amb)?;
    extract(sys, amb, &sol, &vars, Method::DrFull)
}

pub fn synth_rhc(
    sys: &MultNoiseSystem,
    amb: &MomentAmbiguity,
    cost: &CostWeights,
    x0: &DVector<f64>,
) -> Result<SynthesisResult> {
    let (problem, vars) = assemble_rhc(sys, amb, cost, x0)?;
    let sol = sdpcore::solve(&problem, &SdpOptions::default());
    check_status(&sol, amb)?;
    extract(sys, amb, &sol, &vars, Method::DrRhc)
}
