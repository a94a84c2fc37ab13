//! Empirical moments and high-probability moment ambiguity sets.
//!
//! The set is `{(μ, Σ) : (μ−μ̂)ᵀΣ̂⁻¹(μ−μ̂) ≤ ρ_μ, Σ ⪯ ρ_Σ Σ̂}` with radii that
//! hold jointly with probability `1 − β` for σ²-sub-Gaussian disturbances.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;

/// Rows are i.i.d. disturbance draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::InsufficientData(samples.nrows()));
        }
        if samples.ncols() == 0 {
            return Err(Error::shape("samples have no columns"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples contain non-finite entries"));
        }
        Ok(Self { samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::shape(format!("row {i} has {} entries, expected {n}", r.len())));
        }
        Self::new(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    /// Comma-separated rows of decimals. A first line that does not parse as
    /// numbers is treated as a header.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => {
                    if let Some(first) = rows.first() {
                        if v.len() != first.len() {
                            return Err(Error::shape(format!(
                                "line {}: {} columns, expected {}",
                                line + 1,
                                v.len(),
                                first.len()
                            )));
                        }
                    }
                    rows.push(v);
                }
                Err(_) if line == 0 => {}
                Err(e) => return Err(Error::invalid(format!("line {}: {e}", line + 1))),
            }
        }
        Self::from_rows(&rows)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            w.write_record(self.samples.row(i).iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn n_w(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityConfig {
    pub beta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
}

fn default_eps() -> f64 {
    1.0 / 30.0
}

fn default_sigma2() -> f64 {
    1.0
}

impl AmbiguityConfig {
    pub fn new(beta: f64, eps: f64, sigma2: f64) -> Result<Self> {
        let c = Self { beta, eps, sigma2 };
        c.validate()?;
        Ok(c)
    }

    pub fn with_defaults(beta: f64) -> Result<Self> {
        Self::new(beta, default_eps(), default_sigma2())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Domain(format!("beta = {} must lie in (0, 1)", self.beta)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Domain(format!("eps = {} must lie in (0, 1/2)", self.eps)));
        }
        if !(self.sigma2 >= 1.0 && self.sigma2.is_finite()) {
            return Err(Error::Domain(format!("sigma2 = {} must be at least 1", self.sigma2)));
        }
        Ok(())
    }
}

/// Where the radii came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: AmbiguityConfig,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentAmbiguity {
    mu_hat: DVector<f64>,
    sigma_hat: SymMatrix,
    rho_mu: f64,
    rho_sigma: f64,
    regularized: bool,
    provenance: Option<Provenance>,
}

impl MomentAmbiguity {
    /// Ambiguity set from explicit center and radii.
    pub fn from_parts(mu_hat: DVector<f64>, sigma_hat: SymMatrix, rho_mu: f64, rho_sigma: f64) -> Result<Self> {
        if mu_hat.len() != sigma_hat.dim() {
            return Err(Error::shape(format!(
                "mean has length {}, covariance is {}x{}",
                mu_hat.len(),
                sigma_hat.dim(),
                sigma_hat.dim()
            )));
        }
        if !(rho_mu >= 0.0 && rho_mu.is_finite()) {
            return Err(Error::Domain(format!("rho_mu = {rho_mu} must be nonnegative")));
        }
        if !(rho_sigma >= 1.0 && rho_sigma.is_finite()) {
            return Err(Error::Domain(format!("rho_sigma = {rho_sigma} must be at least 1")));
        }
        if mu_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean must be finite"));
        }
        let min_eig = sigma_hat.min_eigenvalue()?;
        if min_eig <= 0.0 {
            return Err(Error::SingularCovariance { min_eig });
        }
        Ok(Self {
            mu_hat,
            sigma_hat,
            rho_mu,
            rho_sigma,
            regularized: false,
            provenance: None,
        })
    }

    pub fn mu_hat(&self) -> &DVector<f64> {
        &self.mu_hat
    }

    pub fn sigma_hat(&self) -> &SymMatrix {
        &self.sigma_hat
    }

    pub fn rho_mu(&self) -> f64 {
        self.rho_mu
    }

    pub fn rho_sigma(&self) -> f64 {
        self.rho_sigma
    }

    pub fn n_w(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Whether `(μ, Σ)` lies in the set, with relative slack `tol`.
    pub fn contains(&self, mu: &DVector<f64>, sigma: &SymMatrix, tol: f64) -> Result<bool> {
        let inv = self.sigma_hat.inverse_pd()?;
        let d = mu - &self.mu_hat;
        let mean_ok = inv.quad_form(&d) <= self.rho_mu * (1.0 + tol) + tol;
        let gap = self.sigma_hat.scale(self.rho_sigma).sub(sigma);
        let scale = 1.0 + gap.as_matrix().norm();
        let cov_ok = gap.min_eigenvalue()? >= -tol * scale;
        Ok(mean_ok && cov_ok)
    }
}

/// `(μ̂, Σ̂)` with `Σ̂ = (1/M) Σ (ŵᵢ−μ̂)(ŵᵢ−μ̂)ᵀ`.
pub fn empirical_moments(s: &SampleSet) -> Result<(DVector<f64>, SymMatrix)> {
    let m = s.len();
    if m < 2 {
        return Err(Error::InsufficientData(m));
    }
    let x = s.samples();
    let mu = x.row_sum().transpose() / m as f64;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let sigma = centered.transpose() * &centered / m as f64;
    Ok((mu, SymMatrix::from_square(sigma)))
}

fn q_term(beta: f64, eps: f64, n_w: usize) -> f64 {
    n_w as f64 * (1.0 + 1.0 / eps).ln() + (2.0 / beta).ln()
}

fn p_term(beta: f64, n_w: usize) -> f64 {
    let n = n_w as f64;
    let l = (1.0 / beta).ln();
    n + 2.0 * (n * l).sqrt() + 2.0 * l
}

/// Covariance deviation bound at confidence level `beta` (used as given).
pub fn t_sigma(beta: f64, eps: f64, sigma2: f64, n_w: usize, m: usize) -> f64 {
    let q = q_term(beta, eps, n_w);
    let mf = m as f64;
    sigma2 / (1.0 - 2.0 * eps) * ((32.0 * q / mf).sqrt() + 2.0 * q / mf)
}

/// Mean deviation bound at confidence level `beta` (used as given).
pub fn t_mu(beta: f64, sigma2: f64, n_w: usize, m: usize) -> f64 {
    sigma2 * p_term(beta, n_w) / m as f64
}

fn denominator(cfg: &AmbiguityConfig, n_w: usize, m: usize) -> f64 {
    let b = cfg.beta / 2.0;
    1.0 - t_mu(b, cfg.sigma2, n_w, m) - t_sigma(b, cfg.eps, cfg.sigma2, n_w, m)
}

/// Real threshold on `M`: the radii are finite iff `M` strictly exceeds it.
pub fn sample_size_threshold(cfg: &AmbiguityConfig, n_w: usize) -> f64 {
    let b = cfg.beta / 2.0;
    let q = q_term(b, cfg.eps, n_w);
    let p = p_term(b, n_w);
    let s2 = cfg.sigma2;
    let c = 1.0 - 2.0 * cfg.eps;
    let root = s2 * (32.0 * q).sqrt()
        + (32.0 * s2 * s2 * q + 8.0 * s2 * c * q + 4.0 * s2 * c * c * p).sqrt();
    (root / (2.0 * c)).powi(2)
}

/// Smallest `M` with `1 − t_μ(β/2) − t_Σ(β/2) > 0`.
pub fn min_sample_size(cfg: &AmbiguityConfig, n_w: usize) -> Result<usize> {
    cfg.validate()?;
    if n_w == 0 {
        return Err(Error::shape("n_w must be positive"));
    }
    let mut m = (sample_size_threshold(cfg, n_w).floor() as usize + 1).max(1);
    // guard the floating-point boundary
    while denominator(cfg, n_w, m) <= 0.0 {
        m += 1;
    }
    while m > 1 && denominator(cfg, n_w, m - 1) > 0.0 {
        m -= 1;
    }
    Ok(m)
}

/// `(ρ_μ, ρ_Σ)` with half of `β` spent on each moment.
pub fn ambiguity_radii(cfg: &AmbiguityConfig, n_w: usize, m: usize) -> Result<(f64, f64)> {
    let m_min = min_sample_size(cfg, n_w)?;
    if m < m_min {
        return Err(Error::SampleSize { m, m_min });
    }
    let b = cfg.beta / 2.0;
    let tm = t_mu(b, cfg.sigma2, n_w, m);
    let rho_sigma = 1.0 / denominator(cfg, n_w, m);
    Ok((tm * rho_sigma, rho_sigma))
}

/// Empirical moments plus radii. `Σ̂` is shifted by `lambda_reg·I` when its
/// smallest eigenvalue is below `lambda_reg`.
pub fn build_ambiguity(s: &SampleSet, cfg: &AmbiguityConfig, lambda_reg: f64) -> Result<MomentAmbiguity> {
    if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
        return Err(Error::Domain(format!("lambda_reg = {lambda_reg} must be nonnegative")));
    }
    let (rho_mu, rho_sigma) = ambiguity_radii(cfg, s.n_w(), s.len())?;
    let (mu_hat, mut sigma_hat) = empirical_moments(s)?;
    let eigs = sigma_hat.eigenvalues()?;
    let min_eig = eigs[0];
    let max_eig = eigs[eigs.len() - 1];
    let mut regularized = false;
    if lambda_reg > 0.0 && min_eig < lambda_reg {
        sigma_hat = sigma_hat.shift(lambda_reg);
        regularized = true;
    } else if min_eig <= 1e-12 * max_eig.max(1.0) {
        return Err(Error::SingularCovariance { min_eig });
    }
    let mut amb = MomentAmbiguity::from_parts(mu_hat, sigma_hat, rho_mu, rho_sigma)?;
    amb.regularized = regularized;
    amb.provenance = Some(Provenance { config: *cfg, m: s.len() });
    Ok(amb)
}
