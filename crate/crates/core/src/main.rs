use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::json;

use drlqr::ambiguity::{
    ambiguity_radii, build_ambiguity, empirical_moments, min_sample_size, t_mu, t_sigma, AmbiguityConfig, SampleSet,
};
use drlqr::drsynth::{synth_full, synth_rhc};
use drlqr::experiment::{replicate_example1, run_sample_complexity, write_records_csv, ExperimentConfig};
use drlqr::matcore::matrix_from_rows;
use drlqr::riccati::{dr_covariance, lqr, ControllerJson};
use drlqr::stability::{is_mss, ClosedLoop, MSS_TOL};
use drlqr::{CostWeights, DisturbanceMoments, Error, MultNoiseSystem, Result, SymMatrix};

#[derive(Parser)]
#[command(name = "drlqr", version, about = "Distributionally robust LQR synthesis for multiplicative-noise systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Concentration bounds, ambiguity radii and the minimum sample size.
    Bounds {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, default_value_t = 1.0 / 30.0)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
    },
    /// Synthesize a controller from disturbance samples.
    Synth {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, default_value_t = 1.0 / 30.0)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long, value_enum)]
        method: SynthMethod,
        /// Initial state, comma separated; required by `rhc`.
        #[arg(long)]
        x0: Option<String>,
        /// Covariance regularization weight.
        #[arg(long, default_value_t = 0.0)]
        reg: f64,
        /// JSON file with `Q` and `R`; identity weights when omitted.
        #[arg(long)]
        cost: Option<PathBuf>,
    },
    /// Mean-square stability of a closed loop.
    Mss {
        #[arg(long)]
        system: PathBuf,
        /// Controller JSON with a `K` field.
        #[arg(long)]
        gain: PathBuf,
        /// Disturbance mean, comma separated; zero when omitted.
        #[arg(long)]
        mu: Option<String>,
        /// Disturbance covariance as a JSON array of rows; identity when omitted.
        #[arg(long)]
        cov: Option<PathBuf>,
    },
    /// Sample-complexity sweep written as CSV.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Fill the wall_ms column.
        #[arg(long)]
        timing: bool,
    },
    /// Failure probability of the certainty-equivalent design in the scalar example.
    Example1 {
        #[arg(long, default_value_t = 500)]
        m: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthMethod {
    Nominal,
    Covariance,
    Full,
    Rhc,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CostJson {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

fn parse_vector(s: &str) -> Result<DVector<f64>> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Invalid(format!("bad number {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(v))
}

fn load_cost(path: Option<&PathBuf>, sys: &MultNoiseSystem) -> Result<CostWeights> {
    let cost = match path {
        Some(p) => {
            let raw: CostJson = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            CostWeights::new(
                SymMatrix::new(matrix_from_rows(&raw.q)?)?,
                SymMatrix::new(matrix_from_rows(&raw.r)?)?,
            )?
        }
        None => CostWeights::new(SymMatrix::identity(sys.n_x()), SymMatrix::identity(sys.n_u()))?,
    };
    cost.check(sys)?;
    Ok(cost)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn bounds(dim: usize, m: usize, beta: f64, eps: f64, sigma2: f64) -> Result<()> {
    let cfg = AmbiguityConfig::new(beta, eps, sigma2)?;
    if dim == 0 {
        return Err(Error::Invalid("dim must be positive".into()));
    }
    let m_min = min_sample_size(&cfg, dim)?;
    let radii = if m >= m_min { Some(ambiguity_radii(&cfg, dim, m)?) } else { None };
    print_json(&json!({
        "t_sigma": t_sigma(beta / 2.0, eps, sigma2, dim, m),
        "t_mu": t_mu(beta / 2.0, sigma2, dim, m),
        "rho_mu": radii.map(|r| r.0),
        "rho_sigma": radii.map(|r| r.1),
        "m_min": m_min,
    }))
}

#[allow(clippy::too_many_arguments)]
fn synth(
    system: &PathBuf,
    samples: &PathBuf,
    cfg: AmbiguityConfig,
    method: SynthMethod,
    x0: Option<&str>,
    reg: f64,
    cost: Option<&PathBuf>,
) -> Result<()> {
    let sys = MultNoiseSystem::load(system)?;
    let cost = load_cost(cost, &sys)?;
    let samples = SampleSet::load_csv(samples)?;
    if samples.n_w() != sys.n_w() {
        return Err(Error::Shape(format!(
            "samples have {} columns, system has n_w = {}",
            samples.n_w(),
            sys.n_w()
        )));
    }
    let out: ControllerJson = match method {
        SynthMethod::Nominal => {
            let (mu, sigma) = empirical_moments(&samples)?;
            lqr(&sys, &DisturbanceMoments::new(mu, sigma)?, &cost)?.to_json()
        }
        SynthMethod::Covariance => {
            let amb = build_ambiguity(&samples, &cfg, reg)?;
            let mut j = dr_covariance(&sys, amb.mu_hat(), &amb, &cost)?.to_json();
            j.rho_mu = Some(amb.rho_mu());
            j.rho_sigma = Some(amb.rho_sigma());
            j
        }
        SynthMethod::Full => synth_full(&sys, &build_ambiguity(&samples, &cfg, reg)?, &cost)?.to_json(),
        SynthMethod::Rhc => {
            let x0 = parse_vector(x0.ok_or_else(|| Error::Invalid("--x0 is required for rhc".into()))?)?;
            synth_rhc(&sys, &build_ambiguity(&samples, &cfg, reg)?, &cost, &x0)?.to_json()
        }
    };
    print_json(&out)
}

fn mss(system: &PathBuf, gain: &PathBuf, mu: Option<&str>, cov: Option<&PathBuf>) -> Result<()> {
    let sys = MultNoiseSystem::load(system)?;
    let ctrl: ControllerJson = serde_json::from_str(&std::fs::read_to_string(gain)?)?;
    let mu = match mu {
        Some(s) => parse_vector(s)?,
        None => DVector::zeros(sys.n_w()),
    };
    let sigma = match cov {
        Some(p) => {
            let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            SymMatrix::new(matrix_from_rows(&rows)?)?
        }
        None => SymMatrix::identity(sys.n_w()),
    };
    let m = DisturbanceMoments::new(mu, sigma)?;
    let k: DMatrix<f64> = ctrl.gain()?;
    let v = is_mss(&ClosedLoop::new(&sys, k)?, &m, MSS_TOL)?;
    print_json(&json!({ "stable": v.stable, "spectral_radius": v.spectral_radius }))
}

fn experiment(config: Option<&PathBuf>, out: &PathBuf, seed: Option<u64>, jobs: Option<usize>, timing: bool) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.record_timing |= timing;
    let run = || run_sample_complexity(&cfg);
    let res = match jobs {
        Some(0) => return Err(Error::Invalid("--jobs must be positive".into())),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::Numerical(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    write_records_csv(&res.records, out)?;
    let failures = res.records.iter().filter(|r| !r.stabilizing).count();
    eprintln!(
        "{} rows written to {}, J_nom = {:.6}, {failures} non-stabilizing",
        res.records.len(),
        out.display(),
        res.j_nom
    );
    Ok(())
}

fn example1(m: usize, trials: usize, seed: u64) -> Result<()> {
    print_json(&replicate_example1(m, trials, seed)?)
}

fn exit_code(e: &Error, synthesis: bool) -> u8 {
    match e {
        Error::Infeasible(_) | Error::NotStabilizable { .. } if synthesis => 3,
        Error::Numerical(_) | Error::Unstable { .. } | Error::NotStabilizable { .. } | Error::Infeasible(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let synthesis = matches!(cli.cmd, Cmd::Synth { .. });
    let res = match &cli.cmd {
        Cmd::Bounds { dim, m, beta, eps, sigma2 } => bounds(*dim, *m, *beta, *eps, *sigma2),
        Cmd::Synth {
            system,
            samples,
            beta,
            eps,
            sigma2,
            method,
            x0,
            reg,
            cost,
        } => AmbiguityConfig::new(*beta, *eps, *sigma2)
            .and_then(|cfg| synth(system, samples, cfg, *method, x0.as_deref(), *reg, cost.as_ref())),
        Cmd::Mss { system, gain, mu, cov } => mss(system, gain, mu.as_deref(), cov.as_ref()),
        Cmd::Experiment {
            config,
            out,
            seed,
            jobs,
            timing,
        } => experiment(config.as_ref(), out, *seed, *jobs, *timing),
        Cmd::Example1 { m, trials, seed } => example1(*m, *trials, *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e, synthesis))
        }
    }
}
