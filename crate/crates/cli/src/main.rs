//! `reachcert` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O and other errors, 2 parse errors, 3 solver
//! failure, 4 degree mismatch, 5 verification violations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use serde_json::json;

use reachcert::certcheck::{gram_psd_check, levelset_slice, residual_check, Certificate, Mode};
use reachcert::mcsim;
use reachcert::problem::{LoadedProblem, ProblemFile};
use reachcert::sdp::sdpa::write_sdpa;
use reachcert::sdp::SolverConfig;
use reachcert::sos::{build_reach_avoid, build_safety, compile, solve_program, DegreeConfig, SosProgram};
use reachcert::Error;

const PSD_TOL: f64 = 1e-7;
/// Larger input coefficients tend to leave the SDP badly scaled.
const COEFF_WARN: f64 = 1e3;

#[derive(Parser)]
#[command(name = "reachcert", version, about = "Certified inner approximations of reach-avoid sets for polynomial SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reach-avoid SOS program and write the certificate.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        degrees: DegreeFlags,
        /// Override the problem's probability threshold.
        #[arg(long)]
        p: Option<f64>,
        /// Strictness margin: members satisfy v > p + mu.
        #[arg(long)]
        mu: Option<f64>,
        /// Certificate output; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the compiled SDP in SDPA sparse format.
        #[arg(long)]
        sdpa_dump: Option<PathBuf>,
    },
    /// Check a certificate pointwise and its Gram blocks.
    Verify {
        certificate: PathBuf,
        problem: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte-Carlo estimate of the reach-avoid probability from one state.
    Simulate {
        problem: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 20.0)]
        tmax: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Estimate the occupation value with horizon `tmax` instead.
        #[arg(long)]
        occupation: bool,
        /// Write the first path as CSV (t, x1..xn).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Monte-Carlo check at sampled members of a certified set.
    Validate {
        certificate: PathBuf,
        problem: PathBuf,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 20.0)]
        tmax: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Grid values of v and level-set membership as CSV.
    Levelset {
        certificate: PathBuf,
        problem: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.5")]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimise an upper bound on the probability of reaching T from INI.
    Safety {
        problem: PathBuf,
        #[command(flatten)]
        degrees: DegreeFlags,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sdpa_dump: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DegreeFlags {
    #[arg(long)]
    degree_v: Option<u32>,
    #[arg(long)]
    degree_u: Option<u32>,
    #[arg(long)]
    degree_s: Option<u32>,
    #[arg(long)]
    degree_p: Option<u32>,
}

impl DegreeFlags {
    fn apply(&self, base: DegreeConfig) -> DegreeConfig {
        DegreeConfig {
            d_v: self.degree_v.unwrap_or(base.d_v),
            d_u: self.degree_u.unwrap_or(base.d_u),
            d_s: self.degree_s.unwrap_or(base.d_s),
            d_p: self.degree_p.unwrap_or(base.d_p),
        }
    }
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(
                Error::Parse(_) | Error::Json(_) | Error::Sdpa { .. } | Error::InvalidInput(_) | Error::DimensionMismatch { .. },
            ) => 2,
            Some(Error::SolverFailed { .. }) => 3,
            Some(Error::DegreeMismatch { .. }) => 4,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

type CmdResult = std::result::Result<u8, Failure>;

fn init_logging() {
    let level = match std::env::var("REACHCERT_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Error,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn load_problem(path: &Path) -> std::result::Result<LoadedProblem, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lp = ProblemFile::load(&text).map_err(|e| fail(2, anyhow::anyhow!("{}: {e}", path.display())))?;
    let prob = &lp.problem;
    let inputs = prob
        .sde
        .drift()
        .iter()
        .chain(prob.sde.diffusion().iter().flatten())
        .chain([&prob.h0, &prob.g])
        .chain(lp.ini.as_ref());
    let largest = inputs.map(|q| q.max_abs_coefficient()).fold(0.0, f64::max);
    if largest > COEFF_WARN {
        log::warn!("{}: coefficient of magnitude {largest:e} exceeds {COEFF_WARN:e}; consider rescaling the state", path.display());
    }
    Ok(lp)
}

fn load_certificate(path: &Path) -> std::result::Result<Certificate, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Certificate::from_json(&text).map_err(|e| fail(2, anyhow::anyhow!("{}: {e}", path.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> std::result::Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => emit(text),
    }
    Ok(())
}

/// Writes to stdout; a closed pipe (`reachcert ... | head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json(v: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json values serialise")));
}

fn run_program(prog: &SosProgram, sdpa_dump: Option<&Path>) -> std::result::Result<Certificate, Failure> {
    if let Some(path) = sdpa_dump {
        std::fs::write(path, write_sdpa(&compile(prog))).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(solve_program(prog, &SolverConfig::default())?.0)
}

/// Writes the certificate to `out`, or prints it when there is no `out`.
/// With a file, stdout gets a summary instead.
fn emit_certificate(cert: &Certificate, out: Option<&Path>) -> std::result::Result<(), Failure> {
    let text = cert.to_json()?;
    match out {
        None => emit(&format!("{text}\n")),
        Some(p) => {
            std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
            print_json(&json!({
                "certificate": p.display().to_string(),
                "mode": cert.mode,
                "p_threshold": cert.p_threshold,
                "objective": cert.objective,
                "degrees": cert.degrees,
                "stats": cert.stats,
                "v": cert.v.to_string(),
            }));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Solve { problem, degrees, p, mu, out, sdpa_dump } => {
            let mut lp = load_problem(&problem)?;
            if let Some(p) = p {
                if !(0.0..1.0).contains(&p) {
                    return Err(fail(2, anyhow::anyhow!("--p {p} is not in [0, 1)")));
                }
                lp.problem.p_threshold = p;
            }
            if let Some(mu) = mu {
                if !(mu >= 0.0 && mu.is_finite()) {
                    return Err(fail(2, anyhow::anyhow!("--mu {mu} must be a finite non-negative number")));
                }
                lp.problem.mu = mu;
            }
            let deg = degrees.apply(lp.file.degrees);
            let prog = build_reach_avoid(&lp.problem, deg)?;
            let cert = run_program(&prog, sdpa_dump.as_deref())?;
            emit_certificate(&cert, out.as_deref())?;
            Ok(0)
        }
        Command::Safety { problem, degrees, out, sdpa_dump } => {
            let lp = load_problem(&problem)?;
            let Some(ini) = lp.ini.as_ref() else {
                return Err(fail(2, anyhow::anyhow!("{}: safety mode needs an `ini` polynomial", problem.display())));
            };
            let deg = degrees.apply(lp.file.degrees);
            let prog = build_safety(&lp.problem, ini, deg)?;
            let cert = run_program(&prog, sdpa_dump.as_deref())?;
            emit_certificate(&cert, out.as_deref())?;
            Ok(0)
        }
        Command::Verify { certificate, problem, samples, seed } => {
            let cert = load_certificate(&certificate)?;
            let lp = load_problem(&problem)?;
            let residual = residual_check(&cert, &lp.problem, samples, seed)?;
            let gram = if cert.gram.is_empty() {
                log::warn!("certificate has no Gram blocks; skipping the PSD check");
                None
            } else {
                Some(gram_psd_check(&cert, PSD_TOL))
            };
            let passed = residual.passed() && gram.as_ref().is_none_or(|g| g.passed);
            print_json(&json!({ "passed": passed, "residual": residual, "gram": gram }));
            Ok(if passed { 0 } else { 5 })
        }
        Command::Simulate { problem, x0, paths, dt, tmax, seed, occupation, trace } => {
            let lp = load_problem(&problem)?;
            let est = if occupation {
                mcsim::estimate_value_occupation(&lp.problem, &x0, paths, dt, tmax, seed)?
            } else {
                mcsim::estimate_reach_avoid(&lp.problem, &x0, paths, dt, tmax, seed)?
            };
            if let Some(path) = trace {
                let (_, rows) = mcsim::trace_path(&lp.problem, &x0, dt, tmax, seed)?;
                std::fs::write(&path, mcsim::trace_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&serde_json::to_value(&est)?);
            Ok(0)
        }
        Command::Validate { certificate, problem, points, paths, dt, tmax, seed } => {
            let cert = load_certificate(&certificate)?;
            if cert.mode != Mode::ReachAvoid {
                return Err(fail(2, anyhow::anyhow!("validation needs a reach-avoid certificate")));
            }
            let lp = load_problem(&problem)?;
            let report = mcsim::validate_certificate(&cert, &lp.problem, points, paths, dt, tmax, seed)?;
            let passed = report.passed();
            print_json(&serde_json::to_value(&report)?);
            Ok(if passed { 0 } else { 5 })
        }
        Command::Levelset { certificate, problem, levels, grid, out } => {
            let cert = load_certificate(&certificate)?;
            let lp = load_problem(&problem)?;
            let csv = levelset_slice(&cert, &lp.problem, &levels, grid)?;
            write_or_print(out.as_deref(), &csv)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
