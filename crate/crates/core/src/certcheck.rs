//! Certificates and their independent verification.
//!
//! A [`Certificate`] carries the polynomials found by the SOS solve. The
//! checks here recompute every inequality from those polynomials and the
//! problem data alone; they share no code with the program builder.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::IntegrationDomain;
use crate::poly::{Monomial, Polynomial};
use crate::sos::{DegreeConfig, ReachAvoidProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ReachAvoid,
    Safety,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramBlock {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub matrix: DMatrix<f64>,
}

impl GramBlock {
    /// `zᵀ Q z` as a polynomial.
    pub fn polynomial(&self, n_vars: usize) -> Polynomial {
        let mut terms: Vec<(Monomial, f64)> = Vec::new();
        for a in 0..self.basis.len() {
            for b in a..self.basis.len() {
                let w = if a == b { 1.0 } else { 2.0 };
                terms.push((self.basis[a].mul(&self.basis[b]), w * self.matrix[(a, b)]));
            }
        }
        Polynomial::from_terms(n_vars, terms).expect("basis products stay within the degree cap")
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.basis.is_empty() {
            return 0.0;
        }
        let sym = 0.5 * (&self.matrix + self.matrix.transpose());
        sym.symmetric_eigenvalues().min()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub status: crate::sdp::SolveStatus,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub mode: Mode,
    pub n_vars: usize,
    /// Reach-avoid: the level `p` of `{v > p}`. Safety: the minimised bound.
    pub p_threshold: f64,
    pub mu: f64,
    /// `∫ v` in reach-avoid mode, the minimised `p` in safety mode.
    pub objective: f64,
    pub degrees: DegreeConfig,
    pub v: Polynomial,
    pub u: Polynomial,
    /// Free multiplier of `h0` on the boundary constraint.
    pub p_free: Polynomial,
    /// SOS multipliers `s0, s1, ...` in constraint order.
    pub multipliers: Vec<(String, Polynomial)>,
    /// Initial set polynomial (safety mode only).
    pub ini: Option<Polynomial>,
    pub gram: Vec<GramBlock>,
    pub stats: Option<SolverStats>,
}

impl Certificate {
    /// The all-zero certificate `v ≡ u ≡ 0` with zero multipliers.
    pub fn zero(mode: Mode, prob: &ReachAvoidProblem, degrees: DegreeConfig) -> Certificate {
        let n = prob.n_vars();
        Certificate {
            mode,
            n_vars: n,
            p_threshold: prob.p_threshold,
            mu: prob.mu,
            objective: 0.0,
            degrees,
            v: Polynomial::zero(n),
            u: Polynomial::zero(n),
            p_free: Polynomial::zero(n),
            multipliers: (0..5).map(|i| (format!("s{i}"), Polynomial::zero(n))).collect(),
            ini: None,
            gram: Vec::new(),
            stats: None,
        }
    }

    pub fn multiplier(&self, name: &str) -> Option<&Polynomial> {
        self.multipliers.iter().find(|(k, _)| k == name).map(|(_, p)| p)
    }

    fn multiplier_or_zero(&self, name: &str) -> Polynomial {
        self.multiplier(name).cloned().unwrap_or_else(|| Polynomial::zero(self.n_vars))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CertificateFile {
            mode: self.mode,
            n_vars: self.n_vars,
            p_threshold: self.p_threshold,
            mu: self.mu,
            objective: self.objective,
            degrees: self.degrees,
            v: self.v.to_string(),
            u: self.u.to_string(),
            p_free: self.p_free.to_string(),
            multipliers: self.multipliers.iter().map(|(k, p)| (k.clone(), p.to_string())).collect(),
            ini: self.ini.as_ref().map(|p| p.to_string()),
            gram: self
                .gram
                .iter()
                .map(|g| GramFile {
                    name: g.name.clone(),
                    basis: g.basis.iter().map(|m| m.to_string()).collect(),
                    matrix: g.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
            stats: self.stats.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Certificate> {
        let f: CertificateFile = serde_json::from_str(text)?;
        let n = f.n_vars;
        let poly = |s: &str| Polynomial::parse(s, n);
        let mut gram = Vec::with_capacity(f.gram.len());
        for g in f.gram {
            let basis: Vec<Monomial> = g
                .basis
                .iter()
                .map(|s| s.parse::<Monomial>().map_err(Error::from))
                .collect::<Result<_>>()?;
            let k = basis.len();
            if g.matrix.len() != k || g.matrix.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidInput(format!("gram block {} is not {k}x{k}", g.name)));
            }
            let matrix = DMatrix::from_fn(k, k, |i, j| g.matrix[i][j]);
            gram.push(GramBlock { name: g.name, basis, matrix });
        }
        Ok(Certificate {
            mode: f.mode,
            n_vars: n,
            p_threshold: f.p_threshold,
            mu: f.mu,
            objective: f.objective,
            degrees: f.degrees,
            v: poly(&f.v)?,
            u: poly(&f.u)?,
            p_free: poly(&f.p_free)?,
            multipliers: f
                .multipliers
                .iter()
                .map(|(k, s)| Ok((k.clone(), poly(s)?)))
                .collect::<Result<_>>()?,
            ini: f.ini.as_deref().map(poly).transpose()?,
            gram,
            stats: f.stats,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GramFile {
    name: String,
    basis: Vec<String>,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CertificateFile {
    mode: Mode,
    n_vars: usize,
    p_threshold: f64,
    mu: f64,
    objective: f64,
    degrees: DegreeConfig,
    v: String,
    u: String,
    p_free: String,
    multipliers: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ini: Option<String>,
    #[serde(default)]
    gram: Vec<GramFile>,
    #[serde(default)]
    stats: Option<SolverStats>,
}

/// The polynomial identities each certificate must satisfy, each claimed to
/// be a sum of squares. Names match the `sigma_<name>` Gram blocks.
pub fn sos_expressions(cert: &Certificate, prob: &ReachAvoidProblem) -> Result<Vec<(String, Polynomial)>> {
    let n = cert.n_vars;
    let one = Polynomial::constant(n, 1.0);
    let h0 = &prob.h0;
    let g = &prob.g;
    let av = prob.sde.apply_generator(&cert.v)?;
    let au = prob.sde.apply_generator(&cert.u)?;
    let s = |k: usize| cert.multiplier_or_zero(&format!("s{k}"));
    let one_minus_g = one.try_sub(g)?;
    let g_minus_one = g.try_sub(&one)?;
    let out = match cert.mode {
        Mode::ReachAvoid => vec![
            ("generator", av.try_add(&s(0).try_mul(h0)?)?.try_add(&s(1).try_mul(&one_minus_g)?)?),
            (
                "dominance",
                au.try_sub(&cert.v)?
                    .try_add(&s(2).try_mul(h0)?)?
                    .try_add(&s(3).try_mul(&one_minus_g)?)?,
            ),
            ("boundary", cert.p_free.try_mul(h0)?.try_sub(&cert.v)?),
            ("target", one.try_sub(&cert.v)?.try_add(&s(4).try_mul(&g_minus_one)?)?),
        ],
        Mode::Safety => {
            let ini = cert
                .ini
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("safety certificate without an initial set".into()))?;
            let p = Polynomial::constant(n, cert.p_threshold);
            vec![
                ("initial", p.try_sub(&cert.v)?.try_add(&s(0).try_mul(ini)?)?),
                ("target", cert.v.try_sub(&one)?.try_add(&s(1).try_mul(&g_minus_one)?)?),
                (
                    "dominance",
                    cert.v
                        .try_sub(&au)?
                        .try_add(&s(2).try_mul(h0)?)?
                        .try_add(&s(3).try_mul(&one_minus_g)?)?,
                ),
                ("generator", s(4).try_mul(h0)?.try_sub(&av)?),
                ("boundary", cert.v.try_add(&cert.p_free.try_mul(h0)?)?),
            ]
        }
    };
    Ok(out.into_iter().map(|(k, p)| (k.to_string(), p)).collect())
}

pub const REGION_TOL: f64 = 1e-6;
pub const BOUNDARY_TOL: f64 = 1e-5;
const MIN_ACCEPTANCE: f64 = 1e-4;
const CHUNK: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub name: String,
    pub region: String,
    pub min_residual: f64,
    pub argmin: Vec<f64>,
    pub violations: usize,
    pub samples: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub seed: u64,
    pub samples_per_region: usize,
    pub constraints: Vec<ConstraintResidual>,
}

impl ResidualReport {
    pub fn total_violations(&self) -> usize {
        self.constraints.iter().map(|c| c.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.total_violations() == 0
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintResidual> {
        self.constraints.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Region {
    SafeMinusTarget,
    Safe,
    Target,
    Initial,
    Boundary,
    Box,
}

impl Region {
    fn label(self) -> &'static str {
        match self {
            Region::SafeMinusTarget => "X\\T",
            Region::Safe => "X",
            Region::Target => "T",
            Region::Initial => "INI",
            Region::Boundary => "boundary",
            Region::Box => "box",
        }
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

/// Draws points of one region. `None` means the attempt was rejected.
struct Sampler<'a> {
    prob: &'a ReachAvoidProblem,
    ini: Option<&'a Polynomial>,
    domain: IntegrationDomain,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(prob: &'a ReachAvoidProblem, ini: Option<&'a Polynomial>) -> Self {
        let domain = prob.objective_domain.inflated(1.01);
        let (lo, hi) = domain.bounding_box();
        Sampler { prob, ini, domain, lo, hi }
    }

    fn uniform_in_domain(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.domain {
            IntegrationDomain::Box { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| rng.random_range(*l..*h)).collect()
            }
            IntegrationDomain::Ball { center, radius } => {
                let n = center.len();
                let dir = random_direction(rng, n);
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                center.iter().zip(&dir).map(|(c, d)| c + r * d).collect()
            }
        }
    }

    fn draw(&self, region: Region, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let p = self.prob;
        match region {
            Region::Box => {
                Some(self.lo.iter().zip(&self.hi).map(|(l, h)| rng.random_range(*l..*h)).collect())
            }
            Region::Boundary => self.boundary_point(rng),
            _ => {
                let x = self.uniform_in_domain(rng);
                let h = p.h0.eval_unchecked(&x);
                let g = p.g.eval_unchecked(&x);
                let ok = match region {
                    Region::SafeMinusTarget => h < 0.0 && g > 1.0,
                    Region::Safe => h < 0.0,
                    Region::Target => g <= 1.0,
                    Region::Initial => self.ini.is_some_and(|q| q.eval_unchecked(&x) <= 0.0),
                    _ => unreachable!(),
                };
                ok.then_some(x)
            }
        }
    }

    /// Radial bisection from the domain center to `|h0| <= 1e-12`.
    fn boundary_point(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let h0 = &self.prob.h0;
        let c = self.prob.objective_domain.center();
        if h0.eval_unchecked(&c) >= 0.0 {
            return None;
        }
        let dir = random_direction(rng, c.len());
        let reach: f64 = self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt();
        let at = |r: f64| -> Vec<f64> { c.iter().zip(&dir).map(|(c, d)| c + r * d).collect() };
        if h0.eval_unchecked(&at(reach)) < 0.0 {
            return None;
        }
        let (mut a, mut b) = (0.0, reach);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let x = at(mid);
            let h = h0.eval_unchecked(&x);
            if h.abs() <= 1e-12 {
                return Some(x);
            }
            if h < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        None
    }
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return d.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Samples `n` points of `region`, split into fixed-size chunks that each
/// own a ChaCha stream derived from `(seed, region, chunk)`.
fn sample_region(sampler: &Sampler<'_>, region: Region, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<Vec<f64>>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let want = CHUNK.min(n - c * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((region.stream() << 32) | c as u64);
            let mut out = Vec::with_capacity(want);
            let mut tries: u64 = 0;
            while out.len() < want {
                tries += 1;
                if let Some(x) = sampler.draw(region, &mut rng) {
                    out.push(x);
                }
                if tries >= 100_000 && (out.len() as f64) < MIN_ACCEPTANCE * tries as f64 {
                    return Err(Error::RegionSampling {
                        region: region.label().to_string(),
                        rate: out.len() as f64 / tries as f64,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(n);
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

fn evaluate(
    name: &str,
    region: Region,
    points: &[Vec<f64>],
    tol: f64,
    f: impl Fn(&[f64]) -> (f64, f64) + Sync,
) -> ConstraintResidual {
    // f returns (residual, scale); a violation is residual < -tol * scale.
    let vals: Vec<(f64, f64)> = points.par_iter().map(|x| f(x)).collect();
    let mut min = f64::INFINITY;
    let mut argmin = Vec::new();
    let mut violations = 0;
    for (x, &(r, s)) in points.iter().zip(&vals) {
        if r < min || r.is_nan() {
            min = r;
            argmin = x.clone();
        }
        if !(r >= -tol * s) {
            violations += 1;
        }
    }
    ConstraintResidual {
        name: name.to_string(),
        region: region.label().to_string(),
        min_residual: min,
        argmin,
        violations,
        samples: points.len(),
        tolerance: tol,
    }
}

/// Samples every region of the certificate's mode and evaluates the
/// pointwise inequalities there, plus each SOS identity over the sampling
/// box. Box residuals use a tolerance relative to `Σ |c_α x^α|`.
pub fn residual_check(
    cert: &Certificate,
    prob: &ReachAvoidProblem,
    n_samples: usize,
    seed: u64,
) -> Result<ResidualReport> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    if cert.n_vars != prob.n_vars() {
        return Err(Error::DimensionMismatch { expected: prob.n_vars(), found: cert.n_vars });
    }
    let sampler = Sampler::new(prob, cert.ini.as_ref());
    let av = prob.sde.apply_generator(&cert.v)?;
    let au = prob.sde.apply_generator(&cert.u)?;
    let v = &cert.v;
    let abs = |r: f64| (r, 1.0);
    let mut out = Vec::new();
    match cert.mode {
        Mode::ReachAvoid => {
            let pts = sample_region(&sampler, Region::SafeMinusTarget, n_samples, seed)?;
            out.push(evaluate("generator", Region::SafeMinusTarget, &pts, REGION_TOL, |x| abs(av.eval_unchecked(x))));
            out.push(evaluate("dominance", Region::SafeMinusTarget, &pts, REGION_TOL, |x| {
                abs(au.eval_unchecked(x) - v.eval_unchecked(x))
            }));
            let pts = sample_region(&sampler, Region::Boundary, n_samples, seed)?;
            out.push(evaluate("boundary", Region::Boundary, &pts, BOUNDARY_TOL, |x| abs(-v.eval_unchecked(x))));
            let pts = sample_region(&sampler, Region::Target, n_samples, seed)?;
            out.push(evaluate("target", Region::Target, &pts, REGION_TOL, |x| abs(1.0 - v.eval_unchecked(x))));
        }
        Mode::Safety => {
            let p = cert.p_threshold;
            let pts = sample_region(&sampler, Region::Initial, n_samples, seed)?;
            out.push(evaluate("initial", Region::Initial, &pts, REGION_TOL, |x| abs(p - v.eval_unchecked(x))));
            let pts = sample_region(&sampler, Region::Target, n_samples, seed)?;
            out.push(evaluate("target", Region::Target, &pts, REGION_TOL, |x| abs(v.eval_unchecked(x) - 1.0)));
            let pts = sample_region(&sampler, Region::SafeMinusTarget, n_samples, seed)?;
            out.push(evaluate("dominance", Region::SafeMinusTarget, &pts, REGION_TOL, |x| {
                abs(v.eval_unchecked(x) - au.eval_unchecked(x))
            }));
            let pts = sample_region(&sampler, Region::Safe, n_samples, seed)?;
            out.push(evaluate("generator", Region::Safe, &pts, REGION_TOL, |x| abs(-av.eval_unchecked(x))));
            let pts = sample_region(&sampler, Region::Boundary, n_samples, seed)?;
            out.push(evaluate("boundary", Region::Boundary, &pts, BOUNDARY_TOL, |x| abs(v.eval_unchecked(x))));
        }
    }
    let pts = sample_region(&sampler, Region::Box, n_samples, seed)?;
    for (name, expr) in sos_expressions(cert, prob)? {
        out.push(evaluate(&format!("sos_{name}"), Region::Box, &pts, REGION_TOL, |x| {
            let scale: f64 = expr.terms().map(|(m, c)| (c * m.eval(x)).abs()).sum();
            (expr.eval_unchecked(x), scale.max(1.0))
        }));
    }
    Ok(ResidualReport { seed, samples_per_region: n_samples, constraints: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub blocks: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Smallest eigenvalue of every Gram block.
pub fn gram_psd_check(cert: &Certificate, tol: f64) -> GramReport {
    let blocks: Vec<(String, f64)> = cert.gram.iter().map(|g| (g.name.clone(), g.min_eigenvalue())).collect();
    let passed = blocks.iter().all(|(_, e)| *e >= -tol);
    GramReport { blocks, tolerance: tol, passed }
}

/// `v(x) > p + μ`.
pub fn membership(cert: &Certificate, x: &[f64]) -> bool {
    cert.v.eval_unchecked(x) > cert.p_threshold + cert.mu
}

/// CSV of `v` on a regular grid over the domain's bounding box, keeping only
/// points with `h0 <= 0`. Each level `p` gets a 0/1 column for `v > p + μ`.
pub fn levelset_slice(
    cert: &Certificate,
    prob: &ReachAvoidProblem,
    levels: &[f64],
    grid: usize,
) -> Result<String> {
    let n = cert.n_vars;
    if n == 0 || n > 3 {
        return Err(Error::InvalidInput(format!("grid output supports 1 to 3 variables, got {n}")));
    }
    if grid < 2 {
        return Err(Error::InvalidInput("grid resolution must be at least 2".into()));
    }
    let (lo, hi) = prob.objective_domain.bounding_box();
    let mut out = String::new();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("v".into());
    header.extend((1..=levels.len()).map(|k| format!("member_p{k}")));
    out.push_str(&header.join(","));
    out.push('\n');
    let total = grid.pow(n as u32);
    let mut x = vec![0.0; n];
    for idx in 0..total {
        let mut rest = idx;
        // first coordinate varies slowest
        for i in (0..n).rev() {
            let k = rest % grid;
            rest /= grid;
            x[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / (grid - 1) as f64;
        }
        if prob.h0.eval_unchecked(&x) > 0.0 {
            continue;
        }
        let val = cert.v.eval_unchecked(&x);
        let mut row: Vec<String> = x.iter().map(|c| format!("{c:.16e}")).collect();
        row.push(format!("{val:.16e}"));
        row.extend(levels.iter().map(|p| if val > p + cert.mu { "1".to_string() } else { "0".to_string() }));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::SdeSystem;
    use crate::poly::monomial_basis;
    use crate::sdp::SolverConfig;
    use crate::sos::solve_reach_avoid;
    use std::sync::OnceLock;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    fn population() -> ReachAvoidProblem {
        let sde = SdeSystem::new(vec![p("-x1", 1)], vec![vec![p("0.7071067811865476*x1", 1)]]).unwrap();
        ReachAvoidProblem::new(sde, p("x1^2 - 1", 1), p("100*x1^2", 1), 0.9, IntegrationDomain::unit_ball(1)).unwrap()
    }

    fn harmonic() -> ReachAvoidProblem {
        let sde = SdeSystem::new(
            vec![p("x2", 2), p("-x1 - x2", 2)],
            vec![vec![p("0", 2)], vec![p("0.2*x1", 2)]],
        )
        .unwrap();
        ReachAvoidProblem::new(
            sde,
            p("x1^2 + x2^2 - 1", 2),
            p("100*x1^2 + 100*x2^2", 2),
            0.9,
            IntegrationDomain::unit_ball(2),
        )
        .unwrap()
    }

    fn solved() -> &'static Certificate {
        static CERT: OnceLock<Certificate> = OnceLock::new();
        CERT.get_or_init(|| {
            solve_reach_avoid(&population(), DegreeConfig::uniform(8).unwrap(), &SolverConfig::default()).unwrap()
        })
    }

    #[test]
    fn zero_certificate_passes() {
        for prob in [population(), harmonic()] {
            let cert = Certificate::zero(Mode::ReachAvoid, &prob, DegreeConfig::uniform(4).unwrap());
            let report = residual_check(&cert, &prob, 500, 1).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn solved_certificate_passes_and_sign_flip_fails() {
        let prob = population();
        let cert = solved();
        assert!(residual_check(cert, &prob, 2000, 0).unwrap().passed());
        assert!(gram_psd_check(cert, 1e-7).passed);

        let mut flipped = cert.clone();
        flipped.v = cert.v.scale(-1.0);
        let report = residual_check(&flipped, &prob, 2000, 0).unwrap();
        assert!(!report.passed());
        // A(-v) = -A v turns negative wherever A v was strictly positive
        assert!(report.get("generator").unwrap().violations > 0);
    }

    #[test]
    fn gram_eigenvalues() {
        let basis = monomial_basis(2, 1);
        let mut block = GramBlock { name: "id".into(), basis, matrix: DMatrix::identity(3, 3) };
        assert!((block.min_eigenvalue() - 1.0).abs() < 1e-12);
        block.matrix = DMatrix::zeros(3, 3);
        assert_eq!(block.min_eigenvalue(), 0.0);
        block.matrix[(0, 0)] = -0.5;
        let mut cert = Certificate::zero(Mode::ReachAvoid, &harmonic(), DegreeConfig::uniform(2).unwrap());
        cert.gram.push(block);
        let report = gram_psd_check(&cert, 1e-7);
        assert!(!report.passed);
        assert!((report.blocks[0].1 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sos_expressions_match_their_gram_blocks() {
        let prob = population();
        let cert = solved();
        for (name, expr) in sos_expressions(cert, &prob).unwrap() {
            let block = cert.gram.iter().find(|g| g.name == format!("sigma_{name}")).unwrap();
            let diff = expr.try_sub(&block.polynomial(1)).unwrap();
            assert!(diff.max_abs_coefficient() <= 1e-7, "{name}: {diff}");
        }
    }

    #[test]
    fn membership_is_strict() {
        let prob = population();
        let mut cert = Certificate::zero(Mode::ReachAvoid, &prob, DegreeConfig::uniform(2).unwrap());
        cert.v = Polynomial::constant(1, cert.p_threshold + cert.mu);
        assert!(!membership(&cert, &[0.3]));
        let cert = solved();
        assert!(membership(cert, &[0.3]));
        assert!(!membership(cert, &[1.0]));
    }

    #[test]
    fn levelset_of_a_constant() {
        let prob = harmonic();
        let mut cert = Certificate::zero(Mode::ReachAvoid, &prob, DegreeConfig::uniform(2).unwrap());
        cert.v = Polynomial::constant(2, 0.5);
        let csv = levelset_slice(&cert, &prob, &[0.9, 0.1], 11).unwrap();
        let mut rows = csv.lines();
        assert_eq!(rows.next(), Some("x1,x2,v,member_p1,member_p2"));
        let rows: Vec<&str> = rows.collect();
        assert!(!rows.is_empty());
        for row in rows {
            assert!(row.ends_with(",0,1"), "{row}");
        }
        assert!(levelset_slice(&cert, &prob, &[0.5], 1).is_err());
    }

    #[test]
    fn levelsets_are_nested() {
        let csv = levelset_slice(solved(), &population(), &[0.9, 0.5], 201).unwrap();
        for row in csv.lines().skip(1) {
            assert!(!row.ends_with(",1,0"), "{row}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let prob = population();
        let a = residual_check(solved(), &prob, 300, 11).unwrap();
        let b = residual_check(solved(), &prob, 300, 11).unwrap();
        assert_eq!(a, b);
        let c = residual_check(solved(), &prob, 300, 12).unwrap();
        assert_ne!(a.get("generator").unwrap().argmin, c.get("generator").unwrap().argmin);
    }

    #[test]
    fn json_round_trip() {
        let cert = solved();
        let back = Certificate::from_json(&cert.to_json().unwrap()).unwrap();
        assert_eq!(&back, cert);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cert = Certificate::zero(Mode::ReachAvoid, &harmonic(), DegreeConfig::uniform(2).unwrap());
        assert!(matches!(residual_check(&cert, &population(), 10, 0), Err(Error::DimensionMismatch { .. })));
        assert!(residual_check(&cert, &harmonic(), 0, 0).is_err());
    }
}
