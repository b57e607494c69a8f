//! Monte-Carlo estimates for the stopped process.
//!
//! Paths follow Euler–Maruyama, `x ← x + b(x) dt + σ(x) √dt ξ`, and stop at
//! the end of the first step that lands in `T = {g <= 1}` (checked first) or
//! outside `X = {h0 < 0}`. Crossings are attributed to the step end-state
//! without interpolation, so hitting times carry an `O(√dt)` bias.
//!
//! Every path owns a ChaCha8 stream: the generator is seeded with `seed` and
//! the stream number is the path index, so serial and parallel runs agree
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certcheck::{membership, Certificate, Mode};
use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::sos::ReachAvoidProblem;

/// Two-sided 97.5% normal quantile.
pub const Z_95: f64 = 1.959963984540054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    HitTarget,
    ExitSafe,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub kind: OutcomeKind,
    pub stop_time: f64,
    pub stop_state: Vec<f64>,
}

/// A probability estimate with a 95% interval. For hitting estimates the
/// interval is Wilson's; occupation estimates use the normal approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Paths actually simulated: 1 for deterministic dynamics and 0 when
    /// `x0` is already stopped.
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    /// Horizon of the run (`t_max`, or `t_horizon` for occupation).
    pub t_max: f64,
}

impl ProbEstimate {
    fn exact(value: f64, n_paths: usize, seed: u64, dt: f64, t_max: f64) -> Self {
        ProbEstimate { estimate: value, lower: value, upper: value, n_paths, seed, dt, t_max }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lower = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lower.min(p), upper.max(p))
}

/// Flat term list for fast evaluation inside the stepping loop.
#[derive(Clone, Debug)]
struct FlatPoly {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl FlatPoly {
    fn new(p: &Polynomial) -> Self {
        let terms = p
            .terms()
            .map(|(m, c)| (c, m.pairs().iter().map(|&(v, e)| (v, e as i32)).collect()))
            .collect();
        FlatPoly { terms }
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, pairs) in &self.terms {
            let mut t = *c;
            for &(v, e) in pairs {
                t *= x[v].powi(e);
            }
            s += t;
        }
        s
    }
}

struct Dynamics {
    n: usize,
    m: usize,
    drift: Vec<FlatPoly>,
    /// Row-major `n × m`, zero entries dropped.
    diffusion: Vec<(usize, usize, FlatPoly)>,
    g: FlatPoly,
    h0: FlatPoly,
}

impl Dynamics {
    fn new(prob: &ReachAvoidProblem) -> Self {
        let sde = &prob.sde;
        let mut diffusion = Vec::new();
        for (i, row) in sde.diffusion().iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                if !s.is_zero() {
                    diffusion.push((i, j, FlatPoly::new(s)));
                }
            }
        }
        Dynamics {
            n: sde.n_vars(),
            m: if diffusion.is_empty() { 0 } else { sde.n_noise() },
            drift: sde.drift().iter().map(FlatPoly::new).collect(),
            diffusion,
            g: FlatPoly::new(&prob.g),
            h0: FlatPoly::new(&prob.h0),
        }
    }

    fn is_deterministic(&self) -> bool {
        self.m == 0
    }

    fn stopped(&self, x: &[f64]) -> Option<OutcomeKind> {
        if self.g.eval(x) <= 1.0 {
            Some(OutcomeKind::HitTarget)
        } else if self.h0.eval(x) >= 0.0 {
            Some(OutcomeKind::ExitSafe)
        } else {
            None
        }
    }

    fn run(
        &self,
        x0: &[f64],
        dt: f64,
        n_steps: u64,
        rng: &mut ChaCha8Rng,
        path: u64,
        mut trace: Option<&mut Vec<(f64, Vec<f64>)>>,
    ) -> Result<PathOutcome> {
        let mut x = x0.to_vec();
        if let Some(t) = trace.as_deref_mut() {
            t.push((0.0, x.clone()));
        }
        if let Some(kind) = self.stopped(&x) {
            return Ok(PathOutcome { kind, stop_time: 0.0, stop_state: x });
        }
        let sq = dt.sqrt();
        let mut xi = vec![0.0; self.m];
        let mut inc = vec![0.0; self.n];
        for k in 1..=n_steps {
            for (i, b) in self.drift.iter().enumerate() {
                inc[i] = b.eval(&x) * dt;
            }
            if self.m > 0 {
                for z in xi.iter_mut() {
                    *z = rng.sample::<f64, _>(StandardNormal) * sq;
                }
                for (i, j, s) in &self.diffusion {
                    inc[*i] += s.eval(&x) * xi[*j];
                }
            }
            for (xv, d) in x.iter_mut().zip(&inc) {
                *xv += d;
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericalFailure { path, step: k });
            }
            let t = k as f64 * dt;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((t, x.clone()));
            }
            if let Some(kind) = self.stopped(&x) {
                return Ok(PathOutcome { kind, stop_time: t, stop_state: x });
            }
        }
        Ok(PathOutcome { kind: OutcomeKind::Timeout, stop_time: n_steps as f64 * dt, stop_state: x })
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn check_run(prob: &ReachAvoidProblem, x0: &[f64], dt: f64, t_max: f64) -> Result<u64> {
    if x0.len() != prob.n_vars() {
        return Err(Error::DimensionMismatch { expected: prob.n_vars(), found: x0.len() });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !(t_max >= dt && t_max.is_finite()) {
        return Err(Error::InvalidInput(format!("t_max {t_max} must be finite and at least dt {dt}")));
    }
    if prob.h0.eval_unchecked(x0) > 0.0 {
        return Err(Error::InvalidInput(format!("x0 = {x0:?} lies outside the closure of X")));
    }
    // guard against t_max/dt landing just below an integer
    Ok((t_max / dt * (1.0 + 1e-12)).floor() as u64)
}

/// One path with stream 0 of `seed`.
pub fn simulate_path(prob: &ReachAvoidProblem, x0: &[f64], dt: f64, t_max: f64, seed: u64) -> Result<PathOutcome> {
    let n_steps = check_run(prob, x0, dt, t_max)?;
    Dynamics::new(prob).run(x0, dt, n_steps, &mut path_rng(seed, 0), 0, None)
}

/// Like [`simulate_path`], also returning every visited `(t, x)`.
pub fn trace_path(
    prob: &ReachAvoidProblem,
    x0: &[f64],
    dt: f64,
    t_max: f64,
    seed: u64,
) -> Result<(PathOutcome, Vec<(f64, Vec<f64>)>)> {
    let n_steps = check_run(prob, x0, dt, t_max)?;
    let mut rows = Vec::new();
    let out = Dynamics::new(prob).run(x0, dt, n_steps, &mut path_rng(seed, 0), 0, Some(&mut rows))?;
    Ok((out, rows))
}

/// `t,x1,..,xn` rows.
pub fn trace_csv(rows: &[(f64, Vec<f64>)]) -> String {
    let n = rows.first().map_or(0, |r| r.1.len());
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (t, x) in rows {
        out.push_str(&format!("{t:.6e}"));
        for v in x {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// Runs `n` paths in parallel and returns their outcomes in path order, or
/// the failure of the lowest failing path with counts over the paths that
/// completed.
fn run_paths(
    dynamics: &Dynamics,
    x0: &[f64],
    n: usize,
    dt: f64,
    n_steps: u64,
    seed: u64,
) -> Result<Vec<PathOutcome>> {
    let results: Vec<Result<PathOutcome>> = (0..n as u64)
        .into_par_iter()
        .map(|k| dynamics.run(x0, dt, n_steps, &mut path_rng(seed, k), k, None))
        .collect();
    let failure = results.iter().find_map(|r| match r {
        Err(Error::NumericalFailure { path, step }) => Some((*path, *step)),
        _ => None,
    });
    if let Some((path, step)) = failure {
        let done: Vec<&PathOutcome> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let hits = done.iter().filter(|o| o.kind == OutcomeKind::HitTarget).count();
        return Err(Error::SimulationAborted { path, step, completed: done.len(), hits });
    }
    results.into_iter().collect()
}

/// Fraction of paths that reach `T` inside `X` before `t_max`. Timeouts
/// count as misses, so the estimate is biased low against the
/// infinite-horizon probability.
pub fn estimate_reach_avoid(
    prob: &ReachAvoidProblem,
    x0: &[f64],
    n_paths: usize,
    dt: f64,
    t_max: f64,
    seed: u64,
) -> Result<ProbEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    let n_steps = check_run(prob, x0, dt, t_max)?;
    let dynamics = Dynamics::new(prob);
    match dynamics.stopped(x0) {
        Some(OutcomeKind::HitTarget) => return Ok(ProbEstimate::exact(1.0, 0, seed, dt, t_max)),
        Some(_) => return Ok(ProbEstimate::exact(0.0, 0, seed, dt, t_max)),
        None => {}
    }
    if dynamics.is_deterministic() {
        let out = dynamics.run(x0, dt, n_steps, &mut path_rng(seed, 0), 0, None)?;
        let hit = if out.kind == OutcomeKind::HitTarget { 1.0 } else { 0.0 };
        return Ok(ProbEstimate::exact(hit, 1, seed, dt, t_max));
    }
    let outcomes = run_paths(&dynamics, x0, n_paths, dt, n_steps, seed)?;
    let hits = outcomes.iter().filter(|o| o.kind == OutcomeKind::HitTarget).count();
    let (lower, upper) = wilson_interval(hits, n_paths, Z_95);
    Ok(ProbEstimate { estimate: hits as f64 / n_paths as f64, lower, upper, n_paths, seed, dt, t_max })
}

/// Average fraction of `[0, t_horizon]` the stopped process spends in `T`:
/// a path stopped in `T` at step `k` of `N` contributes `(N - k) / N`.
pub fn estimate_value_occupation(
    prob: &ReachAvoidProblem,
    x0: &[f64],
    n_paths: usize,
    dt: f64,
    t_horizon: f64,
    seed: u64,
) -> Result<ProbEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    let n_steps = check_run(prob, x0, dt, t_horizon)?;
    let dynamics = Dynamics::new(prob);
    match dynamics.stopped(x0) {
        Some(OutcomeKind::HitTarget) => return Ok(ProbEstimate::exact(1.0, 0, seed, dt, t_horizon)),
        Some(_) => return Ok(ProbEstimate::exact(0.0, 0, seed, dt, t_horizon)),
        None => {}
    }
    let share = |o: &PathOutcome| -> f64 {
        if o.kind != OutcomeKind::HitTarget {
            return 0.0;
        }
        let k = (o.stop_time / dt).round();
        (n_steps as f64 - k) / n_steps as f64
    };
    if dynamics.is_deterministic() {
        let out = dynamics.run(x0, dt, n_steps, &mut path_rng(seed, 0), 0, None)?;
        return Ok(ProbEstimate::exact(share(&out), 1, seed, dt, t_horizon));
    }
    let outcomes = run_paths(&dynamics, x0, n_paths, dt, n_steps, seed)?;
    let vals: Vec<f64> = outcomes.iter().map(share).collect();
    let nf = n_paths as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    let var = if n_paths > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
    let half = Z_95 * (var / nf).sqrt();
    Ok(ProbEstimate {
        estimate: mean,
        lower: (mean - half).max(0.0),
        upper: (mean + half).min(1.0),
        n_paths,
        seed,
        dt,
        t_max: t_horizon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointValidation {
    pub x0: Vec<f64>,
    pub v: f64,
    pub estimate: ProbEstimate,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub p_threshold: f64,
    pub points: Vec<PointValidation>,
    pub violations: usize,
    /// Quantiles 0, 0.1, 0.5, 0.9, 1 of `estimate - p` over the points.
    pub margin_quantiles: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Uniform samples of `{v > p + μ} ∩ X` by rejection from the objective
/// domain. Returns fewer than `n_points` (possibly none) if the set is too
/// thin to hit within `1000 · n_points` draws.
pub fn sample_members(cert: &Certificate, prob: &ReachAvoidProblem, n_points: usize, seed: u64) -> Vec<Vec<f64>> {
    let dom = &prob.objective_domain;
    let (lo, hi) = dom.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut pts = Vec::with_capacity(n_points);
    let budget = 1000 * n_points.max(1);
    for _ in 0..budget {
        if pts.len() == n_points {
            break;
        }
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
        if dom.contains(&x) && prob.h0.eval_unchecked(&x) < 0.0 && membership(cert, &x) {
            pts.push(x);
        }
    }
    if pts.len() < n_points {
        log::warn!("only {} of {n_points} member points found; the certified set is thin or empty", pts.len());
    }
    pts
}

/// Estimates the reach-avoid probability at sampled members of the
/// certified set. A point whose upper confidence bound is below `p` is a
/// soundness violation.
#[allow(clippy::too_many_arguments)]
pub fn validate_certificate(
    cert: &Certificate,
    prob: &ReachAvoidProblem,
    n_points: usize,
    n_paths: usize,
    dt: f64,
    t_max: f64,
    seed: u64,
) -> Result<ValidationReport> {
    if cert.mode != Mode::ReachAvoid {
        return Err(Error::InvalidInput("validation needs a reach-avoid certificate".into()));
    }
    let p = cert.p_threshold;
    let mut points = Vec::new();
    for (k, x0) in sample_members(cert, prob, n_points, seed).into_iter().enumerate() {
        let est = estimate_reach_avoid(prob, &x0, n_paths, dt, t_max, seed.wrapping_add(k as u64))?;
        let violation = est.upper < p;
        if violation {
            log::warn!("x0 = {x0:?}: estimate {:.4} with upper bound {:.4} below p = {p}", est.estimate, est.upper);
        }
        points.push(PointValidation { v: cert.v.eval_unchecked(&x0), x0, estimate: est, violation });
    }
    let mut margins: Vec<f64> = points.iter().map(|pt| pt.estimate.estimate - p).collect();
    margins.sort_by(f64::total_cmp);
    let margin_quantiles = if margins.is_empty() {
        Vec::new()
    } else {
        [0.0, 0.1, 0.5, 0.9, 1.0]
            .iter()
            .map(|q| margins[((margins.len() - 1) as f64 * q).round() as usize])
            .collect()
    };
    let violations = points.iter().filter(|pt| pt.violation).count();
    Ok(ValidationReport { p_threshold: p, points, violations, margin_quantiles })
}
