//! SOS programs for reach-avoid and safety certificates, and their Gram
//! encoding as block SDPs.
//!
//! Reach-avoid mode (`X = {h0 < 0}`, `T = {g <= 1}`) maximises `∫ v` over
//! the domain subject to
//!
//! ```text
//! generator:  A v + s0 h0 + s1 (1 - g)            SOS
//! dominance: -v + A u + s2 h0 + s3 (1 - g)        SOS
//! boundary:  -v + p h0                            SOS   (p free)
//! target:     1 - v + s4 (g - 1)                  SOS
//! ```
//!
//! On `X \ T` both `h0` and `1 - g` are negative, so the multiplier terms
//! are nonpositive there and the first line certifies `A v >= 0`. Every
//! point of `{v > p}` then reaches `T` inside `X` with probability above
//! `p`.
//!
//! Safety mode bounds the probability of reaching `T` from
//! `INI = {ini <= 0}` by minimising a scalar `p` subject to
//!
//! ```text
//! initial:    p - v + s0 ini                      SOS
//! target:     v - 1 + s1 (g - 1)                  SOS
//! dominance:  v - A u + s2 h0 + s3 (1 - g)        SOS
//! generator: -A v + s4 h0                         SOS
//! boundary:   v + q h0                            SOS   (q free)
//! ```
//!
//! The last line keeps `v >= 0` on `∂X`, where paths that leave `X` stop.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certcheck::{Certificate, GramBlock, Mode, SolverStats};
use crate::error::{Error, Result};
use crate::generator::SdeSystem;
use crate::moments::IntegrationDomain;
use crate::poly::{monomial_basis, Monomial, Polynomial};
use crate::sdp::{self, Constraint, SdpProblem, SdpSolution, SolveStatus, SolverConfig, SymEntry};

pub const DEFAULT_MU: f64 = 1e-6;
pub const DEFAULT_TRACE_WEIGHT: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ReachAvoidProblem {
    pub sde: SdeSystem,
    pub h0: Polynomial,
    pub g: Polynomial,
    pub p_threshold: f64,
    pub objective_domain: IntegrationDomain,
    /// Margin in `{v > p + μ}`.
    pub mu: f64,
}

impl ReachAvoidProblem {
    /// Validates dimensions and `p ∈ [0, 1)`, then runs sampled sanity
    /// checks that only log warnings.
    pub fn new(
        sde: SdeSystem,
        h0: Polynomial,
        g: Polynomial,
        p_threshold: f64,
        objective_domain: IntegrationDomain,
    ) -> Result<Self> {
        let n = sde.n_vars();
        for (what, found) in [("h0", h0.n_vars()), ("g", g.n_vars()), ("domain", objective_domain.n_vars())] {
            if found != n {
                return Err(Error::InvalidProblem(format!("{what} has {found} variables, the SDE has {n}")));
            }
        }
        if !(0.0..1.0).contains(&p_threshold) {
            return Err(Error::InvalidProblem(format!("p_threshold {p_threshold} is not in [0, 1)")));
        }
        objective_domain.validate()?;
        let prob = ReachAvoidProblem { sde, h0, g, p_threshold, objective_domain, mu: DEFAULT_MU };
        let report = prob.sanity_check(20_000, 7);
        if report.target_outside_safe > 0 {
            log::warn!(
                "{} sampled points of T lie outside X; the target should satisfy T ⊆ X",
                report.target_outside_safe
            );
        }
        if report.safe_outside_domain > 0 {
            log::warn!(
                "{} sampled points with h0 <= 0 lie outside the objective domain; X should be bounded by it",
                report.safe_outside_domain
            );
        }
        Ok(prob)
    }

    pub fn n_vars(&self) -> usize {
        self.sde.n_vars()
    }

    pub fn in_target(&self, x: &[f64]) -> bool {
        self.g.eval_unchecked(x) <= 1.0
    }

    pub fn in_safe_closure(&self, x: &[f64]) -> bool {
        self.h0.eval_unchecked(x) <= 0.0
    }

    /// Uniform samples over the domain's bounding box doubled in size.
    pub fn sanity_check(&self, samples: usize, seed: u64) -> SanityReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wide = self.objective_domain.inflated(2.0);
        let (lo, hi) = wide.bounding_box();
        let snug = self.objective_domain.inflated(1.0 + 1e-9);
        let mut report = SanityReport::default();
        for _ in 0..samples {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
            let h = self.h0.eval_unchecked(&x);
            if self.in_target(&x) && h >= 0.0 {
                report.target_outside_safe += 1;
            }
            if h <= 0.0 && !snug.contains(&x) {
                report.safe_outside_domain += 1;
            }
        }
        report
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SanityReport {
    pub target_outside_safe: usize,
    pub safe_outside_domain: usize,
}

/// Nominal degrees of `v`, `u`, the SOS multipliers and the free multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeConfig {
    pub d_v: u32,
    pub d_u: u32,
    pub d_s: u32,
    pub d_p: u32,
}

impl DegreeConfig {
    pub fn new(d_v: u32, d_u: u32, d_s: u32, d_p: u32) -> Result<Self> {
        let cfg = DegreeConfig { d_v, d_u, d_s, d_p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn uniform(d: u32) -> Result<Self> {
        DegreeConfig::new(d, d, d, d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("d_v", self.d_v), ("d_u", self.d_u), ("d_s", self.d_s), ("d_p", self.d_p)] {
            if d < 2 {
                return Err(Error::DegreeMismatch {
                    constraint: "degree config".into(),
                    detail: format!("{name} = {d} is below 2"),
                });
            }
        }
        Ok(())
    }

    /// Every degree capped at `cap`.
    pub fn capped(&self, cap: u32) -> DegreeConfig {
        DegreeConfig {
            d_v: self.d_v.min(cap),
            d_u: self.d_u.min(cap),
            d_s: self.d_s.min(cap),
            d_p: self.d_p.min(cap),
        }
    }
}

fn even_ceil(d: u32) -> u32 {
    d + d % 2
}

/// A polynomial with unknown coefficients over `basis`, stored in the free
/// variable range `offset .. offset + basis.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionPoly {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub offset: usize,
}

/// An SOS multiplier `zᵀ Q z` over its Gram basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SosMultiplier {
    pub name: String,
    pub basis: Vec<Monomial>,
}

/// `fixed + Σ c_j φ_j + Σ s_i w_i ∈ Σ[x]`, encoded as equality with a Gram
/// form over `gram_basis`.
#[derive(Clone, Debug, PartialEq)]
pub struct SosConstraint {
    pub name: String,
    /// Even degree of the identity.
    pub degree: u32,
    pub fixed: Polynomial,
    /// `(free variable, φ_j)`.
    pub linear: Vec<(usize, Polynomial)>,
    /// `(multiplier index, weight w_i)`.
    pub multipliers: Vec<(usize, Polynomial)>,
    pub gram_basis: Vec<Monomial>,
}

#[derive(Clone, Debug)]
pub struct SosProgram {
    pub mode: Mode,
    pub n_vars: usize,
    pub degrees: DegreeConfig,
    pub p_threshold: f64,
    pub mu: f64,
    pub free: Vec<DecisionPoly>,
    /// Safety mode: the free index of the scalar bound `p`.
    pub scalar_p: Option<usize>,
    pub n_free: usize,
    pub multipliers: Vec<SosMultiplier>,
    pub constraints: Vec<SosConstraint>,
    /// Minimised linear objective over free variables.
    pub objective: Vec<(usize, f64)>,
    pub ini: Option<Polynomial>,
    /// Weight of `Σ tr(Q)` added to the compiled objective. The free
    /// multiplier `p` can trade `r h0` against `r h0²` inside the boundary
    /// Gram form at no cost, which leaves the dual without an interior
    /// point; a small trace penalty removes that recession direction.
    pub trace_weight: f64,
}

impl SosProgram {
    pub fn empty(n_vars: usize) -> SosProgram {
        SosProgram {
            mode: Mode::ReachAvoid,
            n_vars,
            degrees: DegreeConfig { d_v: 2, d_u: 2, d_s: 2, d_p: 2 },
            p_threshold: 0.0,
            mu: DEFAULT_MU,
            free: Vec::new(),
            scalar_p: None,
            n_free: 0,
            multipliers: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            ini: None,
            trace_weight: 0.0,
        }
    }

    pub fn free_poly(&self, name: &str) -> Option<&DecisionPoly> {
        self.free.iter().find(|d| d.name == name)
    }

    /// Polynomial with the given coefficients for a decision polynomial.
    pub fn assemble(&self, name: &str, x_free: &[f64]) -> Polynomial {
        match self.free_poly(name) {
            Some(d) => Polynomial::from_coefficients(
                self.n_vars,
                &d.basis,
                &x_free[d.offset..d.offset + d.basis.len()],
            ),
            None => Polynomial::zero(self.n_vars),
        }
    }

    /// Left-hand side of constraint `k` without its Gram term, given free
    /// variables and multiplier Gram matrices.
    pub fn constraint_lhs(&self, k: usize, x_free: &[f64], mult_grams: &[DMatrix<f64>]) -> Polynomial {
        let c = &self.constraints[k];
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, v) in c.fixed.terms() {
            *terms.entry(m.clone()).or_default() += v;
        }
        for (j, phi) in &c.linear {
            for (m, v) in phi.terms() {
                *terms.entry(m.clone()).or_default() += x_free[*j] * v;
            }
        }
        for (i, w) in &c.multipliers {
            let s = GramBlock {
                name: String::new(),
                basis: self.multipliers[*i].basis.clone(),
                matrix: mult_grams[*i].clone(),
            }
            .polynomial(self.n_vars);
            for (m, v) in s.try_mul(w).expect("degrees fixed at build time").terms() {
                *terms.entry(m.clone()).or_default() += v;
            }
        }
        Polynomial::from_terms(self.n_vars, terms).expect("degrees fixed at build time")
    }
}

struct Pending {
    name: &'static str,
    fixed: Polynomial,
    linear: Vec<(usize, Polynomial)>,
    weights: Vec<(&'static str, Polynomial)>,
}

struct Builder {
    n: usize,
    d_s: u32,
    free: Vec<DecisionPoly>,
    n_free: usize,
}

impl Builder {
    fn add_free(&mut self, name: &str, basis: Vec<Monomial>) -> usize {
        self.free.push(DecisionPoly { name: name.into(), basis: basis.clone(), offset: self.n_free });
        self.n_free += basis.len();
        self.free.len() - 1
    }

    /// `(free index, op(z_j))` for every basis element of a decision poly.
    fn linear(&self, idx: usize, op: impl Fn(&Polynomial) -> Result<Polynomial>) -> Result<Vec<(usize, Polynomial)>> {
        let d = &self.free[idx];
        d.basis
            .iter()
            .enumerate()
            .map(|(j, m)| Ok((d.offset + j, op(&Polynomial::monomial(self.n, m.clone(), 1.0))?)))
            .collect()
    }

    fn finish(
        self,
        pending: Vec<Pending>,
        mode: Mode,
        degrees: DegreeConfig,
        p_threshold: f64,
        mu: f64,
    ) -> Result<SosProgram> {
        let mut multipliers = Vec::new();
        let mut constraints = Vec::new();
        for p in pending {
            let deg_f = p
                .linear
                .iter()
                .map(|(_, phi)| phi.degree())
                .chain(std::iter::once(p.fixed.degree()))
                .max()
                .unwrap_or(0);
            let max_w = p.weights.iter().map(|(_, w)| w.degree()).max();
            if let Some(w) = max_w {
                if self.d_s + w + 1 < deg_f {
                    return Err(Error::DegreeMismatch {
                        constraint: p.name.into(),
                        detail: format!(
                            "multiplier degree {} times weight degree {w} cannot match degree {deg_f}",
                            self.d_s
                        ),
                    });
                }
            }
            let degree = even_ceil(deg_f.max(max_w.map_or(0, |w| self.d_s + w)));
            let mut mults = Vec::new();
            for (name, w) in p.weights {
                let half = (degree - w.degree()) / 2;
                multipliers.push(SosMultiplier { name: name.into(), basis: monomial_basis(self.n, half) });
                mults.push((multipliers.len() - 1, w));
            }
            let linear: Vec<(usize, Polynomial)> = p.linear.into_iter().filter(|(_, phi)| !phi.is_zero()).collect();
            constraints.push(SosConstraint {
                name: p.name.into(),
                degree,
                fixed: p.fixed,
                linear,
                multipliers: mults,
                gram_basis: monomial_basis(self.n, degree / 2),
            });
        }
        Ok(SosProgram {
            mode,
            n_vars: self.n,
            degrees,
            p_threshold,
            mu,
            free: self.free,
            scalar_p: None,
            n_free: self.n_free,
            multipliers,
            constraints,
            objective: Vec::new(),
            ini: None,
            trace_weight: DEFAULT_TRACE_WEIGHT,
        })
    }
}

/// Basis of `u` without monomials the generator annihilates; those
/// coefficients appear in no constraint.
fn u_basis(sde: &SdeSystem, d_u: u32) -> Result<Vec<Monomial>> {
    let mut out = Vec::new();
    for m in monomial_basis(sde.n_vars(), d_u) {
        let am = sde.apply_generator(&Polynomial::monomial(sde.n_vars(), m.clone(), 1.0))?;
        if !am.is_zero() {
            out.push(m);
        }
    }
    Ok(out)
}

pub fn build_reach_avoid(prob: &ReachAvoidProblem, deg: DegreeConfig) -> Result<SosProgram> {
    deg.validate()?;
    let n = prob.n_vars();
    let sde = &prob.sde;
    let one = Polynomial::constant(n, 1.0);
    let one_minus_g = one.try_sub(&prob.g)?;
    let g_minus_one = prob.g.try_sub(&one)?;
    let h0 = prob.h0.clone();

    let mut b = Builder { n, d_s: deg.d_s, free: Vec::new(), n_free: 0 };
    let v = b.add_free("v", monomial_basis(n, deg.d_v));
    let u = b.add_free("u", u_basis(sde, deg.d_u)?);
    let p = b.add_free("p_free", monomial_basis(n, deg.d_p));

    let neg = |f: &Polynomial| Ok(-f);
    let gen = |f: &Polynomial| sde.apply_generator(f);
    let pending = vec![
        Pending {
            name: "generator",
            fixed: Polynomial::zero(n),
            linear: b.linear(v, gen)?,
            weights: vec![("s0", h0.clone()), ("s1", one_minus_g.clone())],
        },
        Pending {
            name: "dominance",
            fixed: Polynomial::zero(n),
            linear: [b.linear(v, neg)?, b.linear(u, gen)?].concat(),
            weights: vec![("s2", h0.clone()), ("s3", one_minus_g)],
        },
        Pending {
            name: "boundary",
            fixed: Polynomial::zero(n),
            linear: [b.linear(v, neg)?, b.linear(p, |f| f.try_mul(&h0))?].concat(),
            weights: vec![],
        },
        Pending {
            name: "target",
            fixed: one,
            linear: b.linear(v, neg)?,
            weights: vec![("s4", g_minus_one)],
        },
    ];
    let vd = b.free[v].clone();
    let mut prog = b.finish(pending, Mode::ReachAvoid, deg, prob.p_threshold, prob.mu)?;
    let w = crate::moments::objective_vector(&prob.objective_domain, &vd.basis);
    prog.objective = w.iter().enumerate().map(|(j, wj)| (vd.offset + j, -wj)).collect();
    Ok(prog)
}

pub fn build_safety(prob: &ReachAvoidProblem, ini: &Polynomial, deg: DegreeConfig) -> Result<SosProgram> {
    deg.validate()?;
    let n = prob.n_vars();
    if ini.n_vars() != n {
        return Err(Error::DimensionMismatch { expected: n, found: ini.n_vars() });
    }
    check_initial_inside_safe(prob, ini);
    let sde = &prob.sde;
    let one = Polynomial::constant(n, 1.0);
    let one_minus_g = one.try_sub(&prob.g)?;
    let g_minus_one = prob.g.try_sub(&one)?;
    let h0 = prob.h0.clone();

    let mut b = Builder { n, d_s: deg.d_s, free: Vec::new(), n_free: 0 };
    let v = b.add_free("v", monomial_basis(n, deg.d_v));
    let u = b.add_free("u", u_basis(sde, deg.d_u)?);
    let q = b.add_free("p_free", monomial_basis(n, deg.d_p));
    let p = b.add_free("p", vec![Monomial::one()]);

    let ident = |f: &Polynomial| Ok(f.clone());
    let neg = |f: &Polynomial| Ok(-f);
    let gen = |f: &Polynomial| sde.apply_generator(f);
    let neg_gen = |f: &Polynomial| Ok(-&sde.apply_generator(f)?);
    let pending = vec![
        Pending {
            name: "initial",
            fixed: Polynomial::zero(n),
            linear: [b.linear(p, ident)?, b.linear(v, neg)?].concat(),
            weights: vec![("s0", ini.clone())],
        },
        Pending {
            name: "target",
            fixed: -&one,
            linear: b.linear(v, ident)?,
            weights: vec![("s1", g_minus_one)],
        },
        Pending {
            name: "dominance",
            fixed: Polynomial::zero(n),
            linear: [b.linear(v, ident)?, b.linear(u, |f| Ok(-&gen(f)?))?].concat(),
            weights: vec![("s2", h0.clone()), ("s3", one_minus_g)],
        },
        Pending {
            name: "generator",
            fixed: Polynomial::zero(n),
            linear: b.linear(v, neg_gen)?,
            weights: vec![("s4", h0.clone())],
        },
        Pending {
            name: "boundary",
            fixed: Polynomial::zero(n),
            linear: [b.linear(v, ident)?, b.linear(q, |f| f.try_mul(&h0))?].concat(),
            weights: vec![],
        },
    ];
    let p_offset = b.free[p].offset;
    let mut prog = b.finish(pending, Mode::Safety, deg, prob.p_threshold, prob.mu)?;
    prog.scalar_p = Some(p_offset);
    prog.objective = vec![(p_offset, 1.0)];
    prog.ini = Some(ini.clone());
    Ok(prog)
}

fn check_initial_inside_safe(prob: &ReachAvoidProblem, ini: &Polynomial) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (lo, hi) = prob.objective_domain.inflated(2.0).bounding_box();
    let mut bad = 0;
    for _ in 0..20_000 {
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect();
        if ini.eval_unchecked(&x) <= 0.0 && prob.h0.eval_unchecked(&x) >= 0.0 {
            bad += 1;
        }
    }
    if bad > 0 {
        log::warn!("{bad} sampled points of INI lie outside X; INI should satisfy INI ⊆ X");
    }
}

/// Block index of constraint `k`'s Gram form: multipliers come first.
pub fn sigma_block(prog: &SosProgram, k: usize) -> usize {
    prog.multipliers.len() + k
}

/// Gram encoding. Rows are the monomials of each constraint in graded-lex
/// order; blocks are the multipliers followed by one block per constraint.
pub fn compile(prog: &SosProgram) -> SdpProblem {
    let sizes: Vec<usize> = prog
        .multipliers
        .iter()
        .map(|m| m.basis.len())
        .chain(prog.constraints.iter().map(|c| c.gram_basis.len()))
        .collect();
    let mut sdp = SdpProblem::new(sizes, prog.n_free);
    for &(j, c) in &prog.objective {
        sdp.objective_free[j] += c;
    }
    if prog.trace_weight > 0.0 {
        for (blk, n) in sdp.block_sizes.clone().into_iter().enumerate() {
            for a in 0..n {
                sdp.objective.push(SymEntry::new(blk, a, a, prog.trace_weight));
            }
        }
    }
    for (k, con) in prog.constraints.iter().enumerate() {
        let rows = monomial_basis(prog.n_vars, con.degree);
        let index: HashMap<&Monomial, usize> = rows.iter().enumerate().map(|(r, m)| (m, r)).collect();
        let row_of = |m: &Monomial| -> usize {
            *index.get(m).unwrap_or_else(|| panic!("monomial {m} above constraint degree {}", con.degree))
        };
        let mut gram: Vec<BTreeMap<(usize, usize, usize), f64>> = vec![BTreeMap::new(); rows.len()];
        let mut free: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); rows.len()];
        let mut rhs = vec![0.0; rows.len()];
        for (m, c) in con.fixed.terms() {
            rhs[row_of(m)] -= c;
        }
        for (j, phi) in &con.linear {
            for (m, c) in phi.terms() {
                *free[row_of(m)].entry(*j).or_default() += c;
            }
        }
        for (i, w) in &con.multipliers {
            let basis = &prog.multipliers[*i].basis;
            for a in 0..basis.len() {
                for b in a..basis.len() {
                    let ab = basis[a].mul(&basis[b]);
                    for (d, c) in w.terms() {
                        *gram[row_of(&ab.mul(d))].entry((*i, a, b)).or_default() += c;
                    }
                }
            }
        }
        let blk = sigma_block(prog, k);
        let basis = &con.gram_basis;
        for a in 0..basis.len() {
            for b in a..basis.len() {
                *gram[row_of(&basis[a].mul(&basis[b]))].entry((blk, a, b)).or_default() -= 1.0;
            }
        }
        for r in 0..rows.len() {
            sdp.add_constraint(Constraint {
                entries: gram[r]
                    .iter()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(&(blk, a, b), &v)| SymEntry::new(blk, a, b, v))
                    .collect(),
                free: free[r].iter().filter(|(_, v)| **v != 0.0).map(|(&j, &v)| (j, v)).collect(),
                rhs: rhs[r],
            });
        }
    }
    sdp
}

/// Turns a solver result into a certificate.
///
/// Each constraint's left-hand side is recomputed from the extracted
/// polynomials, and the coefficient residual against its Gram form is
/// spread evenly over the Gram entries of each monomial (the least-norm
/// correction), so the SOS identities hold to rounding.
pub fn extract_certificate(prog: &SosProgram, sol: &SdpSolution) -> Result<Certificate> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::SolverFailed {
            status: sol.status,
            detail: format!(
                "after {} iterations: gap {:.2e}, primal infeasibility {:.2e}, dual infeasibility {:.2e}",
                sol.iterations, sol.rel_gap, sol.primal_infeasibility, sol.dual_infeasibility
            ),
        });
    }
    let n = prog.n_vars;
    let nm = prog.multipliers.len();
    let mult_grams: Vec<DMatrix<f64>> = sol.x_blocks[..nm].to_vec();
    let mut gram = Vec::new();
    for (i, m) in prog.multipliers.iter().enumerate() {
        gram.push(GramBlock { name: m.name.clone(), basis: m.basis.clone(), matrix: mult_grams[i].clone() });
    }
    for (k, con) in prog.constraints.iter().enumerate() {
        let lhs = prog.constraint_lhs(k, &sol.x_free, &mult_grams);
        let mut q = sol.x_blocks[sigma_block(prog, k)].clone();
        let basis = &con.gram_basis;
        let current = GramBlock { name: String::new(), basis: basis.clone(), matrix: q.clone() }.polynomial(n);
        let resid = lhs.try_sub(&current)?;
        // ordered pairs (a, b) with z_a z_b = α
        let mut pairs: HashMap<Monomial, Vec<(usize, usize)>> = HashMap::new();
        for a in 0..basis.len() {
            for b in 0..basis.len() {
                pairs.entry(basis[a].mul(&basis[b])).or_default().push((a, b));
            }
        }
        for (m, r) in resid.terms() {
            match pairs.get(m) {
                Some(list) => {
                    let share = r / list.len() as f64;
                    for &(a, b) in list {
                        q[(a, b)] += share;
                    }
                }
                None => log::warn!("constraint {}: residual {r:e} on {m} outside the Gram span", con.name),
            }
        }
        gram.push(GramBlock { name: format!("sigma_{}", con.name), basis: basis.clone(), matrix: q });
    }

    let v = prog.assemble("v", &sol.x_free);
    let u = prog.assemble("u", &sol.x_free);
    let p_free = prog.assemble("p_free", &sol.x_free);
    let multipliers: Vec<(String, Polynomial)> =
        gram[..nm].iter().map(|g| (g.name.clone(), g.polynomial(n))).collect();
    let (p_threshold, objective) = match prog.mode {
        Mode::ReachAvoid => {
            let obj = -prog.objective.iter().map(|&(j, c)| c * sol.x_free[j]).sum::<f64>();
            (prog.p_threshold, obj)
        }
        Mode::Safety => {
            let p = sol.x_free[prog.scalar_p.expect("safety programs carry p")];
            (p, p)
        }
    };
    Ok(Certificate {
        mode: prog.mode,
        n_vars: n,
        p_threshold,
        mu: prog.mu,
        objective,
        degrees: prog.degrees,
        v,
        u,
        p_free,
        multipliers,
        ini: prog.ini.clone(),
        gram,
        stats: None,
    })
}

/// Build, compile, solve and extract in one call.
pub fn solve_program(prog: &SosProgram, cfg: &SolverConfig) -> Result<(Certificate, SdpSolution)> {
    let sdp_prob = compile(prog);
    let start = Instant::now();
    let sol = sdp::solve(&sdp_prob, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!(
        "sdp: {} after {} iterations ({seconds:.2} s), objective {:.8e}",
        sol.status,
        sol.iterations,
        sol.primal_objective
    );
    let mut cert = extract_certificate(prog, &sol)?;
    cert.stats = Some(SolverStats {
        status: sol.status,
        iterations: sol.iterations,
        primal_objective: sol.primal_objective,
        dual_objective: sol.dual_objective,
        rel_gap: sol.rel_gap,
        primal_infeasibility: sol.primal_infeasibility,
        dual_infeasibility: sol.dual_infeasibility,
        seconds,
    });
    Ok((cert, sol))
}

pub fn solve_reach_avoid(prob: &ReachAvoidProblem, deg: DegreeConfig, cfg: &SolverConfig) -> Result<Certificate> {
    Ok(solve_program(&build_reach_avoid(prob, deg)?, cfg)?.0)
}

pub fn solve_safety(
    prob: &ReachAvoidProblem,
    ini: &Polynomial,
    deg: DegreeConfig,
    cfg: &SolverConfig,
) -> Result<Certificate> {
    Ok(solve_program(&build_safety(prob, ini, deg)?, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::SdpSolution;
    use proptest::prelude::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    fn population() -> ReachAvoidProblem {
        let sde = SdeSystem::new(vec![p("-x1", 1)], vec![vec![p("0.7071067811865476*x1", 1)]]).unwrap();
        ReachAvoidProblem::new(sde, p("x1^2 - 1", 1), p("100*x1^2", 1), 0.9, IntegrationDomain::unit_ball(1)).unwrap()
    }

    fn nonlinear_drift() -> ReachAvoidProblem {
        let sde = SdeSystem::new(
            vec![p("x2", 2), p("-x1 - x2 - 0.5*x1^3", 2)],
            vec![vec![p("0", 2)], vec![p("0.1", 2)]],
        )
        .unwrap();
        ReachAvoidProblem::new(
            sde,
            p("x1^2 + x2^2 - 1", 2),
            p("100*(x1 - 0.1)^2 + 100*x2^2", 2),
            0.9,
            IntegrationDomain::unit_ball(2),
        )
        .unwrap()
    }

    /// A Gram matrix reproducing `f` over `basis`, spreading each
    /// coefficient evenly over the pairs that produce its monomial.
    fn gram_for(f: &Polynomial, basis: &[Monomial]) -> DMatrix<f64> {
        let k = basis.len();
        let mut pairs: HashMap<Monomial, Vec<(usize, usize)>> = HashMap::new();
        for a in 0..k {
            for b in 0..k {
                pairs.entry(basis[a].mul(&basis[b])).or_default().push((a, b));
            }
        }
        let mut q = DMatrix::zeros(k, k);
        for (m, c) in f.terms() {
            let list = &pairs[m];
            for &(a, b) in list {
                q[(a, b)] += c / list.len() as f64;
            }
        }
        q
    }

    /// Gram blocks of every constraint for a given free vector and
    /// multiplier Grams, in SDP block order.
    fn blocks_for(prog: &SosProgram, x_free: &[f64], mult: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let mut blocks = mult.to_vec();
        for (k, c) in prog.constraints.iter().enumerate() {
            blocks.push(gram_for(&prog.constraint_lhs(k, x_free, mult), &c.gram_basis));
        }
        blocks
    }

    fn equality_residual(sdp: &SdpProblem, blocks: &[DMatrix<f64>], x_free: &[f64]) -> f64 {
        let ax = sdp.apply(blocks, x_free);
        sdp.constraints.iter().zip(&ax).map(|(c, a)| (c.rhs - a).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn single_square_has_a_two_by_two_block() {
        let mut prog = SosProgram::empty(1);
        prog.constraints.push(SosConstraint {
            name: "square".into(),
            degree: 2,
            fixed: p("x1^2", 1),
            linear: vec![],
            multipliers: vec![],
            gram_basis: monomial_basis(1, 1),
        });
        let sdp = compile(&prog);
        assert_eq!(sdp.block_sizes, vec![2]);
        assert_eq!(sdp.n_constraints(), 3);
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(equality_residual(&sdp, &[q], &[]), 0.0);
        let sol = crate::sdp::solve(&sdp, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x_blocks[0][(1, 1)] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn empty_program_compiles_to_empty_sdp() {
        let sdp = compile(&SosProgram::empty(3));
        assert!(sdp.is_empty());
        assert_eq!(sdp.n_blocks(), 0);
    }

    #[test]
    fn block_sides_follow_binomial_counts() {
        let prog = build_reach_avoid(&nonlinear_drift(), DegreeConfig::uniform(16).unwrap()).unwrap();
        let sdp = compile(&prog);
        // monomials of degree <= k in two variables: C(k + 2, 2)
        let count = |k: u32| ((k + 1) * (k + 2) / 2) as usize;
        for (k, c) in prog.constraints.iter().enumerate() {
            assert_eq!(c.degree % 2, 0);
            assert_eq!(sdp.block_sizes[sigma_block(&prog, k)], count(c.degree / 2), "{}", c.name);
        }
        // multipliers of degree 16 have 45 x 45 Gram blocks; the cubic drift
        // and the degree-2 weights lift every constraint to degree 18
        assert!(prog.multipliers.iter().all(|m| m.basis.len() == 45));
        assert!(prog.constraints.iter().all(|c| c.degree == 18));
        let rows: usize = prog.constraints.iter().map(|c| monomial_basis(2, c.degree).len()).sum();
        assert_eq!(sdp.n_constraints(), rows);
    }

    #[test]
    fn every_coefficient_is_used() {
        let prog = build_reach_avoid(&nonlinear_drift(), DegreeConfig::uniform(6).unwrap()).unwrap();
        let mut used = vec![false; prog.n_free];
        for c in &prog.constraints {
            for (j, _) in &c.linear {
                used[*j] = true;
            }
        }
        assert!(used.iter().all(|u| *u));
    }

    #[test]
    fn zero_dynamics_leave_only_multipliers() {
        let sde = SdeSystem::new(vec![p("0", 1)], vec![]).unwrap();
        let prob =
            ReachAvoidProblem::new(sde, p("x1^2 - 1", 1), p("100*x1^2", 1), 0.5, IntegrationDomain::unit_ball(1))
                .unwrap();
        let prog = build_reach_avoid(&prob, DegreeConfig::uniform(4).unwrap()).unwrap();
        let gen = &prog.constraints[0];
        assert_eq!(gen.name, "generator");
        assert!(gen.linear.is_empty() && gen.fixed.is_zero());
        assert_eq!(gen.multipliers.len(), 2);
        assert!(prog.free_poly("u").unwrap().basis.is_empty());
    }

    #[test]
    fn zero_certificate_is_feasible() {
        let prog = build_reach_avoid(&nonlinear_drift(), DegreeConfig::uniform(6).unwrap()).unwrap();
        let sdp = compile(&prog);
        let x = vec![0.0; prog.n_free];
        let mult: Vec<DMatrix<f64>> =
            prog.multipliers.iter().map(|m| DMatrix::zeros(m.basis.len(), m.basis.len())).collect();
        let blocks = blocks_for(&prog, &x, &mult);
        assert_eq!(equality_residual(&sdp, &blocks, &x), 0.0);
        for b in &blocks {
            assert!(b.symmetric_eigenvalues().min() >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn assembled_points_satisfy_the_compiled_equalities(seed in any::<u64>()) {
            let prog = build_reach_avoid(&population(), DegreeConfig::uniform(6).unwrap()).unwrap();
            let sdp = compile(&prog);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..prog.n_free).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mult: Vec<DMatrix<f64>> = prog
                .multipliers
                .iter()
                .map(|m| {
                    let k = m.basis.len();
                    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
                    &a * a.transpose()
                })
                .collect();
            let blocks = blocks_for(&prog, &x, &mult);
            prop_assert!(equality_residual(&sdp, &blocks, &x) <= 1e-9);
        }
    }

    #[test]
    fn small_multipliers_are_rejected_by_name() {
        match build_reach_avoid(&nonlinear_drift(), DegreeConfig::new(16, 16, 2, 16).unwrap()) {
            Err(Error::DegreeMismatch { constraint, .. }) => assert_eq!(constraint, "generator"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(DegreeConfig::new(8, 1, 8, 8), Err(Error::DegreeMismatch { .. })));
    }

    #[test]
    fn population_objective_is_the_integral_of_v() {
        let cert = solve_reach_avoid(&population(), DegreeConfig::uniform(8).unwrap(), &SolverConfig::default())
            .unwrap();
        // ∫_{-1}^{1} x^k dx = 2 / (k + 1) for even k, 0 for odd k
        let integral: f64 = cert
            .v
            .terms()
            .map(|(m, c)| {
                let k = m.degree();
                if k % 2 == 0 { 2.0 * c / (k + 1) as f64 } else { 0.0 }
            })
            .sum();
        assert!((cert.objective - integral).abs() <= 1e-12 * integral.abs().max(1.0));
        assert!(cert.v.eval(&[0.3]).unwrap() > 0.9);
        assert!(cert.v.eval(&[1.0]).unwrap() <= 1e-6);
    }

    #[test]
    fn raising_degrees_does_not_lose_value() {
        let cfg = SolverConfig::default();
        let lo = solve_reach_avoid(&population(), DegreeConfig::uniform(6).unwrap(), &cfg).unwrap();
        let hi = solve_reach_avoid(&population(), DegreeConfig::uniform(8).unwrap(), &cfg).unwrap();
        assert!(hi.objective >= lo.objective - 1e-5, "{} < {}", hi.objective, lo.objective);
    }

    #[test]
    fn constant_one_is_a_safety_certificate() {
        let prob = population();
        let prog = build_safety(&prob, &p("x1^2 - 0.64", 1), DegreeConfig::uniform(4).unwrap()).unwrap();
        let sdp = compile(&prog);
        let mut x = vec![0.0; prog.n_free];
        x[prog.free_poly("v").unwrap().offset] = 1.0;
        x[prog.scalar_p.unwrap()] = 1.0;
        let mult: Vec<DMatrix<f64>> =
            prog.multipliers.iter().map(|m| DMatrix::zeros(m.basis.len(), m.basis.len())).collect();
        let blocks = blocks_for(&prog, &x, &mult);
        assert_eq!(equality_residual(&sdp, &blocks, &x), 0.0);
        for b in &blocks {
            assert!(b.symmetric_eigenvalues().min() >= 0.0);
        }
    }

    #[test]
    fn initial_set_equal_to_target_forces_one() {
        let prob = population();
        let ini = p("100*x1^2 - 1", 1);
        let cert = solve_safety(&prob, &ini, DegreeConfig::uniform(4).unwrap(), &SolverConfig::default()).unwrap();
        assert_eq!(cert.mode, Mode::Safety);
        assert!(cert.p_threshold >= 1.0 - 1e-6, "{}", cert.p_threshold);
    }

    #[test]
    fn unsolved_status_is_an_error() {
        let prog = build_reach_avoid(&population(), DegreeConfig::uniform(4).unwrap()).unwrap();
        let sol = SdpSolution {
            status: SolveStatus::MaxIter,
            x_blocks: vec![],
            x_free: vec![],
            y: vec![],
            z_blocks: vec![],
            primal_objective: 0.0,
            dual_objective: 0.0,
            rel_gap: 1.0,
            primal_infeasibility: 1.0,
            dual_infeasibility: 1.0,
            iterations: 200,
            log: vec![],
        };
        match extract_certificate(&prog, &sol) {
            Err(Error::SolverFailed { status, .. }) => assert_eq!(status, SolveStatus::MaxIter),
            other => panic!("{other:?}"),
        }
    }
}
