//! Sparse multivariate polynomials over `f64`.
//!
//! A [`Polynomial`] is a map from [`Monomial`] to a nonzero coefficient,
//! tagged with the number of variables it lives in. Variables are indexed
//! from zero internally and rendered as `x1`, `x2`, ... in text.
//!
//! Monomials are ordered graded-lexicographically: lower total degree first,
//! and within one degree a larger exponent on a lower-indexed variable comes
//! first. For two variables the order starts `1, x1, x2, x1^2, x1*x2, x2^2`.
//! Gram-matrix indexing and every rendered polynomial follow this order.

mod parse;

pub use parse::PolyParseError;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Largest exponent any single variable may carry.
pub const MAX_VAR_DEGREE: u32 = 64;

/// A monomial `x_{i1}^{e1} * x_{i2}^{e2} * ...`, stored as `(variable, exponent)`
/// pairs sorted by variable with no zero exponents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial(Vec<(usize, u32)>);

impl Monomial {
    /// The constant monomial `1`.
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    /// The monomial `x_var`.
    pub fn var(var: usize) -> Self {
        Monomial(vec![(var, 1)])
    }

    /// Builds a monomial from a dense exponent vector.
    pub fn from_exponents(exponents: &[u32]) -> Self {
        Monomial(
            exponents
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| (i, e))
                .collect(),
        )
    }

    /// Builds a monomial from `(variable, exponent)` pairs in any order.
    /// Repeated variables are merged and zero exponents dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for (v, e) in pairs {
            *map.entry(v).or_insert(0) += e;
        }
        Monomial(map.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn exponent(&self, var: usize) -> u32 {
        self.0
            .iter()
            .find(|(v, _)| *v == var)
            .map_or(0, |&(_, e)| e)
    }

    /// Total degree.
    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    /// `(variable, exponent)` pairs in increasing variable order.
    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.0
    }

    /// Highest variable index with a positive exponent.
    pub fn max_var(&self) -> Option<usize> {
        self.0.last().map(|&(v, _)| v)
    }

    pub fn to_dense(&self, n_vars: usize) -> Vec<u32> {
        let mut out = vec![0; n_vars];
        for &(v, e) in &self.0 {
            out[v] = e;
        }
        out
    }

    /// Product of two monomials.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    /// Formal derivative with respect to `var`: `(factor, monomial)`, or
    /// `None` when the monomial does not contain `var`.
    pub fn derivative(&self, var: usize) -> Option<(u32, Monomial)> {
        let pos = self.0.iter().position(|&(v, _)| v == var)?;
        let e = self.0[pos].1;
        let mut rest = self.0.clone();
        if e == 1 {
            rest.remove(pos);
        } else {
            rest[pos].1 = e - 1;
        }
        Some((e, Monomial(rest)))
    }

    /// Evaluates the monomial at `x` (no bounds checks beyond indexing).
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|&(v, e)| x[v].powi(e as i32))
            .product()
    }

    fn max_exponent(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).max().unwrap_or(0)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j) = (0, 0);
        loop {
            match (a.get(i), b.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Less,
                (None, Some(_)) => return Ordering::Greater,
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va != vb {
                        return va.cmp(&vb);
                    }
                    if ea != eb {
                        return eb.cmp(&ea);
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        for (k, &(v, e)) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            write!(f, "x{}", v + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials in `n` variables of total degree at most `d`, in
/// graded-lexicographic order. The length is `C(n + d, d)`.
pub fn monomial_basis(n: usize, d: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut buf = vec![0u32; n];
    for deg in 0..=d {
        compositions(&mut buf, 0, deg, &mut out);
    }
    out
}

// Exponent vectors of `remaining` spread over buf[pos..], x_pos-heavy first.
fn compositions(buf: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Monomial>) {
    if pos + 1 >= buf.len() {
        if let Some(last) = buf.last_mut() {
            *last = remaining;
            out.push(Monomial::from_exponents(buf));
        } else if remaining == 0 {
            out.push(Monomial::one());
        }
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e;
        compositions(buf, pos + 1, remaining - e, out);
    }
    buf[pos] = 0;
}

/// Sparse polynomial in `n_vars` variables with `f64` coefficients.
///
/// Terms with an exactly-zero coefficient are never stored, so two
/// polynomials are equal iff they have identical term maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n_vars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(n_vars: usize) -> Self {
        Polynomial {
            n_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n_vars: usize, c: f64) -> Self {
        Self::monomial(n_vars, Monomial::one(), c)
    }

    /// The polynomial `x_var` (zero-indexed).
    pub fn var(n_vars: usize, var: usize) -> Self {
        assert!(var < n_vars, "variable x{} out of range", var + 1);
        Self::monomial(n_vars, Monomial::var(var), 1.0)
    }

    /// The single term `c * m`.
    pub fn monomial(n_vars: usize, m: Monomial, c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(m, c);
        }
        Polynomial { n_vars, terms }
    }

    /// Sums the given terms; variables must be `< n_vars` and exponents
    /// within [`MAX_VAR_DEGREE`].
    pub fn from_terms(
        n_vars: usize,
        terms: impl IntoIterator<Item = (Monomial, f64)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in terms {
            if let Some(v) = m.max_var() {
                if v >= n_vars {
                    return Err(Error::DimensionMismatch {
                        expected: n_vars,
                        found: v + 1,
                    });
                }
            }
            check_cap(&m)?;
            *map.entry(m).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c != 0.0);
        Ok(Polynomial { n_vars, terms: map })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in increasing graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn check_dims(&self, other: &Polynomial) -> Result<()> {
        if self.n_vars != other.n_vars {
            return Err(Error::DimensionMismatch {
                expected: self.n_vars,
                found: other.n_vars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dims(other)?;
        let mut terms = self.terms.clone();
        for (m, &c) in &other.terms {
            *terms.entry(m.clone()).or_insert(0.0) += c;
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            n_vars: self.n_vars,
            terms,
        })
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dims(other)?;
        self.try_add(&other.scale(-1.0))
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dims(other)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let m = ma.mul(mb);
                check_cap(&m)?;
                *terms.entry(m).or_insert(0.0) += ca * cb;
            }
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            n_vars: self.n_vars,
            terms,
        })
    }

    /// `a * self`.
    pub fn scale(&self, a: f64) -> Polynomial {
        if a == 0.0 {
            return Polynomial::zero(self.n_vars);
        }
        let mut terms = self.terms.clone();
        for c in terms.values_mut() {
            *c *= a;
        }
        terms.retain(|_, c| *c != 0.0);
        Polynomial {
            n_vars: self.n_vars,
            terms,
        }
    }

    /// `self^k` by repeated multiplication.
    pub fn pow(&self, k: u32) -> Result<Polynomial> {
        let mut acc = Polynomial::constant(self.n_vars, 1.0);
        for _ in 0..k {
            acc = acc.try_mul(self)?;
        }
        Ok(acc)
    }

    /// Formal partial derivative with respect to variable `var` (zero-indexed).
    pub fn partial(&self, var: usize) -> Result<Polynomial> {
        if var >= self.n_vars {
            return Err(Error::DimensionMismatch {
                expected: self.n_vars,
                found: var + 1,
            });
        }
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, &c) in &self.terms {
            if let Some((e, dm)) = m.derivative(var) {
                *terms.entry(dm).or_insert(0.0) += c * e as f64;
            }
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            n_vars: self.n_vars,
            terms,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_vars {
            return Err(Error::DimensionMismatch {
                expected: self.n_vars,
                found: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    /// Direct term summation; `x` must have `n_vars` entries.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(x)).sum()
    }

    /// Coefficient vector over `basis`; terms outside the basis are ignored.
    pub fn coefficients_in(&self, basis: &[Monomial]) -> Vec<f64> {
        basis.iter().map(|m| self.coefficient(m)).collect()
    }

    /// `sum_i coeffs[i] * basis[i]`.
    pub fn from_coefficients(n_vars: usize, basis: &[Monomial], coeffs: &[f64]) -> Polynomial {
        let mut terms = BTreeMap::new();
        for (m, &c) in basis.iter().zip(coeffs) {
            if c != 0.0 {
                terms.insert(m.clone(), c);
            }
        }
        Polynomial { n_vars, terms }
    }
}

fn check_cap(m: &Monomial) -> Result<()> {
    let e = m.max_exponent();
    if e > MAX_VAR_DEGREE {
        return Err(Error::DegreeCap {
            exponent: e,
            cap: MAX_VAR_DEGREE,
        });
    }
    Ok(())
}

// Operator sugar. These panic on dimension mismatch or degree-cap overflow;
// use the `try_*` methods when inputs are not known to be compatible.

impl std::ops::Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial addition")
    }
}

impl std::ops::Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial subtraction")
    }
}

impl std::ops::Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial multiplication")
    }
}

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}
