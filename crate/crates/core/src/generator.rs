//! Infinitesimal generator of a polynomial Itô diffusion.
//!
//! For `dX = b(X) dt + σ(X) dW` the generator acts on a polynomial `f` as
//!
//! ```text
//! A f = Σ_i b_i ∂f/∂x_i + ½ Σ_ij (σσᵀ)_ij ∂²f/∂x_i∂x_j
//! ```
//!
//! This is the interior operator. The stopped process freezes on `∂X ∪ T`
//! and its generator vanishes there; that convention is honoured by the SOS
//! program imposing each inequality only on its region, not by altering the
//! operator here.
//!
//! With no noise columns (`m = 0`) the second-order part disappears and the
//! generator reduces to the Lie derivative `∇f · b` of the drift ODE.

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Drift vector `b` (length `n`) and diffusion matrix `σ` (`n × m`).
#[derive(Clone, Debug)]
pub struct SdeSystem {
    n_vars: usize,
    n_noise: usize,
    drift: Vec<Polynomial>,
    diffusion: Vec<Vec<Polynomial>>,
    // upper triangle of σσᵀ, row-major: covariance[i][j - i]
    covariance: Vec<Vec<Polynomial>>,
}

impl SdeSystem {
    /// `diffusion` has one row per state variable, each with `m` entries.
    /// An empty `diffusion` (or rows of length zero) encodes an ODE.
    pub fn new(drift: Vec<Polynomial>, diffusion: Vec<Vec<Polynomial>>) -> Result<Self> {
        let n = drift.len();
        if n == 0 {
            return Err(Error::InvalidProblem("drift must have at least one component".into()));
        }
        let diffusion = if diffusion.is_empty() {
            vec![Vec::new(); n]
        } else {
            diffusion
        };
        if diffusion.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: diffusion.len(),
            });
        }
        let m = diffusion[0].len();
        for row in &diffusion {
            if row.len() != m {
                return Err(Error::InvalidProblem(
                    "diffusion rows must all have the same number of noise columns".into(),
                ));
            }
        }
        for p in drift.iter().chain(diffusion.iter().flatten()) {
            if p.n_vars() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.n_vars(),
                });
            }
        }
        let mut covariance = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n - i);
            for j in i..n {
                let mut acc = Polynomial::zero(n);
                for k in 0..m {
                    acc = acc.try_add(&diffusion[i][k].try_mul(&diffusion[j][k])?)?;
                }
                row.push(acc);
            }
            covariance.push(row);
        }
        Ok(SdeSystem {
            n_vars: n,
            n_noise: m,
            drift,
            diffusion,
            covariance,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Dimension `m` of the driving Wiener process.
    pub fn n_noise(&self) -> usize {
        self.n_noise
    }

    pub fn drift(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Vec<Polynomial>] {
        &self.diffusion
    }

    /// `(σσᵀ)_ij`.
    pub fn covariance(&self, i: usize, j: usize) -> &Polynomial {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        &self.covariance[a][b - a]
    }

    /// True when every diffusion entry is the zero polynomial.
    pub fn is_deterministic(&self) -> bool {
        self.diffusion.iter().flatten().all(Polynomial::is_zero)
    }

    pub fn drift_degree(&self) -> u32 {
        self.drift.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn diffusion_degree(&self) -> u32 {
        self.diffusion
            .iter()
            .flatten()
            .map(Polynomial::degree)
            .max()
            .unwrap_or(0)
    }

    /// `A f`, computed symbolically.
    pub fn apply_generator(&self, f: &Polynomial) -> Result<Polynomial> {
        if f.n_vars() != self.n_vars {
            return Err(Error::DimensionMismatch {
                expected: self.n_vars,
                found: f.n_vars(),
            });
        }
        let n = self.n_vars;
        let mut out = Polynomial::zero(n);
        let grad: Vec<Polynomial> = (0..n).map(|i| f.partial(i)).collect::<Result<_>>()?;
        for i in 0..n {
            out = out.try_add(&self.drift[i].try_mul(&grad[i])?)?;
        }
        if self.n_noise > 0 {
            for i in 0..n {
                for j in i..n {
                    let a = self.covariance(i, j);
                    if a.is_zero() {
                        continue;
                    }
                    let second = grad[i].partial(j)?;
                    // off-diagonal pairs appear twice in the symmetric sum
                    let w = if i == j { 0.5 } else { 1.0 };
                    out = out.try_add(&a.try_mul(&second)?.scale(w))?;
                }
            }
        }
        Ok(out)
    }

    /// Upper bound on `deg(A f)` given `deg f`.
    pub fn generator_degree_bound(&self, deg_f: u32) -> u32 {
        if deg_f == 0 {
            return 0;
        }
        let first = deg_f as i64 - 1 + self.drift_degree() as i64;
        let second = deg_f as i64 - 2 + 2 * self.diffusion_degree() as i64;
        first.max(second).max(0) as u32
    }
}

/// Free-function form of [`SdeSystem::apply_generator`].
pub fn apply_generator(sde: &SdeSystem, f: &Polynomial) -> Result<Polynomial> {
    sde.apply_generator(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    fn population() -> SdeSystem {
        SdeSystem::new(vec![p("-x1", 1)], vec![vec![p("0.5*x1", 1).scale(2f64.sqrt())]]).unwrap()
    }

    fn oscillator() -> SdeSystem {
        SdeSystem::new(
            vec![p("x2", 2), p("-x1 - 7*x2", 2)],
            vec![vec![p("0", 2)], vec![p("-2*x2", 2)]],
        )
        .unwrap()
    }

    #[test]
    fn population_model_on_square() {
        // -x * 2x + 1/2 * (x^2 / 2) * 2 = -1.5 x^2
        let af = population().apply_generator(&p("x1^2", 1)).unwrap();
        let c = af.coefficient(&"x1^2".parse().unwrap());
        assert!((c + 1.5).abs() < 1e-15);
        assert_eq!(af.len(), 1);
    }

    #[test]
    fn constants_are_annihilated() {
        assert!(population().apply_generator(&p("4.2", 1)).unwrap().is_zero());
        assert!(oscillator().apply_generator(&p("-1", 2)).unwrap().is_zero());
    }

    #[test]
    fn oscillator_on_x2_squared() {
        let got = oscillator().apply_generator(&p("x2^2", 2)).unwrap();
        let want = p("2*x2*(-x1 - 7*x2) + 4*x2^2", 2);
        assert_eq!(got, want);
    }

    #[test]
    fn degree_bounds() {
        let linear = SdeSystem::new(vec![p("-x1", 1)], vec![vec![p("x1", 1)]]).unwrap();
        assert_eq!(linear.generator_degree_bound(8), 8);
        let cubic = SdeSystem::new(
            vec![p("x2", 2), p("-(x1 + x2 + 0.5*x1^3)", 2)],
            vec![],
        )
        .unwrap();
        assert_eq!(cubic.n_noise(), 0);
        assert_eq!(cubic.generator_degree_bound(16), 18);
        assert_eq!(cubic.generator_degree_bound(0), 0);
    }

    #[test]
    fn ode_mode_is_lie_derivative() {
        let ode = SdeSystem::new(vec![p("-x1", 1)], vec![]).unwrap();
        assert!(ode.is_deterministic());
        let af = ode.apply_generator(&p("x1^4 + x1", 1)).unwrap();
        assert_eq!(af, p("-4*x1^4 - x1", 1));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        assert!(population().apply_generator(&p("x1*x2", 2)).is_err());
        assert!(SdeSystem::new(vec![p("x1", 1)], vec![vec![p("x1", 2)]]).is_err());
        assert!(SdeSystem::new(
            vec![p("x1", 2), p("x2", 2)],
            vec![vec![p("1", 2)], vec![]]
        )
        .is_err());
    }

    // Gauss-Hermite nodes/weights for E[h(ξ)], ξ ~ N(0,1), via Golub-Welsch.
    fn hermite_rule(k: usize) -> Vec<(f64, f64)> {
        let mut jac = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 1..k {
            let b = (i as f64).sqrt();
            jac[(i, i - 1)] = b;
            jac[(i - 1, i)] = b;
        }
        let eig = jac.symmetric_eigen();
        (0..k)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect()
    }

    // Exact one-step Euler-Maruyama expectation E[f(x + b t + σ √t ξ)].
    fn euler_expectation(sde: &SdeSystem, f: &Polynomial, x: &[f64], t: f64) -> f64 {
        let n = sde.n_vars();
        let m = sde.n_noise();
        let rule = hermite_rule(12);
        let b: Vec<f64> = sde.drift().iter().map(|d| d.eval(x).unwrap()).collect();
        let sig: Vec<Vec<f64>> = sde
            .diffusion()
            .iter()
            .map(|r| r.iter().map(|s| s.eval(x).unwrap()).collect())
            .collect();
        let mut total = 0.0;
        let mut idx = vec![0usize; m];
        loop {
            let mut w = 1.0;
            let mut y: Vec<f64> = (0..n).map(|i| x[i] + b[i] * t).collect();
            for (k, &j) in idx.iter().enumerate() {
                let (node, weight) = rule[j];
                w *= weight;
                for i in 0..n {
                    y[i] += sig[i][k] * t.sqrt() * node;
                }
            }
            total += w * f.eval(&y).unwrap();
            let mut carry = 0;
            while carry < m {
                idx[carry] += 1;
                if idx[carry] < rule.len() {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == m {
                break;
            }
        }
        total
    }

    #[test]
    fn generator_matches_limit_definition() {
        let cases = [
            (population(), p("x1^4 - 2*x1 + 0.3", 1), vec![0.4]),
            (oscillator(), p("x1^2*x2 + x2^3 - x1", 2), vec![0.3, -0.6]),
        ];
        for (sde, f, x) in cases {
            let af = sde.apply_generator(&f).unwrap().eval(&x).unwrap();
            let fx = f.eval(&x).unwrap();
            let quotient = |t: f64| (euler_expectation(&sde, &f, &x, t) - fx) / t;
            let (d3, d4) = (quotient(1e-4), quotient(1e-5));
            // first-order error: shrinking t tenfold shrinks the gap tenfold
            let richardson = (10.0 * d4 - d3) / 9.0;
            assert!((richardson - af).abs() < 1e-6 * (1.0 + af.abs()), "{richardson} vs {af}");
            assert!((d4 - af).abs() <= (d3 - af).abs() + 1e-9);
        }
    }

    fn small_poly(n: usize) -> impl Strategy<Value = Polynomial> {
        let term = (proptest::collection::vec(0u32..4, n), -5i32..5);
        proptest::collection::vec(term, 0..6).prop_map(move |ts| {
            Polynomial::from_terms(
                n,
                ts.into_iter()
                    .map(|(e, c)| (crate::poly::Monomial::from_exponents(&e), c as f64)),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn generator_is_linear(f in small_poly(2), g in small_poly(2), a in -4i32..4) {
            let sde = oscillator();
            let lhs = sde.apply_generator(&(&f.scale(a as f64) + &g)).unwrap();
            let rhs = &sde.apply_generator(&f).unwrap().scale(a as f64) + &sde.apply_generator(&g).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn degree_within_bound(f in small_poly(2)) {
            let sde = oscillator();
            let af = sde.apply_generator(&f).unwrap();
            prop_assert!(af.degree() <= sde.generator_degree_bound(f.degree()));
        }
    }
}
