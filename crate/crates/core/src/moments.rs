//! Lebesgue moments of monomials over balls and boxes.
//!
//! These give the objective weights: for `v = Σ c_i z_i` over a monomial
//! basis `z`, `∫ v dx = c · ŵ` with `ŵ_i = ∫ z_i dx`. Only balls and boxes
//! have closed forms here; any other safe set should be covered by a
//! bounding box. The objective only ranks feasible certificates, so an
//! approximate integration domain never affects soundness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{Monomial, Polynomial};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationDomain {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl IntegrationDomain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = IntegrationDomain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_ball(n: usize) -> Self {
        IntegrationDomain::Ball {
            center: vec![0.0; n],
            radius: 1.0,
        }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = IntegrationDomain::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IntegrationDomain::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(Error::InvalidProblem("ball center must be nonempty".into()));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidProblem(format!("ball radius {radius} must be positive")));
                }
            }
            IntegrationDomain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidProblem("box bounds must be nonempty and equal length".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(Error::InvalidProblem("box requires lo < hi componentwise".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        match self {
            IntegrationDomain::Ball { center, .. } => center.len(),
            IntegrationDomain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            IntegrationDomain::Ball { center, .. } => center.clone(),
            IntegrationDomain::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            IntegrationDomain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            IntegrationDomain::Box { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// Same shape scaled about its center by `factor`.
    pub fn inflated(&self, factor: f64) -> IntegrationDomain {
        match self {
            IntegrationDomain::Ball { center, radius } => IntegrationDomain::Ball {
                center: center.clone(),
                radius: radius * factor,
            },
            IntegrationDomain::Box { lo, hi } => {
                let c = self.center();
                IntegrationDomain::Box {
                    lo: lo.iter().zip(&c).map(|(l, c)| c + (l - c) * factor).collect(),
                    hi: hi.iter().zip(&c).map(|(h, c)| c + (h - c) * factor).collect(),
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            IntegrationDomain::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() <= radius * radius
            }
            IntegrationDomain::Box { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(a, (l, h))| l <= a && a <= h)
            }
        }
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> f64 {
        self.moment(&Monomial::one())
    }

    /// `∫ x^alpha dx` over the domain.
    pub fn moment(&self, alpha: &Monomial) -> f64 {
        let n = self.n_vars();
        let a = alpha.to_dense(n);
        match self {
            IntegrationDomain::Box { lo, hi } => a
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&e, (&l, &h))| {
                    let k = e as i32 + 1;
                    (h.powi(k) - l.powi(k)) / k as f64
                })
                .product(),
            IntegrationDomain::Ball { center, radius } => {
                // x = c + r y; expand Π (c_i + r y_i)^{a_i} binomially.
                let mut total = 0.0;
                let mut beta = vec![0u32; n];
                loop {
                    if beta.iter().all(|b| b % 2 == 0) {
                        let mut coef = 1.0;
                        for i in 0..n {
                            coef *= binomial(a[i], beta[i])
                                * center[i].powi((a[i] - beta[i]) as i32)
                                * radius.powi(beta[i] as i32);
                        }
                        if coef != 0.0 {
                            total += coef * unit_ball_moment(&beta);
                        }
                    }
                    // odometer over 0 <= beta_i <= a_i
                    let mut k = 0;
                    while k < n {
                        if beta[k] < a[k] {
                            beta[k] += 1;
                            break;
                        }
                        beta[k] = 0;
                        k += 1;
                    }
                    if k == n {
                        break;
                    }
                }
                total * radius.powi(n as i32)
            }
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `∫_{|y|<=1} y^beta dy` in `beta.len()` dimensions.
fn unit_ball_moment(beta: &[u32]) -> f64 {
    if beta.iter().any(|b| b % 2 == 1) {
        return 0.0;
    }
    let n = beta.len() as f64;
    let total: u32 = beta.iter().sum();
    let log_num: f64 = beta
        .iter()
        .map(|&b| libm::lgamma((b as f64 + 1.0) / 2.0))
        .sum();
    let log_den = libm::lgamma((n + total as f64) / 2.0 + 1.0);
    (log_num - log_den).exp()
}

/// `∫ x^alpha dx` over `dom`.
pub fn monomial_moment(dom: &IntegrationDomain, alpha: &Monomial) -> f64 {
    dom.moment(alpha)
}

/// Moment vector `ŵ` of a monomial basis.
pub fn objective_vector(dom: &IntegrationDomain, basis: &[Monomial]) -> Vec<f64> {
    basis.iter().map(|m| dom.moment(m)).collect()
}

/// `∫ f dx` over `dom`.
pub fn integrate(dom: &IntegrationDomain, f: &Polynomial) -> f64 {
    f.terms().map(|(m, c)| c * dom.moment(m)).sum()
}
