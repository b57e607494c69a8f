//! Block-diagonal semidefinite programs and a primal-dual interior-point
//! solver.
//!
//! Primal form:
//!
//! ```text
//! minimize   <C, X> + c_f . x
//! subject to <A_i, X> + (B x)_i = b_i,   X ⪰ 0,  x free
//! ```
//!
//! with dual `max b.y` over `C - Σ y_i A_i = Z ⪰ 0`, `Bᵀ y = c_f`.
//! Matrices are stored as upper-triangle entry lists. An off-diagonal
//! entry `(p, q, v)` stands for both `A_pq` and `A_qp`, so it contributes
//! `2 v X_pq` to `<A, X>`.

mod ipm;
pub mod sdpa;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ipm::solve;

/// One upper-triangle entry of a symmetric block matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl SymEntry {
    /// Builds an entry, swapping indices so that `row <= col`.
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        SymEntry { block, row, col, value }
    }
}

/// One equality row `<A_i, X> + Σ_k B_ik x_k = b_i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraint {
    pub entries: Vec<SymEntry>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    pub n_free: usize,
    /// Objective matrix `C`.
    pub objective: Vec<SymEntry>,
    pub objective_free: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new(block_sizes: Vec<usize>, n_free: usize) -> Self {
        SdpProblem {
            block_sizes,
            n_free,
            objective: Vec::new(),
            objective_free: vec![0.0; n_free],
            constraints: Vec::new(),
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty() && self.block_sizes.is_empty() && self.n_free == 0
    }

    /// Appends a constraint and returns its index.
    pub fn add_constraint(&mut self, c: Constraint) -> usize {
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    /// Checks every index against the block structure.
    pub fn validate(&self) -> Result<()> {
        let check = |e: &SymEntry, what: &str| -> Result<()> {
            let size = *self.block_sizes.get(e.block).ok_or_else(|| {
                Error::InvalidInput(format!("{what}: block {} out of range", e.block))
            })?;
            if e.row > e.col || e.col >= size {
                return Err(Error::InvalidInput(format!(
                    "{what}: entry ({}, {}) invalid for block {} of size {size}",
                    e.row, e.col, e.block
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::InvalidInput(format!("{what}: non-finite value")));
            }
            Ok(())
        };
        if self.block_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput("zero-sized block".into()));
        }
        if self.objective_free.len() != self.n_free {
            return Err(Error::DimensionMismatch {
                expected: self.n_free,
                found: self.objective_free.len(),
            });
        }
        for e in &self.objective {
            check(e, "objective")?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            for e in &c.entries {
                check(e, &format!("constraint {i}"))?;
            }
            if let Some(&(k, _)) = c.free.iter().find(|(k, _)| *k >= self.n_free) {
                return Err(Error::InvalidInput(format!(
                    "constraint {i}: free variable {k} out of range"
                )));
            }
            if !c.rhs.is_finite() {
                return Err(Error::InvalidInput(format!("constraint {i}: non-finite rhs")));
            }
        }
        Ok(())
    }

    pub fn objective_blocks(&self) -> Vec<DMatrix<f64>> {
        entries_to_blocks(&self.block_sizes, &self.objective)
    }

    /// `<A_i, X> + (B x)_i` for every row.
    pub fn apply(&self, x_blocks: &[DMatrix<f64>], x_free: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| {
                sym_inner(&c.entries, x_blocks)
                    + c.free.iter().map(|&(k, v)| v * x_free[k]).sum::<f64>()
            })
            .collect()
    }

    /// `Σ y_i A_i` as dense blocks.
    pub fn adjoint(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> =
            self.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (c, &yi) in self.constraints.iter().zip(y) {
            for e in &c.entries {
                out[e.block][(e.row, e.col)] += yi * e.value;
                if e.row != e.col {
                    out[e.block][(e.col, e.row)] += yi * e.value;
                }
            }
        }
        out
    }

    /// `Bᵀ y`.
    pub fn adjoint_free(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (c, &yi) in self.constraints.iter().zip(y) {
            for &(k, v) in &c.free {
                out[k] += v * yi;
            }
        }
        out
    }

    pub fn primal_objective(&self, x_blocks: &[DMatrix<f64>], x_free: &[f64]) -> f64 {
        sym_inner(&self.objective, x_blocks)
            + self.objective_free.iter().zip(x_free).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn dual_objective(&self, y: &[f64]) -> f64 {
        self.constraints.iter().zip(y).map(|(c, y)| c.rhs * y).sum()
    }
}

pub(crate) fn entries_to_blocks(sizes: &[usize], entries: &[SymEntry]) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for e in entries {
        out[e.block][(e.row, e.col)] += e.value;
        if e.row != e.col {
            out[e.block][(e.col, e.row)] += e.value;
        }
    }
    out
}

/// `<A, X>` for a symmetric entry list against dense (not necessarily
/// symmetric) blocks; equals `tr(A X)`.
pub(crate) fn sym_inner(entries: &[SymEntry], x: &[DMatrix<f64>]) -> f64 {
    entries
        .iter()
        .map(|e| {
            let m = &x[e.block];
            if e.row == e.col {
                e.value * m[(e.row, e.row)]
            } else {
                e.value * (m[(e.row, e.col)] + m[(e.col, e.row)])
            }
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub gap_tol: f64,
    pub eig_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gap_tol: 1e-8,
            eig_tol: 1e-9,
            feas_tol: 1e-7,
            max_iter: 200,
            step_fraction: 0.98,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.gap_tol, self.eig_tol, self.feas_tol, self.step_fraction]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_iter == 0 || self.step_fraction >= 1.0 {
            return Err(Error::InvalidInput(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

/// Diagnostics for one interior-point iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub mu: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x_blocks: Vec<DMatrix<f64>>,
    pub x_free: Vec<f64>,
    pub y: Vec<f64>,
    pub z_blocks: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
}

impl SdpSolution {
    /// Smallest eigenvalue over all primal blocks (`+inf` with no blocks).
    pub fn min_primal_eigenvalue(&self) -> f64 {
        self.x_blocks
            .iter()
            .map(|m| m.clone().symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}
