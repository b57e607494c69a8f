//! Infeasible-start primal-dual path following with the HKM direction and a
//! Mehrotra predictor-corrector.
//!
//! Free variables are kept out of the cone: each step solves the augmented
//! system `[M B; Bᵀ 0] [dy; dx] = [r; r_f]` by LU with iterative
//! refinement. Forming `Bᵀ M⁻¹ B` instead loses too much accuracy once `M`
//! becomes ill-conditioned near the optimum.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use super::{Constraint, IterationLog, SdpProblem, SdpSolution, SolveStatus, SolverConfig, SymEntry};
use crate::error::Result;

const DIVERGENCE: f64 = 1e12;
const RANK_TOL: f64 = 1e-10;

/// Row-normalised copy of the problem with dependent rows and free columns
/// removed.
struct Prepared {
    prob: SdpProblem,
    /// Original index of each kept row and its scale factor.
    rows: Vec<(usize, f64)>,
    /// Original index of each kept free column and its scale factor.
    cols: Vec<(usize, f64)>,
}

fn prepare(orig: &SdpProblem) -> Prepared {
    let m = orig.n_constraints();
    let norms: Vec<f64> = orig
        .constraints
        .iter()
        .map(|c| {
            let a: f64 = c
                .entries
                .iter()
                .map(|e| if e.row == e.col { e.value * e.value } else { 2.0 * e.value * e.value })
                .sum();
            let b: f64 = c.free.iter().map(|(_, v)| v * v).sum();
            (a + b).sqrt()
        })
        .collect();

    // Gram matrix of the (normalised) rows, accumulated entry by entry.
    let mut by_pos: HashMap<(usize, usize, usize), Vec<(usize, f64)>> = HashMap::new();
    let mut by_free: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    for (i, c) in orig.constraints.iter().enumerate() {
        if norms[i] == 0.0 {
            continue;
        }
        for e in &c.entries {
            let w = if e.row == e.col { 1.0 } else { std::f64::consts::SQRT_2 };
            by_pos
                .entry((e.block, e.row, e.col))
                .or_default()
                .push((i, w * e.value / norms[i]));
        }
        for &(k, v) in &c.free {
            by_free.entry(k).or_default().push((i, v / norms[i]));
        }
    }
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for list in by_pos.values().chain(by_free.values()) {
        for &(i, a) in list {
            for &(j, b) in list {
                gram[(i, j)] += a * b;
            }
        }
    }
    let keep_rows = greedy_independent(&gram, RANK_TOL);
    let dropped = (0..m).filter(|i| !keep_rows.contains(i)).count();
    if dropped > 0 {
        log::warn!("sdp: removed {dropped} linearly dependent equality rows");
    }

    // Free columns that are dependent on earlier ones are fixed at zero.
    let nf = orig.n_free;
    let mut btb = DMatrix::<f64>::zeros(nf, nf);
    for &i in &keep_rows {
        let c = &orig.constraints[i];
        let s = 1.0 / norms[i];
        for &(k, a) in &c.free {
            for &(l, b) in &c.free {
                btb[(k, l)] += a * b * s * s;
            }
        }
    }
    let keep_cols = greedy_independent(&btb, RANK_TOL);
    if keep_cols.len() < nf {
        log::info!("sdp: fixed {} dependent free variables at zero", nf - keep_cols.len());
    }
    let mut col_map = vec![usize::MAX; nf];
    for (new, &old) in keep_cols.iter().enumerate() {
        col_map[old] = new;
    }

    // Columns are scaled to unit norm; the scaled variable is `x_k · ‖B_k‖`.
    let col_scale: Vec<f64> = keep_cols.iter().map(|&k| btb[(k, k)].sqrt()).collect();

    let mut prob = SdpProblem::new(orig.block_sizes.clone(), keep_cols.len());
    prob.objective = orig.objective.clone();
    prob.objective_free = keep_cols
        .iter()
        .zip(&col_scale)
        .map(|(&k, d)| orig.objective_free[k] / d)
        .collect();
    let mut rows = Vec::with_capacity(keep_rows.len());
    for &i in &keep_rows {
        let c = &orig.constraints[i];
        let s = 1.0 / norms[i];
        prob.constraints.push(Constraint {
            entries: c.entries.iter().map(|e| SymEntry { value: e.value * s, ..*e }).collect(),
            free: c
                .free
                .iter()
                .filter(|(k, _)| col_map[*k] != usize::MAX)
                .map(|&(k, v)| (col_map[k], v * s / col_scale[col_map[k]]))
                .collect(),
            rhs: c.rhs * s,
        });
        rows.push((i, s));
    }
    Prepared { prob, rows, cols: keep_cols.into_iter().zip(col_scale).collect() }
}

/// Indices of a maximal set of rows of the PSD matrix `g` that are linearly
/// independent, chosen greedily in order.
fn greedy_independent(g: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let n = g.nrows();
    let mut keep: Vec<usize> = Vec::new();
    // rows of the Cholesky factor of g restricted to `keep`
    let mut l: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let gii = g[(i, i)];
        if gii <= 0.0 {
            continue;
        }
        let mut row = Vec::with_capacity(keep.len() + 1);
        for (a, &k) in keep.iter().enumerate() {
            let mut s = g[(i, k)];
            for b in 0..a {
                s -= row[b] * l[a][b];
            }
            row.push(s / l[a][a]);
        }
        let d = gii - row.iter().map(|v| v * v).sum::<f64>();
        if d > tol * gii {
            row.push(d.sqrt());
            l.push(row);
            keep.push(i);
        }
    }
    keep
}

/// Per-block entry lists grouped by constraint.
struct BlockIndex {
    /// `per_block[b]` lists `(constraint, entries)` for constraints touching block `b`.
    per_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
}

impl BlockIndex {
    fn new(prob: &SdpProblem) -> Self {
        let mut per_block: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> =
            vec![Vec::new(); prob.n_blocks()];
        for (i, c) in prob.constraints.iter().enumerate() {
            let mut grouped: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); prob.n_blocks()];
            for e in &c.entries {
                grouped[e.block].push((e.row, e.col, e.value));
            }
            for (b, list) in grouped.into_iter().enumerate() {
                if !list.is_empty() {
                    per_block[b].push((i, list));
                }
            }
        }
        BlockIndex { per_block }
    }
}

/// `M_ij = tr(A_i X A_j Z⁻¹)`.
fn schur_matrix(
    m: usize,
    index: &BlockIndex,
    x: &[DMatrix<f64>],
    zinv: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let mut schur = DMatrix::<f64>::zeros(m, m);
    for (b, list) in index.per_block.iter().enumerate() {
        let n = x[b].nrows();
        let mut slot = vec![usize::MAX; n];
        for (pos, (i, entries)) in list.iter().enumerate() {
            // touched columns of X A_i
            let mut cols: Vec<usize> = Vec::new();
            for &(p, q, _) in entries {
                for c in [p, q] {
                    if slot[c] == usize::MAX {
                        slot[c] = cols.len();
                        cols.push(c);
                    }
                }
            }
            let mut xa = DMatrix::<f64>::zeros(n, cols.len());
            for &(p, q, v) in entries {
                xa.column_mut(slot[q]).axpy(v, &x[b].column(p), 1.0);
                if p != q {
                    xa.column_mut(slot[p]).axpy(v, &x[b].column(q), 1.0);
                }
            }
            let zr = zinv[b].select_rows(cols.iter());
            for &c in &cols {
                slot[c] = usize::MAX;
            }
            let p_mat = &xa * &zr;
            let q_mat = &p_mat + p_mat.transpose();
            for (j, entries_j) in &list[pos..] {
                let mut s = 0.0;
                for &(r, c, w) in entries_j {
                    s += if r == c { 0.5 * w * q_mat[(r, r)] } else { w * q_mat[(r, c)] };
                }
                schur[(*i, *j)] += s;
                if i != j {
                    schur[(*j, *i)] += s;
                }
            }
        }
    }
    schur
}

fn regularized_cholesky(mat: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if mat.nrows() == 0 {
        return Cholesky::new(mat.clone());
    }
    if let Some(c) = Cholesky::new(mat.clone()) {
        return Some(c);
    }
    let scale = mat.diagonal().iter().fold(1.0f64, |a, &d| a.max(d.abs()));
    let mut reg = 1e-12 * scale;
    while reg <= 1e-4 * scale {
        let mut shifted = mat.clone();
        for k in 0..mat.nrows() {
            shifted[(k, k)] += reg;
        }
        if let Some(c) = Cholesky::new(shifted) {
            log::debug!("sdp: cholesky regularised by {reg:e}");
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

/// Factorised Newton system `[M B; Bᵀ 0]`.
struct Kkt {
    schur: DMatrix<f64>,
    b: DMatrix<f64>,
    chol_m: Option<Cholesky<f64, Dyn>>,
    lu: Option<LU<f64, Dyn, Dyn>>,
}

impl Kkt {
    fn new(schur: DMatrix<f64>, b: &DMatrix<f64>) -> Option<Kkt> {
        let (m, nf) = b.shape();
        if nf == 0 {
            let chol_m = regularized_cholesky(&schur)?;
            return Some(Kkt { schur, b: b.clone(), chol_m: Some(chol_m), lu: None });
        }
        let mut k = DMatrix::<f64>::zeros(m + nf, m + nf);
        k.view_mut((0, 0), (m, m)).copy_from(&schur);
        k.view_mut((0, m), (m, nf)).copy_from(b);
        k.view_mut((m, 0), (nf, m)).copy_from(&b.transpose());
        let lu = LU::new(k);
        if !lu.is_invertible() {
            return None;
        }
        Some(Kkt { schur, b: b.clone(), chol_m: None, lu: Some(lu) })
    }

    fn solve_once(&self, r: &DVector<f64>, rf: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let m = r.len();
        if let Some(c) = &self.chol_m {
            return Some((c.solve(r), DVector::zeros(0)));
        }
        let mut rhs = DVector::<f64>::zeros(m + rf.len());
        rhs.rows_mut(0, m).copy_from(r);
        rhs.rows_mut(m, rf.len()).copy_from(rf);
        let sol = self.lu.as_ref()?.solve(&rhs)?;
        Some((sol.rows(0, m).into_owned(), sol.rows(m, rf.len()).into_owned()))
    }

    /// Solves with two steps of iterative refinement.
    fn solve(&self, r: &DVector<f64>, rf: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let (mut dy, mut dx) = self.solve_once(r, rf)?;
        for _ in 0..2 {
            let r1 = r - &self.schur * &dy - &self.b * &dx;
            let r2 = rf - self.b.transpose() * &dy;
            let (cy, cx) = self.solve_once(&r1, &r2)?;
            dy += cy;
            dx += cx;
        }
        Some((dy, dx))
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (&m + m.transpose())
}

fn inf_norm_blocks(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.amax()).fold(0.0, f64::max)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Largest step `α` with `X + α dX ⪰ 0`, or `None` if `X` is not positive
/// definite.
fn max_step(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        let l = Cholesky::new(xb.clone())?.l();
        let t = l.solve_lower_triangular(db)?;
        let w = l.solve_lower_triangular(&t.transpose())?;
        let lam = sym(w).symmetric_eigenvalues().min();
        if lam < 0.0 {
            alpha = alpha.min(-1.0 / lam);
        }
    }
    Some(alpha)
}

fn inverse_pd(z: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(z.clone()).map(|c| sym(c.inverse()))
}

/// Solves the SDP. Failures to converge are reported through
/// [`SdpSolution::status`]; `Err` is returned only for malformed input.
pub fn solve(orig: &SdpProblem, cfg: &SolverConfig) -> Result<SdpSolution> {
    orig.validate()?;
    cfg.validate()?;
    let prep = prepare(orig);
    let prob = &prep.prob;
    let m = prob.n_constraints();
    let nf = prob.n_free;
    let sizes = &prob.block_sizes;
    let total_dim: usize = sizes.iter().sum();

    let c_blocks = prob.objective_blocks();
    let c_free = prob.objective_free.clone();
    let b_vec: Vec<f64> = prob.constraints.iter().map(|c| c.rhs).collect();
    let mut b_mat = DMatrix::<f64>::zeros(m, nf);
    for (i, c) in prob.constraints.iter().enumerate() {
        for &(k, v) in &c.free {
            b_mat[(i, k)] += v;
        }
    }
    let index = BlockIndex::new(prob);

    // Identity-scaled start.
    let mut a_norms = vec![vec![0.0f64; m]; sizes.len()];
    for (i, c) in prob.constraints.iter().enumerate() {
        for e in &c.entries {
            let w = if e.row == e.col { 1.0 } else { 2.0 };
            a_norms[e.block][i] += w * e.value * e.value;
        }
    }
    let mut x_blocks = Vec::with_capacity(sizes.len());
    let mut z_blocks = Vec::with_capacity(sizes.len());
    for (bk, &n) in sizes.iter().enumerate() {
        let nf64 = n as f64;
        let mut xi = 10.0f64.max(nf64.sqrt());
        let mut eta = 10.0f64.max(nf64.sqrt());
        for i in 0..m {
            let na = a_norms[bk][i].sqrt();
            xi = xi.max(nf64 * (1.0 + b_vec[i].abs()) / (1.0 + na));
            eta = eta.max(na);
        }
        eta = eta.max(c_blocks[bk].norm());
        x_blocks.push(DMatrix::identity(n, n) * xi);
        z_blocks.push(DMatrix::identity(n, n) * eta);
    }
    let mut x_free = vec![0.0; nf];
    let mut y = vec![0.0; m];

    let b_scale = 1.0 + inf_norm(&b_vec);
    let c_scale = 1.0 + inf_norm_blocks(&c_blocks);
    let cf_scale = 1.0 + inf_norm(&c_free);

    let mut log_rows: Vec<IterationLog> = Vec::new();
    let status;
    let mut iteration = 0;
    let (mut last_gap, mut last_pinf, mut last_dinf);
    let (mut step_p, mut step_d) = (0.0, 0.0);
    loop {
        // residuals
        let ax = prob.apply(&x_blocks, &x_free);
        let rp: Vec<f64> = b_vec.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let aty = prob.adjoint(&y);
        let rd: Vec<DMatrix<f64>> = c_blocks
            .iter()
            .zip(&aty)
            .zip(&z_blocks)
            .map(|((c, a), z)| c - a - z)
            .collect();
        let bty = prob.adjoint_free(&y);
        let rf: Vec<f64> = c_free.iter().zip(&bty).map(|(c, b)| c - b).collect();

        let pobj = prob.primal_objective(&x_blocks, &x_free);
        let dobj = prob.dual_objective(&y);
        let xz = inner(&x_blocks, &z_blocks);
        let mu = if total_dim > 0 { xz / total_dim as f64 } else { 0.0 };
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let rel_gap = ((pobj - dobj).abs()).max(xz.abs()) / denom;
        let pinf = inf_norm(&rp) / b_scale;
        let dinf = (inf_norm_blocks(&rd) / c_scale).max(inf_norm(&rf) / cf_scale);
        last_gap = rel_gap;
        last_pinf = pinf;
        last_dinf = dinf;
        log_rows.push(IterationLog {
            iteration,
            primal_objective: pobj,
            dual_objective: dobj,
            rel_gap,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            mu,
            step_primal: step_p,
            step_dual: step_d,
        });
        log::debug!(
            "sdp it {iteration:3} pobj {pobj:+.8e} dobj {dobj:+.8e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e} mu {mu:.2e}"
        );

        if rel_gap <= cfg.gap_tol && pinf <= cfg.feas_tol && dinf <= cfg.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        // Free variables are left out: exact solutions in a monomial basis
        // can legitimately carry very large coefficients.
        let xnorm = inf_norm_blocks(&x_blocks);
        let ynorm = inf_norm(&y);
        if xnorm > DIVERGENCE || ynorm > DIVERGENCE {
            status = SolveStatus::Infeasible;
            break;
        }
        if iteration >= cfg.max_iter {
            status = SolveStatus::MaxIter;
            break;
        }
        iteration += 1;

        let Some(zinv): Option<Vec<DMatrix<f64>>> = z_blocks.iter().map(inverse_pd).collect() else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let schur = schur_matrix(m, &index, &x_blocks, &zinv);
        let Some(kkt) = Kkt::new(schur, &b_mat) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let rf_vec = DVector::from_vec(rf.clone());
        let rp_vec = DVector::from_vec(rp.clone());

        // X R_d Z⁻¹ is shared by predictor and corrector.
        let x_rd_zinv: Vec<DMatrix<f64>> = x_blocks
            .iter()
            .zip(&rd)
            .zip(&zinv)
            .map(|((x, r), zi)| x * r * zi)
            .collect();

        // dX = K + X R_d Z⁻¹ - X dZ Z⁻¹ once dy is known.
        let direction = |k_blocks: &[DMatrix<f64>]| {
            // rhs = r_p - A(K)
            let ak = prob.apply(k_blocks, &vec![0.0; nf]);
            let rhs = DVector::from_iterator(m, rp_vec.iter().zip(&ak).map(|(r, a)| r - a));
            let (dy, dxf) = kkt.solve(&rhs, &rf_vec)?;
            let aty = prob.adjoint(dy.as_slice());
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&aty).map(|(r, a)| r - a).collect();
            let mut dx_blocks = Vec::with_capacity(sizes.len());
            for b in 0..sizes.len() {
                let d = &k_blocks[b] + &x_rd_zinv[b] - &x_blocks[b] * &dz[b] * &zinv[b];
                dx_blocks.push(sym(d));
            }
            Some((dx_blocks, dxf, dy, dz))
        };

        // predictor: K = -X - X R_d Z⁻¹
        let k_aff: Vec<DMatrix<f64>> = x_blocks.iter().zip(&x_rd_zinv).map(|(x, t)| -x - t).collect();
        let Some((dx_a, _, _, dz_a)) = direction(&k_aff) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let (Some(ap), Some(ad)) = (max_step(&x_blocks, &dx_a), max_step(&z_blocks, &dz_a)) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let ap = ap.min(1.0);
        let ad = ad.min(1.0);
        let mut mu_aff = 0.0;
        for b in 0..sizes.len() {
            let xa = &x_blocks[b] + &dx_a[b] * ap;
            let za = &z_blocks[b] + &dz_a[b] * ad;
            mu_aff += xa.dot(&za);
        }
        mu_aff /= total_dim.max(1) as f64;
        let expon = (3.0 * ap.min(ad).powi(2)).max(1.0);
        let sigma = if mu > 0.0 { (mu_aff.max(0.0) / mu).powf(expon).min(1.0) } else { 0.0 };

        // corrector: K = σμZ⁻¹ - X - X R_d Z⁻¹ - dXa dZa Z⁻¹
        let k_cor: Vec<DMatrix<f64>> = (0..sizes.len())
            .map(|b| {
                &zinv[b] * (sigma * mu) - &x_blocks[b] - &x_rd_zinv[b] - &dx_a[b] * &dz_a[b] * &zinv[b]
            })
            .collect();
        let Some((dx, dxf, dy, dz)) = direction(&k_cor) else {
            status = SolveStatus::NumericalFailure;
            break;
        };

        let (Some(mp), Some(md)) = (max_step(&x_blocks, &dx), max_step(&z_blocks, &dz)) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        step_p = (cfg.step_fraction * mp).min(1.0);
        step_d = (cfg.step_fraction * md).min(1.0);
        if !(step_p.is_finite() && step_d.is_finite()) || step_p.max(step_d) < 1e-12 {
            status = SolveStatus::NumericalFailure;
            break;
        }
        for b in 0..sizes.len() {
            x_blocks[b] = sym(&x_blocks[b] + &dx[b] * step_p);
            z_blocks[b] = sym(&z_blocks[b] + &dz[b] * step_d);
        }
        for (xv, d) in x_free.iter_mut().zip(dxf.iter()) {
            *xv += step_p * d;
        }
        for (yv, d) in y.iter_mut().zip(dy.iter()) {
            *yv += step_d * d;
        }
    }

    // Map back to the caller's indexing.
    let mut y_orig = vec![0.0; orig.n_constraints()];
    for (k, &(i, s)) in prep.rows.iter().enumerate() {
        y_orig[i] = y[k] * s;
    }
    let mut xf_orig = vec![0.0; orig.n_free];
    for (k, &(j, d)) in prep.cols.iter().enumerate() {
        xf_orig[j] = x_free[k] / d;
    }
    let primal_objective = orig.primal_objective(&x_blocks, &xf_orig);
    let dual_objective = orig.dual_objective(&y_orig);
    Ok(SdpSolution {
        status,
        x_blocks,
        x_free: xf_orig,
        y: y_orig,
        z_blocks,
        primal_objective,
        dual_objective,
        rel_gap: last_gap,
        primal_infeasibility: last_pinf,
        dual_infeasibility: last_dinf,
        iterations: iteration,
        log: log_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_rank_detects_duplicates() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(greedy_independent(&g, 1e-10), vec![0, 2]);
    }

    #[test]
    fn step_to_boundary() {
        let x = vec![DMatrix::identity(2, 2)];
        let d = vec![DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0])];
        assert!((max_step(&x, &d).unwrap() - 0.5).abs() < 1e-14);
        let d = vec![DMatrix::identity(2, 2)];
        assert_eq!(max_step(&x, &d).unwrap(), f64::INFINITY);
    }
}
