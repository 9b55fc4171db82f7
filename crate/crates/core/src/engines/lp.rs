//! Dense linear programming in standard form:
//!
//! ```text
//! minimize    c' x
//! subject to  A x = b,  x >= 0
//! ```
//!
//! The solver is a primal-dual path-following interior-point method with
//! Mehrotra predictor-corrector steps on dense normal equations, preceded by
//! a textbook Phase-1 (artificial variables) that certifies feasibility.
//! Linearly dependent constraint rows are removed up front by a
//! rank-revealing elimination pass with pivot tolerance
//! [`LpOptions::pivot_tol`]; a dependent row whose right-hand side is
//! inconsistent makes the program infeasible immediately.
//!
//! On degenerate optimal faces the returned point is whatever the barrier
//! path converges to; it is not unique, so callers should compare objective
//! values rather than argmins.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{Error, Result};

/// An equality-form LP with nonnegative variables.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// Cost vector, length `n`.
    pub c: Vec<f64>,
    /// Dense equality rows, each of length `n`.
    pub a_eq: Vec<Vec<f64>>,
    /// Right-hand side, one entry per row.
    pub b_eq: Vec<f64>,
}

impl LinearProgram {
    pub fn new(c: Vec<f64>, a_eq: Vec<Vec<f64>>, b_eq: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Contract("LP needs at least one variable".into()));
        }
        if a_eq.len() != b_eq.len() {
            return Err(Error::Contract(format!(
                "{} constraint rows but {} right-hand sides",
                a_eq.len(),
                b_eq.len()
            )));
        }
        for (i, row) in a_eq.iter().enumerate() {
            if row.len() != c.len() {
                return Err(Error::Contract(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    c.len()
                )));
            }
        }
        let finite = c.iter().chain(b_eq.iter()).chain(a_eq.iter().flatten());
        for &v in finite {
            if !v.is_finite() {
                return Err(Error::Contract("LP data must be finite".into()));
            }
        }
        Ok(LinearProgram { c, a_eq, b_eq })
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.a_eq.len()
    }
}

#[derive(Debug, Clone)]
pub struct LpOptions {
    /// Convergence tolerance on scaled primal/dual/gap residuals.
    pub tol: f64,
    /// Interior-point iteration cap per phase.
    pub max_iter: usize,
    /// Pivot threshold for the redundancy-elimination pass.
    pub pivot_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            tol: 1e-8,
            max_iter: 200,
            pivot_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Solution report. `x` is meaningful for `Optimal` and `MaxIter` (best
/// iterate); residuals are measured at the returned point.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Dual variables for the kept (non-eliminated) rows, in row order.
    pub y: Vec<f64>,
    /// Reduced costs.
    pub z: Vec<f64>,
    pub objective: f64,
    /// Interior-point iterations, Phase-1 plus Phase-2.
    pub iterations: usize,
    /// `max |A x - b|` scaled by `1 + max |b|`.
    pub primal_residual: f64,
    /// `max |A' y + z - c|` scaled by `1 + max |c|`.
    pub dual_residual: f64,
    /// Duality gap `x' z` scaled by `1 + |c' x|`.
    pub complementarity: f64,
    /// Indices of constraint rows removed as linearly dependent.
    pub eliminated_rows: Vec<usize>,
}

/// Picks a maximal independent subset of rows by modified Gram-Schmidt.
///
/// Returns the kept row indices, or an `Estimation` error when a dependent
/// row is inconsistent with the rows that span it.
fn independent_rows(a: &[Vec<f64>], b: &[f64], pivot_tol: f64) -> Result<Vec<usize>> {
    let b_scale = 1.0 + b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let n = a.first().map_or(0, |r| r.len());
    for (i, row) in a.iter().enumerate() {
        let mut v = row.clone();
        let mut vb = b[i];
        let row_norm = row.iter().map(|e| e * e).sum::<f64>().sqrt();
        for q in &basis {
            let proj: f64 = v.iter().zip(&q[..n]).map(|(a, b)| a * b).sum();
            for (ve, qe) in v.iter_mut().zip(&q[..n]) {
                *ve -= proj * qe;
            }
            vb -= proj * q[n];
        }
        let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm > pivot_tol * row_norm.max(1.0) {
            for e in v.iter_mut() {
                *e /= norm;
            }
            vb /= norm;
            v.push(vb);
            basis.push(v);
            kept.push(i);
        } else if vb.abs() > 1e-7 * b_scale {
            return Err(Error::Estimation(format!(
                "constraint row {i} is linearly dependent but inconsistent (residual {vb:.3e})"
            )));
        }
    }
    Ok(kept)
}

enum IpOutcome {
    Converged,
    MaxIter,
    Diverged,
}

struct IpResult {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    iterations: usize,
    outcome: IpOutcome,
    primal_residual: f64,
    dual_residual: f64,
    complementarity: f64,
    objective: f64,
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    NormalEquations::factor(m.clone()).map(|f| f.solve(rhs))
}

/// Factorization shared by the predictor and corrector solves of one
/// iteration.
struct NormalEquations {
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl NormalEquations {
    fn factor(m: DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        let trace_mean = (m.trace() / n as f64).abs().max(1e-300);
        let mut reg = 0.0;
        loop {
            let mut mm = m.clone();
            if reg > 0.0 {
                for i in 0..n {
                    mm[(i, i)] += reg;
                }
            }
            if let Some(ch) = Cholesky::new(mm) {
                return Some(NormalEquations { chol: ch });
            }
            reg = if reg == 0.0 { 1e-12 * trace_mean } else { reg * 100.0 };
            if reg > 1e-2 * trace_mean {
                return None;
            }
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Mehrotra predictor-corrector on one standard-form LP with full-row-rank
/// `a`.
fn mehrotra(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    opts: &LpOptions,
) -> Result<IpResult> {
    let n = a.ncols();
    let b_scale = 1.0 + b.amax();
    let c_scale = 1.0 + c.amax();

    // Mehrotra's starting point: least-squares primal/dual estimates shifted
    // into the positive orthant.
    let aat = a * a.transpose();
    let x_ls = a.transpose() * solve_spd(&aat, b).ok_or_else(|| {
        Error::Estimation("normal equations are numerically singular at the start".into())
    })?;
    let y0 = solve_spd(&aat, &(a * c)).ok_or_else(|| {
        Error::Estimation("normal equations are numerically singular at the start".into())
    })?;
    let z_ls = c - a.transpose() * &y0;

    let dx = (-1.5 * x_ls.min()).max(0.0);
    let dz = (-1.5 * z_ls.min()).max(0.0);
    let mut x = x_ls.add_scalar(dx);
    let mut z = z_ls.add_scalar(dz);
    let xz = x.dot(&z);
    if xz > 0.0 {
        x = x.add_scalar(0.5 * xz / z.sum());
        z = z.add_scalar(0.5 * xz / x.sum());
    } else {
        x = DVector::from_element(n, 1.0);
        z = DVector::from_element(n, 1.0);
    }
    let mut y = y0;

    let mut iterations = 0;
    loop {
        let r_b = a * &x - b;
        let r_c = a.transpose() * &y + &z - c;
        let gap = x.dot(&z);
        let objective = c.dot(&x);

        let primal_residual = r_b.amax() / b_scale;
        let dual_residual = r_c.amax() / c_scale;
        let complementarity = gap / (1.0 + objective.abs());

        if primal_residual <= opts.tol && dual_residual <= opts.tol && complementarity <= opts.tol
        {
            return Ok(IpResult {
                x,
                y,
                z,
                iterations,
                outcome: IpOutcome::Converged,
                primal_residual,
                dual_residual,
                complementarity,
                objective,
            });
        }
        if x.amax() > 1e13 * b_scale {
            return Ok(IpResult {
                x,
                y,
                z,
                iterations,
                outcome: IpOutcome::Diverged,
                primal_residual,
                dual_residual,
                complementarity,
                objective,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(IpResult {
                x,
                y,
                z,
                iterations,
                outcome: IpOutcome::MaxIter,
                primal_residual,
                dual_residual,
                complementarity,
                objective,
            });
        }
        iterations += 1;

        let d: DVector<f64> = x.component_div(&z);
        // M = A diag(d) A'
        let mut ad = a.clone();
        for j in 0..n {
            let mut col = ad.column_mut(j);
            col *= d[j];
        }
        let m_mat = &ad * a.transpose();
        let factor = NormalEquations::factor(m_mat).ok_or_else(|| {
            Error::Estimation(format!(
                "normal equations lost positive definiteness at iteration {iterations}"
            ))
        })?;

        let d_rc: DVector<f64> = d.component_mul(&r_c);
        let mu = gap / n as f64;

        // Affine (predictor) direction: complementarity target v = -x∘z.
        let v_aff: DVector<f64> = -x.component_mul(&z);
        let rhs_aff = -&r_b - a * &d_rc - a * v_aff.component_div(&z);
        let dy_aff = factor.solve(&rhs_aff);
        let dx_aff: DVector<f64> =
            d.component_mul(&(a.transpose() * &dy_aff + &r_c)) + v_aff.component_div(&z);
        let dz_aff: DVector<f64> = -&r_c - a.transpose() * &dy_aff;

        let alpha_p_aff = max_step(&x, &dx_aff).min(1.0);
        let alpha_d_aff = max_step(&z, &dz_aff).min(1.0);
        let mu_aff = (&x + alpha_p_aff * &dx_aff).dot(&(&z + alpha_d_aff * &dz_aff)) / n as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector: recenter and compensate the predictor's second-order
        // term, reusing the factorization.
        let v: DVector<f64> =
            -x.component_mul(&z) - dx_aff.component_mul(&dz_aff) + DVector::from_element(n, sigma * mu);
        let rhs = -&r_b - a * &d_rc - a * v.component_div(&z);
        let dy = factor.solve(&rhs);
        let dx: DVector<f64> =
            d.component_mul(&(a.transpose() * &dy + &r_c)) + v.component_div(&z);
        let dz: DVector<f64> = -&r_c - a.transpose() * &dy;

        let eta = (1.0 - mu).clamp(0.995, 0.99995);
        let alpha_p = (eta * max_step(&x, &dx)).min(1.0);
        let alpha_d = (eta * max_step(&z, &dz)).min(1.0);

        x += alpha_p * &dx;
        y += alpha_d * &dy;
        z += alpha_d * &dz;
    }
}

/// Solves the LP, running Phase-1 first to certify feasibility.
pub fn lp_solve(lp: &LinearProgram, opts: &LpOptions) -> Result<LpSolution> {
    let n = lp.n_vars();
    let eliminated;
    let kept = independent_rows(&lp.a_eq, &lp.b_eq, opts.pivot_tol);
    let kept = match kept {
        Ok(k) => {
            eliminated = (0..lp.n_rows()).filter(|i| !k.contains(i)).collect::<Vec<_>>();
            k
        }
        Err(_) => {
            // Dependent-but-inconsistent rows: infeasible without iterating.
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                y: Vec::new(),
                z: Vec::new(),
                objective: 0.0,
                iterations: 0,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                complementarity: f64::INFINITY,
                eliminated_rows: Vec::new(),
            });
        }
    };
    let m = kept.len();

    if m == 0 {
        // No binding constraints: the optimum over the nonnegative orthant is
        // zero for nonnegative costs and unbounded otherwise.
        let unbounded = lp.c.iter().any(|&ci| ci < 0.0);
        return Ok(LpSolution {
            status: if unbounded { LpStatus::Unbounded } else { LpStatus::Optimal },
            x: vec![0.0; n],
            y: Vec::new(),
            z: lp.c.clone(),
            objective: 0.0,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            complementarity: 0.0,
            eliminated_rows: eliminated,
        });
    }

    let a = DMatrix::from_fn(m, n, |i, j| lp.a_eq[kept[i]][j]);
    let b = DVector::from_fn(m, |i, _| lp.b_eq[kept[i]]);
    let c = DVector::from_fn(n, |j, _| lp.c[j]);

    // Phase-1: minimize the total artificial mass 1'a subject to
    // [A I] [x; a] = b with b flipped nonnegative.
    let mut a1 = DMatrix::zeros(m, n + m);
    let mut b1 = b.clone();
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            a1[(i, j)] = sign * a[(i, j)];
        }
        a1[(i, n + i)] = 1.0;
        b1[i] = sign * b[i];
    }
    let mut c1 = DVector::zeros(n + m);
    for i in 0..m {
        c1[n + i] = 1.0;
    }
    let phase1 = mehrotra(&a1, &b1, &c1, opts)?;
    let feas_tol = opts.tol * (1.0 + b.amax());
    match phase1.outcome {
        IpOutcome::Converged => {}
        IpOutcome::MaxIter | IpOutcome::Diverged => {
            return Ok(LpSolution {
                status: LpStatus::MaxIter,
                x: phase1.x.as_slice()[..n].to_vec(),
                y: Vec::new(),
                z: Vec::new(),
                objective: f64::NAN,
                iterations: phase1.iterations,
                primal_residual: phase1.primal_residual,
                dual_residual: phase1.dual_residual,
                complementarity: phase1.complementarity,
                eliminated_rows: eliminated,
            });
        }
    }
    if phase1.objective > feas_tol {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: vec![0.0; n],
            y: Vec::new(),
            z: Vec::new(),
            objective: phase1.objective,
            iterations: phase1.iterations,
            primal_residual: phase1.primal_residual,
            dual_residual: phase1.dual_residual,
            complementarity: phase1.complementarity,
            eliminated_rows: eliminated,
        });
    }

    // Phase-2 on the original problem.
    let phase2 = mehrotra(&a, &b, &c, opts)?;
    let iterations = phase1.iterations + phase2.iterations;
    let status = match phase2.outcome {
        IpOutcome::Converged => LpStatus::Optimal,
        IpOutcome::Diverged => {
            if phase2.objective < -1e10 * (1.0 + c.amax()) {
                LpStatus::Unbounded
            } else {
                LpStatus::MaxIter
            }
        }
        IpOutcome::MaxIter => LpStatus::MaxIter,
    };
    Ok(LpSolution {
        status,
        x: phase2.x.as_slice().to_vec(),
        y: phase2.y.as_slice().to_vec(),
        z: phase2.z.as_slice().to_vec(),
        objective: phase2.objective,
        iterations,
        primal_residual: phase2.primal_residual,
        dual_residual: phase2.dual_residual,
        complementarity: phase2.complementarity,
        eliminated_rows: eliminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_variable() {
        let lp = LinearProgram::new(vec![1.0], vec![vec![1.0]], vec![3.0]).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-7);
        assert!((sol.objective - 3.0).abs() < 1e-7);
    }

    #[test]
    fn degenerate_face_objective_is_unique() {
        // min x1 + x2 st x1 + x2 = 4: every split is optimal, the objective
        // is 4. Only the objective is asserted.
        let lp = LinearProgram::new(vec![1.0, 1.0], vec![vec![1.0, 1.0]], vec![4.0]).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 4.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_program_is_flagged() {
        // x = -1 with x >= 0.
        let lp = LinearProgram::new(vec![1.0], vec![vec![1.0]], vec![-1.0]).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_program_is_flagged() {
        // min -x1 st x1 - x2 = 0: descend along x1 = x2 -> infinity.
        let lp =
            LinearProgram::new(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![0.0]).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn maxiter_status_when_capped() {
        let lp = LinearProgram::new(vec![1.0], vec![vec![1.0]], vec![3.0]).unwrap();
        let opts = LpOptions {
            max_iter: 0,
            ..Default::default()
        };
        let sol = lp_solve(&lp, &opts).unwrap();
        assert_eq!(sol.status, LpStatus::MaxIter);
    }

    #[test]
    fn redundant_rows_are_eliminated() {
        // Second row is the first times two; third is fresh.
        let lp = LinearProgram::new(
            vec![1.0, 1.0],
            vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 0.0]],
            vec![4.0, 8.0, 1.0],
        )
        .unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.eliminated_rows, vec![1]);
        assert!((sol.objective - 4.0).abs() < 1e-7);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn inconsistent_redundant_row_is_infeasible() {
        let lp = LinearProgram::new(
            vec![1.0, 1.0],
            vec![vec![1.0, 1.0], vec![2.0, 2.0]],
            vec![4.0, 9.0],
        )
        .unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn determinism() {
        let lp = LinearProgram::new(
            vec![1.0, 2.0, 0.5],
            vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]],
            vec![2.0, 3.0],
        )
        .unwrap();
        let a = lp_solve(&lp, &LpOptions::default()).unwrap();
        let b = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }
}
