//! Independent oracles and helpers shared by the integration and acceptance
//! suites. Everything here deliberately avoids the implementation paths it
//! checks: the LP oracle enumerates basic solutions, the E-step oracle sums
//! the truncated joint pmf over a box.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nettomo::engines::lp::LinearProgram;
use nettomo::net::{ObservationOperator, RateMatrix};

/// Brute-force conditional expectation `E[x | A x = y]` under independent
/// Poisson priors, by enumerating the whole box `[0, max y]^n` and keeping
/// the feasible points. Exponential; for tiny fixtures only.
pub fn brute_force_estep(
    op: &ObservationOperator,
    rates: &RateMatrix,
    y: &[u64],
) -> Option<Vec<f64>> {
    let n = op.n_cols();
    let bound = y.iter().copied().max().unwrap_or(0);
    let mut x = vec![0u64; n];
    let mut z = 0.0;
    let mut moments = vec![0.0; n];
    loop {
        let feasible =
            (0..op.n_rows()).all(|r| op.row_support(r).iter().map(|&p| x[p]).sum::<u64>() == y[r]);
        if feasible {
            let mut w = 1.0;
            for p in 0..n {
                let l = rates.get(p);
                let mut term = 1.0;
                for k in 0..x[p] {
                    term *= l / (k as f64 + 1.0);
                }
                w *= term;
            }
            z += w;
            for p in 0..n {
                moments[p] += x[p] as f64 * w;
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                if z == 0.0 {
                    return None;
                }
                return Some(moments.iter().map(|m| m / z).collect());
            }
            if x[i] < bound {
                x[i] += 1;
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

/// Optimal objective of a standard-form LP by basic-feasible-solution
/// enumeration: every square column subset is solved and feasible vertices
/// are compared. `None` when no vertex is feasible.
pub fn vertex_enumeration_optimum(lp: &LinearProgram) -> Option<f64> {
    let m = lp.n_rows();
    let n = lp.n_vars();
    assert!(m <= n, "oracle expects at most as many rows as variables");
    let a = DMatrix::from_fn(m, n, |i, j| lp.a_eq[i][j]);
    let b = DVector::from_fn(m, |i, _| lp.b_eq[i]);

    let mut best: Option<f64> = None;
    let mut columns: Vec<usize> = (0..m).collect();
    loop {
        let basis = DMatrix::from_fn(m, m, |i, j| a[(i, columns[j])]);
        if let Some(solved) = basis.clone().lu().solve(&b) {
            // Guard against near-singular bases slipping through LU.
            let residual = (&basis * &solved - &b).amax();
            if residual < 1e-7 && solved.iter().all(|&v| v >= -1e-9) {
                let objective: f64 = columns
                    .iter()
                    .enumerate()
                    .map(|(j, &col)| lp.c[col] * solved[j])
                    .sum();
                best = Some(best.map_or(objective, |b: f64| b.min(objective)));
            }
        }
        // Next m-combination of {0..n} in lexicographic order.
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if columns[i] < n - (m - i) {
                columns[i] += 1;
                for j in i + 1..m {
                    columns[j] = columns[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Mean squared per-pair error over the whole pair universe.
pub fn mse(estimate: &RateMatrix, truth: &RateMatrix) -> f64 {
    let n = estimate.len();
    (0..n)
        .map(|p| (estimate.get(p) - truth.get(p)).powi(2))
        .sum::<f64>()
        / n as f64
}

/// Standard error of a difference of independent means.
pub fn pooled_se(se_a: f64, se_b: f64) -> f64 {
    (se_a * se_a + se_b * se_b).sqrt()
}
