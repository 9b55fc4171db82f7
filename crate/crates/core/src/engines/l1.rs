//! Assembly of the L1-projection program used by the
//! minimum-relative-entropy estimator.
//!
//! The posterior mode reduces to the rate matrix closest to the baseline in
//! L1 distance among nonnegative matrices matching the mean observations:
//!
//! ```text
//! minimize    Σ (p + n)
//! subject to  A λ = ȳ
//!             λ - p + n = Λ0
//!             λ, p, n >= 0
//! ```
//!
//! with the standard split `λ = Λ0 + p - n`. At any optimum `p` and `n` have
//! disjoint support, so the objective equals `‖λ - Λ0‖₁`.

use crate::engines::lp::LinearProgram;
use crate::net::{ObservationOperator, RateMatrix};
use crate::{Error, Result};

/// Builds the split-form LP. The first `n_pairs` variables of a solution are
/// the projected rates.
pub fn build_l1_projection_lp(
    baseline: &RateMatrix,
    op: &ObservationOperator,
    y_bar: &[f64],
) -> Result<LinearProgram> {
    let n_pairs = op.n_cols();
    if baseline.len() != n_pairs {
        return Err(Error::Contract(format!(
            "operator has {} columns, baseline has {}",
            n_pairs,
            baseline.len()
        )));
    }
    if y_bar.len() != op.n_rows() {
        return Err(Error::Contract(format!(
            "operator has {} rows, observation mean has {}",
            op.n_rows(),
            y_bar.len()
        )));
    }

    let n_vars = 3 * n_pairs;
    let mut c = vec![0.0; n_vars];
    for v in c.iter_mut().skip(n_pairs) {
        *v = 1.0;
    }

    let mut a_eq = Vec::with_capacity(op.n_rows() + n_pairs);
    let mut b_eq = Vec::with_capacity(op.n_rows() + n_pairs);
    for r in 0..op.n_rows() {
        let mut row = vec![0.0; n_vars];
        for &p in op.row_support(r) {
            row[p] = 1.0;
        }
        a_eq.push(row);
        b_eq.push(y_bar[r]);
    }
    for p in 0..n_pairs {
        let mut row = vec![0.0; n_vars];
        row[p] = 1.0;
        row[n_pairs + p] = -1.0;
        row[2 * n_pairs + p] = 1.0;
        a_eq.push(row);
        b_eq.push(baseline.get(p));
    }

    LinearProgram::new(c, a_eq, b_eq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engines::lp::{lp_solve, LpOptions, LpStatus};
    use crate::net::{build_operator, ObservationScheme, SdPair, Topology};
    use crate::net::expected_observations;

    #[test]
    fn feasible_baseline_projects_to_itself() {
        let topo = Topology::full(3, 0);
        let op = build_operator(&topo, &ObservationScheme::minimal(&topo)).unwrap();
        let baseline =
            RateMatrix::from_values(vec![0.5, 1.0, 0.0, 2.0, 0.25, 1.5]).unwrap();
        let y_bar = expected_observations(&op, &baseline).unwrap();
        let lp = build_l1_projection_lp(&baseline, &op, &y_bar).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-6);
        for p in 0..topo.n_pairs() {
            assert!((sol.x[p] - baseline.get(p)).abs() < 1e-5);
        }
    }

    #[test]
    fn single_edge_row_moves_one_rate() {
        let topo = Topology::new(2, 0, vec![SdPair::new(0, 1)]).unwrap();
        let scheme = ObservationScheme {
            monitor_egress: vec![false; 2],
            monitor_ingress: vec![false; 2],
            monitor_flows: vec![],
            observed_pairs: vec![SdPair::new(0, 1)],
        };
        let op = build_operator(&topo, &scheme).unwrap();
        let baseline = RateMatrix::zeros(1);
        let lp = build_l1_projection_lp(&baseline, &op, &[5.0]).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 5.0).abs() < 1e-7);
        assert!((sol.objective - 5.0).abs() < 1e-7);
    }

    #[test]
    fn objective_equals_l1_distance() {
        let topo = Topology::full(3, 0);
        let op = build_operator(&topo, &ObservationScheme::minimal(&topo)).unwrap();
        let baseline = RateMatrix::from_values(vec![1.0, 0.5, 0.0, 1.5, 2.0, 0.1]).unwrap();
        // Observations from a different truth.
        let truth = RateMatrix::from_values(vec![1.0, 0.5, 2.0, 1.5, 0.0, 0.1]).unwrap();
        let y_bar = expected_observations(&op, &truth).unwrap();
        let lp = build_l1_projection_lp(&baseline, &op, &y_bar).unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let l1: f64 = (0..topo.n_pairs())
            .map(|p| (sol.x[p] - baseline.get(p)).abs())
            .sum();
        assert!(
            (sol.objective - l1).abs() < 1e-9 * (1.0 + l1),
            "objective {} vs L1 {}",
            sol.objective,
            l1
        );
    }
}
